use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::adapters::PredictionRecord;
use crate::cohort::{Attribute, AttributeProfile, AttributeVocabulary, Manifest};
use crate::{Error, Result};

/// A manifest row paired with its verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinedRow {
    pub profile: AttributeProfile,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedSet {
    pub vocabulary: AttributeVocabulary,
    pub rows: Vec<JoinedRow>,
}

/// Pairs every manifest row with exactly one record. A record is correct
/// when its label equals the row's diagnosis surface string.
pub fn join_predictions(manifest: &Manifest, records: &[PredictionRecord]) -> Result<JoinedSet> {
    let vocab = manifest.vocabulary();
    let rows_by_id: HashMap<&str, usize> = manifest
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id.as_str(), i))
        .collect();
    let mut verdicts: Vec<Option<bool>> = vec![None; manifest.rows.len()];
    let mut unknown = Vec::new();
    let mut duplicate = Vec::new();
    for rec in records {
        match rows_by_id.get(rec.sample_id.as_str()) {
            None => unknown.push(rec.sample_id.as_str()),
            Some(&i) if verdicts[i].is_some() => duplicate.push(rec.sample_id.as_str()),
            Some(&i) => {
                let truth = manifest.rows[i]
                    .profile
                    .surface(vocab, Attribute::Diagnosis);
                verdicts[i] = Some(rec.predicted_label == truth);
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Join(format!(
            "unknown sample ids: {}",
            list(&unknown)
        )));
    }
    if !duplicate.is_empty() {
        return Err(Error::Join(format!(
            "duplicate predictions for: {}",
            list(&duplicate)
        )));
    }
    let missing: Vec<&str> = verdicts
        .iter()
        .zip(&manifest.rows)
        .filter(|(v, _)| v.is_none())
        .map(|(_, r)| r.sample_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Join(format!(
            "no prediction for rows: {}",
            list(&missing)
        )));
    }
    Ok(JoinedSet {
        vocabulary: vocab.clone(),
        rows: manifest
            .rows
            .iter()
            .zip(verdicts)
            .map(|(r, v)| JoinedRow {
                profile: r.profile,
                correct: v.expect("checked above"),
            })
            .collect(),
    })
}

fn list(ids: &[&str]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids
        .iter()
        .take(SHOWN)
        .copied()
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(" and {} more", ids.len() - SHOWN));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupMetrics {
    pub attribute: Attribute,
    pub value: String,
    /// Position of `value` in the attribute's vocabulary; breaks ties.
    pub value_index: usize,
    pub n: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SubgroupMetrics {
    pub fn new(
        attribute: Attribute,
        value: &str,
        value_index: usize,
        correct: u64,
        n: u64,
    ) -> Result<Self> {
        if correct > n {
            return Err(Error::Input(format!("{correct} correct out of {n}")));
        }
        let (ci_low, ci_high) = wilson_interval(correct, n, WILSON_Z)?;
        Ok(SubgroupMetrics {
            attribute,
            value: value.to_string(),
            value_index,
            n,
            correct,
            accuracy: correct as f64 / n as f64,
            ci_low,
            ci_high,
        })
    }
}

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.96;

/// Wilson score interval for `correct` successes in `n` trials, clamped to `[0, 1]`.
pub fn wilson_interval(correct: u64, n: u64, z: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Input("Wilson interval needs n >= 1".into()));
    }
    if correct > n {
        return Err(Error::Input(format!("{correct} successes out of {n}")));
    }
    let nf = n as f64;
    let p = correct as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let low = if correct == 0 {
        0.0
    } else {
        (centre - half).clamp(0.0, p)
    };
    let high = if correct == n {
        1.0
    } else {
        (centre + half).clamp(p, 1.0)
    };
    Ok((low, high))
}

/// Accuracy per value of `attribute`, in vocabulary order; values with no
/// rows are left out.
pub fn subgroup_accuracy(joined: &JoinedSet, attribute: &str) -> Result<Vec<SubgroupMetrics>> {
    let attr = Attribute::from_name(attribute)?;
    let values = joined.vocabulary.values(attr);
    let mut n = vec![0u64; values.len()];
    let mut correct = vec![0u64; values.len()];
    for row in &joined.rows {
        let i = row.profile.get(attr);
        n[i] += 1;
        correct[i] += u64::from(row.correct);
    }
    (0..values.len())
        .filter(|&i| n[i] > 0)
        .map(|i| SubgroupMetrics::new(attr, &values[i], i, correct[i], n[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisparityRow {
    pub attribute: Attribute,
    pub max_accuracy: f64,
    pub min_accuracy: f64,
    pub dp: f64,
    pub argmax_group: String,
    pub argmin_group: String,
}

/// Max minus min subgroup accuracy. Ties go to the group earliest in
/// vocabulary order, whatever the input order.
pub fn demographic_parity(metrics: &[SubgroupMetrics]) -> Result<DisparityRow> {
    if metrics.len() < 2 {
        return Err(Error::Input(format!(
            "demographic parity needs at least 2 subgroups, got {}",
            metrics.len()
        )));
    }
    let attribute = metrics[0].attribute;
    if metrics.iter().any(|m| m.attribute != attribute) {
        return Err(Error::Input(
            "subgroups span more than one attribute".into(),
        ));
    }
    let mut seen = HashSet::new();
    if !metrics.iter().all(|m| seen.insert(m.value_index)) {
        return Err(Error::Input("subgroup listed twice".into()));
    }
    let mut ordered: Vec<&SubgroupMetrics> = metrics.iter().collect();
    ordered.sort_by_key(|m| m.value_index);
    let (mut hi, mut lo) = (ordered[0], ordered[0]);
    for m in &ordered[1..] {
        if m.accuracy > hi.accuracy {
            hi = m;
        }
        if m.accuracy < lo.accuracy {
            lo = m;
        }
    }
    Ok(DisparityRow {
        attribute,
        max_accuracy: hi.accuracy,
        min_accuracy: lo.accuracy,
        dp: hi.accuracy - lo.accuracy,
        argmax_group: hi.value.clone(),
        argmin_group: lo.value.clone(),
    })
}

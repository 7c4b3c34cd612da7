use std::collections::BTreeMap;

use super::{ClassifierHandle, ClassifierKind, PredictionRecord};
use crate::cohort::{
    fnv1a64, seed_mix, unit_interval, Attribute, AttributeVocabulary, ManifestRow,
};
use crate::{Error, Result};

/// Label emitted for a wrong verdict.
pub const WRONG_LABEL: &str = "other";

/// Classifier with a known accuracy per value of one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedOracle {
    pub attribute: Attribute,
    /// Indexed like the attribute's vocabulary list.
    pub accuracy: Vec<f64>,
    pub seed: u64,
}

impl PlantedOracle {
    /// Correct iff `unit_interval(seed_mix(seed, fnv1a64(sample_id)))` is below
    /// the row's accuracy. Independent of batch order and composition.
    pub fn is_correct(&self, row: &ManifestRow) -> bool {
        let u = unit_interval(seed_mix(self.seed, fnv1a64(row.sample_id.as_bytes())));
        u < self.accuracy[row.profile.get(self.attribute)]
    }

    pub fn predict(&self, vocab: &AttributeVocabulary, row: &ManifestRow) -> PredictionRecord {
        let label = if self.is_correct(row) {
            row.profile.surface(vocab, Attribute::Diagnosis).to_string()
        } else {
            WRONG_LABEL.to_string()
        };
        PredictionRecord {
            sample_id: row.sample_id.clone(),
            predicted_label: label,
            score: 1.0,
        }
    }
}

/// Builds an oracle handle from a table keyed by surface value. The table
/// must cover every value of `attribute` and nothing else.
pub fn planted_oracle(
    name: &str,
    attribute: &str,
    table: &BTreeMap<String, f64>,
    vocab: &AttributeVocabulary,
    seed: u64,
) -> Result<ClassifierHandle> {
    let attr = Attribute::from_name(attribute).map_err(|e| Error::Config(e.to_string()))?;
    let values = vocab.values(attr);
    let mut accuracy = Vec::with_capacity(values.len());
    for v in values {
        let a = *table.get(v).ok_or_else(|| {
            Error::Config(format!(
                "oracle `{name}`: no accuracy for {attr} value `{v}`"
            ))
        })?;
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Config(format!(
                "oracle `{name}`: accuracy {a} for `{v}` is outside [0, 1]"
            )));
        }
        accuracy.push(a);
    }
    if let Some(extra) = table.keys().find(|k| !values.contains(k)) {
        return Err(Error::Config(format!(
            "oracle `{name}`: `{extra}` is not a {attr} value"
        )));
    }
    Ok(ClassifierHandle {
        name: name.to_string(),
        kind: ClassifierKind::Oracle(PlantedOracle {
            attribute: attr,
            accuracy,
            seed,
        }),
    })
}

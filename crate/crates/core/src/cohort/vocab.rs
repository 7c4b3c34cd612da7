use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::seed::fnv1a64;
use crate::{Error, Result};

/// Protected or descriptive attribute of a cohort cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Sex,
    Age,
    SkinType,
    Size,
    Diagnosis,
}

impl Attribute {
    /// Grid (manifest) order.
    pub const GRID_ORDER: [Attribute; 5] = [
        Attribute::Sex,
        Attribute::Age,
        Attribute::SkinType,
        Attribute::Size,
        Attribute::Diagnosis,
    ];

    /// Prompt and condition-embedding order.
    pub const PROMPT_ORDER: [Attribute; 5] = [
        Attribute::Sex,
        Attribute::Age,
        Attribute::Size,
        Attribute::SkinType,
        Attribute::Diagnosis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Sex => "sex",
            Attribute::Age => "age",
            Attribute::SkinType => "skin_type",
            Attribute::Size => "size",
            Attribute::Diagnosis => "diagnosis",
        }
    }

    /// Column label used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            Attribute::Sex => "Sex",
            Attribute::Age => "Age",
            Attribute::SkinType => "Skin Type",
            Attribute::Size => "Size",
            Attribute::Diagnosis => "Diagnosis",
        }
    }

    pub fn from_name(name: &str) -> Result<Attribute> {
        Attribute::GRID_ORDER
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Input(format!("unknown attribute `{name}`")))
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered value lists for every attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeVocabulary {
    pub sexes: Vec<String>,
    pub age_bands: Vec<String>,
    pub skin_types: Vec<String>,
    pub sizes: Vec<String>,
    pub diagnoses: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for AttributeVocabulary {
    /// 2 sexes, 8 decade age bands, Fitzpatrick I-VI plus `unknown`, a single
    /// `unknown` size and melanoma only: 112 cells.
    fn default() -> Self {
        AttributeVocabulary {
            sexes: strings(&["male", "female"]),
            age_bands: strings(&["10", "20", "30", "40", "50", "60", "70", "80"]),
            skin_types: strings(&["I", "II", "III", "IV", "V", "VI", "unknown"]),
            sizes: strings(&["unknown"]),
            diagnoses: strings(&["melanoma"]),
        }
    }
}

impl AttributeVocabulary {
    pub fn values(&self, attribute: Attribute) -> &[String] {
        match attribute {
            Attribute::Sex => &self.sexes,
            Attribute::Age => &self.age_bands,
            Attribute::SkinType => &self.skin_types,
            Attribute::Size => &self.sizes,
            Attribute::Diagnosis => &self.diagnoses,
        }
    }

    pub fn cardinality(&self, attribute: Attribute) -> usize {
        self.values(attribute).len()
    }

    /// Number of grid cells.
    pub fn cell_count(&self) -> usize {
        Attribute::GRID_ORDER
            .iter()
            .map(|&a| self.cardinality(a))
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        for attribute in Attribute::GRID_ORDER {
            let values = self.values(attribute);
            if values.is_empty() {
                return Err(Error::Vocabulary(format!("`{attribute}` has no values")));
            }
            let mut seen = HashSet::new();
            for v in values {
                if v.is_empty()
                    || v.chars()
                        .any(|c| c.is_whitespace() || matches!(c, ';' | '=' | ','))
                {
                    return Err(Error::Vocabulary(format!(
                        "`{attribute}` value {v:?} must be non-empty without whitespace, `;`, `=` or `,`"
                    )));
                }
                if !seen.insert(v) {
                    return Err(Error::Vocabulary(format!(
                        "`{attribute}` repeats value {v:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn index_of(&self, attribute: Attribute, value: &str) -> Result<usize> {
        self.values(attribute)
            .iter()
            .position(|v| v == value)
            .ok_or_else(|| Error::Vocabulary(format!("`{value}` is not a known {attribute} value")))
    }

    /// Canonical text form; the vocabulary hash is FNV-1a over these bytes.
    pub fn canonical_text(&self) -> String {
        Attribute::GRID_ORDER
            .iter()
            .map(|&a| format!("{}={}\n", a.name(), self.values(a).join(",")))
            .collect()
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }
}

/// One grid cell: an index into each vocabulary list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeProfile {
    pub sex: usize,
    pub age: usize,
    pub skin_type: usize,
    pub size: usize,
    pub diagnosis: usize,
}

impl AttributeProfile {
    pub fn get(&self, attribute: Attribute) -> usize {
        match attribute {
            Attribute::Sex => self.sex,
            Attribute::Age => self.age,
            Attribute::SkinType => self.skin_type,
            Attribute::Size => self.size,
            Attribute::Diagnosis => self.diagnosis,
        }
    }

    pub fn set(&mut self, attribute: Attribute, index: usize) {
        match attribute {
            Attribute::Sex => self.sex = index,
            Attribute::Age => self.age = index,
            Attribute::SkinType => self.skin_type = index,
            Attribute::Size => self.size = index,
            Attribute::Diagnosis => self.diagnosis = index,
        }
    }

    pub fn validate(&self, vocab: &AttributeVocabulary) -> Result<()> {
        for attribute in Attribute::GRID_ORDER {
            let (i, n) = (self.get(attribute), vocab.cardinality(attribute));
            if i >= n {
                return Err(Error::Vocabulary(format!(
                    "{attribute} index {i} out of range (vocabulary has {n})"
                )));
            }
        }
        Ok(())
    }

    pub fn surface<'v>(&self, vocab: &'v AttributeVocabulary, attribute: Attribute) -> &'v str {
        &vocab.values(attribute)[self.get(attribute)]
    }
}

/// Cartesian product of the vocabulary, sex outermost, then age, skin type,
/// size and diagnosis.
pub fn build_grid(vocab: &AttributeVocabulary) -> Vec<AttributeProfile> {
    let mut grid = Vec::with_capacity(vocab.cell_count());
    for sex in 0..vocab.sexes.len() {
        for age in 0..vocab.age_bands.len() {
            for skin_type in 0..vocab.skin_types.len() {
                for size in 0..vocab.sizes.len() {
                    for diagnosis in 0..vocab.diagnoses.len() {
                        grid.push(AttributeProfile {
                            sex,
                            age,
                            skin_type,
                            size,
                            diagnosis,
                        });
                    }
                }
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_112_cells_in_order() {
        let vocab = AttributeVocabulary::default();
        vocab.validate().unwrap();
        let grid = build_grid(&vocab);
        assert_eq!(grid.len(), 2 * 8 * 7);
        assert_eq!(
            grid[0],
            AttributeProfile {
                sex: 0,
                age: 0,
                skin_type: 0,
                size: 0,
                diagnosis: 0
            }
        );
        assert_eq!(
            *grid.last().unwrap(),
            AttributeProfile {
                sex: 1,
                age: 7,
                skin_type: 6,
                size: 0,
                diagnosis: 0
            }
        );
        let mut sorted = grid.clone();
        sorted.sort();
        assert_eq!(sorted, grid, "grid order is lexicographic");
    }

    #[test]
    fn singleton_vocabulary_has_one_cell() {
        let vocab = AttributeVocabulary {
            sexes: strings(&["f"]),
            age_bands: strings(&["40"]),
            skin_types: strings(&["II"]),
            sizes: strings(&["small"]),
            diagnoses: strings(&["melanoma"]),
        };
        assert_eq!(build_grid(&vocab).len(), 1);
    }

    #[test]
    fn invalid_vocabularies_are_rejected() {
        let mut v = AttributeVocabulary::default();
        v.sexes.clear();
        assert!(matches!(v.validate(), Err(Error::Vocabulary(_))));
        let mut v = AttributeVocabulary::default();
        v.skin_types.push("I".into());
        assert!(matches!(v.validate(), Err(Error::Vocabulary(_))));
        let mut v = AttributeVocabulary::default();
        v.sizes = strings(&["very large"]);
        assert!(matches!(v.validate(), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = AttributeVocabulary::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.sizes = strings(&["small"]);
        assert_ne!(a.hash(), b.hash());
    }
}

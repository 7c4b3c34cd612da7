use crate::cohort::{Attribute, AttributeProfile, AttributeVocabulary};
use crate::Result;

/// Concatenated one-hot blocks in prompt order (sex, age, size, skin type,
/// diagnosis) followed by a single null flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding(Vec<f64>);

impl ConditionEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_null(&self) -> bool {
        self.0.last() == Some(&1.0)
    }

    /// Positions of the non-zero entries.
    pub fn hot_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEncoder {
    vocab: AttributeVocabulary,
}

impl ConditionEncoder {
    pub fn new(vocab: &AttributeVocabulary) -> Result<Self> {
        vocab.validate()?;
        Ok(ConditionEncoder {
            vocab: vocab.clone(),
        })
    }

    pub fn vocabulary(&self) -> &AttributeVocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        Attribute::PROMPT_ORDER
            .iter()
            .map(|&a| self.vocab.cardinality(a))
            .sum::<usize>()
            + 1
    }

    /// Offset of an attribute's one-hot block.
    pub fn block_offset(&self, attribute: Attribute) -> usize {
        Attribute::PROMPT_ORDER
            .iter()
            .take_while(|&&a| a != attribute)
            .map(|&a| self.vocab.cardinality(a))
            .sum()
    }

    pub fn null(&self) -> ConditionEmbedding {
        let mut v = vec![0.0; self.dim()];
        *v.last_mut().unwrap() = 1.0;
        ConditionEmbedding(v)
    }

    /// `None` yields the null condition used for classifier-free guidance.
    pub fn embed(&self, profile: Option<&AttributeProfile>) -> Result<ConditionEmbedding> {
        let Some(profile) = profile else {
            return Ok(self.null());
        };
        profile.validate(&self.vocab)?;
        let mut v = vec![0.0; self.dim()];
        for attribute in Attribute::PROMPT_ORDER {
            v[self.block_offset(attribute) + profile.get(attribute)] = 1.0;
        }
        Ok(ConditionEmbedding(v))
    }
}

pub fn embed_condition(
    profile: Option<&AttributeProfile>,
    vocab: &AttributeVocabulary,
) -> Result<ConditionEmbedding> {
    ConditionEncoder::new(vocab)?.embed(profile)
}

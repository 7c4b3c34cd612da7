use super::vocab::{Attribute, AttributeProfile, AttributeVocabulary};
use crate::{Error, Result};

const SEPARATOR: &str = "; ";

/// `sex=<v>; age=<v>; size=<v>; skin_type=<v>; diagnosis=<v>`
pub fn render_prompt(profile: &AttributeProfile, vocab: &AttributeVocabulary) -> String {
    Attribute::PROMPT_ORDER
        .iter()
        .map(|&a| format!("{}={}", a.name(), profile.surface(vocab, a)))
        .collect::<Vec<_>>()
        .join(SEPARATOR)
}

/// Inverse of [`render_prompt`]. Field order and spelling must match exactly.
pub fn parse_prompt(prompt: &str, vocab: &AttributeVocabulary) -> Result<AttributeProfile> {
    let fields: Vec<&str> = prompt.split(SEPARATOR).collect();
    if fields.len() != Attribute::PROMPT_ORDER.len() {
        return Err(Error::format(
            "prompt",
            format!(
                "expected 5 `key=value` fields, got {}: {prompt:?}",
                fields.len()
            ),
        ));
    }
    let mut profile = AttributeProfile {
        sex: 0,
        age: 0,
        skin_type: 0,
        size: 0,
        diagnosis: 0,
    };
    for (field, attribute) in fields.iter().zip(Attribute::PROMPT_ORDER) {
        let value = field
            .strip_prefix(attribute.name())
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| {
                Error::format(
                    "prompt",
                    format!("expected `{}=...`, got {field:?}", attribute.name()),
                )
            })?;
        profile.set(attribute, vocab.index_of(attribute, value)?);
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::build_grid;
    use std::collections::HashSet;

    #[test]
    fn renders_fixed_field_order() {
        let vocab = AttributeVocabulary::default();
        let p = AttributeProfile {
            sex: 0,
            age: 0,
            skin_type: 0,
            size: 0,
            diagnosis: 0,
        };
        assert_eq!(
            render_prompt(&p, &vocab),
            "sex=male; age=10; size=unknown; skin_type=I; diagnosis=melanoma"
        );
    }

    #[test]
    fn prompts_are_injective_and_round_trip_over_the_grid() {
        let vocab = AttributeVocabulary::default();
        let grid = build_grid(&vocab);
        let prompts: HashSet<String> = grid.iter().map(|p| render_prompt(p, &vocab)).collect();
        assert_eq!(prompts.len(), 112);
        for p in &grid {
            assert_eq!(parse_prompt(&render_prompt(p, &vocab), &vocab).unwrap(), *p);
        }
    }

    #[test]
    fn rejects_reordered_or_unknown_fields() {
        let vocab = AttributeVocabulary::default();
        assert!(parse_prompt(
            "age=10; sex=male; size=unknown; skin_type=I; diagnosis=melanoma",
            &vocab
        )
        .is_err());
        assert!(matches!(
            parse_prompt(
                "sex=male; age=15; size=unknown; skin_type=I; diagnosis=melanoma",
                &vocab
            ),
            Err(Error::Vocabulary(_))
        ));
        assert!(parse_prompt("sex=male", &vocab).is_err());
    }
}

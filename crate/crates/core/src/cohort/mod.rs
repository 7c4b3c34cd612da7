//! Attribute vocabulary, prompt rendering and the balanced, seeded manifest.

mod manifest;
mod prompt;
mod seed;
mod vocab;

pub use manifest::{
    build_manifest, build_manifest_with_cap, sample_id, validate_manifest, CohortSpec, Manifest,
    ManifestRow, Violation, DEFAULT_ROW_CAP, MANIFEST_FORMAT, MANIFEST_VERSION, SAMPLE_ID_WIDTH,
};
pub use prompt::{parse_prompt, render_prompt};
pub use seed::{derive_stream, fnv1a64, seed_mix, unit_interval, GOLDEN_GAMMA};
pub use vocab::{build_grid, Attribute, AttributeProfile, AttributeVocabulary};

//! Classifier boundary: planted-bias oracles and the external-process protocol.

mod conformance;
mod external;
mod oracle;
mod png;
mod records;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cohort::{AttributeVocabulary, ManifestRow};

pub use conformance::{run_conformance, ConformanceCheck, ConformanceReport};
pub use external::{ExternalCommand, DEFAULT_TIMEOUT, PROTOCOL_HANDSHAKE, REQUEST_CHUNK};
pub use oracle::{planted_oracle, PlantedOracle, WRONG_LABEL};
pub use png::{read_png, write_png};
pub use records::{read_predictions, write_predictions, PREDICTIONS_FORMAT, PREDICTIONS_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("could not start `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("pipe to classifier process failed: {0}")]
    Pipe(#[source] std::io::Error),

    #[error("bad handshake, expected `{PROTOCOL_HANDSHAKE}`, got {line:?}")]
    Handshake { line: Option<String> },

    #[error("malformed line {line:?}: {detail}")]
    Malformed { line: String, detail: String },

    #[error("classifier reported an error: {message}")]
    Remote { message: String },

    #[error("response for unknown sample id `{sample_id}`")]
    UnknownId { sample_id: String },

    #[error("duplicate response for sample id `{sample_id}`")]
    DuplicateId { sample_id: String },

    #[error("no response for sample id `{sample_id}` ({missing} missing in this chunk)")]
    Missing { sample_id: String, missing: usize },

    #[error("timed out after {}s waiting for sample id `{sample_id}`", .timeout.as_secs_f64())]
    Timeout {
        timeout: Duration,
        sample_id: String,
    },

    #[error("classifier process exited with {status}{stderr}")]
    Exit { status: String, stderr: String },

    #[error("image for sample id `{sample_id}` is missing at {}", .path.display())]
    MissingImage { sample_id: String, path: PathBuf },

    #[error("{images} images for {rows} rows")]
    Misaligned { rows: usize, images: usize },
}

/// One classifier verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    /// A diagnosis surface string, or `other`.
    pub predicted_label: String,
    /// Confidence in `predicted_label`, in `[0, 1]`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierKind {
    Oracle(PlantedOracle),
    External(ExternalCommand),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHandle {
    pub name: String,
    pub kind: ClassifierKind,
}

/// Classifies `rows`, one record per row in row order. `images[i]` is the
/// image file for `rows[i]`; oracles ignore the pixels but still require
/// the files to exist.
pub fn classify_batch(
    handle: &ClassifierHandle,
    vocab: &AttributeVocabulary,
    rows: &[ManifestRow],
    images: &[PathBuf],
) -> Result<Vec<PredictionRecord>, AdapterError> {
    if rows.len() != images.len() {
        return Err(AdapterError::Misaligned {
            rows: rows.len(),
            images: images.len(),
        });
    }
    for (row, path) in rows.iter().zip(images) {
        if !path.is_file() {
            return Err(AdapterError::MissingImage {
                sample_id: row.sample_id.clone(),
                path: path.clone(),
            });
        }
    }
    match &handle.kind {
        ClassifierKind::Oracle(oracle) => {
            Ok(rows.iter().map(|r| oracle.predict(vocab, r)).collect())
        }
        ClassifierKind::External(cmd) => cmd.classify(rows, images),
    }
}

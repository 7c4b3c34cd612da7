use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::prompt::{parse_prompt, render_prompt};
use super::seed::seed_mix;
use super::vocab::{build_grid, Attribute, AttributeProfile, AttributeVocabulary};
use crate::{Error, Result};

pub const MANIFEST_FORMAT: &str = "fairgen-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_ROW_CAP: u64 = 10_000_000;
/// Width of the zero-padded decimal sample id.
pub const SAMPLE_ID_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub vocabulary: AttributeVocabulary,
    pub n_per_cell: u32,
    pub master_seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            vocabulary: AttributeVocabulary::default(),
            n_per_cell: 100,
            master_seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        self.vocabulary.validate()?;
        if self.n_per_cell == 0 {
            return Err(Error::Input("n_per_cell must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_rows(&self) -> u64 {
        self.vocabulary.cell_count() as u64 * u64::from(self.n_per_cell)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub profile: AttributeProfile,
    pub prompt: String,
    pub derived_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: CohortSpec,
    /// Canonical text of the run configuration that produced this manifest.
    pub config_echo: Option<String>,
    pub rows: Vec<ManifestRow>,
}

pub fn sample_id(index: usize) -> String {
    format!("{index:0width$}", width = SAMPLE_ID_WIDTH)
}

pub fn build_manifest(spec: &CohortSpec) -> Result<Manifest> {
    build_manifest_with_cap(spec, DEFAULT_ROW_CAP)
}

/// Grid order, then replicate index; row `i` gets `seed_mix(master_seed, i)`.
pub fn build_manifest_with_cap(spec: &CohortSpec, cap: u64) -> Result<Manifest> {
    spec.validate()?;
    let total = (spec.vocabulary.cell_count() as u64)
        .checked_mul(u64::from(spec.n_per_cell))
        .unwrap_or(u64::MAX);
    if total > cap {
        return Err(Error::Size { rows: total, cap });
    }
    let vocab = &spec.vocabulary;
    let mut rows = Vec::with_capacity(total as usize);
    for profile in build_grid(vocab) {
        let prompt = render_prompt(&profile, vocab);
        for _ in 0..spec.n_per_cell {
            let index = rows.len();
            rows.push(ManifestRow {
                sample_id: sample_id(index),
                profile,
                prompt: prompt.clone(),
                derived_seed: seed_mix(spec.master_seed, index as u64),
            });
        }
    }
    Ok(Manifest {
        format_version: MANIFEST_VERSION,
        spec: spec.clone(),
        config_echo: None,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cardinality {
        expected: u64,
        found: u64,
    },
    DuplicateId {
        row: usize,
        sample_id: String,
    },
    NonContiguousId {
        row: usize,
        expected: String,
        found: String,
    },
    InvalidProfile {
        row: usize,
        detail: String,
    },
    OrderMismatch {
        row: usize,
    },
    PromptMismatch {
        row: usize,
    },
    SeedMismatch {
        row: usize,
        sample_id: String,
        expected: u64,
        found: u64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cardinality { expected, found } => {
                write!(f, "cardinality: expected {expected} rows, found {found}")
            }
            Violation::DuplicateId { row, sample_id } => {
                write!(f, "duplicate id {sample_id} at row {row}")
            }
            Violation::NonContiguousId {
                row,
                expected,
                found,
            } => {
                write!(f, "row {row}: expected id {expected}, found {found}")
            }
            Violation::InvalidProfile { row, detail } => write!(f, "row {row}: {detail}"),
            Violation::OrderMismatch { row } => write!(f, "row {row} is out of grid order"),
            Violation::PromptMismatch { row } => {
                write!(f, "row {row}: prompt does not match its attributes")
            }
            Violation::SeedMismatch {
                row,
                sample_id,
                expected,
                found,
            } => write!(
                f,
                "seed mismatch at row {row} ({sample_id}): expected {expected}, found {found}"
            ),
        }
    }
}

/// Every invariant breach found; empty means the manifest is sound.
pub fn validate_manifest(manifest: &Manifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let spec = &manifest.spec;
    let vocab = &spec.vocabulary;
    if let Err(e) = spec.validate() {
        out.push(Violation::InvalidProfile {
            row: 0,
            detail: format!("embedded cohort spec: {e}"),
        });
        return out;
    }
    let expected_rows = spec.total_rows();
    if manifest.rows.len() as u64 != expected_rows {
        out.push(Violation::Cardinality {
            expected: expected_rows,
            found: manifest.rows.len() as u64,
        });
    }
    let grid = build_grid(vocab);
    let n = spec.n_per_cell as usize;
    let mut seen = HashSet::with_capacity(manifest.rows.len());
    for (i, row) in manifest.rows.iter().enumerate() {
        let expected_id = sample_id(i);
        if row.sample_id != expected_id {
            if seen.contains(row.sample_id.as_str()) {
                out.push(Violation::DuplicateId {
                    row: i,
                    sample_id: row.sample_id.clone(),
                });
            } else {
                out.push(Violation::NonContiguousId {
                    row: i,
                    expected: expected_id,
                    found: row.sample_id.clone(),
                });
            }
        }
        seen.insert(row.sample_id.as_str());

        if let Err(e) = row.profile.validate(vocab) {
            out.push(Violation::InvalidProfile {
                row: i,
                detail: e.to_string(),
            });
            continue;
        }
        if grid.get(i / n) != Some(&row.profile) {
            out.push(Violation::OrderMismatch { row: i });
        }
        if row.prompt != render_prompt(&row.profile, vocab) {
            out.push(Violation::PromptMismatch { row: i });
        }
        let expected_seed = seed_mix(spec.master_seed, i as u64);
        if row.derived_seed != expected_seed {
            out.push(Violation::SeedMismatch {
                row: i,
                sample_id: row.sample_id.clone(),
                expected: expected_seed,
                found: row.derived_seed,
            });
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    format: String,
    version: u32,
    vocab_hash: String,
    rows: u64,
    spec: CohortSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_echo: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RowRecord {
    sample_id: String,
    sex: String,
    age: String,
    skin_type: String,
    size: String,
    diagnosis: String,
    prompt: String,
    derived_seed: u64,
}

impl Manifest {
    pub fn vocabulary(&self) -> &AttributeVocabulary {
        &self.spec.vocabulary
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = HeaderRecord {
            format: MANIFEST_FORMAT.into(),
            version: self.format_version,
            vocab_hash: self.spec.vocabulary.hash_hex(),
            rows: self.rows.len() as u64,
            spec: self.spec.clone(),
            config_echo: self.config_echo.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let vocab = self.vocabulary();
        for row in &self.rows {
            let surface = |a| row.profile.surface(vocab, a).to_string();
            let record = RowRecord {
                sample_id: row.sample_id.clone(),
                sex: surface(Attribute::Sex),
                age: surface(Attribute::Age),
                skin_type: surface(Attribute::SkinType),
                size: surface(Attribute::Size),
                diagnosis: surface(Attribute::Diagnosis),
                prompt: row.prompt.clone(),
                derived_seed: row.derived_seed,
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Manifest> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::format("manifest", "empty file"))?
            .map_err(|e| Error::format("manifest", e.to_string()))?;
        let header: HeaderRecord = serde_json::from_str(&header_line)
            .map_err(|e| Error::format("manifest", format!("header: {e}")))?;
        if header.format != MANIFEST_FORMAT {
            return Err(Error::format(
                "manifest",
                format!("unexpected format {:?}", header.format),
            ));
        }
        if header.version != MANIFEST_VERSION {
            return Err(Error::Compatibility(format!(
                "manifest format version {} (expected {MANIFEST_VERSION})",
                header.version
            )));
        }
        let vocab = &header.spec.vocabulary;
        vocab.validate()?;
        if header.vocab_hash != vocab.hash_hex() {
            return Err(Error::format(
                "manifest",
                "vocabulary hash does not match embedded vocabulary",
            ));
        }
        let mut rows = Vec::with_capacity(header.rows as usize);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::format("manifest", e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let rec: RowRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format("manifest", format!("line {}: {e}", lineno + 2)))?;
            let profile = AttributeProfile {
                sex: vocab.index_of(Attribute::Sex, &rec.sex)?,
                age: vocab.index_of(Attribute::Age, &rec.age)?,
                skin_type: vocab.index_of(Attribute::SkinType, &rec.skin_type)?,
                size: vocab.index_of(Attribute::Size, &rec.size)?,
                diagnosis: vocab.index_of(Attribute::Diagnosis, &rec.diagnosis)?,
            };
            if parse_prompt(&rec.prompt, vocab)? != profile {
                return Err(Error::format(
                    "manifest",
                    format!(
                        "line {}: prompt disagrees with attribute fields",
                        lineno + 2
                    ),
                ));
            }
            rows.push(ManifestRow {
                sample_id: rec.sample_id,
                profile,
                prompt: rec.prompt,
                derived_seed: rec.derived_seed,
            });
        }
        if rows.len() as u64 != header.rows {
            return Err(Error::format(
                "manifest",
                format!(
                    "header announces {} rows, file has {}",
                    header.rows,
                    rows.len()
                ),
            ));
        }
        Ok(Manifest {
            format_version: header.version,
            spec: header.spec,
            config_echo: header.config_echo,
            rows,
        })
    }
}

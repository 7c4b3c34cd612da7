//! Ground-truth datasets and their on-disk dump.
//!
//! A dump is the cohort manifest (same JSONL records) plus a sidecar image
//! block:
//!
//! ```text
//! magic          8 bytes  "FAIRGENI"
//! version        u32      1
//! vocab hash     u64
//! image side     u64
//! image count    u64
//! pixels         f64 * side * side * count, row-major, in manifest order
//! ```

use std::io::{Read, Write};

use rayon::prelude::*;

use super::world::{render_ground_truth, LabeledSample, World};
use crate::cohort::{build_manifest, CohortSpec, Manifest};
use crate::flowgen::ConditionedSample;
use crate::numkit::Tensor;
use crate::{Error, Result};

pub const IMAGE_BLOCK_MAGIC: &[u8; 8] = b"FAIRGENI";
pub const IMAGE_BLOCK_VERSION: u32 = 1;

/// Renders `n_per_cell` images for every grid cell, in manifest order.
/// Row `i` uses the manifest's derived seed for `i`.
pub fn build_dataset(world: &World, spec: &CohortSpec) -> Result<Vec<LabeledSample>> {
    if spec.vocabulary != *world.vocabulary() {
        return Err(Error::Vocabulary(
            "cohort vocabulary differs from the world's".into(),
        ));
    }
    let manifest = build_manifest(spec)?;
    manifest
        .rows
        .par_iter()
        .map(|row| render_ground_truth(world, &row.profile, row.derived_seed))
        .collect()
}

/// Flattens rendered images into generator training examples.
pub fn to_training_set(samples: &[LabeledSample]) -> Vec<ConditionedSample> {
    samples
        .iter()
        .map(|s| ConditionedSample {
            values: s.image.data().to_vec(),
            profile: s.profile,
        })
        .collect()
}

/// Writes the manifest records and the image block for a dataset built from `spec`.
pub fn write_dataset<W1: Write, W2: Write>(
    world: &World,
    spec: &CohortSpec,
    samples: &[LabeledSample],
    records: W1,
    mut images: W2,
) -> Result<()> {
    let manifest = build_manifest(spec)?;
    if manifest.rows.len() != samples.len() {
        return Err(Error::Dimension(format!(
            "{} samples for a {}-row manifest",
            samples.len(),
            manifest.rows.len()
        )));
    }
    if let Some(i) = manifest
        .rows
        .iter()
        .zip(samples)
        .position(|(r, s)| r.profile != s.profile)
    {
        return Err(Error::Validation(format!(
            "sample {i} does not match manifest row {i}"
        )));
    }
    let io = |e| Error::io("<dataset>", e);
    manifest.write_to(records).map_err(io)?;
    let side = world.params().image_side;
    let mut buf = Vec::with_capacity(36 + samples.len() * side * side * 8);
    buf.extend_from_slice(IMAGE_BLOCK_MAGIC);
    buf.extend_from_slice(&IMAGE_BLOCK_VERSION.to_le_bytes());
    buf.extend_from_slice(&world.vocabulary().hash().to_le_bytes());
    buf.extend_from_slice(&(side as u64).to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        for v in s.image.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    images.write_all(&buf).map_err(io)
}

/// Reads a dump written by [`write_dataset`].
pub fn read_dataset<R1: std::io::BufRead, R2: Read>(
    records: R1,
    mut images: R2,
) -> Result<(Manifest, Vec<LabeledSample>)> {
    let manifest = Manifest::read_from(records)?;
    let mut bytes = Vec::new();
    images
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<dataset>", e))?;
    let bad = |d: &str| Error::format("image block", d.to_string());
    if bytes.len() < 36 || &bytes[..8] != IMAGE_BLOCK_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
    let u64_at = |p: usize| u64::from_le_bytes(bytes[p..p + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != IMAGE_BLOCK_VERSION {
        return Err(Error::Compatibility(format!(
            "image block version {version}"
        )));
    }
    if u64_at(12) != manifest.vocabulary().hash() {
        return Err(Error::Compatibility(
            "image block vocabulary differs from manifest".into(),
        ));
    }
    let side = u64_at(20) as usize;
    let count = u64_at(28) as usize;
    let pixels = side * side;
    if count != manifest.rows.len() || bytes.len() != 36 + count * pixels * 8 {
        return Err(bad("image count or length does not match the manifest"));
    }
    let samples = manifest
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let start = 36 + i * pixels * 8;
            let data = bytes[start..start + pixels * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(LabeledSample {
                image: Tensor::from_vec(&[side, side], data)?,
                profile: row.profile,
                label: row.profile.diagnosis,
            })
        })
        .collect::<Result<_>>()?;
    Ok((manifest, samples))
}

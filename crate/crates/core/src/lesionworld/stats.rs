use std::collections::BTreeMap;

use serde::Serialize;

use super::world::{clamped_normal_mean, World};
use crate::cohort::AttributeProfile;
use crate::{Error, Result};

/// Summary features of one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageFeatures {
    /// Mean over pixels outside the largest lesion radius.
    pub background_mean: f64,
    /// Mean over pixels inside the smallest lesion radius.
    pub disk_mean: f64,
    /// `sqrt(area / pi)` of the region brighter than the midpoint between
    /// the cell's background and lesion levels.
    pub radius_estimate: f64,
}

/// Statistics are kept per (sex, age, skin type, diagnosis); size is pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CellKey {
    pub sex: usize,
    pub age: usize,
    pub skin_type: usize,
    pub diagnosis: usize,
}

impl From<&AttributeProfile> for CellKey {
    fn from(p: &AttributeProfile) -> Self {
        CellKey {
            sex: p.sex,
            age: p.age,
            skin_type: p.skin_type,
            diagnosis: p.diagnosis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellStatistics {
    pub count: usize,
    pub mean: ImageFeatures,
    /// Sample variance (n - 1 denominator); zero for a single sample.
    pub variance: ImageFeatures,
}

impl CellStatistics {
    pub fn background_standard_error(&self) -> f64 {
        (self.variance.background_mean / self.count as f64).sqrt()
    }
}

/// Features of `pixels` read as an image of the given cell.
pub fn image_features(
    world: &World,
    pixels: &[f64],
    profile: &AttributeProfile,
) -> Result<ImageFeatures> {
    if pixels.len() != world.pixel_count() {
        return Err(Error::Dimension(format!(
            "{} pixels, world images have {}",
            pixels.len(),
            world.pixel_count()
        )));
    }
    profile.validate(world.vocabulary())?;
    let (r_in, r_out) = (world.min_radius(), world.max_radius());
    let bg_level = world.background_level(profile.skin_type);
    let threshold = 0.5 * (bg_level + world.lesion_level(profile.skin_type, profile.diagnosis));
    let (mut bg_sum, mut bg_n, mut disk_sum, mut disk_n, mut bright) =
        (0.0, 0usize, 0.0, 0usize, 0usize);
    for (k, &v) in pixels.iter().enumerate() {
        let d2 = world.distance_squared(k);
        if d2 > r_out * r_out {
            bg_sum += v;
            bg_n += 1;
        }
        if d2 <= r_in * r_in {
            disk_sum += v;
            disk_n += 1;
        }
        if v > threshold {
            bright += 1;
        }
    }
    Ok(ImageFeatures {
        background_mean: if bg_n > 0 {
            bg_sum / bg_n as f64
        } else {
            f64::NAN
        },
        disk_mean: if disk_n > 0 {
            disk_sum / disk_n as f64
        } else {
            f64::NAN
        },
        radius_estimate: (bright as f64 / std::f64::consts::PI).sqrt(),
    })
}

/// Analytic expectation of the background and disk features for a cell.
/// The radius estimate has no closed form and is returned as the true radius.
pub fn expected_features(world: &World, profile: &AttributeProfile) -> ImageFeatures {
    let sigma = world.params().pixel_noise_sigma;
    ImageFeatures {
        background_mean: clamped_normal_mean(world.background_level(profile.skin_type), sigma),
        disk_mean: clamped_normal_mean(
            world.lesion_level(profile.skin_type, profile.diagnosis),
            sigma,
        ),
        radius_estimate: world.radius(profile.age),
    }
}

/// Per-cell mean and variance of [`image_features`]. Cells without samples
/// are absent from the map.
pub fn cell_statistics<'a, I>(
    world: &World,
    samples: I,
) -> Result<BTreeMap<CellKey, CellStatistics>>
where
    I: IntoIterator<Item = (&'a [f64], &'a AttributeProfile)>,
{
    let mut groups: BTreeMap<CellKey, Vec<ImageFeatures>> = BTreeMap::new();
    for (pixels, profile) in samples {
        let f = image_features(world, pixels, profile)?;
        groups.entry(CellKey::from(profile)).or_default().push(f);
    }
    if groups.is_empty() {
        return Err(Error::Input(
            "cell statistics need at least one sample".into(),
        ));
    }
    Ok(groups
        .into_iter()
        .map(|(key, fs)| (key, summarize(&fs)))
        .collect())
}

fn summarize(fs: &[ImageFeatures]) -> CellStatistics {
    let n = fs.len() as f64;
    let pick = |g: fn(&ImageFeatures) -> f64| {
        let mean = fs.iter().map(g).sum::<f64>() / n;
        let var = if fs.len() > 1 {
            fs.iter().map(|f| (g(f) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var)
    };
    let (bm, bv) = pick(|f| f.background_mean);
    let (dm, dv) = pick(|f| f.disk_mean);
    let (rm, rv) = pick(|f| f.radius_estimate);
    CellStatistics {
        count: fs.len(),
        mean: ImageFeatures {
            background_mean: bm,
            disk_mean: dm,
            radius_estimate: rm,
        },
        variance: ImageFeatures {
            background_mean: bv,
            disk_mean: dv,
            radius_estimate: rv,
        },
    }
}

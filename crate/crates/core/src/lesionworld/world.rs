use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::cohort::{AttributeProfile, AttributeVocabulary};
use crate::numkit::Tensor;
use crate::{Error, Result};

/// Parameters of the synthetic lesion world.
///
/// Background intensity is `background_base + skin_step * skin_index`; a
/// centred disk of radius `radius_base + age_step * age_index` pixels is
/// brightened by the diagnosis contrast; Gaussian pixel noise is added and
/// the result clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub image_side: usize,
    pub background_base: f64,
    pub skin_step: f64,
    pub radius_base: f64,
    pub age_step: f64,
    /// One contrast per diagnosis value.
    pub lesion_contrast: Vec<f64>,
    pub pixel_noise_sigma: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            image_side: 16,
            background_base: 0.15,
            skin_step: 0.07,
            radius_base: 2.0,
            age_step: 0.6,
            lesion_contrast: vec![0.3],
            pixel_noise_sigma: 0.05,
        }
    }
}

/// A validated world: parameters plus the vocabulary they were checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    params: WorldParams,
    vocab: AttributeVocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: Tensor,
    pub profile: AttributeProfile,
    /// Diagnosis index; always equals `profile.diagnosis`.
    pub label: usize,
}

impl World {
    pub fn new(params: WorldParams, vocab: &AttributeVocabulary) -> Result<World> {
        vocab.validate()?;
        let p = &params;
        let bad = |msg: String| Err(Error::Config(format!("world: {msg}")));
        if p.image_side < 4 {
            return bad(format!("image side {} is too small", p.image_side));
        }
        let finite = [
            p.background_base,
            p.skin_step,
            p.radius_base,
            p.age_step,
            p.pixel_noise_sigma,
        ];
        if finite
            .iter()
            .chain(&p.lesion_contrast)
            .any(|v| !v.is_finite())
        {
            return bad("parameters must be finite".into());
        }
        if p.pixel_noise_sigma < 0.0 {
            return bad("pixel noise sigma must be non-negative".into());
        }
        if p.lesion_contrast.len() != vocab.diagnoses.len() {
            return bad(format!(
                "{} lesion contrasts for {} diagnoses",
                p.lesion_contrast.len(),
                vocab.diagnoses.len()
            ));
        }
        for skin in 0..vocab.skin_types.len() {
            let bg = p.background_base + p.skin_step * skin as f64;
            if !(0.0..=1.0).contains(&bg) {
                return bad(format!(
                    "background {bg} for skin index {skin} leaves [0, 1]"
                ));
            }
            for (d, c) in p.lesion_contrast.iter().enumerate() {
                if !(0.0..=1.0).contains(&(bg + c)) {
                    return bad(format!(
                        "lesion intensity {} for skin index {skin}, diagnosis {d} leaves [0, 1]",
                        bg + c
                    ));
                }
            }
        }
        let half = p.image_side as f64 / 2.0;
        for age in 0..vocab.age_bands.len() {
            let r = p.radius_base + p.age_step * age as f64;
            if !(r > 0.0 && r < half) {
                return bad(format!(
                    "radius {r} for age index {age} must lie in (0, {half})"
                ));
            }
        }
        Ok(World {
            params,
            vocab: vocab.clone(),
        })
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn vocabulary(&self) -> &AttributeVocabulary {
        &self.vocab
    }

    pub fn pixel_count(&self) -> usize {
        self.params.image_side * self.params.image_side
    }

    pub fn background_level(&self, skin_index: usize) -> f64 {
        self.params.background_base + self.params.skin_step * skin_index as f64
    }

    pub fn radius(&self, age_index: usize) -> f64 {
        self.params.radius_base + self.params.age_step * age_index as f64
    }

    pub fn lesion_level(&self, skin_index: usize, diagnosis: usize) -> f64 {
        self.background_level(skin_index) + self.params.lesion_contrast[diagnosis]
    }

    /// Squared distance of pixel `k` from the image centre.
    pub fn distance_squared(&self, k: usize) -> f64 {
        let side = self.params.image_side;
        let half = side as f64 / 2.0;
        let (r, c) = (
            (k / side) as f64 + 0.5 - half,
            (k % side) as f64 + 0.5 - half,
        );
        r * r + c * c
    }

    pub fn in_disk(&self, k: usize, radius: f64) -> bool {
        self.distance_squared(k) <= radius * radius
    }

    /// Largest radius over all age bands.
    pub fn max_radius(&self) -> f64 {
        self.radius(self.vocab.age_bands.len() - 1)
            .max(self.radius(0))
    }

    pub fn min_radius(&self) -> f64 {
        self.radius(self.vocab.age_bands.len() - 1)
            .min(self.radius(0))
    }

    /// Noise-free intensity of every pixel for a profile.
    pub fn clean_image(&self, profile: &AttributeProfile) -> Vec<f64> {
        let bg = self.background_level(profile.skin_type);
        let lesion = self.lesion_level(profile.skin_type, profile.diagnosis);
        let radius = self.radius(profile.age);
        (0..self.pixel_count())
            .map(|k| if self.in_disk(k, radius) { lesion } else { bg })
            .collect()
    }

    /// Expected value of every pixel after noise and clamping.
    pub fn expected_image(&self, profile: &AttributeProfile) -> Vec<f64> {
        let sigma = self.params.pixel_noise_sigma;
        self.clean_image(profile)
            .into_iter()
            .map(|mu| clamped_normal_mean(mu, sigma))
            .collect()
    }
}

/// `E[clamp(mu + sigma Z, 0, 1)]` for standard normal `Z`.
pub fn clamped_normal_mean(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu.clamp(0.0, 1.0);
    }
    let std = Normal::standard();
    let alpha = (0.0 - mu) / sigma;
    let beta = (1.0 - mu) / sigma;
    let (fa, fb) = (std.cdf(alpha), std.cdf(beta));
    // 0 * P(below) + 1 * P(above) + E[X; inside]
    (1.0 - fb) + mu * (fb - fa) + sigma * (std.pdf(alpha) - std.pdf(beta))
}

/// Renders one noisy ground-truth image; deterministic in `(profile, seed)`.
pub fn render_ground_truth(
    world: &World,
    profile: &AttributeProfile,
    seed: u64,
) -> Result<LabeledSample> {
    profile.validate(world.vocabulary())?;
    let sigma = world.params.pixel_noise_sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = world
        .clean_image(profile)
        .into_iter()
        .map(|mu| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (mu + sigma * z).clamp(0.0, 1.0)
        })
        .collect();
    let side = world.params.image_side;
    Ok(LabeledSample {
        image: Tensor::from_vec(&[side, side], pixels)?,
        profile: *profile,
        label: profile.diagnosis,
    })
}

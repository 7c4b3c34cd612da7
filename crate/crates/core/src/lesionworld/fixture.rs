use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cohort::{AttributeProfile, AttributeVocabulary};
use crate::flowgen::ConditionedSample;

/// Two-dimensional conditional Gaussian mixture: four conditions, each an
/// isotropic Gaussian around its own mean.
///
/// The conditions are the four (sex, age) combinations with age index 0 or
/// 1 in the default vocabulary; every other field is index 0.
#[derive(Debug, Clone)]
pub struct GaussianMixtureFixture {
    pub vocabulary: AttributeVocabulary,
    pub components: Vec<(AttributeProfile, [f64; 2])>,
    pub std: f64,
}

impl Default for GaussianMixtureFixture {
    fn default() -> Self {
        let profile = |sex, age| AttributeProfile {
            sex,
            age,
            skin_type: 0,
            size: 0,
            diagnosis: 0,
        };
        GaussianMixtureFixture {
            vocabulary: AttributeVocabulary::default(),
            components: vec![
                (profile(0, 0), [2.0, 0.0]),
                (profile(1, 0), [0.0, 2.0]),
                (profile(0, 1), [-2.0, 0.0]),
                (profile(1, 1), [0.0, -2.0]),
            ],
            std: 0.3,
        }
    }
}

impl GaussianMixtureFixture {
    /// `n_per_component` draws per condition, components interleaved.
    pub fn sample(&self, n_per_component: usize, seed: u64) -> Vec<ConditionedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n_per_component * self.components.len());
        for _ in 0..n_per_component {
            for (profile, mean) in &self.components {
                let values = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + self.std * z
                    })
                    .collect();
                out.push(ConditionedSample {
                    values,
                    profile: *profile,
                });
            }
        }
        out
    }

    pub fn true_mean(&self, profile: &AttributeProfile) -> Option<[f64; 2]> {
        self.components
            .iter()
            .find(|(p, _)| p == profile)
            .map(|(_, m)| *m)
    }
}

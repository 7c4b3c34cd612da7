use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::embed::ConditionEmbedding;
use super::model::{cfg_velocity, VelocityField};
use crate::numkit::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    /// 250 Euler steps at guidance scale 10.
    fn default() -> Self {
        SamplerConfig {
            steps: 250,
            guidance_scale: 10.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Input("sampler needs at least one step".into()));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::Input(format!(
                "guidance scale must be finite and non-negative, got {}",
                self.guidance_scale
            )));
        }
        Ok(())
    }
}

/// Standard-normal starting point for a given seed.
pub fn initial_noise(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Draws one sample: noise from `config.seed` at `t = 1`, then `steps` guided
/// Euler steps down to `t = 0`.
pub fn sample<F: VelocityField + ?Sized>(
    field: &F,
    cond: &ConditionEmbedding,
    null: &ConditionEmbedding,
    config: &SamplerConfig,
) -> Result<Tensor> {
    let x = Tensor::vector(initial_noise(field.sample_dim(), config.seed))?;
    integrate(field, x, &[cond], null, config)
}

/// Samples a batch of rows, each from its own seed. A row's result does not
/// depend on the other rows in the batch.
pub fn sample_batch<F: VelocityField + ?Sized>(
    field: &F,
    conds: &[&ConditionEmbedding],
    seeds: &[u64],
    null: &ConditionEmbedding,
    config: &SamplerConfig,
) -> Result<Tensor> {
    if conds.len() != seeds.len() || conds.is_empty() {
        return Err(Error::Dimension(format!(
            "{} conditions for {} seeds",
            conds.len(),
            seeds.len()
        )));
    }
    let dim = field.sample_dim();
    let mut data = Vec::with_capacity(seeds.len() * dim);
    for &s in seeds {
        data.extend(initial_noise(dim, s));
    }
    let x = Tensor::from_vec(&[seeds.len(), dim], data)?;
    integrate(field, x, conds, null, config)
}

/// Euler integration of the guided field from `t = 1` to `t = 0` starting at `x`.
pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    mut x: Tensor,
    conds: &[&ConditionEmbedding],
    null: &ConditionEmbedding,
    config: &SamplerConfig,
) -> Result<Tensor> {
    config.validate()?;
    let h = 1.0 / config.steps as f64;
    for step in 0..config.steps {
        let t = 1.0 - step as f64 * h;
        let v = cfg_velocity(field, &x, t, conds, null, config.guidance_scale).map_err(
            |e| match e {
                Error::Numeric(_) => Error::Sampling { step },
                other => other,
            },
        )?;
        for (xi, vi) in x.data_mut().iter_mut().zip(v.data()) {
            *xi -= h * vi;
        }
        if !x.all_finite() {
            return Err(Error::Sampling { step });
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{build_grid, AttributeVocabulary};
    use crate::flowgen::{ConditionEncoder, VelocityModel};

    struct Constant(Vec<f64>);
    impl VelocityField for Constant {
        fn sample_dim(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, x: &Tensor, _: f64, _: &[&ConditionEmbedding]) -> Result<Tensor> {
            let data = (0..x.rows()).flat_map(|_| self.0.iter().copied()).collect();
            Tensor::from_vec(x.shape(), data)
        }
    }

    struct Blowup;
    impl VelocityField for Blowup {
        fn sample_dim(&self) -> usize {
            1
        }
        fn velocity(&self, x: &Tensor, _: f64, _: &[&ConditionEmbedding]) -> Result<Tensor> {
            Tensor::from_vec(
                x.shape(),
                x.data().iter().map(|v| -1e200 * v.abs().max(1.0)).collect(),
            )
        }
    }

    fn conds() -> (ConditionEmbedding, ConditionEmbedding) {
        let enc = ConditionEncoder::new(&AttributeVocabulary::default()).unwrap();
        (
            enc.embed(Some(&build_grid(enc.vocabulary())[5])).unwrap(),
            enc.null(),
        )
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        let (c, null) = conds();
        let field = Constant(vec![0.75, -2.0, 3.0]);
        for steps in [1, 7, 250] {
            let cfg = SamplerConfig {
                steps,
                guidance_scale: 1.0,
                seed: 99,
            };
            let out = sample(&field, &c, &null, &cfg).unwrap();
            let init = initial_noise(3, 99);
            for k in 0..3 {
                assert!((out.data()[k] - (init[k] - field.0[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let (c, null) = conds();
        let model = VelocityModel::new(4, c.dim(), &[8], 1).unwrap();
        let cfg = SamplerConfig {
            steps: 20,
            guidance_scale: 10.0,
            seed: 5,
        };
        assert_eq!(
            sample(&model, &c, &null, &cfg).unwrap(),
            sample(&model, &c, &null, &cfg).unwrap()
        );
        let other = SamplerConfig { seed: 6, ..cfg };
        assert_ne!(
            sample(&model, &c, &null, &cfg).unwrap(),
            sample(&model, &c, &null, &other).unwrap()
        );
    }

    #[test]
    fn batch_rows_match_single_samples() {
        let (c, null) = conds();
        let model = VelocityModel::new(4, c.dim(), &[8], 1).unwrap();
        let cfg = SamplerConfig {
            steps: 15,
            guidance_scale: 3.0,
            seed: 0,
        };
        let seeds = [11, 12, 13];
        let batch = sample_batch(&model, &[&c, &c, &c], &seeds, &null, &cfg).unwrap();
        for (r, &s) in seeds.iter().enumerate() {
            let single = sample(&model, &c, &null, &SamplerConfig { seed: s, ..cfg }).unwrap();
            assert_eq!(single.data(), batch.row(r));
        }
    }

    #[test]
    fn divergence_names_the_step() {
        let (c, null) = conds();
        let cfg = SamplerConfig {
            steps: 10,
            guidance_scale: 1.0,
            seed: 0,
        };
        assert!(matches!(
            sample(&Blowup, &c, &null, &cfg),
            Err(Error::Sampling { step: 1 })
        ));
    }

    #[test]
    fn zero_steps_is_rejected() {
        let (c, null) = conds();
        let cfg = SamplerConfig {
            steps: 0,
            guidance_scale: 1.0,
            seed: 0,
        };
        assert!(matches!(
            sample(&Constant(vec![0.0]), &c, &null, &cfg),
            Err(Error::Input(_))
        ));
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::embed::{ConditionEmbedding, ConditionEncoder};
use super::model::{VelocityField, VelocityModel};
use crate::cohort::AttributeProfile;
use crate::numkit::{AdamW, AdamWConfig, Tensor};
use crate::{Error, Result};

/// Rows per gradient chunk. Chunk sums are added in chunk order, so the
/// result is the same for any thread count.
const GRADIENT_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub condition_dropout_probability: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            train_steps: 20_000,
            batch_size: 128,
            learning_rate: 2e-4,
            weight_decay: 0.0,
            condition_dropout_probability: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.condition_dropout_probability) {
            return Err(Error::Input(format!(
                "condition dropout must lie in [0, 1), got {}",
                self.condition_dropout_probability
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!(
                "learning rate {} is not positive",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Input(format!(
                "weight decay {} is negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One training example: a flat data sample and the cell it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedSample {
    pub values: Vec<f64>,
    pub profile: AttributeProfile,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VelocityModel,
    /// Mini-batch flow loss recorded at every step.
    pub loss_trace: Vec<f64>,
}

/// Flow-matching training with AdamW and per-sample condition dropout.
///
/// Each step draws `batch_size` examples with replacement, a time
/// `t ~ U[0, 1)` and Gaussian noise per example, and replaces the condition
/// with the null embedding with the configured probability. Runs on the
/// current rayon pool; results do not depend on its size.
pub fn train(
    mut model: VelocityModel,
    dataset: &[ConditionedSample],
    encoder: &ConditionEncoder,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    let dim = model.sample_dim();
    if let Some(bad) = dataset.iter().position(|s| s.values.len() != dim) {
        return Err(Error::Dimension(format!(
            "training sample {bad} has {} values, model expects {dim}",
            dataset[bad].values.len()
        )));
    }
    if encoder.dim() != model.condition_dim() {
        return Err(Error::Dimension(format!(
            "encoder width {} but model expects {}",
            encoder.dim(),
            model.condition_dim()
        )));
    }
    let embeddings: Vec<ConditionEmbedding> = dataset
        .iter()
        .map(|s| encoder.embed(Some(&s.profile)))
        .collect::<Result<_>>()?;
    let null = encoder.null();

    let mut optimizer = AdamW::new(
        AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        model.network().params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = config.batch_size;
    let in_dim = model.input_dim();
    let mut loss_trace = Vec::with_capacity(config.train_steps);
    let mut inputs = Vec::with_capacity(batch * in_dim);
    let mut targets = Vec::with_capacity(batch * dim);

    for step in 0..config.train_steps {
        inputs.clear();
        targets.clear();
        for _ in 0..batch {
            let idx = rng.random_range(0..dataset.len());
            let t: f64 = rng.random();
            let dropped = rng.random::<f64>() < config.condition_dropout_probability;
            let x0 = &dataset[idx].values;
            let start = inputs.len();
            for &a in x0 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                inputs.push((1.0 - t) * a + t * noise);
                targets.push(noise - a);
            }
            debug_assert_eq!(inputs.len() - start, dim);
            inputs.push(t);
            let cond = if dropped { &null } else { &embeddings[idx] };
            inputs.extend_from_slice(cond.as_slice());
        }

        let net = model.network();
        let partials: Vec<(Vec<Tensor>, f64)> = inputs
            .par_chunks(GRADIENT_CHUNK * in_dim)
            .zip(targets.par_chunks(GRADIENT_CHUNK * dim))
            .map(|(x, y)| {
                let rows = y.len() / dim;
                let trace = net.forward_rows(x.to_vec(), rows);
                let mut sq = 0.0;
                let upstream: Vec<f64> = trace
                    .output()
                    .iter()
                    .zip(y)
                    .map(|(p, target)| {
                        let e = p - target;
                        sq += e * e;
                        2.0 * e / batch as f64
                    })
                    .collect();
                let (grads, _) = net.backward_rows(&trace, &upstream, false);
                (grads, sq)
            })
            .collect();

        let mut parts = partials.into_iter();
        let (mut grads, mut sq_total) = parts.next().expect("batch is non-empty");
        for (g, sq) in parts {
            sq_total += sq;
            for (acc, part) in grads.iter_mut().zip(&g) {
                for (a, b) in acc.data_mut().iter_mut().zip(part.data()) {
                    *a += b;
                }
            }
        }
        let loss = sq_total / batch as f64;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        loss_trace.push(loss);
        optimizer
            .step(model.network_mut().params_mut(), &grads)
            .map_err(|e| Error::Training {
                step,
                reason: e.to_string(),
            })?;
    }
    Ok(TrainOutcome { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{build_grid, AttributeVocabulary};

    fn tiny_dataset(enc: &ConditionEncoder) -> Vec<ConditionedSample> {
        build_grid(enc.vocabulary())
            .into_iter()
            .take(6)
            .enumerate()
            .map(|(i, profile)| ConditionedSample {
                values: vec![i as f64 * 0.3, 1.0 - i as f64 * 0.2],
                profile,
            })
            .collect()
    }

    fn setup() -> (ConditionEncoder, VelocityModel, Vec<ConditionedSample>) {
        let enc = ConditionEncoder::new(&AttributeVocabulary::default()).unwrap();
        let model = VelocityModel::new(2, enc.dim(), &[16], 4).unwrap();
        let data = tiny_dataset(&enc);
        (enc, model, data)
    }

    #[test]
    fn zero_steps_leave_the_model_untouched() {
        let (enc, model, data) = setup();
        let cfg = TrainConfig {
            train_steps: 0,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &data, &enc, &cfg).unwrap();
        assert_eq!(out.model, model);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn empty_dataset_is_an_input_error() {
        let (enc, model, _) = setup();
        assert!(matches!(
            train(model, &[], &enc, &TrainConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn invalid_dropout_is_rejected() {
        let (enc, model, data) = setup();
        let cfg = TrainConfig {
            condition_dropout_probability: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(model, &data, &enc, &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn deterministic_and_thread_count_independent() {
        let (enc, model, data) = setup();
        let cfg = TrainConfig {
            train_steps: 30,
            batch_size: 70,
            seed: 3,
            ..TrainConfig::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(model.clone(), &data, &enc, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_ne!(a.model, model);
    }

    #[test]
    fn recorded_loss_matches_flow_loss_on_the_same_batch() {
        // With one step the trace entry is the loss of the initial model on
        // the first drawn batch; recompute that batch independently.
        let (enc, model, data) = setup();
        let cfg = TrainConfig {
            train_steps: 1,
            batch_size: 5,
            seed: 8,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &data, &enc, &cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let null = enc.null();
        let embs: Vec<_> = data
            .iter()
            .map(|s| enc.embed(Some(&s.profile)).unwrap())
            .collect();
        let (mut x0, mut x1, mut ts, mut cs) = (vec![], vec![], vec![], vec![]);
        for _ in 0..5 {
            let idx = rng.random_range(0..data.len());
            let t: f64 = rng.random();
            let dropped = rng.random::<f64>() < 0.1;
            for &a in &data[idx].values {
                let n: f64 = StandardNormal.sample(&mut rng);
                x0.push(a);
                x1.push(n);
            }
            ts.push(t);
            cs.push(if dropped { &null } else { &embs[idx] });
        }
        let x0 = Tensor::from_vec(&[5, 2], x0).unwrap();
        let x1 = Tensor::from_vec(&[5, 2], x1).unwrap();
        let expected = super::super::flow_loss(&model, &x0, &x1, &ts, &cs).unwrap();
        assert!((out.loss_trace[0] - expected).abs() < 1e-12 * expected.max(1.0));
    }
}

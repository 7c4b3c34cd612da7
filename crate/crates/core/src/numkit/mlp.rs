use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{axpy, dot, Tensor};
use crate::{Error, Result};

/// Parameter count of a fully connected stack with the given layer widths.
pub fn parameter_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Fully connected network: `tanh` on hidden layers, identity on the output.
///
/// Parameters are kept as a flat list `[W0, b0, W1, b1, ...]` where `Wl` has
/// shape `[out, in]` and `bl` has shape `[out]`, so the optimizer and the
/// checkpoint writer can treat them uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layer_dims: Vec<usize>,
    params: Vec<Tensor>,
}

/// Intermediate values kept from a forward pass for backpropagation.
pub(crate) struct ForwardTrace {
    batch: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always holds the input")
    }
}

impl MlpNetwork {
    fn check_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "layer dims need at least input and output and no zero widths, got {layer_dims:?}"
            )));
        }
        Ok(())
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let params = layer_dims
            .windows(2)
            .flat_map(|w| [Tensor::zeros(&[w[1], w[0]]), Tensor::zeros(&[w[1]])])
            .collect();
        Ok(MlpNetwork {
            layer_dims: layer_dims.to_vec(),
            params,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in layer_dims.windows(2).enumerate() {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for v in net.params[2 * l].data_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_params(layer_dims: &[usize], params: Vec<Tensor>) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let layers = layer_dims.len() - 1;
        if params.len() != 2 * layers {
            return Err(Error::Dimension(format!(
                "{layers} layers need {} parameter tensors, got {}",
                2 * layers,
                params.len()
            )));
        }
        for (l, w) in layer_dims.windows(2).enumerate() {
            if params[2 * l].shape() != [w[1], w[0]] || params[2 * l + 1].shape() != [w[1]] {
                return Err(Error::Dimension(format!(
                    "layer {l} expects weights [{}, {}] and bias [{}], got {:?} and {:?}",
                    w[1],
                    w[0],
                    w[1],
                    params[2 * l].shape(),
                    params[2 * l + 1].shape()
                )));
            }
        }
        Ok(MlpNetwork {
            layer_dims: layer_dims.to_vec(),
            params,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.layer_dims)
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    fn batch_of(&self, input: &Tensor) -> Result<usize> {
        if input.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects input width {}, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        Ok(input.rows())
    }

    fn output_shape(&self, input: &Tensor) -> Vec<usize> {
        let mut shape = input.shape().to_vec();
        *shape.last_mut().unwrap() = self.output_dim();
        shape
    }

    /// Runs the network over every row of `input` (last dimension = features).
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let batch = self.batch_of(input)?;
        let trace = self.forward_rows(input.data().to_vec(), batch);
        let out = Tensor::from_parts_unchecked(
            self.output_shape(input),
            trace.acts.into_iter().last().unwrap(),
        );
        out.ensure_finite("mlp forward")?;
        Ok(out)
    }

    pub(crate) fn forward_rows(&self, input: Vec<f64>, batch: usize) -> ForwardTrace {
        debug_assert_eq!(input.len(), batch * self.input_dim());
        let layers = self.num_layers();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input);
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = self.params[2 * l].data();
            let bias = self.params[2 * l + 1].data();
            let h = &acts[l];
            let mut y = vec![0.0; batch * fan_out];
            for b in 0..batch {
                let x = &h[b * fan_in..(b + 1) * fan_in];
                let yb = &mut y[b * fan_out..(b + 1) * fan_out];
                for o in 0..fan_out {
                    yb[o] = bias[o] + dot(&w[o * fan_in..(o + 1) * fan_in], x);
                }
            }
            if l + 1 < layers {
                for v in &mut y {
                    *v = v.tanh();
                }
            }
            acts.push(y);
        }
        ForwardTrace { batch, acts }
    }

    /// Gradients of `sum(output * output_gradient)` with respect to every
    /// parameter and to the input.
    pub fn backward(
        &self,
        input: &Tensor,
        output_gradient: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let batch = self.batch_of(input)?;
        let expected = self.output_shape(input);
        if output_gradient.shape() != expected.as_slice() {
            return Err(Error::Dimension(format!(
                "output gradient must have shape {expected:?}, got {:?}",
                output_gradient.shape()
            )));
        }
        let trace = self.forward_rows(input.data().to_vec(), batch);
        let (grads, input_grad) = self.backward_rows(&trace, output_gradient.data(), true);
        for g in &grads {
            g.ensure_finite("mlp backward")?;
        }
        let input_grad =
            Tensor::from_parts_unchecked(input.shape().to_vec(), input_grad.expect("requested"));
        input_grad.ensure_finite("mlp backward")?;
        Ok((grads, input_grad))
    }

    pub(crate) fn backward_rows(
        &self,
        trace: &ForwardTrace,
        output_gradient: &[f64],
        want_input_grad: bool,
    ) -> (Vec<Tensor>, Option<Vec<f64>>) {
        let batch = trace.batch;
        let layers = self.num_layers();
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut delta = output_gradient.to_vec();
        let mut input_grad = None;
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let h = &trace.acts[l];
            let (gw, rest) = grads.split_at_mut(2 * l + 1);
            let gw = &mut gw[2 * l];
            let gb = &mut rest[0];
            for b in 0..batch {
                let x = &h[b * fan_in..(b + 1) * fan_in];
                let d = &delta[b * fan_out..(b + 1) * fan_out];
                for o in 0..fan_out {
                    axpy(d[o], x, &mut gw[o * fan_in..(o + 1) * fan_in]);
                    gb[o] += d[o];
                }
            }
            if l == 0 && !want_input_grad {
                break;
            }
            let w = self.params[2 * l].data();
            let mut upstream = vec![0.0; batch * fan_in];
            for b in 0..batch {
                let d = &delta[b * fan_out..(b + 1) * fan_out];
                let u = &mut upstream[b * fan_in..(b + 1) * fan_in];
                for o in 0..fan_out {
                    axpy(d[o], &w[o * fan_in..(o + 1) * fan_in], u);
                }
            }
            if l == 0 {
                input_grad = Some(upstream);
                break;
            }
            // Hidden activations are tanh outputs: d tanh = 1 - a^2.
            for (u, a) in upstream.iter_mut().zip(h) {
                *u *= 1.0 - a * a;
            }
            delta = upstream;
        }
        let grads = grads
            .into_iter()
            .zip(&self.params)
            .map(|(g, p)| Tensor::from_parts_unchecked(p.shape().to_vec(), g))
            .collect();
        (grads, input_grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNetwork::zeros(&[3, 5, 2]).unwrap();
        let out = net
            .forward(&t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.5, 9.0]))
            .unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer() {
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2], &[0.0, 0.0]);
        let net = MlpNetwork::from_params(&[2, 2], vec![w, b]).unwrap();
        let out = net.forward(&t(&[2], &[1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_matches_straight_line_reevaluation() {
        // Independent 2-3-1 evaluation written out term by term.
        let net = MlpNetwork::init(&[2, 3, 1], 11).unwrap();
        let p: Vec<&[f64]> = net.params().iter().map(|p| p.data()).collect();
        let x = [0.3, -1.2];
        let mut hidden = [0.0; 3];
        for j in 0..3 {
            hidden[j] = (p[1][j] + p[0][2 * j] * x[0] + p[0][2 * j + 1] * x[1]).tanh();
        }
        let expected = p[3][0] + p[2][0] * hidden[0] + p[2][1] * hidden[1] + p[2][2] * hidden[2];
        let out = net.forward(&t(&[2], &x)).unwrap();
        assert!((out.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let net = MlpNetwork::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            net.forward(&t(&[2], &[1.0, 2.0])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            net.backward(&t(&[3], &[1.0, 2.0, 3.0]), &t(&[3], &[0.0; 3])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = MlpNetwork::init(&[3, 4, 2], 5).unwrap();
        let (grads, dx) = net
            .backward(&t(&[3], &[0.1, 0.2, 0.3]), &Tensor::zeros(&[2]))
            .unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_closed_form() {
        let w = t(&[2, 3], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.5]);
        let b = t(&[2], &[0.1, 0.2]);
        let net = MlpNetwork::from_params(&[3, 2], vec![w.clone(), b]).unwrap();
        let x = [1.0, 2.0, -3.0];
        let g = [0.7, -0.4];
        let (grads, dx) = net.backward(&t(&[3], &x), &t(&[2], &g)).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads[0].data()[o * 3 + i], g[o] * x[i]);
            }
            assert_eq!(grads[1].data()[o], g[o]);
        }
        for i in 0..3 {
            let expected = g[0] * w.data()[i] + g[1] * w.data()[3 + i];
            assert!((dx.data()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_are_independent_of_batch_composition() {
        let net = MlpNetwork::init(&[13, 17, 9], 3).unwrap();
        let rows: Vec<f64> = (0..13 * 5)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let batched = net.forward(&t(&[5, 13], &rows)).unwrap();
        for r in 0..5 {
            let single = net.forward(&t(&[13], &rows[r * 13..(r + 1) * 13])).unwrap();
            assert_eq!(single.data(), batched.row(r));
        }
    }

    #[test]
    fn parameter_count_formula() {
        assert_eq!(parameter_count(&[2, 3, 1]), 2 * 3 + 3 + 3 + 1);
        let net = MlpNetwork::zeros(&[277, 64, 64, 256]).unwrap();
        let direct: usize = net.params().iter().map(Tensor::len).sum();
        assert_eq!(net.parameter_count(), direct);
    }
}

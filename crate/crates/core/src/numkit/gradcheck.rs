//! Central finite-difference checks of the analytic backward pass.

use super::mlp::MlpNetwork;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Maximum over all parameters of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// `loss` maps the network output to a scalar and its gradient with respect
/// to that output.
pub fn gradient_check<L>(net: &MlpNetwork, input: &Tensor, loss: L) -> Result<f64>
where
    L: Fn(&Tensor) -> (f64, Tensor),
{
    let output = net.forward(input)?;
    let (value, upstream) = loss(&output);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let (analytic, _) = net.backward(input, &upstream)?;
    compare_gradients(net, input, loss, &analytic, DEFAULT_STEP)
}

/// Compares supplied parameter gradients against central differences of
/// `loss` with step `h`.
pub fn compare_gradients<L>(
    net: &MlpNetwork,
    input: &Tensor,
    loss: L,
    analytic: &[Tensor],
    h: f64,
) -> Result<f64>
where
    L: Fn(&Tensor) -> (f64, Tensor),
{
    if analytic.len() != net.params().len()
        || analytic
            .iter()
            .zip(net.params())
            .any(|(a, p)| a.shape() != p.shape())
    {
        return Err(Error::Dimension(
            "analytic gradients are not aligned with the network parameters".into(),
        ));
    }
    let eval = |n: &MlpNetwork| -> Result<f64> {
        let (value, _) = loss(&n.forward(input)?);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Numeric(format!("loss is {value}")))
        }
    };

    let mut probe = net.clone();
    let mut worst = 0.0_f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let original = probe.params()[pi].data()[k];
            probe.params_mut()[pi].data_mut()[k] = original + h;
            let plus = eval(&probe)?;
            probe.params_mut()[pi].data_mut()[k] = original - h;
            let minus = eval(&probe)?;
            probe.params_mut()[pi].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// `0.5 * ||output - target||^2` and its gradient.
pub fn squared_error(target: Tensor) -> impl Fn(&Tensor) -> (f64, Tensor) {
    move |output: &Tensor| {
        let diff: Vec<f64> = output
            .data()
            .iter()
            .zip(target.data())
            .map(|(o, t)| o - t)
            .collect();
        let value = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        (
            value,
            Tensor::from_parts_unchecked(output.shape().to_vec(), diff),
        )
    }
}

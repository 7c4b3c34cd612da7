use super::embed::ConditionEmbedding;
use crate::numkit::{MlpNetwork, Tensor};
use crate::{Error, Result};

/// A conditional, time-dependent vector field over flat samples.
///
/// Convention: `t = 1` is pure noise, `t = 0` is data, and the field is
/// `dx/dt`, so for the interpolant `(1 - t) x0 + t x1` the target is
/// `x1 - x0`.
pub trait VelocityField: Sync {
    fn sample_dim(&self) -> usize;

    /// Velocity for every row of `x` (`[batch, sample_dim]` or `[sample_dim]`)
    /// at time `t`; `conds` holds one condition per row.
    fn velocity(&self, x: &Tensor, t: f64, conds: &[&ConditionEmbedding]) -> Result<Tensor>;
}

/// MLP velocity field with input `[x, t, condition]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    network: MlpNetwork,
    sample_dim: usize,
    condition_dim: usize,
}

impl VelocityModel {
    pub fn new(
        sample_dim: usize,
        condition_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let mut dims = vec![sample_dim + 1 + condition_dim];
        dims.extend_from_slice(hidden);
        dims.push(sample_dim);
        Self::from_network(MlpNetwork::init(&dims, seed)?, sample_dim, condition_dim)
    }

    pub fn from_network(
        network: MlpNetwork,
        sample_dim: usize,
        condition_dim: usize,
    ) -> Result<Self> {
        if network.input_dim() != sample_dim + 1 + condition_dim
            || network.output_dim() != sample_dim
        {
            return Err(Error::Dimension(format!(
                "network {:?} does not map [x({sample_dim}), t, cond({condition_dim})] to x",
                network.layer_dims()
            )));
        }
        Ok(VelocityModel {
            network,
            sample_dim,
            condition_dim,
        })
    }

    pub fn network(&self) -> &MlpNetwork {
        &self.network
    }

    pub(crate) fn network_mut(&mut self) -> &mut MlpNetwork {
        &mut self.network
    }

    pub fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    pub fn input_dim(&self) -> usize {
        self.sample_dim + 1 + self.condition_dim
    }

    /// Writes one network input row `[x, t, cond]` into `out`.
    pub(crate) fn pack_row(&self, x: &[f64], t: f64, cond: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(x);
        out.push(t);
        out.extend_from_slice(cond);
    }

    fn check_conditions(&self, rows: usize, conds: &[&ConditionEmbedding]) -> Result<()> {
        if conds.len() != rows {
            return Err(Error::Dimension(format!(
                "{rows} rows but {} conditions",
                conds.len()
            )));
        }
        if let Some(c) = conds.iter().find(|c| c.dim() != self.condition_dim) {
            return Err(Error::Dimension(format!(
                "condition width {} (model expects {})",
                c.dim(),
                self.condition_dim
            )));
        }
        Ok(())
    }
}

impl VelocityField for VelocityModel {
    fn sample_dim(&self) -> usize {
        self.sample_dim
    }

    fn velocity(&self, x: &Tensor, t: f64, conds: &[&ConditionEmbedding]) -> Result<Tensor> {
        if x.cols() != self.sample_dim {
            return Err(Error::Dimension(format!(
                "sample width {} (model expects {})",
                x.cols(),
                self.sample_dim
            )));
        }
        let rows = x.rows();
        self.check_conditions(rows, conds)?;
        let mut input = Vec::with_capacity(rows * self.input_dim());
        for (r, cond) in conds.iter().enumerate() {
            self.pack_row(x.row(r), t, cond.as_slice(), &mut input);
        }
        let trace = self.network.forward_rows(input, rows);
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), trace.output().to_vec());
        out.ensure_finite("velocity")?;
        Ok(out)
    }
}

/// Straight-line interpolant `(1 - t) x0 + t x1`.
pub fn noising(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    x0.check_same_shape(x1, "noising")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Input(format!("t must lie in [0, 1], got {t}")));
    }
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Ok(Tensor::from_parts_unchecked(x0.shape().to_vec(), data))
}

/// Classifier-free guidance `v_u + w (v_c - v_u)`.
///
/// `w = 1` returns the conditional velocity and `w = 0` the unconditional one
/// without going through the blend, so both identities hold bit for bit.
pub fn cfg_velocity<F: VelocityField + ?Sized>(
    field: &F,
    x: &Tensor,
    t: f64,
    conds: &[&ConditionEmbedding],
    null: &ConditionEmbedding,
    w: f64,
) -> Result<Tensor> {
    if let Some(i) = conds.iter().position(|c| c.is_null()) {
        return Err(Error::Contract(format!(
            "guided velocity needs a non-null condition (row {i}); use the plain velocity instead"
        )));
    }
    if !null.is_null() {
        return Err(Error::Contract(
            "unconditional branch must use the null condition".into(),
        ));
    }
    if w == 1.0 {
        return field.velocity(x, t, conds);
    }
    let nulls = vec![null; conds.len()];
    let v_u = field.velocity(x, t, &nulls)?;
    if w == 0.0 {
        return Ok(v_u);
    }
    let v_c = field.velocity(x, t, conds)?;
    let data = v_u
        .data()
        .iter()
        .zip(v_c.data())
        .map(|(u, c)| u + w * (c - u))
        .collect();
    let out = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
    out.ensure_finite("guided velocity")?;
    Ok(out)
}

/// Mean over the batch of `||v(noising(x0, x1, t), t, c) - (x1 - x0)||^2`.
pub fn flow_loss<F: VelocityField + ?Sized>(
    field: &F,
    x0: &Tensor,
    x1: &Tensor,
    t: &[f64],
    conds: &[&ConditionEmbedding],
) -> Result<f64> {
    x0.check_same_shape(x1, "flow loss")?;
    let rows = x0.rows();
    if t.len() != rows || conds.len() != rows {
        return Err(Error::Dimension(format!(
            "{rows} samples but {} times and {} conditions",
            t.len(),
            conds.len()
        )));
    }
    let mut total = 0.0;
    for r in 0..rows {
        let a = Tensor::from_parts_unchecked(vec![1, x0.cols()], x0.row(r).to_vec());
        let b = Tensor::from_parts_unchecked(vec![1, x0.cols()], x1.row(r).to_vec());
        let xt = noising(&a, &b, t[r])?;
        let v = field.velocity(&xt, t[r], &conds[r..r + 1])?;
        total += v
            .data()
            .iter()
            .zip(a.data().iter().zip(b.data()))
            .map(|(v, (a, b))| {
                let e = v - (b - a);
                e * e
            })
            .sum::<f64>();
    }
    let loss = total / rows as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("flow loss is {loss}")));
    }
    Ok(loss)
}

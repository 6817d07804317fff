//! Dense `f64` tensors, reverse-mode differentiation, small MLPs and optimizers.

mod mlp;
mod optim;
mod params;
mod tape;
mod tensor;

pub use mlp::Mlp;
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Segments, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{dot, lse_unchecked};

use crate::error::{Error, Result};

/// `max(v) + ln Σ exp(v − max(v))`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("logsumexp of an empty slice"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "logsumexp" });
    }
    Ok(lse_unchecked(values))
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference<F>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

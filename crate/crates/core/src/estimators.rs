//! Mutual-information lower bounds: BA, UBA, NWJ, InfoNCE and VINCE.
//!
//! Every estimator has a score-level form (taking precomputed witness values)
//! and, where it makes sense, a form that evaluates a [`Witness`] on embeddings.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndmath::{dot, lse_unchecked, Mlp, ParamId, ParamSet, Tape, Tensor, Var};

/// Shape of the compatibility function between two embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WitnessKind {
    Dot,
    ScaledDot,
    Bilinear,
    ConcatLinear,
    ConcatMlp { depth: usize },
}

impl fmt::Display for WitnessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WitnessKind::Dot => f.write_str("dot"),
            WitnessKind::ScaledDot => f.write_str("scaled-dot"),
            WitnessKind::Bilinear => f.write_str("bilinear"),
            WitnessKind::ConcatLinear => f.write_str("concat-linear"),
            WitnessKind::ConcatMlp { depth } => write!(f, "concat-mlp-{depth}"),
        }
    }
}

impl FromStr for WitnessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dot" => WitnessKind::Dot,
            "scaled-dot" => WitnessKind::ScaledDot,
            "bilinear" => WitnessKind::Bilinear,
            "concat-linear" => WitnessKind::ConcatLinear,
            other => match other.strip_prefix("concat-mlp-").map(str::parse::<usize>) {
                Some(Ok(depth)) if depth > 0 => WitnessKind::ConcatMlp { depth },
                _ => return Err(Error::Config(format!("unknown witness kind `{s}`"))),
            },
        })
    }
}

#[derive(Clone, Debug)]
enum Head {
    None,
    Bilinear(ParamId),
    Concat(Mlp),
}

/// `f(a, b)`: a scalar score between two d-dimensional embeddings, divided by ω.
#[derive(Clone, Debug)]
pub struct Witness {
    kind: WitnessKind,
    omega: f64,
    dim: usize,
    head: Head,
}

impl Witness {
    /// Plain dot product (ω = 1).
    pub fn dot(dim: usize) -> Self {
        Self {
            kind: WitnessKind::Dot,
            omega: 1.0,
            dim,
            head: Head::None,
        }
    }

    /// `aᵀb / ω`.
    pub fn scaled_dot(dim: usize, omega: f64) -> Result<Self> {
        check_omega(omega)?;
        Ok(Self {
            kind: WitnessKind::ScaledDot,
            omega,
            dim,
            head: Head::None,
        })
    }

    /// Builds any witness kind; parametric kinds register their weights in `params`.
    pub fn new<R: Rng + ?Sized>(
        kind: WitnessKind,
        dim: usize,
        omega: f64,
        hidden: usize,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Result<Self> {
        check_omega(omega)?;
        let head = match kind {
            WitnessKind::Dot => return Ok(Self::dot(dim)),
            WitnessKind::ScaledDot => Head::None,
            WitnessKind::Bilinear => {
                let mut w = vec![0.0; dim * dim];
                for i in 0..dim {
                    w[i * dim + i] = 1.0;
                }
                Head::Bilinear(params.add("witness.bilinear", Tensor::matrix(dim, dim, w)?))
            }
            WitnessKind::ConcatLinear => {
                Head::Concat(Mlp::new(params, "witness.concat", &[2 * dim, 1], false, rng)?)
            }
            WitnessKind::ConcatMlp { depth } => {
                let mut widths = vec![2 * dim];
                widths.extend(std::iter::repeat_n(hidden.max(1), depth));
                widths.push(1);
                Head::Concat(Mlp::new(params, "witness.mlp", &widths, false, rng)?)
            }
        };
        Ok(Self {
            kind,
            omega,
            dim,
            head,
        })
    }

    pub fn kind(&self) -> WitnessKind {
        self.kind
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether scores depend only on the inner product of the two embeddings.
    pub fn is_dot_family(&self) -> bool {
        matches!(self.head, Head::None)
    }

    pub fn score(&self, params: &ParamSet, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.dim || b.len() != self.dim {
            return Err(Error::shape(
                "Witness::score",
                format!("embeddings of length {} and {}, witness dim {}", a.len(), b.len(), self.dim),
            ));
        }
        let raw = match &self.head {
            Head::None => dot(a, b),
            Head::Bilinear(w) => {
                let w = params.get(*w).data();
                let mut s = 0.0;
                for i in 0..self.dim {
                    s += a[i] * dot(&w[i * self.dim..(i + 1) * self.dim], b);
                }
                s
            }
            Head::Concat(mlp) => {
                let mut cat = a.to_vec();
                cat.extend_from_slice(b);
                mlp.eval(params, &Tensor::row_vector(&cat)?)?.item()?
            }
        };
        let v = raw / self.omega;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "Witness::score" })
        }
    }

    /// Scores of `queries[r]` against `keys[k]` for each `(r, k)`, recorded on `tape` as a P×1 column.
    pub fn score_pairs(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        queries: Var,
        keys: Var,
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        let inv = 1.0 / self.omega;
        match &self.head {
            Head::None => tape.pair_dot(queries, keys, pairs, inv),
            Head::Bilinear(w) => {
                let wv = tape.param(params, *w);
                let qw = tape.matmul(queries, wv)?;
                tape.pair_dot(qw, keys, pairs, inv)
            }
            Head::Concat(mlp) => {
                let cat = tape.pair_concat(queries, keys, pairs)?;
                let out = mlp.forward(tape, params, cat)?;
                tape.scale(out, inv)
            }
        }
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if omega > 0.0 && omega.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("temperature must be positive, got {omega}")))
    }
}

/// One anchor `x`, its positive `y₁`, and negatives `y₂..y_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSample {
    pub x: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

impl BatchSample {
    pub fn new(x: Vec<f64>, positive: Vec<f64>, negatives: Vec<Vec<f64>>) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::domain("K must be at least 2"));
        }
        let d = x.len();
        if positive.len() != d || negatives.iter().any(|n| n.len() != d) {
            return Err(Error::shape("BatchSample::new", "embeddings differ in dimension"));
        }
        Ok(Self { x, positive, negatives })
    }

    /// Number of candidates including the positive.
    pub fn k(&self) -> usize {
        self.negatives.len() + 1
    }

    /// Witness values `[f(x, y₁), f(x, y₂), ..]`.
    pub fn scores(&self, witness: &Witness, params: &ParamSet) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.k());
        out.push(witness.score(params, &self.x, &self.positive)?);
        for n in &self.negatives {
            out.push(witness.score(params, &self.x, n)?);
        }
        Ok(out)
    }
}

/// `f₁ − logsumexp_j f_j + ln K`, where `scores[0]` is the positive and is part of the denominator.
pub fn infonce_from_scores(scores: &[f64]) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::domain(format!("K must be at least 2, got {}", scores.len())));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "infonce" });
    }
    Ok(scores[0] - lse_unchecked(scores) + (scores.len() as f64).ln())
}

pub fn estimate_infonce(batch: &BatchSample, witness: &Witness, params: &ParamSet) -> Result<f64> {
    infonce_from_scores(&batch.scores(witness, params)?)
}

/// Same arithmetic as InfoNCE; the batch negatives are expected to come from a restricted pool.
pub fn estimate_vince(batch: &BatchSample, witness: &Witness, params: &ParamSet) -> Result<f64> {
    estimate_infonce(batch, witness, params)
}

/// `mean f(joint) − e⁻¹ · mean e^{f(marginal)}`.
pub fn nwj_from_scores(joint: &[f64], marginal: &[f64]) -> Result<f64> {
    if joint.is_empty() || marginal.is_empty() {
        return Err(Error::domain("NWJ needs at least one joint and one marginal pair"));
    }
    let mut partition = 0.0;
    for &f in marginal {
        let e = f.exp();
        if !e.is_finite() {
            return Err(Error::Overflow { op: "nwj", value: f });
        }
        partition += e;
    }
    partition /= marginal.len() as f64;
    let first = joint.iter().sum::<f64>() / joint.len() as f64;
    let v = first - partition / std::f64::consts::E;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { op: "nwj" })
    }
}

/// NWJ with a witness on embeddings. `marginal` pairs should be drawn independently
/// from the product of marginals, not reused from `joint`.
pub fn estimate_nwj(
    joint: &[(Vec<f64>, Vec<f64>)],
    marginal: &[(Vec<f64>, Vec<f64>)],
    witness: &Witness,
    params: &ParamSet,
) -> Result<f64> {
    let score = |pairs: &[(Vec<f64>, Vec<f64>)]| -> Result<Vec<f64>> {
        pairs.iter().map(|(x, y)| witness.score(params, x, y)).collect()
    };
    nwj_from_scores(&score(joint)?, &score(marginal)?)
}

/// Normalized Barber-Agakov: mean of `log q(x|y) − log p(x)` over joint samples.
pub fn estimate_ba<X, Y, Q, P>(pairs: &[(X, Y)], log_q: Q, log_p: P) -> Result<f64>
where
    Q: Fn(&X, &Y) -> f64,
    P: Fn(&X) -> f64,
{
    mean_finite("ba", pairs.iter().map(|(x, y)| log_q(x, y) - log_p(x)), pairs.len())
}

/// Unnormalized Barber-Agakov with `q(x|y) = p(x) e^{f(x,y)} / Z(y)`: mean of `f(x,y) − log Z(y)`.
pub fn estimate_uba<X, Y, F, Z>(pairs: &[(X, Y)], f: F, log_partition: Z) -> Result<f64>
where
    F: Fn(&X, &Y) -> f64,
    Z: Fn(&Y) -> f64,
{
    mean_finite("uba", pairs.iter().map(|(x, y)| f(x, y) - log_partition(y)), pairs.len())
}

fn mean_finite(op: &'static str, values: impl Iterator<Item = f64>, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain(format!("{op} needs at least one sample")));
    }
    let mut s = 0.0;
    for v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite { op });
        }
        s += v;
    }
    Ok(s / n as f64)
}

/// Mean, sample standard deviation and standard error of a set of values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                std_err: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            std_err: std / (n as f64).sqrt(),
            n,
        }
    }
}

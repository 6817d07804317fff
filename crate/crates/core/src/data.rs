//! Synthetic datasets with known structure and the view functions applied to them.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ndmath::Tensor;

/// `(X, Y) = Z + ε` with `Z ~ N(0, Σ_Z)` and `ε ~ N(0, Σ_ε)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPairFamily {
    pub sigma_z: [[f64; 2]; 2],
    pub sigma_eps: [[f64; 2]; 2],
}

impl Default for GaussianPairFamily {
    fn default() -> Self {
        Self {
            sigma_z: [[1.0, -0.5], [-0.5, 1.0]],
            sigma_eps: [[1.0, 0.9], [0.9, 1.0]],
        }
    }
}

fn cholesky2(m: &[[f64; 2]; 2], name: &str) -> Result<[[f64; 2]; 2]> {
    let sym = (m[0][1] - m[1][0]).abs() <= 1e-12 * (1.0 + m[0][1].abs());
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let finite = m.iter().flatten().all(|v| v.is_finite());
    if !sym || !finite || m[0][0] <= 0.0 || det <= 0.0 {
        return Err(Error::domain(format!("{name} = {m:?} is not symmetric positive definite")));
    }
    let l00 = m[0][0].sqrt();
    let l10 = m[1][0] / l00;
    let l11 = (m[1][1] - l10 * l10).sqrt();
    Ok([[l00, 0.0], [l10, l11]])
}

impl GaussianPairFamily {
    pub fn new(sigma_z: [[f64; 2]; 2], sigma_eps: [[f64; 2]; 2]) -> Result<Self> {
        let f = Self { sigma_z, sigma_eps };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        cholesky2(&self.sigma_z, "Σ_Z")?;
        cholesky2(&self.sigma_eps, "Σ_ε")?;
        Ok(())
    }

    /// `Σ = Σ_Z + Σ_ε`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let (a, b) = (&self.sigma_z, &self.sigma_eps);
        [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
    }

    /// Draws `n` pairs by sampling `z` and `ε` separately and summing them.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(f64, f64)>> {
        let lz = cholesky2(&self.sigma_z, "Σ_Z")?;
        let le = cholesky2(&self.sigma_eps, "Σ_ε")?;
        let mut draw = |l: &[[f64; 2]; 2]| {
            let u0: f64 = StandardNormal.sample(rng);
            let u1: f64 = StandardNormal.sample(rng);
            (l[0][0] * u0, l[1][0] * u0 + l[1][1] * u1)
        };
        Ok((0..n)
            .map(|_| {
                let z = draw(&lz);
                let e = draw(&le);
                (z.0 + e.0, z.1 + e.1)
            })
            .collect())
    }

    /// `log p(x)` of the first coordinate.
    pub fn log_marginal_x(&self, x: f64) -> f64 {
        let s = self.covariance();
        normal_log_density(x, 0.0, s[0][0])
    }

    /// `log p(x | y)`.
    pub fn log_conditional_x(&self, x: f64, y: f64) -> f64 {
        let s = self.covariance();
        let mean = s[0][1] / s[1][1] * y;
        let var = s[0][0] - s[0][1] * s[1][0] / s[1][1];
        normal_log_density(x, mean, var)
    }
}

fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
}

/// `−½ ln(1 − Σ₁₂Σ₂₁ / (Σ₁₁Σ₂₂))` in nats.
pub fn analytic_gaussian_mi(family: &GaussianPairFamily) -> Result<f64> {
    let s = family.covariance();
    cholesky2(&s, "Σ")?;
    Ok(-0.5 * (1.0 - s[0][1] * s[1][0] / (s[0][0] * s[1][1])).ln())
}

/// Points with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(points: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, _) = points.dims2()?;
        if labels.len() != n {
            return Err(Error::shape("Dataset::new", format!("{n} points, {} labels", labels.len())));
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Writes `index,label,x0,x1,..` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,label");
        for c in 0..self.dim() {
            out.push_str(&format!(",x{c}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{i},{}", self.labels[i]));
            for v in self.point(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Two interleaved Archimedean spirals of 1.5 turns each inside `[-2, 2]²`.
///
/// Angles are `t = 3π·√u` with `u ~ U(0,1)` so points are spread evenly along the
/// arc, radius is `2t/(3π)`, and the second arm is the first rotated by π.
/// Labels alternate so both arms have exactly `n/2` points.
pub fn make_spirals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::domain(format!("spiral size must be even and positive, got {n}")));
    }
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let arm = i % 2;
        let u: f64 = rng.random();
        let t = 3.0 * PI * u.sqrt();
        let r = 2.0 * t / (3.0 * PI);
        let sign = if arm == 0 { 1.0 } else { -1.0 };
        data.push(sign * r * t.cos());
        data.push(sign * r * t.sin());
        labels.push(arm);
    }
    Dataset::new(Tensor::matrix(n, 2, data)?, labels)
}

/// Isotropic Gaussian blobs with centers drawn uniformly in `[-box, box]^dim`.
pub fn make_blobs<R: Rng + ?Sized>(
    n: usize,
    centers: usize,
    dim: usize,
    spread: f64,
    half_width: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if centers == 0 || dim == 0 || n < centers {
        return Err(Error::domain("blobs need n ≥ centers ≥ 1 and dim ≥ 1"));
    }
    if spread < 0.0 || half_width <= 0.0 {
        return Err(Error::domain("blob spread must be non-negative and the box positive"));
    }
    let mids: Vec<Vec<f64>> = (0..centers)
        .map(|_| (0..dim).map(|_| rng.random_range(-half_width..half_width)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % centers;
        for m in &mids[c] {
            let z: f64 = StandardNormal.sample(rng);
            data.push(m + spread * z);
        }
        labels.push(c);
    }
    Dataset::new(Tensor::matrix(n, dim, data)?, labels)
}

/// Stochastic transformation `ν(x, a)` of a datum.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewFunction {
    Identity,
    /// Adds `U(0, η)` independently to every coordinate.
    AdditiveUniform { eta: f64 },
    /// Keeps only the listed coordinates, in order.
    Channel { selector: Vec<usize> },
    /// Random permutation of the coordinates.
    PermuteCoordinates,
}

impl ViewFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            ViewFunction::AdditiveUniform { eta } if !(*eta >= 0.0 && eta.is_finite()) => {
                Err(Error::domain(format!("view noise must be non-negative, got {eta}")))
            }
            ViewFunction::Channel { selector } if selector.is_empty() => {
                Err(Error::domain("channel view selects no coordinates"))
            }
            _ => Ok(()),
        }
    }

    /// Dimension of a view of a `dim`-dimensional datum.
    pub fn output_dim(&self, dim: usize) -> usize {
        match self {
            ViewFunction::Channel { selector } => selector.len(),
            _ => dim,
        }
    }

    /// Whether repeated views of one datum are always identical.
    pub fn is_deterministic(&self) -> bool {
        match self {
            ViewFunction::Identity | ViewFunction::Channel { .. } => true,
            ViewFunction::AdditiveUniform { eta } => *eta == 0.0,
            ViewFunction::PermuteCoordinates => false,
        }
    }
}

impl fmt::Display for ViewFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewFunction::Identity => f.write_str("identity"),
            ViewFunction::AdditiveUniform { eta } => write!(f, "uniform-noise:{eta}"),
            ViewFunction::Channel { selector } => {
                let s: Vec<String> = selector.iter().map(usize::to_string).collect();
                write!(f, "channel:{}", s.join("/"))
            }
            ViewFunction::PermuteCoordinates => f.write_str("permute"),
        }
    }
}

impl FromStr for ViewFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown view function `{s}`"));
        let v = match s.split_once(':') {
            None if s == "identity" => ViewFunction::Identity,
            None if s == "permute" => ViewFunction::PermuteCoordinates,
            Some(("uniform-noise", eta)) => ViewFunction::AdditiveUniform {
                eta: eta.trim().parse().map_err(|_| bad())?,
            },
            Some(("channel", sel)) => ViewFunction::Channel {
                selector: sel
                    .split('/')
                    .map(|c| c.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        v.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(v)
    }
}

/// Applies `view` to `point`, drawing any randomness from `rng`. The input is never modified.
pub fn apply_view<R: Rng + ?Sized>(view: &ViewFunction, point: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    view.validate()?;
    Ok(match view {
        ViewFunction::Identity => point.to_vec(),
        ViewFunction::AdditiveUniform { eta } => {
            if *eta == 0.0 {
                point.to_vec()
            } else {
                point.iter().map(|c| c + rng.random_range(0.0..*eta)).collect()
            }
        }
        ViewFunction::Channel { selector } => {
            let mut out = Vec::with_capacity(selector.len());
            for &c in selector {
                out.push(*point.get(c).ok_or(Error::IndexOutOfRange { index: c, len: point.len() })?);
            }
            out
        }
        ViewFunction::PermuteCoordinates => {
            let mut out = point.to_vec();
            out.shuffle(rng);
            out
        }
    })
}

/// `ν(x, a)` for an explicit view index `a`: the index seeds the view's randomness.
pub fn apply_view_indexed(view: &ViewFunction, point: &[f64], index: u64) -> Result<Vec<f64>> {
    apply_view(view, point, &mut ChaCha8Rng::seed_from_u64(index))
}

/// Views of the listed rows, stacked into a matrix.
pub fn view_rows<R: Rng + ?Sized>(
    view: &ViewFunction,
    points: &Tensor,
    rows: &[usize],
    rng: &mut R,
) -> Result<Tensor> {
    let out_dim = view.output_dim(points.cols());
    let mut data = Vec::with_capacity(rows.len() * out_dim);
    for &r in rows {
        if r >= points.rows() {
            return Err(Error::IndexOutOfRange { index: r, len: points.rows() });
        }
        data.extend(apply_view(view, points.row(r), rng)?);
    }
    Tensor::matrix(rows.len(), out_dim, data)
}

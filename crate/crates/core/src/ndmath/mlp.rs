use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Fully connected network: ReLU between layers, linear last layer,
/// optionally followed by per-row L2 normalization.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
    normalize: bool,
}

impl Mlp {
    /// Registers weights for `widths = [input, hidden.., output]` in `params`,
    /// drawn uniformly from ±1/√fan_in.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        widths: &[usize],
        normalize: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::domain(format!("invalid layer widths {widths:?}")));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            let w = params.add(format!("{name}.{l}.weight"), Tensor::matrix(fan_in, fan_out, w)?);
            let b = params.add(format!("{name}.{l}.bias"), Tensor::matrix(1, fan_out, b)?);
            layers.push((w, b));
        }
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            normalize,
        })
    }

    /// Wraps existing parameters. Weights are `fan_in × fan_out`, biases `1 × fan_out`.
    pub fn from_params(params: &ParamSet, layers: Vec<(ParamId, ParamId)>, normalize: bool) -> Result<Self> {
        let mut widths = Vec::new();
        for (i, &(w, b)) in layers.iter().enumerate() {
            let (fi, fo) = params.get(w).dims2()?;
            if params.get(b).len() != fo {
                return Err(Error::shape("Mlp::from_params", format!("bias of layer {i}")));
            }
            if i == 0 {
                widths.push(fi);
            } else if widths[i] != fi {
                return Err(Error::shape("Mlp::from_params", format!("layer {i} fan-in {fi}")));
            }
            widths.push(fo);
        }
        if layers.is_empty() {
            return Err(Error::domain("an MLP needs at least one layer"));
        }
        Ok(Self {
            widths,
            layers,
            normalize,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (_, d) = input.dims2()?;
        if d != self.input_dim() {
            return Err(Error::shape(
                "Mlp::forward",
                format!("input has {d} columns, network expects {}", self.input_dim()),
            ));
        }
        Ok(())
    }

    /// Records the forward pass of an n×input batch on `tape`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, input: Var) -> Result<Var> {
        self.check_input(tape.value(input))?;
        let mut h = input;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (tape.param(params, w), tape.param(params, b));
            h = tape.matmul(h, wv)?;
            h = tape.add_row(h, bv)?;
            if l + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        if self.normalize {
            h = tape.l2_normalize_rows(h)?;
        }
        Ok(h)
    }

    /// Forward pass without recording anything.
    pub fn eval(&self, params: &ParamSet, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (n, _) = input.dims2()?;
        let mut h = input.data().to_vec();
        let mut d = self.input_dim();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wt = params.get(w);
            let (_, out) = wt.dims2()?;
            let (mut next, _, _) = gemm(&h, (n, d), false, wt.data(), (d, out), false);
            let bias = params.get(b).data();
            let last = l + 1 == self.layers.len();
            for row in next.chunks_mut(out) {
                for (v, bb) in row.iter_mut().zip(bias) {
                    *v += bb;
                    if !last {
                        *v = v.max(0.0);
                    }
                }
            }
            h = next;
            d = out;
        }
        if self.normalize {
            for row in h.chunks_mut(d) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-300 {
                    return Err(Error::domain("cannot normalize a zero embedding"));
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Tensor::new(vec![n, d], h)
    }
}

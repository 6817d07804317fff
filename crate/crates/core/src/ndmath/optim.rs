use super::params::ParamSet;
use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            weight_decay,
            ..Self::adam(learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer state: one first-moment (and for Adam, second-moment) buffer per parameter.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let zeros = |p: &ParamSet| -> Vec<Tensor> { p.ids().map(|id| Tensor::zeros(p.get(id).shape())).collect() };
        let second = if config.kind == OptimizerKind::Adam { zeros(params) } else { Vec::new() };
        Ok(Self {
            first: zeros(params),
            second,
            config,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        self.step_with(params, grads.params())
    }

    pub fn step_with(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(Error::shape(
                "Optimizer::step",
                format!("state for {} parameters, got {}", self.first.len(), params.len()),
            ));
        }
        self.steps += 1;
        let c = &self.config;
        let t = self.steps as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id);
            let g = grads.get(i).and_then(Option::as_ref);
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::shape(
                        "Optimizer::step",
                        format!("gradient {:?} for parameter {:?}", g.shape(), p.shape()),
                    ));
                }
            }
            let m = self.first[i].data_mut();
            let pd = p.data_mut();
            match c.kind {
                OptimizerKind::SgdMomentum => {
                    for k in 0..pd.len() {
                        let gk = g.map_or(0.0, |g| g.data()[k]) + c.weight_decay * pd[k];
                        m[k] = c.momentum * m[k] + gk;
                        pd[k] -= c.learning_rate * m[k];
                    }
                }
                OptimizerKind::Adam => {
                    let v = self.second[i].data_mut();
                    for k in 0..pd.len() {
                        let gk = g.map_or(0.0, |g| g.data()[k]) + c.weight_decay * pd[k];
                        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        pd[k] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
                    }
                }
            }
            if pd.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { op: "Optimizer::step" });
            }
        }
        Ok(())
    }
}

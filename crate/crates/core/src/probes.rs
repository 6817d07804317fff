//! Frozen-representation probes: nearest-neighbor label match and logistic regression.

use crate::error::{Error, Result};
use crate::ndmath::{OptimizerConfig, OptimizerKind, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    Knn,
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeResult {
    pub kind: ProbeKind,
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_total: usize,
}

impl ProbeResult {
    fn new(kind: ProbeKind, n_correct: usize, n_total: usize) -> Self {
        let accuracy = if n_total == 0 { 0.0 } else { n_correct as f64 / n_total as f64 };
        Self {
            kind,
            accuracy,
            n_correct,
            n_total,
        }
    }
}

fn check_labeled(points: &Tensor, labels: &[usize], what: &str) -> Result<(usize, usize)> {
    let (n, d) = points.dims2()?;
    if labels.len() != n {
        return Err(Error::shape("probe", format!("{what}: {n} embeddings, {} labels", labels.len())));
    }
    Ok((n, d))
}

/// k-nearest-neighbor vote under L2 distance. Distance ties go to the lower
/// training index; vote ties go to the label of the closest neighbor among the tied labels.
pub fn knn_probe_k(
    train: &Tensor,
    train_labels: &[usize],
    test: &Tensor,
    test_labels: &[usize],
    k: usize,
) -> Result<ProbeResult> {
    let (n, d) = check_labeled(train, train_labels, "train")?;
    let (m, dt) = check_labeled(test, test_labels, "test")?;
    if n == 0 {
        return Err(Error::domain("kNN probe needs a non-empty training set"));
    }
    if d != dt {
        return Err(Error::shape("knn_probe", format!("train dim {d}, test dim {dt}")));
    }
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    let k = k.min(n);
    let classes = train_labels.iter().max().map_or(0, |c| c + 1);
    let mut correct = 0;
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for t in 0..m {
        let q = test.row(t);
        best.clear();
        for i in 0..n {
            let dist: f64 = train.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.len() == k && dist >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= dist);
            best.insert(pos, (dist, i));
            best.truncate(k);
        }
        let mut votes = vec![0usize; classes];
        for &(_, i) in &best {
            votes[train_labels[i]] += 1;
        }
        let top = *votes.iter().max().unwrap_or(&0);
        let predicted = best
            .iter()
            .map(|&(_, i)| train_labels[i])
            .find(|&c| votes[c] == top)
            .expect("at least one neighbor");
        if predicted == test_labels[t] {
            correct += 1;
        }
    }
    Ok(ProbeResult::new(ProbeKind::Knn, correct, m))
}

/// 1-nearest-neighbor label match.
pub fn knn_probe(train: &Tensor, train_labels: &[usize], test: &Tensor, test_labels: &[usize]) -> Result<ProbeResult> {
    knn_probe_k(train, train_labels, test, test_labels, 1)
}

/// Settings for the logistic-regression probe.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticConfig {
    pub optimizer: OptimizerConfig,
    pub max_epochs: usize,
    /// Stop when the full-batch loss changes by less than this.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(0.05),
            max_epochs: 2000,
            tolerance: 1e-7,
        }
    }
}

/// Multinomial logistic regression on standardized features, trained full-batch.
/// Standardization statistics come from the training embeddings only.
pub fn logistic_probe(
    train: &Tensor,
    train_labels: &[usize],
    heldout: &Tensor,
    heldout_labels: &[usize],
    config: &LogisticConfig,
) -> Result<ProbeResult> {
    let (n, d) = check_labeled(train, train_labels, "train")?;
    let (m, dh) = check_labeled(heldout, heldout_labels, "heldout")?;
    if d != dh {
        return Err(Error::shape("logistic_probe", format!("train dim {d}, heldout dim {dh}")));
    }
    let classes = train_labels.iter().max().map_or(0, |c| c + 1);
    let distinct = {
        let mut seen = vec![false; classes];
        train_labels.iter().for_each(|&c| seen[c] = true);
        seen.iter().filter(|s| **s).count()
    };
    if n == 0 || distinct < 2 {
        return Err(Error::domain("logistic probe needs at least two classes in the training set"));
    }
    config.optimizer.validate()?;

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m_, v) in mean.iter_mut().zip(train.row(i)) {
            *m_ += v / n as f64;
        }
    }
    let mut scale = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            scale[c] += (train.row(i)[c] - mean[c]).powi(2) / n as f64;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 1.0 };
    }
    let standardize = |x: &Tensor, rows: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * d);
        for i in 0..rows {
            for c in 0..d {
                out.push((x.row(i)[c] - mean[c]) * scale[c]);
            }
        }
        out
    };
    let xs = standardize(train, n);
    let xh = standardize(heldout, m);

    // Parameters: weights d×C then biases C.
    let width = d * classes + classes;
    let mut theta = vec![0.0; width];
    let mut grad = vec![0.0; width];
    let opt = &config.optimizer;
    let mut m1 = vec![0.0; width];
    let mut m2 = vec![0.0; width];
    let mut logits = vec![0.0; classes];
    let mut previous = f64::INFINITY;
    for epoch in 1..=config.max_epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let x = &xs[i * d..(i + 1) * d];
            for (c, l) in logits.iter_mut().enumerate() {
                *l = theta[d * classes + c] + (0..d).map(|j| x[j] * theta[j * classes + c]).sum::<f64>();
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            loss += max + z.ln() - logits[train_labels[i]];
            for c in 0..classes {
                let p = (logits[c] - max).exp() / z;
                let r = (p - if c == train_labels[i] { 1.0 } else { 0.0 }) / n as f64;
                grad[d * classes + c] += r;
                for j in 0..d {
                    grad[j * classes + c] += r * x[j];
                }
            }
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "logistic_probe" });
        }
        if (previous - loss).abs() < config.tolerance {
            break;
        }
        previous = loss;
        let t = epoch as i32;
        for k in 0..width {
            let g = grad[k] + opt.weight_decay * theta[k];
            match opt.kind {
                OptimizerKind::SgdMomentum => {
                    m1[k] = opt.momentum * m1[k] + g;
                    theta[k] -= opt.learning_rate * m1[k];
                }
                OptimizerKind::Adam => {
                    m1[k] = opt.beta1 * m1[k] + (1.0 - opt.beta1) * g;
                    m2[k] = opt.beta2 * m2[k] + (1.0 - opt.beta2) * g * g;
                    let mh = m1[k] / (1.0 - opt.beta1.powi(t));
                    let vh = m2[k] / (1.0 - opt.beta2.powi(t));
                    theta[k] -= opt.learning_rate * mh / (vh.sqrt() + opt.epsilon);
                }
            }
        }
    }

    let mut correct = 0;
    for i in 0..m {
        let x = &xh[i * d..(i + 1) * d];
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..classes {
            let l = theta[d * classes + c] + (0..d).map(|j| x[j] * theta[j * classes + c]).sum::<f64>();
            if l > best.0 {
                best = (l, c);
            }
        }
        if best.1 == heldout_labels[i] {
            correct += 1;
        }
    }
    Ok(ProbeResult::new(ProbeKind::Logistic, correct, m))
}

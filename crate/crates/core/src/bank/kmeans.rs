use rand::Rng;

use crate::error::{Error, Result};
use crate::ndmath::Tensor;

const MAX_ITERATIONS: usize = 100;

/// Result of the best K-means restart.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Tensor,
    pub inertia: f64,
    /// Within-cluster sum of squares after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

impl KMeans {
    /// Members of cluster `c`, in ascending index order.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == c).collect()
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &Tensor, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq(points.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every remaining point coincides with a center.
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = points.row(pick).to_vec();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq(points.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &Tensor, mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let (n, d) = (points.rows(), points.cols());
    let k = centers.len();
    let mut assign = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let p = points.row(i);
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let dd = sq(p, center);
                if dd < best_d {
                    best = c;
                    best_d = dd;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
            inertia += best_d;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    (assign, centers, history)
}

/// Lloyd's algorithm with k-means++ seeding; keeps the restart with the lowest inertia.
pub fn kmeans<R: Rng + ?Sized>(points: &Tensor, k: usize, restarts: usize, rng: &mut R) -> Result<KMeans> {
    let (n, d) = points.dims2()?;
    if k == 0 || k > n {
        return Err(Error::domain(format!("k = {k} must lie in 1..={n}")));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let (assignments, centers, history) = lloyd(points, seed_plus_plus(points, k, rng));
        let inertia = *history.last().expect("at least one iteration");
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            let flat: Vec<f64> = centers.into_iter().flatten().collect();
            best = Some(KMeans {
                assignments,
                centroids: Tensor::matrix(k, d, flat)?,
                inertia,
                history,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

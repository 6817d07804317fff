use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::ndmath::Tensor;

/// Squared L2 distance from `query` to every row of `entries`.
pub fn squared_distances(entries: &Tensor, query: &[f64]) -> Result<Vec<f64>> {
    let (n, d) = entries.dims2()?;
    if query.len() != d {
        return Err(Error::shape(
            "squared_distances",
            format!("query of length {}, entries of dim {d}", query.len()),
        ));
    }
    Ok((0..n)
        .map(|i| entries.row(i).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect())
}

pub(crate) fn by_distance(dist: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b))
}

/// Indices of `entries` sorted by ascending L2 distance to `query`, ties by ascending index.
pub fn rank_by_similarity(entries: &Tensor, query: &[f64]) -> Result<Vec<usize>> {
    let dist = squared_distances(entries, query)?;
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_unstable_by(by_distance(&dist));
    Ok(order)
}

/// Number of ranks covered by the closest `percent`% of `n` items: `⌈p·n/100⌉`.
pub fn rank_count(percent: f64, n: usize) -> usize {
    if percent <= 0.0 {
        return 0;
    }
    let raw = percent * n as f64 / 100.0;
    // Guard against 1e-14 noise pushing an exact product to the next integer.
    let c = (raw - 1e-9 * raw.max(1.0)).ceil();
    (c.max(0.0) as usize).min(n)
}

/// Indices occupying ranks `(lo, hi]` (1-based), in ascending index order.
pub(crate) fn rank_band(dist: &[f64], lo: usize, hi: usize) -> Vec<usize> {
    let n = dist.len();
    let hi = hi.min(n);
    if lo >= hi {
        return Vec::new();
    }
    let cmp = by_distance(dist);
    let mut idx: Vec<usize> = (0..n).collect();
    if hi < n {
        idx.select_nth_unstable_by(hi - 1, &cmp);
        idx.truncate(hi);
    }
    if lo > 0 {
        idx.select_nth_unstable_by(lo - 1, &cmp);
        idx.drain(..lo);
    }
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_on_a_line() {
        let e = Tensor::from_rows(&[[0.0], [3.0], [1.0]]).unwrap();
        assert_eq!(rank_by_similarity(&e, &[1.4]).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn ties_break_by_index() {
        let e = Tensor::from_rows(&[[1.0], [-1.0], [1.0]]).unwrap();
        assert_eq!(rank_by_similarity(&e, &[0.0]).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn rank_count_examples() {
        assert_eq!(rank_count(10.0, 100), 10);
        assert_eq!(rank_count(1.0, 1000), 10);
        assert_eq!(rank_count(100.0, 7), 7);
        assert_eq!(rank_count(5.0, 10), 1);
        assert_eq!(rank_count(90.0, 2000), 1800);
        assert_eq!(rank_count(0.0, 10), 0);
    }

    #[test]
    fn band_matches_sorted_ranks() {
        let dist = vec![5.0, 1.0, 3.0, 1.0, 0.5, 9.0];
        let order = [4, 1, 3, 2, 0, 5];
        let mut expect = order[1..4].to_vec();
        expect.sort();
        assert_eq!(rank_band(&dist, 1, 4), expect);
        assert_eq!(rank_band(&dist, 0, 6), vec![0, 1, 2, 3, 4, 5]);
        assert!(rank_band(&dist, 3, 3).is_empty());
    }
}

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::search::{rank_band, rank_count, squared_distances};
use crate::error::{Error, Result};
use crate::ndmath::Tensor;

/// Linear interpolation from `start_percent` at `start` to `end_percent` at `end`, clamped outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub start_percent: f64,
    pub end_percent: f64,
    pub start: f64,
    pub end: f64,
}

impl AnnealSchedule {
    pub fn new(start_percent: f64, end_percent: f64, start: f64, end: f64) -> Result<Self> {
        let s = Self {
            start_percent,
            end_percent,
            start,
            end,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.start_percent, self.end_percent, self.start, self.end]
            .iter()
            .all(|v| v.is_finite())
            && self.end >= self.start
            && (0.0..=100.0).contains(&self.start_percent)
            && (0.0..=100.0).contains(&self.end_percent);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid anneal schedule {self:?}")))
        }
    }

    /// Percent at epoch (or step) `t`.
    pub fn value(&self, t: f64) -> f64 {
        if t <= self.start {
            self.start_percent
        } else if t >= self.end {
            self.end_percent
        } else {
            let frac = (t - self.start) / (self.end - self.start);
            self.start_percent + frac * (self.end_percent - self.start_percent)
        }
    }
}

impl fmt::Display for AnnealSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}@{}..{}", self.start_percent, self.end_percent, self.start, self.end)
    }
}

impl FromStr for AnnealSchedule {
    type Err = Error;

    /// Parses `100->10@0..50`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("anneal schedule `{s}` is not of the form `100->10@0..50`"));
        let (percents, range) = s.split_once('@').ok_or_else(bad)?;
        let (a, b) = percents.split_once("->").ok_or_else(bad)?;
        let (c, d) = range.split_once("..").ok_or_else(bad)?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        AnnealSchedule::new(num(a)?, num(b)?, num(c)?, num(d)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeKind {
    Marginal,
    Ball,
    Ring,
    Cave,
}

impl fmt::Display for NegativeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeKind::Marginal => "marginal",
            NegativeKind::Ball => "ball",
            NegativeKind::Ring => "ring",
            NegativeKind::Cave => "cave",
        })
    }
}

impl FromStr for NegativeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "marginal" => NegativeKind::Marginal,
            "ball" => NegativeKind::Ball,
            "ring" => NegativeKind::Ring,
            "cave" => NegativeKind::Cave,
            _ => return Err(Error::Config(format!("unknown negative kind `{s}`"))),
        })
    }
}

/// Where negatives come from, as rank percentiles of the bank around the current view.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSpec {
    pub kind: NegativeKind,
    pub outer_percent: f64,
    /// Inner radius of a ring; ranks up to this percentile are excluded.
    pub inner_percent: f64,
    pub kmeans_k: usize,
    pub kmeans_restarts: usize,
    pub anneal: Option<AnnealSchedule>,
    pub inner_anneal: Option<AnnealSchedule>,
}

impl Default for NegativeSpec {
    fn default() -> Self {
        Self::marginal()
    }
}

impl NegativeSpec {
    pub fn marginal() -> Self {
        Self {
            kind: NegativeKind::Marginal,
            outer_percent: 100.0,
            inner_percent: 0.0,
            kmeans_k: 10,
            kmeans_restarts: 10,
            anneal: None,
            inner_anneal: None,
        }
    }

    pub fn ball(outer_percent: f64) -> Self {
        Self {
            kind: NegativeKind::Ball,
            outer_percent,
            ..Self::marginal()
        }
    }

    pub fn ring(inner_percent: f64, outer_percent: f64) -> Self {
        Self {
            kind: NegativeKind::Ring,
            outer_percent,
            inner_percent,
            ..Self::marginal()
        }
    }

    pub fn cave(outer_percent: f64, kmeans_k: usize) -> Self {
        Self {
            kind: NegativeKind::Cave,
            outer_percent,
            kmeans_k,
            ..Self::marginal()
        }
    }

    pub fn needs_clusters(&self) -> bool {
        self.kind == NegativeKind::Cave
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.outer_percent > 0.0 && self.outer_percent <= 100.0) {
            return bad(format!("outer percent must lie in (0, 100], got {}", self.outer_percent));
        }
        if self.kind == NegativeKind::Ring && !(self.inner_percent > 0.0 && self.inner_percent < self.outer_percent) {
            return bad(format!(
                "ring needs 0 < inner percent < outer percent, got {} and {}",
                self.inner_percent, self.outer_percent
            ));
        }
        if self.kind == NegativeKind::Cave && self.kmeans_k == 0 {
            return bad("cave needs kmeans_k ≥ 1".into());
        }
        for s in self.anneal.iter().chain(&self.inner_anneal) {
            s.validate()?;
        }
        Ok(())
    }

    /// This sampler with annealed percentiles resolved at time `t`.
    pub fn at(&self, t: f64) -> Self {
        let mut out = self.clone();
        if let Some(a) = &self.anneal {
            out.outer_percent = a.value(t);
        }
        if let Some(a) = &self.inner_anneal {
            out.inner_percent = a.value(t);
        }
        out.anneal = None;
        out.inner_anneal = None;
        out
    }
}

impl fmt::Display for NegativeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NegativeKind::Marginal => write!(f, "marginal"),
            NegativeKind::Ball => write!(f, "ball({}%)", self.outer_percent),
            NegativeKind::Ring => write!(f, "ring({}%, {}%]", self.inner_percent, self.outer_percent),
            NegativeKind::Cave => write!(f, "cave({}% minus cluster of k={})", self.outer_percent, self.kmeans_k),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborKind {
    None,
    SNeigh,
    KNeigh,
}

impl fmt::Display for NeighborKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeighborKind::None => "none",
            NeighborKind::SNeigh => "s-neigh",
            NeighborKind::KNeigh => "k-neigh",
        })
    }
}

impl FromStr for NeighborKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => NeighborKind::None,
            "s-neigh" => NeighborKind::SNeigh,
            "k-neigh" => NeighborKind::KNeigh,
            _ => return Err(Error::Config(format!("unknown neighbor kind `{s}`"))),
        })
    }
}

/// Close-neighbor set C: items treated as extra views of the anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSpec {
    pub kind: NeighborKind,
    pub close_percent: f64,
    pub kmeans_k: usize,
    pub kmeans_restarts: usize,
    /// L: size of the sampled close set, anchor included.
    pub count: usize,
    pub anneal: Option<AnnealSchedule>,
}

impl Default for NeighborSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NeighborSpec {
    pub fn none() -> Self {
        Self {
            kind: NeighborKind::None,
            close_percent: 0.0,
            kmeans_k: 10,
            kmeans_restarts: 10,
            count: 1,
            anneal: None,
        }
    }

    pub fn s_neigh(close_percent: f64, count: usize) -> Self {
        Self {
            kind: NeighborKind::SNeigh,
            close_percent,
            count,
            ..Self::none()
        }
    }

    pub fn k_neigh(kmeans_k: usize, count: usize) -> Self {
        Self {
            kind: NeighborKind::KNeigh,
            kmeans_k,
            count,
            ..Self::none()
        }
    }

    pub fn needs_clusters(&self) -> bool {
        self.kind == NeighborKind::KNeigh
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.close_percent) {
            return Err(Error::Config(format!("close percent {} outside [0, 100]", self.close_percent)));
        }
        if self.count == 0 {
            return Err(Error::Config("neighbor count L must be at least 1".into()));
        }
        if self.kind == NeighborKind::KNeigh && self.kmeans_k == 0 {
            return Err(Error::Config("k-neigh needs kmeans_k ≥ 1".into()));
        }
        if let Some(a) = &self.anneal {
            a.validate()?;
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Self {
        let mut out = self.clone();
        if let Some(a) = &self.anneal {
            out.close_percent = a.value(t);
        }
        out.anneal = None;
        out
    }
}

fn require_clusters<'a>(clusters: Option<&'a [usize]>, n: usize, what: &str) -> Result<&'a [usize]> {
    match clusters {
        Some(c) if c.len() == n => Ok(c),
        Some(c) => Err(Error::shape("clusters", format!("{} assignments for {n} entries", c.len()))),
        None => Err(Error::State(format!("{what} requires cluster assignments"))),
    }
}

/// Candidate negatives for `anchor`, in ascending index order. The anchor is never included.
pub fn candidate_pool(
    spec: &NegativeSpec,
    entries: &Tensor,
    query: &[f64],
    anchor: usize,
    clusters: Option<&[usize]>,
) -> Result<Vec<usize>> {
    let n = entries.rows();
    if anchor >= n {
        return Err(Error::IndexOutOfRange { index: anchor, len: n });
    }
    let hi = rank_count(spec.outer_percent, n);
    let mut pool = match spec.kind {
        NegativeKind::Marginal => (0..n).collect(),
        NegativeKind::Ball | NegativeKind::Cave if hi == n => (0..n).collect(),
        NegativeKind::Ball | NegativeKind::Cave => rank_band(&squared_distances(entries, query)?, 0, hi),
        NegativeKind::Ring => {
            let lo = rank_count(spec.inner_percent, n);
            rank_band(&squared_distances(entries, query)?, lo, hi)
        }
    };
    pool.retain(|&j| j != anchor);
    if spec.kind == NegativeKind::Cave {
        let c = require_clusters(clusters, n, "cave")?;
        pool.retain(|&j| c[j] != c[anchor]);
    }
    if pool.is_empty() {
        return Err(Error::DegeneratePool { spec: spec.to_string() });
    }
    Ok(pool)
}

/// `count` negatives drawn i.i.d. uniformly (with replacement) from the pool of `spec`.
pub fn sample_negatives<R: Rng + ?Sized>(
    spec: &NegativeSpec,
    entries: &Tensor,
    query: &[f64],
    anchor: usize,
    count: usize,
    clusters: Option<&[usize]>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let pool = candidate_pool(spec, entries, query, anchor, clusters)?;
    Ok((0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

/// Members of C other than the anchor, in ascending index order.
pub fn close_set(
    spec: &NeighborSpec,
    entries: &Tensor,
    query: &[f64],
    anchor: usize,
    clusters: Option<&[usize]>,
) -> Result<Vec<usize>> {
    let n = entries.rows();
    if anchor >= n {
        return Err(Error::IndexOutOfRange { index: anchor, len: n });
    }
    let mut set = match spec.kind {
        NeighborKind::None => Vec::new(),
        NeighborKind::SNeigh => {
            let hi = rank_count(spec.close_percent, n);
            rank_band(&squared_distances(entries, query)?, 0, hi)
        }
        NeighborKind::KNeigh => {
            let c = require_clusters(clusters, n, "k-neigh")?;
            (0..n).filter(|&j| c[j] == c[anchor]).collect()
        }
    };
    set.retain(|&j| j != anchor);
    Ok(set)
}

/// The anchor followed by `draws` i.i.d. uniform picks from C∖{anchor}; just the anchor when that is empty.
pub fn sample_close_neighbors<R: Rng + ?Sized>(
    spec: &NeighborSpec,
    entries: &Tensor,
    query: &[f64],
    anchor: usize,
    draws: usize,
    clusters: Option<&[usize]>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let set = close_set(spec, entries, query, anchor, clusters)?;
    let mut out = vec![anchor];
    if !set.is_empty() {
        out.extend((0..draws).map(|_| set[rng.random_range(0..set.len())]));
    }
    Ok(out)
}

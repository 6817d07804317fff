//! Contrastive losses: IR, IR^nce, LA, LA^nce, BALL/RING/CAVE (t-disc), CMC and SimCLR.
//!
//! Every loss is recorded on a [`Tape`] over a batch of anchors, so values and
//! gradients come from the same computation. Anchor `r` is described by two
//! index lists into the key matrix: its denominator set (positive first, then
//! negatives) and its numerator set (positive first, then close neighbors).

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::bank::{sample_close_neighbors, sample_negatives, NegativeSpec, NeighborKind, NeighborSpec};
use crate::error::{Error, Result};
use crate::estimators::Witness;
use crate::ndmath::{lse_unchecked, ParamSet, Segments, Tape, Tensor, Var};

/// `2876934.2 / 1281167`, the sampled-softmax rescaling constant.
pub const DEFAULT_KAPPA: f64 = 2876934.2 / 1281167.0;

pub const DEFAULT_OMEGA: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveFamily {
    IrSoftmax,
    IrNce,
    LaOriginal,
    LaNce,
    TDisc,
}

impl ObjectiveFamily {
    pub fn is_legacy(self) -> bool {
        matches!(self, ObjectiveFamily::IrSoftmax | ObjectiveFamily::LaOriginal)
    }
}

impl fmt::Display for ObjectiveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveFamily::IrSoftmax => "ir-softmax",
            ObjectiveFamily::IrNce => "ir-nce",
            ObjectiveFamily::LaOriginal => "la-original",
            ObjectiveFamily::LaNce => "la-nce",
            ObjectiveFamily::TDisc => "t-disc",
        })
    }
}

impl FromStr for ObjectiveFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ir-softmax" => ObjectiveFamily::IrSoftmax,
            "ir-nce" => ObjectiveFamily::IrNce,
            "la-original" => ObjectiveFamily::LaOriginal,
            "la-nce" => ObjectiveFamily::LaNce,
            "t-disc" => ObjectiveFamily::TDisc,
            _ => return Err(Error::Config(format!("unknown objective family `{s}`"))),
        })
    }
}

/// Coordinate bipartition used by the two-channel objective.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSplit {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl ChannelSplit {
    pub fn new(first: Vec<usize>, second: Vec<usize>) -> Self {
        Self { first, second }
    }

    /// Checks that the two groups are non-empty and partition `0..dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.first.is_empty() || self.second.is_empty() {
            return Err(Error::domain("channel split has an empty group"));
        }
        let mut seen = vec![false; dim];
        for &c in self.first.iter().chain(&self.second) {
            if c >= dim || seen[c] {
                return Err(Error::domain(format!("channel split {self} does not partition {dim} coordinates")));
            }
            seen[c] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::domain(format!("channel split {self} does not cover {dim} coordinates")));
        }
        Ok(())
    }
}

impl fmt::Display for ChannelSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let j = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join("/");
        write!(f, "{}|{}", j(&self.first), j(&self.second))
    }
}

impl FromStr for ChannelSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("channel split `{s}` is not of the form `0/1|2`"));
        let (a, b) = s.split_once('|').ok_or_else(bad)?;
        let parse = |p: &str| -> Result<Vec<usize>> {
            p.split('/').map(|c| c.trim().parse().map_err(|_| bad())).collect()
        };
        Ok(Self::new(parse(a)?, parse(b)?))
    }
}

/// Which loss to optimize and how its candidate sets are drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub family: ObjectiveFamily,
    pub negatives: NegativeSpec,
    pub neighbors: NeighborSpec,
    pub omega: f64,
    pub kappa: f64,
    /// Must be set to use the sampled-softmax families.
    pub legacy: bool,
    pub use_memory_bank: bool,
    pub channel_split: Option<ChannelSplit>,
    /// Whether the anchor must belong to its own close set in the LA families.
    pub enforce_anchor_in_close: bool,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            family: ObjectiveFamily::IrNce,
            negatives: NegativeSpec::marginal(),
            neighbors: NeighborSpec::none(),
            omega: DEFAULT_OMEGA,
            kappa: DEFAULT_KAPPA,
            legacy: false,
            use_memory_bank: true,
            channel_split: None,
            enforce_anchor_in_close: true,
        }
    }
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.omega)));
        }
        if self.family.is_legacy() {
            if !self.legacy {
                return Err(Error::Config(format!(
                    "objective `{}` is a legacy sampled-softmax form; set objective.legacy = true",
                    self.family
                )));
            }
            if !(self.kappa > 0.0 && self.kappa.is_finite()) {
                return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
            }
        }
        if self.family == ObjectiveFamily::IrNce
            && (self.negatives.kind != crate::bank::NegativeKind::Marginal || self.neighbors.kind != NeighborKind::None)
        {
            return Err(Error::Config("ir-nce uses marginal negatives and no neighbors; use t-disc".into()));
        }
        if !self.use_memory_bank && self.channel_split.is_some() {
            return Err(Error::Config("the two-channel objective needs memory banks".into()));
        }
        self.negatives.validate()?;
        self.neighbors.validate()
    }

    /// Per-anchor losses (B×1) for the given candidate sets.
    pub fn per_anchor_loss(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        witness: &Witness,
        queries: Var,
        keys: Var,
        den: &[Vec<usize>],
        num: &[Vec<usize>],
    ) -> Result<Var> {
        match self.family {
            ObjectiveFamily::IrNce | ObjectiveFamily::TDisc => nce_loss(tape, params, witness, queries, keys, den, num),
            ObjectiveFamily::LaNce => la_nce_loss(tape, params, witness, queries, keys, den, num),
            ObjectiveFamily::IrSoftmax => {
                let anchors: Vec<Vec<usize>> = den.iter().map(|d| vec![d[0]]).collect();
                ir_softmax_loss(tape, params, witness, queries, keys, den, &anchors, self.kappa)
            }
            ObjectiveFamily::LaOriginal => la_original_loss(
                tape,
                params,
                witness,
                queries,
                keys,
                den,
                num,
                self.kappa,
                self.enforce_anchor_in_close,
            ),
        }
    }

    /// Mutual-information estimate implied by a loss value with `k` candidates.
    pub fn mi_estimate(&self, loss: f64, k: usize) -> f64 {
        match self.family {
            ObjectiveFamily::IrSoftmax => -loss + self.kappa.ln(),
            _ => -loss + (k as f64).ln(),
        }
    }
}

fn flatten_sets(sets: &[Vec<usize>]) -> Result<(Vec<(usize, usize)>, Segments)> {
    let mut pairs = Vec::new();
    for (r, set) in sets.iter().enumerate() {
        pairs.extend(set.iter().map(|&k| (r, k)));
    }
    let segs = Segments::from_lengths(sets.iter().map(Vec::len))?;
    Ok((pairs, segs))
}

fn set_lse(
    tape: &mut Tape,
    params: &ParamSet,
    witness: &Witness,
    queries: Var,
    keys: Var,
    sets: &[Vec<usize>],
) -> Result<Var> {
    let (pairs, segs) = flatten_sets(sets)?;
    let scores = witness.score_pairs(tape, params, queries, keys, &pairs)?;
    tape.segment_logsumexp(scores, &segs)
}

fn check_batch(tape: &Tape, queries: Var, den: &[Vec<usize>], num: &[Vec<usize>]) -> Result<()> {
    let b = tape.value(queries).rows();
    if den.len() != b || num.len() != b {
        return Err(Error::shape(
            "objective",
            format!("{b} queries, {} denominator sets, {} numerator sets", den.len(), num.len()),
        ));
    }
    if den.iter().any(|d| d.len() < 2) {
        return Err(Error::domain("every anchor needs K ≥ 2 candidates"));
    }
    Ok(())
}

/// `logsumexp_{den} f − logsumexp_{num} f` per anchor.
pub fn nce_loss(
    tape: &mut Tape,
    params: &ParamSet,
    witness: &Witness,
    queries: Var,
    keys: Var,
    den: &[Vec<usize>],
    num: &[Vec<usize>],
) -> Result<Var> {
    check_batch(tape, queries, den, num)?;
    let d = set_lse(tape, params, witness, queries, keys, den)?;
    let n = set_lse(tape, params, witness, queries, keys, num)?;
    tape.sub(d, n)
}

/// Difference of log-mean-exps: `(lse_B − ln|B|) − (lse_C − ln|C|)` per anchor.
pub fn la_nce_loss(
    tape: &mut Tape,
    params: &ParamSet,
    witness: &Witness,
    queries: Var,
    keys: Var,
    den: &[Vec<usize>],
    num: &[Vec<usize>],
) -> Result<Var> {
    let base = nce_loss(tape, params, witness, queries, keys, den, num)?;
    let shift: Vec<f64> = den
        .iter()
        .zip(num)
        .map(|(b, c)| (c.len() as f64).ln() - (b.len() as f64).ln())
        .collect();
    let shift = tape.constant(Tensor::column(&shift)?);
    tape.add(base, shift)
}

/// `ln(c_den · Σ_den e^f) − ln(c_num · Σ_num e^f)` with explicit exponentials.
#[allow(clippy::too_many_arguments)]
fn naive_log_ratio(
    tape: &mut Tape,
    params: &ParamSet,
    witness: &Witness,
    queries: Var,
    keys: Var,
    den: &[Vec<usize>],
    num: &[Vec<usize>],
    c_den: f64,
    c_num: f64,
) -> Result<Var> {
    check_batch(tape, queries, den, num)?;
    let mut side = |sets: &[Vec<usize>], c: f64| -> Result<Var> {
        let (pairs, segs) = flatten_sets(sets)?;
        let scores = witness.score_pairs(tape, params, queries, keys, &pairs)?;
        let e = tape.exp(scores)?;
        let s = tape.segment_sum(e, &segs)?;
        let s = tape.scale(s, c)?;
        tape.ln(s)
    };
    let d = side(den, c_den)?;
    let n = side(num, c_num)?;
    tape.sub(d, n)
}

/// `−ln( e^{f₁} / (κ · (1/K) Σ_j e^{f_j}) )`, evaluated naively so large witness values overflow.
#[allow(clippy::too_many_arguments)]
pub fn ir_softmax_loss(
    tape: &mut Tape,
    params: &ParamSet,
    witness: &Witness,
    queries: Var,
    keys: Var,
    den: &[Vec<usize>],
    anchors: &[Vec<usize>],
    kappa: f64,
) -> Result<Var> {
    if !(kappa > 0.0) {
        return Err(Error::domain("kappa must be positive"));
    }
    let k = den.first().map_or(1, Vec::len) as f64;
    if den.iter().any(|d| d.len() as f64 != k) {
        return Err(Error::domain("ir-softmax needs the same K for every anchor"));
    }
    naive_log_ratio(tape, params, witness, queries, keys, den, anchors, kappa / k, 1.0)
}

/// `−ln( Σ_C p / Σ_B p )` with `p = e^f / κ·Z` computed naively. `B = den` (a multiset with
/// the anchor first), `C = num` must be a subset of it.
#[allow(clippy::too_many_arguments)]
pub fn la_original_loss(
    tape: &mut Tape,
    params: &ParamSet,
    witness: &Witness,
    queries: Var,
    keys: Var,
    den: &[Vec<usize>],
    num: &[Vec<usize>],
    kappa: f64,
    enforce_anchor: bool,
) -> Result<Var> {
    if !(kappa > 0.0) {
        return Err(Error::domain("kappa must be positive"));
    }
    for (b, c) in den.iter().zip(num) {
        if c.is_empty() {
            return Err(Error::domain("close set is empty"));
        }
        if let Some(x) = c.iter().find(|x| !b.contains(x)) {
            return Err(Error::domain(format!("close neighbor {x} is not in the background set")));
        }
        if enforce_anchor && c[0] != b[0] && !c.contains(&b[0]) {
            return Err(Error::domain("the anchor must be a member of its close set"));
        }
    }
    naive_log_ratio(tape, params, witness, queries, keys, den, num, kappa, kappa)
}

/// Mean over close neighbors `l` of `(lse_B − ln|B|) − f_l`: the view-set extension with the
/// neighbor sum taken outside the log.
pub fn neighbor_extended_loss(
    tape: &mut Tape,
    params: &ParamSet,
    witness: &Witness,
    queries: Var,
    keys: Var,
    den: &[Vec<usize>],
    num: &[Vec<usize>],
) -> Result<Var> {
    check_batch(tape, queries, den, num)?;
    let d = set_lse(tape, params, witness, queries, keys, den)?;
    let (pairs, segs) = flatten_sets(num)?;
    let scores = witness.score_pairs(tape, params, queries, keys, &pairs)?;
    let weights: Vec<f64> = num
        .iter()
        .flat_map(|c| std::iter::repeat_n(1.0 / c.len() as f64, c.len()))
        .collect();
    let w = tape.constant(Tensor::column(&weights)?);
    let weighted = tape.mul(scores, w)?;
    let mean_f = tape.segment_sum(weighted, &segs)?;
    let shift: Vec<f64> = den.iter().map(|b| -(b.len() as f64).ln()).collect();
    let shift = tape.constant(Tensor::column(&shift)?);
    let d = tape.add(d, shift)?;
    tape.sub(d, mean_f)
}

/// Two-channel loss: `IR^nce(g₁(x₁), M₂) + IR^nce(g₂(x₂), M₁)` per anchor.
#[allow(clippy::too_many_arguments)]
pub fn cmc_loss(
    tape: &mut Tape,
    params: &ParamSet,
    witness: &Witness,
    queries_first: Var,
    keys_second: Var,
    queries_second: Var,
    keys_first: Var,
    den: &[Vec<usize>],
) -> Result<Var> {
    let anchors: Vec<Vec<usize>> = den.iter().map(|d| vec![d[0]]).collect();
    let a = nce_loss(tape, params, witness, queries_first, keys_second, den, &anchors)?;
    let b = nce_loss(tape, params, witness, queries_second, keys_first, den, &anchors)?;
    tape.add(a, b)
}

/// SimCLR over a minibatch: queries are first views, keys second views of the same rows.
/// Anchor `r` uses key `r` as its positive and every other key as a negative.
pub fn simclr_loss(tape: &mut Tape, params: &ParamSet, witness: &Witness, queries: Var, keys: Var) -> Result<Var> {
    let b = tape.value(queries).rows();
    if b < 2 {
        return Err(Error::domain("SimCLR needs a minibatch of at least 2"));
    }
    if tape.value(keys).rows() != b {
        return Err(Error::shape("simclr", "first and second views differ in count"));
    }
    let (den, num) = simclr_sets(b);
    nce_loss(tape, params, witness, queries, keys, &den, &num)
}

/// Candidate sets of the minibatch objective: positive `r` first, then the others in order.
pub fn simclr_sets(b: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let den = (0..b)
        .map(|r| std::iter::once(r).chain((0..b).filter(|&j| j != r)).collect())
        .collect();
    let num = (0..b).map(|r| vec![r]).collect();
    (den, num)
}

/// Draws the denominator set (anchor + `k − 1` negatives) and numerator set
/// (anchor + `l − 1` close neighbors) for one anchor.
#[allow(clippy::too_many_arguments)]
pub fn draw_candidate_sets<R: Rng + ?Sized>(
    negatives: &NegativeSpec,
    neighbors: &NeighborSpec,
    entries: &Tensor,
    query: &[f64],
    anchor: usize,
    k: usize,
    neg_clusters: Option<&[usize]>,
    neigh_clusters: Option<&[usize]>,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if k < 2 {
        return Err(Error::domain("K must be at least 2"));
    }
    let mut den = vec![anchor];
    den.extend(sample_negatives(negatives, entries, query, anchor, k - 1, neg_clusters, rng)?);
    let num = if neighbors.kind == NeighborKind::None {
        vec![anchor]
    } else {
        sample_close_neighbors(neighbors, entries, query, anchor, neighbors.count - 1, neigh_clusters, rng)?
    };
    Ok((den, num))
}

/// One anchor's view against a bank, for evaluating single-instance losses.
pub struct AnchorView<'a> {
    pub witness: &'a Witness,
    pub params: &'a ParamSet,
    pub bank: &'a Tensor,
    pub query: &'a [f64],
    pub anchor: usize,
}

impl AnchorView<'_> {
    fn eval<F>(&self, den: &[usize], num: &[usize], build: F) -> Result<f64>
    where
        F: FnOnce(&mut Tape, Var, Var, &[Vec<usize>], &[Vec<usize>]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::row_vector(self.query)?);
        let keys = tape.constant(self.bank.clone());
        let out = build(&mut tape, q, keys, &[den.to_vec()], &[num.to_vec()])?;
        tape.value(out).item()
    }

    fn den(&self, negatives: &[usize]) -> Vec<usize> {
        std::iter::once(self.anchor).chain(negatives.iter().copied()).collect()
    }

    pub fn scores(&self, indices: &[usize]) -> Result<Vec<f64>> {
        indices
            .iter()
            .map(|&j| {
                if j >= self.bank.rows() {
                    return Err(Error::IndexOutOfRange { index: j, len: self.bank.rows() });
                }
                self.witness.score(self.params, self.query, self.bank.row(j))
            })
            .collect()
    }

    pub fn ir_nce(&self, negatives: &[usize]) -> Result<f64> {
        self.t_disc(negatives, &[self.anchor])
    }

    /// `close` must list the anchor first.
    pub fn t_disc(&self, negatives: &[usize], close: &[usize]) -> Result<f64> {
        let (w, p) = (self.witness, self.params);
        self.eval(&self.den(negatives), close, |t, q, k, d, n| nce_loss(t, p, w, q, k, d, n))
    }

    pub fn la_nce(&self, negatives: &[usize], close: &[usize]) -> Result<f64> {
        let (w, p) = (self.witness, self.params);
        self.eval(&self.den(negatives), close, |t, q, k, d, n| la_nce_loss(t, p, w, q, k, d, n))
    }

    pub fn ir_softmax(&self, negatives: &[usize], kappa: f64) -> Result<f64> {
        let (w, p) = (self.witness, self.params);
        self.eval(&self.den(negatives), &[self.anchor], |t, q, k, d, n| {
            ir_softmax_loss(t, p, w, q, k, d, n, kappa)
        })
    }

    pub fn la_original(&self, negatives: &[usize], close: &[usize], kappa: f64, enforce_anchor: bool) -> Result<f64> {
        let (w, p) = (self.witness, self.params);
        self.eval(&self.den(negatives), close, |t, q, k, d, n| {
            la_original_loss(t, p, w, q, k, d, n, kappa, enforce_anchor)
        })
    }

    pub fn neighbor_extended(&self, negatives: &[usize], close: &[usize]) -> Result<f64> {
        let (w, p) = (self.witness, self.params);
        self.eval(&self.den(negatives), close, |t, q, k, d, n| {
            neighbor_extended_loss(t, p, w, q, k, d, n)
        })
    }
}

/// Total full-denominator IR loss `Σ_i [lse_j f(e_i, e_j) − f(e_i, e_i)]` over `embeddings`,
/// before and after permuting the rows.
pub fn check_permutation_invariance(embeddings: &Tensor, omega: f64, permutation: &[usize]) -> Result<(f64, f64)> {
    let n = embeddings.rows();
    let mut seen = vec![false; n];
    if permutation.len() != n || permutation.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::domain("not a permutation of the embedding rows"));
    }
    let witness = Witness::scaled_dot(embeddings.cols(), omega)?;
    let total = |e: &Tensor| -> Result<f64> {
        let params = ParamSet::new();
        let mut acc = Neumaier::default();
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| witness.score(&params, e.row(i), e.row(j)))
                .collect::<Result<_>>()?;
            acc.add(lse_unchecked(&scores) - scores[i]);
        }
        Ok(acc.sum())
    };
    let permuted = embeddings.gather_rows(permutation)?;
    Ok((total(embeddings)?, total(&permuted)?))
}

/// Compensated summation.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn sum(&self) -> f64 {
        self.sum + self.carry
    }
}

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{BankInit, DatasetKind, ExperimentConfig, Granularity};
use crate::bank::{kmeans, MemoryBank, NegativeSpec, NeighborSpec};
use crate::data::{analytic_gaussian_mi, make_blobs, make_spirals, view_rows, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{Summary, Witness};
use crate::ndmath::{Mlp, Optimizer, OptimizerConfig, ParamSet, Tape, Tensor, Var};
use crate::objectives::{cmc_loss, draw_candidate_sets, simclr_loss, ObjectiveFamily, ObjectiveSpec};
use crate::probes::{knn_probe_k, logistic_probe, LogisticConfig};

const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

/// Per-seed generator for one purpose. Every variant run with the same seed sees the same
/// data, the same initial weights (for matching architectures) and the same training draws.
pub fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub mi_estimate: f64,
    /// Outer percentile of the negative pool in effect for this step.
    pub anneal_percent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Number of completed epochs when the probe ran.
    pub epoch: usize,
    pub knn_accuracy: Option<f64>,
    pub logistic_accuracy: Option<f64>,
}

/// Frozen embeddings of the privileged train and test points.
#[derive(Clone, Debug, PartialEq)]
pub struct Representations {
    pub train: Tensor,
    pub train_labels: Vec<usize>,
    pub test: Tensor,
    pub test_labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub experiment: String,
    pub variant: String,
    pub config_hash: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Mean per-anchor loss of one evaluation pass over every datum.
    pub final_loss: f64,
    pub final_mi: f64,
    pub final_mi_std_err: f64,
    pub true_mi: Option<f64>,
    pub knn_accuracy: Option<f64>,
    pub logistic_accuracy: Option<f64>,
    pub wall_seconds: f64,
    pub representations: Option<Representations>,
}

/// Identifies a run to an [`Observer`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunInfo {
    pub experiment: String,
    pub variant: String,
    pub config_hash: String,
    pub seed: u64,
}

/// Receives records as they are produced.
pub trait Observer {
    fn step(&mut self, _run: &RunInfo, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn epoch(&mut self, _run: &RunInfo, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullObserver;

impl Observer for NullObserver {}

/// Splits a shuffled order into minibatches, folding a trailing singleton into its predecessor.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

/// Dense sub-bank of the rows used by a batch, with sets rewritten to index it.
fn compact(entries: &Tensor, sets: &mut [&mut Vec<Vec<usize>>]) -> Result<Tensor> {
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut rows = Vec::new();
    for group in sets.iter_mut() {
        for set in group.iter_mut() {
            for j in set.iter_mut() {
                let next = rows.len();
                let s = *slot.entry(*j).or_insert_with(|| {
                    rows.push(*j);
                    next
                });
                *j = s;
            }
        }
    }
    entries.gather_rows(&rows)
}

fn rows_of(sets: &[Vec<usize>]) -> Vec<usize> {
    let mut seen = HashMap::new();
    let mut rows = Vec::new();
    for j in sets.iter().flatten() {
        if seen.insert(*j, ()).is_none() {
            rows.push(*j);
        }
    }
    rows
}

/// Cluster assignments for specs that need them.
#[derive(Default)]
struct Clusters {
    negatives: Option<Vec<usize>>,
    neighbors: Option<Vec<usize>>,
}

impl Clusters {
    fn recompute(&mut self, spec: &ObjectiveSpec, entries: &Tensor, rng: &mut ChaCha8Rng) -> Result<()> {
        if spec.negatives.needs_clusters() {
            let k = spec.negatives.kmeans_k.min(entries.rows());
            self.negatives = Some(kmeans(entries, k, spec.negatives.kmeans_restarts, rng)?.assignments);
        }
        if spec.neighbors.needs_clusters() {
            let k = spec.neighbors.kmeans_k.min(entries.rows());
            self.neighbors = Some(kmeans(entries, k, spec.neighbors.kmeans_restarts, rng)?.assignments);
        }
        Ok(())
    }
}

/// Draws candidate sets for a batch. For the original LA loss the close set is cut down
/// to its intersection with the background set.
#[allow(clippy::too_many_arguments)]
fn draw_sets(
    spec: &ObjectiveSpec,
    negatives: &NegativeSpec,
    neighbors: &NeighborSpec,
    entries: &Tensor,
    queries: &Tensor,
    anchors: &[usize],
    k: usize,
    clusters: &Clusters,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let mut den = Vec::with_capacity(anchors.len());
    let mut num = Vec::with_capacity(anchors.len());
    for (r, &i) in anchors.iter().enumerate() {
        let (d, mut c) = draw_candidate_sets(
            negatives,
            neighbors,
            entries,
            queries.row(r),
            i,
            k,
            clusters.negatives.as_deref(),
            clusters.neighbors.as_deref(),
            rng,
        )?;
        if spec.family == ObjectiveFamily::LaOriginal {
            c.retain(|j| d.contains(j));
        }
        den.push(d);
        num.push(c);
    }
    Ok((den, num))
}

struct Schedule {
    steps_per_epoch: usize,
    total_steps: usize,
    granularity: Granularity,
}

impl Schedule {
    fn new(cfg: &ExperimentConfig, n: usize) -> Self {
        let b = cfg.train.batch_size.min(n);
        let mut steps_per_epoch = n.div_ceil(b);
        if steps_per_epoch > 1 && n % b == 1 {
            steps_per_epoch -= 1;
        }
        let total_steps = if cfg.train.steps > 0 {
            cfg.train.steps
        } else {
            cfg.train.epochs * steps_per_epoch
        };
        Self {
            steps_per_epoch,
            total_steps,
            granularity: cfg.train.anneal_granularity,
        }
    }

    fn time(&self, step: usize) -> f64 {
        match self.granularity {
            Granularity::Epoch => (step / self.steps_per_epoch) as f64,
            Granularity::Step => step as f64,
        }
    }
}

/// The trainable pieces of one run, one implementation per topology.
trait Topology {
    fn n(&self) -> usize;

    /// Number of anchors in the final evaluation pass.
    fn eval_n(&self) -> usize {
        self.n()
    }

    fn eval_search_entries(&self) -> Result<Tensor> {
        self.search_entries()
    }

    /// Entries used for ranking and clustering at the start of an epoch.
    fn search_entries(&self) -> Result<Tensor>;

    /// One optimizer step on `anchors`; returns the mean loss and K.
    fn train_step(
        &mut self,
        anchors: &[usize],
        negatives: &NegativeSpec,
        neighbors: &NeighborSpec,
        clusters: &Clusters,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, usize)>;

    /// Per-anchor losses without updating anything; returns the losses and K.
    fn eval_losses(
        &self,
        anchors: &[usize],
        negatives: &NegativeSpec,
        neighbors: &NeighborSpec,
        clusters: &Clusters,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, usize)>;

    /// MI estimate from a loss value.
    fn mi(&self, loss: f64, k: usize) -> f64;

    /// kNN and logistic accuracies plus the representations used.
    fn probe(&self) -> Result<Option<(f64, f64, Representations)>>;
}

fn encoder(cfg: &ExperimentConfig, params: &mut ParamSet, name: &str, input: usize, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    Mlp::new(params, name, &cfg.encoder.widths(input), cfg.encoder.normalize, rng)
}

fn witness(cfg: &ExperimentConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Witness> {
    Witness::new(
        cfg.witness,
        cfg.encoder.output,
        cfg.objective.omega,
        cfg.witness_hidden,
        params,
        rng,
    )
}

/// Correlated-Gaussian pairs: separate encoders for X and Y, candidates drawn from all Y.
struct Paired {
    spec: ObjectiveSpec,
    x: Tensor,
    y: Tensor,
    /// Fresh pairs for the final estimate; the training pairs when none are configured.
    x_eval: Tensor,
    y_eval: Tensor,
    enc_x: Mlp,
    enc_y: Mlp,
    witness: Witness,
    params: ParamSet,
    optimizer: Optimizer,
    k: usize,
}

impl Paired {
    fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let mut data_rng = stream(seed, DATA_STREAM);
        let split = |pairs: Vec<(f64, f64)>| -> Result<(Tensor, Tensor)> {
            Ok((
                Tensor::column(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?,
                Tensor::column(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?,
            ))
        };
        let (x, y) = split(cfg.dataset.gaussian.sample(cfg.dataset.n, &mut data_rng)?)?;
        let (x_eval, y_eval) = if cfg.dataset.test_n >= 2 {
            split(cfg.dataset.gaussian.sample(cfg.dataset.test_n, &mut data_rng)?)?
        } else {
            (x.clone(), y.clone())
        };
        let mut rng = stream(seed, INIT_STREAM);
        let mut params = ParamSet::new();
        let enc_x = encoder(cfg, &mut params, "enc_x", 1, &mut rng)?;
        let enc_y = encoder(cfg, &mut params, "enc_y", 1, &mut rng)?;
        let witness = witness(cfg, &mut params, &mut rng)?;
        let optimizer = Optimizer::new(cfg.optimizer.clone(), &params)?;
        Ok(Self {
            spec: cfg.objective.clone(),
            x,
            y,
            x_eval,
            y_eval,
            enc_x,
            enc_y,
            witness,
            params,
            optimizer,
            k: cfg.train.negatives + 1,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn losses(
        &self,
        tape: &mut Tape,
        (x, y): (&Tensor, &Tensor),
        anchors: &[usize],
        negatives: &NegativeSpec,
        neighbors: &NeighborSpec,
        clusters: &Clusters,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        // Candidates are ranked around the positive's key embedding, so the anchor is rank one.
        let keys_all = self.enc_y.eval(&self.params, y)?;
        let positives = keys_all.gather_rows(anchors)?;
        let (mut den, mut num) =
            draw_sets(&self.spec, negatives, neighbors, &keys_all, &positives, anchors, self.k, clusters, rng)?;
        let key_inputs = compact(y, &mut [&mut den, &mut num])?;
        let kin = tape.constant(key_inputs);
        let keys = self.enc_y.forward(tape, &self.params, kin)?;
        let qin = tape.constant(x.gather_rows(anchors)?);
        let queries = self.enc_x.forward(tape, &self.params, qin)?;
        self.spec
            .per_anchor_loss(tape, &self.params, &self.witness, queries, keys, &den, &num)
    }
}

impl Topology for Paired {
    fn n(&self) -> usize {
        self.x.rows()
    }

    fn eval_n(&self) -> usize {
        self.x_eval.rows()
    }

    fn eval_search_entries(&self) -> Result<Tensor> {
        self.enc_y.eval(&self.params, &self.y_eval)
    }

    fn search_entries(&self) -> Result<Tensor> {
        self.enc_y.eval(&self.params, &self.y)
    }

    fn train_step(
        &mut self,
        anchors: &[usize],
        negatives: &NegativeSpec,
        neighbors: &NeighborSpec,
        clusters: &Clusters,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let data = (&self.x, &self.y);
        let per = self.losses(&mut tape, data, anchors, negatives, neighbors, clusters, rng)?;
        let loss = tape.mean(per)?;
        let grads = tape.backward(loss)?;
        self.optimizer.step(&mut self.params, &grads)?;
        Ok((tape.value(loss).item()?, self.k))
    }

    fn eval_losses(
        &self,
        anchors: &[usize],
        negatives: &NegativeSpec,
        neighbors: &NeighborSpec,
        clusters: &Clusters,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, usize)> {
        let mut tape = Tape::new();
        let data = (&self.x_eval, &self.y_eval);
        let per = self.losses(&mut tape, data, anchors, negatives, neighbors, clusters, rng)?;
        Ok((tape.value(per).data().to_vec(), self.k))
    }

    fn mi(&self, loss: f64, k: usize) -> f64 {
        self.spec.mi_estimate(loss, k)
    }

    fn probe(&self) -> Result<Option<(f64, f64, Representations)>> {
        Ok(None)
    }
}

enum Encoders {
    /// One encoder and its bank.
    Single { enc: Mlp, bank: MemoryBank },
    /// One encoder, fresh second views as keys.
    Minibatch { enc: Mlp },
    /// One encoder and bank per channel group.
    TwoChannel {
        first: (Vec<usize>, Mlp, MemoryBank),
        second: (Vec<usize>, Mlp, MemoryBank),
    },
}

/// Labeled vector data with stochastic views.
struct Viewed {
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    encoders: Encoders,
    witness: Witness,
    params: ParamSet,
    optimizer: Optimizer,
    k: usize,
}

fn columns(t: &Tensor, cols: &[usize]) -> Result<Tensor> {
    let n = t.rows();
    let mut data = Vec::with_capacity(n * cols.len());
    for i in 0..n {
        let row = t.row(i);
        for &c in cols {
            data.push(row[c]);
        }
    }
    Tensor::matrix(n, cols.len(), data)
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    let mut data = Vec::with_capacity(n * (a.cols() + b.cols()));
    for i in 0..n {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::matrix(n, a.cols() + b.cols(), data)
}

fn random_directions(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        data.extend(row.iter().map(|x| x / norm));
    }
    Tensor::matrix(n, d, data)
}

fn make_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let total = d.n + d.test_n;
    let mut rng = stream(seed, DATA_STREAM);
    let all = match d.kind {
        DatasetKind::Spirals => make_spirals(total, &mut rng)?,
        DatasetKind::Blobs => make_blobs(total, d.blob_centers, d.blob_dim, d.blob_spread, d.blob_half_width, &mut rng)?,
        DatasetKind::Gaussian => return Err(Error::Config("gaussian data has no labels".into())),
    };
    let split = |range: std::ops::Range<usize>| -> Result<Dataset> {
        let idx: Vec<usize> = range.collect();
        Dataset::new(all.points.gather_rows(&idx)?, idx.iter().map(|&i| all.labels[i]).collect())
    };
    Ok((split(0..d.n)?, split(d.n..total)?))
}

impl Viewed {
    fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let (train, test) = make_dataset(cfg, seed)?;
        let dim = cfg.view.output_dim(train.dim());
        let mut rng = stream(seed, INIT_STREAM);
        let mut params = ParamSet::new();
        let spec = &cfg.objective;
        let bank = |enc: &Mlp, params: &ParamSet, x: &Tensor, rng: &mut ChaCha8Rng| -> Result<MemoryBank> {
            let entries = match cfg.bank_init {
                BankInit::Encoded => enc.eval(params, x)?,
                BankInit::Random => random_directions(x.rows(), enc.output_dim(), rng)?,
            };
            MemoryBank::from_entries(entries, cfg.bank_alpha, cfg.bank_renormalize)
        };
        let privileged = |cols: Option<&[usize]>| -> Result<Tensor> {
            match cols {
                Some(c) => columns(&train.points, c),
                None => Ok(train.points.clone()),
            }
        };
        let encoders = if let Some(split) = &spec.channel_split {
            let e1 = encoder(cfg, &mut params, "enc_first", split.first.len(), &mut rng)?;
            let e2 = encoder(cfg, &mut params, "enc_second", split.second.len(), &mut rng)?;
            let b1 = bank(&e1, &params, &privileged(Some(&split.first))?, &mut rng)?;
            let b2 = bank(&e2, &params, &privileged(Some(&split.second))?, &mut rng)?;
            Encoders::TwoChannel {
                first: (split.first.clone(), e1, b1),
                second: (split.second.clone(), e2, b2),
            }
        } else {
            let enc = encoder(cfg, &mut params, "enc", dim, &mut rng)?;
            if spec.use_memory_bank {
                let b = bank(&enc, &params, &privileged(None)?, &mut rng)?;
                Encoders::Single { enc, bank: b }
            } else {
                Encoders::Minibatch { enc }
            }
        };
        let witness = witness(cfg, &mut params, &mut rng)?;
        let optimizer = Optimizer::new(cfg.optimizer.clone(), &params)?;
        Ok(Self {
            cfg: cfg.clone(),
            train,
            test,
            encoders,
            witness,
            params,
            optimizer,
            k: cfg.train.negatives + 1,
        })
    }

    /// Records the batch losses; returns them with K and the detached query embeddings for bank updates.
    #[allow(clippy::type_complexity)]
    fn losses(
        &self,
        tape: &mut Tape,
        anchors: &[usize],
        negatives: &NegativeSpec,
        neighbors: &NeighborSpec,
        clusters: &Clusters,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, usize, Vec<Tensor>)> {
        let spec = &self.cfg.objective;
        let views = view_rows(&self.cfg.view, &self.train.points, anchors, rng)?;
        match &self.encoders {
            Encoders::Single { enc, bank } => {
                let input = tape.constant(views);
                let q = enc.forward(tape, &self.params, input)?;
                let qv = tape.value(q).clone();
                let (mut den, mut num) =
                    draw_sets(spec, negatives, neighbors, bank.entries(), &qv, anchors, self.k, clusters, rng)?;
                let keys = compact(bank.entries(), &mut [&mut den, &mut num])?;
                let keys = tape.constant(keys);
                let per = spec.per_anchor_loss(tape, &self.params, &self.witness, q, keys, &den, &num)?;
                Ok((per, self.k, vec![qv]))
            }
            Encoders::Minibatch { enc } => {
                let second = view_rows(&self.cfg.view, &self.train.points, anchors, rng)?;
                let input = tape.constant(views);
                let q = enc.forward(tape, &self.params, input)?;
                let input2 = tape.constant(second);
                let keys = enc.forward(tape, &self.params, input2)?;
                let per = simclr_loss(tape, &self.params, &self.witness, q, keys)?;
                Ok((per, anchors.len(), Vec::new()))
            }
            Encoders::TwoChannel { first, second } => {
                let in1 = tape.constant(columns(&views, &first.0)?);
                let in2 = tape.constant(columns(&views, &second.0)?);
                let q1 = first.1.forward(tape, &self.params, in1)?;
                let q2 = second.1.forward(tape, &self.params, in2)?;
                let (v1, v2) = (tape.value(q1).clone(), tape.value(q2).clone());
                let none = NeighborSpec::none();
                let (den, _) = draw_sets(spec, negatives, &none, second.2.entries(), &v1, anchors, self.k, clusters, rng)?;
                let rows = rows_of(&den);
                let slot: HashMap<usize, usize> = rows.iter().enumerate().map(|(s, &j)| (j, s)).collect();
                let den: Vec<Vec<usize>> = den.iter().map(|d| d.iter().map(|j| slot[j]).collect()).collect();
                let k2 = tape.constant(second.2.entries().gather_rows(&rows)?);
                let k1 = tape.constant(first.2.entries().gather_rows(&rows)?);
                let per = cmc_loss(tape, &self.params, &self.witness, q1, k2, q2, k1, &den)?;
                Ok((per, self.k, vec![v1, v2]))
            }
        }
    }

    fn privileged_reps(&self, points: &Tensor) -> Result<Tensor> {
        match &self.encoders {
            Encoders::Single { enc, .. } | Encoders::Minibatch { enc } => enc.eval(&self.params, points),
            Encoders::TwoChannel { first, second } => {
                let a = first.1.eval(&self.params, &columns(points, &first.0)?)?;
                let b = second.1.eval(&self.params, &columns(points, &second.0)?)?;
                concat_cols(&a, &b)
            }
        }
    }
}

impl Topology for Viewed {
    fn n(&self) -> usize {
        self.train.len()
    }

    fn search_entries(&self) -> Result<Tensor> {
        Ok(match &self.encoders {
            Encoders::Single { bank, .. } => bank.entries().clone(),
            Encoders::TwoChannel { second, .. } => second.2.entries().clone(),
            Encoders::Minibatch { enc } => enc.eval(&self.params, &self.train.points)?,
        })
    }

    fn train_step(
        &mut self,
        anchors: &[usize],
        negatives: &NegativeSpec,
        neighbors: &NeighborSpec,
        clusters: &Clusters,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let (per, k, detached) = self.losses(&mut tape, anchors, negatives, neighbors, clusters, rng)?;
        let loss = tape.mean(per)?;
        let grads = tape.backward(loss)?;
        self.optimizer.step(&mut self.params, &grads)?;
        match &mut self.encoders {
            Encoders::Single { bank, .. } => {
                for (r, &i) in anchors.iter().enumerate() {
                    bank.update(i, detached[0].row(r))?;
                }
            }
            Encoders::TwoChannel { first, second } => {
                for (r, &i) in anchors.iter().enumerate() {
                    first.2.update(i, detached[0].row(r))?;
                    second.2.update(i, detached[1].row(r))?;
                }
            }
            Encoders::Minibatch { .. } => {}
        }
        Ok((tape.value(loss).item()?, k))
    }

    fn eval_losses(
        &self,
        anchors: &[usize],
        negatives: &NegativeSpec,
        neighbors: &NeighborSpec,
        clusters: &Clusters,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, usize)> {
        let mut tape = Tape::new();
        let (per, k, _) = self.losses(&mut tape, anchors, negatives, neighbors, clusters, rng)?;
        Ok((tape.value(per).data().to_vec(), k))
    }

    fn mi(&self, loss: f64, k: usize) -> f64 {
        match self.encoders {
            // The two-channel loss sums one bound per direction.
            Encoders::TwoChannel { .. } => self.cfg.objective.mi_estimate(loss / 2.0, k),
            _ => self.cfg.objective.mi_estimate(loss, k),
        }
    }

    fn probe(&self) -> Result<Option<(f64, f64, Representations)>> {
        let train = self.privileged_reps(&self.train.points)?;
        let test = self.privileged_reps(&self.test.points)?;
        // Nearest neighbors are looked up in the bank when there is one.
        let lookup = match &self.encoders {
            Encoders::Single { bank, .. } => bank.entries().clone(),
            Encoders::TwoChannel { first, second } => concat_cols(first.2.entries(), second.2.entries())?,
            Encoders::Minibatch { .. } => train.clone(),
        };
        let knn = knn_probe_k(&lookup, &self.train.labels, &test, &self.test.labels, self.cfg.eval.knn_k)?;
        let logistic_cfg = LogisticConfig {
            optimizer: OptimizerConfig::adam(self.cfg.eval.logistic_lr),
            max_epochs: self.cfg.eval.logistic_epochs,
            ..LogisticConfig::default()
        };
        let logistic = logistic_probe(&train, &self.train.labels, &test, &self.test.labels, &logistic_cfg)?;
        Ok(Some((
            knn.accuracy,
            logistic.accuracy,
            Representations {
                train,
                train_labels: self.train.labels.clone(),
                test,
                test_labels: self.test.labels.clone(),
            },
        )))
    }
}

/// Trains one `(config, seed)` pair, reporting records to `observer` as they happen.
pub fn train_run(cfg: &ExperimentConfig, variant: &str, seed: u64, observer: &mut dyn Observer) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let info = RunInfo {
        experiment: cfg.name.clone(),
        variant: variant.to_string(),
        config_hash: cfg.config_hash(),
        seed,
    };
    let mut topology: Box<dyn Topology> = match cfg.dataset.kind {
        DatasetKind::Gaussian => Box::new(Paired::new(cfg, seed)?),
        _ => Box::new(Viewed::new(cfg, seed)?),
    };
    let spec = &cfg.objective;
    let n = topology.n();
    let schedule = Schedule::new(cfg, n);
    let mut rng = stream(seed, TRAIN_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut clusters = Clusters::default();
    let needs_clusters = spec.negatives.needs_clusters() || spec.neighbors.needs_clusters();
    let mut steps = Vec::with_capacity(schedule.total_steps);
    let mut epochs = Vec::new();
    let mut step = 0;
    let mut epoch = 0;
    while step < schedule.total_steps {
        if needs_clusters && epoch % cfg.train.km_recompute_epochs == 0 {
            clusters.recompute(spec, &topology.search_entries()?, &mut rng)?;
        }
        order.shuffle(&mut rng);
        for batch in batches(&order, cfg.train.batch_size.min(n)) {
            if step >= schedule.total_steps {
                break;
            }
            let t = schedule.time(step);
            let negatives = spec.negatives.at(t);
            let neighbors = spec.neighbors.at(t);
            let (loss, k) = topology
                .train_step(batch, &negatives, &neighbors, &clusters, &mut rng)
                .map_err(|e| Error::State(format!("step {step}: {e}")))?;
            let record = StepRecord {
                step,
                epoch,
                loss,
                mi_estimate: topology.mi(loss, k),
                anneal_percent: negatives.outer_percent,
            };
            observer.step(&info, &record)?;
            steps.push(record);
            step += 1;
        }
        epoch += 1;
        let every = cfg.eval.probe_every_epochs;
        if every > 0 && epoch % every == 0 && step < schedule.total_steps {
            if let Some((knn, logistic, _)) = topology.probe()? {
                let record = EpochRecord {
                    epoch,
                    knn_accuracy: Some(knn),
                    logistic_accuracy: Some(logistic),
                };
                observer.epoch(&info, &record)?;
                epochs.push(record);
            }
        }
    }

    // Final evaluation pass over every datum with the end-of-training restriction.
    let t_end = schedule.time(schedule.total_steps.saturating_sub(1));
    let negatives = match cfg.eval.restrict_percent {
        Some(p) => NegativeSpec::ball(p),
        None => spec.negatives.at(t_end),
    };
    let neighbors = spec.neighbors.at(t_end);
    if needs_clusters {
        clusters.recompute(spec, &topology.eval_search_entries()?, &mut stream(seed, EVAL_STREAM))?;
    }
    let mut eval_rng = stream(seed, EVAL_STREAM);
    let n_eval = topology.eval_n();
    let all: Vec<usize> = (0..n_eval).collect();
    let mut per_anchor = Vec::with_capacity(n_eval);
    let mut k_eval = 0;
    for batch in batches(&all, cfg.train.batch_size.min(n_eval)) {
        let (losses, k) = topology.eval_losses(batch, &negatives, &neighbors, &clusters, &mut eval_rng)?;
        k_eval = k;
        per_anchor.extend(losses);
    }
    let estimates: Vec<f64> = per_anchor.iter().map(|&l| topology.mi(l, k_eval)).collect();
    let summary = Summary::of(&estimates);
    let final_loss = per_anchor.iter().sum::<f64>() / per_anchor.len() as f64;

    let probe = topology.probe()?;
    let (knn_accuracy, logistic_accuracy, representations) = match probe {
        Some((knn, logistic, reps)) => {
            let record = EpochRecord {
                epoch,
                knn_accuracy: Some(knn),
                logistic_accuracy: Some(logistic),
            };
            observer.epoch(&info, &record)?;
            epochs.push(record);
            (Some(knn), Some(logistic), Some(reps))
        }
        None => (None, None, None),
    };
    let true_mi = match cfg.dataset.kind {
        DatasetKind::Gaussian => Some(analytic_gaussian_mi(&cfg.dataset.gaussian)?),
        _ => None,
    };
    Ok(RunRecord {
        experiment: info.experiment,
        variant: info.variant,
        config_hash: info.config_hash,
        seed,
        steps,
        epochs,
        final_loss,
        final_mi: summary.mean,
        final_mi_std_err: summary.std_err,
        true_mi,
        knn_accuracy,
        logistic_accuracy,
        wall_seconds: if cfg.output.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
        representations: if cfg.output.representations { representations } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_fold_singletons() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
        let one = [7];
        assert_eq!(batches(&one, 4), vec![&one[..]]);
    }

    #[test]
    fn compact_rewrites_indices() {
        let entries = Tensor::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let mut den = vec![vec![3, 1], vec![1, 2]];
        let mut num = vec![vec![3], vec![0]];
        let keys = compact(&entries, &mut [&mut den, &mut num]).unwrap();
        assert_eq!(keys.data(), &[3.0, 1.0, 2.0, 0.0]);
        assert_eq!(den, vec![vec![0, 1], vec![1, 2]]);
        assert_eq!(num, vec![vec![0], vec![3]]);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        use rand::Rng;
        let a: u64 = stream(3, DATA_STREAM).random();
        let b: u64 = stream(3, DATA_STREAM).random();
        let c: u64 = stream(3, TRAIN_STREAM).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

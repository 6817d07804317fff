//! Instance generators and the fast acceptance criteria, shared by several test targets.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vince_core::bank::{candidate_pool, sample_negatives, NegativeSpec};
use vince_core::estimators::infonce_from_scores;
use vince_core::ndmath::{finite_difference, relative_error};
use vince_core::objectives::{
    check_permutation_invariance, cmc_loss, ir_softmax_loss, la_nce_loss, la_original_loss, neighbor_extended_loss,
    nce_loss, simclr_loss, simclr_sets, AnchorView, DEFAULT_KAPPA,
};
use vince_core::{MemoryBank, ParamSet, Tape, Tensor, Var, Witness, WitnessKind};

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(n, d, data).unwrap()
}

pub fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    Tensor::matrix(n, d, data).unwrap()
}

/// A random single-anchor instance: bank, query, anchor, negatives (B∖anchor) and a close set
/// listing the anchor first with every other member drawn from B.
pub struct Instance {
    pub bank: Tensor,
    pub query: Vec<f64>,
    pub anchor: usize,
    pub negatives: Vec<usize>,
    pub close: Vec<usize>,
    pub witness: Witness,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(6..40);
        let d = rng.random_range(2..8);
        let bank = unit_rows(n, d, rng);
        let anchor = rng.random_range(0..n);
        let query = unit_rows(1, d, rng).row(0).to_vec();
        let k = rng.random_range(2..16);
        let negatives: Vec<usize> = (0..k - 1)
            .map(|_| loop {
                let j = rng.random_range(0..n);
                if j != anchor {
                    break j;
                }
            })
            .collect();
        let l = rng.random_range(1..=negatives.len() + 1);
        let mut close = vec![anchor];
        close.extend((1..l).map(|_| negatives[rng.random_range(0..negatives.len())]));
        let omega = [0.07, 0.2, 0.5, 1.0][rng.random_range(0..4)];
        Self {
            bank,
            query,
            anchor,
            negatives,
            close,
            witness: Witness::scaled_dot(d, omega).unwrap(),
        }
    }

    pub fn view<'a>(&'a self, params: &'a ParamSet) -> AnchorView<'a> {
        AnchorView {
            witness: &self.witness,
            params,
            bank: &self.bank,
            query: &self.query,
            anchor: self.anchor,
        }
    }

    pub fn b_len(&self) -> usize {
        self.negatives.len() + 1
    }
}

/// Largest deviation in each exact identity over `trials` random instances.
pub struct Equivalences {
    pub ir_vs_tdisc: f64,
    pub la0_vs_ball: f64,
    pub la_original0_vs_ball: f64,
    pub la_nce_vs_original: f64,
    pub simclr_vs_bank: f64,
    pub ball_full_vs_marginal: bool,
}

pub fn equivalences(trials: usize, seed: u64) -> Equivalences {
    let mut r = rng(seed);
    let params = ParamSet::new();
    let mut e = Equivalences {
        ir_vs_tdisc: 0.0,
        la0_vs_ball: 0.0,
        la_original0_vs_ball: 0.0,
        la_nce_vs_original: 0.0,
        simclr_vs_bank: 0.0,
        ball_full_vs_marginal: true,
    };
    for _ in 0..trials {
        let inst = Instance::random(&mut r);
        let v = inst.view(&params);

        // IR^nce against t-disc with marginal negatives drawn by the same generator.
        let seed = r.random::<u64>();
        let marg = sample_negatives(
            &NegativeSpec::marginal(),
            &inst.bank,
            &inst.query,
            inst.anchor,
            inst.negatives.len(),
            None,
            &mut rng(seed),
        )
        .unwrap();
        let full = sample_negatives(
            &NegativeSpec::ball(100.0),
            &inst.bank,
            &inst.query,
            inst.anchor,
            inst.negatives.len(),
            None,
            &mut rng(seed),
        )
        .unwrap();
        e.ball_full_vs_marginal &= marg == full;
        let p_marg = candidate_pool(&NegativeSpec::marginal(), &inst.bank, &inst.query, inst.anchor, None).unwrap();
        let p_full = candidate_pool(&NegativeSpec::ball(100.0), &inst.bank, &inst.query, inst.anchor, None).unwrap();
        e.ball_full_vs_marginal &= p_marg == p_full;
        let ir = v.ir_nce(&marg).unwrap();
        let td = v.t_disc(&full, &[inst.anchor]).unwrap();
        e.ir_vs_tdisc = e.ir_vs_tdisc.max((ir - td).abs());

        // LA₀ = BALL: close set {anchor}, B from a 30% ball.
        let ball = sample_negatives(
            &NegativeSpec::ball(30.0),
            &inst.bank,
            &inst.query,
            inst.anchor,
            inst.negatives.len(),
            None,
            &mut r,
        )
        .unwrap();
        let ball_loss = v.t_disc(&ball, &[inst.anchor]).unwrap();
        let la0 = v.la_nce(&ball, &[inst.anchor]).unwrap() + (ball.len() as f64 + 1.0).ln();
        e.la0_vs_ball = e.la0_vs_ball.max((la0 - ball_loss).abs());
        let lao = v.la_original(&ball, &[inst.anchor], DEFAULT_KAPPA, true).unwrap();
        e.la_original0_vs_ball = e.la_original0_vs_ball.max((lao - ball_loss).abs());

        // la-nce = la-original + ln|C| − ln|B|.
        let nce = v.la_nce(&inst.negatives, &inst.close).unwrap();
        let orig = v.la_original(&inst.negatives, &inst.close, DEFAULT_KAPPA, true).unwrap();
        let shift = (inst.close.len() as f64).ln() - (inst.b_len() as f64).ln();
        e.la_nce_vs_original = e.la_nce_vs_original.max((nce - (orig + shift)).abs());

        e.simclr_vs_bank = e.simclr_vs_bank.max(simclr_vs_zero_alpha_bank(&mut r));
    }
    e
}

/// SimCLR on a minibatch against t-disc on an α = 0 bank whose rows were just overwritten
/// with the second-view embeddings, using the other minibatch rows as negatives.
pub fn simclr_vs_zero_alpha_bank(r: &mut ChaCha8Rng) -> f64 {
    let b = r.random_range(2..9);
    let d = r.random_range(2..8);
    let first = unit_rows(b, d, r);
    let second = unit_rows(b, d, r);
    let witness = Witness::scaled_dot(d, 0.1).unwrap();
    let params = ParamSet::new();

    let mut tape = Tape::new();
    let q = tape.constant(first.clone());
    let k = tape.constant(second.clone());
    let out = simclr_loss(&mut tape, &params, &witness, q, k).unwrap();
    let simclr = tape.value(out).data().to_vec();

    let mut bank = MemoryBank::from_entries(unit_rows(b, d, r), 0.0, false).unwrap();
    for i in 0..b {
        bank.update(i, second.row(i)).unwrap();
    }
    let (den, _) = simclr_sets(b);
    let mut worst: f64 = 0.0;
    for i in 0..b {
        let v = AnchorView {
            witness: &witness,
            params: &params,
            bank: bank.entries(),
            query: first.row(i),
            anchor: i,
        };
        let t = v.t_disc(&den[i][1..], &[i]).unwrap();
        worst = worst.max((t - simclr[i]).abs());
    }
    worst
}

pub fn check_equivalences() -> Outcome {
    let e = equivalences(200, 41);
    let worst = e
        .ir_vs_tdisc
        .max(e.la0_vs_ball)
        .max(e.la_original0_vs_ball)
        .max(e.la_nce_vs_original)
        .max(e.simclr_vs_bank);
    Outcome::new(
        worst <= 1e-10 && e.ball_full_vs_marginal,
        format!(
            "IR^nce/t-disc {:.1e}, LA0/BALL {:.1e} (legacy {:.1e}), la-nce/la-original {:.1e}, SimCLR/α=0 {:.1e}, ball(100%)=marginal {}",
            e.ir_vs_tdisc,
            e.la0_vs_ball,
            e.la_original0_vs_ball,
            e.la_nce_vs_original,
            e.simclr_vs_bank,
            e.ball_full_vs_marginal
        ),
    )
}

/// Instance where the anchor's view embedding equals its bank entry, so the anchor has the
/// largest score among unit-norm entries.
pub fn matched_instance(rng: &mut ChaCha8Rng) -> Instance {
    let mut inst = Instance::random(rng);
    inst.query = inst.bank.row(inst.anchor).to_vec();
    inst
}

/// Smallest slack of each inequality; all must be ≥ 0 (InfoNCE: ≤ 0 as `est − ln K`).
pub struct Inequalities {
    pub la_bound: f64,
    pub jensen: f64,
    pub infonce_minus_ln_k: f64,
    pub threshold_gap: f64,
    pub threshold_sets: usize,
    pub vince6_mean_exp: f64,
    pub vince6_estimate: f64,
    pub instances: usize,
}

pub fn inequalities(instances: usize, seed: u64) -> Inequalities {
    let mut r = rng(seed);
    let params = ParamSet::new();
    let mut out = Inequalities {
        la_bound: f64::INFINITY,
        jensen: f64::INFINITY,
        infonce_minus_ln_k: f64::NEG_INFINITY,
        threshold_gap: f64::INFINITY,
        threshold_sets: 0,
        vince6_mean_exp: f64::INFINITY,
        vince6_estimate: f64::INFINITY,
        instances,
    };
    for _ in 0..instances {
        // Estimates are negated losses; the shared ln K cancels from both sides.
        let inst = matched_instance(&mut r);
        let v = inst.view(&params);
        let la0 = -v.t_disc(&inst.negatives, &[inst.anchor]).unwrap();
        let la = -v.la_original(&inst.negatives, &inst.close, DEFAULT_KAPPA, true).unwrap();
        out.la_bound = out.la_bound.min(la0 - (la - (inst.close.len() as f64).ln()));

        let inst = Instance::random(&mut r);
        let v = inst.view(&params);
        let inside = v.la_nce(&inst.negatives, &inst.close).unwrap();
        let outside = v.neighbor_extended(&inst.negatives, &inst.close).unwrap();
        out.jensen = out.jensen.min(outside - inside);

        let k = r.random_range(2..200);
        let scale = [0.1, 1.0, 10.0, 300.0][r.random_range(0..4)];
        let scores: Vec<f64> = (0..k).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
        let est = infonce_from_scores(&scores).unwrap();
        out.infonce_minus_ln_k = out.infonce_minus_ln_k.max(est - (k as f64).ln());

        let (slack, sets) = threshold_set_enumeration(8, &mut r);
        out.threshold_gap = out.threshold_gap.min(slack);
        out.threshold_sets += sets;

        let (mean_exp, est) = vince_six_point(&mut r);
        out.vince6_mean_exp = out.vince6_mean_exp.min(mean_exp);
        out.vince6_estimate = out.vince6_estimate.min(est);
    }
    out
}

fn random_simplex(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Random distribution `P` on `n` points and witness `f`. Over every subset `S` whose
/// smallest `f` exceeds `ln E_P[e^f]`, returns the smallest `E_{P(·|S)}[g] − E_P[g]` and
/// the number of subsets checked.
pub fn threshold_set_enumeration(n: usize, r: &mut ChaCha8Rng) -> (f64, usize) {
    let p = random_simplex(n, r);
    let f: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let g: Vec<f64> = f.iter().map(|v| v.exp()).collect();
    let c: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
    let tau = c.ln();
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if members.iter().any(|&i| f[i] <= tau) {
            continue;
        }
        let mass: f64 = members.iter().map(|&i| p[i]).sum();
        let eq: f64 = members.iter().map(|&i| p[i] * g[i]).sum::<f64>() / mass;
        worst = worst.min(eq - c);
        count += 1;
    }
    (worst, count)
}

/// Six values of `y` with the optimal witness `f(y) = ln p(y|x)/p(y)` for a fixed `x`;
/// `E_p[e^f] = 1`, so `T = {y : f(y) > 0}`. With K = 3, enumerates the positive
/// `y₁ ~ p(·|x)` and both negatives, once from `p` and once from `q_T = p(·|T)`.
/// Returns the slack of `E_q[(1/K)Σe^f] > E_p[(1/K)Σe^f]` and of
/// `estimate_p > estimate_q` (both should be positive).
pub fn vince_six_point(r: &mut ChaCha8Rng) -> (f64, f64) {
    let n = 6;
    let k = 3;
    loop {
        let py = random_simplex(n, r);
        let cond = random_simplex(n, r);
        let f: Vec<f64> = (0..n).map(|y| (cond[y] / py[y]).ln()).collect();
        let t: Vec<usize> = (0..n).filter(|&y| f[y] > 0.0).collect();
        if t.is_empty() || t.len() == n {
            continue;
        }
        let mass: f64 = t.iter().map(|&y| py[y]).sum();
        let q: Vec<f64> = (0..n)
            .map(|y| if t.contains(&y) { py[y] / mass } else { 0.0 })
            .collect();
        let expect = |neg: &[f64]| {
            let (mut mean_exp, mut est) = (0.0, 0.0);
            for y1 in 0..n {
                for y2 in 0..n {
                    for y3 in 0..n {
                        let w = cond[y1] * neg[y2] * neg[y3];
                        if w == 0.0 {
                            continue;
                        }
                        let s = [f[y1], f[y2], f[y3]];
                        mean_exp += w * s.iter().map(|v| v.exp()).sum::<f64>() / k as f64;
                        est += w * infonce_from_scores(&s).unwrap();
                    }
                }
            }
            (mean_exp, est)
        };
        let (mp, ep) = expect(&py);
        let (mq, eq) = expect(&q);
        return (mq - mp, ep - eq);
    }
}

pub fn check_inequalities() -> Outcome {
    let q = inequalities(200, 43);
    let passed = q.la_bound >= -1e-12
        && q.jensen >= -1e-12
        && q.infonce_minus_ln_k <= 1e-12
        && q.threshold_gap > 0.0
        && q.threshold_sets > 0
        && q.vince6_mean_exp > 0.0
        && q.vince6_estimate > 0.0;
    Outcome::new(
        passed,
        format!(
            "{} instances: LA bound slack {:.2e}, Jensen slack {:.2e}, max(est − ln K) {:.2e}, threshold-set min gap {:.2e} over {} sets, 6-point mean-exp gap {:.2e}, estimate gap {:.2e}",
            q.instances, q.la_bound, q.jensen, q.infonce_minus_ln_k, q.threshold_gap, q.threshold_sets, q.vince6_mean_exp, q.vince6_estimate
        ),
    )
}

pub fn check_permutation(trials: usize) -> Outcome {
    let mut r = rng(47);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = r.random_range(4..48);
        let d = r.random_range(2..10);
        let e = unit_rows(n, d, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let omega = r.random_range(0.05..1.0);
        let (a, b) = check_permutation_invariance(&e, omega, &perm).unwrap();
        worst = worst.max((a - b).abs());
    }
    Outcome::new(worst <= 1e-12, format!("{trials} trials, max |before − after| = {worst:.2e}"))
}

/// Relative gradient error of a loss builder with respect to every input tensor and parameter.
pub fn gradient_error<F>(inputs: &[Tensor], params: &ParamSet, build: F) -> f64
where
    F: Fn(&mut Tape, &ParamSet, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor], params: &ParamSet| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let per = build(&mut tape, params, &vars);
        let total = tape.sum(per).unwrap();
        let value = tape.value(total).item().unwrap();
        let grads = tape.backward(total).unwrap();
        let mut flat = Vec::new();
        for (v, t) in vars.iter().zip(inputs) {
            match grads.wrt(*v) {
                Some(g) => flat.extend_from_slice(g.data()),
                None => flat.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
        for id in params.ids() {
            match grads.param(id) {
                Some(g) => flat.extend_from_slice(g.data()),
                None => flat.extend(std::iter::repeat_n(0.0, params.get(id).len())),
            }
        }
        (value, flat)
    };
    let (_, analytic) = eval(inputs, params);
    let mut x: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    x.extend(params.flatten());
    let numeric = finite_difference(&x, 1e-6, |x| {
        let mut off = 0;
        let rebuilt: Vec<Tensor> = inputs
            .iter()
            .map(|t| {
                let t2 = Tensor::new(t.shape().to_vec(), x[off..off + t.len()].to_vec()).unwrap();
                off += t.len();
                t2
            })
            .collect();
        let mut p = params.clone();
        p.unflatten(&x[off..]).unwrap();
        Ok(eval(&rebuilt, &p).0)
    })
    .unwrap();
    relative_error(&analytic, &numeric, 1e-8)
}

/// Random candidate sets for a batch of `b` anchors over `n ≥ 2` keys: positive `r` first.
pub fn batch_sets(b: usize, n: usize, r: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let k = r.random_range(2..7);
    let den: Vec<Vec<usize>> = (0..b)
        .map(|i| {
            // Samplers never return the anchor as its own negative.
            let negs = (1..k).map(|_| (i + r.random_range(1..n)) % n);
            std::iter::once(i).chain(negs).collect()
        })
        .collect();
    let num: Vec<Vec<usize>> = den
        .iter()
        .map(|d| {
            let l = r.random_range(1..=d.len());
            std::iter::once(d[0]).chain((1..l).map(|_| d[r.random_range(1..d.len())])).collect()
        })
        .collect();
    (den, num)
}

pub const GRADIENT_OBJECTIVES: [&str; 9] = [
    "ir-nce",
    "t-disc",
    "la-nce",
    "ir-softmax",
    "la-original",
    "neighbor-extended",
    "cmc",
    "simclr",
    "bilinear-witness",
];

/// Worst relative error over `instances` random instances of one objective.
pub fn gradient_check(objective: &str, instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let b = r.random_range(2..=8);
        let d = r.random_range(1..=8);
        let n = b + r.random_range(0..6);
        let omega = r.random_range(0.3..1.5);
        let q = normal_rows(b, d, &mut r);
        let keys = normal_rows(n, d, &mut r);
        let (den, num) = batch_sets(b, n, &mut r);
        let anchors: Vec<Vec<usize>> = den.iter().map(|d| vec![d[0]]).collect();
        let empty = ParamSet::new();
        let w = Witness::scaled_dot(d, omega).unwrap();
        let err = match objective {
            "ir-nce" => gradient_error(&[q, keys], &empty, |t, p, v| nce_loss(t, p, &w, v[0], v[1], &den, &anchors).unwrap()),
            "t-disc" => gradient_error(&[q, keys], &empty, |t, p, v| nce_loss(t, p, &w, v[0], v[1], &den, &num).unwrap()),
            "la-nce" => gradient_error(&[q, keys], &empty, |t, p, v| la_nce_loss(t, p, &w, v[0], v[1], &den, &num).unwrap()),
            "ir-softmax" => {
                let k = den[0].len();
                let den: Vec<Vec<usize>> = den.iter().map(|x| x[..k.min(x.len())].to_vec()).collect();
                gradient_error(&[q, keys], &empty, |t, p, v| {
                    ir_softmax_loss(t, p, &w, v[0], v[1], &den, &anchors, DEFAULT_KAPPA).unwrap()
                })
            }
            "la-original" => gradient_error(&[q, keys], &empty, |t, p, v| {
                la_original_loss(t, p, &w, v[0], v[1], &den, &num, DEFAULT_KAPPA, true).unwrap()
            }),
            "neighbor-extended" => gradient_error(&[q, keys], &empty, |t, p, v| {
                neighbor_extended_loss(t, p, &w, v[0], v[1], &den, &num).unwrap()
            }),
            "cmc" => {
                let q2 = normal_rows(b, d, &mut r);
                let k1 = normal_rows(n, d, &mut r);
                gradient_error(&[q, keys, q2, k1], &empty, |t, p, v| {
                    cmc_loss(t, p, &w, v[0], v[1], v[2], v[3], &den).unwrap()
                })
            }
            "simclr" => {
                let second = normal_rows(b, d, &mut r);
                gradient_error(&[q, second], &empty, |t, p, v| simclr_loss(t, p, &w, v[0], v[1]).unwrap())
            }
            "bilinear-witness" => {
                let mut params = ParamSet::new();
                let w = Witness::new(WitnessKind::Bilinear, d, omega, 0, &mut params, &mut r).unwrap();
                let flat: Vec<f64> = params.flatten().iter().map(|x| x + 0.3 * r.sample::<f64, _>(StandardNormal)).collect();
                params.unflatten(&flat).unwrap();
                gradient_error(&[q, keys], &params, |t, p, v| nce_loss(t, p, &w, v[0], v[1], &den, &num).unwrap())
            }
            other => panic!("unknown objective {other}"),
        };
        worst = worst.max(err);
    }
    worst
}

pub fn check_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, obj) in GRADIENT_OBJECTIVES.iter().enumerate() {
        let e = gradient_check(obj, 20, 100 + i as u64);
        worst = worst.max(e);
        parts.push(format!("{obj} {e:.1e}"));
    }
    Outcome::new(worst <= 1e-4, format!("20 instances each, worst relative error {worst:.2e} ({})", parts.join(", ")))
}

/// Witness values at or above 700 make the sampled-softmax form overflow; elsewhere the
/// two forms differ by exactly `ln κ − ln K`.
pub fn check_stability() -> Outcome {
    let mut r = rng(53);
    let params = ParamSet::new();
    let mut overflow_cases = 0;
    let mut overflow_ok = 0;
    let mut worst_gap: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(3..20);
        let d = r.random_range(1..6);
        let witness = Witness::dot(d);
        // Large instance: every score ≥ 700.
        let scale = r.random_range(27.0..40.0);
        let mut big = normal_rows(n, d, &mut r).into_data();
        big.iter_mut().for_each(|v| *v = v.abs() * 0.1 + scale);
        let bank = Tensor::matrix(n, d, big).unwrap();
        let query: Vec<f64> = (0..d).map(|_| scale).collect();
        let anchor = r.random_range(0..n);
        let negs: Vec<usize> = (0..r.random_range(1..n)).map(|_| r.random_range(0..n)).collect();
        let v = AnchorView {
            witness: &witness,
            params: &params,
            bank: &bank,
            query: &query,
            anchor,
        };
        let min_score = v.scores(&(0..n).collect::<Vec<_>>()).unwrap().into_iter().fold(f64::INFINITY, f64::min);
        if min_score >= 700.0 {
            overflow_cases += 1;
            let soft_failed = v.ir_softmax(&negs, DEFAULT_KAPPA).map_or(true, |x| !x.is_finite());
            let nce_finite = v.ir_nce(&negs).is_ok_and(|x| x.is_finite());
            if soft_failed && nce_finite {
                overflow_ok += 1;
            }
        }
        // Moderate instance: both finite.
        let small = normal_rows(n, d, &mut r);
        let q: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        let v = AnchorView {
            witness: &witness,
            params: &params,
            bank: &small,
            query: &q,
            anchor,
        };
        let k = negs.len() as f64 + 1.0;
        let gap = v.ir_softmax(&negs, DEFAULT_KAPPA).unwrap() - v.ir_nce(&negs).unwrap();
        worst_gap = worst_gap.max((gap - (DEFAULT_KAPPA.ln() - k.ln())).abs());
    }
    Outcome::new(
        overflow_cases >= 50 && overflow_ok == overflow_cases && worst_gap <= 1e-9,
        format!("softmax overflowed with nce finite in {overflow_ok}/{overflow_cases} instances with all scores ≥ 700; max |gap − (ln κ − ln K)| = {worst_gap:.1e}"),
    )
}

/// m updates from zero without renormalization equal `(1−α) Σ_j α^{m−j} g_j`.
pub fn check_bank_recurrence() -> Outcome {
    let mut r = rng(59);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let alpha = r.random_range(0.0..1.0);
        let d = r.random_range(1..8);
        let m = r.random_range(1..30);
        let gs = normal_rows(m, d, &mut r);
        let mut bank = MemoryBank::zeros(1, d, alpha, false).unwrap();
        for j in 0..m {
            bank.update(0, gs.row(j)).unwrap();
        }
        for c in 0..d {
            let closed: f64 = (0..m).map(|j| (1.0 - alpha) * alpha.powi((m - 1 - j) as i32) * gs.row(j)[c]).sum();
            worst = worst.max((closed - bank.row(0)[c]).abs());
        }
    }
    Outcome::new(worst <= 1e-12, format!("100 random sequences, max deviation {worst:.1e}"))
}

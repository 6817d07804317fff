use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bank::{candidate_pool, MemoryBank, NegativeSpec};
use crate::error::Result;
use crate::estimators::{infonce_from_scores, Witness};
use crate::ndmath::{finite_difference, relative_error, ParamSet, Tape, Tensor};
use crate::objectives::{check_permutation_invariance, nce_loss, AnchorView, DEFAULT_KAPPA};

/// Outcome of one invariant check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    Tensor::matrix(n, d, data).expect("consistent shape")
}

fn equivalences(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let bank = unit_rows(40, 4, rng);
    let query = unit_rows(1, 4, rng);
    let witness = Witness::scaled_dot(4, 0.2)?;
    let params = ParamSet::new();
    let view = AnchorView {
        witness: &witness,
        params: &params,
        bank: &bank,
        query: query.row(0),
        anchor: 3,
    };
    let negs: Vec<usize> = (0..15).map(|_| rng.random_range(4..40)).collect();
    let close: Vec<usize> = vec![3, negs[0], negs[1], negs[2]];
    let a = (view.ir_nce(&negs)? - view.t_disc(&negs, &[3])?).abs();
    let b_len = (negs.len() + 1) as f64;
    let c_len = close.len() as f64;
    let b = (view.la_nce(&negs, &close)? - view.la_original(&negs, &close, DEFAULT_KAPPA, true)?
        - (c_len.ln() - b_len.ln()))
    .abs();
    let full = candidate_pool(&NegativeSpec::ball(100.0), &bank, query.row(0), 3, None)?;
    let marginal = candidate_pool(&NegativeSpec::marginal(), &bank, query.row(0), 3, None)?;
    let worst = a.max(b);
    Ok((worst <= 1e-10 && full == marginal, format!("max deviation {worst:.2e}, ball(100%) pool equal: {}", full == marginal)))
}

fn infonce_bound(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let k = rng.random_range(2..64);
        let scores: Vec<f64> = (0..k).map(|_| 10.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let est = infonce_from_scores(&scores).unwrap_or(f64::INFINITY);
        worst = worst.max(est - (k as f64).ln());
    }
    (worst <= 1e-12, format!("max estimate − ln K = {worst:.2e}"))
}

fn permutation(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let e = unit_rows(32, 3, rng);
        let mut perm: Vec<usize> = (0..32).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
        let (before, after) = check_permutation_invariance(&e, 0.07, &perm)?;
        worst = worst.max((before - after).abs());
    }
    Ok((worst <= 1e-12, format!("max |before − after| = {worst:.2e}")))
}

fn stability() -> Result<(bool, String)> {
    let bank = Tensor::from_rows(&[[25.0, 0.0], [24.0, 0.0], [24.5, 0.0]])?;
    let witness = Witness::dot(2);
    let params = ParamSet::new();
    let query = [30.0, 0.0];
    let view = AnchorView {
        witness: &witness,
        params: &params,
        bank: &bank,
        query: &query,
        anchor: 0,
    };
    let softmax_failed = view.ir_softmax(&[1, 2], DEFAULT_KAPPA).map_or(true, |v| !v.is_finite());
    let nce_finite = view.ir_nce(&[1, 2])?.is_finite();
    let small = Tensor::from_rows(&[[0.5, 0.1], [0.2, -0.3], [-0.4, 0.4]])?;
    let view = AnchorView { bank: &small, ..view };
    let gap = view.ir_softmax(&[1, 2], DEFAULT_KAPPA)? - view.ir_nce(&[1, 2])?;
    let expected = DEFAULT_KAPPA.ln() - 3f64.ln();
    let ok = softmax_failed && nce_finite && (gap - expected).abs() <= 1e-9;
    Ok((ok, format!("softmax failed at ≥700: {softmax_failed}, nce finite: {nce_finite}, gap error {:.1e}", (gap - expected).abs())))
}

fn bank_recurrence(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let alpha = 0.7;
    let m0: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
    let mut bank = MemoryBank::from_entries(Tensor::matrix(1, 3, m0.clone())?, alpha, false)?;
    let gs: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
    for g in &gs {
        bank.update(0, g)?;
    }
    let t = gs.len() as i32;
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        let mut closed = alpha.powi(t) * m0[c];
        for (s, g) in gs.iter().enumerate() {
            closed += (1.0 - alpha) * alpha.powi(t - 1 - s as i32) * g[c];
        }
        worst = worst.max((closed - bank.row(0)[c]).abs());
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.2e}")))
}

fn gradient(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let (b, n, d) = (3, 6, 3);
    let q0: Vec<f64> = (0..b * d).map(|_| rng.sample(StandardNormal)).collect();
    let keys = unit_rows(n, d, rng);
    let den: Vec<Vec<usize>> = (0..b).map(|r| vec![r, 3, 4, 5, (r + 1) % 3]).collect();
    let num: Vec<Vec<usize>> = (0..b).map(|r| vec![r]).collect();
    let witness = Witness::scaled_dot(d, 0.5)?;
    let params = ParamSet::new();
    let loss = |q: &[f64]| -> Result<(f64, Option<Vec<f64>>)> {
        let mut tape = Tape::new();
        let qv = tape.constant(Tensor::matrix(b, d, q.to_vec())?);
        let kv = tape.constant(keys.clone());
        let per = nce_loss(&mut tape, &params, &witness, qv, kv, &den, &num)?;
        let total = tape.sum(per)?;
        let v = tape.value(total).item()?;
        let g = tape.backward(total)?.wrt(qv).map(|t| t.data().to_vec());
        Ok((v, g))
    };
    let analytic = loss(&q0)?.1.unwrap_or_default();
    let numeric = finite_difference(&q0, 1e-6, |q| Ok(loss(q)?.0))?;
    let err = relative_error(&analytic, &numeric, 1e-8);
    Ok((err <= 1e-4, format!("relative error {err:.2e}")))
}

/// Runs the fast invariant suite.
pub fn run_checks() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<(bool, String)>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(CheckOutcome { name, passed, detail });
    };
    push("exact equivalences", equivalences(&mut rng));
    push("InfoNCE estimate ≤ ln K", Ok(infonce_bound(&mut rng)));
    push("permutation invariance", permutation(&mut rng));
    push("logsumexp stability", stability());
    push("bank recurrence", bank_recurrence(&mut rng));
    push("gradient check", gradient(&mut rng));
    out
}

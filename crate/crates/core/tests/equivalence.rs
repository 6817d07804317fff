//! Identities between objectives that must hold to 1e-10 on matched inputs.

mod common;

use common::{equivalences, rng, unit_rows, Instance};
use rand::Rng;
use vince_core::bank::{sample_negatives, NegativeSpec};
use vince_core::objectives::{cmc_loss, nce_loss, DEFAULT_KAPPA};
use vince_core::{ParamSet, Tape, Witness};

#[test]
fn exact_equivalence_suite() {
    let outcome = common::check_equivalences();
    assert!(outcome.passed, "{}", outcome.detail);
}

#[test]
fn ir_nce_is_t_disc_with_marginal_negatives() {
    assert!(equivalences(50, 1).ir_vs_tdisc <= 1e-10);
}

#[test]
fn ball_at_100_percent_samples_like_marginal() {
    let mut r = rng(2);
    let bank = unit_rows(50, 3, &mut r);
    let q = bank.row(4).to_vec();
    let a = sample_negatives(&NegativeSpec::marginal(), &bank, &q, 4, 500, None, &mut rng(9)).unwrap();
    let b = sample_negatives(&NegativeSpec::ball(100.0), &bank, &q, 4, 500, None, &mut rng(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_member_close_set_matches_no_neighbors() {
    let mut r = rng(3);
    let params = ParamSet::new();
    for _ in 0..50 {
        let inst = Instance::random(&mut r);
        let v = inst.view(&params);
        let with = v.t_disc(&inst.negatives, &[inst.anchor]).unwrap();
        let without = v.ir_nce(&inst.negatives).unwrap();
        assert_eq!(with, without);
    }
}

#[test]
fn la_original_ignores_kappa_and_la_nce_shift_is_counts_only() {
    let mut r = rng(4);
    let params = ParamSet::new();
    for _ in 0..50 {
        let inst = Instance::random(&mut r);
        let v = inst.view(&params);
        let a = v.la_original(&inst.negatives, &inst.close, 1.0, true).unwrap();
        let b = v.la_original(&inst.negatives, &inst.close, DEFAULT_KAPPA * 40.0, true).unwrap();
        assert!((a - b).abs() <= 1e-10);
        let nce = v.la_nce(&inst.negatives, &inst.close).unwrap();
        let shift = (inst.close.len() as f64).ln() - (inst.b_len() as f64).ln();
        assert!((nce - a - shift).abs() <= 1e-10);
    }
}

#[test]
fn ir_softmax_minus_ir_nce_is_ln_kappa_over_k() {
    let mut r = rng(5);
    let params = ParamSet::new();
    for _ in 0..50 {
        let inst = Instance::random(&mut r);
        let v = inst.view(&params);
        let kappa = r.random_range(0.5..5.0);
        let gap = v.ir_softmax(&inst.negatives, kappa).unwrap() - v.ir_nce(&inst.negatives).unwrap();
        assert!((gap - (kappa.ln() - (inst.b_len() as f64).ln())).abs() <= 1e-10);
    }
}

#[test]
fn cmc_summands_agree_on_symmetric_inputs() {
    let mut r = rng(6);
    let e = unit_rows(7, 3, &mut r);
    let w = Witness::scaled_dot(3, 0.2).unwrap();
    let p = ParamSet::new();
    let den: Vec<Vec<usize>> = (0..7).map(|i| vec![i, (i + 1) % 7, (i + 3) % 7]).collect();
    let anchors: Vec<Vec<usize>> = (0..7).map(|i| vec![i]).collect();
    let mut tape = Tape::new();
    let a = tape.constant(e.clone());
    let b = tape.constant(e.clone());
    let half = nce_loss(&mut tape, &p, &w, a, b, &den, &anchors).unwrap();
    let full = cmc_loss(&mut tape, &p, &w, a, b, b, a, &den).unwrap();
    for (h, f) in tape.value(half).data().iter().zip(tape.value(full).data()) {
        assert!((2.0 * h - f).abs() <= 1e-12);
    }
}

#[test]
fn simclr_matches_refreshed_zero_alpha_bank() {
    let mut r = rng(7);
    for _ in 0..30 {
        assert!(common::simclr_vs_zero_alpha_bank(&mut r) <= 1e-10);
    }
}

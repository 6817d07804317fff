//! Synthetic datasets and view functions.

mod common;

use common::rng;
use vince_core::data::{make_blobs, view_rows};
use vince_core::{apply_view, make_spirals, ViewFunction};

#[test]
fn spirals_are_balanced_disjoint_and_boxed() {
    let s = make_spirals(2000, &mut rng(1)).unwrap();
    assert_eq!(s.len(), 2000);
    assert_eq!(s.labels.iter().filter(|&&l| l == 0).count(), 1000);
    assert!(s.points.data().iter().all(|v| (-2.0..=2.0).contains(v)));
    // Arms are disjoint: every point is much closer to its own arm than the other arm,
    // away from the shared center.
    let mut cross = 0;
    for i in 0..2000 {
        let p = s.point(i);
        if p[0].hypot(p[1]) < 0.3 {
            continue;
        }
        let nearest = (0..2000)
            .filter(|&j| j != i)
            .min_by(|&a, &b| {
                let da = (s.point(a)[0] - p[0]).hypot(s.point(a)[1] - p[1]);
                let db = (s.point(b)[0] - p[0]).hypot(s.point(b)[1] - p[1]);
                da.total_cmp(&db)
            })
            .unwrap();
        if s.labels[nearest] != s.labels[i] {
            cross += 1;
        }
    }
    assert!(cross <= 20, "{cross} points have a nearest neighbor on the other arm");
    assert!(make_spirals(7, &mut rng(1)).is_err());
}

#[test]
fn identity_and_zero_noise_are_lossless() {
    let x = [0.3, -1.1, 2.0];
    assert_eq!(apply_view(&ViewFunction::Identity, &x, &mut rng(2)).unwrap(), x);
    assert_eq!(apply_view(&ViewFunction::AdditiveUniform { eta: 0.0 }, &x, &mut rng(2)).unwrap(), x);
}

#[test]
fn uniform_noise_has_mean_half_eta() {
    let mut r = rng(3);
    let eta = 0.8;
    let n = 50_000;
    let mut mean = 0.0;
    for _ in 0..n {
        let v = apply_view(&ViewFunction::AdditiveUniform { eta }, &[1.0], &mut r).unwrap()[0];
        assert!((1.0..1.0 + eta).contains(&v));
        mean += v - 1.0;
    }
    mean /= n as f64;
    // sd of U(0, η) is η/√12.
    assert!((mean - eta / 2.0).abs() < 4.0 * eta / 12f64.sqrt() / (n as f64).sqrt());
}

#[test]
fn channel_and_permutation_views() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let ch = ViewFunction::Channel { selector: vec![3, 0] };
    assert_eq!(apply_view(&ch, &x, &mut rng(4)).unwrap(), vec![4.0, 1.0]);
    let mut p = apply_view(&ViewFunction::PermuteCoordinates, &x, &mut rng(4)).unwrap();
    p.sort_by(f64::total_cmp);
    assert_eq!(p, x);
    assert!(apply_view(&ViewFunction::Channel { selector: vec![9] }, &x, &mut rng(4)).is_err());
    assert!(apply_view(&ViewFunction::AdditiveUniform { eta: -1.0 }, &x, &mut rng(4)).is_err());
}

#[test]
fn view_functions_parse() {
    assert_eq!("identity".parse::<ViewFunction>().unwrap(), ViewFunction::Identity);
    assert_eq!("uniform-noise:0.4".parse::<ViewFunction>().unwrap(), ViewFunction::AdditiveUniform { eta: 0.4 });
    assert!("uniform-noise:-2".parse::<ViewFunction>().is_err());
    assert!("blur".parse::<ViewFunction>().is_err());
}

#[test]
fn blobs_and_view_rows() {
    let b = make_blobs(100, 4, 3, 0.5, 2.0, &mut rng(5)).unwrap();
    assert_eq!(b.class_count(), 4);
    assert_eq!(b.dim(), 3);
    let v = view_rows(&ViewFunction::Identity, &b.points, &[3, 1], &mut rng(6)).unwrap();
    assert_eq!(v.row(0), b.point(3));
    assert_eq!(v.row(1), b.point(1));
}

#[test]
fn datasets_are_seed_deterministic() {
    assert_eq!(make_spirals(100, &mut rng(9)).unwrap(), make_spirals(100, &mut rng(9)).unwrap());
    assert_ne!(make_spirals(100, &mut rng(9)).unwrap(), make_spirals(100, &mut rng(10)).unwrap());
}

mod common;

use common::TruncatedPosterior;
use mlmi::combine::{shrink_eigenvalue, ShrinkageKind, ShrinkageSpec};

const GRID: [f64; 7] = [0.05, 0.1, 0.3, 0.6, 0.9, 1.2, 2.0];

fn mean() -> ShrinkageSpec {
    ShrinkageSpec::of(ShrinkageKind::PosteriorMean)
}

fn median() -> ShrinkageSpec {
    ShrinkageSpec::of(ShrinkageKind::PosteriorMedian)
}

#[test]
fn posterior_mean_matches_quadrature() {
    for d in [5, 25] {
        for &l in &GRID {
            let want = TruncatedPosterior::new(l, d).mean();
            let got = shrink_eigenvalue(l, d, 1, 1, &mean()).unwrap();
            assert!((got - want).abs() < 1e-6, "D={d} λ̂={l}: {got} vs {want}");
        }
    }
}

#[test]
fn posterior_median_matches_bisection() {
    for d in [5, 25] {
        for &l in &GRID {
            let want = TruncatedPosterior::new(l, d).median();
            let got = shrink_eigenvalue(l, d, 1, 1, &median()).unwrap();
            assert!((got - want).abs() < 1e-6, "D={d} λ̂={l}: {got} vs {want}");
        }
    }
}

#[test]
fn small_d_posterior_mean_matches_quadrature() {
    // Non-positive gamma shapes in the closed form.
    for d in [2, 3] {
        for &l in &[0.05, 0.3, 0.9, 2.0] {
            let want = TruncatedPosterior::new(l, d).mean();
            let got = shrink_eigenvalue(l, d, 1, 1, &mean()).unwrap();
            assert!((got - want).abs() < 1e-6, "D={d} λ̂={l}: {got} vs {want}");
        }
    }
}

#[test]
fn spec_reference_points() {
    let m = shrink_eigenvalue(0.1, 25, 1, 1, &mean()).unwrap();
    assert!((m - 0.109).abs() < 5e-4, "{m}");
    let md = shrink_eigenvalue(0.1, 25, 1, 1, &median()).unwrap();
    assert!((md - 0.1028).abs() < 5e-5, "{md}");
}

#[test]
fn every_kind_stays_below_one() {
    let kinds = [
        ShrinkageSpec::new(ShrinkageKind::Simple, 0.95).unwrap(),
        ShrinkageSpec::new(ShrinkageKind::Sheena, 0.95).unwrap(),
        mean(),
        median(),
    ];
    for d in [3, 5, 25] {
        for i in 0..=2000 {
            let l = i as f64 * 0.05;
            for spec in &kinds {
                let v = shrink_eigenvalue(l, d, 2, 1, spec).unwrap();
                assert!((0.0..1.0).contains(&v), "{spec} D={d} λ̂={l}: {v}");
            }
        }
    }
}

#[test]
fn monotone_in_lambda_hat() {
    let kinds = [
        ShrinkageSpec::new(ShrinkageKind::Simple, 0.95).unwrap(),
        ShrinkageSpec::new(ShrinkageKind::Sheena, 0.97).unwrap(),
        mean(),
        median(),
    ];
    for d in [5, 25] {
        for spec in &kinds {
            let mut prev = 0.0;
            for i in 0..=300 {
                let v = shrink_eigenvalue(i as f64 * 0.01, d, 2, 2, spec).unwrap();
                assert!(v >= prev, "{spec} D={d} step {i}");
                prev = v;
            }
        }
    }
}

#[test]
fn large_d_limit() {
    for spec in [mean(), median()] {
        let v = shrink_eigenvalue(0.3, 10_000, 1, 1, &spec).unwrap();
        assert!((v - 0.3).abs() < 1e-3, "{spec}: {v}");
    }
}

#[test]
fn clamp_kinds_hand_arithmetic() {
    let sheena = ShrinkageSpec::new(ShrinkageKind::Sheena, 0.95).unwrap();
    assert_eq!(shrink_eigenvalue(0.9, 5, 2, 1, &sheena).unwrap(), 0.9 * 4.0 / 6.0);
    assert_eq!(shrink_eigenvalue(0.9, 5, 2, 2, &sheena).unwrap(), 0.9);
    assert_eq!(shrink_eigenvalue(0.5, 25, 2, 2, &sheena).unwrap(), 0.5 * 24.0 / 24.0);
    assert_eq!(shrink_eigenvalue(3.0, 25, 2, 1, &sheena).unwrap(), 0.95);
    let simple = ShrinkageSpec::new(ShrinkageKind::Simple, 0.97).unwrap();
    assert_eq!(shrink_eigenvalue(0.971, 5, 2, 1, &simple).unwrap(), 0.97);
    assert_eq!(shrink_eigenvalue(0.969, 5, 2, 1, &simple).unwrap(), 0.969);
}

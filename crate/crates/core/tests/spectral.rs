use std::f64::consts::PI;

use num_complex::Complex64;
use qcp_core::driving::{Anchor, DrivingSystem};
use qcp_core::maps::{central_branch, MapSpec};
use qcp_core::scalar::{Rational, Scalar};
use qcp_core::spectral::{build_ulam, cocycle_multiplier, perturbation_ratio, SpectralConfig};
use qcp_core::targets::TargetFamily;

fn central() -> DrivingSystem {
    DrivingSystem::fixed(MapSpec::Central {
        gamma: "2".into(),
        left: 1,
        right: 1,
    })
    .unwrap()
}

fn half_target(bins: u64) -> TargetFamily {
    TargetFamily::single(Rational::from_ratio(1, 2), Rational::from_ratio(1, 1))
        .unwrap()
        .snapped(bins)
}

fn small_config(bins: usize) -> SpectralConfig {
    SpectralConfig {
        bins,
        burn_in: 10,
        steps: 300,
    }
}

#[test]
fn untwisted_cocycle_has_unit_multipliers() {
    let d = central();
    let f = half_target(512);
    let r = cocycle_multiplier(&d, &f, &Anchor::Fixed, 50, 0.0, &small_config(512)).unwrap();
    assert!(r.multipliers.iter().all(|l| (l - Complex64::new(1.0, 0.0)).norm() < 1e-12));
    assert_eq!(perturbation_ratio(&r, r.mean_target_measure).unwrap().norm() < 1e-10, true);
}

#[test]
fn empty_target_leaves_mass_untouched() {
    let d = central();
    let f = TargetFamily::single(Rational::from_ratio(1, 2), Rational::from_ratio(0, 1)).unwrap();
    let r = cocycle_multiplier(&d, &f, &Anchor::Fixed, 50, 1.0, &small_config(64)).unwrap();
    assert!(r.multipliers.iter().all(|l| *l == Complex64::new(1.0, 0.0)));
    assert!(perturbation_ratio(&r, 0.0).is_err());
}

#[test]
fn power_iteration_matches_dense_eigensolve() {
    let bins = 256;
    let map = central_branch::<f64>(2.0, 1, 1).unwrap();
    let d = central();
    let f = half_target(bins as u64);
    for s in [PI / 2.0, PI] {
        let h = f.target_at::<f64>(&d, &Anchor::Fixed, 0, 32).unwrap().set;
        let dense = build_ulam(&map, bins, Some((&h, s))).unwrap().to_dense();
        let eig = dense.transpose().schur().eigenvalues().expect("complex Schur converges");
        let top = eig.iter().cloned().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
        let r = cocycle_multiplier(&d, &f, &Anchor::Fixed, 32, s, &small_config(bins)).unwrap();
        let last = *r.multipliers.last().unwrap();
        assert!((last - top).norm() < 1e-10, "s={s}: power {last} vs dense {top}");
        assert!(r.multipliers.iter().all(|l| l.norm() <= 1.0 + 1e-10));
    }
}

#[test]
fn multiplier_is_hermitian_in_s() {
    let d = central();
    let f = half_target(512);
    let a = cocycle_multiplier(&d, &f, &Anchor::Fixed, 40, 0.8, &small_config(512)).unwrap();
    let b = cocycle_multiplier(&d, &f, &Anchor::Fixed, 40, -0.8, &small_config(512)).unwrap();
    assert!((a.geometric_mean() - b.geometric_mean().conj()).norm() < 1e-10);
}

#[test]
fn aperiodic_ratio_approaches_one_minus_twist() {
    let d = central();
    let x = qcp_core::scalar::parse_rational("0.1180339887499").unwrap();
    let f = TargetFamily::single(x, Rational::from_ratio(1, 1)).unwrap().snapped(1 << 14);
    let s = PI;
    let want = Complex64::new(2.0, 0.0);
    let cfg = SpectralConfig {
        bins: 1 << 14,
        burn_in: 10,
        steps: 200,
    };
    let mut errs = Vec::new();
    for n in [100u128, 1000] {
        let r = cocycle_multiplier(&d, &f, &Anchor::Fixed, n, s, &cfg).unwrap();
        let ratio = perturbation_ratio(&r, r.mean_target_measure).unwrap();
        errs.push((ratio - want).norm() / want.norm());
    }
    assert!(errs[1] < errs[0] + 1e-12 && errs[1] < 0.1, "{errs:?}");
}

#[test]
fn ulam_is_exact_for_dyadic_map() {
    let map = central_branch::<f64>(2.0, 1, 1).unwrap();
    let op = build_ulam(&map, 8, None).unwrap();
    assert_eq!(op.entry(0, 0), 0.25);
    assert_eq!(op.entry(2, 0), 0.5);
    assert_eq!(op.entry(3, 2), 0.5);
    assert_eq!(op.entry(3, 6), 0.0);
    assert!(Scalar::to_f64(&Rational::from_ratio(1, 4)) == op.entry(0, 3));
}

mod common;

use common::{central_difference, dvec, grid_gap_maximizer, random_box, random_spd, rel_err, rng};
use nalgebra::{DMatrix, DVector};
use ocpec_core::gap::{
    evaluate_gap, gap_gradients, gap_value, scalar_gap_closed_form, skewed_projector, GapParams, ProjectorPath, StageProjector,
};
use ocpec_core::vi::ViSet;
use proptest::prelude::*;
use rand::Rng;

fn unit_interval() -> ViSet {
    ViSet::new_box(dvec(&[-1.0]), dvec(&[1.0])).unwrap()
}

fn scalar(lambda: f64, eta: f64, c: f64) -> (f64, f64, f64, f64) {
    let params = GapParams::identity(c, 1).unwrap();
    let (l, e) = (dvec(&[lambda]), dvec(&[eta]));
    let (w, _) = skewed_projector(&l, &e, &params, &unit_interval(), None, ProjectorPath::Auto).unwrap();
    let phi = gap_value(&l, &e, &w, &params).unwrap();
    let (gl, ge) = gap_gradients(&l, &e, &w, &params);
    (w[0], phi, gl[0], ge[0])
}

#[test]
fn gap_params_validation() {
    assert!(GapParams::identity(0.0, 1).is_err());
    assert!(GapParams::identity(-1.0, 1).is_err());
    assert!(GapParams::new(1.0, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
    assert!(GapParams::new(1.0, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let p = GapParams::new(1.0, a.clone()).unwrap();
    assert!((&a * p.a_inv() - DMatrix::identity(2, 2)).amax() <= 1e-10);
}

#[test]
fn projector_examples() {
    assert_eq!(scalar(0.0, 0.0, 1.0).0, 0.0);
    assert_eq!(scalar(0.0, 2.0, 1.0).0, -1.0);
    assert!((scalar(0.5, 0.1, 0.5).0 - 0.3).abs() <= 1e-15);
    for (l, e, c) in [(0.0, 0.0, 1.0), (0.0, 2.0, 1.0), (0.5, 0.1, 0.5)] {
        let (w_grid, _) = grid_gap_maximizer(l, e, c, -1.0, 1.0, 20_000);
        assert!((scalar(l, e, c).0 - w_grid).abs() <= 1e-4);
    }
}

#[test]
fn gap_value_examples() {
    assert_eq!(scalar(0.0, 0.0, 1.0).1, 0.0);
    let (w, phi, _, _) = scalar(0.0, 0.5, 0.5);
    assert_eq!(w, -1.0);
    assert!((phi - 0.25).abs() <= 1e-15);
    let (w, phi, _, _) = scalar(1.0, -1.0, 0.5);
    assert_eq!(w, 1.0);
    assert_eq!(phi, 0.0);
    for (l, e, c) in [(0.0, 0.5, 0.5), (1.0, -1.0, 0.5)] {
        let (_, best) = grid_gap_maximizer(l, e, c, -1.0, 1.0, 20_000);
        assert!((scalar(l, e, c).1 - best).abs() <= 1e-6);
    }
}

#[test]
fn gradient_examples() {
    assert_eq!(scalar(0.0, 0.0, 1.0).2, 0.0);
    assert_eq!(scalar(0.0, 0.0, 1.0).3, 0.0);
    let (_, _, gl, ge) = scalar(0.0, 2.0, 1.0);
    assert_eq!((gl, ge), (1.0, 1.0));
    let (_, _, gl, ge) = scalar(0.5, 0.1, 0.5);
    assert!(gl.abs() <= 1e-15);
    assert!((ge - 0.2).abs() <= 1e-15);

    // central differences of the value
    let h = 1e-6;
    for (l, e, c) in [(0.0, 2.0, 1.0), (0.5, 0.1, 0.5)] {
        let dl = (scalar(l + h, e, c).1 - scalar(l - h, e, c).1) / (2.0 * h);
        let de = (scalar(l, e + h, c).1 - scalar(l, e - h, c).1) / (2.0 * h);
        assert!(rel_err(dl, scalar(l, e, c).2) <= 1e-6);
        assert!(rel_err(de, scalar(l, e, c).3) <= 1e-6);
    }
}

#[test]
fn closed_form_examples() {
    assert!((scalar_gap_closed_form(0.0, 0.5, 0.5, -1.0, 1.0) - 0.25).abs() <= 1e-15);
    assert_eq!(scalar_gap_closed_form(0.0, 0.0, 0.5, -1.0, 1.0), 0.0);
    assert_eq!(scalar_gap_closed_form(1.0, -1.0, 0.5, -1.0, 1.0), 0.0);
    for (l, e) in [(0.0, 0.5), (0.0, 0.0), (1.0, -1.0)] {
        assert!((scalar_gap_closed_form(l, e, 0.5, -1.0, 1.0) - scalar(l, e, 0.5).1).abs() <= 1e-12);
    }
}

#[test]
fn polyhedral_projector_reports_active_rows() {
    let params = GapParams::identity(1.0, 1).unwrap();
    let poly = unit_interval().to_polyhedral();
    let (l, e) = (dvec(&[0.0]), dvec(&[0.0]));
    let (w, active) = skewed_projector(&l, &e, &params, &poly, None, ProjectorPath::Polyhedral).unwrap();
    assert_eq!((w[0], active.len()), (0.0, 0));
    let e = dvec(&[2.0]);
    let (w, active) = skewed_projector(&l, &e, &params, &poly, None, ProjectorPath::Polyhedral).unwrap();
    assert!((w[0] + 1.0).abs() <= 1e-12);
    assert_eq!(active, vec![0]);
    let (w2, active2) = skewed_projector(&l, &e, &params, &poly, Some(&[1]), ProjectorPath::Polyhedral).unwrap();
    assert!((w2[0] + 1.0).abs() <= 1e-12);
    assert_eq!(active2, vec![0]);
}

#[test]
fn box_fast_path_requires_identity_metric() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let params = GapParams::new(1.0, a).unwrap();
    let set = ViSet::new_box(dvec(&[-1.0, -1.0]), dvec(&[1.0, 1.0])).unwrap();
    let (l, e) = (dvec(&[0.2, 0.1]), dvec(&[3.0, -1.0]));
    assert!(skewed_projector(&l, &e, &params, &set, None, ProjectorPath::BoxFast).is_err());
    // Auto falls back to the QP path
    let auto = skewed_projector(&l, &e, &params, &set, None, ProjectorPath::Auto).unwrap().0;
    let qp = skewed_projector(&l, &e, &params, &set, None, ProjectorPath::Polyhedral).unwrap().0;
    assert_eq!(auto, qp);
}

#[test]
fn nan_inputs_are_rejected() {
    let params = GapParams::identity(1.0, 1).unwrap();
    let r = evaluate_gap(&dvec(&[f64::NAN]), &dvec(&[0.0]), &params, &unit_interval(), None, ProjectorPath::Auto);
    assert!(r.is_err());
}

/// Skewed projection by dense grid search for a 2-D box, used as an oracle for `A ≠ I`.
fn grid_skewed_projection(lambda: &DVector<f64>, eta: &DVector<f64>, params: &GapParams, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let steps = 400;
    let mut best = (f64::NEG_INFINITY, DVector::zeros(2));
    for i in 0..=steps {
        for j in 0..=steps {
            let w = dvec(&[
                l[0] + (u[0] - l[0]) * i as f64 / steps as f64,
                l[1] + (u[1] - l[1]) * j as f64 / steps as f64,
            ]);
            let d = lambda - &w;
            let val = eta.dot(&d) - 0.5 * params.c() * d.dot(&(params.a() * &d));
            if val > best.0 {
                best = (val, w);
            }
        }
    }
    best.1
}

#[test]
fn skewed_projection_matches_grid_search() {
    let mut r = rng(5);
    for _ in 0..10 {
        let (l, u) = random_box(&mut r, 2);
        let params = GapParams::new(r.gen_range(0.3..2.0), random_spd(&mut r, 2, 0.2)).unwrap();
        let set = ViSet::new_box(l.clone(), u.clone()).unwrap();
        let lambda = DVector::from_fn(2, |_, _| r.gen_range(-3.0..3.0));
        let eta = DVector::from_fn(2, |_, _| r.gen_range(-3.0..3.0));
        let (w, _) = skewed_projector(&lambda, &eta, &params, &set, None, ProjectorPath::Auto).unwrap();
        let grid = grid_skewed_projection(&lambda, &eta, &params, &l, &u);
        let cell = (&u - &l).amax() / 400.0;
        assert!((w - grid).amax() <= 2.0 * cell);
    }
}

#[test]
fn gradients_match_finite_differences_away_from_kinks() {
    let mut r = rng(17);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 100 {
        let (l, u) = random_box(&mut r, 2);
        let set = ViSet::new_box(l, u).unwrap().to_polyhedral();
        let params = GapParams::new(r.gen_range(0.3..2.0), random_spd(&mut r, 2, 0.2)).unwrap();
        let lambda = DVector::from_fn(2, |_, _| r.gen_range(-3.0..3.0));
        let eta = DVector::from_fn(2, |_, _| r.gen_range(-3.0..3.0));
        let base = evaluate_gap(&lambda, &eta, &params, &set, None, ProjectorPath::Polyhedral).unwrap();
        let x = DVector::from_iterator(4, lambda.iter().chain(eta.iter()).copied());
        let split = |x: &DVector<f64>| (x.rows(0, 2).into_owned(), x.rows(2, 2).into_owned());
        // resample when the active set changes anywhere on the stencil
        let mut kink = false;
        for i in 0..4 {
            for sign in [-1.0, 1.0] {
                let mut p = x.clone();
                p[i] += sign * h;
                let (pl, pe) = split(&p);
                let e = evaluate_gap(&pl, &pe, &params, &set, None, ProjectorPath::Polyhedral).unwrap();
                kink |= e.active_set != base.active_set;
            }
        }
        if kink {
            continue;
        }
        let value = |x: &DVector<f64>| {
            let (pl, pe) = split(x);
            evaluate_gap(&pl, &pe, &params, &set, None, ProjectorPath::Polyhedral).unwrap().phi
        };
        let fd = central_difference(value, &x, h);
        let analytic: Vec<f64> = base.grad_lambda.iter().chain(base.grad_eta.iter()).copied().collect();
        for i in 0..4 {
            assert!(rel_err(fd[i], analytic[i]) <= 1e-6, "component {i}: fd {} vs {}", fd[i], analytic[i]);
        }
        checked += 1;
    }
}

#[test]
fn stage_projector_serial_and_parallel_agree() {
    let set = ViSet::new_box(dvec(&[-1.0, -0.5]), dvec(&[1.0, 2.0])).unwrap().to_polyhedral();
    let params = GapParams::identity(1.0, 2).unwrap();
    let mut r = rng(3);
    let inputs: Vec<(DVector<f64>, DVector<f64>)> = (0..30)
        .map(|_| {
            (
                DVector::from_fn(2, |_, _| r.gen_range(-2.0..2.0)),
                DVector::from_fn(2, |_, _| r.gen_range(-2.0..2.0)),
            )
        })
        .collect();
    let mut serial = StageProjector::new(params.clone(), set.clone(), ProjectorPath::Polyhedral, false).unwrap();
    let mut parallel = StageProjector::new(params, set, ProjectorPath::Polyhedral, true).unwrap();
    for _ in 0..2 {
        let a = serial.evaluate(&inputs).unwrap();
        let b = parallel.evaluate(&inputs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((&x.omega_hat - &y.omega_hat).amax() <= 1e-12);
            assert!((x.phi - y.phi).abs() <= 1e-12);
        }
    }
}

fn stored_value_identity(e: &ocpec_core::gap::GapEvaluation, lambda: &DVector<f64>, eta: &DVector<f64>, params: &GapParams) -> f64 {
    let d = lambda - &e.omega_hat;
    eta.dot(&d) - 0.5 * params.c() * d.dot(&(params.a() * &d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn box_and_polyhedral_paths_agree(
        seed in 0u64..10_000,
        lambda in prop::collection::vec(-3.0..3.0f64, 2),
        eta in prop::collection::vec(-3.0..3.0f64, 2),
        c in 0.1..3.0f64,
    ) {
        let (l, u) = random_box(&mut rng(seed), 2);
        let set = ViSet::new_box(l, u).unwrap();
        let poly = set.to_polyhedral();
        let params = GapParams::identity(c, 2).unwrap();
        let (lambda, eta) = (dvec(&lambda), dvec(&eta));
        let a = evaluate_gap(&lambda, &eta, &params, &set, None, ProjectorPath::BoxFast).unwrap();
        let b = evaluate_gap(&lambda, &eta, &params, &poly, None, ProjectorPath::Polyhedral).unwrap();
        prop_assert!((&a.omega_hat - &b.omega_hat).amax() <= 1e-8);
        prop_assert!((a.phi - b.phi).abs() <= 1e-8);
    }

    #[test]
    fn gap_is_nonnegative_on_the_set(
        seed in 0u64..10_000,
        t in prop::collection::vec(0.0..=1.0f64, 2),
        eta in prop::collection::vec(-5.0..5.0f64, 2),
        c in 0.1..3.0f64,
        skew in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let (l, u) = random_box(&mut r, 2);
        let set = ViSet::new_box(l.clone(), u.clone()).unwrap();
        let params = if skew { GapParams::new(c, random_spd(&mut r, 2, 0.1)).unwrap() } else { GapParams::identity(c, 2).unwrap() };
        let lambda = DVector::from_fn(2, |i, _| l[i] + t[i] * (u[i] - l[i]));
        let eta = dvec(&eta);
        let e = evaluate_gap(&lambda, &eta, &params, &set, None, ProjectorPath::Auto).unwrap();
        prop_assert!(e.phi >= -1e-10);
        prop_assert!(set.contains(&e.omega_hat, 1e-9));
        prop_assert_eq!(e.phi, stored_value_identity(&e, &lambda, &eta, &params));
    }

    #[test]
    fn closed_form_equals_projector(
        lambda in -3.0..3.0f64,
        eta in -3.0..3.0f64,
        c in 0.1..3.0f64,
        lo in -2.0..0.0f64,
        width in 0.1..3.0f64,
    ) {
        let hi = lo + width;
        let set = ViSet::new_box(dvec(&[lo]), dvec(&[hi])).unwrap();
        let params = GapParams::identity(c, 1).unwrap();
        let e = evaluate_gap(&dvec(&[lambda]), &dvec(&[eta]), &params, &set, None, ProjectorPath::Auto).unwrap();
        let cf = scalar_gap_closed_form(lambda, eta, c, lo, hi);
        prop_assert!((cf - e.phi).abs() <= 1e-12 * (1.0 + cf.abs()));
    }
}

mod common;

use common::qp_oracle::{enumeration_oracle, independent_kkt_residual, random_qp};
use common::{dvec, random_box, random_spd, rng};
use nalgebra::{DMatrix, DVector};
use ocpec_core::gap::{skewed_projector, GapParams, ProjectorPath};
use ocpec_core::linalg::SparseMatrix;
use ocpec_core::qp::{solve_penalty_qp, solve_projection_qp, solve_sparse_qp, QpStatus, SparseQp};
use ocpec_core::vi::ViSet;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn sparse_qp_examples() {
    let one = |h: f64, g: f64, rows: Vec<(usize, usize, f64)>, b: Vec<f64>| {
        let m = b.len();
        SparseQp::new(
            SparseMatrix::from_triplets(1, 1, vec![(0, 0, h)]),
            vec![g],
            SparseMatrix::zeros(0, 1),
            vec![],
            SparseMatrix::from_triplets(m, 1, rows),
            b,
        )
        .unwrap()
    };
    let free = SparseQp::new(
        SparseMatrix::identity(2),
        vec![-1.0, -1.0],
        SparseMatrix::zeros(0, 2),
        vec![],
        SparseMatrix::zeros(0, 2),
        vec![],
    )
    .unwrap();
    let sol = solve_sparse_qp(&free, None, 1e-9, 100);
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((dvec(&sol.primal) - dvec(&[1.0, 1.0])).amax() <= 1e-9);

    // ½x² − x with x ≤ 0.5
    let sol = solve_sparse_qp(&one(1.0, -1.0, vec![(0, 0, -1.0)], vec![-0.5]), None, 1e-9, 100);
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.primal[0] - 0.5).abs() <= 1e-8);
    assert!((sol.in_multipliers[0] - 0.5).abs() <= 1e-8);

    let sol = solve_sparse_qp(&one(1.0, -1.0, vec![(0, 0, -1.0), (1, 0, -1.0)], vec![-0.5, -0.5]), None, 1e-9, 100);
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.primal[0] - 0.5).abs() <= 1e-8);
    assert!((sol.in_multipliers.iter().sum::<f64>() - 0.5).abs() <= 1e-8);
    assert!(sol.in_multipliers.iter().all(|&m| m >= -1e-10));
}

#[test]
fn inconsistent_constraints_are_reported_infeasible() {
    let qp = SparseQp::new(
        SparseMatrix::identity(2),
        vec![0.0, 0.0],
        SparseMatrix::from_triplets(1, 2, vec![(0, 0, 1.0), (0, 1, 1.0)]),
        vec![1.0],
        SparseMatrix::from_triplets(2, 2, vec![(0, 0, -1.0), (1, 1, -1.0)]),
        vec![0.0, 0.0],
    )
    .unwrap();
    // x₀ + x₁ = 1 with x ≤ 0 has no solution
    assert_eq!(solve_sparse_qp(&qp, None, 1e-9, 200).status, QpStatus::Infeasible);
}

#[test]
fn penalty_step_balances_inconsistent_rows() {
    // x ≥ 1 and x ≤ 0: the least-squares compromise is 0.5
    let qp = SparseQp::new(
        SparseMatrix::from_triplets(1, 1, vec![(0, 0, 1e-8)]),
        vec![0.0],
        SparseMatrix::zeros(0, 1),
        vec![],
        SparseMatrix::from_triplets(2, 1, vec![(0, 0, 1.0), (1, 0, -1.0)]),
        vec![1.0, 0.0],
    )
    .unwrap();
    let sol = solve_penalty_qp(&qp, 1e6, 50);
    assert!((sol.primal[0] - 0.5).abs() <= 1e-6);
    assert!(sol.in_multipliers.iter().all(|&m| m >= 0.0));
}

#[test]
fn penalty_step_tends_to_the_qp_solution_on_feasible_problems() {
    let mut r = rng(41);
    for _ in 0..20 {
        let qp = random_qp(&mut r, false);
        let oracle = enumeration_oracle(&qp);
        let sol = solve_penalty_qp(&qp.sparse(), 1e9, 200);
        assert!((dvec(&sol.primal) - &oracle).amax() <= 1e-5);
    }
}

#[test]
fn random_qps_match_enumeration_oracle() {
    let mut r = rng(2024);
    for i in 0..100 {
        let qp = random_qp(&mut r, i < 20);
        let oracle = enumeration_oracle(&qp);
        let sol = solve_sparse_qp(&qp.sparse(), None, 1e-9, 200);
        assert_eq!(sol.status, QpStatus::Optimal, "QP {i}");
        assert!((dvec(&sol.primal) - &oracle).amax() <= 1e-6, "QP {i}");
        assert!(independent_kkt_residual(&qp, &sol) <= 1e-9, "QP {i}");
        assert!(sol.in_multipliers.iter().all(|&m| m >= -1e-10));
    }
}

#[test]
fn warm_start_never_increases_the_residual() {
    let mut r = rng(99);
    for _ in 0..30 {
        let degenerate = r.gen_bool(0.3);
        let qp = random_qp(&mut r, degenerate).sparse();
        let rough = solve_sparse_qp(&qp, None, 1e-9, 3);
        let entry = qp.kkt_residuals(&rough.primal, &rough.eq_multipliers, &rough.in_multipliers).max();
        let refined = solve_sparse_qp(&qp, Some(&rough), 1e-9, 200);
        assert!(refined.kkt_residual <= entry);
        let again = solve_sparse_qp(&qp, Some(&refined), 1e-9, 200);
        assert!(again.kkt_residual <= refined.kkt_residual);
    }
}

fn interval_rows() -> ViSet {
    ViSet::new_box(dvec(&[-1.0]), dvec(&[1.0])).unwrap().to_polyhedral()
}

#[test]
fn projection_qp_examples() {
    let a = DMatrix::identity(1, 1);
    let k = interval_rows();
    let sol = solve_projection_qp(&a, 1.0, &dvec(&[0.0]), &dvec(&[0.0]), &k, None).unwrap();
    assert_eq!(sol.omega[0], 0.0);
    assert!(sol.active_set.is_empty());

    let sol = solve_projection_qp(&a, 1.0, &dvec(&[0.0]), &dvec(&[2.0]), &k, None).unwrap();
    assert!((sol.omega[0] + 1.0).abs() <= 1e-12);
    assert_eq!(sol.active_set, vec![0]);

    let warm = solve_projection_qp(&a, 1.0, &dvec(&[0.0]), &dvec(&[2.0]), &k, Some(&[1])).unwrap();
    assert!((warm.omega[0] + 1.0).abs() <= 1e-12);
    assert_eq!(warm.active_set, vec![0]);
}

#[test]
fn projection_qp_solves_general_polytopes() {
    // triangle λ₁ ≥ 0, λ₂ ≥ 0, λ₁ + λ₂ ≤ 1; A = I, c = 1, η = 0 gives the Euclidean projection
    let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
    let k = ViSet::polyhedral(m, dvec(&[0.0, 0.0, 1.0])).unwrap();
    let a = DMatrix::identity(2, 2);
    let sol = solve_projection_qp(&a, 1.0, &dvec(&[1.0, 1.0]), &dvec(&[0.0, 0.0]), &k, None).unwrap();
    assert!((sol.omega - dvec(&[0.5, 0.5])).amax() <= 1e-12);
    assert_eq!(sol.active_set, vec![2]);
    let sol = solve_projection_qp(&a, 1.0, &dvec(&[2.0, -1.0]), &dvec(&[0.0, 0.0]), &k, None).unwrap();
    assert!((sol.omega - dvec(&[1.0, 0.0])).amax() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn projection_qp_matches_box_clamp(
        seed in 0u64..10_000,
        lambda in prop::collection::vec(-4.0..4.0f64, 3),
        eta in prop::collection::vec(-4.0..4.0f64, 3),
        warm in prop::collection::vec(0usize..6, 0..4),
    ) {
        let (l, u) = random_box(&mut rng(seed), 3);
        let set = ViSet::new_box(l.clone(), u.clone()).unwrap();
        let params = GapParams::identity(1.0, 3).unwrap();
        let (lambda, eta) = (dvec(&lambda), dvec(&eta));
        let mut warm = warm;
        warm.sort_unstable();
        warm.dedup();
        let qp = solve_projection_qp(&DMatrix::identity(3, 3), 1.0, &lambda, &eta, &set.to_polyhedral(), Some(&warm)).unwrap();
        let (clamp, _) = skewed_projector(&lambda, &eta, &params, &set, None, ProjectorPath::BoxFast).unwrap();
        prop_assert!((qp.omega - clamp).amax() <= 1e-8);
    }

    #[test]
    fn projection_qp_warm_start_does_not_change_the_answer(
        seed in 0u64..10_000,
        warm in prop::collection::vec(0usize..4, 0..4),
    ) {
        let mut r = rng(seed);
        let (l, u) = random_box(&mut r, 2);
        let set = ViSet::new_box(l, u).unwrap().to_polyhedral();
        let a = random_spd(&mut r, 2, 0.2);
        let c = r.gen_range(0.2..2.0);
        let lambda = DVector::from_fn(2, |_, _| r.gen_range(-3.0..3.0));
        let eta = DVector::from_fn(2, |_, _| r.gen_range(-3.0..3.0));
        let mut warm = warm;
        warm.sort_unstable();
        warm.dedup();
        let cold = solve_projection_qp(&a, c, &lambda, &eta, &set, None).unwrap();
        let hot = solve_projection_qp(&a, c, &lambda, &eta, &set, Some(&warm)).unwrap();
        prop_assert!((cold.omega - hot.omega).amax() <= 1e-9);
    }
}

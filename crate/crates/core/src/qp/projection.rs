use nalgebra::{DMatrix, DVector};

use crate::vi::ViSet;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProjectionSolution {
    pub omega: DVector<f64>,
    /// Working set at the solution, sorted.
    pub active_set: Vec<usize>,
    pub pivots: usize,
    /// True when the warm start was rejected or exceeded its pivot budget.
    pub cold_started: bool,
}

fn err(reason: impl Into<String>) -> Error {
    Error::Projection {
        context: "projection".into(),
        reason: reason.into(),
    }
}

/// Maximizer of `−(c/2) ωᵀAω − (η − cAλ)ᵀω` over `{ω | Gω + g ≥ 0}`, i.e. the skewed
/// projection `Π_{K,A}(λ − A⁻¹η / c)`.
///
/// A warm working set is tried first and given at most `3·n_g` pivots; otherwise the
/// method restarts from the set's stored feasible anchor with an empty working set.
pub fn solve_projection_qp(
    a: &DMatrix<f64>,
    c: f64,
    lambda: &DVector<f64>,
    eta: &DVector<f64>,
    set: &ViSet,
    warm_active_set: Option<&[usize]>,
) -> Result<ProjectionSolution> {
    let n = lambda.len();
    if a.nrows() != n || a.ncols() != n || eta.len() != n || set.dim() != n {
        return Err(err("dimension mismatch"));
    }
    if !(c > 0.0) {
        return Err(err("c must be positive"));
    }
    let hess = a * c;
    let lin = eta - &hess * lambda;
    let problem = DenseProjection {
        hess,
        lin,
        rows: set.rows().matrix(),
        offset: set.rows().offset(),
    };
    let n_g = problem.rows.nrows();

    if let Some(warm) = warm_active_set {
        let mut working = Vec::new();
        for &i in warm {
            if i < n_g && !working.contains(&i) && problem.independent_with(&working, i) {
                working.push(i);
            }
        }
        if let Some((start, _)) = problem.eqp(&working) {
            if problem.is_feasible(&start) {
                if let Some((omega, working, pivots)) = problem.active_set_loop(start, working, 3 * n_g) {
                    return Ok(finish(omega, working, pivots, false));
                }
            }
        }
    }

    let cap = 50 * (n_g + n) + 100;
    let (omega, working, pivots) = problem
        .active_set_loop(set.anchor().clone(), Vec::new(), cap)
        .ok_or_else(|| err("pivot limit reached"))?;
    Ok(finish(omega, working, pivots, warm_active_set.is_some()))
}

fn finish(omega: DVector<f64>, mut working: Vec<usize>, pivots: usize, cold_started: bool) -> ProjectionSolution {
    working.sort_unstable();
    ProjectionSolution {
        omega,
        active_set: working,
        pivots,
        cold_started,
    }
}

struct DenseProjection<'a> {
    hess: DMatrix<f64>,
    lin: DVector<f64>,
    rows: &'a DMatrix<f64>,
    offset: &'a DVector<f64>,
}

impl DenseProjection<'_> {
    fn slack(&self, i: usize, omega: &DVector<f64>) -> f64 {
        self.rows.row(i).dot(&omega.transpose()) + self.offset[i]
    }

    fn row_scale(&self, i: usize, omega: &DVector<f64>) -> f64 {
        1.0 + self.offset[i].abs() + self.rows.row(i).norm() * omega.amax()
    }

    fn is_feasible(&self, omega: &DVector<f64>) -> bool {
        (0..self.rows.nrows()).all(|i| self.slack(i, omega) >= -1e-12 * self.row_scale(i, omega))
    }

    fn independent_with(&self, working: &[usize], candidate: usize) -> bool {
        let n = self.rows.ncols();
        if working.len() >= n {
            return false;
        }
        let mut m = DMatrix::zeros(working.len() + 1, n);
        for (k, &i) in working.iter().chain(std::iter::once(&candidate)).enumerate() {
            m.set_row(k, &self.rows.row(i));
        }
        let sv = m.singular_values();
        let max = sv.max();
        max > 0.0 && sv.min() > 1e-10 * max
    }

    /// Minimizer with the working rows held as equalities, plus their multipliers.
    fn eqp(&self, working: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.hess.nrows();
        let k = working.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.hess);
        rhs.rows_mut(0, n).copy_from(&(-&self.lin));
        for (r, &i) in working.iter().enumerate() {
            for j in 0..n {
                let g = self.rows[(i, j)];
                kkt[(n + r, j)] = g;
                kkt[(j, n + r)] = -g;
            }
            rhs[n + r] = -self.offset[i];
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
    }

    fn active_set_loop(
        &self,
        mut omega: DVector<f64>,
        mut working: Vec<usize>,
        cap: usize,
    ) -> Option<(DVector<f64>, Vec<usize>, usize)> {
        let n_g = self.rows.nrows();
        let mut pivots = 0;
        loop {
            let (target, multipliers) = self.eqp(&working)?;
            let step = &target - &omega;
            if step.amax() <= 1e-13 * (1.0 + omega.amax()) {
                omega = target;
                let worst = multipliers
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, &m)| (k, m));
                let scale = 1.0 + self.lin.amax();
                match worst {
                    Some((k, m)) if m < -1e-12 * scale => {
                        working.remove(k);
                    }
                    _ => return Some((omega, working, pivots)),
                }
            } else {
                let mut alpha = 1.0;
                let mut blocking = None;
                for i in (0..n_g).filter(|i| !working.contains(i)) {
                    let gp = self.rows.row(i).dot(&step.transpose());
                    if gp < 0.0 {
                        let ratio = self.slack(i, &omega).max(0.0) / -gp;
                        if ratio < alpha {
                            alpha = ratio;
                            blocking = Some(i);
                        }
                    }
                }
                match blocking {
                    Some(i) => {
                        omega += step * alpha;
                        working.push(i);
                    }
                    None => {
                        omega = target;
                        continue;
                    }
                }
            }
            pivots += 1;
            if pivots > cap {
                return None;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval_rows() -> ViSet {
        // ω + 1 ≥ 0, −ω + 1 ≥ 0
        ViSet::polyhedral(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap()
    }

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    #[test]
    fn interior_point_has_empty_active_set() {
        let set = unit_interval_rows();
        let sol = solve_projection_qp(&DMatrix::identity(1, 1), 1.0, &scalar(0.0), &scalar(0.0), &set, None).unwrap();
        assert!(sol.omega[0].abs() < 1e-14);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn lower_row_becomes_active() {
        let set = unit_interval_rows();
        let sol = solve_projection_qp(&DMatrix::identity(1, 1), 1.0, &scalar(0.0), &scalar(2.0), &set, None).unwrap();
        assert_eq!(sol.omega[0], -1.0);
        assert_eq!(sol.active_set, vec![0]);
    }

    #[test]
    fn wrong_warm_start_still_converges() {
        let set = unit_interval_rows();
        let sol = solve_projection_qp(&DMatrix::identity(1, 1), 1.0, &scalar(0.0), &scalar(2.0), &set, Some(&[1])).unwrap();
        assert_eq!(sol.omega[0], -1.0);
        assert_eq!(sol.active_set, vec![0]);
    }

    #[test]
    fn correct_warm_start_needs_no_pivots() {
        let set = unit_interval_rows();
        let sol = solve_projection_qp(&DMatrix::identity(1, 1), 1.0, &scalar(0.3), &scalar(2.0), &set, Some(&[0])).unwrap();
        assert_eq!(sol.omega[0], -1.0);
        assert_eq!(sol.pivots, 0);
        assert!(!sol.cold_started);
    }

    #[test]
    fn skewed_metric_on_a_triangle() {
        // K = {ω ≥ 0, ω₁ + ω₂ ≤ 1}; project (2, 2) under A = diag(1, 4)
        let set = ViSet::polyhedral(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
        )
        .unwrap();
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let target = DVector::from_vec(vec![2.0, 2.0]);
        let sol = solve_projection_qp(&a, 1.0, &target, &DVector::zeros(2), &set, None).unwrap();
        // the minimizer along ω₁ + ω₂ = 1 has ω₁ = −0.4, so the vertex (0, 1) wins
        assert!((sol.omega[0] - 0.0).abs() < 1e-12 && (sol.omega[1] - 1.0).abs() < 1e-12, "{}", sol.omega);
    }
}

use nalgebra::{DMatrix, DVector};
use ocpec_core::linalg::SparseMatrix;
use ocpec_core::qp::{QpSolution, SparseQp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{dvec, random_spd};

pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl DenseQp {
    pub fn sparse(&self) -> SparseQp {
        SparseQp::new(
            SparseMatrix::from_dense(&self.h),
            self.g.as_slice().to_vec(),
            SparseMatrix::from_dense(&self.a_eq),
            self.b_eq.as_slice().to_vec(),
            SparseMatrix::from_dense(&self.a_in),
            self.b_in.as_slice().to_vec(),
        )
        .unwrap()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        (&self.a_eq * x - &self.b_eq).amax() <= tol && (&self.a_in * x - &self.b_in).iter().all(|&v| v >= -tol)
    }
}

/// Minimizer of the objective with the given inequality rows held as equalities,
/// via a least-squares solve of the (possibly singular) KKT system.
pub fn equality_qp(qp: &DenseQp, active: &[usize]) -> Option<DVector<f64>> {
    let n = qp.h.nrows();
    let rows: Vec<DVector<f64>> = (0..qp.a_eq.nrows())
        .map(|r| qp.a_eq.row(r).transpose())
        .chain(active.iter().map(|&r| qp.a_in.row(r).transpose()))
        .collect();
    let rhs_c: Vec<f64> = qp.b_eq.iter().copied().chain(active.iter().map(|&r| qp.b_in[r])).collect();
    let m = rows.len();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&qp.h);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..n {
            k[(n + i, j)] = row[j];
            k[(j, n + i)] = row[j];
        }
    }
    let mut rhs = DVector::zeros(n + m);
    for j in 0..n {
        rhs[j] = -qp.g[j];
    }
    for i in 0..m {
        rhs[n + i] = rhs_c[i];
    }
    let sol = k.clone().svd(true, true).solve(&rhs, 1e-11).ok()?;
    if (&k * &sol - &rhs).amax() > 1e-8 {
        return None;
    }
    Some(sol.rows(0, n).into_owned())
}

/// Exhaustive active-set enumeration: the best feasible candidate over all subsets.
pub fn enumeration_oracle(qp: &DenseQp) -> DVector<f64> {
    let mi = qp.a_in.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << mi) {
        let active: Vec<usize> = (0..mi).filter(|r| mask & (1 << r) != 0).collect();
        if let Some(x) = equality_qp(qp, &active) {
            if qp.feasible(&x, 1e-9) {
                let f = qp.objective(&x);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, x));
                }
            }
        }
    }
    best.expect("feasible QP").1
}

pub fn random_qp(r: &mut ChaCha8Rng, degenerate: bool) -> DenseQp {
    let n = r.gen_range(1..=8);
    let me = r.gen_range(0..=n.min(2));
    let mi = r.gen_range(1..=6);
    let h = random_spd(r, n, 0.1);
    let g = DVector::from_fn(n, |_, _| r.gen_range(-3.0..3.0));
    let a_eq = DMatrix::from_fn(me, n, |_, _| r.gen_range(-1.0..1.0));
    let mut a_in = DMatrix::from_fn(mi, n, |_, _| r.gen_range(-1.0..1.0));
    let x_feas = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &x_feas;
    let slack = DVector::from_fn(mi, |_, _| if r.gen_bool(0.4) { 0.0 } else { r.gen_range(0.0..1.0) });
    let mut b_in = &a_in * &x_feas - slack;
    if degenerate {
        // a duplicated row and a scaled copy of another, both tight at x_feas
        let src = r.gen_range(0..mi);
        let scale = r.gen_range(0.5..3.0);
        let extra_rows = [a_in.row(src).into_owned(), a_in.row(0).into_owned() * scale];
        let extra_rhs = [b_in[src], b_in[0] * scale];
        let base = a_in.nrows();
        a_in = a_in.insert_rows(base, 2, 0.0);
        b_in = b_in.insert_rows(base, 2, 0.0);
        for k in 0..2 {
            a_in.set_row(base + k, &extra_rows[k]);
            b_in[base + k] = extra_rhs[k];
        }
    }
    DenseQp { h, g, a_eq, b_eq, a_in, b_in }
}

/// KKT residual computed here, independently of the solver's own bookkeeping.
pub fn independent_kkt_residual(qp: &DenseQp, sol: &QpSolution) -> f64 {
    let x = dvec(&sol.primal);
    let y = dvec(&sol.eq_multipliers);
    let z = dvec(&sol.in_multipliers);
    let stat = &qp.h * &x + &qp.g + qp.a_eq.transpose() * &y - qp.a_in.transpose() * &z;
    let eq = &qp.a_eq * &x - &qp.b_eq;
    let slack = &qp.a_in * &x - &qp.b_in;
    let infeas = slack.iter().fold(0.0_f64, |m, &v| m.max(-v));
    let comp = slack.component_mul(&z).amax();
    let sign = z.iter().fold(0.0_f64, |m, &v| m.max(-v));
    stat.amax().max(eq.amax()).max(infeas).max(comp).max(sign)
}

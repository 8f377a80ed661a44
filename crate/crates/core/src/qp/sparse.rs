use super::{QpSolution, QpStatus, SparseQp};
use crate::linalg::{dot, norm_inf, BandedLdlt};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Absolute tolerance on every KKT residual component.
    pub tol: f64,
    /// Interior-point iterations.
    pub max_iter: usize,
    /// Upper bound of the primal and dual proximal regularization.
    pub reg_max: f64,
    /// Floor the regularization is driven down to.
    pub reg_min: f64,
    /// Iterative refinement steps against the unregularized system.
    pub refinement_steps: usize,
    /// Tolerance of the normalized Farkas certificate.
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            reg_max: 1e-8,
            reg_min: 1e-13,
            refinement_steps: 3,
            infeasibility_tol: 1e-5,
        }
    }
}

pub fn solve_sparse_qp(qp: &SparseQp, warm: Option<&QpSolution>, tol: f64, max_iter: usize) -> QpSolution {
    let settings = QpSettings {
        tol,
        max_iter,
        ..QpSettings::default()
    };
    solve_sparse_qp_with(qp, warm, &settings)
}

/// Node ordering of the quasi-definite matrix `[H, Eᵀ, Cᵀ; E, −D_E, 0; C, 0, −D_C]`.
///
/// Each constraint row is placed right after the last variable it touches. For
/// stage-structured problems this interleaves stage variables with stage rows and
/// keeps the matrix within a narrow band.
struct KktLayout {
    pos: Vec<usize>,
    bandwidth: usize,
}

impl KktLayout {
    fn new(qp: &SparseQp) -> Self {
        let (n, me, mi) = (qp.num_vars(), qp.num_eq(), qp.num_in());
        let mut keys: Vec<(usize, usize, usize)> = Vec::with_capacity(n + me + mi);
        keys.extend((0..n).map(|j| (j, 0, j)));
        for r in 0..me {
            let last = qp.a_eq.row(r).map(|(c, _)| c).max().unwrap_or(0);
            keys.push((last, 1, n + r));
        }
        for r in 0..mi {
            let last = qp.a_in.row(r).map(|(c, _)| c).max().unwrap_or(0);
            keys.push((last, 2, n + me + r));
        }
        keys.sort_unstable();
        let mut pos = vec![0; n + me + mi];
        for (p, &(_, _, node)) in keys.iter().enumerate() {
            pos[node] = p;
        }
        let mut bandwidth = 0;
        for (r, c, _) in qp.hessian.iter() {
            bandwidth = bandwidth.max(pos[r].abs_diff(pos[c]));
        }
        for (r, c, _) in qp.a_eq.iter() {
            bandwidth = bandwidth.max(pos[n + r].abs_diff(pos[c]));
        }
        for (r, c, _) in qp.a_in.iter() {
            bandwidth = bandwidth.max(pos[n + me + r].abs_diff(pos[c]));
        }
        Self { pos, bandwidth }
    }
}

/// Banded assembly and solves of `[H + δ_p I, Eᵀ, Cᵀ; E, −d_E, 0; C, 0, −d_C]`.
struct KktSystem<'a> {
    qp: &'a SparseQp,
    layout: KktLayout,
    band: BandedLdlt,
}

impl<'a> KktSystem<'a> {
    fn new(qp: &'a SparseQp) -> Self {
        let layout = KktLayout::new(qp);
        let band = BandedLdlt::zeros(qp.num_vars() + qp.num_eq() + qp.num_in(), layout.bandwidth);
        Self { qp, layout, band }
    }

    /// `d_in[r] = None` drops row `r` from the coupling and puts −1 on its diagonal.
    fn factor(&mut self, primal_reg: f64, d_eq: &[f64], d_in: &[Option<f64>]) -> bool {
        let qp = self.qp;
        let (n, me) = (qp.num_vars(), qp.num_eq());
        let pos = &self.layout.pos;
        self.band.clear();
        for (r, c, v) in qp.hessian.iter() {
            if r >= c {
                self.band.add(pos[r], pos[c], v);
            }
        }
        for j in 0..n {
            self.band.add(pos[j], pos[j], primal_reg);
        }
        for (r, &d) in d_eq.iter().enumerate() {
            let node = pos[n + r];
            for (c, v) in qp.a_eq.row(r) {
                self.band.add(node, pos[c], v);
            }
            self.band.add(node, node, -d);
        }
        for (r, d) in d_in.iter().enumerate() {
            let node = pos[n + me + r];
            match d {
                Some(d) => {
                    for (c, v) in qp.a_in.row(r) {
                        self.band.add(node, pos[c], v);
                    }
                    self.band.add(node, node, -d);
                }
                None => self.band.add(node, node, -1.0),
            }
        }
        self.band.factorize().is_ok()
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let pos = &self.layout.pos;
        let mut v = vec![0.0; rhs.len()];
        for (i, &r) in rhs.iter().enumerate() {
            v[pos[i]] = r;
        }
        self.band.solve_in_place(&mut v);
        (0..rhs.len()).map(|i| v[pos[i]]).collect()
    }

    /// Product with the reference matrix (primal regularization `primal_reg`).
    fn apply(&self, v: &[f64], primal_reg: f64, d_eq: &[f64], d_in: &[Option<f64>]) -> Vec<f64> {
        let qp = self.qp;
        let (n, me) = (qp.num_vars(), qp.num_eq());
        let (x, rest) = v.split_at(n);
        let (y, z) = rest.split_at(me);
        let mut out = vec![0.0; v.len()];
        let hx = qp.hessian.mul_vec(x);
        for j in 0..n {
            out[j] = hx[j] + primal_reg * x[j];
        }
        qp.a_eq.tr_mul_acc(y, 1.0, &mut out[..n]);
        let zc: Vec<f64> = z.iter().zip(d_in).map(|(&zi, d)| if d.is_some() { zi } else { 0.0 }).collect();
        qp.a_in.tr_mul_acc(&zc, 1.0, &mut out[..n]);
        let ex = qp.a_eq.mul_vec(x);
        for r in 0..me {
            out[n + r] = ex[r] - d_eq[r] * y[r];
        }
        let cx = qp.a_in.mul_vec(x);
        for (r, d) in d_in.iter().enumerate() {
            out[n + me + r] = match d {
                Some(d) => cx[r] - d * z[r],
                None => -z[r],
            };
        }
        out
    }

    /// Solves against the factorization and refines towards the reference system.
    #[allow(clippy::too_many_arguments)]
    fn refined_solve(&self, rhs: &[f64], steps: usize, primal_reg: f64, d_eq: &[f64], d_in: &[Option<f64>]) -> Vec<f64> {
        let mut sol = self.solve(rhs);
        let mut last = f64::INFINITY;
        for _ in 0..steps {
            let applied = self.apply(&sol, primal_reg, d_eq, d_in);
            let resid: Vec<f64> = rhs.iter().zip(&applied).map(|(b, a)| b - a).collect();
            let size = norm_inf(&resid);
            if !(size < last) || size == 0.0 {
                break;
            }
            last = size;
            let corr = self.solve(&resid);
            for (s, c) in sol.iter_mut().zip(&corr) {
                *s += c;
            }
        }
        sol
    }
}

/// Largest `t ∈ (0, 1]` keeping `v + t·dv ≥ (1 − τ)·v`.
fn max_step(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .fold(1.0_f64, |t, (&vi, &d)| t.min(-tau * vi / d))
}

/// Normalized Farkas test on the multipliers of a diverging iterate.
///
/// For any feasible point `x̄` the combination `b_inᵀz − b_eqᵀy` is bounded by
/// `‖A_inᵀz − A_eqᵀy‖∞ ‖x̄‖₁`, so the gap is compared against that bound at the
/// current primal iterate.
fn infeasibility_certificate(qp: &SparseQp, x: &[f64], y: &[f64], z: &[f64], tol: f64) -> bool {
    let scale = norm_inf(y).max(norm_inf(z));
    if scale <= 0.0 || !scale.is_finite() {
        return false;
    }
    let mut v = vec![0.0; qp.num_vars()];
    qp.a_eq.tr_mul_acc(y, 1.0 / scale, &mut v);
    qp.a_in.tr_mul_acc(z, -1.0 / scale, &mut v);
    let residual = norm_inf(&v);
    let gap = (dot(&qp.b_in, z) - dot(&qp.b_eq, y)) / scale;
    let x_norm: f64 = x.iter().map(|v| v.abs()).sum();
    residual <= tol && gap > tol.max(10.0 * residual * x_norm.max(1.0))
}

/// Regularized primal-dual interior-point method with Mehrotra corrections.
///
/// Slacks `s = A_in x − b_in` are kept positive. The Newton matrix carries primal and
/// dual proximal regularization that shrinks with the complementarity measure, and
/// each solve is refined against the unregularized system. The best iterate seen
/// (including the entry point) is returned.
pub fn solve_sparse_qp_with(qp: &SparseQp, warm: Option<&QpSolution>, settings: &QpSettings) -> QpSolution {
    let (n, me, mi) = (qp.num_vars(), qp.num_eq(), qp.num_in());
    let pick = |v: Option<&Vec<f64>>, len: usize| match v {
        Some(v) if v.len() == len && v.iter().all(|x| x.is_finite()) => v.clone(),
        _ => vec![0.0; len],
    };
    let mut x = pick(warm.map(|w| &w.primal), n);
    let mut y = pick(warm.map(|w| &w.eq_multipliers), me);
    let z_entry: Vec<f64> = pick(warm.map(|w| &w.in_multipliers), mi)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();

    let mut best_res = qp.kkt_residuals(&x, &y, &z_entry).max();
    let mut best = (x.clone(), y.clone(), z_entry.clone());
    let finish = |best: (Vec<f64>, Vec<f64>, Vec<f64>), res: f64, status, iterations| QpSolution {
        primal: best.0,
        eq_multipliers: best.1,
        in_multipliers: best.2,
        status,
        kkt_residual: res,
        iterations,
        newton_steps: iterations,
    };
    if best_res <= settings.tol {
        return finish(best, best_res, QpStatus::Optimal, 0);
    }

    let mut sys = KktSystem::new(qp);
    let slack_of = |x: &[f64]| -> Vec<f64> { qp.a_in.mul_vec(x).iter().zip(&qp.b_in).map(|(a, b)| a - b).collect() };
    let scale0 = 1.0 + norm_inf(&qp.gradient).max(norm_inf(&qp.b_in)).max(norm_inf(&qp.b_eq));
    let mut s: Vec<f64> = slack_of(&x).iter().map(|&v| v.max(1e-2 * scale0.sqrt())).collect();
    let mut z: Vec<f64> = s.iter().zip(&z_entry).map(|(&si, &zi)| zi.max(1e-2 * scale0.sqrt() / si.max(1.0))).collect();
    let mut certificate_streak = 0;

    for iter in 1..=settings.max_iter {
        let mut r_d = qp.hessian.mul_vec(&x);
        for j in 0..n {
            r_d[j] += qp.gradient[j];
        }
        qp.a_eq.tr_mul_acc(&y, 1.0, &mut r_d);
        qp.a_in.tr_mul_acc(&z, -1.0, &mut r_d);
        let r_e: Vec<f64> = qp.a_eq.mul_vec(&x).iter().zip(&qp.b_eq).map(|(a, b)| a - b).collect();
        let r_i: Vec<f64> = slack_of(&x).iter().zip(&s).map(|(a, si)| a - si).collect();
        let mu = if mi > 0 { dot(&s, &z) / mi as f64 } else { 0.0 };

        let res = qp.kkt_residuals(&x, &y, &z);
        if res.max() < best_res {
            best_res = res.max();
            best = (x.clone(), y.clone(), z.clone());
        }
        if res.max() <= settings.tol {
            return finish(best, best_res, QpStatus::Optimal, iter - 1);
        }
        if res.primal() > settings.tol && infeasibility_certificate(qp, &x, &y, &z, settings.infeasibility_tol) {
            certificate_streak += 1;
            if certificate_streak >= 3 {
                return finish(best, best_res, QpStatus::Infeasible, iter - 1);
            }
        } else {
            certificate_streak = 0;
        }

        let reg = (1e-2 * mu).clamp(settings.reg_min, settings.reg_max);
        let d_eq = vec![reg; me];
        let d_in: Vec<Option<f64>> = s.iter().zip(&z).map(|(&si, &zi)| Some(si / zi + reg)).collect();
        let mut primal_reg = reg;
        while !sys.factor(primal_reg, &d_eq, &d_in) {
            primal_reg *= 100.0;
            if primal_reg > 1.0 {
                return finish(best, best_res, QpStatus::MaxIter, iter - 1);
            }
        }

        // third block: Z⁻¹ r_c − r_i with r_c the complementarity target; the slack
        // step comes from the linearized complementarity so it stays consistent with
        // the regularized Newton system
        let direction = |r_c: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut rhs = Vec::with_capacity(n + me + mi);
            rhs.extend(r_d.iter().map(|v| -v));
            rhs.extend(r_e.iter().map(|v| -v));
            rhs.extend((0..mi).map(|i| r_c[i] / z[i] - r_i[i]));
            let sol = sys.refined_solve(&rhs, settings.refinement_steps, primal_reg, &d_eq, &d_in);
            let dx = sol[..n].to_vec();
            let dy = sol[n..n + me].to_vec();
            let dz: Vec<f64> = sol[n + me..].iter().map(|v| -v).collect();
            let ds: Vec<f64> = (0..mi).map(|i| (r_c[i] - s[i] * dz[i]) / z[i]).collect();
            (dx, dy, dz, ds)
        };

        let r_aff: Vec<f64> = s.iter().zip(&z).map(|(a, b)| -a * b).collect();
        let (_, _, dz_a, ds_a) = direction(&r_aff);
        let (ap, ad) = (max_step(&s, &ds_a, 1.0), max_step(&z, &dz_a, 1.0));
        let mu_aff = if mi > 0 {
            (0..mi).map(|i| (s[i] + ap * ds_a[i]) * (z[i] + ad * dz_a[i])).sum::<f64>() / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        let r_c: Vec<f64> = (0..mi)
            .map(|i| -s[i] * z[i] - ds_a[i] * dz_a[i] + sigma * mu)
            .collect();
        let tau = (1.0 - mu).clamp(0.95, 0.995);
        let step_of = |d: &(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)| max_step(&s, &d.3, tau).min(max_step(&z, &d.2, tau));
        let mut dir = direction(&r_c);
        let mut alpha = step_of(&dir);
        // a blocked corrector falls back to increasingly centred directions
        for sigma_c in [0.1_f64, 0.5, 1.0] {
            if alpha >= 0.1 {
                break;
            }
            let r_cent: Vec<f64> = (0..mi).map(|i| -s[i] * z[i] + sigma_c.max(sigma) * mu).collect();
            let cand = direction(&r_cent);
            let a = step_of(&cand);
            if a > alpha {
                dir = cand;
                alpha = a;
            }
        }
        let (dx, dy, dz, ds) = dir;
        for j in 0..n {
            x[j] += alpha * dx[j];
        }
        for r in 0..me {
            y[r] += alpha * dy[r];
        }
        for i in 0..mi {
            s[i] = (s[i] + alpha * ds[i]).max(f64::MIN_POSITIVE);
            z[i] = (z[i] + alpha * dz[i]).max(f64::MIN_POSITIVE);
        }
        if !x.iter().chain(&y).chain(&z).all(|v| v.is_finite()) {
            return finish(best, best_res, QpStatus::MaxIter, iter);
        }
    }
    let res = qp.kkt_residuals(&x, &y, &z);
    if res.max() < best_res {
        best_res = res.max();
        best = (x, y, z);
    }
    finish(best, best_res, QpStatus::MaxIter, settings.max_iter)
}

/// Minimizes the quadratic-penalty model
/// `½xᵀHx + gᵀx + (ρ/2)(‖A_eq x − b_eq‖² + ‖min(0, A_in x − b_in)‖²)`
/// by semismooth Newton steps with an exact line search.
///
/// For an inconsistent QP this yields a least-squares minimum-violation point; the
/// returned multipliers are the penalty estimates `ρ·r_eq` and `ρ·max(0, −r_in)`.
pub fn solve_penalty_qp(qp: &SparseQp, rho: f64, max_newton: usize) -> QpSolution {
    let (n, me, mi) = (qp.num_vars(), qp.num_eq(), qp.num_in());
    let mut sys = KktSystem::new(qp);
    let mut x = vec![0.0; n];
    let prox = 1e-10;
    let state = |x: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut grad = qp.hessian.mul_vec(x);
        for j in 0..n {
            grad[j] += qp.gradient[j];
        }
        let r_eq: Vec<f64> = qp.a_eq.mul_vec(x).iter().zip(&qp.b_eq).map(|(a, b)| a - b).collect();
        // w > 0 marks a violated inequality
        let w: Vec<f64> = qp.a_in.mul_vec(x).iter().zip(&qp.b_in).map(|(a, b)| b - a).collect();
        qp.a_eq.tr_mul_acc(&r_eq, rho, &mut grad);
        let w_pos: Vec<f64> = w.iter().map(|&wi| wi.max(0.0)).collect();
        qp.a_in.tr_mul_acc(&w_pos, -rho, &mut grad);
        (grad, r_eq, w)
    };
    let mut steps = 0;
    while steps < max_newton {
        let (grad, _, w) = state(&x);
        let gnorm = norm_inf(&grad);
        if gnorm <= 1e-12 * (1.0 + rho) {
            break;
        }
        let active: Vec<Option<f64>> = w.iter().map(|&wi| (wi > 0.0).then_some(1.0 / rho)).collect();
        let d_eq = vec![1.0 / rho; me];
        if !sys.factor(prox, &d_eq, &active) {
            break;
        }
        let mut rhs = vec![0.0; n + me + mi];
        for j in 0..n {
            rhs[j] = -grad[j];
        }
        let sol = sys.refined_solve(&rhs, 1, prox, &d_eq, &active);
        let p = &sol[..n];
        let t = penalty_exact_step(qp, rho, p, &grad, &w);
        steps += 1;
        if t <= 0.0 {
            break;
        }
        for j in 0..n {
            x[j] += t * p[j];
        }
        let (_, _, w_after) = state(&x);
        let same = w_after.iter().zip(&active).all(|(&wi, a)| (wi > 0.0) == a.is_some());
        if (t - 1.0).abs() < 1e-12 && same {
            break;
        }
    }
    let (_, r_eq, w) = state(&x);
    let y: Vec<f64> = r_eq.iter().map(|r| rho * r).collect();
    let z: Vec<f64> = w.iter().map(|wi| rho * wi.max(0.0)).collect();
    let res = qp.kkt_residuals(&x, &y, &z).max();
    QpSolution {
        primal: x,
        eq_multipliers: y,
        in_multipliers: z,
        status: QpStatus::MaxIter,
        kkt_residual: res,
        iterations: steps,
        newton_steps: steps,
    }
}

/// Exact minimizer over `t ≥ 0` of the convex piecewise quadratic penalty along `p`.
fn penalty_exact_step(qp: &SparseQp, rho: f64, p: &[f64], grad: &[f64], w: &[f64]) -> f64 {
    let hp = qp.hessian.mul_vec(p);
    let ep = qp.a_eq.mul_vec(p);
    let cp = qp.a_in.mul_vec(p);
    let mut slope = dot(p, &hp) + rho * dot(&ep, &ep);
    let mut intercept = dot(p, grad);
    let mut events: Vec<(f64, usize)> = Vec::new();
    for (i, (&a, &wi)) in cp.iter().zip(w).enumerate() {
        if a == 0.0 {
            continue;
        }
        // violation along the ray is wi − a·t
        let active_at_zero = if a > 0.0 { wi > 0.0 } else { wi >= 0.0 };
        if active_at_zero {
            slope += rho * a * a;
        }
        let t = wi / a;
        if t > 0.0 {
            events.push((t, i));
        }
    }
    if intercept >= 0.0 || slope <= 0.0 {
        return 0.0;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (t, i) in events {
        if intercept + slope * t >= 0.0 {
            return -intercept / slope;
        }
        let (a, wi) = (cp[i], w[i]);
        if a > 0.0 {
            slope -= rho * a * a;
            intercept += rho * a * wi;
        } else {
            slope += rho * a * a;
            intercept -= rho * a * wi;
        }
    }
    if slope <= 0.0 {
        1.0
    } else {
        -intercept / slope
    }
}

//! Sequential gap-constraint linearization (SGCL): the SQP-type iteration on the
//! relaxed gap-constraint NLP, its filter line search, and the continuation in `s`.
//!
//! Each iteration evaluates the stage projectors, linearizes, solves the convex QP
//!
//! ```text
//! min ½ΔzᵀHΔz + ∇JᵀΔz   s.t.  h + ∇hΔz = 0,  c + ∇cΔz ≥ 0
//! ```
//!
//! tests termination at the current point with the QP multipliers `γ̂`, and otherwise
//! steps along `Δz` with the filter line search and interpolates the multipliers
//! `γ ← γ + α(γ̂ − γ)`.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use web_time::{Duration, Instant};

use crate::gap::{GapEvaluation, GapParams, ProjectorPath, StageProjector};
use crate::linalg::{norm_1, norm_inf, SparseMatrix};
use crate::model::{discretize, DiscretizedNlp, OcpecProblem};
use crate::qp::{solve_penalty_qp, solve_sparse_qp_with, QpSettings, QpSolution, QpStatus, SparseQp};
use crate::vi::natural_residual;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Backtracking factor.
    pub beta: f64,
    /// Margin on the constraint violation `M`.
    pub gamma_m: f64,
    /// Margin on the cost `J`.
    pub gamma_j: f64,
    pub alpha_min: f64,
    /// Armijo constant for cost-reducing (switching) steps.
    pub armijo: f64,
    pub switch_delta: f64,
    pub switch_s_cost: f64,
    pub switch_s_violation: f64,
    /// The filter rejects `M ≥ max_violation_factor · max(1, M₀)`.
    pub max_violation_factor: f64,
    /// Switching steps are only allowed while `M ≤ min_violation_factor · max(1, M₀)`.
    pub min_violation_factor: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma_m: 1e-5,
            gamma_j: 1e-5,
            alpha_min: 1e-8,
            armijo: 1e-4,
            switch_delta: 1.0,
            switch_s_cost: 2.3,
            switch_s_violation: 1.1,
            max_violation_factor: 1e4,
            min_violation_factor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationConfig {
    pub s_init: f64,
    pub s_final: f64,
    pub kappa_t: f64,
    pub kappa_e: f64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            s_init: 1e-1,
            s_final: 1e-6,
            kappa_t: 0.8,
            kappa_e: 1.5,
        }
    }
}

/// What an iteration does when its QP subproblem has no feasible point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleQpPolicy {
    /// Stop with [`SgclStatus::QpInfeasible`].
    Abort,
    /// Step to the least-squares minimizer of the linearized violation, regularized
    /// by the QP objective, and let the filter judge the trial points.
    MinimumViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgclConfig {
    pub mu: f64,
    pub eps_kkt: f64,
    pub eps_sd: f64,
    pub eps_p: f64,
    pub eps_d: f64,
    pub eps_c: f64,
    /// Iteration cap per value of `s`.
    pub k_max: usize,
    /// Scaling threshold `s_max` of the dual and complementarity errors.
    pub s_max: f64,
    pub filter: FilterConfig,
    pub continuation: ContinuationConfig,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub projector_path: ProjectorPath,
    /// Evaluate the stage projectors on worker threads.
    pub parallel: bool,
    pub infeasible_qp: InfeasibleQpPolicy,
    /// Penalty weight of the minimum-violation step.
    pub violation_penalty: f64,
}

impl Default for SgclConfig {
    fn default() -> Self {
        Self {
            mu: 1e2,
            eps_kkt: 1e-5,
            eps_sd: 1e-8,
            eps_p: 1e-8,
            eps_d: 1e-4,
            eps_c: 1e-8,
            k_max: 500,
            s_max: 100.0,
            filter: FilterConfig::default(),
            continuation: ContinuationConfig::default(),
            qp_tol: 1e-9,
            qp_max_iter: 200,
            projector_path: ProjectorPath::Auto,
            parallel: false,
            infeasible_qp: InfeasibleQpPolicy::MinimumViolation,
            violation_penalty: 1e6,
        }
    }
}

impl SgclConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let ct = &self.continuation;
        let f = &self.filter;
        if !(self.mu > 0.0) {
            return bad("μ must be > 0");
        }
        for (name, v) in [
            ("eps_kkt", self.eps_kkt),
            ("eps_sd", self.eps_sd),
            ("eps_p", self.eps_p),
            ("eps_d", self.eps_d),
            ("eps_c", self.eps_c),
            ("qp_tol", self.qp_tol),
            ("violation_penalty", self.violation_penalty),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !(ct.kappa_t > 0.0 && ct.kappa_t < 1.0) {
            return bad("κ_t must lie in (0, 1)");
        }
        if !(ct.kappa_e > 1.0) {
            return bad("κ_e must be > 1");
        }
        if !(ct.s_final >= 0.0 && ct.s_final <= ct.s_init) {
            return bad("need 0 ≤ s_final ≤ s_init");
        }
        if !(f.beta > 0.0 && f.beta < 1.0) {
            return bad("β must lie in (0, 1)");
        }
        if !(f.alpha_min > 0.0 && f.gamma_m >= 0.0 && f.gamma_j >= 0.0 && f.gamma_m < 1.0) {
            return bad("invalid filter margins");
        }
        if !(self.s_max > 0.0) {
            return bad("s_max must be > 0");
        }
        if self.k_max == 0 {
            return bad("k_max must be ≥ 1");
        }
        Ok(())
    }
}

/// `(E_p, E_d, E_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimalityErrors {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl OptimalityErrors {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

/// Optimality errors of `(z, γ_h, γ_c)` for the Lagrangian `J + γ_hᵀh − γ_cᵀc`.
///
/// `grad_cost`, `h`, `c` and the Jacobians must be evaluated at the same `z`.
#[allow(clippy::too_many_arguments)]
pub fn optimality_errors(
    grad_cost: &[f64],
    h: &[f64],
    c: &[f64],
    jac_h: &SparseMatrix,
    jac_c: &SparseMatrix,
    gamma_h: &[f64],
    gamma_c: &[f64],
    s_max: f64,
) -> OptimalityErrors {
    let mut grad_l = grad_cost.to_vec();
    jac_h.tr_mul_acc(gamma_h, 1.0, &mut grad_l);
    jac_c.tr_mul_acc(gamma_c, -1.0, &mut grad_l);
    let neg_part = |v: &[f64]| v.iter().fold(0.0_f64, |m, &x| m.max((-x).max(0.0)));
    let (n_h, n_c) = (gamma_h.len(), gamma_c.len());
    let avg = |total: f64, count: usize| if count == 0 { 0.0 } else { total / count as f64 };
    let kappa_d = s_max.max(avg(norm_1(gamma_h) + norm_1(gamma_c), n_h + n_c)) / s_max;
    let kappa_c = s_max.max(avg(norm_1(gamma_c), n_c)) / s_max;
    let comp = c.iter().zip(gamma_c).fold(0.0_f64, |m, (a, b)| m.max((a * b).abs()));
    OptimalityErrors {
        primal: norm_inf(h).max(neg_part(c)),
        dual: norm_inf(&grad_l).max(neg_part(gamma_c)) / kappa_d,
        complementarity: comp / kappa_c,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCheck {
    Continue,
    StopKkt,
    StopStep,
    StopSplit,
}

/// Composite KKT test, then step size, then the individual residuals.
pub fn check_termination(errors: &OptimalityErrors, step_norm: f64, config: &SgclConfig) -> TerminationCheck {
    if errors.max() <= config.eps_kkt {
        TerminationCheck::StopKkt
    } else if step_norm <= config.eps_sd {
        TerminationCheck::StopStep
    } else if errors.primal <= config.eps_p && errors.dual <= config.eps_d && errors.complementarity <= config.eps_c {
        TerminationCheck::StopSplit
    } else {
        TerminationCheck::Continue
    }
}

/// `M = Δt(‖h‖₁ + ‖min(0, c)‖₁)`.
pub fn constraint_violation(dt: f64, h: &[f64], c: &[f64]) -> f64 {
    dt * (norm_1(h) + c.iter().map(|v| (-v).max(0.0)).sum::<f64>())
}

/// Non-dominated `(M, J)` pairs plus an upper bound on `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    entries: Vec<(f64, f64)>,
    max_violation: f64,
}

impl Filter {
    pub fn new(max_violation: f64) -> Self {
        Self {
            entries: Vec::new(),
            max_violation,
        }
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    pub fn max_violation(&self) -> f64 {
        self.max_violation
    }

    /// A pair is acceptable when no entry is at least as bad in both measures.
    pub fn is_acceptable(&self, violation: f64, cost: f64) -> bool {
        violation < self.max_violation && self.entries.iter().all(|&(m, j)| violation < m || cost < j)
    }

    /// Adds a pair and prunes the entries it dominates.
    pub fn add(&mut self, violation: f64, cost: f64) {
        self.entries.retain(|&(m, j)| !(violation <= m && cost <= j));
        self.entries.push((violation, cost));
    }

    pub fn is_non_dominated(&self) -> bool {
        let e = &self.entries;
        (0..e.len()).all(|i| (0..e.len()).all(|k| i == k || !(e[i].0 <= e[k].0 && e[i].1 <= e[k].1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Cost-reducing step under the switching condition. The filter is not augmented.
    Cost,
    /// Filter step. The filter is augmented with the margined current pair.
    Violation,
}

#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub z: DVector<f64>,
    pub gap_evals: Vec<GapEvaluation>,
    pub violation: f64,
    pub cost: f64,
    pub kind: StepKind,
    pub trials: usize,
}

/// State at the start of the line search.
#[derive(Debug, Clone, Copy)]
pub struct LineSearchPoint {
    pub violation: f64,
    pub cost: f64,
    /// `∇Jᵀ Δz`.
    pub directional_derivative: f64,
    /// Switching steps are considered only while the violation is below this.
    pub min_violation: f64,
}

/// Evaluates `(M, J)` at a trial point.
pub trait MeritOracle {
    fn merit(&mut self, z: &DVector<f64>) -> Result<(f64, f64, Vec<GapEvaluation>)>;
}

/// Backtracking filter line search along `dz`.
///
/// Returns `Ok(None)` when the step falls below `alpha_min`.
pub fn filter_line_search(
    oracle: &mut dyn MeritOracle,
    z: &DVector<f64>,
    dz: &DVector<f64>,
    at: LineSearchPoint,
    filter: &mut Filter,
    config: &FilterConfig,
) -> Result<Option<LineSearchResult>> {
    let mut alpha = 1.0;
    let mut trials = 0;
    while alpha >= config.alpha_min {
        trials += 1;
        let trial = z + dz * alpha;
        let (m_t, j_t, evals) = oracle.merit(&trial)?;
        if m_t.is_finite() && j_t.is_finite() && filter.is_acceptable(m_t, j_t) {
            let predicted = alpha * at.directional_derivative;
            let switching = at.directional_derivative < 0.0
                && (-predicted).powf(config.switch_s_cost) * alpha.powf(1.0 - config.switch_s_cost)
                    > config.switch_delta * at.violation.powf(config.switch_s_violation);
            let accepted = if switching && at.violation <= at.min_violation {
                (j_t <= at.cost + config.armijo * predicted).then_some(StepKind::Cost)
            } else {
                (m_t <= (1.0 - config.gamma_m) * at.violation || j_t <= at.cost - config.gamma_j * at.violation)
                    .then_some(StepKind::Violation)
            };
            if let Some(kind) = accepted {
                if kind == StepKind::Violation {
                    filter.add((1.0 - config.gamma_m) * at.violation, at.cost - config.gamma_j * at.violation);
                }
                return Ok(Some(LineSearchResult {
                    alpha,
                    z: trial,
                    gap_evals: evals,
                    violation: m_t,
                    cost: j_t,
                    kind,
                    trials,
                }));
            }
        }
        alpha *= config.beta;
    }
    Ok(None)
}

/// `s^{j+1} = max(s^J, min(κ_t s^j, (s^j)^{κ_e}))`.
pub fn update_relaxation(s: f64, config: &ContinuationConfig) -> f64 {
    config.s_final.max((config.kappa_t * s).min(s.powf(config.kappa_e)))
}

/// `s⁰, s¹, …, s^J` following [`update_relaxation`].
pub fn relaxation_schedule(config: &ContinuationConfig) -> Vec<f64> {
    let mut out = vec![config.s_init];
    let mut s = config.s_init;
    while s > config.s_final {
        let next = update_relaxation(s, config);
        if next >= s {
            break;
        }
        out.push(next);
        s = next;
    }
    out
}

/// Wall-clock time per phase of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub omega: Duration,
    pub derivatives: Duration,
    pub qp: Duration,
    pub line_search: Duration,
    pub other: Duration,
    pub total: Duration,
}

impl PhaseTimings {
    pub fn phase_sum(&self) -> Duration {
        self.omega + self.derivatives + self.qp + self.line_search + self.other
    }

    pub fn accumulate(&mut self, other: &PhaseTimings) {
        self.omega += other.omega;
        self.derivatives += other.derivatives;
        self.qp += other.qp;
        self.line_search += other.line_search;
        self.other += other.other;
        self.total += other.total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgclStatus {
    StopKkt,
    StopStep,
    StopSplit,
    MaxIter,
    QpInfeasible,
    LineSearchFailure,
}

impl SgclStatus {
    pub fn converged(self) -> bool {
        matches!(self, Self::StopKkt | Self::StopStep | Self::StopSplit)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::StopKkt => "stop_kkt",
            Self::StopStep => "stop_step",
            Self::StopSplit => "stop_split",
            Self::MaxIter => "max_iter",
            Self::QpInfeasible => "qp_infeasible",
            Self::LineSearchFailure => "line_search_failure",
        }
    }
}

/// One row of the iteration log. `alpha` is 0 on the terminating iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub cost: f64,
    pub violation: f64,
    pub e_p: f64,
    pub e_d: f64,
    pub e_c: f64,
    pub alpha: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgclStats {
    pub status: SgclStatus,
    pub iterations: usize,
    pub errors: OptimalityErrors,
    pub cost: f64,
    pub violation: f64,
    pub step_norm: f64,
    pub timings: PhaseTimings,
    pub log: Vec<IterationRecord>,
    /// Every accepted step left the filter free of dominated pairs.
    pub filter_non_dominated: bool,
    /// Largest deviation of `‖z^{k+1} − z^k‖_∞` from `α‖Δz‖_∞`.
    pub step_cap_mismatch: f64,
}

/// Primal and dual point of the relaxed NLP.
#[derive(Debug, Clone, PartialEq)]
pub struct SgclPoint {
    pub z: DVector<f64>,
    pub gamma_h: DVector<f64>,
    pub gamma_c: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct SgclOutcome {
    pub point: SgclPoint,
    pub gap_evals: Vec<GapEvaluation>,
    pub stats: SgclStats,
}

struct TrialMerit<'a> {
    nlp: &'a DiscretizedNlp,
    projector: &'a StageProjector,
}

impl MeritOracle for TrialMerit<'_> {
    fn merit(&mut self, z: &DVector<f64>) -> Result<(f64, f64, Vec<GapEvaluation>)> {
        let evals = self.projector.evaluate_frozen(&self.nlp.projector_inputs(z))?;
        let (h, c) = self.nlp.eval_constraints(z, &evals)?;
        let (j, _) = self.nlp.eval_cost(z)?;
        Ok((constraint_violation(self.nlp.dt(), h.as_slice(), c.as_slice()), j, evals))
    }
}

/// Builds the stage projector the solver uses for `nlp` under `config`.
pub fn stage_projector(nlp: &DiscretizedNlp, config: &SgclConfig) -> Result<StageProjector> {
    StageProjector::new(
        nlp.gap_params().clone(),
        nlp.problem().set.clone(),
        config.projector_path,
        config.parallel,
    )
}

/// Solves the relaxed NLP at the relaxation held by `nlp`, starting from `start`
/// (multipliers default to zero).
pub fn sgcl_solve(nlp: &DiscretizedNlp, start: &SgclPoint, config: &SgclConfig) -> Result<SgclOutcome> {
    let mut projector = stage_projector(nlp, config)?;
    sgcl_solve_with(nlp, start, config, &mut projector, None)
}

/// [`sgcl_solve`] with a caller-owned projector cache and an optional filter to
/// continue from.
pub fn sgcl_solve_with(
    nlp: &DiscretizedNlp,
    start: &SgclPoint,
    config: &SgclConfig,
    projector: &mut StageProjector,
    filter: Option<Filter>,
) -> Result<SgclOutcome> {
    config.validate()?;
    let t_start = Instant::now();
    let (nv, ne, ni) = (nlp.num_vars(), nlp.num_eq(), nlp.num_in());
    if start.z.len() != nv {
        return Err(Error::DimensionMismatch {
            map: "z0",
            expected: nv,
            got: start.z.len(),
        });
    }
    crate::error::reject_nan(start.z.as_slice(), "z0")?;
    let pick = |v: &DVector<f64>, n: usize| if v.len() == n { v.clone() } else { DVector::zeros(n) };
    let mut z = start.z.clone();
    let mut gamma_h = pick(&start.gamma_h, ne);
    let mut gamma_c = pick(&start.gamma_c, ni).map(|v| v.max(0.0));

    let mut timings = PhaseTimings::default();
    let lap = |t: &mut Instant| {
        let now = Instant::now();
        let d = now - *t;
        *t = now;
        d
    };
    let mut clock = Instant::now();
    let hessian = nlp.gauss_newton_hessian()?;
    timings.derivatives += lap(&mut clock);

    let qp_settings = QpSettings {
        tol: config.qp_tol,
        max_iter: config.qp_max_iter,
        ..QpSettings::default()
    };
    let mut filter = filter;
    let mut log = Vec::new();
    let mut filter_ok = true;
    let mut step_cap_mismatch = 0.0_f64;

    let mut k = 0;
    loop {
        k += 1;
        clock = Instant::now();
        let evals = projector.evaluate(&nlp.projector_inputs(&z))?;
        timings.omega += lap(&mut clock);

        let (h, c) = nlp.eval_constraints(&z, &evals)?;
        let (jac_h, jac_c) = nlp.eval_jacobians(&z, &evals)?;
        let (cost, grad) = nlp.eval_cost(&z)?;
        timings.derivatives += lap(&mut clock);

        let violation = constraint_violation(nlp.dt(), h.as_slice(), c.as_slice());
        let filter = filter.get_or_insert_with(|| Filter::new(config.filter.max_violation_factor * violation.max(1.0)));
        let min_violation = config.filter.min_violation_factor * filter.max_violation() / config.filter.max_violation_factor;
        timings.other += lap(&mut clock);

        let qp = SparseQp::new(
            hessian.clone(),
            grad.as_slice().to_vec(),
            jac_h.clone(),
            h.iter().map(|v| -v).collect(),
            jac_c.clone(),
            c.iter().map(|v| -v).collect(),
        )?;
        let warm_start = QpSolution {
            primal: vec![0.0; nv],
            eq_multipliers: gamma_h.as_slice().to_vec(),
            in_multipliers: gamma_c.as_slice().to_vec(),
            status: QpStatus::MaxIter,
            kkt_residual: f64::INFINITY,
            iterations: 0,
            newton_steps: 0,
        };
        let mut sol = solve_sparse_qp_with(&qp, Some(&warm_start), &qp_settings);
        let qp_infeasible = sol.status == QpStatus::Infeasible;
        if qp_infeasible && config.infeasible_qp == InfeasibleQpPolicy::MinimumViolation {
            sol = solve_penalty_qp(&qp, config.violation_penalty, config.qp_max_iter);
        }
        timings.qp += lap(&mut clock);

        let dz = DVector::from_column_slice(&sol.primal);
        let gamma_h_hat = DVector::from_column_slice(&sol.eq_multipliers);
        let gamma_c_hat = DVector::from_column_slice(&sol.in_multipliers);
        let step_norm = dz.amax();
        let errors = optimality_errors(
            grad.as_slice(),
            h.as_slice(),
            c.as_slice(),
            &jac_h,
            &jac_c,
            sol.eq_multipliers.as_slice(),
            sol.in_multipliers.as_slice(),
            config.s_max,
        );
        let mut record = IterationRecord {
            k,
            cost,
            violation,
            e_p: errors.primal,
            e_d: errors.dual,
            e_c: errors.complementarity,
            alpha: 0.0,
            step_norm,
        };
        let stats = |status, log: Vec<IterationRecord>, timings: PhaseTimings| SgclStats {
            status,
            iterations: k,
            errors,
            cost,
            violation,
            step_norm,
            timings,
            log,
            filter_non_dominated: filter_ok,
            step_cap_mismatch,
        };

        if qp_infeasible && config.infeasible_qp == InfeasibleQpPolicy::Abort {
            log.push(record);
            timings.other += lap(&mut clock);
            timings.total = t_start.elapsed();
            return Ok(SgclOutcome {
                point: SgclPoint { z, gamma_h, gamma_c },
                gap_evals: evals,
                stats: stats(SgclStatus::QpInfeasible, log, timings),
            });
        }

        let check = check_termination(&errors, step_norm, config);
        if check != TerminationCheck::Continue || k >= config.k_max {
            log.push(record);
            let status = match check {
                TerminationCheck::StopKkt => SgclStatus::StopKkt,
                TerminationCheck::StopStep => SgclStatus::StopStep,
                TerminationCheck::StopSplit => SgclStatus::StopSplit,
                TerminationCheck::Continue => SgclStatus::MaxIter,
            };
            let point = if status.converged() {
                SgclPoint {
                    z,
                    gamma_h: gamma_h_hat,
                    gamma_c: gamma_c_hat,
                }
            } else {
                SgclPoint { z, gamma_h, gamma_c }
            };
            timings.other += lap(&mut clock);
            timings.total = t_start.elapsed();
            return Ok(SgclOutcome {
                point,
                gap_evals: evals,
                stats: stats(status, log, timings),
            });
        }
        timings.other += lap(&mut clock);

        let at = LineSearchPoint {
            violation,
            cost,
            directional_derivative: grad.dot(&dz),
            min_violation,
        };
        let mut oracle = TrialMerit { nlp, projector };
        let ls = filter_line_search(&mut oracle, &z, &dz, at, filter, &config.filter)?;
        timings.line_search += lap(&mut clock);

        let Some(ls) = ls else {
            log.push(record);
            timings.total = t_start.elapsed();
            return Ok(SgclOutcome {
                point: SgclPoint { z, gamma_h, gamma_c },
                gap_evals: evals,
                stats: stats(SgclStatus::LineSearchFailure, log, timings),
            });
        };
        filter_ok &= filter.is_non_dominated();
        let moved = (&ls.z - &z).amax();
        step_cap_mismatch = step_cap_mismatch.max((moved - ls.alpha * step_norm).abs());
        record.alpha = ls.alpha;
        log.push(record);
        z = ls.z;
        gamma_h += (&gamma_h_hat - &gamma_h) * ls.alpha;
        gamma_c += (&gamma_c_hat - &gamma_c) * ls.alpha;
        gamma_c.apply(|v| *v = v.max(0.0));
        timings.other += lap(&mut clock);
    }
}

/// Result of one relaxed solve inside the continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationRecord {
    pub s: f64,
    pub cost: f64,
    /// `max_n ‖Φ_n‖_∞` over the stages.
    pub max_natural_residual: f64,
    pub iterations: usize,
    pub status: SgclStatus,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone)]
pub struct ContinuationOutcome {
    pub nlp: DiscretizedNlp,
    pub point: SgclPoint,
    pub gap_evals: Vec<GapEvaluation>,
    pub records: Vec<RelaxationRecord>,
    /// Stats of every relaxed solve in order.
    pub stats: Vec<SgclStats>,
}

impl ContinuationOutcome {
    pub fn final_status(&self) -> SgclStatus {
        self.records.last().map(|r| r.status).unwrap_or(SgclStatus::MaxIter)
    }
}

/// `max_n ‖λ_n − Π_K(λ_n − F(x_n, u_n, λ_n))‖_∞` at `z`.
pub fn max_natural_residual(nlp: &DiscretizedNlp, z: &DVector<f64>) -> Result<f64> {
    let p = nlp.problem();
    let mut worst = 0.0_f64;
    for n in 0..nlp.n_stages() {
        let sv = nlp.stage_vars(z, n);
        let f = p.maps.vi_map(&sv.x, &sv.u, &sv.lambda);
        worst = worst.max(natural_residual(&sv.lambda, &f, &p.set)?.amax());
    }
    Ok(worst)
}

/// Solves the relaxed problems along [`relaxation_schedule`], warm-starting the
/// primal and dual point and clearing the filter at every change of `s`. Stops at
/// the first relaxed solve that does not converge.
pub fn continuation_solve(
    problem: Arc<OcpecProblem>,
    n_stages: usize,
    gap_params: GapParams,
    z0: &DVector<f64>,
    config: &SgclConfig,
) -> Result<ContinuationOutcome> {
    config.validate()?;
    let schedule = relaxation_schedule(&config.continuation);
    let mut nlp = discretize(problem, n_stages, schedule[0], config.mu, gap_params)?;
    let mut projector = stage_projector(&nlp, config)?;
    let mut point = SgclPoint {
        z: z0.clone(),
        gamma_h: DVector::zeros(nlp.num_eq()),
        gamma_c: DVector::zeros(nlp.num_in()),
    };
    let mut records = Vec::new();
    let mut all_stats = Vec::new();
    let mut gap_evals = Vec::new();
    for &s in &schedule {
        nlp = nlp.with_relaxation(s)?;
        let out = sgcl_solve_with(&nlp, &point, config, &mut projector, None)?;
        records.push(RelaxationRecord {
            s,
            cost: out.stats.cost,
            max_natural_residual: max_natural_residual(&nlp, &out.point.z)?,
            iterations: out.stats.iterations,
            status: out.stats.status,
            timings: out.stats.timings,
        });
        let converged = out.stats.status.converged();
        all_stats.push(out.stats);
        point = out.point;
        gap_evals = out.gap_evals;
        if !converged {
            break;
        }
    }
    Ok(ContinuationOutcome {
        nlp,
        point,
        gap_evals,
        records,
        stats: all_stats,
    })
}

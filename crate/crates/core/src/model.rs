//! Continuous OCPEC data, implicit-Euler discretization and assembly of the
//! relaxed gap-constraint NLP.
//!
//! Stage `n` owns `z_n = [x_n, u_n, λ_n, η_n, v_n]` and contributes
//!
//! ```text
//! h_n = [x_{n−1} + f(x_n, u_n, λ_n)Δt − x_n;  C(x_n, u_n);  F(x_n, u_n, λ_n) − η_n;  φᶜ(λ_n, η_n) − v_n]
//! c_n = [G(x_n, u_n);  g(λ_n);  s − v_n]
//! J   = L_T(x_N) + Σ_n L_S(x_n, u_n, λ_n)Δt + μΔt v_n²
//! ```

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gap::{GapEvaluation, GapParams};
use crate::linalg::{SparseMatrix, Triplets};
use crate::vi::ViSet;
use crate::{Error, Result};

/// Diagonal regularization added to the Gauss–Newton Hessian.
pub const HESSIAN_REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_lambda: usize,
    /// Rows of the path inequality `G(x, u) ≥ 0`.
    pub n_path_ineq: usize,
    /// Rows of the path equality `C(x, u) = 0`.
    pub n_path_eq: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageJacobian {
    pub dx: DMatrix<f64>,
    pub du: DMatrix<f64>,
    pub dlambda: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathJacobian {
    pub dx: DMatrix<f64>,
    pub du: DMatrix<f64>,
}

/// The problem maps `f`, `F`, `G`, `C` with analytic Jacobians.
pub trait StageMaps: Send + Sync {
    fn dims(&self) -> Dims;
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64>;
    fn dynamics_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> StageJacobian;
    fn vi_map(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64>;
    fn vi_map_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> StageJacobian;
    fn path_inequality(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn path_inequality_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> PathJacobian;
    fn path_equality(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn path_equality_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> PathJacobian;
}

/// All maps affine: `f = A_x x + B_u u + B_λ λ + f₀`, `F = F_x x + F_u u + F_λ λ + F₀`,
/// `G = G_x x + G_u u + G₀`, `C = C_x x + C_u u + C₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStageMaps {
    pub dynamics: StageJacobian,
    pub dynamics_offset: DVector<f64>,
    pub vi: StageJacobian,
    pub vi_offset: DVector<f64>,
    pub path_ineq: PathJacobian,
    pub path_ineq_offset: DVector<f64>,
    pub path_eq: PathJacobian,
    pub path_eq_offset: DVector<f64>,
}

impl StageMaps for AffineStageMaps {
    fn dims(&self) -> Dims {
        Dims {
            n_x: self.dynamics.dx.ncols(),
            n_u: self.dynamics.du.ncols(),
            n_lambda: self.dynamics.dlambda.ncols(),
            n_path_ineq: self.path_ineq_offset.len(),
            n_path_eq: self.path_eq_offset.len(),
        }
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
        &self.dynamics.dx * x + &self.dynamics.du * u + &self.dynamics.dlambda * lambda + &self.dynamics_offset
    }

    fn dynamics_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> StageJacobian {
        self.dynamics.clone()
    }

    fn vi_map(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
        &self.vi.dx * x + &self.vi.du * u + &self.vi.dlambda * lambda + &self.vi_offset
    }

    fn vi_map_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> StageJacobian {
        self.vi.clone()
    }

    fn path_inequality(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.path_ineq.dx * x + &self.path_ineq.du * u + &self.path_ineq_offset
    }

    fn path_inequality_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>) -> PathJacobian {
        self.path_ineq.clone()
    }

    fn path_equality(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.path_eq.dx * x + &self.path_eq.du * u + &self.path_eq_offset
    }

    fn path_equality_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>) -> PathJacobian {
        self.path_eq.clone()
    }
}

pub trait TerminalCost: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Constant Hessian, when the cost is quadratic.
    fn hessian(&self) -> Option<DMatrix<f64>>;
}

pub trait StageCost: Send + Sync {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> f64;
    /// Gradient stacked as `[∇_x; ∇_u; ∇_λ]`.
    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64>;
    /// Constant Hessian over `[x; u; λ]`, when the cost is quadratic.
    fn hessian(&self) -> Option<DMatrix<f64>>;
}

/// `‖x − target‖²_W`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTerminalCost {
    pub weight: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl TerminalCost for QuadraticTerminalCost {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.target;
        d.dot(&(&self.weight * &d))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.weight + self.weight.transpose()) * (x - &self.target)
    }

    fn hessian(&self) -> Option<DMatrix<f64>> {
        Some(&self.weight + self.weight.transpose())
    }
}

/// `‖x − x_ref‖²_{Q_x} + ‖u‖²_{Q_u} + ‖λ‖²_{Q_λ}` with a constant reference.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStageCost {
    pub q_x: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub q_u: DMatrix<f64>,
    pub q_lambda: DMatrix<f64>,
}

impl StageCost for QuadraticStageCost {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        dx.dot(&(&self.q_x * &dx)) + u.dot(&(&self.q_u * u)) + lambda.dot(&(&self.q_lambda * lambda))
    }

    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
        let gx = (&self.q_x + self.q_x.transpose()) * (x - &self.x_ref);
        let gu = (&self.q_u + self.q_u.transpose()) * u;
        let gl = (&self.q_lambda + self.q_lambda.transpose()) * lambda;
        DVector::from_iterator(gx.len() + gu.len() + gl.len(), gx.iter().chain(gu.iter()).chain(gl.iter()).copied())
    }

    fn hessian(&self) -> Option<DMatrix<f64>> {
        let (nx, nu, nl) = (self.q_x.nrows(), self.q_u.nrows(), self.q_lambda.nrows());
        let mut h = DMatrix::zeros(nx + nu + nl, nx + nu + nl);
        h.view_mut((0, 0), (nx, nx)).copy_from(&(&self.q_x + self.q_x.transpose()));
        h.view_mut((nx, nx), (nu, nu)).copy_from(&(&self.q_u + self.q_u.transpose()));
        h.view_mut((nx + nu, nx + nu), (nl, nl)).copy_from(&(&self.q_lambda + self.q_lambda.transpose()));
        Some(h)
    }
}

/// Continuous-time OCPEC: `min L_T(x(T)) + ∫ L_S dt` subject to path constraints,
/// `ẋ = f(x, u, λ)` and `λ(t) ∈ SOL(K, F(x, u, λ))`.
#[derive(Clone)]
pub struct OcpecProblem {
    pub maps: Arc<dyn StageMaps>,
    pub set: ViSet,
    pub terminal_cost: Arc<dyn TerminalCost>,
    pub stage_cost: Arc<dyn StageCost>,
    pub horizon: f64,
    pub x0: DVector<f64>,
}

impl std::fmt::Debug for OcpecProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpecProblem")
            .field("dims", &self.maps.dims())
            .field("set", &self.set)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

impl OcpecProblem {
    pub fn dims(&self) -> Dims {
        self.maps.dims()
    }

    /// Evaluates every map at the origin and checks output sizes against the declared dims.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let check = |map: &'static str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { map, expected, got })
            }
        };
        check("x0", d.n_x, self.x0.len())?;
        check("set", d.n_lambda, self.set.dim())?;
        let (x, u, l) = (DVector::zeros(d.n_x), DVector::zeros(d.n_u), DVector::zeros(d.n_lambda));
        check("f", d.n_x, self.maps.dynamics(&x, &u, &l).len())?;
        check("F", d.n_lambda, self.maps.vi_map(&x, &u, &l).len())?;
        check("G", d.n_path_ineq, self.maps.path_inequality(&x, &u).len())?;
        check("C", d.n_path_eq, self.maps.path_equality(&x, &u).len())?;
        let jf = self.maps.dynamics_jacobian(&x, &u, &l);
        check("∇f", d.n_x * (d.n_x + d.n_u + d.n_lambda), jf.dx.len() + jf.du.len() + jf.dlambda.len())?;
        check("∇f rows", d.n_x, jf.dx.nrows())?;
        let jv = self.maps.vi_map_jacobian(&x, &u, &l);
        check("∇F", d.n_lambda * (d.n_x + d.n_u + d.n_lambda), jv.dx.len() + jv.du.len() + jv.dlambda.len())?;
        check("∇F rows", d.n_lambda, jv.dx.nrows())?;
        let jg = self.maps.path_inequality_jacobian(&x, &u);
        check("∇G", d.n_path_ineq * (d.n_x + d.n_u), jg.dx.len() + jg.du.len())?;
        let jc = self.maps.path_equality_jacobian(&x, &u);
        check("∇C", d.n_path_eq * (d.n_x + d.n_u), jc.dx.len() + jc.du.len())?;
        check("L_S gradient", d.n_x + d.n_u + d.n_lambda, self.stage_cost.gradient(&x, &u, &l).len())?;
        check("L_T gradient", d.n_x, self.terminal_cost.gradient(&x).len())?;
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Index arithmetic for the stage-structured variable and constraint vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLayout {
    pub dims: Dims,
    /// Affine rows of `g(λ) ≥ 0`.
    pub n_set_rows: usize,
}

impl StageLayout {
    pub fn n_z(&self) -> usize {
        self.dims.n_x + self.dims.n_u + 2 * self.dims.n_lambda + 1
    }

    pub fn n_h(&self) -> usize {
        self.dims.n_x + self.dims.n_path_eq + self.dims.n_lambda + 1
    }

    pub fn n_c(&self) -> usize {
        self.dims.n_path_ineq + self.n_set_rows + 1
    }

    fn base(&self, n: usize) -> usize {
        n * self.n_z()
    }

    pub fn x(&self, n: usize) -> Range<usize> {
        let b = self.base(n);
        b..b + self.dims.n_x
    }

    pub fn u(&self, n: usize) -> Range<usize> {
        let b = self.x(n).end;
        b..b + self.dims.n_u
    }

    pub fn lambda(&self, n: usize) -> Range<usize> {
        let b = self.u(n).end;
        b..b + self.dims.n_lambda
    }

    pub fn eta(&self, n: usize) -> Range<usize> {
        let b = self.lambda(n).end;
        b..b + self.dims.n_lambda
    }

    pub fn v(&self, n: usize) -> usize {
        self.eta(n).end
    }

    pub fn stage(&self, n: usize) -> Range<usize> {
        self.base(n)..self.base(n + 1)
    }
}

/// Views of one stage's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StageVars {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub lambda: DVector<f64>,
    pub eta: DVector<f64>,
    pub v: f64,
}

/// The relaxed gap-constraint NLP `min J(z, μ) s.t. h(z) = 0, c(z, s) ≥ 0`.
#[derive(Debug, Clone)]
pub struct DiscretizedNlp {
    problem: Arc<OcpecProblem>,
    n_stages: usize,
    dt: f64,
    mu: f64,
    s: f64,
    gap: GapParams,
    layout: StageLayout,
    hessian_reg: f64,
}

pub fn discretize(problem: Arc<OcpecProblem>, n_stages: usize, s: f64, mu: f64, gap_params: GapParams) -> Result<DiscretizedNlp> {
    if n_stages < 1 {
        return Err(Error::InvalidArgument("need at least one stage".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("relaxation s must be ≥ 0, got {s}")));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("penalty μ must be > 0, got {mu}")));
    }
    problem.validate()?;
    let dims = problem.dims();
    if gap_params.dim() != dims.n_lambda {
        return Err(Error::DimensionMismatch {
            map: "gap A",
            expected: dims.n_lambda,
            got: gap_params.dim(),
        });
    }
    let layout = StageLayout {
        dims,
        n_set_rows: problem.set.num_rows(),
    };
    Ok(DiscretizedNlp {
        dt: problem.horizon / n_stages as f64,
        problem,
        n_stages,
        mu,
        s,
        gap: gap_params,
        layout,
        hessian_reg: HESSIAN_REGULARIZATION,
    })
}

impl DiscretizedNlp {
    pub fn problem(&self) -> &OcpecProblem {
        &self.problem
    }

    pub fn problem_arc(&self) -> &Arc<OcpecProblem> {
        &self.problem
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn relaxation(&self) -> f64 {
        self.s
    }

    pub fn gap_params(&self) -> &GapParams {
        &self.gap
    }

    pub fn layout(&self) -> &StageLayout {
        &self.layout
    }

    pub fn hessian_regularization(&self) -> f64 {
        self.hessian_reg
    }

    pub fn with_relaxation(&self, s: f64) -> Result<Self> {
        if !(s >= 0.0) {
            return Err(Error::InvalidArgument(format!("relaxation s must be ≥ 0, got {s}")));
        }
        Ok(Self { s, ..self.clone() })
    }

    pub fn with_hessian_regularization(&self, delta: f64) -> Self {
        Self {
            hessian_reg: delta,
            ..self.clone()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n_stages * self.layout.n_z()
    }

    pub fn num_eq(&self) -> usize {
        self.n_stages * self.layout.n_h()
    }

    pub fn num_in(&self) -> usize {
        self.n_stages * self.layout.n_c()
    }

    fn check_len(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.num_vars() {
            return Err(Error::DimensionMismatch {
                map: "z",
                expected: self.num_vars(),
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn stage_vars(&self, z: &DVector<f64>, n: usize) -> StageVars {
        let l = &self.layout;
        let slice = |r: Range<usize>| DVector::from_column_slice(&z.as_slice()[r]);
        StageVars {
            x: slice(l.x(n)),
            u: slice(l.u(n)),
            lambda: slice(l.lambda(n)),
            eta: slice(l.eta(n)),
            v: z[l.v(n)],
        }
    }

    fn previous_state(&self, z: &DVector<f64>, n: usize) -> DVector<f64> {
        if n == 0 {
            self.problem.x0.clone()
        } else {
            DVector::from_column_slice(&z.as_slice()[self.layout.x(n - 1)])
        }
    }

    /// `(λ_n, η_n)` for every stage, the inputs of the projector sweep.
    pub fn projector_inputs(&self, z: &DVector<f64>) -> Vec<(DVector<f64>, DVector<f64>)> {
        (0..self.n_stages)
            .map(|n| {
                let l = &self.layout;
                (
                    DVector::from_column_slice(&z.as_slice()[l.lambda(n)]),
                    DVector::from_column_slice(&z.as_slice()[l.eta(n)]),
                )
            })
            .collect()
    }

    fn check_gap_evals(&self, z: &DVector<f64>, gap_evals: &[GapEvaluation]) -> Result<()> {
        self.check_len(z)?;
        if gap_evals.len() != self.n_stages {
            return Err(Error::DimensionMismatch {
                map: "gap evaluations",
                expected: self.n_stages,
                got: gap_evals.len(),
            });
        }
        for (n, (lambda, eta)) in self.projector_inputs(z).iter().enumerate() {
            if !gap_evals[n].matches(lambda, eta) {
                return Err(Error::StaleGapEvaluation { stage: n });
            }
        }
        Ok(())
    }

    /// Stacked `(h, c)`. The gap rows use the supplied evaluations, which must have
    /// been computed at the `(λ_n, η_n)` held in `z`.
    pub fn eval_constraints(&self, z: &DVector<f64>, gap_evals: &[GapEvaluation]) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_gap_evals(z, gap_evals)?;
        let l = &self.layout;
        let d = l.dims;
        let maps = &self.problem.maps;
        let rows = self.problem.set.rows();
        let mut h = DVector::zeros(self.num_eq());
        let mut c = DVector::zeros(self.num_in());
        for n in 0..self.n_stages {
            let sv = self.stage_vars(z, n);
            let x_prev = self.previous_state(z, n);
            let mut row = n * l.n_h();
            let dyn_res = &x_prev + maps.dynamics(&sv.x, &sv.u, &sv.lambda) * self.dt - &sv.x;
            h.rows_mut(row, d.n_x).copy_from(&dyn_res);
            row += d.n_x;
            h.rows_mut(row, d.n_path_eq).copy_from(&maps.path_equality(&sv.x, &sv.u));
            row += d.n_path_eq;
            h.rows_mut(row, d.n_lambda)
                .copy_from(&(maps.vi_map(&sv.x, &sv.u, &sv.lambda) - &sv.eta));
            row += d.n_lambda;
            h[row] = gap_evals[n].phi - sv.v;

            let mut row = n * l.n_c();
            c.rows_mut(row, d.n_path_ineq).copy_from(&maps.path_inequality(&sv.x, &sv.u));
            row += d.n_path_ineq;
            c.rows_mut(row, l.n_set_rows).copy_from(&rows.eval(&sv.lambda));
            row += l.n_set_rows;
            c[row] = self.s - sv.v;
        }
        Ok((h, c))
    }

    /// Exact Jacobians `(∇h, ∇c)` in CSR form.
    pub fn eval_jacobians(&self, z: &DVector<f64>, gap_evals: &[GapEvaluation]) -> Result<(SparseMatrix, SparseMatrix)> {
        self.check_gap_evals(z, gap_evals)?;
        let l = &self.layout;
        let d = l.dims;
        let maps = &self.problem.maps;
        let set_rows = self.problem.set.rows().matrix();
        let mut jh = Triplets::new(self.num_eq(), self.num_vars());
        let mut jc = Triplets::new(self.num_in(), self.num_vars());
        for n in 0..self.n_stages {
            let sv = self.stage_vars(z, n);
            let (cx, cu, cl, ce, cv) = (l.x(n).start, l.u(n).start, l.lambda(n).start, l.eta(n).start, l.v(n));

            let mut row = n * l.n_h();
            let jf = maps.dynamics_jacobian(&sv.x, &sv.u, &sv.lambda);
            if n > 0 {
                let prev = l.x(n - 1).start;
                for i in 0..d.n_x {
                    jh.push(row + i, prev + i, 1.0);
                }
            }
            jh.push_block(row, cx, &(jf.dx * self.dt - DMatrix::identity(d.n_x, d.n_x)));
            jh.push_block(row, cu, &(jf.du * self.dt));
            jh.push_block(row, cl, &(jf.dlambda * self.dt));
            row += d.n_x;

            let jce = maps.path_equality_jacobian(&sv.x, &sv.u);
            jh.push_block(row, cx, &jce.dx);
            jh.push_block(row, cu, &jce.du);
            row += d.n_path_eq;

            let jv = maps.vi_map_jacobian(&sv.x, &sv.u, &sv.lambda);
            jh.push_block(row, cx, &jv.dx);
            jh.push_block(row, cu, &jv.du);
            jh.push_block(row, cl, &jv.dlambda);
            for i in 0..d.n_lambda {
                jh.push(row + i, ce + i, -1.0);
            }
            row += d.n_lambda;

            let ge = &gap_evals[n];
            for i in 0..d.n_lambda {
                jh.push(row, cl + i, ge.grad_lambda[i]);
                jh.push(row, ce + i, ge.grad_eta[i]);
            }
            jh.push(row, cv, -1.0);

            let mut row = n * l.n_c();
            let jg = maps.path_inequality_jacobian(&sv.x, &sv.u);
            jc.push_block(row, cx, &jg.dx);
            jc.push_block(row, cu, &jg.du);
            row += d.n_path_ineq;
            jc.push_block(row, cl, set_rows);
            row += l.n_set_rows;
            jc.push(row, cv, -1.0);
        }
        Ok((jh.into_csr(), jc.into_csr()))
    }

    /// `(J, ∇J)`.
    pub fn eval_cost(&self, z: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_len(z)?;
        let l = &self.layout;
        let d = l.dims;
        let mut grad = DVector::zeros(self.num_vars());
        let mut cost = 0.0;
        for n in 0..self.n_stages {
            let sv = self.stage_vars(z, n);
            cost += self.problem.stage_cost.value(&sv.x, &sv.u, &sv.lambda) * self.dt + self.mu * self.dt * sv.v * sv.v;
            let g = self.problem.stage_cost.gradient(&sv.x, &sv.u, &sv.lambda) * self.dt;
            let start = l.x(n).start;
            grad.rows_mut(start, d.n_x + d.n_u + d.n_lambda).copy_from(&g);
            grad[l.v(n)] = 2.0 * self.mu * self.dt * sv.v;
        }
        let last = self.n_stages - 1;
        let x_n = DVector::from_column_slice(&z.as_slice()[l.x(last)]);
        cost += self.problem.terminal_cost.value(&x_n);
        let gt = self.problem.terminal_cost.gradient(&x_n);
        let mut gx = grad.rows_mut(l.x(last).start, d.n_x);
        gx += gt;
        Ok((cost, grad))
    }

    /// Constant Gauss–Newton Hessian `∇²J + δ_H I` (block diagonal per stage).
    pub fn gauss_newton_hessian(&self) -> Result<SparseMatrix> {
        let l = &self.layout;
        let d = l.dims;
        let hs = self
            .problem
            .stage_cost
            .hessian()
            .ok_or(Error::NonQuadraticCost("stage cost"))?;
        let ht = self
            .problem
            .terminal_cost
            .hessian()
            .ok_or(Error::NonQuadraticCost("terminal cost"))?;
        let nxul = d.n_x + d.n_u + d.n_lambda;
        if hs.nrows() != nxul || ht.nrows() != d.n_x {
            return Err(Error::DimensionMismatch {
                map: "cost hessian",
                expected: nxul,
                got: hs.nrows(),
            });
        }
        let mut t = Triplets::new(self.num_vars(), self.num_vars());
        let stage_block = hs * self.dt;
        for n in 0..self.n_stages {
            t.push_block(l.x(n).start, l.x(n).start, &stage_block);
            t.push(l.v(n), l.v(n), 2.0 * self.mu * self.dt);
        }
        t.push_block(l.x(self.n_stages - 1).start, l.x(self.n_stages - 1).start, &ht);
        for i in 0..self.num_vars() {
            t.push(i, i, self.hessian_reg);
        }
        Ok(t.into_csr())
    }

    /// Stacks per-stage variables into `z`.
    pub fn pack(&self, stages: &[StageVars]) -> Result<DVector<f64>> {
        if stages.len() != self.n_stages {
            return Err(Error::DimensionMismatch {
                map: "stages",
                expected: self.n_stages,
                got: stages.len(),
            });
        }
        let l = &self.layout;
        let mut z = DVector::zeros(self.num_vars());
        for (n, sv) in stages.iter().enumerate() {
            z.rows_mut(l.x(n).start, l.dims.n_x).copy_from(&sv.x);
            z.rows_mut(l.u(n).start, l.dims.n_u).copy_from(&sv.u);
            z.rows_mut(l.lambda(n).start, l.dims.n_lambda).copy_from(&sv.lambda);
            z.rows_mut(l.eta(n).start, l.dims.n_lambda).copy_from(&sv.eta);
            z[l.v(n)] = sv.v;
        }
        Ok(z)
    }
}

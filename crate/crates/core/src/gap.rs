//! Regularized gap function `φᶜ(λ, η) = max_{ω∈K} ηᵀ(λ − ω) − (c/2)(λ − ω)ᵀA(λ − ω)`.
//!
//! The maximizer is the skewed projection `ω̂ = Π_{K,A}(λ − A⁻¹η / c)`. Once `ω̂` is
//! known the value and both gradients are explicit:
//!
//! ```text
//! φ     = ηᵀ(λ − ω̂) − (c/2)(λ − ω̂)ᵀA(λ − ω̂)
//! ∇_λ φ = η − cA(λ − ω̂)
//! ∇_η φ = λ − ω̂
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::reject_nan;
use crate::qp::solve_projection_qp;
use crate::vi::{project_box, ViSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GapParams {
    c: f64,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    identity: bool,
}

impl GapParams {
    pub fn new(c: f64, a: DMatrix<f64>) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidGapParams(format!("c must be positive and finite, got {c}")));
        }
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidGapParams("A must be a non-empty square matrix".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGapParams("A has non-finite entries".into()));
        }
        if (&a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
            return Err(Error::InvalidGapParams("A is not symmetric".into()));
        }
        let min_eig = a.clone().symmetric_eigenvalues().min();
        if !(min_eig > 0.0) {
            return Err(Error::InvalidGapParams(format!("A is not positive definite (λ_min = {min_eig:e})")));
        }
        let a_inv = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidGapParams("Cholesky of A failed".into()))?
            .inverse();
        let n = a.nrows();
        if (&a * &a_inv - DMatrix::identity(n, n)).amax() > 1e-10 {
            return Err(Error::InvalidGapParams("A is too ill-conditioned to invert".into()));
        }
        let identity = a == DMatrix::identity(n, n);
        Ok(Self { c, a, a_inv, identity })
    }

    /// `c` with `A = I`.
    pub fn identity(c: f64, n: usize) -> Result<Self> {
        Self::new(c, DMatrix::identity(n, n))
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// How `ω̂` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorPath {
    /// Closed-form clamp when the set is a box and `A = I`, QP otherwise.
    #[default]
    Auto,
    /// Closed-form clamp; an error unless the set is a box and `A = I`.
    BoxFast,
    /// Always the active-set projection QP on the set's affine rows.
    Polyhedral,
}

impl std::str::FromStr for ProjectorPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "box" | "box_fast" | "box-fast" => Ok(Self::BoxFast),
            "polyhedral" | "qp" => Ok(Self::Polyhedral),
            other => Err(Error::InvalidArgument(format!("unknown projector path `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEvaluation {
    pub omega_hat: DVector<f64>,
    pub phi: f64,
    pub grad_lambda: DVector<f64>,
    pub grad_eta: DVector<f64>,
    /// Optimal working set of the projection QP; empty on the closed-form path.
    pub active_set: Vec<usize>,
    lambda_bits: Vec<u64>,
    eta_bits: Vec<u64>,
}

impl GapEvaluation {
    /// True iff this evaluation was computed at exactly these `(λ, η)`.
    pub fn matches(&self, lambda: &DVector<f64>, eta: &DVector<f64>) -> bool {
        self.lambda_bits.len() == lambda.len()
            && self.eta_bits.len() == eta.len()
            && self.lambda_bits.iter().zip(lambda.iter()).all(|(b, v)| *b == v.to_bits())
            && self.eta_bits.iter().zip(eta.iter()).all(|(b, v)| *b == v.to_bits())
    }
}

fn box_fast_eligible(params: &GapParams, set: &ViSet) -> bool {
    params.is_identity() && set.as_box().is_some()
}

/// `ω̂ = Π_{K,A}(λ − A⁻¹η / c)` together with the projection QP working set.
pub fn skewed_projector(
    lambda: &DVector<f64>,
    eta: &DVector<f64>,
    params: &GapParams,
    set: &ViSet,
    warm_start: Option<&[usize]>,
    path: ProjectorPath,
) -> Result<(DVector<f64>, Vec<usize>)> {
    reject_nan(lambda.as_slice(), "λ")?;
    reject_nan(eta.as_slice(), "η")?;
    if lambda.len() != params.dim() || eta.len() != params.dim() || set.dim() != params.dim() {
        return Err(Error::InvalidArgument("skewed_projector: dimension mismatch".into()));
    }
    let use_box = match path {
        ProjectorPath::Auto => box_fast_eligible(params, set),
        ProjectorPath::BoxFast => {
            if !box_fast_eligible(params, set) {
                return Err(Error::InvalidArgument("box fast path needs a box set and A = I".into()));
            }
            true
        }
        ProjectorPath::Polyhedral => false,
    };
    if use_box {
        let (lower, upper) = set.as_box().expect("checked above");
        let shifted = lambda - eta / params.c();
        return Ok((project_box(&shifted, lower, upper)?, Vec::new()));
    }
    let sol = solve_projection_qp(params.a(), params.c(), lambda, eta, set, warm_start)?;
    Ok((sol.omega, sol.active_set))
}

pub fn gap_value(lambda: &DVector<f64>, eta: &DVector<f64>, omega_hat: &DVector<f64>, params: &GapParams) -> Result<f64> {
    reject_nan(lambda.as_slice(), "λ")?;
    reject_nan(eta.as_slice(), "η")?;
    reject_nan(omega_hat.as_slice(), "ω̂")?;
    let d = lambda - omega_hat;
    Ok(eta.dot(&d) - 0.5 * params.c() * d.dot(&(params.a() * &d)))
}

/// `(∇_λ φ, ∇_η φ)` as column vectors.
pub fn gap_gradients(
    lambda: &DVector<f64>,
    eta: &DVector<f64>,
    omega_hat: &DVector<f64>,
    params: &GapParams,
) -> (DVector<f64>, DVector<f64>) {
    let d = lambda - omega_hat;
    let grad_lambda = eta - params.a() * &d * params.c();
    (grad_lambda, d)
}

/// Projector, value and gradients in one call.
pub fn evaluate_gap(
    lambda: &DVector<f64>,
    eta: &DVector<f64>,
    params: &GapParams,
    set: &ViSet,
    warm_start: Option<&[usize]>,
    path: ProjectorPath,
) -> Result<GapEvaluation> {
    let (omega_hat, active_set) = skewed_projector(lambda, eta, params, set, warm_start, path)?;
    let phi = gap_value(lambda, eta, &omega_hat, params)?;
    let (grad_lambda, grad_eta) = gap_gradients(lambda, eta, &omega_hat, params);
    Ok(GapEvaluation {
        omega_hat,
        phi,
        grad_lambda,
        grad_eta,
        active_set,
        lambda_bits: lambda.iter().map(|v| v.to_bits()).collect(),
        eta_bits: eta.iter().map(|v| v.to_bits()).collect(),
    })
}

/// Three-branch closed form of `φᶜ` for a scalar box `[b_l, b_u]` with `A = 1`.
pub fn scalar_gap_closed_form(lambda: f64, eta: f64, c: f64, b_l: f64, b_u: f64) -> f64 {
    let shifted = lambda - eta / c;
    if shifted <= b_l {
        let d = lambda - b_l;
        eta * d - 0.5 * c * d * d
    } else if shifted >= b_u {
        let d = lambda - b_u;
        eta * d - 0.5 * c * d * d
    } else {
        eta * eta / (2.0 * c)
    }
}

/// Stage-wise evaluation of the gap functions with a warm-start cache.
///
/// In serial mode stage `n` is warm-started from stage `n − 1` of the same sweep
/// (stage 0 from its own previous result). In parallel mode each stage only reuses
/// its own previous working set, so stages share no mutable state.
#[derive(Debug, Clone)]
pub struct StageProjector {
    params: GapParams,
    set: ViSet,
    path: ProjectorPath,
    parallel: bool,
    cache: Vec<Option<Vec<usize>>>,
}

impl StageProjector {
    pub fn new(params: GapParams, set: ViSet, path: ProjectorPath, parallel: bool) -> Result<Self> {
        if path == ProjectorPath::BoxFast && !box_fast_eligible(&params, &set) {
            return Err(Error::InvalidArgument("box fast path needs a box set and A = I".into()));
        }
        Ok(Self {
            params,
            set,
            path,
            parallel,
            cache: Vec::new(),
        })
    }

    pub fn params(&self) -> &GapParams {
        &self.params
    }

    pub fn set(&self) -> &ViSet {
        &self.set
    }

    pub fn path(&self) -> ProjectorPath {
        self.path
    }

    fn eval_one(&self, stage: usize, lambda: &DVector<f64>, eta: &DVector<f64>, warm: Option<&[usize]>) -> Result<GapEvaluation> {
        evaluate_gap(lambda, eta, &self.params, &self.set, warm, self.path).map_err(|e| match e {
            Error::Projection { reason, .. } => Error::Projection {
                context: format!("stage {stage}"),
                reason,
            },
            other => other,
        })
    }

    /// Evaluates all stages and updates the warm-start cache.
    pub fn evaluate(&mut self, inputs: &[(DVector<f64>, DVector<f64>)]) -> Result<Vec<GapEvaluation>> {
        self.cache.resize(inputs.len(), None);
        let evals = if self.parallel {
            self.evaluate_self_warm(inputs)?
        } else {
            let mut out: Vec<GapEvaluation> = Vec::with_capacity(inputs.len());
            for (n, (lambda, eta)) in inputs.iter().enumerate() {
                let warm = match out.last() {
                    Some(prev) => Some(prev.active_set.as_slice()),
                    None => self.cache[0].as_deref(),
                };
                out.push(self.eval_one(n, lambda, eta, warm)?);
            }
            out
        };
        for (slot, e) in self.cache.iter_mut().zip(&evals) {
            *slot = Some(e.active_set.clone());
        }
        Ok(evals)
    }

    /// Evaluates all stages using the cache read-only (self warm starts).
    pub fn evaluate_frozen(&self, inputs: &[(DVector<f64>, DVector<f64>)]) -> Result<Vec<GapEvaluation>> {
        self.evaluate_self_warm(inputs)
    }

    fn evaluate_self_warm(&self, inputs: &[(DVector<f64>, DVector<f64>)]) -> Result<Vec<GapEvaluation>> {
        let job = |(n, (lambda, eta)): (usize, &(DVector<f64>, DVector<f64>))| {
            let warm = self.cache.get(n).and_then(|c| c.as_deref());
            self.eval_one(n, lambda, eta, warm)
        };
        #[cfg(feature = "parallel")]
        if self.parallel {
            use rayon::prelude::*;
            return inputs.par_iter().enumerate().map(job).collect();
        }
        inputs.iter().enumerate().map(job).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    fn unit_interval() -> ViSet {
        ViSet::new_box(s(-1.0), s(1.0)).unwrap()
    }

    /// Maximizes the gap objective over a fine grid of [−1, 1].
    fn grid_argmax(lambda: f64, eta: f64, c: f64) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=200_000 {
            let w = -1.0 + 2.0 * k as f64 / 200_000.0;
            let val = eta * (lambda - w) - 0.5 * c * (lambda - w).powi(2);
            if val > best.0 {
                best = (val, w);
            }
        }
        (best.1, best.0)
    }

    #[test]
    fn params_validation() {
        assert!(GapParams::identity(0.0, 1).is_err());
        assert!(GapParams::new(1.0, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(GapParams::new(1.0, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        let p = GapParams::new(2.0, DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        assert!(!p.is_identity());
        assert!((p.a() * p.a_inv() - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn projector_examples() {
        let k = unit_interval();
        let p1 = GapParams::identity(1.0, 1).unwrap();
        let (w, _) = skewed_projector(&s(0.0), &s(0.0), &p1, &k, None, ProjectorPath::Auto).unwrap();
        assert_eq!(w[0], 0.0);
        let (w, _) = skewed_projector(&s(0.0), &s(2.0), &p1, &k, None, ProjectorPath::Auto).unwrap();
        assert_eq!(w[0], -1.0);
        assert!((grid_argmax(0.0, 2.0, 1.0).0 + 1.0).abs() < 1e-4);
        let p05 = GapParams::identity(0.5, 1).unwrap();
        let (w, _) = skewed_projector(&s(0.5), &s(0.1), &p05, &k, None, ProjectorPath::Auto).unwrap();
        assert!((w[0] - 0.3).abs() < 1e-15);
        assert!((grid_argmax(0.5, 0.1, 0.5).0 - 0.3).abs() < 1e-4);
    }

    #[test]
    fn value_examples() {
        let k = unit_interval();
        let p = GapParams::identity(0.5, 1).unwrap();
        let e = evaluate_gap(&s(0.0), &s(0.0), &p, &k, None, ProjectorPath::Auto).unwrap();
        assert_eq!(e.phi, 0.0);

        let e = evaluate_gap(&s(0.0), &s(0.5), &p, &k, None, ProjectorPath::Auto).unwrap();
        assert_eq!(e.omega_hat[0], -1.0);
        assert!((e.phi - 0.25).abs() < 1e-15);
        assert!((grid_argmax(0.0, 0.5, 0.5).1 - 0.25).abs() < 1e-8);

        let e = evaluate_gap(&s(1.0), &s(-1.0), &p, &k, None, ProjectorPath::Auto).unwrap();
        assert_eq!(e.omega_hat[0], 1.0);
        assert_eq!(e.phi, 0.0);
    }

    #[test]
    fn gradient_examples_match_finite_differences() {
        let k = unit_interval();
        let cases = [(1.0, 0.0, 2.0, 1.0, 1.0), (0.5, 0.5, 0.1, 0.0, 0.2)];
        for (c, lam, eta, gl, ge) in cases {
            let p = GapParams::identity(c, 1).unwrap();
            let e = evaluate_gap(&s(lam), &s(eta), &p, &k, None, ProjectorPath::Auto).unwrap();
            assert!((e.grad_lambda[0] - gl).abs() < 1e-12, "{}", e.grad_lambda[0]);
            assert!((e.grad_eta[0] - ge).abs() < 1e-12);
            let h = 1e-6;
            let phi = |l: f64, t: f64| evaluate_gap(&s(l), &s(t), &p, &k, None, ProjectorPath::Auto).unwrap().phi;
            let fd_l = (phi(lam + h, eta) - phi(lam - h, eta)) / (2.0 * h);
            let fd_e = (phi(lam, eta + h) - phi(lam, eta - h)) / (2.0 * h);
            assert!((fd_l - gl).abs() <= 1e-6 * gl.abs().max(1.0));
            assert!((fd_e - ge).abs() <= 1e-6 * ge.abs().max(1.0));
        }
    }

    #[test]
    fn zero_gradients_at_the_solution() {
        let p = GapParams::identity(1.0, 1).unwrap();
        let e = evaluate_gap(&s(0.0), &s(0.0), &p, &unit_interval(), None, ProjectorPath::Auto).unwrap();
        assert_eq!((e.grad_lambda[0], e.grad_eta[0]), (0.0, 0.0));
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(scalar_gap_closed_form(0.0, 0.5, 0.5, -1.0, 1.0), 0.25);
        assert_eq!(scalar_gap_closed_form(0.0, 0.0, 0.5, -1.0, 1.0), 0.0);
        assert_eq!(scalar_gap_closed_form(1.0, -1.0, 0.5, -1.0, 1.0), 0.0);
        // both neighbouring branches agree on the branch boundary
        let (c, eta) = (0.5, 0.5);
        let d = 1.0;
        assert_eq!(eta * d - 0.5 * c * d * d, eta * eta / (2.0 * c));
    }

    #[test]
    fn box_fast_path_requires_identity() {
        let a = DMatrix::from_row_slice(1, 1, &[2.0]);
        let p = GapParams::new(1.0, a).unwrap();
        let r = skewed_projector(&s(0.0), &s(1.0), &p, &unit_interval(), None, ProjectorPath::BoxFast);
        assert!(r.is_err());
        // Auto falls back to the QP, which projects in the A-norm
        let (w, _) = skewed_projector(&s(0.0), &s(4.0), &p, &unit_interval(), None, ProjectorPath::Auto).unwrap();
        assert!((w[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn stale_fingerprint_detection() {
        let p = GapParams::identity(1.0, 1).unwrap();
        let e = evaluate_gap(&s(0.2), &s(0.1), &p, &unit_interval(), None, ProjectorPath::Auto).unwrap();
        assert!(e.matches(&s(0.2), &s(0.1)));
        assert!(!e.matches(&s(0.2 + 1e-16), &s(0.1)));
    }

    #[test]
    fn stage_projector_modes_agree() {
        let p = GapParams::identity(1.0, 1).unwrap();
        let inputs: Vec<_> = (0..20)
            .map(|n| (s((n as f64 * 0.37).sin()), s((n as f64 * 0.91).cos() * 3.0)))
            .collect();
        let mut serial = StageProjector::new(p.clone(), unit_interval().to_polyhedral(), ProjectorPath::Polyhedral, false).unwrap();
        let mut parallel = StageProjector::new(p.clone(), unit_interval().to_polyhedral(), ProjectorPath::Polyhedral, true).unwrap();
        let fast = StageProjector::new(p, unit_interval(), ProjectorPath::BoxFast, false).unwrap();
        for _ in 0..2 {
            let a = serial.evaluate(&inputs).unwrap();
            let b = parallel.evaluate(&inputs).unwrap();
            let c = fast.evaluate_frozen(&inputs).unwrap();
            for ((x, y), z) in a.iter().zip(&b).zip(&c) {
                assert!((x.phi - y.phi).abs() < 1e-14);
                assert!((x.phi - z.phi).abs() < 1e-14);
            }
        }
    }
}

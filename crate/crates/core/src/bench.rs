//! Benchmark problems, run driver, CSV artifacts and independent verification.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{bounds_to_vector, Bound, MatrixSpec};
use crate::gap::{evaluate_gap, scalar_gap_closed_form, GapParams, ProjectorPath};
use crate::model::{
    discretize, AffineStageMaps, DiscretizedNlp, OcpecProblem, PathJacobian, QuadraticStageCost, QuadraticTerminalCost,
    StageJacobian,
};
use crate::sgcl::{
    continuation_solve, max_natural_residual, sgcl_solve, IterationRecord, PhaseTimings, RelaxationRecord, SgclConfig,
    SgclPoint, SgclStats, SgclStatus,
};
use crate::vi::{natural_residual, ViSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    SingleS,
    Continuation,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_s" | "single-s" | "single" => Ok(Self::SingleS),
            "continuation" => Ok(Self::Continuation),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    #[default]
    Ones,
    Zeros,
    /// Uniform on `[−random_scale, random_scale]` per entry.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// `x_ref ≡ x_e`.
    #[default]
    Terminal,
    Constant(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub q_t: MatrixSpec,
    pub q_x: MatrixSpec,
    pub q_u: MatrixSpec,
    pub q_lambda: MatrixSpec,
}

/// Elementwise bounds folded into the path inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundLevels {
    pub x_lower: Vec<Bound>,
    pub x_upper: Vec<Bound>,
    pub u_lower: Vec<Bound>,
    pub u_upper: Vec<Bound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub c: f64,
    /// Metric `A`; identity when absent.
    #[serde(default)]
    pub a: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetSpec {
    Box { lower: Vec<Bound>, upper: Vec<Bound> },
    Polyhedral { matrix: MatrixSpec, offset: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRowsSpec {
    pub dx: MatrixSpec,
    pub du: MatrixSpec,
    pub offset: Vec<f64>,
}

/// A user-defined problem with affine maps
/// `ẋ = A x + B_u u + B_λ λ + f₀` and `F = F_x x + F_u u + F_λ λ + F₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineProblemSpec {
    pub n_x: usize,
    pub n_u: usize,
    pub n_lambda: usize,
    pub a: MatrixSpec,
    pub b_u: MatrixSpec,
    pub b_lambda: MatrixSpec,
    #[serde(default)]
    pub f_offset: Option<Vec<f64>>,
    pub f_x: MatrixSpec,
    pub f_u: MatrixSpec,
    pub f_lambda: MatrixSpec,
    #[serde(default)]
    pub vi_offset: Option<Vec<f64>>,
    pub set: SetSpec,
    /// Extra `G(x, u) ≥ 0` rows beyond the bounds.
    #[serde(default)]
    pub path_inequality: Option<AffineRowsSpec>,
    /// `C(x, u) = 0` rows.
    #[serde(default)]
    pub path_equality: Option<AffineRowsSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum ProblemSelect {
    #[default]
    AffineDvi,
    Affine(Box<AffineProblemSpec>),
}

/// Everything a run needs. Serializes to the JSON config tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub problem: ProblemSelect,
    pub n_stages: usize,
    pub horizon: f64,
    pub weights: Weights,
    pub x0: Vec<f64>,
    pub x_e: Vec<f64>,
    pub x_ref: ReferencePolicy,
    pub bounds: BoundLevels,
    pub gap: GapSpec,
    pub sgcl: SgclConfig,
    pub mode: RunMode,
    /// Relaxation for `single_s` runs.
    pub s: f64,
    pub initial_guess: InitialGuess,
    pub random_scale: f64,
    pub seed: u64,
    /// Number of independent starts. Start `i` uses seed `seed + i`.
    pub starts: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            problem: ProblemSelect::AffineDvi,
            n_stages: 100,
            horizon: 1.0,
            weights: Weights {
                q_t: MatrixSpec::diagonal(&[10.0, 10.0]),
                q_x: MatrixSpec::diagonal(&[10.0, 10.0]),
                q_u: MatrixSpec::diagonal(&[1.0]),
                q_lambda: MatrixSpec::diagonal(&[0.001]),
            },
            x0: vec![-0.5, -1.0],
            x_e: vec![0.0, 0.0],
            x_ref: ReferencePolicy::Terminal,
            bounds: BoundLevels {
                x_lower: vec![Bound(-2.0); 2],
                x_upper: vec![Bound(2.0); 2],
                u_lower: vec![Bound(-2.0)],
                u_upper: vec![Bound(2.0)],
            },
            gap: GapSpec { c: 1.0, a: None },
            sgcl: SgclConfig::default(),
            mode: RunMode::SingleS,
            s: 1e-6,
            initial_guess: InitialGuess::Ones,
            random_scale: 1.0,
            seed: 0,
            starts: 1,
        }
    }
}

fn vec_or_zero(v: &Option<Vec<f64>>, n: usize, what: &str) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::zeros(n)),
        Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Error::InvalidConfig(format!("{what}: expected {n} entries, got {}", v.len()))),
    }
}

fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::InvalidConfig(format!(
            "{what}: expected {rows}×{cols}, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_weight(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    check_shape(m, n, n, what)?;
    if (m - m.transpose()).amax() > 1e-12 {
        return Err(Error::InvalidConfig(format!("{what} must be symmetric")));
    }
    if n > 0 && m.clone().symmetric_eigenvalues().min() < -1e-12 {
        return Err(Error::InvalidConfig(format!("{what} must be positive semidefinite")));
    }
    Ok(())
}

/// Appends rows `e_iᵀy − l_i ≥ 0` and `u_i − e_iᵀy ≥ 0` for the finite bounds.
fn bound_rows(lower: &[Bound], upper: &[Bound], n: usize, what: &str) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    if lower.len() != n || upper.len() != n {
        return Err(Error::InvalidConfig(format!("{what} bounds: expected {n} entries")));
    }
    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    for i in 0..n {
        let (l, u) = (lower[i].0, upper[i].0);
        if l.is_nan() || u.is_nan() || l > u {
            return Err(Error::InvalidConfig(format!("{what} bounds: need lower ≤ upper at index {i}")));
        }
        if l.is_finite() {
            let mut r = DVector::zeros(n);
            r[i] = 1.0;
            rows.push(r);
            offsets.push(-l);
        }
        if u.is_finite() {
            let mut r = DVector::zeros(n);
            r[i] = -1.0;
            rows.push(r);
            offsets.push(u);
        }
    }
    Ok((rows, offsets))
}

fn stack_rows(rows: &[DVector<f64>], cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from(&r.transpose());
    }
    m
}

fn affine_dvi_spec() -> AffineProblemSpec {
    AffineProblemSpec {
        n_x: 2,
        n_u: 1,
        n_lambda: 1,
        a: MatrixSpec {
            rows: 2,
            cols: 2,
            data: vec![1.0, -3.0, -8.0, 10.0],
        },
        b_u: MatrixSpec {
            rows: 2,
            cols: 1,
            data: vec![4.0, 8.0],
        },
        b_lambda: MatrixSpec {
            rows: 2,
            cols: 1,
            data: vec![-3.0, -1.0],
        },
        f_offset: None,
        f_x: MatrixSpec {
            rows: 1,
            cols: 2,
            data: vec![1.0, -3.0],
        },
        f_u: MatrixSpec {
            rows: 1,
            cols: 1,
            data: vec![3.0],
        },
        f_lambda: MatrixSpec {
            rows: 1,
            cols: 1,
            data: vec![5.0],
        },
        vi_offset: None,
        set: SetSpec::Box {
            lower: vec![Bound(-1.0)],
            upper: vec![Bound(1.0)],
        },
        path_inequality: None,
        path_equality: None,
    }
}

impl BenchmarkSpec {
    fn affine_spec(&self) -> AffineProblemSpec {
        match &self.problem {
            ProblemSelect::AffineDvi => affine_dvi_spec(),
            ProblemSelect::Affine(p) => (**p).clone(),
        }
    }

    pub fn build_problem(&self) -> Result<OcpecProblem> {
        let p = self.affine_spec();
        let (nx, nu, nl) = (p.n_x, p.n_u, p.n_lambda);
        let a = p.a.to_dmatrix("a")?;
        let b_u = p.b_u.to_dmatrix("b_u")?;
        let b_l = p.b_lambda.to_dmatrix("b_lambda")?;
        check_shape(&a, nx, nx, "a")?;
        check_shape(&b_u, nx, nu, "b_u")?;
        check_shape(&b_l, nx, nl, "b_lambda")?;
        let f_x = p.f_x.to_dmatrix("f_x")?;
        let f_u = p.f_u.to_dmatrix("f_u")?;
        let f_l = p.f_lambda.to_dmatrix("f_lambda")?;
        check_shape(&f_x, nl, nx, "f_x")?;
        check_shape(&f_u, nl, nu, "f_u")?;
        check_shape(&f_l, nl, nl, "f_lambda")?;

        let (x_rows, x_off) = bound_rows(&self.bounds.x_lower, &self.bounds.x_upper, nx, "x")?;
        let (u_rows, u_off) = bound_rows(&self.bounds.u_lower, &self.bounds.u_upper, nu, "u")?;
        let mut g_x = stack_rows(&x_rows, nx).resize_vertically(x_rows.len() + u_rows.len(), 0.0);
        let mut g_u = DMatrix::zeros(x_rows.len(), nu).resize_vertically(x_rows.len() + u_rows.len(), 0.0);
        g_u.view_mut((x_rows.len(), 0), (u_rows.len(), nu)).copy_from(&stack_rows(&u_rows, nu));
        let mut g_off: Vec<f64> = x_off.into_iter().chain(u_off).collect();
        if let Some(extra) = &p.path_inequality {
            let (ex, eu) = (extra.dx.to_dmatrix("path_inequality.dx")?, extra.du.to_dmatrix("path_inequality.du")?);
            let m = extra.offset.len();
            check_shape(&ex, m, nx, "path_inequality.dx")?;
            check_shape(&eu, m, nu, "path_inequality.du")?;
            let r = g_x.nrows();
            g_x = g_x.resize_vertically(r + m, 0.0);
            g_u = g_u.resize_vertically(r + m, 0.0);
            g_x.view_mut((r, 0), (m, nx)).copy_from(&ex);
            g_u.view_mut((r, 0), (m, nu)).copy_from(&eu);
            g_off.extend_from_slice(&extra.offset);
        }
        let (c_x, c_u, c_off) = match &p.path_equality {
            Some(e) => {
                let (ex, eu) = (e.dx.to_dmatrix("path_equality.dx")?, e.du.to_dmatrix("path_equality.du")?);
                check_shape(&ex, e.offset.len(), nx, "path_equality.dx")?;
                check_shape(&eu, e.offset.len(), nu, "path_equality.du")?;
                (ex, eu, DVector::from_column_slice(&e.offset))
            }
            None => (DMatrix::zeros(0, nx), DMatrix::zeros(0, nu), DVector::zeros(0)),
        };

        let maps = AffineStageMaps {
            dynamics: StageJacobian {
                dx: a,
                du: b_u,
                dlambda: b_l,
            },
            dynamics_offset: vec_or_zero(&p.f_offset, nx, "f_offset")?,
            vi: StageJacobian {
                dx: f_x,
                du: f_u,
                dlambda: f_l,
            },
            vi_offset: vec_or_zero(&p.vi_offset, nl, "vi_offset")?,
            path_ineq: PathJacobian { dx: g_x, du: g_u },
            path_ineq_offset: DVector::from_vec(g_off),
            path_eq: PathJacobian { dx: c_x, du: c_u },
            path_eq_offset: c_off,
        };
        let set = match &p.set {
            SetSpec::Box { lower, upper } => ViSet::new_box(bounds_to_vector(lower), bounds_to_vector(upper))?,
            SetSpec::Polyhedral { matrix, offset } => {
                let m = matrix.to_dmatrix("set.matrix")?;
                check_shape(&m, offset.len(), nl, "set.matrix")?;
                ViSet::polyhedral(m, DVector::from_column_slice(offset))?
            }
        };
        if set.dim() != nl {
            return Err(Error::InvalidConfig(format!("set dimension {} ≠ n_lambda {nl}", set.dim())));
        }

        let w = &self.weights;
        let (q_t, q_x, q_u, q_l) = (
            w.q_t.to_dmatrix("q_t")?,
            w.q_x.to_dmatrix("q_x")?,
            w.q_u.to_dmatrix("q_u")?,
            w.q_lambda.to_dmatrix("q_lambda")?,
        );
        check_weight(&q_t, nx, "q_t")?;
        check_weight(&q_x, nx, "q_x")?;
        check_weight(&q_u, nu, "q_u")?;
        check_weight(&q_l, nl, "q_lambda")?;
        let x_e = vec_or_zero(&Some(self.x_e.clone()), nx, "x_e")?;
        let x_ref = match &self.x_ref {
            ReferencePolicy::Terminal => x_e.clone(),
            ReferencePolicy::Constant(v) => vec_or_zero(&Some(v.clone()), nx, "x_ref")?,
        };
        let problem = OcpecProblem {
            maps: Arc::new(maps),
            set,
            terminal_cost: Arc::new(QuadraticTerminalCost { weight: q_t, target: x_e }),
            stage_cost: Arc::new(QuadraticStageCost {
                q_x,
                x_ref,
                q_u,
                q_lambda: q_l,
            }),
            horizon: self.horizon,
            x0: vec_or_zero(&Some(self.x0.clone()), nx, "x0")?,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn gap_params(&self, n_lambda: usize) -> Result<GapParams> {
        match &self.gap.a {
            None => GapParams::identity(self.gap.c, n_lambda),
            Some(a) => GapParams::new(self.gap.c, a.to_dmatrix("gap.a")?),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgcl.validate()?;
        if self.n_stages == 0 {
            return Err(Error::InvalidConfig("n_stages must be ≥ 1".into()));
        }
        if !(self.s >= 0.0) {
            return Err(Error::InvalidConfig("s must be ≥ 0".into()));
        }
        if self.starts == 0 {
            return Err(Error::InvalidConfig("starts must be ≥ 1".into()));
        }
        Ok(())
    }

    /// The initial guess of start `index`, and the seed it used.
    pub fn initial_point(&self, nlp: &DiscretizedNlp, index: usize) -> (DVector<f64>, u64) {
        let seed = self.seed.wrapping_add(index as u64);
        let n = nlp.num_vars();
        let z = match self.initial_guess {
            InitialGuess::Ones => DVector::from_element(n, 1.0),
            InitialGuess::Zeros => DVector::zeros(n),
            InitialGuess::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let r = self.random_scale;
                DVector::from_fn(n, |_, _| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 })
            }
        };
        (z, seed)
    }
}

/// The affine DVI benchmark with default weights.
pub fn build_affine_dvi() -> OcpecProblem {
    BenchmarkSpec::default()
        .build_problem()
        .expect("built-in benchmark data is consistent")
}

/// One stage of a solution trajectory. `t` is the end time of the stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub n: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub v: f64,
    pub gap: f64,
    pub natural_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    /// Extracts the trajectory from `z`, recomputing `φ_n` and `Φ_n` from the stage data.
    pub fn from_solution(nlp: &DiscretizedNlp, z: &DVector<f64>, start: usize) -> Result<Self> {
        let p = nlp.problem();
        let mut rows = Vec::with_capacity(nlp.n_stages());
        for n in 0..nlp.n_stages() {
            let sv = nlp.stage_vars(z, n);
            let f = p.maps.vi_map(&sv.x, &sv.u, &sv.lambda);
            let phi_res = natural_residual(&sv.lambda, &f, &p.set)?.amax();
            let gap = evaluate_gap(&sv.lambda, &sv.eta, nlp.gap_params(), &p.set, None, ProjectorPath::Auto)?.phi;
            rows.push(TrajectoryRow {
                n,
                t: (n + 1) as f64 * nlp.dt(),
                x: sv.x.as_slice().to_vec(),
                u: sv.u.as_slice().to_vec(),
                lambda: sv.lambda.as_slice().to_vec(),
                eta: sv.eta.as_slice().to_vec(),
                v: sv.v,
                gap,
                natural_residual: phi_res,
            });
        }
        Ok(Self { start, rows })
    }

    pub fn max_natural_residual(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.natural_residual))
    }
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn parse(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse {what} value {s:?}")))
}

fn trajectory_header(n_x: usize, n_u: usize, n_l: usize) -> Vec<String> {
    let mut h = vec!["start".to_string(), "n".into(), "t".into()];
    h.extend((1..=n_x).map(|i| format!("x_{i}")));
    h.extend((1..=n_u).map(|i| format!("u_{i}")));
    h.extend((1..=n_l).map(|i| format!("lambda_{i}")));
    h.extend((1..=n_l).map(|i| format!("eta_{i}")));
    h.extend(["v", "gap", "natural_residual"].map(String::from));
    h
}

/// Columns: `start, n, t, x_1.., u_1.., lambda_1.., eta_1.., v, gap, natural_residual`.
/// Floats are written in shortest round-trip form.
pub fn write_trajectory_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let first = trajectories.iter().flat_map(|t| t.rows.first()).next();
    let (nx, nu, nl) = first.map(|r| (r.x.len(), r.u.len(), r.lambda.len())).unwrap_or((0, 0, 0));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(nx, nu, nl))?;
    for tr in trajectories {
        for r in &tr.rows {
            let mut rec = vec![tr.start.to_string(), r.n.to_string(), fmt(r.t)];
            rec.extend(r.x.iter().chain(&r.u).chain(&r.lambda).chain(&r.eta).map(|&v| fmt(v)));
            rec.extend([fmt(r.v), fmt(r.gap), fmt(r.natural_residual)]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (nx, nu, nl) = (count("x_"), count("u_"), count("lambda_"));
    if header != trajectory_header(nx, nu, nl) {
        return Err(Error::InvalidArgument("unexpected trajectory header".into()));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        let start: usize = f[0]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad start index {:?}", f[0])))?;
        let n: usize = f[1]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad stage index {:?}", f[1])))?;
        let nums: Vec<f64> = f[2..].iter().map(|s| parse(s, "trajectory")).collect::<Result<_>>()?;
        let mut it = nums.into_iter();
        let t = it.next().unwrap_or(f64::NAN);
        let mut take = |k: usize| (&mut it).take(k).collect::<Vec<f64>>();
        let (x, u, lambda, eta) = (take(nx), take(nu), take(nl), take(nl));
        let rest = take(3);
        let row = TrajectoryRow {
            n,
            t,
            x,
            u,
            lambda,
            eta,
            v: rest[0],
            gap: rest[1],
            natural_residual: rest[2],
        };
        match out.last_mut() {
            Some(tr) if tr.start == start => tr.rows.push(row),
            _ => out.push(Trajectory { start, rows: vec![row] }),
        }
    }
    Ok(out)
}

/// Residuals of a trajectory recomputed from the raw stage data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub stage_natural_residuals: Vec<f64>,
    pub max_natural_residual: f64,
    pub max_dynamics_residual: f64,
    pub max_path_violation: f64,
    pub max_set_violation: f64,
    /// Stages whose natural residual exceeds the tolerance.
    pub flagged_stages: Vec<usize>,
    pub natural_residual_ok: bool,
    pub dynamics_ok: bool,
    pub path_ok: bool,
    pub set_ok: bool,
    pub tol: f64,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.natural_residual_ok && self.dynamics_ok && self.path_ok && self.set_ok
    }
}

/// Checks implicit-Euler dynamics, path constraints and the VI at every stage.
/// The step is `T / N` with `N` the number of rows.
pub fn verify_solution(problem: &OcpecProblem, trajectory: &Trajectory, tol: f64) -> Result<Verdict> {
    let d = problem.dims();
    let n_stages = trajectory.rows.len();
    if n_stages == 0 {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let dt = problem.horizon / n_stages as f64;
    let mut x_prev = problem.x0.clone();
    let mut stage_phi = Vec::with_capacity(n_stages);
    let (mut dyn_res, mut path_viol, mut set_viol) = (0.0_f64, 0.0_f64, 0.0_f64);
    for r in &trajectory.rows {
        for (map, want, got) in [("x", d.n_x, r.x.len()), ("u", d.n_u, r.u.len()), ("lambda", d.n_lambda, r.lambda.len())] {
            if want != got {
                return Err(Error::DimensionMismatch { map, expected: want, got });
            }
        }
        let x = DVector::from_column_slice(&r.x);
        let u = DVector::from_column_slice(&r.u);
        let l = DVector::from_column_slice(&r.lambda);
        let f = problem.maps.dynamics(&x, &u, &l);
        dyn_res = dyn_res.max((&x_prev + f * dt - &x).amax());
        let g = problem.maps.path_inequality(&x, &u);
        path_viol = path_viol.max(g.iter().fold(0.0, |m: f64, v| m.max(-v)));
        path_viol = path_viol.max(problem.maps.path_equality(&x, &u).amax());
        set_viol = set_viol.max(problem.set.rows().eval(&l).iter().fold(0.0, |m: f64, v| m.max(-v)));
        let vi = problem.maps.vi_map(&x, &u, &l);
        stage_phi.push(natural_residual(&l, &vi, &problem.set)?.amax());
        x_prev = x;
    }
    let max_phi = stage_phi.iter().fold(0.0_f64, |m, &v| m.max(v));
    let flagged = stage_phi.iter().enumerate().filter(|(_, &v)| v > tol).map(|(i, _)| i).collect();
    Ok(Verdict {
        max_natural_residual: max_phi,
        flagged_stages: flagged,
        natural_residual_ok: max_phi <= tol,
        dynamics_ok: dyn_res <= tol,
        path_ok: path_viol <= tol,
        set_ok: set_viol <= tol,
        stage_natural_residuals: stage_phi,
        max_dynamics_residual: dyn_res,
        max_path_violation: path_viol,
        max_set_violation: set_viol,
        tol,
    })
}

/// Results of one start.
#[derive(Debug, Clone)]
pub struct StartReport {
    pub start: usize,
    pub seed: u64,
    pub records: Vec<RelaxationRecord>,
    pub stats: Vec<SgclStats>,
    pub status: SgclStatus,
    pub trajectory: Trajectory,
    pub point: SgclPoint,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: RunMode,
    pub starts: Vec<StartReport>,
    pub artifacts: Vec<PathBuf>,
}

impl RunReport {
    /// Every start reached a `Stop*` termination at its final relaxation.
    pub fn converged(&self) -> bool {
        self.starts.iter().all(|s| s.status.converged())
    }
}

fn solve_start(spec: &BenchmarkSpec, problem: &Arc<OcpecProblem>, index: usize) -> Result<StartReport> {
    let gap = spec.gap_params(problem.dims().n_lambda)?;
    match spec.mode {
        RunMode::SingleS => {
            let nlp = discretize(problem.clone(), spec.n_stages, spec.s, spec.sgcl.mu, gap)?;
            let (z0, seed) = spec.initial_point(&nlp, index);
            let start = SgclPoint {
                z: z0,
                gamma_h: DVector::zeros(0),
                gamma_c: DVector::zeros(0),
            };
            let out = sgcl_solve(&nlp, &start, &spec.sgcl)?;
            let record = RelaxationRecord {
                s: spec.s,
                cost: out.stats.cost,
                max_natural_residual: max_natural_residual(&nlp, &out.point.z)?,
                iterations: out.stats.iterations,
                status: out.stats.status,
                timings: out.stats.timings,
            };
            Ok(StartReport {
                start: index,
                seed,
                records: vec![record],
                status: out.stats.status,
                trajectory: Trajectory::from_solution(&nlp, &out.point.z, index)?,
                stats: vec![out.stats],
                point: out.point,
            })
        }
        RunMode::Continuation => {
            let probe = discretize(problem.clone(), spec.n_stages, spec.sgcl.continuation.s_init, spec.sgcl.mu, gap.clone())?;
            let (z0, seed) = spec.initial_point(&probe, index);
            let out = continuation_solve(problem.clone(), spec.n_stages, gap, &z0, &spec.sgcl)?;
            Ok(StartReport {
                start: index,
                seed,
                status: out.final_status(),
                trajectory: Trajectory::from_solution(&out.nlp, &out.point.z, index)?,
                records: out.records,
                stats: out.stats,
                point: out.point,
            })
        }
    }
}

/// Runs every start and writes `trajectory.csv`, `iterations.csv`, `report.csv`
/// and `timing.csv` into `output_dir`. Only `timing.csv` holds wall-clock data.
pub fn run(spec: &BenchmarkSpec, output_dir: &Path) -> Result<RunReport> {
    spec.validate()?;
    let problem = Arc::new(spec.build_problem()?);
    let mut starts = Vec::with_capacity(spec.starts);
    for i in 0..spec.starts {
        starts.push(solve_start(spec, &problem, i)?);
    }
    let artifacts = write_run_artifacts(output_dir, &starts)?;
    Ok(RunReport {
        mode: spec.mode,
        starts,
        artifacts,
    })
}

pub fn write_run_artifacts(output_dir: &Path, starts: &[StartReport]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(output_dir)?;
    let traj_path = output_dir.join("trajectory.csv");
    let trajectories: Vec<Trajectory> = starts.iter().map(|s| s.trajectory.clone()).collect();
    write_trajectory_csv(&traj_path, &trajectories)?;

    let iter_path = output_dir.join("iterations.csv");
    let mut w = csv::Writer::from_path(&iter_path)?;
    w.write_record(["start", "s", "k", "cost", "violation", "e_p", "e_d", "e_c", "alpha", "step_norm"])?;
    for st in starts {
        for (rec, stats) in st.records.iter().zip(&st.stats) {
            for it in &stats.log {
                let IterationRecord {
                    k,
                    cost,
                    violation,
                    e_p,
                    e_d,
                    e_c,
                    alpha,
                    step_norm,
                } = *it;
                w.write_record([
                    st.start.to_string(),
                    fmt(rec.s),
                    k.to_string(),
                    fmt(cost),
                    fmt(violation),
                    fmt(e_p),
                    fmt(e_d),
                    fmt(e_c),
                    fmt(alpha),
                    fmt(step_norm),
                ])?;
            }
        }
    }
    w.flush()?;

    let report_path = output_dir.join("report.csv");
    let mut w = csv::Writer::from_path(&report_path)?;
    w.write_record(["start", "seed", "s", "cost", "max_natural_residual", "iterations", "status"])?;
    for st in starts {
        let last = st.records.len().saturating_sub(1);
        for (j, rec) in st.records.iter().enumerate() {
            let phi = if j == last {
                st.trajectory.max_natural_residual()
            } else {
                rec.max_natural_residual
            };
            w.write_record([
                st.start.to_string(),
                st.seed.to_string(),
                fmt(rec.s),
                fmt(rec.cost),
                fmt(phi),
                rec.iterations.to_string(),
                rec.status.as_str().to_string(),
            ])?;
        }
    }
    w.flush()?;

    let timing_path = output_dir.join("timing.csv");
    let mut w = csv::Writer::from_path(&timing_path)?;
    w.write_record(["start", "s", "omega_s", "derivatives_s", "qp_s", "line_search_s", "other_s", "total_s"])?;
    for st in starts {
        for rec in &st.records {
            let t: &PhaseTimings = &rec.timings;
            w.write_record([
                st.start.to_string(),
                fmt(rec.s),
                fmt(t.omega.as_secs_f64()),
                fmt(t.derivatives.as_secs_f64()),
                fmt(t.qp.as_secs_f64()),
                fmt(t.line_search.as_secs_f64()),
                fmt(t.other.as_secs_f64()),
                fmt(t.total.as_secs_f64()),
            ])?;
        }
    }
    w.flush()?;
    Ok(vec![traj_path, iter_path, report_path, timing_path])
}

/// Membership of one `(λ, η)` sample in the three regions of the scalar relaxed
/// gap constraint `{b_l ≤ λ ≤ b_u, φᶜ(λ, η) ≤ s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryPoint {
    pub lambda: f64,
    pub eta: f64,
    pub phi: f64,
    pub in_r1: bool,
    pub in_r2: bool,
    pub in_r3: bool,
    /// `b_l ≤ λ ≤ b_u` and `φ ≤ s`.
    pub feasible: bool,
}

impl GeometryPoint {
    pub fn in_union(&self) -> bool {
        self.in_r1 || self.in_r2 || self.in_r3
    }

    pub fn agrees(&self) -> bool {
        self.in_union() == self.feasible
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryTable {
    pub c: f64,
    pub s: f64,
    pub b_l: f64,
    pub b_u: f64,
    pub grid: usize,
    pub points: Vec<GeometryPoint>,
}

impl GeometryTable {
    pub fn disagreements(&self) -> usize {
        self.points.iter().filter(|p| !p.agrees()).count()
    }
}

/// Classifies one point by the region inequalities and by the closed-form gap.
pub fn classify_point(lambda: f64, eta: f64, c: f64, s: f64, b_l: f64, b_u: f64) -> GeometryPoint {
    let in_k = b_l <= lambda && lambda <= b_u;
    let lower_branch = eta * (lambda - b_l) - 0.5 * c * (lambda - b_l).powi(2);
    let upper_branch = eta * (lambda - b_u) - 0.5 * c * (lambda - b_u).powi(2);
    let phi = scalar_gap_closed_form(lambda, eta, c, b_l, b_u);
    GeometryPoint {
        lambda,
        eta,
        phi,
        in_r1: in_k && eta >= c * (lambda - b_l) && lower_branch <= s,
        in_r2: in_k && eta * eta / (2.0 * c) <= s && c * (lambda - b_u) <= eta && eta <= c * (lambda - b_l),
        in_r3: in_k && eta <= c * (lambda - b_u) && upper_branch <= s,
        feasible: in_k && phi <= s,
    }
}

/// Samples `grid × grid` points over `[b_l − 1, b_u + 1]²`.
pub fn geometry_demo(c: f64, s: f64, b_l: f64, b_u: f64, grid: usize) -> Result<GeometryTable> {
    if grid < 2 {
        return Err(Error::InvalidArgument("grid must be ≥ 2".into()));
    }
    if !(c > 0.0) || !(s >= 0.0) || !(b_l < b_u) || !b_l.is_finite() || !b_u.is_finite() {
        return Err(Error::InvalidArgument("need c > 0, s ≥ 0 and finite b_l < b_u".into()));
    }
    let (lo, hi) = (b_l - 1.0, b_u + 1.0);
    let at = |i: usize| lo + (hi - lo) * i as f64 / (grid - 1) as f64;
    let mut points = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            points.push(classify_point(at(i), at(j), c, s, b_l, b_u));
        }
    }
    Ok(GeometryTable {
        c,
        s,
        b_l,
        b_u,
        grid,
        points,
    })
}

/// Columns: `lambda, eta, phi, in_r1, in_r2, in_r3, feasible` with booleans as 0/1.
pub fn write_geometry_csv(path: &Path, table: &GeometryTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "eta", "phi", "in_r1", "in_r2", "in_r3", "feasible"])?;
    let b = |v: bool| if v { "1" } else { "0" }.to_string();
    for p in &table.points {
        w.write_record([fmt(p.lambda), fmt(p.eta), fmt(p.phi), b(p.in_r1), b(p.in_r2), b(p.in_r3), b(p.feasible)])?;
    }
    w.flush()?;
    Ok(())
}

//! Variational-inequality primitives.
//!
//! A set `K = {λ | g(λ) ≥ 0}` with affine `g` is stored either as a box or as a
//! general polyhedron. Either way the affine rows are materialized, so every set
//! can also be handled by the projection QP.

use nalgebra::{DMatrix, DVector};

use crate::error::reject_nan;
use crate::qp::{solve_projection_qp, solve_sparse_qp, QpStatus, SparseQp};
use crate::linalg::{SparseMatrix, Triplets};
use crate::{Error, Result};

/// Affine rows `g(λ) = Gλ + g₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRows {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineRows {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    pub fn eval(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.matrix * lambda + &self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetKind {
    /// `lower ≤ λ ≤ upper`; infinite entries are allowed and produce no rows.
    Box { lower: DVector<f64>, upper: DVector<f64> },
    Polyhedral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViSet {
    kind: SetKind,
    rows: AffineRows,
    anchor: DVector<f64>,
}

impl ViSet {
    pub fn new_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidSet("bound lengths differ".into()));
        }
        reject_nan(lower.as_slice(), "lower bound")?;
        reject_nan(upper.as_slice(), "upper bound")?;
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::InvalidSet(format!("lower[{i}] must be < upper[{i}]")));
        }
        let n = lower.len();
        let mut coeffs = Vec::new();
        let mut offsets = Vec::new();
        for i in 0..n {
            if lower[i].is_finite() {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                coeffs.push(row);
                offsets.push(-lower[i]);
            }
            if upper[i].is_finite() {
                let mut row = vec![0.0; n];
                row[i] = -1.0;
                coeffs.push(row);
                offsets.push(upper[i]);
            }
        }
        let matrix = DMatrix::from_row_iterator(offsets.len(), n, coeffs.into_iter().flatten());
        let anchor = DVector::<f64>::zeros(n).zip_zip_map(&lower, &upper, |z: f64, l: f64, u: f64| z.max(l).min(u));
        Ok(Self {
            kind: SetKind::Box { lower, upper },
            rows: AffineRows {
                matrix,
                offset: DVector::from_vec(offsets),
            },
            anchor,
        })
    }

    /// `{λ | matrix·λ + offset ≥ 0}`; rejected if a feasibility solve finds it empty.
    pub fn polyhedral(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != offset.len() {
            return Err(Error::InvalidSet("row count differs from offset length".into()));
        }
        if matrix.ncols() == 0 {
            return Err(Error::InvalidSet("zero-dimensional set".into()));
        }
        reject_nan(matrix.as_slice(), "set matrix")?;
        reject_nan(offset.as_slice(), "set offset")?;
        if matrix.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSet("polyhedral rows must be finite".into()));
        }
        let anchor = feasible_point(&matrix, &offset)?;
        Ok(Self {
            kind: SetKind::Polyhedral,
            rows: AffineRows { matrix, offset },
            anchor,
        })
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn as_box(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        match &self.kind {
            SetKind::Box { lower, upper } => Some((lower, upper)),
            SetKind::Polyhedral => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Number of affine rows (finite bounds only for boxes).
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &AffineRows {
        &self.rows
    }

    /// A point of the set found at construction.
    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn contains(&self, lambda: &DVector<f64>, tol: f64) -> bool {
        self.rows.eval(lambda).iter().all(|&v| v >= -tol)
    }

    /// The same set described by its rows only.
    pub fn to_polyhedral(&self) -> Self {
        Self {
            kind: SetKind::Polyhedral,
            rows: self.rows.clone(),
            anchor: self.anchor.clone(),
        }
    }

    /// Euclidean projection `Π_K(x)`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        reject_nan(x.as_slice(), "projection input")?;
        match &self.kind {
            SetKind::Box { lower, upper } => project_box(x, lower, upper),
            SetKind::Polyhedral => {
                let n = self.dim();
                let sol = solve_projection_qp(&DMatrix::identity(n, n), 1.0, x, &DVector::zeros(n), self, None)?;
                Ok(sol.omega)
            }
        }
    }

    /// Axis-aligned bounding box, or `UnboundedSet`. Polyhedra are supported up to two dimensions.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        match &self.kind {
            SetKind::Box { lower, upper } => {
                if lower.iter().chain(upper.iter()).all(|v| v.is_finite()) {
                    Ok((lower.clone(), upper.clone()))
                } else {
                    Err(Error::UnboundedSet)
                }
            }
            SetKind::Polyhedral => polyhedral_bounding_box(&self.rows),
        }
    }
}

fn feasible_point(matrix: &DMatrix<f64>, offset: &DVector<f64>) -> Result<DVector<f64>> {
    let n = matrix.ncols();
    if matrix.nrows() == 0 {
        return Ok(DVector::zeros(n));
    }
    let mut t = Triplets::new(matrix.nrows(), n);
    t.push_block(0, 0, matrix);
    let qp = SparseQp::new(
        SparseMatrix::identity(n),
        vec![0.0; n],
        SparseMatrix::zeros(0, n),
        vec![],
        t.into_csr(),
        offset.iter().map(|v| -v).collect(),
    )?;
    let sol = solve_sparse_qp(&qp, None, 1e-11, 500);
    let point = DVector::from_vec(sol.primal);
    let worst = (matrix * &point + offset).min();
    match sol.status {
        QpStatus::Infeasible => Err(Error::InvalidSet("polyhedron is empty".into())),
        _ if worst < -1e-9 => Err(Error::InvalidSet(format!("no feasible point found (violation {:.3e})", -worst))),
        _ => Ok(point),
    }
}

fn polyhedral_bounding_box(rows: &AffineRows) -> Result<(DVector<f64>, DVector<f64>)> {
    let g = rows.matrix();
    let n = g.ncols();
    let feasible = |p: &DVector<f64>| rows.eval(p).iter().all(|&v| v >= -1e-9);
    let mut vertices: Vec<DVector<f64>> = Vec::new();
    match n {
        1 => {
            let has_up = g.column(0).iter().any(|&v| v < 0.0);
            let has_down = g.column(0).iter().any(|&v| v > 0.0);
            if !(has_up && has_down) {
                return Err(Error::UnboundedSet);
            }
            for i in 0..g.nrows() {
                if g[(i, 0)] != 0.0 {
                    let p = DVector::from_vec(vec![-rows.offset()[i] / g[(i, 0)]]);
                    if feasible(&p) {
                        vertices.push(p);
                    }
                }
            }
        }
        2 => {
            // Nonzero recession directions lie on the boundary rays of the cone {d | Gd ≥ 0}.
            for i in 0..g.nrows() {
                for sign in [1.0, -1.0] {
                    let d = DVector::from_vec(vec![-g[(i, 1)] * sign, g[(i, 0)] * sign]);
                    if d.norm() > 0.0 && (g * &d).iter().all(|&v| v >= -1e-12 * d.norm()) {
                        return Err(Error::UnboundedSet);
                    }
                }
            }
            if g.nrows() == 0 {
                return Err(Error::UnboundedSet);
            }
            for i in 0..g.nrows() {
                for j in i + 1..g.nrows() {
                    let m = DMatrix::from_row_slice(2, 2, &[g[(i, 0)], g[(i, 1)], g[(j, 0)], g[(j, 1)]]);
                    let rhs = DVector::from_vec(vec![-rows.offset()[i], -rows.offset()[j]]);
                    if let Some(p) = m.lu().solve(&rhs) {
                        if p.iter().all(|v| v.is_finite()) && feasible(&p) {
                            vertices.push(p);
                        }
                    }
                }
            }
        }
        _ => return Err(Error::InvalidArgument("bounding box needs dimension ≤ 2".into())),
    }
    let first = vertices.first().ok_or(Error::UnboundedSet)?.clone();
    let (lo, hi) = vertices.iter().fold((first.clone(), first), |(lo, hi), v| {
        (lo.zip_map(v, f64::min), hi.zip_map(v, f64::max))
    });
    Ok((lo, hi))
}

/// `min(max(lower, x), upper)` element-wise.
pub fn project_box(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != lower.len() || x.len() != upper.len() {
        return Err(Error::InvalidArgument("project_box: length mismatch".into()));
    }
    reject_nan(x.as_slice(), "project_box input")?;
    Ok(x.zip_zip_map(lower, upper, |v, l, u| v.max(l).min(u)))
}

/// Natural residual `Φ = λ − Π_K(λ − F)`; zero exactly at solutions of VI(K, F).
pub fn natural_residual(lambda: &DVector<f64>, f_val: &DVector<f64>, set: &ViSet) -> Result<DVector<f64>> {
    reject_nan(lambda.as_slice(), "natural residual λ")?;
    reject_nan(f_val.as_slice(), "natural residual F")?;
    let projected = set.project(&(lambda - f_val))?;
    Ok(lambda - projected)
}

/// A continuous VI map with a Jacobian.
pub trait ViMap: Send + Sync {
    fn eval(&self, lambda: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, lambda: &DVector<f64>) -> DMatrix<f64>;
}

/// `F(λ) = Mλ + q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineViMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl ViMap for AffineViMap {
    fn eval(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.matrix * lambda + &self.offset
    }

    fn jacobian(&self, _lambda: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

pub struct ViInstance {
    pub set: ViSet,
    pub map: Box<dyn ViMap>,
}

impl ViInstance {
    pub fn new(set: ViSet, map: impl ViMap + 'static) -> Self {
        Self { set, map: Box::new(map) }
    }
}

/// Grid coordinates along one axis: `⌈(hi − lo)/resolution⌉ + 1` evenly spaced points
/// including both ends.
pub fn grid_axis(lo: f64, hi: f64, resolution: f64) -> Vec<f64> {
    let steps = (((hi - lo) / resolution) - 1e-9).ceil().max(1.0) as usize;
    (0..=steps)
        .map(|k| if k == steps { hi } else { lo + (hi - lo) * k as f64 / steps as f64 })
        .collect()
}

/// Default oracle tolerance `10·h·(1 + max‖F‖)` over the grid.
pub fn default_oracle_tolerance(resolution: f64, max_f_norm: f64) -> f64 {
    10.0 * resolution * (1.0 + max_f_norm)
}

/// Grid-enumeration solver for VI(K, F) with `n_λ ≤ 2` and bounded `K`.
///
/// Every grid point `λ ∈ K` gets the discrete gap `max_ω F(λ)ᵀ(λ − ω)` over grid
/// points `ω ∈ K`. Points with gap below the tolerance form clusters (grid
/// neighbours); each cluster is represented by its minimum-gap point.
pub fn brute_force_vi_solve(inst: &ViInstance, grid_resolution: f64) -> Result<Vec<DVector<f64>>> {
    brute_force_vi_solve_with(inst, grid_resolution, None)
}

pub fn brute_force_vi_solve_with(
    inst: &ViInstance,
    grid_resolution: f64,
    tolerance: Option<f64>,
) -> Result<Vec<DVector<f64>>> {
    let n = inst.set.dim();
    if n == 0 || n > 2 {
        return Err(Error::InvalidArgument("brute-force oracle supports n_λ ∈ {1, 2}".into()));
    }
    if !(grid_resolution > 0.0) {
        return Err(Error::InvalidArgument("grid resolution must be positive".into()));
    }
    let (lo, hi) = inst.set.bounding_box()?;
    let axes: Vec<Vec<f64>> = (0..n).map(|i| grid_axis(lo[i], hi[i], grid_resolution)).collect();
    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = shape.iter().product();
    let point_at = |flat: usize| -> DVector<f64> {
        let mut rem = flat;
        DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let k = rem % shape[i];
                rem /= shape[i];
                axes[i][k]
            }),
        )
    };
    let inside: Vec<usize> = (0..total).filter(|&f| inst.set.contains(&point_at(f), 1e-12)).collect();
    let points: Vec<DVector<f64>> = inside.iter().map(|&f| point_at(f)).collect();
    let values: Vec<DVector<f64>> = points.iter().map(|p| inst.map.eval(p)).collect();
    let max_f = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tol = tolerance.unwrap_or_else(|| default_oracle_tolerance(grid_resolution, max_f));

    let gaps: Vec<f64> = points
        .iter()
        .zip(&values)
        .map(|(lam, f)| {
            let base = f.dot(lam);
            points.iter().map(|w| base - f.dot(w)).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    // clusters of candidates under 8-neighbour grid adjacency
    let index_of = |flat: usize| inside.binary_search(&flat).ok();
    let coords = |flat: usize| -> Vec<usize> {
        let mut rem = flat;
        (0..n)
            .map(|i| {
                let k = rem % shape[i];
                rem /= shape[i];
                k
            })
            .collect()
    };
    let candidate: Vec<bool> = gaps.iter().map(|&g| g <= tol).collect();
    let mut seen = vec![false; points.len()];
    let mut solutions = Vec::new();
    for start in 0..points.len() {
        if !candidate[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut best = start;
        while let Some(k) = stack.pop() {
            if gaps[k] < gaps[best] {
                best = k;
            }
            let c = coords(inside[k]);
            let offsets: Vec<Vec<i64>> = if n == 1 {
                vec![vec![-1], vec![1]]
            } else {
                (-1..=1)
                    .flat_map(|a| (-1..=1).map(move |b| vec![a, b]))
                    .filter(|o| o != &vec![0, 0])
                    .collect()
            };
            for off in offsets {
                let mut flat = 0usize;
                let mut stride = 1usize;
                let mut valid = true;
                for i in 0..n {
                    let v = c[i] as i64 + off[i];
                    if v < 0 || v >= shape[i] as i64 {
                        valid = false;
                        break;
                    }
                    flat += v as usize * stride;
                    stride *= shape[i];
                }
                if !valid {
                    continue;
                }
                if let Some(j) = index_of(flat) {
                    if candidate[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        solutions.push(points[best].clone());
    }
    Ok(solutions)
}

//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string. The `*_json` functions are the plain Rust
//! versions and are what the native tests call.

use std::sync::Arc;

use nalgebra::DVector;
use ocpec_core::bench::{classify_point, BenchmarkSpec, Trajectory};
use ocpec_core::gap::{evaluate_gap, GapParams, ProjectorPath};
use ocpec_core::model::discretize;
use ocpec_core::sgcl::{sgcl_solve, SgclPoint};
use ocpec_core::vi::ViSet;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type Out = Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Region codes of a `grid × grid` sample of `[b_l − 1, b_u + 1]²`, row-major in η
/// (outer) and λ (inner). Codes: 0 outside, 1/2/3 for the first region that holds
/// the point.
pub fn gap_regions_json(c: f64, s: f64, b_l: f64, b_u: f64, grid: usize) -> Out {
    if !(2..=1000).contains(&grid) {
        return Err("grid must lie in 2..=1000".into());
    }
    if !(c > 0.0 && s >= 0.0 && b_l < b_u && b_l.is_finite() && b_u.is_finite()) {
        return Err("need c > 0, s ≥ 0 and finite b_l < b_u".into());
    }
    let (lo, hi) = (b_l - 1.0, b_u + 1.0);
    let at = |i: usize| lo + (hi - lo) * i as f64 / (grid - 1) as f64;
    let mut codes = Vec::with_capacity(grid * grid);
    let mut phi = Vec::with_capacity(grid * grid);
    let mut disagreements = 0;
    for j in 0..grid {
        for i in 0..grid {
            let p = classify_point(at(i), at(j), c, s, b_l, b_u);
            disagreements += usize::from(!p.agrees());
            phi.push(p.phi);
            codes.push(if p.in_r1 {
                1
            } else if p.in_r2 {
                2
            } else if p.in_r3 {
                3
            } else {
                0
            });
        }
    }
    Ok(json!({
        "lo": lo,
        "hi": hi,
        "grid": grid,
        "codes": codes,
        "phi": phi,
        "strip": (2.0 * c * s).sqrt(),
        "disagreements": disagreements,
    })
    .to_string())
}

/// Gap value, projector and gradients at one scalar point `(λ, η)` with `K = [b_l, b_u]`.
pub fn gap_at_json(lambda: f64, eta: f64, c: f64, b_l: f64, b_u: f64) -> Out {
    let set = ViSet::new_box(DVector::from_element(1, b_l), DVector::from_element(1, b_u)).map_err(err)?;
    let params = GapParams::identity(c, 1).map_err(err)?;
    let l = DVector::from_element(1, lambda);
    let e = DVector::from_element(1, eta);
    let g = evaluate_gap(&l, &e, &params, &set, None, ProjectorPath::Auto).map_err(err)?;
    let natural = lambda - (lambda - eta).clamp(b_l, b_u);
    Ok(json!({
        "phi": g.phi,
        "omega_hat": g.omega_hat[0],
        "grad_lambda": g.grad_lambda[0],
        "grad_eta": g.grad_eta[0],
        "in_set": b_l <= lambda && lambda <= b_u,
        "natural_residual": natural,
    })
    .to_string())
}

/// Solves the affine DVI benchmark at one relaxation value from the all-ones start.
pub fn solve_benchmark_json(n_stages: usize, s: f64, c: f64, mu: f64) -> Out {
    if !(1..=400).contains(&n_stages) {
        return Err("stages must lie in 1..=400".into());
    }
    let mut spec = BenchmarkSpec { n_stages, s, ..BenchmarkSpec::default() };
    spec.gap.c = c;
    spec.sgcl.mu = mu;
    spec.validate().map_err(err)?;
    let problem = Arc::new(spec.build_problem().map_err(err)?);
    let gap = spec.gap_params(problem.dims().n_lambda).map_err(err)?;
    let nlp = discretize(problem, n_stages, s, mu, gap).map_err(err)?;
    let (z0, _) = spec.initial_point(&nlp, 0);
    let start = SgclPoint { z: z0, gamma_h: DVector::zeros(0), gamma_c: DVector::zeros(0) };
    let out = sgcl_solve(&nlp, &start, &spec.sgcl).map_err(err)?;
    let traj = Trajectory::from_solution(&nlp, &out.point.z, 0).map_err(err)?;
    let column = |f: &dyn Fn(&ocpec_core::bench::TrajectoryRow) -> f64| -> Value { traj.rows.iter().map(f).collect() };
    let log: Vec<Value> = out
        .stats
        .log
        .iter()
        .map(|r| json!({"k": r.k, "cost": r.cost, "violation": r.violation, "alpha": r.alpha, "step": r.step_norm}))
        .collect();
    Ok(json!({
        "status": out.stats.status.as_str(),
        "converged": out.stats.status.converged(),
        "iterations": out.stats.iterations,
        "cost": out.stats.cost,
        "max_natural_residual": traj.max_natural_residual(),
        "time_ms": out.stats.timings.total.as_secs_f64() * 1e3,
        "omega_ms": out.stats.timings.omega.as_secs_f64() * 1e3,
        "log": log,
        "t": column(&|r| r.t),
        "x1": column(&|r| r.x[0]),
        "x2": column(&|r| r.x[1]),
        "u": column(&|r| r.u[0]),
        "lambda": column(&|r| r.lambda[0]),
        "eta": column(&|r| r.eta[0]),
        "natural_residual": column(&|r| r.natural_residual),
    })
    .to_string())
}

fn to_js(r: Out) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gap_regions(c: f64, s: f64, b_l: f64, b_u: f64, grid: usize) -> Result<String, JsError> {
    to_js(gap_regions_json(c, s, b_l, b_u, grid))
}

#[wasm_bindgen]
pub fn gap_at(lambda: f64, eta: f64, c: f64, b_l: f64, b_u: f64) -> Result<String, JsError> {
    to_js(gap_at_json(lambda, eta, c, b_l, b_u))
}

#[wasm_bindgen]
pub fn solve_benchmark(n_stages: usize, s: f64, c: f64, mu: f64) -> Result<String, JsError> {
    to_js(solve_benchmark_json(n_stages, s, c, mu))
}

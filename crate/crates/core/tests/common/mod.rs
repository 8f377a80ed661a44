#![allow(dead_code)]

pub mod qp_oracle;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Random box `[l, u]` with `l < u`, side lengths in `[0.5, 3]`.
pub fn random_box(rng: &mut ChaCha8Rng, n: usize) -> (DVector<f64>, DVector<f64>) {
    let lower = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..1.0));
    let upper = DVector::from_fn(n, |i, _| lower[i] + rng.gen_range(0.5..3.0));
    (lower, upper)
}

/// Random symmetric positive definite matrix with eigenvalues at least `floor`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.transpose() * &m + DMatrix::identity(n, n) * floor
}

/// Euclidean projection onto a box by brute-force minimization over a fine grid
/// per coordinate. Accurate to half the grid step.
pub fn grid_projection_box(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>, steps: usize) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut best = (f64::INFINITY, lower[i]);
        for k in 0..=steps {
            let y = lower[i] + (upper[i] - lower[i]) * k as f64 / steps as f64;
            let d = (y - x[i]).powi(2);
            if d < best.0 {
                best = (d, y);
            }
        }
        best.1
    })
}

/// Maximizer of the scalar gap objective `η(λ − ω) − (c/2)(λ − ω)²` over a grid of `ω ∈ [l, u]`.
pub fn grid_gap_maximizer(lambda: f64, eta: f64, c: f64, l: f64, u: f64, steps: usize) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, l);
    for k in 0..=steps {
        let w = l + (u - l) * k as f64 / steps as f64;
        let d = lambda - w;
        let val = eta * d - 0.5 * c * d * d;
        if val > best.0 {
            best = (val, w);
        }
    }
    (best.1, best.0)
}

pub fn central_difference(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

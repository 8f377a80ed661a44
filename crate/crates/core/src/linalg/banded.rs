/// In-place `LDLᵀ` factorization of a symmetric banded matrix without pivoting.
///
/// Intended for quasi-definite matrices, which admit the factorization under any
/// symmetric permutation. Only the lower band is stored, row by row: entry `(i, j)`
/// with `i - b <= j <= i` lives at `data[i * (b + 1) + b + j - i]`, so each row is a
/// contiguous slice ending at the diagonal.
#[derive(Debug, Clone)]
pub struct BandedLdlt {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandedLdlt {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn is_factored(&self) -> bool {
        self.factored
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.factored = false;
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bandwidth);
        i * (self.bandwidth + 1) + self.bandwidth + j - i
    }

    /// Row `i` restricted to columns `lo..=i`, where `lo = i.saturating_sub(b)`.
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let lo = i.saturating_sub(self.bandwidth);
        &self.data[self.idx(i, lo)..=self.idx(i, i)]
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(r - c <= self.bandwidth, "entry ({i}, {j}) outside band {}", self.bandwidth);
        let k = self.idx(r, c);
        self.data[k] += v;
        self.factored = false;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bandwidth {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    /// `y = A x` for the (unfactored) stored matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bandwidth);
            let row = self.row(i);
            let (off, diag) = row.split_at(row.len() - 1);
            let mut acc = diag[0] * x[i];
            for (k, &a) in off.iter().enumerate() {
                acc += a * x[lo + k];
                y[lo + k] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// Factorizes in place. On a (numerically) zero pivot returns its index.
    pub fn factorize(&mut self) -> Result<(), usize> {
        let b = self.bandwidth;
        let w = b + 1;
        // u[k - lo] = L[i, k] · D[k] for the row being factored
        let mut u = vec![0.0; w];
        for i in 0..self.n {
            let lo = i.saturating_sub(b);
            let base_i = i * w + b - i;
            for j in lo..i {
                let klo = lo.max(j.saturating_sub(b));
                let base_j = j * w + b - j;
                let mut s = self.data[base_i + j];
                let ui = &u[klo - lo..j - lo];
                let lj = &self.data[base_j + klo..base_j + j];
                for (a, c) in ui.iter().zip(lj) {
                    s -= a * c;
                }
                u[j - lo] = s;
                self.data[base_i + j] = s / self.data[base_j + j];
            }
            let mut d = self.data[base_i + i];
            for k in lo..i {
                d -= u[k - lo] * self.data[base_i + k];
            }
            if !d.is_finite() || d.abs() < 1e-300 {
                return Err(i);
            }
            self.data[base_i + i] = d;
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert!(self.factored, "solve before factorize");
        assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bandwidth);
            let row = self.row(i);
            let mut s = x[i];
            for (k, &l) in row[..row.len() - 1].iter().enumerate() {
                s -= l * x[lo + k];
            }
            x[i] = s;
        }
        for i in 0..self.n {
            x[i] /= self.data[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            let xi = x[i];
            let lo = i.saturating_sub(self.bandwidth);
            let row = self.row(i);
            for (k, &l) in row[..row.len() - 1].iter().enumerate() {
                x[lo + k] -= l * xi;
            }
        }
    }
}

//! Small dense symmetric positive-definite helpers.

/// Lower-triangular Cholesky factor of a `p x p` SPD matrix, row-major.
#[derive(Clone, Debug)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

/// Why a factorisation stopped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PivotFailure {
    pub index: usize,
    /// Pivot divided by the original diagonal entry (`1 - R^2` of that
    /// column on the preceding ones).
    pub relative_pivot: f64,
}

impl Cholesky {
    /// Factors `a`. Fails at the first column whose pivot, relative to its
    /// original diagonal entry, drops to `min_relative_pivot` or below.
    pub fn factor(a: &[f64], dim: usize, min_relative_pivot: f64) -> Result<Self, PivotFailure> {
        assert_eq!(a.len(), dim * dim);
        let mut l = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut d = a[j * dim + j];
            for k in 0..j {
                d -= l[j * dim + k] * l[j * dim + k];
            }
            let diag = a[j * dim + j];
            let relative = if diag > 0.0 { d / diag } else { 0.0 };
            if !(relative > min_relative_pivot) {
                return Err(PivotFailure {
                    index: j,
                    relative_pivot: relative,
                });
            }
            let djj = d.sqrt();
            l[j * dim + j] = djj;
            for i in j + 1..dim {
                let mut s = a[i * dim + j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                l[i * dim + j] = s / djj;
            }
        }
        Ok(Self { dim, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Solves `L y = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        let p = self.dim;
        for i in 0..p {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * p + k] * b[k];
            }
            b[i] = s / self.lower[i * p + i];
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn backward_solve(&self, y: &mut [f64]) {
        let p = self.dim;
        for i in (0..p).rev() {
            let mut s = y[i];
            for k in i + 1..p {
                s -= self.lower[k * p + i] * y[k];
            }
            y[i] = s / self.lower[i * p + i];
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.forward_solve(b);
        self.backward_solve(b);
    }

    /// `b^T A^{-1} b` through one triangular solve.
    pub fn inverse_quadratic_form(&self, b: &[f64]) -> f64 {
        let mut y = b.to_vec();
        self.forward_solve(&mut y);
        y.iter().map(|v| v * v).sum()
    }

    /// `L L^T`, for checking the factorisation.
    pub fn reconstruct(&self) -> Vec<f64> {
        let p = self.dim;
        let mut out = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = (0..=i.min(j))
                    .map(|k| self.lower[i * p + k] * self.lower[j * p + k])
                    .sum();
            }
        }
        out
    }
}

/// Spectral condition number of an SPD matrix: power iteration for the
/// largest eigenvalue, inverse iteration through `chol` for the smallest.
pub fn condition_number(a: &[f64], chol: &Cholesky) -> f64 {
    let p = chol.dim();
    if p == 1 {
        return 1.0;
    }
    let start = |i: usize| 1.0 + 0.1 * i as f64;
    let normalize = |v: &mut [f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        n
    };
    let mut v: Vec<f64> = (0..p).map(start).collect();
    normalize(&mut v);
    let mut lambda_max = 0.0;
    for _ in 0..500 {
        let mut w = vec![0.0; p];
        for i in 0..p {
            w[i] = (0..p).map(|j| a[i * p + j] * v[j]).sum();
        }
        let next = normalize(&mut w);
        let done = (next - lambda_max).abs() <= 1e-12 * next;
        lambda_max = next;
        v = w;
        if done {
            break;
        }
    }
    let mut v: Vec<f64> = (0..p).map(start).collect();
    normalize(&mut v);
    let mut inv_min = 0.0;
    for _ in 0..500 {
        let mut w = v.clone();
        chol.solve(&mut w);
        let next = normalize(&mut w);
        let done = (next - inv_min).abs() <= 1e-12 * next;
        inv_min = next;
        v = w;
        if done {
            break;
        }
    }
    lambda_max * inv_min
}

//! Per-effect contrast sums for many effects at once.
//!
//! For an allocation and per-unit row vectors `v_i`, the contrast of effect
//! `f` is `sum_i W_if v_i`. Summing the rows into their combination cells and
//! applying a Walsh-Hadamard transform over the cell index yields every
//! contrast in `O(K 2^K)` vector operations.

use crate::design::ModelMatrix;

#[derive(Clone, Debug)]
pub struct ContrastWorkspace {
    size: usize,
    width: usize,
    buf: Vec<f64>,
}

impl ContrastWorkspace {
    pub fn new(size: usize, width: usize) -> Self {
        Self {
            size,
            width,
            buf: vec![0.0; size * width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Computes all contrasts of `rows` (`n x width`, row-major) under `combos`.
    pub fn compute(&mut self, combos: &[u32], rows: &[f64]) {
        let w = self.width;
        debug_assert_eq!(rows.len(), combos.len() * w);
        self.buf.iter_mut().for_each(|v| *v = 0.0);
        for (&c, row) in combos.iter().zip(rows.chunks_exact(w)) {
            let cell = &mut self.buf[c as usize * w..(c as usize + 1) * w];
            for (acc, v) in cell.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut h = 1;
        while h < self.size {
            for start in (0..self.size).step_by(2 * h) {
                for j in start..start + h {
                    let (lo, hi) = self.buf.split_at_mut((j + h) * w);
                    let a = &mut lo[j * w..(j + 1) * w];
                    let b = &mut hi[..w];
                    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                        let (s, d) = (*x + *y, *x - *y);
                        *x = s;
                        *y = d;
                    }
                }
            }
            h *= 2;
        }
    }

    /// Unsigned transform entry for effect `f` and its sign: the contrast is
    /// `sign * slice`.
    #[inline]
    pub fn raw(&self, mm: &ModelMatrix, f: usize) -> (f64, &[f64]) {
        let m = mm.row_mask(f) as usize;
        let sign = if mm.effects()[f].order() % 2 == 0 { 1.0 } else { -1.0 };
        (sign, &self.buf[m * self.width..(m + 1) * self.width])
    }

    /// Squared norm of the contrast of `f` over columns `range`.
    #[inline]
    pub fn squared_norm(&self, mm: &ModelMatrix, f: usize, range: std::ops::Range<usize>) -> f64 {
        let (_, v) = self.raw(mm, f);
        v[range].iter().map(|x| x * x).sum()
    }

    pub fn contrast(&self, mm: &ModelMatrix, f: usize, out: &mut [f64]) {
        let (sign, v) = self.raw(mm, f);
        for (o, x) in out.iter_mut().zip(v) {
            *o = sign * x;
        }
    }
}

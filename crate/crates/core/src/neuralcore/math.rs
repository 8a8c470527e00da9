//! Flat row-major matrices and the handful of scalar functions the model
//! needs. No BLAS: shapes here are small (at most a few hundred per axis) and
//! explicit loops keep the arithmetic order under our control, which the
//! determinism guarantees depend on.

use crate::{Error, Result};

// ── Matrix ──────────────────────────────────────────────────────────────────

/// Dense row-major `rows x cols` matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Build from a flat row-major buffer; errors if the length is off.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out[i] = row_i . x`
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            out[i] = dot(self.row(i), x);
        }
    }

    /// `out[j] += sum_i d[i] * self[i][j]` (transposed mat-vec, accumulating).
    pub fn matvec_t_acc(&self, d: &[f64], out: &mut [f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for i in 0..self.rows {
            let di = d[i];
            if di == 0.0 {
                continue;
            }
            let row = self.row(i);
            for j in 0..self.cols {
                out[j] += di * row[j];
            }
        }
    }

    /// Rank-1 update: `self[i][j] += a[i] * b[j]` (gradient accumulation).
    pub fn outer_acc(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for i in 0..self.rows {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            let row = self.row_mut(i);
            for j in 0..b.len() {
                row[j] += ai * b[j];
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

// ── Order-independent reduction ─────────────────────────────────────────────

/// Sum after sorting by total order. Because the result no longer depends on
/// the order terms arrived in, reductions over graph neighbourhoods are
/// bitwise invariant under node relabelling. Scratch is consumed.
pub fn stable_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

// ── Scalar nonlinearities ───────────────────────────────────────────────────

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_deriv(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// d elu/dx expressed through the pre-activation.
#[inline]
pub fn elu_deriv(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

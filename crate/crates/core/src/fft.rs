//! Thin wrappers around `rustfft` for the 1-D and 2-D transforms used here.
//!
//! Forward transforms use `exp(-i 2 pi j k / n)` and are unnormalized;
//! inverse transforms are unnormalized unless stated otherwise.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::types::C64;

/// Cached row/column plans for a `rows x cols` 2-D transform.
#[derive(Clone)]
pub struct Fft2d {
    rows: usize,
    cols: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2d({}x{})", self.rows, self.cols)
    }
}

impl Fft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2d {
            rows,
            cols,
            fwd_row: planner.plan_fft(cols, FftDirection::Forward),
            inv_row: planner.plan_fft(cols, FftDirection::Inverse),
            fwd_col: planner.plan_fft(rows, FftDirection::Forward),
            inv_col: planner.plan_fft(rows, FftDirection::Inverse),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row transform of `rows` consecutive rows of length `cols`.
    pub fn rows_inplace(&self, data: &mut [C64], dir: FftDirection) {
        let plan = match dir {
            FftDirection::Forward => &self.fwd_row,
            FftDirection::Inverse => &self.inv_row,
        };
        if !data.is_empty() {
            plan.process(data);
        }
    }

    /// Column transform of a row-major `rows x cols` buffer (via transposition).
    pub fn cols_inplace(&self, data: &mut [C64], dir: FftDirection) {
        let plan = match dir {
            FftDirection::Forward => &self.fwd_col,
            FftDirection::Inverse => &self.inv_col,
        };
        let mut t = transpose(data, self.rows, self.cols);
        plan.process(&mut t);
        let back = transpose(&t, self.cols, self.rows);
        data.copy_from_slice(&back);
    }

    pub fn process(&self, data: &mut [C64], dir: FftDirection) {
        assert_eq!(data.len(), self.rows * self.cols);
        self.rows_inplace(data, dir);
        self.cols_inplace(data, dir);
    }
}

/// Row-major `rows x cols` to row-major `cols x rows`.
pub fn transpose(data: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); data.len()];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = data[r * cols + c];
                }
            }
        }
    }
    out
}

/// Unnormalized 2-D FFT of an array, `exp(-i...)` for forward.
pub fn fft2(a: &Array2<C64>, dir: FftDirection) -> Array2<C64> {
    let (r, c) = a.dim();
    let mut buf: Vec<C64> = a.iter().copied().collect();
    Fft2d::new(r, c).process(&mut buf, dir);
    Array2::from_shape_vec((r, c), buf).expect("shape preserved")
}

/// Centered 1-D transform: index `j` represents coordinate `j - n/2` on both
/// sides. The inverse carries the `1/n` factor, so a constant input maps to a
/// unit impulse at the center.
pub struct CenteredFft1d {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl CenteredFft1d {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        CenteredFft1d { n, fwd: planner.plan_fft(n, FftDirection::Forward), inv: planner.plan_fft(n, FftDirection::Inverse) }
    }

    pub fn inverse(&self, x: &mut [C64]) {
        self.run(x, false);
    }

    pub fn forward(&self, x: &mut [C64]) {
        self.run(x, true);
    }

    fn run(&self, x: &mut [C64], forward: bool) {
        let n = self.n;
        assert_eq!(x.len(), n);
        // ifftshift moves coordinate 0 to index 0
        x.rotate_left(n / 2);
        if forward {
            self.fwd.process(x);
        } else {
            self.inv.process(x);
            let s = 1.0 / n as f64;
            x.iter_mut().for_each(|v| *v *= s);
        }
        x.rotate_right(n / 2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_inverse_of_constant_is_center_impulse() {
        for n in [8usize, 9, 10] {
            let f = CenteredFft1d::new(n);
            let mut x = vec![C64::new(1.0, 0.0); n];
            f.inverse(&mut x);
            for (j, v) in x.iter().enumerate() {
                let want = if j == n / 2 { 1.0 } else { 0.0 };
                assert!((v - C64::new(want, 0.0)).norm() < 1e-14, "n={n} j={j}");
            }
            f.forward(&mut x);
            assert!(x.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-14));
        }
    }

    #[test]
    fn fft2_matches_direct_sum() {
        let a = Array2::from_shape_fn((4, 6), |(i, j)| C64::new(i as f64 - j as f64 * 0.5, (i * j) as f64 * 0.1));
        let f = fft2(&a, FftDirection::Forward);
        let (r, c) = a.dim();
        for (ku, kv) in [(0, 0), (1, 2), (3, 5)] {
            let mut s = C64::new(0.0, 0.0);
            for ((i, j), v) in a.indexed_iter() {
                let ph = -2.0 * std::f64::consts::PI * ((ku * i) as f64 / r as f64 + (kv * j) as f64 / c as f64);
                s += v * C64::from_polar(1.0, ph);
            }
            assert!((s - f[[ku, kv]]).norm() < 1e-10);
        }
    }
}

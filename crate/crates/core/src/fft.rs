//! Small 2D FFT wrapper over `rustfft` for row-major complex arrays.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for a `width x height` row-major array.
/// The forward transform uses the `exp(-i k x)` kernel and is unnormalized;
/// the inverse divides by `width * height`.
#[derive(Clone)]
pub struct Fft2 {
    width: usize,
    height: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.width, self.height)
    }
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            width,
            height,
            fwd_row: planner.plan_fft_forward(width),
            fwd_col: planner.plan_fft_forward(height),
            inv_row: planner.plan_fft_inverse(width),
            inv_col: planner.plan_fft_inverse(height),
        }
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    fn run(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.width * self.height, "FFT buffer size");
        row.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); self.height];
        for c in 0..self.width {
            for r in 0..self.height {
                column[r] = data[r * self.width + c];
            }
            col.process(&mut column);
            for r in 0..self.height {
                data[r * self.width + c] = column[r];
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd_row, &self.fwd_col);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv_row, &self.inv_col);
        let s = 1.0 / (self.width * self.height) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

/// Signed FFT-order frequency index of bin `i` out of `n`
/// (`0, 1, .., n/2 - 1, -n/2, .., -1`).
#[inline]
pub fn signed_bin(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Bin holding frequency `-f` for the bin holding `f`.
#[inline]
pub fn mirror_bin(i: usize, n: usize) -> usize {
    (n - i) % n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_undoes_forward() {
        let f = Fft2::new(6, 4);
        let orig: Vec<Complex64> = (0..24)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64).cos()))
            .collect();
        let mut buf = orig.clone();
        f.forward(&mut buf);
        f.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let f = Fft2::square(8);
        let mut d = vec![0.0; 64];
        d[0] = 1.0;
        let s = f.forward_real(&d);
        assert!(s.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn bin_helpers() {
        let v: Vec<i64> = (0..8).map(|i| signed_bin(i, 8)).collect();
        assert_eq!(v, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert_eq!(mirror_bin(0, 8), 0);
        assert_eq!(mirror_bin(3, 8), 5);
        assert_eq!(signed_bin(2, 5), 2);
        assert_eq!(signed_bin(3, 5), -2);
    }
}

//! Thin wrappers around rustfft with a per-thread planner cache.

use std::cell::RefCell;

use rustfft::FftPlanner;

use crate::C64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place forward DFT, `X_k = Σ x_n e^{-j2πkn/N}`.
pub fn forward(buf: &mut [C64]) {
    if buf.len() < 2 {
        return;
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(buf);
}

/// In-place inverse DFT without the 1/N factor.
pub fn inverse(buf: &mut [C64]) {
    if buf.len() < 2 {
        return;
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    fft.process(buf);
}

/// In-place inverse DFT including the 1/N factor.
pub fn inverse_normalized(buf: &mut [C64]) {
    inverse(buf);
    let s = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= s;
    }
}

/// Signed frequency index of bin `k` in an `n`-point DFT.
pub fn signed_bin(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Bin position of a signed frequency index.
pub fn bin_of(f: i64, n: usize) -> usize {
    f.rem_euclid(n as i64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let x: Vec<C64> = (0..12).map(|i| C64::new(i as f64, -(i as f64) * 0.5)).collect();
        let mut y = x.clone();
        forward(&mut y);
        inverse_normalized(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bins() {
        assert_eq!(signed_bin(0, 8), 0);
        assert_eq!(signed_bin(3, 8), 3);
        assert_eq!(signed_bin(4, 8), -4);
        assert_eq!(signed_bin(7, 8), -1);
        assert_eq!(signed_bin(4, 9), 4);
        assert_eq!(signed_bin(5, 9), -4);
        assert_eq!(bin_of(-1, 8), 7);
    }
}

//! Fourier pseudospectral operations on the periodic radial grid.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// FFT plans and wavenumbers for a uniform periodic grid of `n` nodes on an
/// interval of length `length`.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl Spectral {
    pub fn new(n: usize, length: f64) -> Self {
        assert!(n >= 4 && n % 2 == 0, "grid size must be even and at least 4");
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let base = 2.0 * std::f64::consts::PI / length;
        let wavenumbers = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                m * base
            })
            .collect();
        Self {
            n,
            length,
            forward,
            inverse,
            wavenumbers,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Unnormalised DFT coefficients of real samples.
    pub fn coefficients(&self, f: &[f64]) -> Vec<Complex64> {
        assert_eq!(f.len(), self.n);
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    fn synthesize(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.into_iter().map(|c| c.re * s).collect()
    }

    /// `order`-th derivative by multiplication with `(ik)^order`.
    ///
    /// The Nyquist mode is dropped for odd orders so real input stays real.
    pub fn derivative(&self, f: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return f.to_vec();
        }
        let mut c = self.coefficients(f);
        let i = Complex64::new(0.0, 1.0);
        for (j, cj) in c.iter_mut().enumerate() {
            if order % 2 == 1 && j == self.n / 2 {
                *cj = Complex64::new(0.0, 0.0);
                continue;
            }
            *cj *= (i * self.wavenumbers[j]).powu(order);
        }
        self.synthesize(c)
    }

    /// Zeroes every mode with `|k| > n/3` (the 2/3 rule).
    pub fn dealias(&self, f: &[f64]) -> Vec<f64> {
        let mut c = self.coefficients(f);
        let cut = self.n / 3;
        for (j, cj) in c.iter_mut().enumerate() {
            let m = if j <= self.n / 2 { j } else { self.n - j };
            if m > cut {
                *cj = Complex64::new(0.0, 0.0);
            }
        }
        self.synthesize(c)
    }

    /// Evaluates the trigonometric interpolant of samples taken at
    /// `x0 + j·length/n` at an arbitrary point `x`.
    pub fn interpolate(&self, coeffs: &[Complex64], x0: f64, x: f64) -> f64 {
        let n = self.n;
        let dx = x - x0;
        let mut s = coeffs[0].re;
        for j in 1..n / 2 {
            let ph = Complex64::from_polar(1.0, self.wavenumbers[j] * dx);
            s += 2.0 * (coeffs[j] * ph).re;
        }
        s += coeffs[n / 2].re * (self.wavenumbers[n / 2] * dx).cos();
        s / n as f64
    }

    /// Modulus of each DFT coefficient normalised by `n`, for `0 ≤ k ≤ n/2`.
    pub fn mode_amplitudes(&self, f: &[f64]) -> Vec<f64> {
        let c = self.coefficients(f);
        c[..=self.n / 2].iter().map(|z| z.norm() / self.n as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, l: f64) -> Vec<f64> {
        (0..n).map(|j| -l / 2.0 + j as f64 * l / n as f64).collect()
    }

    #[test]
    fn derivative_of_trig_polynomial_is_exact() {
        let l = 6.0;
        let sp = Spectral::new(64, l);
        let x = grid(64, l);
        let k = 2.0 * PI / l;
        let f: Vec<f64> = x.iter().map(|&x| (3.0 * k * x).sin() + (5.0 * k * x).cos()).collect();
        let d1 = sp.derivative(&f, 1);
        let d2 = sp.derivative(&f, 2);
        for (j, &xj) in x.iter().enumerate() {
            let e1 = 3.0 * k * (3.0 * k * xj).cos() - 5.0 * k * (5.0 * k * xj).sin();
            let e2 = -9.0 * k * k * (3.0 * k * xj).sin() - 25.0 * k * k * (5.0 * k * xj).cos();
            assert!((d1[j] - e1).abs() < 1e-11);
            assert!((d2[j] - e2).abs() < 1e-10);
        }
    }

    #[test]
    fn interpolation_reproduces_band_limited_data() {
        let l = 2.0 * PI;
        let sp = Spectral::new(32, l);
        let x = grid(32, l);
        let f: Vec<f64> = x.iter().map(|&x| (2.0 * x).cos() + 0.5 * (7.0 * x).sin()).collect();
        let c = sp.coefficients(&f);
        for &xx in &[0.1, 1.234, -2.9] {
            let v = sp.interpolate(&c, x[0], xx);
            assert!((v - ((2.0 * xx).cos() + 0.5 * (7.0 * xx).sin())).abs() < 1e-12);
        }
    }

    #[test]
    fn dealias_removes_high_modes_only() {
        let l = 2.0 * PI;
        let sp = Spectral::new(48, l);
        let x = grid(48, l);
        let low: Vec<f64> = x.iter().map(|&x| (3.0 * x).sin()).collect();
        let high: Vec<f64> = x.iter().map(|&x| (20.0 * x).cos()).collect();
        let mixed: Vec<f64> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
        let out = sp.dealias(&mixed);
        for (o, l) in out.iter().zip(&low) {
            assert!((o - l).abs() < 1e-13);
        }
    }
}

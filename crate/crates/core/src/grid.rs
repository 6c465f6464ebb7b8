//! Periodic grid, Fourier transforms and spectral calculus.
//!
//! The grid covers `[-L/2, L/2)` with `num_points` equispaced samples
//! `x_j = -L/2 + j*dx`. Fourier coefficients use
//!
//! ```text
//! u_hat(xi_k) = (1/n) * sum_j f(x_j) exp(-i xi_k x_j),   xi_k = 2 pi k / L
//! ```
//!
//! stored in FFT order (`k = 0, 1, .., n/2-1, -n/2, .., -1`). With this
//! normalization `sum_j |f_j|^2 dx = L * sum_k |u_hat_k|^2`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default number of grid points.
pub const DEFAULT_POINTS: usize = 4096;
/// Default box length.
pub const DEFAULT_LENGTH: f64 = 200.0;

pub struct Grid {
    num_points: usize,
    box_length: f64,
    spacing: f64,
    wavenumbers: Vec<f64>,
    // (-1)^k, the phase from placing x_0 at -L/2
    parity: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("num_points", &self.num_points)
            .field("box_length", &self.box_length)
            .finish()
    }
}

impl Grid {
    pub fn new(num_points: usize, box_length: f64) -> Result<Arc<Grid>> {
        if num_points < 4 || !num_points.is_power_of_two() {
            return Err(Error::validation(format!(
                "num_points must be a power of two >= 4, got {num_points}"
            )));
        }
        if !(box_length.is_finite() && box_length > 0.0) {
            return Err(Error::validation(format!(
                "box_length must be positive and finite, got {box_length}"
            )));
        }
        let n = num_points;
        let wavenumbers = (0..n)
            .map(|i| 2.0 * PI * Self::signed_index(n, i) as f64 / box_length)
            .collect();
        let parity = (0..n)
            .map(|i| if Self::signed_index(n, i).rem_euclid(2) == 0 { 1.0 } else { -1.0 })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Grid {
            num_points: n,
            box_length,
            spacing: box_length / n as f64,
            wavenumbers,
            parity,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }))
    }

    /// The 4096-point grid on a box of length 200.
    pub fn default_grid() -> Arc<Grid> {
        Self::new(DEFAULT_POINTS, DEFAULT_LENGTH).expect("default grid is valid")
    }

    fn signed_index(n: usize, i: usize) -> i64 {
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Integer mode number of storage slot `i`.
    pub fn mode(&self, i: usize) -> i64 {
        Self::signed_index(self.num_points, i)
    }

    /// Storage slot of the single Nyquist mode `k = -n/2`.
    pub fn nyquist_slot(&self) -> usize {
        self.num_points / 2
    }

    /// Largest represented |xi| (the Nyquist frequency).
    pub fn nyquist(&self) -> f64 {
        PI * self.num_points as f64 / self.box_length
    }

    /// Modes with `|k| > dealias_cutoff()` are removed by [`dealias`].
    pub fn dealias_cutoff(&self) -> i64 {
        self.num_points as i64 / 3
    }

    pub fn x(&self, j: usize) -> f64 {
        -0.5 * self.box_length + j as f64 * self.spacing
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.num_points).map(|j| self.x(j)).collect()
    }

    /// Forward transform of real samples into `out`.
    pub(crate) fn forward_slice(&self, samples: &[f64], out: &mut Vec<Complex64>) {
        out.clear();
        out.extend(samples.iter().map(|&v| Complex64::new(v, 0.0)));
        self.forward.process(out);
        let scale = 1.0 / self.num_points as f64;
        for (c, p) in out.iter_mut().zip(&self.parity) {
            *c *= scale * p;
        }
    }

    /// Inverse transform; returns the real part of the synthesized samples.
    pub(crate) fn inverse_slice(&self, coeffs: &[Complex64], out: &mut Vec<f64>) {
        let mut buf: Vec<Complex64> =
            coeffs.iter().zip(&self.parity).map(|(c, p)| c * p).collect();
        self.inverse.process(&mut buf);
        out.clear();
        out.extend(buf.iter().map(|c| c.re));
    }

    /// `(i xi)^order` with the Nyquist entry zeroed for odd orders so that
    /// derivatives of real fields stay real.
    pub fn derivative_symbol(&self, order: u32) -> Vec<Complex64> {
        let ny = self.nyquist_slot();
        self.wavenumbers
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                if order % 2 == 1 && i == ny {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, xi).powu(order)
                }
            })
            .collect()
    }

    pub(crate) fn same(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
        Arc::ptr_eq(a, b)
            || (a.num_points == b.num_points && a.box_length == b.box_length)
    }
}

/// Samples of a real function on a grid.
#[derive(Debug, Clone)]
pub struct RealField {
    grid: Arc<Grid>,
    samples: Vec<f64>,
}

/// Fourier coefficients of a function on a grid, in FFT order.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

impl RealField {
    pub fn new(grid: &Arc<Grid>, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.num_points() {
            return Err(Error::validation(format!(
                "field has {} samples, grid has {}",
                samples.len(),
                grid.num_points()
            )));
        }
        Ok(RealField { grid: grid.clone(), samples })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        RealField { grid: grid.clone(), samples: vec![0.0; grid.num_points()] }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let samples = (0..grid.num_points()).map(|j| f(grid.x(j))).collect();
        RealField { grid: grid.clone(), samples }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid quadrature of `self * other`.
    pub fn inner(&self, other: &RealField) -> f64 {
        debug_assert!(Grid::same(&self.grid, &other.grid));
        self.samples.iter().zip(&other.samples).map(|(a, b)| a * b).sum::<f64>()
            * self.grid.spacing()
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField { grid: self.grid.clone(), samples: self.samples.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> RealField {
        debug_assert!(Grid::same(&self.grid, &other.grid));
        RealField {
            grid: self.grid.clone(),
            samples: self.samples.iter().zip(&other.samples).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> RealField {
        self.map(|v| k * v)
    }

    pub fn add(&self, other: &RealField) -> RealField {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &RealField) -> RealField {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &RealField) -> RealField {
        self.zip_with(other, |a, b| a * b)
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &RealField) {
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += k * b;
        }
    }

    /// Pointwise multiplication by `w(x)`.
    pub fn mul_fn(&self, w: impl Fn(f64) -> f64) -> RealField {
        let grid = &self.grid;
        RealField {
            grid: grid.clone(),
            samples: self.samples.iter().enumerate().map(|(j, &v)| v * w(grid.x(j))).collect(),
        }
    }

    /// Spectral derivative of the given order.
    pub fn derivative(&self, order: u32) -> RealField {
        let sym = self.grid.derivative_symbol(order);
        forward_transform(self).mul_symbol(&sym).inverse()
    }

    /// Spectral translation: returns `f(x - shift)` (periodically).
    pub fn translate(&self, shift: f64) -> RealField {
        let ny = self.grid.nyquist_slot();
        let mut spec = forward_transform(self);
        for (i, (c, &xi)) in spec.coeffs.iter_mut().zip(self.grid.wavenumbers()).enumerate() {
            if i == ny {
                *c *= (xi * shift).cos();
            } else {
                *c *= Complex64::from_polar(1.0, -xi * shift);
            }
        }
        spec.inverse()
    }

    /// Alias-free product: both factors are truncated to the 2/3 band and
    /// the product is truncated again.
    pub fn dealiased_product(&self, other: &RealField) -> RealField {
        let a = dealias(&forward_transform(self)).inverse();
        let b = dealias(&forward_transform(other)).inverse();
        dealias(&forward_transform(&a.mul(&b))).inverse()
    }
}

impl SpectralField {
    pub fn new(grid: &Arc<Grid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.num_points() {
            return Err(Error::validation(format!(
                "spectral field has {} coefficients, grid has {}",
                coeffs.len(),
                grid.num_points()
            )));
        }
        Ok(SpectralField { grid: grid.clone(), coeffs })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of integer mode `k` (negative modes allowed).
    pub fn mode(&self, k: i64) -> Complex64 {
        let n = self.grid.num_points() as i64;
        self.coeffs[k.rem_euclid(n) as usize]
    }

    pub fn inverse(&self) -> RealField {
        inverse_transform(self)
    }

    /// Multiply by a precomputed symbol (FFT order).
    pub fn mul_symbol(mut self, symbol: &[Complex64]) -> SpectralField {
        for (c, m) in self.coeffs.iter_mut().zip(symbol) {
            *c *= m;
        }
        self
    }
}

pub fn forward_transform(f: &RealField) -> SpectralField {
    let mut coeffs = Vec::with_capacity(f.samples.len());
    f.grid.forward_slice(&f.samples, &mut coeffs);
    SpectralField { grid: f.grid.clone(), coeffs }
}

pub fn inverse_transform(f: &SpectralField) -> RealField {
    let mut samples = Vec::with_capacity(f.coeffs.len());
    f.grid.inverse_slice(&f.coeffs, &mut samples);
    RealField { grid: f.grid.clone(), samples }
}

/// `coeff_out(xi_k) = m(xi_k) * coeff_in(xi_k)`.
pub fn apply_multiplier(f: &SpectralField, m: impl Fn(f64) -> Complex64) -> SpectralField {
    let coeffs =
        f.coeffs.iter().zip(f.grid.wavenumbers()).map(|(c, &xi)| m(xi) * c).collect();
    SpectralField { grid: f.grid.clone(), coeffs }
}

/// Real even multiplier applied to a real field.
pub fn apply_real_multiplier(f: &RealField, m: impl Fn(f64) -> f64) -> RealField {
    apply_multiplier(&forward_transform(f), |xi| Complex64::new(m(xi), 0.0)).inverse()
}

/// `||f||_{H^s} = (L * sum_k (1 + xi_k^2)^s |u_hat_k|^2)^{1/2}`.
pub fn sobolev_norm(f: &RealField, s: f64) -> f64 {
    sobolev_norm_spectral(&forward_transform(f), s)
}

pub fn sobolev_norm_spectral(f: &SpectralField, s: f64) -> f64 {
    let sum: f64 = f
        .coeffs
        .iter()
        .zip(f.grid.wavenumbers())
        .map(|(c, &xi)| (1.0 + xi * xi).powf(s) * c.norm_sqr())
        .sum();
    (f.grid.box_length() * sum).sqrt()
}

/// 2/3-rule: zero every coefficient with `|k| > n/3`.
pub fn dealias(f: &SpectralField) -> SpectralField {
    let cut = f.grid.dealias_cutoff();
    let coeffs = f
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| if f.grid.mode(i).abs() > cut { Complex64::new(0.0, 0.0) } else { c })
        .collect();
    SpectralField { grid: f.grid.clone(), coeffs }
}

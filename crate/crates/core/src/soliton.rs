//! The KdV soliton family `psi_c(y) = (3c/2) sech^2(sqrt(c) y / 2)` and its
//! parameter derivatives.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, RealField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolitonParams {
    pub c: f64,
    pub x0: f64,
}

impl SolitonParams {
    pub fn new(c: f64, x0: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::validation(format!("soliton speed must be positive, got {c}")));
        }
        if !x0.is_finite() {
            return Err(Error::validation("soliton center must be finite"));
        }
        Ok(SolitonParams { c, x0 })
    }

    /// Centered soliton of speed `c`.
    pub fn centered(c: f64) -> Result<Self> {
        Self::new(c, 0.0)
    }
}

// sech(z) written to avoid overflow of cosh for large |z|.
fn sech(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

/// `psi_c(y)` in the co-moving coordinate `y` (measured from `x0`).
pub fn eval_soliton(p: SolitonParams, y: f64) -> f64 {
    let s = sech(0.5 * p.c.sqrt() * (y - p.x0));
    1.5 * p.c * s * s
}

/// `d psi_c / dy = -(3/2) c^{3/2} sech^2 tanh`.
pub fn soliton_dy(p: SolitonParams, y: f64) -> f64 {
    let z = 0.5 * p.c.sqrt() * (y - p.x0);
    let s = sech(z);
    -1.5 * p.c.powf(1.5) * s * s * z.tanh()
}

/// `d psi_c / dc = (3/2) sech^2 - (3/4) sqrt(c) y sech^2 tanh`.
pub fn soliton_dc(p: SolitonParams, y: f64) -> f64 {
    let y = y - p.x0;
    let z = 0.5 * p.c.sqrt() * y;
    let s2 = sech(z).powi(2);
    1.5 * s2 - 0.75 * p.c.sqrt() * y * s2 * z.tanh()
}

pub fn soliton_field(grid: &Arc<Grid>, p: SolitonParams) -> RealField {
    RealField::from_fn(grid, |y| eval_soliton(p, y))
}

pub fn soliton_dy_field(grid: &Arc<Grid>, p: SolitonParams) -> RealField {
    RealField::from_fn(grid, |y| soliton_dy(p, y))
}

pub fn soliton_dc_field(grid: &Arc<Grid>, p: SolitonParams) -> RealField {
    RealField::from_fn(grid, |y| soliton_dc(p, y))
}

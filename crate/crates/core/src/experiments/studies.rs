//! Scaling studies: commutator decay in `N`, Hamiltonian increments over one
//! step, and the linear-estimate probe sweep.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bourgain::{linear_estimate_probe, rho, ys_norm, ProbeKind, ProbeReport, SpacetimeField};
use crate::error::Result;
use crate::experiments::config::{CommutatorConfig, RunConfig};
use crate::grid::{sobolev_norm, Grid, RealField};
use crate::imethod::{commutator, IMultiplier};
use crate::kdv::hamiltonian;
use crate::modulation::{CoupledEvolver, ModulationContext, PerturbationState};
use crate::soliton::{soliton_field, SolitonParams};
use crate::spectral_ops::linear_fit;

/// Values below this fraction of `||u|| ||v||` count as zero.
const DEGENERATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutatorRow {
    #[serde(rename = "N")]
    pub n: f64,
    /// `Y^1` surrogate of `rho_delta^2(t) e^{ay} d_y (I(uv) - Iu Iv)`.
    pub y1_norm: f64,
    /// Spacetime `L^2` norm of the same field.
    pub l2_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorScaling {
    pub rows: Vec<CommutatorRow>,
    /// Log-log slope of `y1_norm` against `N`; `None` when degenerate.
    pub slope: Option<f64>,
    pub l2_slope: Option<f64>,
}

impl CommutatorScaling {
    pub fn is_degenerate(&self) -> bool {
        self.slope.is_none()
    }

    /// `slope <= -(s - 3/4) + 0.1`.
    pub fn passes(&self, s: f64) -> bool {
        self.slope.is_some_and(|m| m <= -(s - 0.75) + 0.1)
    }
}

fn log_slope(ns: &[f64], vals: &[f64]) -> (f64, f64) {
    let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    linear_fit(&x, &y)
}

/// The sech-profile pair of the default study.
pub fn sech_pair(grid: &Arc<Grid>, width: f64) -> (RealField, RealField) {
    let sech2 = |z: f64| 1.0 / z.cosh().powi(2);
    (
        RealField::from_fn(grid, |y| sech2(y / width)),
        RealField::from_fn(grid, |y| sech2((y - width) / width)),
    )
}

/// Commutator norms against `N` for the given profiles.
pub fn commutator_scaling_with(
    cfg: &CommutatorConfig,
    u: &RealField,
    v: &RealField,
) -> Result<CommutatorScaling> {
    cfg.validate()?;
    let grid = u.grid().clone();
    let floor = DEGENERATE_FLOOR * u.norm_l2() * v.norm_l2();
    let time_weight = |t: f64| rho(t / cfg.delta).powi(2);
    let mut rows = Vec::with_capacity(cfg.cutoffs.len());
    for &n in &cfg.cutoffs {
        let im = IMultiplier::new(n, cfg.s)?;
        let a = cfg.a;
        let h = commutator(&im, u, v).derivative(1).mul_fn(|y| (a * y).exp());
        let field = SpacetimeField::from_profiles(&grid, cfg.delta, cfg.num_times, |t| h.scale(time_weight(t)))?;
        let time_l2 =
            (field.times().iter().map(|&t| time_weight(t).powi(2)).sum::<f64>() * field.time_step()).sqrt();
        rows.push(CommutatorRow { n, y1_norm: ys_norm(&field, 1.0), l2_norm: time_l2 * h.norm_l2() });
    }
    let degenerate = rows.iter().any(|r| !(r.l2_norm > floor));
    let (slope, l2_slope) = if degenerate {
        (None, None)
    } else {
        let ns: Vec<f64> = rows.iter().map(|r| r.n).collect();
        let y1: Vec<f64> = rows.iter().map(|r| r.y1_norm).collect();
        let l2: Vec<f64> = rows.iter().map(|r| r.l2_norm).collect();
        (Some(log_slope(&ns, &y1).0), Some(log_slope(&ns, &l2).0))
    };
    Ok(CommutatorScaling { rows, slope, l2_slope })
}

/// Commutator study on the configured grid with the sech-profile pair.
pub fn commutator_scaling_experiment(cfg: &CommutatorConfig) -> Result<CommutatorScaling> {
    cfg.validate()?;
    let grid = Grid::new(cfg.num_points, cfg.box_length)?;
    let (u, v) = sech_pair(&grid, cfg.width);
    commutator_scaling_with(cfg, &u, &v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianRow {
    #[serde(rename = "N")]
    pub n: f64,
    pub h_start: f64,
    pub h_end: f64,
    pub increment: f64,
    /// Increment of the unsmoothed `H(psi_c + v)`, which the exact flow conserves.
    pub drift: f64,
    /// `increment - drift`.
    pub net_increment: f64,
    /// `N^{-1} ||I v||^2_{H^1}` at the start of the step.
    pub comparison: f64,
    /// `|net_increment| / comparison`.
    pub ratio: f64,
}

/// `H(psi_c + I_N v)` before and after one coupled step, for each cutoff.
pub fn hamiltonian_increment_experiment(cfg: &RunConfig) -> Result<Vec<HamiltonianRow>> {
    cfg.validate()?;
    let hc = &cfg.hamiltonian;
    let grid = Grid::new(hc.num_points, hc.box_length)?;
    let ctx = Arc::new(ModulationContext::new(&grid, cfg.a, cfg.c0, cfg.modulation())?);
    let amp = hc.amplitude;
    let bump = RealField::from_fn(&grid, |y| amp * (-(y - 1.0).abs()).exp());
    let energy = |st: &PerturbationState| -> Result<(f64, f64)> {
        let psi = soliton_field(&grid, SolitonParams::centered(st.c)?);
        Ok((hamiltonian(&psi.add(&st.v_tilde)), hamiltonian(&psi.add(&st.v))))
    };
    let steps = (hc.delta / hc.dt).round() as usize;
    let mut rows = Vec::with_capacity(hc.cutoffs.len());
    for &n in &hc.cutoffs {
        let im = IMultiplier::new(n.min(grid.nyquist()), cfg.s)?;
        let mut st = PerturbationState::new(&ctx, &bump, &im)?;
        st.orthogonalize(&ctx, &im)?;
        let (h_start, full_start) = energy(&st)?;
        let comparison = sobolev_norm(&st.v_tilde, 1.0).powi(2) / n;
        let ev = CoupledEvolver::new(ctx.clone(), im, hc.dt, None)?;
        for _ in 0..steps {
            ev.step(&mut st)?;
        }
        let (h_end, full_end) = energy(&st)?;
        let increment = h_end - h_start;
        let drift = full_end - full_start;
        let net_increment = increment - drift;
        let ratio = if comparison > 0.0 { net_increment.abs() / comparison } else { 0.0 };
        rows.push(HamiltonianRow { n, h_start, h_end, increment, drift, net_increment, comparison, ratio });
    }
    Ok(rows)
}

/// Maximum probe ratios at the configured band and at twice the band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub kind: String,
    pub band: f64,
    pub max_ratio: f64,
    pub max_ratio_doubled: f64,
}

/// All four linear-estimate probes; returns the reports at the base band and
/// the per-kind summaries.
pub fn probe_sweep(cfg: &RunConfig) -> Result<(Vec<ProbeReport>, Vec<ProbeSummary>)> {
    let setup = cfg.probe;
    let doubled = crate::bourgain::ProbeSetup { band: 2.0 * setup.band, ..setup };
    doubled.validate()?;
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for kind in ProbeKind::ALL {
        let base = linear_estimate_probe(kind, cfg.probe_trials, &setup)?;
        let wide = linear_estimate_probe(kind, cfg.probe_trials, &doubled)?;
        summary.push(ProbeSummary {
            kind: kind.to_string(),
            band: setup.band,
            max_ratio: base.max_ratio(),
            max_ratio_doubled: wide.max_ratio(),
        });
        reports.push(base);
    }
    Ok((reports, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpectralField;
    use num_complex::Complex64;

    #[test]
    fn low_band_profiles_give_a_degenerate_table() {
        let cfg = CommutatorConfig { num_points: 512, box_length: 20.0, ..CommutatorConfig::default() };
        let grid = Grid::new(cfg.num_points, cfg.box_length).unwrap();
        let low = |phase: f64| {
            let mut c = vec![Complex64::new(0.0, 0.0); grid.num_points()];
            for k in 1..8usize {
                let z = Complex64::from_polar(1.0 / k as f64, phase * k as f64);
                c[k] = z;
                c[grid.num_points() - k] = z.conj();
            }
            SpectralField::new(&grid, c).unwrap().inverse()
        };
        assert!(grid.wavenumbers()[7] < 4.0);
        let res = commutator_scaling_with(&cfg, &low(0.3), &low(1.1)).unwrap();
        assert!(res.is_degenerate());
        assert!(!res.passes(cfg.s));
    }

    #[test]
    fn zero_bump_has_no_hamiltonian_increment() {
        let mut cfg = RunConfig::default();
        cfg.hamiltonian.amplitude = 0.0;
        cfg.hamiltonian.num_points = 1024;
        cfg.hamiltonian.cutoffs = vec![8.0, 16.0];
        cfg.hamiltonian.delta = 0.1;
        for r in hamiltonian_increment_experiment(&cfg).unwrap() {
            assert_eq!(r.increment, 0.0);
            assert_eq!(r.net_increment, 0.0);
            assert_eq!(r.ratio, 0.0);
        }
    }
}

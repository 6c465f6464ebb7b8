//! Run configuration, read from and written to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bourgain::ProbeSetup;
use crate::error::{Error, Result};
use crate::kdv::Sponge;
use crate::modulation::ModulationConfig;
use crate::spectral_ops::DampingForm;

/// Parameters of an iteration-scheme run plus the optional study sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Regularity, in `(7/8, 1)`.
    pub s: f64,
    /// Weight rate, `0 < a < sqrt(c0/3)`.
    pub a: f64,
    pub c0: f64,
    /// Target bound on `||e^{ay} I_1 v(0)||_{H^1}`.
    pub eps1: f64,
    /// Target bound on `||I_1 v(0)||_{H^1}`.
    pub eps2: f64,
    /// Step length between cutoff updates.
    pub delta: f64,
    /// Horizon.
    #[serde(rename = "T")]
    pub t_end: f64,
    pub kappa: f64,
    pub eta1: f64,
    /// Overrides the schedule coefficient `q` in `N(n) = kappa^{q n}`.
    pub schedule_exponent: Option<f64>,
    pub num_points: usize,
    pub box_length: f64,
    pub seed: u64,
    pub dt: f64,
    pub gamma_sign: f64,
    pub commutator_coeff: f64,
    pub exact_rates: bool,
    pub weight_radius: f64,
    pub sponge: Option<Sponge>,
    pub damping: DampingForm,
    /// Trace rows are written every this many time steps.
    pub trace_every: usize,
    pub commutator: CommutatorConfig,
    pub hamiltonian: HamiltonianConfig,
    pub probe: ProbeSetup,
    pub probe_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            s: 0.9,
            a: 0.5,
            c0: 1.0,
            eps1: 1e-3,
            eps2: 1e-2,
            delta: 1.0,
            t_end: 20.0,
            kappa: 0.9,
            eta1: 0.1,
            schedule_exponent: None,
            num_points: 2048,
            box_length: 200.0,
            seed: 0,
            dt: 0.01,
            gamma_sign: -1.0,
            commutator_coeff: 2.0,
            exact_rates: true,
            weight_radius: 15.0,
            sponge: Some(Sponge { start: -40.0, width: 40.0, strength: 8.0 }),
            damping: DampingForm::default(),
            trace_every: 10,
            commutator: CommutatorConfig::default(),
            hamiltonian: HamiltonianConfig::default(),
            probe: ProbeSetup::default(),
            probe_trials: 50,
        }
    }
}

impl RunConfig {
    /// Parses TOML text; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads a config file; the literal path `default` gives [`RunConfig::default`].
    pub fn load(path: &Path) -> Result<Self> {
        if path.as_os_str() == "default" {
            return Ok(Self::default());
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn modulation(&self) -> ModulationConfig {
        ModulationConfig {
            gamma_sign: self.gamma_sign,
            commutator_coeff: self.commutator_coeff,
            exact_rates: self.exact_rates,
            weight_radius: self.weight_radius,
        }
    }

    /// Number of intervals `J_n = [n delta, (n+1) delta]` up to the horizon.
    pub fn num_intervals(&self) -> usize {
        (self.t_end / self.delta).round() as usize
    }

    /// Time steps per interval.
    pub fn steps_per_interval(&self) -> usize {
        (self.delta / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.c0.is_finite() && self.c0 > 0.0) {
            return bad(format!("c0 must be positive, got {}", self.c0));
        }
        let bound = (self.c0 / 3.0).sqrt();
        if !(self.a > 0.0 && self.a < bound) {
            return bad(format!("a = {} is inadmissible: need 0 < a < sqrt(c0/3) = {bound:.6}", self.a));
        }
        if !(self.s > 0.875 && self.s < 1.0) {
            return bad(format!("s = {} must lie in (7/8, 1)", self.s));
        }
        if !(self.eps1 >= 0.0 && self.eps1.is_finite() && self.eps2 > 0.0 && self.eps2.is_finite()) {
            return bad("eps1 must be nonnegative and eps2 positive".into());
        }
        if !(self.delta > 0.0 && self.t_end >= self.delta && self.t_end.is_finite()) {
            return bad(format!("need 0 < delta <= T, got delta = {}, T = {}", self.delta, self.t_end));
        }
        if !(self.dt > 0.0 && self.dt <= self.delta) {
            return bad(format!("dt = {} must lie in (0, delta]", self.dt));
        }
        let k = self.delta / self.dt;
        if (k - k.round()).abs() > 1e-9 * k {
            return bad(format!("dt = {} must divide delta = {}", self.dt, self.delta));
        }
        let k = self.t_end / self.delta;
        if (k - k.round()).abs() > 1e-9 * k {
            return bad(format!("delta = {} must divide T = {}", self.delta, self.t_end));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa must lie in (0, 1), got {}", self.kappa));
        }
        if !(self.box_length > 0.0 && self.num_points.is_power_of_two() && self.num_points >= 64) {
            return bad("grid needs a positive box length and a power-of-two num_points >= 64".into());
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed = {} exceeds the TOML integer range", self.seed));
        }
        if self.trace_every == 0 || self.probe_trials == 0 {
            return bad("trace_every and probe_trials must be at least 1".into());
        }
        self.modulation().validate()?;
        self.commutator.validate()?;
        self.hamiltonian.validate()?;
        self.probe.validate()
    }
}

/// Setup of the commutator scaling study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutatorConfig {
    pub s: f64,
    pub a: f64,
    pub num_points: usize,
    pub box_length: f64,
    /// Width `l` of the profiles `sech^2(y/l)` and `sech^2((y - l)/l)`.
    pub width: f64,
    pub cutoffs: Vec<f64>,
    pub delta: f64,
    pub num_times: usize,
}

impl Default for CommutatorConfig {
    fn default() -> Self {
        CommutatorConfig {
            s: 0.875,
            a: 0.5,
            num_points: 16384,
            box_length: 25.0,
            width: 0.02,
            cutoffs: vec![8.0, 16.0, 32.0, 64.0],
            delta: 1.0,
            num_times: 32,
        }
    }
}

impl CommutatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.75 && self.s < 1.0) {
            return Err(Error::validation(format!("commutator s = {} must lie in (3/4, 1)", self.s)));
        }
        if self.cutoffs.len() < 2 || self.cutoffs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("commutator cutoffs must be increasing with at least two entries"));
        }
        let nyquist = std::f64::consts::PI * self.num_points as f64 / self.box_length;
        if self.cutoffs[0] < 1.0 || *self.cutoffs.last().unwrap() > nyquist {
            return Err(Error::validation(format!("commutator cutoffs must lie in [1, {nyquist:.3}]")));
        }
        if !(self.width > 0.0 && self.delta > 0.0 && self.num_times >= 8) {
            return Err(Error::validation("commutator width, delta and num_times must be positive"));
        }
        Ok(())
    }
}

/// Setup of the Hamiltonian increment study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub num_points: usize,
    pub box_length: f64,
    /// Amplitude of the kinked bump `amplitude * exp(-|y - 1|)`.
    pub amplitude: f64,
    pub cutoffs: Vec<f64>,
    /// Length of the single step.
    pub delta: f64,
    pub dt: f64,
}

impl Default for HamiltonianConfig {
    fn default() -> Self {
        HamiltonianConfig {
            num_points: 4096,
            box_length: 200.0,
            amplitude: 1e-2,
            cutoffs: vec![8.0, 16.0, 32.0, 64.0],
            delta: 1.0,
            dt: 0.01,
        }
    }
}

impl HamiltonianConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.iter().any(|&n| !(n >= 1.0)) {
            return Err(Error::validation("hamiltonian cutoffs must be >= 1"));
        }
        if !(self.amplitude >= 0.0 && self.delta > 0.0 && self.dt > 0.0 && self.dt <= self.delta) {
            return Err(Error::validation("hamiltonian study needs amplitude >= 0 and 0 < dt <= delta"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_admissible_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert_eq!(cfg.num_intervals(), 20);
        assert_eq!(cfg.steps_per_interval(), 100);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg = RunConfig::from_toml("T = 4.0\nseed = 9\n[commutator]\nwidth = 0.05\n[probe]\nband = 4.0\n").unwrap();
        assert_eq!(cfg.t_end, 4.0);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.commutator.width, 0.05);
        assert_eq!(cfg.probe.band, 4.0);
        assert_eq!(cfg.probe.num_points, 128);
        assert_eq!(cfg.a, 0.5);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn inadmissible_rate_names_the_bound() {
        let cfg = RunConfig { a: 0.7, ..RunConfig::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("sqrt(c0/3)"), "{msg}");
        assert!(RunConfig { s: 0.8, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { dt: 0.03, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { seed: u64::MAX, ..RunConfig::default() }.validate().is_err());
    }
}

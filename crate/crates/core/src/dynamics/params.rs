//! Physical rates, amplitudes and integration controls for one protocol run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert;

/// Which mode-space model evolves step II.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// Modes a, b with the eliminated two-photon loss channel `(κ_2ph, ab)`.
    Effective,
    /// Modes a, b, c with `H = ig(abc† − a†b†c)` and `(κ_c, c)`.
    ThreeMode,
}

/// How regime violations are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strictness {
    Warn,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Amplitude of mode a after the conditional displacement.
    pub alpha: f64,
    /// Amplitude of mode b after the conditional displacement.
    pub beta: f64,
    /// Three-wave coupling rate.
    pub g: f64,
    /// Decay rate of the parity mode c.
    pub kappa_c: f64,
    /// Residual single-photon decay of mode a during step II.
    pub kappa_a: f64,
    /// Residual single-photon decay of mode b during step II.
    pub kappa_b: f64,
    /// Detection efficiency of the monitored channels.
    pub eta: f64,
    /// Optional transmissivity applied before the mixing element (α → √η_pre α).
    pub eta_pre: f64,
    /// Apply η as a loss channel before the step-III homodyne readout.
    pub eta_readout: bool,
    /// Duration of step II.
    pub t_total: f64,
    /// Integration step; `None` selects the default for the model.
    pub dt: Option<f64>,
    /// Fock truncation of modes a and b; `None` selects the default.
    pub truncation: Option<usize>,
    /// Fock truncation of mode c in the three-mode model.
    pub truncation_c: usize,
    pub seed: u64,
    pub strictness: Strictness,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            beta: 0.75,
            g: 5.0,
            kappa_c: 100.0,
            kappa_a: 0.0,
            kappa_b: 0.0,
            eta: 1.0,
            eta_pre: 1.0,
            eta_readout: true,
            t_total: 10.0,
            dt: None,
            truncation: None,
            truncation_c: hilbert::DEFAULT_TRUNCATION_C,
            seed: 0,
            strictness: Strictness::Warn,
        }
    }
}

/// Fraction of the fastest physical rate allowed per deterministic step.
pub const DT_RATE_FRACTION: f64 = 0.02;
/// Upper bound on `dt · max-rate`.
pub const DT_RATE_BOUND: f64 = 0.05;

impl ProtocolParams {
    /// `κ_2ph = 4g²/κ_c`, the two-photon loss rate after eliminating mode c.
    pub fn kappa_2ph(&self) -> f64 {
        4.0 * self.g * self.g / self.kappa_c
    }

    /// Homodyne phase `θ_c = arg(gαβ)`.
    pub fn theta_c(&self) -> f64 {
        if self.g * self.alpha * self.beta < 0.0 {
            std::f64::consts::PI
        } else {
            0.0
        }
    }

    /// Amplitudes entering the mixing element, after optional pre-loss.
    pub fn effective_amplitudes(&self) -> (f64, f64) {
        let s = self.eta_pre.sqrt();
        (s * self.alpha, s * self.beta)
    }

    /// Fastest physical rate of the given model.
    pub fn max_rate(&self, model: Model) -> f64 {
        let k2 = self.kappa_2ph();
        let single = self.kappa_a.max(self.kappa_b);
        match model {
            Model::Effective => k2.max(single),
            Model::ThreeMode => k2.max(self.kappa_c).max(self.g).max(single),
        }
    }

    /// Default deterministic step `0.02 / max-rate` for the model.
    pub fn default_dt(&self, model: Model) -> f64 {
        DT_RATE_FRACTION / self.max_rate(model)
    }

    pub fn dt_for(&self, model: Model) -> f64 {
        self.dt.unwrap_or_else(|| self.default_dt(model))
    }

    /// Mode truncation used for amplitude `amp` on the deterministic path.
    pub fn truncation_for(&self, amp: f64) -> usize {
        self.truncation.unwrap_or_else(|| hilbert::default_truncation(amp))
    }

    /// Validate ranges and the weak-coupling regime
    /// `κ_a, κ_b < g/10` and `κ_2ph < κ_c/10`. Returns regime warnings;
    /// under [`Strictness::Fail`] a violated regime is an error.
    pub fn validate(&self) -> Result<Vec<String>> {
        let finite = [self.alpha, self.beta, self.g, self.kappa_c, self.kappa_a, self.kappa_b, self.eta, self.t_total];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!("eta = {} outside [0, 1]", self.eta)));
        }
        if !(self.eta_pre > 0.0 && self.eta_pre <= 1.0) {
            return Err(Error::InvalidParameter(format!("eta_pre = {} outside (0, 1]", self.eta_pre)));
        }
        if self.kappa_c <= 0.0 || self.g < 0.0 || self.kappa_a < 0.0 || self.kappa_b < 0.0 {
            return Err(Error::InvalidParameter("rates must be non-negative and kappa_c positive".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidParameter("amplitudes must be non-negative".into()));
        }
        if self.t_total < 0.0 {
            return Err(Error::InvalidParameter("t_total must be non-negative".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
            }
            let bound = dt * self.max_rate(Model::Effective);
            if bound > DT_RATE_BOUND {
                return Err(Error::InvalidParameter(format!("dt·max-rate = {bound:.3} exceeds {DT_RATE_BOUND}")));
            }
        }
        if self.truncation_c < 2 {
            return Err(Error::InvalidParameter("truncation_c must be at least 2".into()));
        }
        let mut warnings = Vec::new();
        if self.kappa_a >= self.g / 10.0 || self.kappa_b >= self.g / 10.0 {
            warnings.push(format!(
                "single-photon loss (κ_a={}, κ_b={}) not small against g/10={}",
                self.kappa_a,
                self.kappa_b,
                self.g / 10.0
            ));
        }
        if self.kappa_2ph() >= self.kappa_c / 10.0 {
            warnings.push(format!(
                "κ_2ph={} not small against κ_c/10={}; adiabatic elimination is unreliable",
                self.kappa_2ph(),
                self.kappa_c / 10.0
            ));
        }
        if self.strictness == Strictness::Fail && !warnings.is_empty() {
            return Err(Error::InvalidParameter(warnings.join("; ")));
        }
        Ok(warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rates() {
        let p = ProtocolParams::default();
        assert!((p.kappa_2ph() - 1.0).abs() < 1e-15);
        assert_eq!(p.theta_c(), 0.0);
        assert!((p.default_dt(Model::ThreeMode) - 2e-4).abs() < 1e-18);
        assert!((p.default_dt(Model::Effective) - 0.02).abs() < 1e-15);
        assert!(p.validate().unwrap().is_empty());
    }

    #[test]
    fn regime_violation_warns_or_fails() {
        let mut p = ProtocolParams { g: 20.0, ..Default::default() };
        assert_eq!(p.validate().unwrap().len(), 1);
        p.strictness = Strictness::Fail;
        assert!(p.validate().is_err());
    }

    #[test]
    fn range_checks() {
        assert!(ProtocolParams { eta: 1.2, ..Default::default() }.validate().is_err());
        assert!(ProtocolParams { dt: Some(0.1), ..Default::default() }.validate().is_err());
        assert!(ProtocolParams { alpha: f64::NAN, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn homodyne_phase_tracks_sign_of_g_alpha_beta() {
        let p = ProtocolParams { g: -5.0, ..Default::default() };
        assert!((p.theta_c() - std::f64::consts::PI).abs() < 1e-15);
    }
}

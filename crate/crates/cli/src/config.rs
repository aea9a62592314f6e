//! Configuration file, flag overrides and the resolved run settings.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use tpe_core::dynamics::{Model, ProtocolParams, Strictness};
use tpe_core::hilbert::{Quadrature, Sector};
use tpe_core::protocol::{GridSpec, RunConfig, SWEEP_ALPHAS, SWEEP_ETAS, SWEEP_TRAJECTORIES};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "TPE_OUT_DIR";
/// Output directory when neither `--out` nor the environment names one.
pub const DEFAULT_OUT_DIR: &str = "tpe-out";
/// Default bin width of `compare`.
pub const DEFAULT_BIN_WIDTH: f64 = 0.5;

/// Flat `key = value` configuration file. Every key is optional; unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub g: Option<f64>,
    pub kappa_c: Option<f64>,
    pub kappa_a: Option<f64>,
    pub kappa_b: Option<f64>,
    pub eta: Option<f64>,
    pub eta_pre: Option<f64>,
    pub eta_readout: Option<bool>,
    pub t_total: Option<f64>,
    pub dt: Option<f64>,
    pub truncation: Option<usize>,
    pub truncation_c: Option<usize>,
    pub seed: Option<u64>,
    pub strictness: Option<StrictnessArg>,
    pub sector: Option<SectorArg>,
    pub quadrature: Option<QuadratureArg>,
    pub trajectories: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub grid_window: Option<f64>,
    pub grid_step: Option<f64>,
    pub cutoff: Option<f64>,
    pub model: Option<ModelArg>,
    pub sme_dt: Option<f64>,
    pub sweep_alphas: Option<Vec<f64>>,
    pub sweep_etas: Option<Vec<f64>>,
    pub compare_bin_width: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SectorArg {
    Even,
    Odd,
}

impl From<SectorArg> for Sector {
    fn from(s: SectorArg) -> Self {
        match s {
            SectorArg::Even => Sector::Even,
            SectorArg::Odd => Sector::Odd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum QuadratureArg {
    #[value(name = "X", alias = "x")]
    X,
    #[value(name = "Y", alias = "y")]
    Y,
}

impl From<QuadratureArg> for Quadrature {
    fn from(q: QuadratureArg) -> Self {
        match q {
            QuadratureArg::X => Quadrature::X,
            QuadratureArg::Y => Quadrature::Y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArg {
    Effective,
    ThreeMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrictnessArg {
    Warn,
    Fail,
}

/// Command-line overrides; each takes precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub eta: Option<f64>,
    pub sector: Option<SectorArg>,
    pub quadrature: Option<QuadratureArg>,
    pub trajectories: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Everything a command needs, after merging file, flags and defaults.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub params: ProtocolParams,
    /// `None`: both sectors.
    pub sector: Option<Sector>,
    /// `None`: both quadratures on the analytic path, Y on the stochastic path.
    pub quadrature: Option<Quadrature>,
    pub trajectories: usize,
    /// Worker cap; 0 keeps the default pool.
    pub threads: usize,
    pub out: PathBuf,
    pub grid: GridSpec,
    pub cutoff: Option<f64>,
    pub model: Model,
    pub sme_dt: Option<f64>,
    pub sweep_alphas: Vec<f64>,
    pub sweep_etas: Vec<f64>,
    pub compare_bin_width: f64,
}

impl Settings {
    /// Merge `file` and `flags` over the defaults. `env_out` is the value of
    /// [`OUT_DIR_ENV`], if set.
    pub fn resolve(file: &FileConfig, flags: &Overrides, env_out: Option<PathBuf>) -> Result<Self, CliError> {
        let d = ProtocolParams::default();
        let alpha = flags.alpha.or(file.alpha);
        let eta = flags.eta.or(file.eta);
        let params = ProtocolParams {
            alpha: alpha.unwrap_or(d.alpha),
            beta: flags.beta.or(file.beta).unwrap_or(d.beta),
            g: file.g.unwrap_or(d.g),
            kappa_c: file.kappa_c.unwrap_or(d.kappa_c),
            kappa_a: file.kappa_a.unwrap_or(d.kappa_a),
            kappa_b: file.kappa_b.unwrap_or(d.kappa_b),
            eta: eta.unwrap_or(d.eta),
            eta_pre: file.eta_pre.unwrap_or(d.eta_pre),
            eta_readout: file.eta_readout.unwrap_or(d.eta_readout),
            t_total: file.t_total.unwrap_or(d.t_total),
            dt: file.dt.or(d.dt),
            truncation: file.truncation.or(d.truncation),
            truncation_c: file.truncation_c.unwrap_or(d.truncation_c),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            strictness: match file.strictness {
                Some(StrictnessArg::Fail) => Strictness::Fail,
                Some(StrictnessArg::Warn) => Strictness::Warn,
                None => d.strictness,
            },
        };
        let grid_default = GridSpec::default();
        let settings = Self {
            params,
            sector: flags.sector.or(file.sector).map(Sector::from),
            quadrature: flags.quadrature.or(file.quadrature).map(Quadrature::from),
            trajectories: flags.trajectories.or(file.trajectories).unwrap_or(SWEEP_TRAJECTORIES),
            threads: flags.threads.or(file.threads).unwrap_or(0),
            out: flags.out.clone().or_else(|| file.out.clone()).or(env_out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            grid: GridSpec {
                window: file.grid_window.unwrap_or(grid_default.window),
                step: file.grid_step.unwrap_or(grid_default.step),
            },
            cutoff: file.cutoff,
            model: match file.model {
                Some(ModelArg::ThreeMode) => Model::ThreeMode,
                _ => Model::Effective,
            },
            sme_dt: file.sme_dt,
            sweep_alphas: match alpha {
                Some(a) if flags.alpha.is_some() || file.sweep_alphas.is_none() && file.alpha.is_some() => vec![a],
                _ => file.sweep_alphas.clone().unwrap_or_else(|| SWEEP_ALPHAS.to_vec()),
            },
            sweep_etas: match eta {
                Some(e) if flags.eta.is_some() || file.sweep_etas.is_none() && file.eta.is_some() => vec![e],
                _ => file.sweep_etas.clone().unwrap_or_else(|| SWEEP_ETAS.to_vec()),
            },
            compare_bin_width: file.compare_bin_width.unwrap_or(DEFAULT_BIN_WIDTH),
        };
        settings.check()?;
        Ok(settings)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: String| Err(CliError::Config(format!("invalid value for `{key}`: {why}")));
        let p = &self.params;
        if !(p.alpha.is_finite() && p.alpha >= 0.0) {
            return bad("alpha", format!("{} is not a non-negative amplitude", p.alpha));
        }
        if !(p.beta.is_finite() && p.beta >= 0.0) {
            return bad("beta", format!("{} is not a non-negative amplitude", p.beta));
        }
        if !(0.0..=1.0).contains(&p.eta) {
            return bad("eta", format!("{} is outside [0, 1]", p.eta));
        }
        if self.sweep_alphas.is_empty() || self.sweep_alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("sweep_alphas", "need one or more non-negative amplitudes".into());
        }
        if self.sweep_etas.is_empty() || self.sweep_etas.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return bad("sweep_etas", "need one or more efficiencies in [0, 1]".into());
        }
        if !(self.compare_bin_width > 0.0) {
            return bad("compare_bin_width", format!("{} is not positive", self.compare_bin_width));
        }
        if self.trajectories == 0 {
            return bad("trajectories", "must be at least 1".into());
        }
        Ok(())
    }

    /// Analytic-path configuration for one sector and quadrature.
    pub fn analytic(&self, sector: Sector, quadrature: Quadrature) -> RunConfig {
        let mut c = RunConfig::analytic(self.params.clone(), sector, quadrature);
        c.grid = self.grid;
        c
    }

    /// Stochastic-path configuration (Y readout unless a quadrature is set).
    pub fn stochastic(&self) -> RunConfig {
        let mut c = RunConfig::stochastic(self.params.clone(), self.quadrature.unwrap_or(Quadrature::Y), self.trajectories);
        c.sector = self.sector.unwrap_or(Sector::Even);
        c.grid = self.grid;
        c.cutoff = self.cutoff;
        c.model = self.model;
        c.sme_dt = self.sme_dt;
        c
    }

    pub fn sectors(&self) -> Vec<Sector> {
        self.sector.map_or_else(|| vec![Sector::Even, Sector::Odd], |s| vec![s])
    }

    pub fn quadratures(&self) -> Vec<Quadrature> {
        self.quadrature.map_or_else(|| vec![Quadrature::X, Quadrature::Y], |q| vec![q])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = FileConfig::parse("alpha = 0.5\nalpah = 0.7\n").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("alpah")), "{err}");
    }

    #[test]
    fn flags_override_file_and_env() {
        let file = FileConfig::parse("alpha = 0.5\nseed = 4\nout = \"from-file\"\nquadrature = \"X\"\n").unwrap();
        let flags = Overrides { alpha: Some(0.9), ..Default::default() };
        let s = Settings::resolve(&file, &flags, Some(PathBuf::from("from-env"))).unwrap();
        assert_eq!(s.params.alpha, 0.9);
        assert_eq!(s.params.seed, 4);
        assert_eq!(s.out, PathBuf::from("from-file"));
        assert_eq!(s.quadrature, Some(Quadrature::X));
        assert_eq!(s.sweep_alphas, vec![0.9]);
        let flags = Overrides { out: Some(PathBuf::from("from-flag")), ..Default::default() };
        let s = Settings::resolve(&file, &flags, Some(PathBuf::from("from-env"))).unwrap();
        assert_eq!(s.out, PathBuf::from("from-flag"));
        let s = Settings::resolve(&FileConfig::default(), &Overrides::default(), Some(PathBuf::from("from-env"))).unwrap();
        assert_eq!(s.out, PathBuf::from("from-env"));
        let s = Settings::resolve(&FileConfig::default(), &Overrides::default(), None).unwrap();
        assert_eq!(s.out, PathBuf::from(DEFAULT_OUT_DIR));
    }

    #[test]
    fn sweep_axes_default_to_the_full_grid() {
        let s = Settings::resolve(&FileConfig::default(), &Overrides::default(), None).unwrap();
        assert_eq!(s.sweep_alphas.len() * s.sweep_etas.len(), 30);
        let file = FileConfig::parse("sweep_alphas = [0.5, 0.75]\nsweep_etas = [0.7]\n").unwrap();
        let s = Settings::resolve(&file, &Overrides::default(), None).unwrap();
        assert_eq!((s.sweep_alphas.len(), s.sweep_etas.len()), (2, 1));
    }

    #[test]
    fn bad_values_are_config_errors() {
        let file = FileConfig::parse("sweep_etas = [1.5]\n").unwrap();
        assert!(matches!(Settings::resolve(&file, &Overrides::default(), None), Err(CliError::Config(_))));
        assert!(FileConfig::parse("sector = \"sideways\"\n").is_err());
        assert!(FileConfig::parse("[section]\nalpha = 1\n").is_err());
        let flags = Overrides { eta: Some(2.0), ..Overrides::default() };
        match Settings::resolve(&FileConfig::default(), &flags, None) {
            Err(CliError::Config(msg)) => assert!(msg.contains("`eta`"), "{msg}"),
            other => panic!("expected a config error, got {:?}", other.map(|s| s.params.eta)),
        }
    }
}

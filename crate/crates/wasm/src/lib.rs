//! Browser bindings: analytic outcome planes and single stochastic
//! trajectories, for the static demo page in `www/`.

use tpe_core::dynamics::ProtocolParams;
use tpe_core::hilbert::{Quadrature, Sector};
use tpe_core::metrics::OutcomeGrid;
use tpe_core::protocol::{self, AnalyticState, GridSpec, RunConfig, StochasticSetup, TrajectoryRecord};
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn parse<T: std::str::FromStr>(text: &str) -> Result<T, JsError>
where
    T::Err: std::fmt::Display,
{
    text.parse().map_err(js)
}

/// Quasi-steady state of one parity sector (analytic path).
#[wasm_bindgen]
pub struct Simulator {
    params: ProtocolParams,
    state: AnalyticState,
}

#[wasm_bindgen]
impl Simulator {
    /// `sector` is `"even"` or `"odd"`; `truncation` is the Fock cutoff per
    /// mode (0 picks the library default).
    #[wasm_bindgen(constructor)]
    pub fn new(alpha: f64, beta: f64, sector: &str, truncation: usize) -> Result<Simulator, JsError> {
        let sector: Sector = parse(sector)?;
        let params = ProtocolParams {
            alpha,
            beta,
            truncation: (truncation > 0).then_some(truncation),
            ..ProtocolParams::default()
        };
        RunConfig::analytic(params.clone(), sector, Quadrature::X).validate().map_err(js)?;
        let state = protocol::analytic_state(&params, sector).map_err(js)?;
        Ok(Simulator { params, state })
    }

    /// Probability of the chosen parity sector before stabilization.
    #[wasm_bindgen(getter, js_name = sectorProbability)]
    pub fn sector_probability(&self) -> f64 {
        self.state.sector_probability
    }

    /// Outcome plane on the square `[-window, window]²` with spacing `step`;
    /// `quadrature` is `"X"` or `"Y"`.
    pub fn plane(&self, quadrature: &str, window: f64, step: f64) -> Result<Plane, JsError> {
        let q: Quadrature = parse(quadrature)?;
        let grid = protocol::analytic_grid(&self.state, &self.params, q, GridSpec { window, step }).map_err(js)?;
        Ok(Plane { grid })
    }
}

/// One analytic outcome plane; fields are row-major with `ξ_a` slow.
#[wasm_bindgen]
pub struct Plane {
    grid: OutcomeGrid,
}

#[wasm_bindgen]
impl Plane {
    #[wasm_bindgen(getter)]
    pub fn axis(&self) -> Vec<f64> {
        self.grid.axis_a.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn density(&self) -> Vec<f64> {
        self.grid.density.clone()
    }

    /// Bell-state overlap `F`.
    #[wasm_bindgen(getter)]
    pub fn overlap(&self) -> Vec<f64> {
        self.grid.overlap.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn concurrence(&self) -> Vec<f64> {
        self.grid.concurrence.clone()
    }

    /// Bell phase in radians; NaN where undefined.
    #[wasm_bindgen(getter)]
    pub fn phase(&self) -> Vec<f64> {
        self.grid.phase.clone()
    }

    #[wasm_bindgen(getter, js_name = totalProbability)]
    pub fn total_probability(&self) -> f64 {
        self.grid.total_probability()
    }
}

/// Heralding experiment at one `(α = β, η)` point; trajectories are drawn
/// one at a time.
#[wasm_bindgen]
pub struct Experiment {
    config: RunConfig,
    setup: StochasticSetup,
}

#[wasm_bindgen]
impl Experiment {
    #[wasm_bindgen(constructor)]
    pub fn new(alpha: f64, eta: f64, quadrature: &str, seed: u32) -> Result<Experiment, JsError> {
        let params = ProtocolParams { alpha, beta: alpha, eta, seed: seed.into(), ..ProtocolParams::default() };
        let config = RunConfig::stochastic(params, parse(quadrature)?, 1);
        config.validate().map_err(js)?;
        let setup = StochasticSetup::new(&config).map_err(js)?;
        Ok(Experiment { config, setup })
    }

    /// Mean of the filtered current on the even branch.
    #[wasm_bindgen(getter, js_name = lobeCenter)]
    pub fn lobe_center(&self) -> f64 {
        self.setup.filter.lobe_center
    }

    /// Heralding threshold on `|x_c|`.
    #[wasm_bindgen(getter)]
    pub fn cutoff(&self) -> f64 {
        self.setup.cutoff
    }

    /// Run trajectory number `index` (deterministic for a given seed).
    pub fn run(&self, index: usize) -> Trajectory {
        Trajectory { record: protocol::run_trajectory(&self.setup, &self.config, index) }
    }
}

/// Outcome of one trajectory.
#[wasm_bindgen]
pub struct Trajectory {
    record: TrajectoryRecord,
}

#[wasm_bindgen]
impl Trajectory {
    /// Matched-filter output of the parity measurement.
    #[wasm_bindgen(getter, js_name = xC)]
    pub fn x_c(&self) -> f64 {
        self.record.x_c
    }

    /// `"even"`, `"odd"` or `"ambiguous"`.
    #[wasm_bindgen(getter)]
    pub fn verdict(&self) -> String {
        self.record.verdict.sector().map_or_else(|| "ambiguous".to_string(), |s| s.name().to_string())
    }

    #[wasm_bindgen(getter)]
    pub fn heralded(&self) -> bool {
        self.record.heralded()
    }

    #[wasm_bindgen(getter, js_name = xiA)]
    pub fn xi_a(&self) -> f64 {
        self.record.outcome.as_ref().map_or(f64::NAN, |o| o.xi_a)
    }

    #[wasm_bindgen(getter, js_name = xiB)]
    pub fn xi_b(&self) -> f64 {
        self.record.outcome.as_ref().map_or(f64::NAN, |o| o.xi_b)
    }

    /// Overlap with the phase-adapted Bell state; NaN unless heralded.
    #[wasm_bindgen(getter)]
    pub fn fidelity(&self) -> f64 {
        self.record.fidelity_phase.unwrap_or(f64::NAN)
    }

    #[wasm_bindgen(getter)]
    pub fn concurrence(&self) -> f64 {
        self.record.concurrence.unwrap_or(f64::NAN)
    }

    /// Bell phase in radians; NaN where undefined.
    #[wasm_bindgen(getter)]
    pub fn phase(&self) -> f64 {
        self.record.phase.unwrap_or(f64::NAN)
    }
}

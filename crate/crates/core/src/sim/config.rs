use serde::{Deserialize, Serialize};

use crate::contingency::FaultEvent;
use crate::error::{Error, Result};
use crate::powerflow::NewtonOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Classical four-stage Runge-Kutta.
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Record every `record_stride`-th step.
    pub record_stride: usize,
    /// Mean inverter magnitude of the initial sharing point.
    pub initial_level: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_end: 10.0,
            integrator: Integrator::Rk4,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            record_stride: 1,
            initial_level: 1.01,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation("dt must be positive".into()));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::Validation("t_end must be at least dt".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Validation("record_stride must be at least 1".into()));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::Validation("Newton tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iter: self.newton_max_iter,
        }
    }

    /// Number of steps covering `t_end`.
    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSim {
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    /// Mean inverter magnitude of the initial sharing point.
    #[serde(default = "default_level")]
    pub initial_level: f64,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_level() -> f64 {
    1.01
}

/// Event list plus integration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub events: Vec<FaultEvent>,
    pub sim: ScenarioSim,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(Error::from_json)?;
        if s.events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::Validation("scenario events must be sorted by time".into()));
        }
        if s.events.iter().any(|e| !(e.time >= 0.0)) {
            return Err(Error::Validation("event times must be non-negative".into()));
        }
        s.config().validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Default configuration with the scenario's horizon, step and tolerance.
    pub fn config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            t_end: self.sim.t_end,
            newton_tol: self.sim.newton_tol,
            initial_level: self.sim.initial_level,
            ..SimConfig::default()
        }
    }
}

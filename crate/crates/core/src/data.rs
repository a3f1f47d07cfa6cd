//! Bundled cases, gains and scenarios.

use crate::certify::StabilityCertificate;
use crate::controller::GainSet;
use crate::error::Result;
use crate::netmodel::NetworkCase;
use crate::sim::Scenario;

pub const IEEE14_CASE: &str = include_str!("../data/ieee14.json");
pub const PUBLISHED_GAINS: &str = include_str!("../data/gains_published.json");
pub const LOAD_STEP_SCENARIO: &str = include_str!("../data/scenario_load_step.json");
pub const INVERTER_LOSS_SCENARIO: &str = include_str!("../data/scenario_inverter_loss.json");
pub const SYNTH_GAINS: &str = include_str!("../data/ieee14_synth.gains.json");
pub const SYNTH_CERT: &str = include_str!("../data/ieee14_synth.cert.json");

/// IEEE 14-bus network with inverters at buses 1, 2, 3, 6 and 8.
pub fn ieee14() -> NetworkCase {
    NetworkCase::parse(IEEE14_CASE).expect("bundled case is valid")
}

/// Published 14-bus feedback gains.
pub fn published_gains() -> GainSet {
    GainSet::parse(PUBLISHED_GAINS).expect("bundled gains are valid")
}

/// Synthesized 14-bus gains matching [`synthesized_certificate`].
pub fn synthesized_gains() -> GainSet {
    GainSet::parse(SYNTH_GAINS).expect("bundled gains are valid")
}

/// Stability certificate for [`synthesized_gains`] on [`ieee14`].
pub fn synthesized_certificate() -> StabilityCertificate {
    StabilityCertificate::parse(SYNTH_CERT).expect("bundled certificate is valid")
}

/// Load at bus 10 rises by 30% at t = 1 s; 60 s horizon.
pub fn load_step_scenario() -> Scenario {
    Scenario::parse(LOAD_STEP_SCENARIO).expect("bundled scenario is valid")
}

/// Inverter 1 disconnects at t = 1 s; 60 s horizon.
pub fn inverter_loss_scenario() -> Scenario {
    Scenario::parse(INVERTER_LOSS_SCENARIO).expect("bundled scenario is valid")
}

/// Parses any bundled or user case text.
pub fn case_from_str(text: &str) -> Result<NetworkCase> {
    NetworkCase::parse(text)
}

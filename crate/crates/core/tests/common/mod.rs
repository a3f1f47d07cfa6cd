#![allow(dead_code)]

use microgrid::sim::{metrics, Metrics, Trace};

/// Operating envelope checked on every 14-bus scenario run.
pub struct Envelope {
    pub f_band: f64,
    pub f_final: f64,
    pub voltage_dev: f64,
    pub angle_deg: f64,
    pub sharing_p: f64,
    pub sharing_q: f64,
}

pub const ENVELOPE: Envelope = Envelope {
    f_band: 0.3,
    f_final: 1e-3,
    voltage_dev: 0.06,
    angle_deg: 15.0,
    sharing_p: 1e-3,
    sharing_q: 1e-2,
};

/// Checks a trace against the envelope; returns the metrics or every violation.
pub fn check_envelope(trace: &Trace, f0: f64, env: &Envelope) -> Result<Metrics, String> {
    let m = metrics(trace, f0).map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    if m.max_freq_dev > env.f_band {
        bad.push(format!("max |f - f0| {:.3e} Hz", m.max_freq_dev));
    }
    if !(m.final_freq_dev <= env.f_final) {
        bad.push(format!("final |f - f0| {:.3e} Hz", m.final_freq_dev));
    }
    if m.max_voltage_dev > env.voltage_dev {
        bad.push(format!("max |E - 1| {:.4}", m.max_voltage_dev));
    }
    if m.max_angle_deg > env.angle_deg {
        bad.push(format!("max angle {:.3} deg", m.max_angle_deg));
    }
    if !(m.final_sharing_p < env.sharing_p) {
        bad.push(format!("final P sharing {:.3e}", m.final_sharing_p));
    }
    if !(m.final_sharing_q < env.sharing_q) {
        bad.push(format!("final Q sharing {:.3e}", m.final_sharing_q));
    }
    if bad.is_empty() {
        Ok(m)
    } else {
        Err(bad.join("; "))
    }
}

pub fn summary(m: &Metrics) -> String {
    format!(
        "max |f-f0| {:.2e} Hz, final {:.2e} Hz, max |E-1| {:.4}, angle {:.2} deg, sharing P {:.2e} Q {:.2e}",
        m.max_freq_dev, m.final_freq_dev, m.max_voltage_dev, m.max_angle_deg, m.final_sharing_p, m.final_sharing_q
    )
}

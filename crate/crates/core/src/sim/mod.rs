//! Fixed-step simulation of the closed loop: inverter states integrated
//! explicitly, load states re-solved from KCL at every stage.

mod config;
mod trace;

pub use config::{Integrator, Scenario, ScenarioSim, SimConfig};
pub use trace::{metrics, BusRange, Metrics, Trace, FLAG_COLUMNS, SETTLE_P, SETTLE_Q, SUMMARY_COLUMNS};

use nalgebra::DVector;

use crate::contingency::{apply_event, FaultEvent, OperatingCondition};
use crate::controller::{control_derivative, frequency_of, project_security, GainSet};
use crate::error::{Error, Result};
use crate::netmodel::{build_admittance, Admittance, NetworkCase, ShuntLoads};
use crate::powerflow::{normalized, power, sharing_point, solve_loads, NewtonOptions, VoltageProfile};

/// Inverter-state derivative at a KCL-consistent profile, after saturation
/// and voltage-bound clamping. Also returns the number of clamped entries.
pub fn derivative(
    cond: &OperatingCondition,
    y: &Admittance,
    gains: &GainSet,
    x: &VoltageProfile,
) -> Result<(DVector<f64>, usize)> {
    let (p, q) = power(y, x);
    let s = normalized(&cond.case, &p, &q);
    let mut v = control_derivative(gains, &cond.control, &s)?;
    let clamps = project_security(&cond.case, x, cond.control.active(), &mut v);
    Ok((v, clamps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub x: VoltageProfile,
    /// Newton iterations summed over every load solve of the step.
    pub newton_iters: usize,
    /// Clamped entries over every stage, plus magnitudes clipped after the step.
    pub clamps: usize,
    /// Number of times the step was halved.
    pub halvings: u32,
}

fn solve_with(
    case: &NetworkCase,
    y: &Admittance,
    guess: &VoltageProfile,
    xi: &DVector<f64>,
    opts: NewtonOptions,
    iters: &mut usize,
) -> Result<VoltageProfile> {
    let mut t = guess.clone();
    t.set_stacked(case.inverters(), xi);
    let sol = solve_loads(case, y, &t, opts)?;
    *iters += sol.iterations;
    Ok(sol.profile)
}

fn single_step(
    cond: &OperatingCondition,
    y: &Admittance,
    gains: &GainSet,
    x: &VoltageProfile,
    dt: f64,
    config: &SimConfig,
) -> Result<StepResult> {
    let case = &cond.case;
    let opts = config.newton();
    let xi = x.stacked(case.inverters());
    let mut iters = 0;
    let (k1, mut clamps) = derivative(cond, y, gains, x)?;
    let mut next = match config.integrator {
        Integrator::Euler => &xi + &k1 * dt,
        Integrator::Rk4 => {
            let x2 = solve_with(case, y, x, &(&xi + &k1 * (dt / 2.0)), opts, &mut iters)?;
            let (k2, c2) = derivative(cond, y, gains, &x2)?;
            let x3 = solve_with(case, y, &x2, &(&xi + &k2 * (dt / 2.0)), opts, &mut iters)?;
            let (k3, c3) = derivative(cond, y, gains, &x3)?;
            let x4 = solve_with(case, y, &x3, &(&xi + &k3 * dt), opts, &mut iters)?;
            let (k4, c4) = derivative(cond, y, gains, &x4)?;
            clamps += c2 + c3 + c4;
            &xi + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    };
    for (k, i) in case.inverters().enumerate() {
        let b = &case.buses[i];
        let e = next[2 * k + 1];
        if e > b.e_max || e < b.e_min {
            next[2 * k + 1] = e.clamp(b.e_min, b.e_max);
            clamps += 1;
        }
    }
    let out = solve_with(case, y, x, &next, opts, &mut iters)?;
    Ok(StepResult {
        x: out,
        newton_iters: iters,
        clamps,
        halvings: 0,
    })
}

fn is_newton_failure(e: &Error) -> bool {
    matches!(e, Error::NewtonDiverged { .. } | Error::SingularJacobian { .. })
}

/// Advances a KCL-consistent profile by `dt`. A failed load solve halves the
/// step, up to four times, before giving up.
pub fn step(
    cond: &OperatingCondition,
    y: &Admittance,
    gains: &GainSet,
    x: &VoltageProfile,
    dt: f64,
    config: &SimConfig,
) -> Result<StepResult> {
    let mut last = None;
    for halvings in 0..=4u32 {
        let parts = 1usize << halvings;
        let h = dt / parts as f64;
        let mut cur = x.clone();
        let (mut iters, mut clamps) = (0, 0);
        let mut failed = None;
        for _ in 0..parts {
            match single_step(cond, y, gains, &cur, h, config) {
                Ok(r) => {
                    cur = r.x;
                    iters += r.newton_iters;
                    clamps += r.clamps;
                }
                Err(e) if is_newton_failure(&e) => {
                    failed = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        match failed {
            None => {
                return Ok(StepResult {
                    x: cur,
                    newton_iters: iters,
                    clamps,
                    halvings,
                })
            }
            Some(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Starting profile: the sharing point at the configured mean magnitude when
/// Newton finds one inside the voltage box, otherwise a flat start with the
/// loads solved.
pub fn initial_state(case: &NetworkCase, y: &Admittance, config: &SimConfig) -> Result<VoltageProfile> {
    let flat = VoltageProfile::flat(case.n());
    if case.n_inverters() > 0 {
        if let Ok(sp) = sharing_point(case, y, config.initial_level, &flat, config.newton()) {
            if sp.profile.in_voltage_box(case) {
                return Ok(sp.profile);
            }
        }
    }
    Ok(solve_loads(case, y, &flat, config.newton())?.profile)
}

/// Carries a profile across a reclassification by bus id.
fn remap(from: &NetworkCase, x: &VoltageProfile, to: &NetworkCase) -> VoltageProfile {
    let mut out = VoltageProfile::flat(to.n());
    for (i, b) in from.buses.iter().enumerate() {
        let j = to.index_of(b.id).expect("reclassification keeps every bus");
        out.theta[j] = x.theta[i];
        out.e[j] = x.e[i];
    }
    out
}

/// Runs the scenario from the default initial state.
pub fn run_scenario(case: &NetworkCase, gains: &GainSet, events: &[FaultEvent], config: &SimConfig) -> Result<Trace> {
    let y = build_admittance(case, ShuntLoads::Exclude)?;
    let x0 = initial_state(case, &y, config)?;
    run_scenario_from(case, gains, events, config, &x0)
}

/// Runs the scenario from `x0`; its load entries are re-solved first. Events
/// fire at the step nearest their time, before that step is integrated.
pub fn run_scenario_from(
    case: &NetworkCase,
    gains: &GainSet,
    events: &[FaultEvent],
    config: &SimConfig,
    x0: &VoltageProfile,
) -> Result<Trace> {
    config.validate()?;
    if events.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::Validation("events must be sorted by time".into()));
    }
    if x0.n() != case.n() {
        return Err(Error::Dimension("initial profile does not match the case".into()));
    }
    gains.check_covers(case)?;
    let dt = config.dt;
    let omega0 = case.omega0();
    let gamma = case.gamma();
    let bus_ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
    let inv_ids: Vec<u32> = case.inverters().map(|i| case.buses[i].id).collect();
    let columns = Trace::header(&bus_ids, &inv_ids);

    let mut cond = OperatingCondition::initial(case);
    let mut y = build_admittance(&cond.case, ShuntLoads::Exclude)?;
    let mut x = solve_loads(&cond.case, &y, x0, config.newton())
        .map_err(|e| Error::Step {
            time: 0.0,
            source: Box::new(e),
        })?
        .profile;

    let n_steps = config.steps();
    let mut next_event = 0;
    let mut rows = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let (mut step_iters, mut step_clamps) = (0usize, 0usize);
    for k in 0..=n_steps {
        let t = k as f64 * dt;
        let mut fired = false;
        while next_event < events.len() && (events[next_event].time / dt).round() as u64 <= k {
            let (c, _) = apply_event(&cond, &events[next_event])?;
            let carried = remap(&cond.case, &x, &c.case);
            cond = c;
            y = build_admittance(&cond.case, ShuntLoads::Exclude)?;
            let sol = solve_loads(&cond.case, &y, &carried, config.newton()).map_err(|e| Error::Step {
                time: t,
                source: Box::new(e),
            })?;
            step_iters += sol.iterations;
            x = sol.profile;
            next_event += 1;
            fired = true;
        }
        let case_now = &cond.case;
        let (v, clamps) = derivative(&cond, &y, gains, &x)?;

        // state by original bus order
        let mut theta = vec![0.0; bus_ids.len()];
        let mut mag = vec![0.0; bus_ids.len()];
        for (k2, id) in bus_ids.iter().enumerate() {
            let i = case_now.index_of(*id).expect("bus survives reclassification");
            theta[k2] = x.theta[i];
            mag[k2] = x.e[i];
        }
        let (mut di, mut dl) = (0.0, 0.0);
        if let Some((pt, pe)) = &prev {
            for (k2, id) in bus_ids.iter().enumerate() {
                let i = case_now.index_of(*id).expect("bus survives reclassification");
                let d = ((theta[k2] - pt[k2]) / dt).powi(2) + ((mag[k2] - pe[k2]) / dt).powi(2);
                if i < case_now.n_inverters() {
                    di += d;
                } else {
                    dl += d;
                }
            }
        }
        let record = k % config.record_stride as u64 == 0;
        if record {
            let (p, q) = power(&y, &x);
            let s = normalized(case_now, &p, &q);
            let n_act = case_now.n_inverters();
            let spread = |off: usize| {
                let vals = (0..n_act).map(|a| s[2 * a + off]);
                let hi = vals.clone().fold(f64::NEG_INFINITY, f64::max);
                let lo = vals.fold(f64::INFINITY, f64::min);
                if n_act > 0 {
                    hi - lo
                } else {
                    0.0
                }
            };
            let mut row = Vec::with_capacity(columns.len());
            row.push(t);
            row.extend(&theta);
            row.extend(&mag);
            let inv_idx: Vec<usize> = inv_ids.iter().map(|id| case_now.index_of(*id).unwrap()).collect();
            row.extend(inv_idx.iter().map(|&i| p[i]));
            row.extend(inv_idx.iter().map(|&i| q[i]));
            row.extend(inv_idx.iter().map(|&i| {
                if i < n_act {
                    frequency_of(v[2 * i], omega0)
                } else {
                    f64::NAN
                }
            }));
            let angle = x.max_branch_angle(case_now);
            row.extend([angle.to_degrees(), spread(0), spread(1), di.sqrt(), dl.sqrt()]);
            row.extend([
                (clamps + step_clamps) as f64,
                f64::from(u8::from(angle > gamma + 1e-12)),
                step_iters as f64,
                f64::from(u8::from(fired)),
                f64::from(u8::from(cond.certified())),
            ]);
            rows.push(row);
        }
        prev = Some((theta, mag));
        if k == n_steps {
            break;
        }
        let r = step(&cond, &y, gains, &x, dt, config).map_err(|e| Error::Step {
            time: t,
            source: Box::new(e),
        })?;
        x = r.x;
        step_iters = r.newton_iters;
        step_clamps = r.clamps;
    }
    Ok(Trace { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::RateLimits;
    use nalgebra::Matrix2;
    use std::collections::BTreeMap;

    fn pair_gains() -> GainSet {
        let k = Matrix2::new(-0.05, 0.0, 0.0, -0.02);
        GainSet::new(BTreeMap::from([(1, k), (2, k)]), RateLimits::default()).unwrap()
    }

    #[test]
    fn sharing_point_is_held() {
        let case = crate::testnets::triangle_constant_power();
        let cfg = SimConfig {
            t_end: 0.05,
            ..SimConfig::default()
        };
        let tr = run_scenario(&case, &pair_gains(), &[], &cfg).unwrap();
        let first = &tr.rows[0];
        for row in &tr.rows {
            for (k, (a, b)) in row[1..].iter().zip(&first[1..]).enumerate() {
                assert!((a - b).abs() < 1e-9 || (a.is_nan() && b.is_nan()), "{}: {a} vs {b}", tr.columns[k + 1]);
            }
        }
    }

    #[test]
    fn rows_follow_the_stride() {
        let case = crate::testnets::triangle_constant_power();
        let cfg = SimConfig {
            t_end: 0.1,
            record_stride: 10,
            ..SimConfig::default()
        };
        let tr = run_scenario(&case, &pair_gains(), &[], &cfg).unwrap();
        assert_eq!(tr.rows.len(), 11);
        assert!((tr.rows[3][0] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn unsorted_events_are_rejected() {
        use crate::contingency::FaultKind;
        let case = crate::testnets::triangle_constant_power();
        let ev = |t| FaultEvent {
            time: t,
            kind: FaultKind::LoadStep { bus: 3, dp: 0.01, dq: 0.0 },
        };
        let r = run_scenario(&case, &pair_gains(), &[ev(0.2), ev(0.1)], &SimConfig::default());
        assert!(matches!(r, Err(Error::Validation(_))));
    }
}

//! Small reference networks for examples and tests.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netmodel::{Bus, BusKind, CaseParams, Line, LoadModel, NetworkCase};
use crate::powerflow::VoltageProfile;

const PARAMS: CaseParams = CaseParams {
    gamma_deg: 15.0,
    f0_hz: 50.0,
    base_mva: 1.0,
    base_kv: 1.0,
};

fn inverter(id: u32, p_star: f64, q_star: f64) -> Bus {
    Bus {
        id,
        kind: BusKind::Inverter {
            p_star,
            q_star,
            capacity: None,
        },
        e_min: 0.94,
        e_max: 1.06,
    }
}

fn load(id: u32, model: LoadModel) -> Bus {
    Bus {
        id,
        kind: BusKind::Load(model),
        e_min: 0.94,
        e_max: 1.06,
    }
}

fn line(from: usize, to: usize, r: f64, x: f64) -> Line {
    Line {
        from,
        to,
        r,
        x,
        b_sh: 0.0,
        i_max: 1.0,
    }
}

fn build(name: &str, buses: Vec<Bus>, lines: Vec<Line>, comm: Vec<(usize, usize)>) -> NetworkCase {
    NetworkCase::from_parts(name.into(), buses, lines, comm, PARAMS).expect("reference network is valid")
}

/// One inverter and one empty load bus joined by a reactance `x`.
pub fn two_bus_inductive(x: f64) -> NetworkCase {
    build(
        "two-bus",
        vec![
            inverter(1, 1.0, 1.0),
            load(2, LoadModel::ConstantPower { p: 0.0, q: 0.0 }),
        ],
        vec![line(0, 1, 0.0, x)],
        vec![],
    )
}

/// A lone inverter bus.
pub fn single_inverter() -> NetworkCase {
    build("single", vec![inverter(1, 1.0, 1.0)], vec![], vec![])
}

/// Two inverters feeding an unloaded bus over reactances.
pub fn zero_load_path() -> NetworkCase {
    build(
        "zero-load",
        vec![
            inverter(1, 1.0, 1.0),
            inverter(2, 1.0, 1.0),
            load(3, LoadModel::ConstantPower { p: 0.0, q: 0.0 }),
        ],
        vec![line(0, 2, 0.0, 0.2), line(1, 2, 0.0, 0.3)],
        vec![(0, 1)],
    )
}

/// Two inverters and one load on a lossy triangle, with the given demand.
pub fn triangle_with_demand(p: f64, q: f64) -> NetworkCase {
    build(
        "triangle",
        vec![
            inverter(1, 1.0, 0.5),
            inverter(2, 0.6, 0.3),
            load(3, LoadModel::ConstantPower { p, q }),
        ],
        vec![line(0, 1, 0.08, 0.2), line(0, 2, 0.1, 0.25), line(1, 2, 0.12, 0.3)],
        vec![(0, 1)],
    )
}

/// [`triangle_with_demand`] with a moderate constant-power load.
pub fn triangle_constant_power() -> NetworkCase {
    triangle_with_demand(0.6, 0.2)
}

/// [`triangle_constant_power`] with the load as the equivalent impedance.
pub fn triangle_constant_impedance() -> NetworkCase {
    triangle_constant_power().with_impedance_loads()
}

/// Same buses as the triangle, as a path inverter-inverter-load.
pub fn three_bus_path() -> NetworkCase {
    build(
        "path",
        vec![
            inverter(1, 1.0, 0.5),
            inverter(2, 0.6, 0.3),
            load(3, LoadModel::ConstantPower { p: 0.6, q: 0.2 }),
        ],
        vec![line(0, 1, 0.08, 0.2), line(1, 2, 0.1, 0.25)],
        vec![(0, 1)],
    )
}

/// Four buses on a square with one diagonal, all lines purely reactive.
pub fn lossless_mesh() -> NetworkCase {
    build(
        "lossless-mesh",
        vec![
            inverter(1, 1.0, 1.0),
            inverter(2, 1.0, 1.0),
            load(3, LoadModel::ConstantPower { p: 0.3, q: 0.1 }),
            load(4, LoadModel::ConstantImpedance { g: 0.2, b: 0.1 }),
        ],
        vec![
            line(0, 1, 0.0, 0.2),
            line(1, 2, 0.0, 0.3),
            line(2, 3, 0.0, 0.25),
            line(3, 0, 0.0, 0.15),
            line(0, 2, 0.0, 0.4),
        ],
        vec![(0, 1)],
    )
}

/// Three inverters in a row sharing one load bus at the end.
pub fn three_inverter_feeder() -> NetworkCase {
    build(
        "feeder",
        vec![
            inverter(1, 1.0, 0.5),
            inverter(2, 0.8, 0.4),
            inverter(3, 0.5, 0.3),
            load(4, LoadModel::ConstantImpedance { g: 0.9, b: 0.3 }),
        ],
        vec![line(0, 3, 0.06, 0.15), line(1, 3, 0.08, 0.2), line(2, 3, 0.07, 0.18)],
        vec![(0, 1), (1, 2)],
    )
}

/// Random profile inside the security set: magnitudes uniform in each box and
/// angles uniform in `[-γ/2, γ/2]`, so every branch difference stays within `γ`.
pub fn random_secure_profile(case: &NetworkCase, seed: u64) -> VoltageProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 * case.gamma();
    let theta = DVector::from_fn(case.n(), |_, _| rng.random_range(-half..=half));
    let e = DVector::from_iterator(
        case.n(),
        case.buses.iter().map(|b| rng.random_range(b.e_min..=b.e_max)),
    );
    VoltageProfile { theta, e }
}

use nalgebra::{Complex, DMatrix};

use super::{BusKind, LoadModel, NetworkCase};
use crate::error::{Error, Result};

/// Whether constant-impedance loads are folded into the admittance diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShuntLoads {
    /// Loads stay on the KCL side of the load-bus equations.
    #[default]
    Exclude,
    /// Constant-impedance loads become network shunts `g - jb`.
    Include,
}

/// Dense bus admittance matrix in rectangular and polar form.
#[derive(Debug, Clone, PartialEq)]
pub struct Admittance {
    pub y: DMatrix<Complex<f64>>,
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// How constant-impedance loads were treated during assembly.
    pub shunt_loads: ShuntLoads,
}

impl Admittance {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.y[(i, j)].norm()
    }

    pub fn angle(&self, i: usize, j: usize) -> f64 {
        self.y[(i, j)].arg()
    }

    fn from_complex(y: DMatrix<Complex<f64>>, shunt_loads: ShuntLoads) -> Self {
        let g = y.map(|c| c.re);
        let b = y.map(|c| c.im);
        Admittance { y, g, b, shunt_loads }
    }

    /// Demand drawn by a load bus outside the network model at magnitude `e`,
    /// with its derivative in `e`.
    pub fn external_demand(&self, model: &LoadModel, e: f64) -> ((f64, f64), (f64, f64)) {
        match (self.shunt_loads, model) {
            (ShuntLoads::Include, LoadModel::ConstantImpedance { .. }) => ((0.0, 0.0), (0.0, 0.0)),
            _ => (model.demand(e), model.demand_de(e)),
        }
    }
}

pub fn build_admittance(case: &NetworkCase, shunts: ShuntLoads) -> Result<Admittance> {
    let n = case.n();
    let mut y = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for l in &case.lines {
        let z = Complex::new(l.r, l.x);
        if z.norm_sqr() == 0.0 {
            return Err(Error::SingularImpedance {
                from: case.buses[l.from].id,
                to: case.buses[l.to].id,
            });
        }
        let ys = z.inv();
        let half = Complex::new(0.0, 0.5 * l.b_sh);
        y[(l.from, l.from)] += ys + half;
        y[(l.to, l.to)] += ys + half;
        y[(l.from, l.to)] -= ys;
        y[(l.to, l.from)] -= ys;
    }
    if shunts == ShuntLoads::Include {
        for (i, bus) in case.buses.iter().enumerate() {
            if let BusKind::Load(LoadModel::ConstantImpedance { g, b }) = bus.kind {
                y[(i, i)] += Complex::new(g, -b);
            }
        }
    }
    Ok(Admittance::from_complex(y, shunts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Bus, CaseParams, Line};

    fn two_bus(b_sh: f64) -> NetworkCase {
        let bus = |id, kind| Bus {
            id,
            kind,
            e_min: 0.9,
            e_max: 1.1,
        };
        NetworkCase::from_parts(
            String::new(),
            vec![
                bus(0, BusKind::Inverter { p_star: 1.0, q_star: 1.0, capacity: None }),
                bus(1, BusKind::Load(LoadModel::ConstantImpedance { g: 0.2, b: 0.1 })),
            ],
            vec![Line {
                from: 0,
                to: 1,
                r: 0.0,
                x: 1.0,
                b_sh,
                i_max: 1.0,
            }],
            vec![],
            CaseParams {
                gamma_deg: 15.0,
                f0_hz: 50.0,
                base_mva: 1.0,
                base_kv: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn inductive_line() {
        let y = build_admittance(&two_bus(0.0), ShuntLoads::Exclude).unwrap();
        let j = Complex::new(0.0, 1.0);
        assert_eq!(y.y[(0, 0)], -j);
        assert_eq!(y.y[(0, 1)], j);
        assert_eq!(y.y[(1, 0)], j);
        assert_eq!(y.y[(1, 1)], -j);
        assert!((y.magnitude(0, 0) - 1.0).abs() < 1e-15);
        assert!((y.angle(0, 0) + std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn line_charging_splits_between_ends() {
        let y = build_admittance(&two_bus(0.1), ShuntLoads::Exclude).unwrap();
        assert!((y.y[(0, 0)] - Complex::new(0.0, -1.0 + 0.05)).norm() < 1e-15);
        assert!((y.y[(1, 1)] - Complex::new(0.0, -1.0 + 0.05)).norm() < 1e-15);
    }

    #[test]
    fn impedance_loads_fold_in_on_request() {
        let y = build_admittance(&two_bus(0.0), ShuntLoads::Include).unwrap();
        assert!((y.y[(1, 1)] - Complex::new(0.2, -1.0 - 0.1)).norm() < 1e-15);
        assert_eq!(y.y[(0, 0)], Complex::new(0.0, -1.0));
    }
}

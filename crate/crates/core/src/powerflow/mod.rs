//! AC injections, their Jacobians, the algebraic load-bus solve and related bounds.
//!
//! State vectors are interleaved per bus: `[θ_0, E_0, θ_1, E_1, ...]`, and
//! injection vectors likewise `[P_0, Q_0, P_1, Q_1, ...]`.

mod equilibrium;
mod existence;
mod kappa;
mod loads;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::netmodel::{Admittance, NetworkCase};

pub use equilibrium::{sharing_point, SharingPoint};
pub use existence::{check_existence, Condition, ExistenceReport, InjectionRanges, Verdict};
pub use kappa::{kappa_bound, load_sensitivity, KappaReport};
pub use loads::{load_residual, solve_loads, LoadSolution, NewtonOptions};

/// Phase angle and magnitude at every bus, in case bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageProfile {
    pub theta: DVector<f64>,
    pub e: DVector<f64>,
}

impl VoltageProfile {
    /// `θ = 0`, `E = 1` everywhere.
    pub fn flat(n: usize) -> Self {
        VoltageProfile {
            theta: DVector::zeros(n),
            e: DVector::from_element(n, 1.0),
        }
    }

    pub fn new(theta: DVector<f64>, e: DVector<f64>) -> Result<Self> {
        if theta.len() != e.len() {
            return Err(Error::Dimension(format!("{} angles vs {} magnitudes", theta.len(), e.len())));
        }
        if e.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Validation("voltage magnitudes must be positive".into()));
        }
        Ok(VoltageProfile { theta, e })
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    /// Interleaved `(θ, E)` entries of the buses in `range`.
    pub fn stacked(&self, range: std::ops::Range<usize>) -> DVector<f64> {
        let mut out = DVector::zeros(2 * range.len());
        for (k, i) in range.enumerate() {
            out[2 * k] = self.theta[i];
            out[2 * k + 1] = self.e[i];
        }
        out
    }

    /// Overwrites the buses of `range` from an interleaved vector.
    pub fn set_stacked(&mut self, range: std::ops::Range<usize>, v: &DVector<f64>) {
        for (k, i) in range.enumerate() {
            self.theta[i] = v[2 * k];
            self.e[i] = v[2 * k + 1];
        }
    }

    pub fn in_voltage_box(&self, case: &NetworkCase) -> bool {
        case.buses
            .iter()
            .zip(self.e.iter())
            .all(|(b, &e)| e >= b.e_min && e <= b.e_max)
    }

    /// Largest `|θ_i − θ_j|` over the lines of the case (0 without lines).
    pub fn max_branch_angle(&self, case: &NetworkCase) -> f64 {
        case.lines
            .iter()
            .map(|l| (self.theta[l.from] - self.theta[l.to]).abs())
            .fold(0.0, f64::max)
    }

    pub fn in_angle_set(&self, case: &NetworkCase) -> bool {
        self.max_branch_angle(case) <= case.gamma()
    }

    /// Membership in the security set: voltage box and branch-angle bound.
    pub fn is_secure(&self, case: &NetworkCase) -> bool {
        self.in_voltage_box(case) && self.in_angle_set(case)
    }
}

/// Bus injections and the normalized inverter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    /// `[P_i/P*_i, Q_i/Q*_i]` stacked over inverter buses.
    pub s_i: DVector<f64>,
}

/// Normalized Jacobians of the inverter injections.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianPair {
    /// `∂S_I/∂x_I`, `2n_I × 2n_I`.
    pub j_i: DMatrix<f64>,
    /// `∂S_I/∂x_L`, `2n_I × 2n_L`.
    pub j_l: DMatrix<f64>,
}

/// Active and reactive injections at every bus.
pub fn power(y: &Admittance, x: &VoltageProfile) -> (DVector<f64>, DVector<f64>) {
    let n = y.n();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for i in 0..n {
        let (mut pi, mut qi) = (0.0, 0.0);
        for j in 0..n {
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let (s, c) = (x.theta[i] - x.theta[j]).sin_cos();
            pi += x.e[j] * (g * c + b * s);
            qi += x.e[j] * (g * s - b * c);
        }
        p[i] = x.e[i] * pi;
        q[i] = x.e[i] * qi;
    }
    (p, q)
}

pub fn normalized(case: &NetworkCase, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
    let n_i = case.n_inverters();
    let mut s = DVector::zeros(2 * n_i);
    for i in 0..n_i {
        s[2 * i] = p[i] / case.p_star(i).expect("inverter bus");
        s[2 * i + 1] = q[i] / case.q_star(i).expect("inverter bus");
    }
    s
}

pub fn injections(case: &NetworkCase, y: &Admittance, x: &VoltageProfile) -> Result<Injections> {
    if y.n() != case.n() || x.n() != case.n() {
        return Err(Error::Dimension(format!(
            "case has {} buses, admittance {}, profile {}",
            case.n(),
            y.n(),
            x.n()
        )));
    }
    let (p, q) = power(y, x);
    let s_i = normalized(case, &p, &q);
    Ok(Injections { p, q, s_i })
}

/// Jacobian of the interleaved `(P, Q)` vector with respect to the interleaved
/// `(θ, E)` state, over all buses.
pub fn power_jacobian(y: &Admittance, x: &VoltageProfile) -> DMatrix<f64> {
    let n = y.n();
    let (p, q) = power(y, x);
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let ei = x.e[i];
        for j in 0..n {
            if j == i {
                continue;
            }
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let (s, c) = (x.theta[i] - x.theta[j]).sin_cos();
            let along = g * c + b * s;
            let across = g * s - b * c;
            let ej = x.e[j];
            jac[(2 * i, 2 * j)] = ei * ej * across;
            jac[(2 * i, 2 * j + 1)] = ei * along;
            jac[(2 * i + 1, 2 * j)] = -ei * ej * along;
            jac[(2 * i + 1, 2 * j + 1)] = ei * across;
        }
        let (gii, bii) = (y.g[(i, i)], y.b[(i, i)]);
        jac[(2 * i, 2 * i)] = -q[i] - bii * ei * ei;
        jac[(2 * i, 2 * i + 1)] = p[i] / ei + gii * ei;
        jac[(2 * i + 1, 2 * i)] = p[i] - gii * ei * ei;
        jac[(2 * i + 1, 2 * i + 1)] = q[i] / ei - bii * ei;
    }
    jac
}

/// Splits the inverter rows of a full power Jacobian into the normalized pair.
pub fn normalize_jacobian(case: &NetworkCase, full: &DMatrix<f64>) -> JacobianPair {
    let n_i = case.n_inverters();
    let n_l = case.n_loads();
    let mut rows = full.rows(0, 2 * n_i).into_owned();
    for i in 0..n_i {
        let (ps, qs) = (case.p_star(i).unwrap(), case.q_star(i).unwrap());
        rows.row_mut(2 * i).scale_mut(1.0 / ps);
        rows.row_mut(2 * i + 1).scale_mut(1.0 / qs);
    }
    JacobianPair {
        j_i: rows.columns(0, 2 * n_i).into_owned(),
        j_l: rows.columns(2 * n_i, 2 * n_l).into_owned(),
    }
}

pub fn jacobians(case: &NetworkCase, y: &Admittance, x: &VoltageProfile) -> Result<JacobianPair> {
    if y.n() != case.n() || x.n() != case.n() {
        return Err(Error::Dimension("profile or admittance does not match the case".into()));
    }
    Ok(normalize_jacobian(case, &power_jacobian(y, x)))
}

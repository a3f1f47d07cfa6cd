//! Operating point with exact proportional sharing.

use nalgebra::{DMatrix, DVector};

use super::loads::{load_residual, load_residual_jacobian, NewtonOptions};
use super::{normalized, power, power_jacobian, VoltageProfile};
use crate::error::{Error, Result};
use crate::netmodel::{Admittance, NetworkCase};

#[derive(Debug, Clone, PartialEq)]
pub struct SharingPoint {
    pub profile: VoltageProfile,
    /// Common `P_i/P*_i`.
    pub ratio_p: f64,
    /// Common `Q_i/Q*_i`.
    pub ratio_q: f64,
    pub iterations: usize,
}

fn residual(case: &NetworkCase, y: &Admittance, x: &VoltageProfile, level: f64) -> DVector<f64> {
    let n_i = case.n_inverters();
    let n_l = case.n_loads();
    let mut r = DVector::zeros(2 * n_l + 2 * n_i - 1);
    r.rows_mut(0, 2 * n_l).copy_from(&load_residual(case, y, x));
    let (p, q) = power(y, x);
    let s = normalized(case, &p, &q);
    for i in 1..n_i {
        r[2 * n_l + 2 * (i - 1)] = s[2 * i] - s[0];
        r[2 * n_l + 2 * (i - 1) + 1] = s[2 * i + 1] - s[1];
    }
    let mean = case.inverters().map(|i| x.e[i]).sum::<f64>() / n_i as f64;
    r[2 * n_l + 2 * n_i - 2] = mean - level;
    r
}

fn jacobian(case: &NetworkCase, y: &Admittance, x: &VoltageProfile) -> DMatrix<f64> {
    let n = case.n();
    let n_i = case.n_inverters();
    let n_l = case.n_loads();
    let mut full = DMatrix::zeros(2 * n_l + 2 * n_i - 1, 2 * n);
    full.rows_mut(0, 2 * n_l).copy_from(&load_residual_jacobian(case, y, x));
    let pj = power_jacobian(y, x);
    let row = |k: usize, scale: f64| pj.row(k) / scale;
    let (p0, q0) = (case.p_star(0).unwrap(), case.q_star(0).unwrap());
    for i in 1..n_i {
        let (pi, qi) = (case.p_star(i).unwrap(), case.q_star(i).unwrap());
        full.row_mut(2 * n_l + 2 * (i - 1)).copy_from(&(row(2 * i, pi) - row(0, p0)));
        full.row_mut(2 * n_l + 2 * (i - 1) + 1).copy_from(&(row(2 * i + 1, qi) - row(1, q0)));
    }
    for i in 0..n_i {
        full[(2 * n_l + 2 * n_i - 2, 2 * i + 1)] = 1.0 / n_i as f64;
    }
    full.columns(1, 2 * n - 1).into_owned()
}

fn state(x: &VoltageProfile) -> DVector<f64> {
    let full = x.stacked(0..x.n());
    full.rows(1, full.len() - 1).into_owned()
}

fn set_state(x: &mut VoltageProfile, u: &DVector<f64>) {
    let mut full = DVector::zeros(u.len() + 1);
    full[0] = x.theta[0];
    full.rows_mut(1, u.len()).copy_from(u);
    x.set_stacked(0..x.n(), &full);
}

/// Solves for a profile where every inverter carries the same normalized
/// injection, loads satisfy KCL and the mean inverter magnitude equals `level`.
///
/// The angle of the first inverter is held at its value in `start`.
pub fn sharing_point(
    case: &NetworkCase,
    y: &Admittance,
    level: f64,
    start: &VoltageProfile,
    opts: NewtonOptions,
) -> Result<SharingPoint> {
    if case.n_inverters() == 0 {
        return Err(Error::Validation("sharing point needs at least one inverter".into()));
    }
    if start.n() != case.n() || y.n() != case.n() {
        return Err(Error::Dimension("profile or admittance does not match the case".into()));
    }
    let mut x = start.clone();
    let mut r = residual(case, y, &x, level);
    let mut norm = r.amax();
    let mut iterations = 0;
    while norm > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NewtonDiverged {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let jac = jacobian(case, y, &x);
        let Some(step) = jac.clone().lu().solve(&r) else {
            let sv = jac.singular_values();
            return Err(Error::SingularJacobian {
                condition: sv.max() / sv.min(),
            });
        };
        let base = state(&x);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = x.clone();
            set_state(&mut trial, &(&base - alpha * &step));
            if trial.e.iter().all(|&e| e > 0.0) {
                let rt = residual(case, y, &trial, level);
                if rt.amax() < norm {
                    x = trial;
                    r = rt;
                    norm = r.amax();
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDiverged {
                iterations,
                residual: norm,
            });
        }
    }
    let (p, q) = power(y, &x);
    let s = normalized(case, &p, &q);
    Ok(SharingPoint {
        profile: x,
        ratio_p: s[0],
        ratio_q: s[1],
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_admittance, ShuntLoads};
    use crate::testnets;

    #[test]
    fn triangle_shares_exactly() {
        let case = testnets::triangle_constant_power();
        let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let sp = sharing_point(&case, &y, 1.0, &VoltageProfile::flat(case.n()), NewtonOptions::default()).unwrap();
        let (p, q) = power(&y, &sp.profile);
        let s = normalized(&case, &p, &q);
        assert!((s[0] - s[2]).abs() < 1e-10);
        assert!((s[1] - s[3]).abs() < 1e-10);
        assert!((sp.profile.e[0] + sp.profile.e[1] - 2.0).abs() < 1e-10);
        assert!(load_residual(&case, &y, &sp.profile).amax() < 1e-10);
    }
}

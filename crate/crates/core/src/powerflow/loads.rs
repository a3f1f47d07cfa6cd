use nalgebra::{DMatrix, DVector};

use super::{power, power_jacobian, VoltageProfile};
use crate::error::{Error, Result};
use crate::netmodel::{Admittance, NetworkCase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Infinity-norm residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadSolution {
    /// Full profile: inverter entries as given, load entries solved.
    pub profile: VoltageProfile,
    pub iterations: usize,
    pub residual: f64,
}

/// KCL residual at load buses, interleaved `[P_i + P_d, Q_i + Q_d]`.
pub fn load_residual(case: &NetworkCase, y: &Admittance, x: &VoltageProfile) -> DVector<f64> {
    let (p, q) = power(y, x);
    let mut r = DVector::zeros(2 * case.n_loads());
    for (k, i) in case.loads().enumerate() {
        let model = case.buses[i].load_model().expect("load bus");
        let ((pd, qd), _) = y.external_demand(&model, x.e[i]);
        r[2 * k] = p[i] + pd;
        r[2 * k + 1] = q[i] + qd;
    }
    r
}

/// Jacobian of [`load_residual`] with respect to the full interleaved state.
pub(crate) fn load_residual_jacobian(case: &NetworkCase, y: &Admittance, x: &VoltageProfile) -> DMatrix<f64> {
    let full = power_jacobian(y, x);
    let n_i = case.n_inverters();
    let mut out = full.rows(2 * n_i, 2 * case.n_loads()).into_owned();
    for (k, i) in case.loads().enumerate() {
        let model = case.buses[i].load_model().expect("load bus");
        let (_, (dp, dq)) = y.external_demand(&model, x.e[i]);
        out[(2 * k, 2 * i + 1)] += dp;
        out[(2 * k + 1, 2 * i + 1)] += dq;
    }
    out
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Newton solve of the load-bus KCL equations with the inverter states held fixed.
///
/// The load entries of `x` are the starting guess.
pub fn solve_loads(case: &NetworkCase, y: &Admittance, x: &VoltageProfile, opts: NewtonOptions) -> Result<LoadSolution> {
    if y.n() != case.n() || x.n() != case.n() {
        return Err(Error::Dimension("profile or admittance does not match the case".into()));
    }
    if x.theta.iter().chain(x.e.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("load-bus guess is not finite".into()));
    }
    let n_i = case.n_inverters();
    let n_l = case.n_loads();
    let mut cur = x.clone();
    if n_l == 0 {
        return Ok(LoadSolution {
            profile: cur,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = load_residual(case, y, &cur);
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
        let jac = load_residual_jacobian(case, y, &cur);
        let jl = jac.columns(2 * n_i, 2 * n_l).into_owned();
        let step = match jl.clone().lu().solve(&r) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                return Err(Error::SingularJacobian {
                    condition: condition_estimate(&jl),
                })
            }
        };
        let base = cur.stacked(case.loads());
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = cur.clone();
            trial.set_stacked(case.loads(), &(&base - alpha * &step));
            if trial.e.iter().all(|&e| e > 0.0) {
                let rt = load_residual(case, y, &trial);
                let nt = rt.amax();
                if nt < norm || nt <= opts.tol {
                    cur = trial;
                    r = rt;
                    norm = nt;
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
    Ok(LoadSolution {
        profile: cur,
        iterations,
        residual: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_admittance, ShuntLoads};
    use crate::powerflow::injections;
    use crate::testnets;

    #[test]
    fn zero_load_stays_flat() {
        let case = testnets::zero_load_path();
        let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let mut guess = VoltageProfile::flat(case.n());
        guess.theta[2] = 0.1;
        guess.e[2] = 0.95;
        let sol = solve_loads(&case, &y, &guess, NewtonOptions::default()).unwrap();
        assert!((sol.profile.theta[2]).abs() < 1e-10);
        assert!((sol.profile.e[2] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn loads_see_their_negated_demand() {
        let case = testnets::triangle_constant_power();
        let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let sol = solve_loads(&case, &y, &VoltageProfile::flat(case.n()), NewtonOptions::default()).unwrap();
        assert!(sol.residual <= 1e-10);
        let inj = injections(&case, &y, &sol.profile).unwrap();
        let (pd, qd) = case.buses[2].load_model().unwrap().nominal();
        assert!((inj.p[2] + pd).abs() < 1e-10);
        assert!((inj.q[2] + qd).abs() < 1e-10);
    }

    #[test]
    fn shunt_mode_matches_load_side_mode() {
        let case = testnets::triangle_constant_impedance();
        let y_ex = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let y_in = build_admittance(&case, ShuntLoads::Include).unwrap();
        let start = VoltageProfile::flat(case.n());
        let a = solve_loads(&case, &y_ex, &start, NewtonOptions::default()).unwrap();
        let b = solve_loads(&case, &y_in, &start, NewtonOptions::default()).unwrap();
        assert!((&a.profile.theta - &b.profile.theta).amax() < 1e-9);
        assert!((&a.profile.e - &b.profile.e).amax() < 1e-9);
    }

    #[test]
    fn impossible_demand_reports_divergence() {
        let case = testnets::triangle_with_demand(50.0, 0.0);
        let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let err = solve_loads(&case, &y, &VoltageProfile::flat(case.n()), NewtonOptions::default()).unwrap_err();
        assert!(
            matches!(err, Error::NewtonDiverged { .. } | Error::SingularJacobian { .. }),
            "{err}"
        );
    }

    #[test]
    fn warm_start_is_no_slower() {
        let case = testnets::triangle_constant_power();
        let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let cold = solve_loads(&case, &y, &VoltageProfile::flat(case.n()), NewtonOptions::default()).unwrap();
        let mut moved = cold.profile.clone();
        moved.theta[0] += 1e-3;
        moved.e[1] += 1e-3;
        let warm = solve_loads(&case, &y, &moved, NewtonOptions::default()).unwrap();
        let mut flat = moved.clone();
        flat.theta[2] = 0.0;
        flat.e[2] = 1.0;
        let again = solve_loads(&case, &y, &flat, NewtonOptions::default()).unwrap();
        assert!(warm.iterations <= again.iterations);
    }
}

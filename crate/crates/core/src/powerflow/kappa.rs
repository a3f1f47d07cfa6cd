use nalgebra::DMatrix;
use rayon::prelude::*;

use super::loads::load_residual_jacobian;
use super::VoltageProfile;
use crate::error::{Error, Result};
use crate::linalg;
use crate::netmodel::{Admittance, NetworkCase};

/// Relative singular-value cutoff for the rank of the load-side block.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KappaReport {
    pub kappa: f64,
    /// Per-sample gain `‖f_L⁺ f_I‖₂`.
    pub per_sample: Vec<f64>,
    /// Indices of samples whose load-side block was rank deficient.
    pub rank_deficient: Vec<usize>,
}

/// Differentiated load-bus KCL: `0 = f_I ẋ_I + f_L ẋ_L`. Returns `(f_I, f_L)`.
pub fn load_sensitivity(case: &NetworkCase, y: &Admittance, x: &VoltageProfile) -> (DMatrix<f64>, DMatrix<f64>) {
    let jac = load_residual_jacobian(case, y, x);
    let n_i = case.n_inverters();
    let f_i = jac.columns(0, 2 * n_i).into_owned();
    let f_l = jac.columns(2 * n_i, 2 * case.n_loads()).into_owned();
    (f_i, f_l)
}

/// `‖f_L⁺ f_I‖₂` at one profile, plus whether `f_L` lost rank.
fn sample_gain(case: &NetworkCase, y: &Admittance, x: &VoltageProfile) -> (f64, bool) {
    if case.n_loads() == 0 {
        return (0.0, false);
    }
    let (f_i, f_l) = load_sensitivity(case, y, x);
    let svd = f_l.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = RANK_TOL * smax;
    let deficient = svd.singular_values.iter().any(|&s| s <= cutoff);
    let pinv = svd.pseudo_inverse(cutoff).expect("both factors computed");
    (linalg::norm2(&(pinv * f_i)), deficient)
}

/// Bound on the load-state velocity per unit inverter-state velocity, maximized over samples.
pub fn kappa_bound(case: &NetworkCase, y: &Admittance, samples: &[VoltageProfile]) -> Result<KappaReport> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if samples.iter().any(|x| x.n() != case.n()) {
        return Err(Error::Dimension("sample profile does not match the case".into()));
    }
    let gains: Vec<(f64, bool)> = samples.par_iter().map(|x| sample_gain(case, y, x)).collect();
    let kappa = gains.iter().map(|g| g.0).fold(0.0, f64::max);
    Ok(KappaReport {
        kappa,
        per_sample: gains.iter().map(|g| g.0).collect(),
        rank_deficient: gains.iter().enumerate().filter(|(_, g)| g.1).map(|(k, _)| k).collect(),
    })
}

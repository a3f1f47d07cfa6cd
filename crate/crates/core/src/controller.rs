//! Consensus control law on normalized injections, with rate saturation and
//! voltage-bound clamping.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{laplacian, CommLaplacian, NetworkCase};
use crate::powerflow::VoltageProfile;

/// Elementwise bounds on the inverter state velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLimits {
    /// rad/s
    pub theta_dot_max: f64,
    /// p.u./s
    pub e_dot_max: f64,
}

impl Default for RateLimits {
    fn default() -> Self {
        RateLimits {
            theta_dot_max: 0.3 * 2.0 * PI,
            e_dot_max: 0.05,
        }
    }
}

impl RateLimits {
    /// Clips `(θ̇, Ė)` pairs into the box.
    pub fn saturate(&self, v: &mut DVector<f64>) {
        for (k, x) in v.iter_mut().enumerate() {
            let m = if k % 2 == 0 { self.theta_dot_max } else { self.e_dot_max };
            *x = x.clamp(-m, m);
        }
    }
}

/// Per-inverter 2×2 gains keyed by bus id. Row 1 in rad/s, row 2 in p.u./s.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub blocks: BTreeMap<u32, Matrix2<f64>>,
    pub limits: RateLimits,
}

impl GainSet {
    pub fn new(blocks: BTreeMap<u32, Matrix2<f64>>, limits: RateLimits) -> Result<Self> {
        if !(limits.theta_dot_max > 0.0 && limits.e_dot_max > 0.0) {
            return Err(Error::Validation("rate limits must be positive".into()));
        }
        if blocks.values().any(|k| k.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation("gain entries must be finite".into()));
        }
        Ok(GainSet { blocks, limits })
    }

    /// Fails unless every inverter of `case` has a block.
    pub fn check_covers(&self, case: &NetworkCase) -> Result<()> {
        for i in case.inverters() {
            let id = case.buses[i].id;
            if !self.blocks.contains_key(&id) {
                return Err(Error::Validation(format!("no gain block for inverter bus {id}")));
            }
        }
        Ok(())
    }

    pub fn block(&self, id: u32) -> Result<&Matrix2<f64>> {
        self.blocks
            .get(&id)
            .ok_or_else(|| Error::Validation(format!("no gain block for inverter bus {id}")))
    }

    /// Block-diagonal gain over the listed bus ids, in order.
    pub fn stacked(&self, ids: &[u32]) -> Result<DMatrix<f64>> {
        let mut k = DMatrix::zeros(2 * ids.len(), 2 * ids.len());
        for (n, id) in ids.iter().enumerate() {
            k.view_mut((2 * n, 2 * n), (2, 2)).copy_from(self.block(*id)?);
        }
        Ok(k)
    }

    /// Whether the kernel of the stacked gain lies in the consensus space.
    ///
    /// For a block-diagonal gain over two or more inverters this holds exactly
    /// when every block is nonsingular.
    pub fn kernel_in_consensus(&self, ids: &[u32]) -> bool {
        if ids.len() <= 1 {
            return true;
        }
        ids.iter().all(|id| {
            self.blocks.get(id).is_some_and(|k| {
                let scale = k.amax().max(f64::MIN_POSITIVE);
                (k.determinant() / (scale * scale)).abs() > 1e-12
            })
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: GainsFile = serde_json::from_str(text).map_err(Error::from_json)?;
        file.into_gains()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GainsFile::from_gains(self, 1.0)).expect("gain serialization cannot fail")
    }
}

/// On-disk gains: row 1 in mrad/s, row 2 in mV/s per unit of normalized injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    #[serde(default)]
    pub header: String,
    /// Volts corresponding to 1 p.u. when converting the second row.
    pub e_base_volts: f64,
    /// Frequency excursion bound in Hz.
    pub theta_dot_max_hz: f64,
    /// Voltage-rate bound in p.u./s.
    pub e_dot_max: f64,
    /// Bus id → `[K11, K12, K21, K22]`.
    pub gains: BTreeMap<u32, [f64; 4]>,
}

const GAINS_HEADER: &str = "K11, K12 in mrad/s and K21, K22 in mV/s per unit of normalized injection; \
1 p.u. of voltage equals e_base_volts volts, so K2x[p.u./s] = K2x[mV/s] * 1e-3 / e_base_volts";

impl GainsFile {
    pub fn into_gains(self) -> Result<GainSet> {
        if !(self.e_base_volts > 0.0) {
            return Err(Error::Validation("e_base_volts must be positive".into()));
        }
        let row2 = 1e-3 / self.e_base_volts;
        let blocks = self
            .gains
            .iter()
            .map(|(&id, g)| (id, Matrix2::new(g[0] * 1e-3, g[1] * 1e-3, g[2] * row2, g[3] * row2)))
            .collect();
        GainSet::new(
            blocks,
            RateLimits {
                theta_dot_max: self.theta_dot_max_hz * 2.0 * PI,
                e_dot_max: self.e_dot_max,
            },
        )
    }

    pub fn from_gains(g: &GainSet, e_base_volts: f64) -> Self {
        let row2 = e_base_volts * 1e3;
        GainsFile {
            header: GAINS_HEADER.into(),
            e_base_volts,
            theta_dot_max_hz: g.limits.theta_dot_max / (2.0 * PI),
            e_dot_max: g.limits.e_dot_max,
            gains: g
                .blocks
                .iter()
                .map(|(&id, k)| (id, [k[(0, 0)] * 1e3, k[(0, 1)] * 1e3, k[(1, 0)] * row2, k[(1, 1)] * row2]))
                .collect(),
        }
    }
}

/// Which inverters are online and how they talk.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlState {
    /// Bus ids of the active inverters, aligned with `laplacian.active`.
    pub ids: Vec<u32>,
    pub laplacian: CommLaplacian,
    /// Last derivative returned by [`control_derivative`].
    pub last_derivative: DVector<f64>,
}

impl ControlState {
    /// All inverters active over the full communication graph.
    pub fn full(case: &NetworkCase) -> Self {
        let active: Vec<usize> = case.inverters().collect();
        Self::new(case, &active, &case.comm_edges)
    }

    pub fn new(case: &NetworkCase, active: &[usize], edges: &[(usize, usize)]) -> Self {
        let laplacian = laplacian(edges, active);
        let ids = laplacian.active.iter().map(|&i| case.buses[i].id).collect();
        let n = laplacian.active.len();
        ControlState {
            ids,
            laplacian,
            last_derivative: DVector::zeros(2 * n),
        }
    }

    pub fn active(&self) -> &[usize] {
        &self.laplacian.active
    }
}

/// `K_i Σ_j L(i,j) S_j` for each active inverter, without saturation.
pub fn consensus_drive(gains: &GainSet, state: &ControlState, s: &DVector<f64>) -> Result<DVector<f64>> {
    let n = state.ids.len();
    if s.len() != 2 * n {
        return Err(Error::Dimension(format!(
            "{} normalized entries for {n} active inverters",
            s.len()
        )));
    }
    let l = &state.laplacian.matrix;
    let mut out = DVector::zeros(2 * n);
    for i in 0..n {
        let (mut up, mut uq) = (0.0, 0.0);
        for j in 0..n {
            let w = l[(i, j)];
            if w != 0.0 {
                up += w * s[2 * j];
                uq += w * s[2 * j + 1];
            }
        }
        let k = gains.block(state.ids[i])?;
        out[2 * i] = k[(0, 0)] * up + k[(0, 1)] * uq;
        out[2 * i + 1] = k[(1, 0)] * up + k[(1, 1)] * uq;
    }
    Ok(out)
}

/// Control law with elementwise rate saturation.
pub fn control_derivative(gains: &GainSet, state: &ControlState, s: &DVector<f64>) -> Result<DVector<f64>> {
    let mut v = consensus_drive(gains, state, s)?;
    gains.limits.saturate(&mut v);
    Ok(v)
}

/// Zeroes `Ė_i` for inverters sitting on a voltage bound and pushing outward.
/// Returns how many entries were clamped.
pub fn project_security(case: &NetworkCase, x: &VoltageProfile, active: &[usize], xdot: &mut DVector<f64>) -> usize {
    let mut clamps = 0;
    for (k, &i) in active.iter().enumerate() {
        let bus = &case.buses[i];
        let ed = &mut xdot[2 * k + 1];
        if (x.e[i] >= bus.e_max && *ed > 0.0) || (x.e[i] <= bus.e_min && *ed < 0.0) {
            *ed = 0.0;
            clamps += 1;
        }
    }
    clamps
}

/// Electrical frequency in Hz seen by a bus whose angle drifts at `theta_dot` in the rotating frame.
pub fn frequency_of(theta_dot: f64, omega0: f64) -> f64 {
    (omega0 + theta_dot) / (2.0 * PI)
}

//! Interval hulls of the inverter Jacobian, robust-stability certificates,
//! and gain synthesis.

mod basis;
mod hull;
mod lmi;
mod synth;
mod vertex;

pub use basis::{build_basis, consensus_patterns, ConsensusBasis};
pub use hull::{
    block_feasibility, block_gain, block_samples, blocks_of, build_hull, entry_bounds, restrict_hull, stacked_indices,
    vertex_eval, BlockFeasibility, HullBlock, HullKind, IntervalHull, BLOCK_SAMPLE_BUDGET,
};
pub use lmi::{
    block_bound_margin, certificate_digest, explicit_margins, golden_min, lmi_matrix, verify_certificate,
    worst_vertex_search, CertificateFile, CertificateReport, LmiParams, ReducedSystem, StabilityCertificate,
    VerifyMode, VerifyOptions, ZetaMode, EXPLICIT_BUDGET, MARGIN_TOL,
};
pub use synth::{block_gains, stage1, stage2, synthesize_gains, CapacityBox, SynthOptions};
pub use vertex::{
    angle_admissible, check_angle_hypothesis, corner_profiles, reduced_angle, vertex_count, vertex_samples,
    VertexSample, VertexSet,
};

use crate::controller::GainSet;
use crate::error::Result;
use crate::linalg;
use crate::netmodel::{laplacian, Admittance, NetworkCase};
use crate::powerflow::{jacobians, kappa_bound, VoltageProfile};

/// Disturbance degree the certificate must tolerate: `κ · max‖J_L‖ · ‖K‖ · ‖L̄‖`
/// over the given profiles.
pub fn zeta_estimate(case: &NetworkCase, y: &Admittance, gains: &GainSet, samples: &[VoltageProfile]) -> Result<f64> {
    if case.n_loads() == 0 {
        return Ok(0.0);
    }
    let ids: Vec<u32> = case.inverters().map(|i| case.buses[i].id).collect();
    let k = gains.stacked(&ids)?;
    let k_norm = linalg::norm2(&k);
    if k_norm == 0.0 {
        return Ok(0.0);
    }
    let kappa = kappa_bound(case, y, samples)?.kappa;
    let mut jl = 0.0f64;
    for x in samples {
        jl = jl.max(linalg::norm2(&jacobians(case, y, x)?.j_l));
    }
    let active: Vec<usize> = case.inverters().collect();
    let lap = laplacian(&case.comm_edges, &active).matrix;
    let lbar = linalg::kron_i2(&lap);
    Ok(kappa * jl * k_norm * linalg::norm2(&lbar))
}

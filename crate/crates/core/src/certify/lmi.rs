//! Robust-stability certificates and their verification.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::basis::{build_basis, ConsensusBasis};
use super::hull::{block_feasibility, stacked_indices, IntervalHull};
use crate::controller::GainSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::netmodel::{laplacian, NetworkCase};

/// Largest vertex product verified one matrix at a time.
pub const EXPLICIT_BUDGET: u128 = 200_000;

/// Default tolerance on the largest eigenvalue of each certificate matrix.
pub const MARGIN_TOL: f64 = 1e-9;

/// How the disturbance degree enters the certificate matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaMode {
    /// `ε ζ² I`, from the quadratic bound `‖w‖² ≤ ζ² ‖z‖²`.
    #[default]
    Squared,
    /// `ε ζ I`, the linear variant.
    Linear,
}

impl ZetaMode {
    pub fn weight(self, zeta: f64) -> f64 {
        match self {
            ZetaMode::Squared => zeta * zeta,
            ZetaMode::Linear => zeta,
        }
    }
}

/// How a certificate was checked against the hull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    /// Every block-diagonal vertex matrix assembled and tested.
    Explicit,
    /// One structured bound valid for every matrix in the product of block
    /// hulls, used when the product is too large to enumerate.
    BlockBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    /// Symmetric positive definite, `2(n_I − 1)` square.
    pub u: DMatrix<f64>,
    pub eps: f64,
    pub xi: f64,
    pub zeta: f64,
    /// Block margin the gains were designed for.
    pub d: f64,
    pub zeta_mode: ZetaMode,
    pub hull_kind: super::HullKind,
    /// Disturbance degree suggested by the load-sensitivity estimate, if computed.
    pub zeta_estimate: Option<f64>,
    /// Whether `zeta` reaches `zeta_estimate`.
    pub covers_estimate: bool,
    /// Largest eigenvalue seen per checked matrix at synthesis time.
    pub margins: Vec<f64>,
    pub digest: String,
}

impl StabilityCertificate {
    pub fn validate(&self) -> Result<()> {
        let u = &self.u;
        if !u.is_square() || u.nrows() == 0 {
            return Err(Error::Certificate("U must be a nonempty square matrix".into()));
        }
        if (u - u.transpose()).amax() > 1e-12 * u.amax().max(1.0) {
            return Err(Error::Certificate("U is not symmetric".into()));
        }
        if !(linalg::lambda_min(u) > 0.0) {
            return Err(Error::Certificate("U is not positive definite".into()));
        }
        for (name, v) in [("eps", self.eps), ("xi", self.xi), ("zeta", self.zeta), ("d", self.d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Certificate(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: CertificateFile = serde_json::from_str(text).map_err(Error::from_json)?;
        f.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CertificateFile::from(self)).expect("certificate serialization cannot fail")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub dim: usize,
    /// Row-major entries of U.
    pub u: Vec<f64>,
    pub eps: f64,
    pub xi: f64,
    pub zeta: f64,
    pub d: f64,
    pub zeta_mode: ZetaMode,
    pub hull_kind: super::HullKind,
    #[serde(default)]
    pub zeta_estimate: Option<f64>,
    #[serde(default)]
    pub covers_estimate: bool,
    #[serde(default)]
    pub worst_margin: Option<f64>,
    /// SHA-256 of the case and gains being certified.
    pub digest: String,
}

impl From<&StabilityCertificate> for CertificateFile {
    fn from(c: &StabilityCertificate) -> Self {
        let dim = c.u.nrows();
        CertificateFile {
            dim,
            u: (0..dim * dim).map(|k| c.u[(k / dim, k % dim)]).collect(),
            eps: c.eps,
            xi: c.xi,
            zeta: c.zeta,
            d: c.d,
            zeta_mode: c.zeta_mode,
            hull_kind: c.hull_kind,
            zeta_estimate: c.zeta_estimate,
            covers_estimate: c.covers_estimate,
            worst_margin: c.margins.iter().copied().reduce(f64::max),
            digest: c.digest.clone(),
        }
    }
}

impl TryFrom<CertificateFile> for StabilityCertificate {
    type Error = Error;

    fn try_from(f: CertificateFile) -> Result<Self> {
        if f.u.len() != f.dim * f.dim {
            return Err(Error::Dimension(format!("U has {} entries for dimension {}", f.u.len(), f.dim)));
        }
        Ok(StabilityCertificate {
            u: DMatrix::from_row_slice(f.dim, f.dim, &f.u),
            eps: f.eps,
            xi: f.xi,
            zeta: f.zeta,
            d: f.d,
            zeta_mode: f.zeta_mode,
            hull_kind: f.hull_kind,
            zeta_estimate: f.zeta_estimate,
            covers_estimate: f.covers_estimate,
            margins: f.worst_margin.into_iter().collect(),
            digest: f.digest,
        })
    }
}

/// SHA-256 over the case file and the gains at 12 significant digits, so a
/// save/load cycle of the gains file keeps the digest.
pub fn certificate_digest(case: &NetworkCase, gains: &GainSet) -> String {
    let mut h = Sha256::new();
    h.update(case.to_json().as_bytes());
    let canon = |v: f64| format!("{:.11e};", if v == 0.0 { 0.0 } else { v });
    for (id, k) in &gains.blocks {
        h.update(format!("{id}:").as_bytes());
        for v in k.iter() {
            h.update(canon(*v).as_bytes());
        }
    }
    h.update(canon(gains.limits.theta_dot_max).as_bytes());
    h.update(canon(gains.limits.e_dot_max).as_bytes());
    hex::encode(h.finalize())
}

/// Reduced closed-loop pieces shared by every vertex.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub basis: ConsensusBasis,
    /// `P L̄ Pᵀ`, positive definite for a connected graph.
    pub l1: DMatrix<f64>,
    /// Per block and vertex: contribution `P E_b D_v K_b (E_bᵀ L̄ Pᵀ)` to `Â₁₁`.
    pub pieces: Vec<Vec<DMatrix<f64>>>,
    /// Per block: worst `λ_max(D K + Kᵀ Dᵀ)`.
    pub block_worst: Vec<f64>,
    /// Per block: largest `‖D K‖₂`.
    pub block_norm: Vec<f64>,
}

impl ReducedSystem {
    pub fn new(case: &NetworkCase, gains: &GainSet, hull: &IntervalHull, with_pieces: bool) -> Result<Self> {
        let n_i = case.n_inverters();
        let basis = build_basis(n_i)?;
        let active: Vec<usize> = case.inverters().collect();
        let lap = laplacian(&case.comm_edges, &active);
        if !lap.connected {
            return Err(Error::Validation("comm graph disconnected".into()));
        }
        let lbar = linalg::kron_i2(&lap.matrix);
        let p = basis.projector();
        let l1 = &p * &lbar * p.transpose();
        let lp = &lbar * p.transpose();

        let feas = block_feasibility(case, gains, hull, 0.0)?;
        let mut pieces = Vec::new();
        if with_pieces {
            for block in &hull.blocks {
                let idx = stacked_indices(&block.inverters);
                let k = super::hull::block_gain(case, gains, &block.inverters)?;
                let p_b = DMatrix::from_fn(p.nrows(), idx.len(), |r, c| p[(r, idx[c])]);
                let lp_b = DMatrix::from_fn(idx.len(), lp.ncols(), |r, c| lp[(idx[r], c)]);
                let right = &k * lp_b;
                pieces.push(block.vertices.par_iter().map(|d| &p_b * d * &right).collect());
            }
        }
        Ok(ReducedSystem {
            basis,
            l1,
            pieces,
            block_worst: feas.per_block,
            block_norm: feas.norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.l1.nrows()
    }

    pub fn product_count(&self) -> u128 {
        self.pieces
            .iter()
            .fold(1u128, |acc, b| acc.saturating_mul(b.len() as u128))
    }

    /// `Â₁₁` at the vertex choosing `choice[b]` in block `b`.
    pub fn a11(&self, choice: &[usize]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for (b, &v) in choice.iter().enumerate() {
            a += &self.pieces[b][v];
        }
        a
    }
}

/// `[[ÂᵀU + UÂ + εζ′I + ξU, U], [U, −εI]]`.
pub fn lmi_matrix(a11: &DMatrix<f64>, u: &DMatrix<f64>, eps: f64, xi: f64, zeta_weight: f64) -> DMatrix<f64> {
    let m = u.nrows();
    let mut top = a11.transpose() * u + u * a11 + u * xi;
    for i in 0..m {
        top[(i, i)] += eps * zeta_weight;
    }
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(&top);
    out.view_mut((0, m), (m, m)).copy_from(u);
    out.view_mut((m, 0), (m, m)).copy_from(u);
    for i in 0..m {
        out[(m + i, m + i)] = -eps;
    }
    out
}

/// Certificate parameters being tested.
#[derive(Debug, Clone, Copy)]
pub struct LmiParams<'a> {
    pub u: &'a DMatrix<f64>,
    pub eps: f64,
    pub xi: f64,
    pub zeta_weight: f64,
}

fn decode(mut idx: u128, radix: &[usize]) -> Vec<usize> {
    radix
        .iter()
        .map(|&r| {
            let v = (idx % r as u128) as usize;
            idx /= r as u128;
            v
        })
        .collect()
}

/// Largest eigenvalue of the certificate matrix at every vertex of the product.
pub fn explicit_margins(sys: &ReducedSystem, p: LmiParams) -> Vec<f64> {
    let radix: Vec<usize> = sys.pieces.iter().map(|b| b.len()).collect();
    let total = sys.product_count();
    (0..total as u64)
        .into_par_iter()
        .map(|idx| {
            let a = sys.a11(&decode(idx as u128, &radix));
            linalg::lambda_max(&lmi_matrix(&a, p.u, p.eps, p.xi, p.zeta_weight))
        })
        .collect()
}

/// Structured upper bound on the largest eigenvalue over the whole product hull.
///
/// With `W = D K` block diagonal, `Â₁₁ = P W Pᵀ L̄₁`. Writing `U = s L̄₁ + R`
/// with `s ≥ 0`, the block condition `W + Wᵀ ≼ −d I` and Young's inequality
/// give, for every `t > 0`,
/// `Â₁₁ᵀU + UÂ₁₁ ≼ (ρ²t − s d) L̄₁² + R²/t` where `ρ` bounds `‖W‖₂`.
/// Returns the bound on `λ_max` minimized over `t`.
pub fn block_bound_margin(sys: &ReducedSystem, p: LmiParams) -> f64 {
    let d = -sys.block_worst.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(d > 0.0) {
        return f64::INFINITY;
    }
    let rho = sys.block_norm.iter().copied().fold(0.0, f64::max);
    let l1 = &sys.l1;
    let s = (p.u.dot(l1) / l1.dot(l1)).max(0.0);
    let r = p.u - l1 * s;
    let l1sq = l1 * l1;
    let m = p.u.nrows();
    let base = {
        let mut b = p.u * p.xi;
        for i in 0..m {
            b[(i, i)] += p.eps * p.zeta_weight;
        }
        b
    };
    let assemble = |top: DMatrix<f64>| {
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        out.view_mut((0, 0), (m, m)).copy_from(&top);
        out.view_mut((0, m), (m, m)).copy_from(p.u);
        out.view_mut((m, 0), (m, m)).copy_from(p.u);
        for i in 0..m {
            out[(m + i, m + i)] = -p.eps;
        }
        linalg::lambda_max(&out)
    };
    if r.amax() <= 1e-14 * p.u.amax() {
        return assemble(&base - &l1sq * (s * d));
    }
    let r2 = &r * &r;
    let eval = |log_t: f64| {
        let t = log_t.exp();
        assemble(&base + &l1sq * (rho * rho * t - s * d) + &r2 / t)
    };
    golden_min(eval, -40.0, 40.0, 80).1
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub pass: bool,
    pub mode: VerifyMode,
    pub worst_margin: f64,
    /// Explicit mode: one entry per vertex. Block-bound mode: the single bound.
    pub margins: Vec<f64>,
    /// Worst block eigenvalue `λ_max(D K + Kᵀ Dᵀ)`.
    pub block_worst: f64,
    pub digest_ok: bool,
    /// In block-bound mode, a vertex found to violate the condition, with its margin.
    pub counterexample: Option<(Vec<usize>, f64)>,
    pub vertex_count: String,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub tol: f64,
    /// Largest vertex product checked explicitly.
    pub explicit_budget: u128,
    /// Search for a violating vertex when the block bound fails.
    pub search_counterexample: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol: MARGIN_TOL,
            explicit_budget: EXPLICIT_BUDGET,
            search_counterexample: true,
        }
    }
}

/// Coordinate ascent over blocks for the vertex with the largest certificate eigenvalue.
pub fn worst_vertex_search(sys: &ReducedSystem, p: LmiParams, sweeps: usize) -> (Vec<usize>, f64) {
    let eval = |choice: &[usize]| linalg::lambda_max(&lmi_matrix(&sys.a11(choice), p.u, p.eps, p.xi, p.zeta_weight));
    let mut choice = vec![0; sys.pieces.len()];
    let mut best = eval(&choice);
    for _ in 0..sweeps {
        let mut improved = false;
        for b in 0..sys.pieces.len() {
            let rest: DMatrix<f64> = {
                let mut a = DMatrix::zeros(sys.dim(), sys.dim());
                for (c, &v) in choice.iter().enumerate() {
                    if c != b {
                        a += &sys.pieces[c][v];
                    }
                }
                a
            };
            let (vi, val) = sys.pieces[b]
                .par_iter()
                .map(|piece| linalg::lambda_max(&lmi_matrix(&(&rest + piece), p.u, p.eps, p.xi, p.zeta_weight)))
                .enumerate()
                .reduce(|| (0, f64::NEG_INFINITY), |x, y| if y.1 > x.1 || (y.1 == x.1 && y.0 < x.0) { y } else { x });
            if val > best + 1e-15 {
                best = val;
                choice[b] = vi;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    (choice, best)
}

/// Checks a certificate against the hull of the case under the given gains.
pub fn verify_certificate(
    case: &NetworkCase,
    gains: &GainSet,
    cert: &StabilityCertificate,
    hull: &IntervalHull,
    opts: VerifyOptions,
) -> Result<CertificateReport> {
    cert.validate()?;
    gains.check_covers(case)?;
    let dim = 2 * case.n_inverters() - 2;
    if cert.u.nrows() != dim {
        return Err(Error::Dimension(format!("U is {}×{}, expected {dim}×{dim}", cert.u.nrows(), cert.u.ncols())));
    }
    let digest_ok = cert.digest == certificate_digest(case, gains);
    let explicit = hull.product_count() <= opts.explicit_budget;
    let sys = ReducedSystem::new(case, gains, hull, explicit || opts.search_counterexample)?;
    let params = LmiParams {
        u: &cert.u,
        eps: cert.eps,
        xi: cert.xi,
        zeta_weight: cert.zeta_mode.weight(cert.zeta),
    };
    let block_worst = sys.block_worst.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mode, margins, counterexample) = if explicit {
        (VerifyMode::Explicit, explicit_margins(&sys, params), None)
    } else {
        let bound = block_bound_margin(&sys, params);
        let ce = if bound > opts.tol && opts.search_counterexample {
            let (choice, val) = worst_vertex_search(&sys, params, 20);
            (val > opts.tol).then_some((choice, val))
        } else {
            None
        };
        (VerifyMode::BlockBound, vec![bound], ce)
    };
    let worst_margin = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CertificateReport {
        pass: digest_ok && worst_margin <= opts.tol,
        mode,
        worst_margin,
        margins,
        block_worst,
        digest_ok,
        counterexample,
        vertex_count: hull.product_count().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_schur_identity_case() {
        // U = I, Â = −aI: passes iff −2a + εζ + ξ + 1/ε ≤ 0
        let m = 3;
        let u = DMatrix::identity(m, m);
        for &(a, eps, xi, zeta) in &[(5.0, 1.0, 0.5, 1.0), (1.0, 1.0, 0.5, 1.0), (2.0, 0.5, 0.1, 0.2)] {
            let a11 = DMatrix::identity(m, m) * -a;
            let lm = linalg::lambda_max(&lmi_matrix(&a11, &u, eps, xi, zeta));
            let schur = -2.0 * a + eps * zeta + xi + 1.0 / eps;
            assert_eq!(lm <= 1e-12, schur <= 0.0, "a={a} eps={eps}");
        }
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_min(|x| (x - 1.3).powi(2) + 2.0, -10.0, 10.0, 100);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_fields_are_rejected() {
        let mut cert = StabilityCertificate {
            u: DMatrix::identity(2, 2),
            eps: 1.0,
            xi: 0.0,
            zeta: 0.1,
            d: 0.1,
            zeta_mode: ZetaMode::Squared,
            hull_kind: super::super::HullKind::JBar,
            zeta_estimate: None,
            covers_estimate: false,
            margins: vec![],
            digest: String::new(),
        };
        assert!(matches!(cert.validate(), Err(Error::Certificate(_))));
        cert.xi = 0.1;
        assert!(cert.validate().is_ok());
        cert.u[(0, 1)] = 0.5;
        assert!(cert.validate().is_err());
        cert.u[(1, 0)] = 0.5;
        cert.u[(1, 1)] = 0.1;
        assert!(cert.validate().is_err());
    }

    #[test]
    fn certificate_file_round_trip() {
        let cert = StabilityCertificate {
            u: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            eps: 0.7,
            xi: 0.01,
            zeta: 0.2,
            d: 0.05,
            zeta_mode: ZetaMode::Linear,
            hull_kind: super::super::HullKind::DBar,
            zeta_estimate: Some(3.0),
            covers_estimate: false,
            margins: vec![-1e-3],
            digest: "ab".into(),
        };
        let back = StabilityCertificate::parse(&cert.to_json()).unwrap();
        assert_eq!(back, cert);
    }

    proptest! {
        #[test]
        fn monotone_in_xi(a in 0.5f64..5.0, eps in 0.1f64..3.0, xi1 in 0.0f64..2.0, frac in 0.0f64..1.0) {
            let m = 2;
            let a11 = DMatrix::from_row_slice(m, m, &[-a, 0.3, -0.2, -a * 0.8]);
            let u = DMatrix::from_row_slice(m, m, &[1.0, 0.1, 0.1, 0.7]);
            let l1 = linalg::lambda_max(&lmi_matrix(&a11, &u, eps, xi1, 0.04));
            let l2 = linalg::lambda_max(&lmi_matrix(&a11, &u, eps, xi1 * frac, 0.04));
            prop_assert!(l2 <= l1 + 1e-12);
        }
    }
}

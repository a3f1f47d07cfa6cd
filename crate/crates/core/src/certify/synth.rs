//! Two-stage gain synthesis: block-wise spectral-abscissa descent under the
//! rate constraints, then a search over `(U, ε, ξ, ζ)` with the gains fixed.

use std::cell::RefCell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;

use super::hull::{stacked_indices, HullBlock, IntervalHull};
use super::lmi::{
    block_bound_margin, certificate_digest, explicit_margins, golden_min, verify_certificate, LmiParams,
    ReducedSystem, StabilityCertificate, VerifyMode, VerifyOptions, ZetaMode, EXPLICIT_BUDGET,
};
use crate::controller::{GainSet, RateLimits};
use crate::error::{Error, Result};
use crate::linalg;
use crate::netmodel::{laplacian, NetworkCase};

/// Admissible normalized injections `S_I`, per stacked entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl CapacityBox {
    /// From the inverter capacities of the case, divided by the nominal
    /// injections. Inverters without a capacity get `P ∈ [0, P*]`, `Q ∈ [−|Q*|, |Q*|]`.
    pub fn from_case(case: &NetworkCase) -> Self {
        let n = case.n_inverters();
        let mut lo = DVector::zeros(2 * n);
        let mut hi = DVector::zeros(2 * n);
        for i in 0..n {
            let (ps, qs) = (case.p_star(i).unwrap(), case.q_star(i).unwrap());
            let (pl, ph, ql, qh) = match case.capacity(i) {
                Some(c) => (c.p_min, c.p_max, c.q_min, c.q_max),
                None => (0.0, ps.max(0.0), -qs.abs(), qs.abs()),
            };
            let (a, b) = (pl / ps, ph / ps);
            lo[2 * i] = a.min(b);
            hi[2 * i] = a.max(b);
            let (a, b) = (ql / qs, qh / qs);
            lo[2 * i + 1] = a.min(b);
            hi[2 * i + 1] = a.max(b);
        }
        CapacityBox { lo, hi }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub stage1_iters: usize,
    pub zeta_mode: ZetaMode,
    /// Disturbance degree to aim for; the largest certifiable value is used when it fails.
    pub zeta_target: Option<f64>,
    pub explicit_budget: u128,
    /// Relative resolution of the `ξ` bisection.
    pub xi_resolution: f64,
    pub u_iters: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            stage1_iters: 200,
            zeta_mode: ZetaMode::Squared,
            zeta_target: None,
            explicit_budget: EXPLICIT_BUDGET,
            xi_resolution: 1e-6,
            u_iters: 40,
        }
    }
}

/// Largest `|row · Σ_j L(i,j) s_j|` over the capacity box, for each of the two
/// rows of inverter `i`'s gain.
fn row_loads(k: &Matrix2<f64>, i: usize, lap: &DMatrix<f64>, caps: &CapacityBox) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (r, slot) in out.iter_mut().enumerate() {
        let (mut top, mut bottom) = (0.0, 0.0);
        for j in 0..lap.ncols() {
            let w = lap[(i, j)];
            if w == 0.0 {
                continue;
            }
            for col in 0..2 {
                let c = w * k[(r, col)];
                let (a, b) = (c * caps.lo[2 * j + col], c * caps.hi[2 * j + col]);
                top += a.max(b);
                bottom += a.min(b);
            }
        }
        *slot = top.abs().max(bottom.abs());
    }
    out
}

/// Largest common factor keeping every row of the block within its rate bound.
fn rate_scale(blocks: &[Matrix2<f64>], inverters: &[usize], lap: &DMatrix<f64>, caps: &CapacityBox, limits: RateLimits) -> f64 {
    let mut alpha = f64::INFINITY;
    for (k, &i) in blocks.iter().zip(inverters) {
        let loads = row_loads(k, i, lap, caps);
        for (load, lim) in loads.iter().zip([limits.theta_dot_max, limits.e_dot_max]) {
            if *load > 0.0 {
                alpha = alpha.min(lim / load);
            }
        }
    }
    alpha
}

fn assemble(blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
    let n = blocks.len();
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    for (a, b) in blocks.iter().enumerate() {
        k.view_mut((2 * a, 2 * a), (2, 2)).copy_from(b);
    }
    k
}

fn worst_over(vertices: &[DMatrix<f64>], subset: &[usize], k: &DMatrix<f64>) -> (usize, f64, DVector<f64>) {
    subset
        .par_iter()
        .map(|&v| {
            let (val, vec) = linalg::max_eig(&linalg::sym2(&(&vertices[v] * k)));
            (v, val, vec)
        })
        .reduce(
            || (usize::MAX, f64::NEG_INFINITY, DVector::zeros(0)),
            |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
        )
}

fn ranked(vertices: &[DMatrix<f64>], k: &DMatrix<f64>, keep: usize) -> (f64, Vec<usize>) {
    let mut vals: Vec<(usize, f64)> = vertices
        .par_iter()
        .enumerate()
        .map(|(i, d)| (i, linalg::lambda_max(&linalg::sym2(&(d * k)))))
        .collect();
    vals.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let worst = vals.first().map_or(f64::NEG_INFINITY, |v| v.1);
    (worst, vals.iter().take(keep).map(|v| v.0).collect())
}

/// Stage 1 for one block. Returns the per-inverter gains and the achieved
/// worst eigenvalue.
fn stage1_block(
    block: &HullBlock,
    lap: &DMatrix<f64>,
    caps: &CapacityBox,
    limits: RateLimits,
    iters: usize,
) -> (Vec<Matrix2<f64>>, f64) {
    let n = block.inverters.len();
    let center = (&block.lower + &block.upper) * 0.5;
    let mut blocks: Vec<Matrix2<f64>> = (0..n)
        .map(|a| {
            let d = Matrix2::new(
                center[(2 * a, 2 * a)],
                center[(2 * a, 2 * a + 1)],
                center[(2 * a + 1, 2 * a)],
                center[(2 * a + 1, 2 * a + 1)],
            );
            match d.try_inverse() {
                Some(inv) if inv.iter().all(|v| v.is_finite()) => -inv,
                _ => -Matrix2::identity() / d.amax().max(1e-12),
            }
        })
        .collect();
    let rescale = |b: &mut Vec<Matrix2<f64>>| {
        let a = rate_scale(b, &block.inverters, lap, caps, limits);
        if a.is_finite() && a > 0.0 {
            for m in b.iter_mut() {
                *m *= a;
            }
        }
    };
    rescale(&mut blocks);

    let verts = &block.vertices;
    let (mut best_val, mut working) = ranked(verts, &assemble(&blocks), 64);
    let mut best = blocks.clone();
    let mut eta = 0.2;
    for it in 0..iters {
        let k = assemble(&blocks);
        let (v, val, z) = worst_over(verts, &working, &k);
        if v == usize::MAX {
            break;
        }
        // d/dK of zᵀ(DK + KᵀDᵀ)z is 2 Dᵀ z zᵀ; keep the 2×2 diagonal blocks
        let g = verts[v].transpose() * &z * z.transpose() * 2.0;
        let mut gb: Vec<Matrix2<f64>> = (0..n)
            .map(|a| Matrix2::new(g[(2 * a, 2 * a)], g[(2 * a, 2 * a + 1)], g[(2 * a + 1, 2 * a)], g[(2 * a + 1, 2 * a + 1)]))
            .collect();
        let gnorm = gb.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let knorm = blocks.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        if gnorm == 0.0 || knorm == 0.0 {
            break;
        }
        for m in &mut gb {
            *m *= eta * knorm / gnorm;
        }
        let mut trial: Vec<Matrix2<f64>> = blocks.iter().zip(&gb).map(|(k, g)| k - g).collect();
        rescale(&mut trial);
        let (_, tval, _) = worst_over(verts, &working, &assemble(&trial));
        if tval < val {
            blocks = trial;
            eta = (eta * 1.2).min(0.5);
        } else {
            eta *= 0.5;
            if eta < 1e-6 {
                eta = 1e-3;
            }
        }
        if it % 10 == 9 || it + 1 == iters {
            let (full, top) = ranked(verts, &assemble(&blocks), 16);
            for t in top {
                if !working.contains(&t) {
                    working.push(t);
                }
            }
            if full < best_val {
                best_val = full;
                best = blocks.clone();
            }
        }
    }
    (best, best_val)
}

/// Stage 1 over all blocks: gains under the rate constraints with the most
/// negative block eigenvalues found. Returns the gains and the achieved margin.
pub fn stage1(
    case: &NetworkCase,
    hull: &IntervalHull,
    limits: RateLimits,
    caps: &CapacityBox,
    iters: usize,
) -> Result<(GainSet, f64)> {
    let active: Vec<usize> = case.inverters().collect();
    let lap = laplacian(&case.comm_edges, &active).matrix;
    let results: Vec<(Vec<Matrix2<f64>>, f64)> = hull
        .blocks
        .par_iter()
        .map(|b| stage1_block(b, &lap, caps, limits, iters))
        .collect();
    let mut map = BTreeMap::new();
    let mut worst = f64::NEG_INFINITY;
    for (block, (ks, val)) in hull.blocks.iter().zip(results) {
        worst = worst.max(val);
        for (&i, k) in block.inverters.iter().zip(ks) {
            map.insert(case.buses[i].id, k);
        }
    }
    if !(worst < 0.0) {
        return Err(Error::Synthesis(format!(
            "no gain makes every block negative definite (best worst eigenvalue {worst:.3e})"
        )));
    }
    let gains = GainSet::new(map, limits)?;
    // normalize through the file format so the certificate matches reloaded gains
    let gains = GainSet::parse(&gains.to_json())?;
    Ok((gains, -worst))
}

struct Stage2<'a> {
    sys: &'a ReducedSystem,
    explicit: bool,
    mode: ZetaMode,
    /// Vertex indices that have been worst at some point (explicit mode).
    working: RefCell<Vec<u64>>,
}

impl Stage2<'_> {
    fn params<'u>(&self, u: &'u DMatrix<f64>, eps: f64, xi: f64, zeta: f64) -> LmiParams<'u> {
        LmiParams {
            u,
            eps,
            xi,
            zeta_weight: self.mode.weight(zeta),
        }
    }

    fn margin(&self, u: &DMatrix<f64>, eps: f64, xi: f64, zeta: f64) -> f64 {
        let p = self.params(u, eps, xi, zeta);
        if self.explicit {
            explicit_margins(self.sys, p).into_iter().fold(f64::NEG_INFINITY, f64::max)
        } else {
            block_bound_margin(self.sys, p)
        }
    }

    /// Largest eigenvalue over the working set only; a lower bound on [`Self::margin`].
    fn working_margin(&self, u: &DMatrix<f64>, eps: f64, xi: f64, zeta: f64) -> f64 {
        let radix: Vec<usize> = self.sys.pieces.iter().map(|b| b.len()).collect();
        let p = self.params(u, eps, xi, zeta);
        self.working
            .borrow()
            .par_iter()
            .map(|&idx| {
                let a = self.sys.a11(&decode(idx, &radix));
                linalg::lambda_max(&super::lmi::lmi_matrix(&a, p.u, p.eps, p.xi, p.zeta_weight))
            })
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }

    /// Adds the `n` worst vertices at the given point to the working set.
    fn grow_working(&self, u: &DMatrix<f64>, eps: f64, xi: f64, zeta: f64, n: usize) {
        let margins = explicit_margins(self.sys, self.params(u, eps, xi, zeta));
        let mut order: Vec<u64> = (0..margins.len() as u64).collect();
        order.sort_by(|&a, &b| margins[b as usize].total_cmp(&margins[a as usize]));
        let mut w = self.working.borrow_mut();
        for idx in order.into_iter().take(n) {
            if !w.contains(&idx) {
                w.push(idx);
            }
        }
    }

    /// Best `ε` for the given `(U, ξ, ζ)` and the margin it achieves.
    fn best_eps(&self, u: &DMatrix<f64>, xi: f64, zeta: f64) -> (f64, f64) {
        let (le, m) = golden_min(|le| self.margin(u, le.exp(), xi, zeta), -25.0, 25.0, 60);
        (le.exp(), m)
    }

    fn feasible(&self, u: &DMatrix<f64>, xi: f64, zeta: f64) -> Option<f64> {
        if !self.explicit {
            let (eps, m) = self.best_eps(u, xi, zeta);
            return (m < -1e-10).then_some(eps);
        }
        if self.working.borrow().is_empty() {
            self.grow_working(u, 1.0, xi, zeta, 32);
        }
        for _ in 0..12 {
            let (le, m) = golden_min(|le| self.working_margin(u, le.exp(), xi, zeta), -25.0, 25.0, 60);
            if m >= -1e-10 {
                return None;
            }
            let eps = le.exp();
            if self.margin(u, eps, xi, zeta) < -1e-10 {
                return Some(eps);
            }
            self.grow_working(u, eps, xi, zeta, 8);
        }
        let (eps, m) = self.best_eps(u, xi, zeta);
        (m < -1e-10).then_some(eps)
    }

    /// Largest `ζ` certifiable with `ξ → 0`, by doubling then bisection.
    fn max_zeta(&self, u: &DMatrix<f64>, cap: Option<f64>) -> f64 {
        let tiny = 1e-12;
        let mut lo = 0.0;
        let mut hi = match cap {
            Some(c) if self.feasible(u, tiny, c).is_some() => return c,
            Some(c) => c,
            None => {
                let mut z = 1e-3;
                while self.feasible(u, tiny, z).is_some() && z < 1e6 {
                    lo = z;
                    z *= 2.0;
                }
                z
            }
        };
        if lo == 0.0 && self.feasible(u, tiny, hi * 1e-6).is_none() {
            return 0.0;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.feasible(u, tiny, mid).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-6 * hi {
                break;
            }
        }
        lo
    }

    /// Eigen-subgradient steps on `U` at fixed `(ε, ξ, ζ)` (explicit mode only).
    fn refine_u(&self, u: &DMatrix<f64>, eps: f64, xi: f64, zeta: f64, iters: usize) -> DMatrix<f64> {
        if !self.explicit || iters == 0 {
            return u.clone();
        }
        let zw = self.mode.weight(zeta);
        let radix: Vec<usize> = self.sys.pieces.iter().map(|b| b.len()).collect();
        let total = self.sys.product_count() as u64;
        let m = u.nrows();
        let mut cur = u.clone();
        let mut cur_val = self.margin(&cur, eps, xi, zeta);
        let mut eta = 0.1;
        for _ in 0..iters {
            let (idx, _) = (0..total)
                .into_par_iter()
                .map(|idx| {
                    let a = self.sys.a11(&decode(idx, &radix));
                    (idx, linalg::lambda_max(&super::lmi::lmi_matrix(&a, &cur, eps, xi, zw)))
                })
                .reduce(|| (0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let a = self.sys.a11(&decode(idx, &radix));
            let (_, z) = linalg::max_eig(&super::lmi::lmi_matrix(&a, &cur, eps, xi, zw));
            let z1 = z.rows(0, m).into_owned();
            let z2 = z.rows(m, m).into_owned();
            let az = &a * &z1;
            let g = &az * z1.transpose() + &z1 * az.transpose() + &z1 * z1.transpose() * xi + &z1 * z2.transpose()
                + &z2 * z1.transpose();
            let gn = g.norm();
            if gn == 0.0 {
                break;
            }
            let mut trial = &cur - &g * (eta * cur.norm() / gn);
            trial = (&trial + trial.transpose()) * 0.5;
            let eig = trial.clone().symmetric_eigen();
            let floor = 1e-6 * eig.eigenvalues.amax();
            let clipped = eig.eigenvalues.map(|v| v.max(floor));
            trial = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
            let val = self.margin(&trial, eps, xi, zeta);
            if val < cur_val {
                cur = trial;
                cur_val = val;
                eta = (eta * 1.5).min(0.5);
            } else {
                eta *= 0.5;
                if eta < 1e-5 {
                    break;
                }
            }
        }
        cur
    }
}

fn decode(mut idx: u64, radix: &[usize]) -> Vec<usize> {
    radix
        .iter()
        .map(|&r| {
            let v = (idx % r as u64) as usize;
            idx /= r as u64;
            v
        })
        .collect()
}

/// Stage 2: certificate search for fixed gains.
pub fn stage2(
    case: &NetworkCase,
    gains: &GainSet,
    hull: &IntervalHull,
    d: f64,
    opts: SynthOptions,
) -> Result<StabilityCertificate> {
    let explicit = hull.product_count() <= opts.explicit_budget;
    let sys = ReducedSystem::new(case, gains, hull, explicit)?;
    let st = Stage2 {
        sys: &sys,
        explicit,
        mode: opts.zeta_mode,
        working: RefCell::new(Vec::new()),
    };
    let l1 = sys.l1.clone();
    let m = l1.nrows();
    let lam2 = linalg::lambda_min(&l1);
    let mut candidates = vec![DMatrix::identity(m, m), l1.clone(), &l1 + DMatrix::identity(m, m) * lam2];
    if !explicit {
        candidates.truncate(2);
        candidates.swap(0, 1);
    }

    let mut best: Option<(DMatrix<f64>, f64)> = None;
    for u in candidates {
        let z = st.max_zeta(&u, opts.zeta_target);
        if best.as_ref().is_none_or(|b| z > b.1) {
            best = Some((u, z));
        }
    }
    let (mut u, mut zeta) = best.expect("at least one candidate");
    if explicit && opts.u_iters > 0 {
        let probe = if zeta > 0.0 { zeta } else { 1e-3 };
        let (eps, _) = st.best_eps(&u, 1e-12, probe);
        let refined = st.refine_u(&u, eps, 1e-12, probe, opts.u_iters);
        let z2 = st.max_zeta(&refined, opts.zeta_target);
        if z2 > zeta {
            u = refined;
            zeta = z2;
        }
    }
    if !(zeta > 0.0) {
        return Err(Error::Synthesis("no positive disturbance degree could be certified".into()));
    }
    // leave room for a positive decay rate
    let zeta = match opts.zeta_target {
        Some(t) if zeta >= t => t * 0.999,
        _ => zeta * 0.999,
    };

    let Some(mut eps) = st.feasible(&u, 1e-12, zeta) else {
        return Err(Error::Synthesis("certificate search lost feasibility".into()));
    };
    let mut lo = 1e-12;
    let mut hi = 1.0;
    while let Some(e) = st.feasible(&u, hi, zeta) {
        lo = hi;
        eps = e;
        hi *= 2.0;
        if hi > 1e9 {
            break;
        }
    }
    while hi - lo > opts.xi_resolution * hi.max(1e-12) {
        let mid = 0.5 * (lo + hi);
        match st.feasible(&u, mid, zeta) {
            Some(e) => {
                lo = mid;
                eps = e;
            }
            None => hi = mid,
        }
    }
    let xi = lo;
    let p = LmiParams {
        u: &u,
        eps,
        xi,
        zeta_weight: opts.zeta_mode.weight(zeta),
    };
    let margins = if explicit {
        explicit_margins(&sys, p)
    } else {
        vec![block_bound_margin(&sys, p)]
    };
    Ok(StabilityCertificate {
        u,
        eps,
        xi,
        zeta,
        d,
        zeta_mode: opts.zeta_mode,
        hull_kind: hull.kind,
        zeta_estimate: opts.zeta_target,
        covers_estimate: opts.zeta_target.is_some_and(|t| zeta >= t * 0.999),
        margins,
        digest: certificate_digest(case, gains),
    })
}

/// Full synthesis: stage 1 gains, stage 2 certificate, then an independent re-verification.
pub fn synthesize_gains(
    case: &NetworkCase,
    hull: &IntervalHull,
    limits: RateLimits,
    caps: &CapacityBox,
    opts: SynthOptions,
) -> Result<(GainSet, StabilityCertificate)> {
    let (gains, d) = stage1(case, hull, limits, caps, opts.stage1_iters)?;
    let cert = stage2(case, &gains, hull, d, opts)?;
    let report = verify_certificate(
        case,
        &gains,
        &cert,
        hull,
        VerifyOptions {
            explicit_budget: opts.explicit_budget,
            search_counterexample: false,
            ..VerifyOptions::default()
        },
    )?;
    if !report.pass {
        return Err(Error::Synthesis(format!(
            "certificate failed re-verification (worst margin {:.3e})",
            report.worst_margin
        )));
    }
    debug_assert!(report.mode == VerifyMode::Explicit || !explicit_or(hull, opts));
    Ok((gains, cert))
}

fn explicit_or(hull: &IntervalHull, opts: SynthOptions) -> bool {
    hull.product_count() <= opts.explicit_budget
}

/// Stacked gains restricted to the inverters of one block.
pub fn block_gains(gains: &GainSet, case: &NetworkCase, block: &HullBlock) -> Result<DMatrix<f64>> {
    let ids: Vec<u32> = block.inverters.iter().map(|&i| case.buses[i].id).collect();
    let k = gains.stacked(&ids)?;
    debug_assert_eq!(k.nrows(), stacked_indices(&block.inverters).len());
    Ok(k)
}

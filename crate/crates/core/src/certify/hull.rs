//! Per-block interval hulls of the inverter Jacobian.
//!
//! Inverters joined only through inverter buses form a block; the Jacobian
//! `∂S_I/∂x_I` is block diagonal over these groups. Each block is sampled over
//! magnitude corners of the buses it touches and a per-line set of branch
//! differences, with every line treated as independent (an outer
//! parameterization that also covers meshed networks).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::vertex::angle_admissible;
use crate::controller::GainSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::netmodel::{graph, Admittance, NetworkCase};

/// Default cap on samples materialized for a single block.
pub const BLOCK_SAMPLE_BUDGET: u128 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullKind {
    /// Convex hull of sampled Jacobian blocks.
    JBar,
    /// Entrywise interval box of each block.
    DBar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullBlock {
    /// Inverter bus indices of the block, ascending.
    pub inverters: Vec<usize>,
    /// Buses whose magnitudes enter the block entries.
    pub relevant: Vec<usize>,
    /// Line indices incident to the block.
    pub lines: Vec<usize>,
    /// Candidate `θ_from − θ_to` per entry of `lines`.
    pub angles: Vec<Vec<f64>>,
    /// Lines whose admittance angle needed interior stationary differences.
    pub augmented: Vec<usize>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub vertices: Vec<DMatrix<f64>>,
}

impl HullBlock {
    pub fn dim(&self) -> usize {
        2 * self.inverters.len()
    }

    pub fn sample_count(&self) -> u128 {
        let mut c: u128 = 1u128 << self.relevant.len();
        for a in &self.angles {
            c = c.saturating_mul(a.len() as u128);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalHull {
    pub kind: HullKind,
    pub blocks: Vec<HullBlock>,
}

impl IntervalHull {
    /// Number of block-diagonal vertex matrices, saturating.
    pub fn product_count(&self) -> u128 {
        self.blocks
            .iter()
            .fold(1u128, |acc, b| acc.saturating_mul(b.vertices.len() as u128))
    }

    /// Full `2n_I × 2n_I` lower and upper entry bounds (zero off the blocks).
    pub fn entry_box(&self, n_i: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut lo = DMatrix::zeros(2 * n_i, 2 * n_i);
        let mut hi = DMatrix::zeros(2 * n_i, 2 * n_i);
        for b in &self.blocks {
            let idx = stacked_indices(&b.inverters);
            for (r, &gr) in idx.iter().enumerate() {
                for (c, &gc) in idx.iter().enumerate() {
                    lo[(gr, gc)] = b.lower[(r, c)];
                    hi[(gr, gc)] = b.upper[(r, c)];
                }
            }
        }
        (lo, hi)
    }
}

/// Interleaved state indices of a set of inverter indices.
pub fn stacked_indices(inverters: &[usize]) -> Vec<usize> {
    inverters.iter().flat_map(|&i| [2 * i, 2 * i + 1]).collect()
}

/// Groups of inverters connected through inverter buses only.
pub fn blocks_of(case: &NetworkCase) -> Vec<Vec<usize>> {
    let inv: Vec<usize> = case.inverters().collect();
    let edges: Vec<_> = case.lines.iter().map(|l| (l.from, l.to)).collect();
    graph::components(&inv, &edges)
}

/// Branch differences in `(−γ, γ)` where a trigonometric term of the line's
/// Jacobian contributions is stationary, for either orientation.
fn stationary_angles(g: f64, b: f64, gamma: f64) -> Vec<f64> {
    let mut roots = Vec::new();
    let bases = [b.atan2(g), (-g).atan2(b)];
    for base in bases {
        for k in -2..=2 {
            let d = base + k as f64 * std::f64::consts::PI;
            for s in [d, -d] {
                if s.abs() < gamma - 1e-12 && s.abs() > 1e-12 {
                    roots.push(s);
                }
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    roots
}

/// Normalized Jacobian block at one parameter assignment.
///
/// `e` holds magnitudes for every bus (only relevant ones are read) and
/// `delta[k]` the difference for `block.lines[k]`.
fn block_matrix(case: &NetworkCase, y: &Admittance, block: &HullBlock, e: &[f64], delta: &[f64]) -> DMatrix<f64> {
    let dim = block.dim();
    let mut m = DMatrix::zeros(dim, dim);
    let local = |bus: usize| block.inverters.iter().position(|&i| i == bus);
    for (a, &i) in block.inverters.iter().enumerate() {
        let ei = e[i];
        let (r_p, r_q) = (2 * a, 2 * a + 1);
        m[(r_p, 2 * a + 1)] += 2.0 * y.g[(i, i)] * ei;
        m[(r_q, 2 * a + 1)] -= 2.0 * y.b[(i, i)] * ei;
        for (k, &li) in block.lines.iter().enumerate() {
            let line = &case.lines[li];
            let (j, d) = if line.from == i {
                (line.to, delta[k])
            } else if line.to == i {
                (line.from, -delta[k])
            } else {
                continue;
            };
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            let (s, c) = d.sin_cos();
            let along = g * c + b * s;
            let across = g * s - b * c;
            let ej = e[j];
            m[(r_p, 2 * a)] -= ei * ej * across;
            m[(r_p, 2 * a + 1)] += ej * along;
            m[(r_q, 2 * a)] += ei * ej * along;
            m[(r_q, 2 * a + 1)] += ej * across;
            if let Some(bl) = local(j) {
                m[(r_p, 2 * bl)] += ei * ej * across;
                m[(r_p, 2 * bl + 1)] += ei * along;
                m[(r_q, 2 * bl)] -= ei * ej * along;
                m[(r_q, 2 * bl + 1)] += ei * across;
            }
        }
        let (ps, qs) = (case.p_star(i).unwrap(), case.q_star(i).unwrap());
        for c in 0..dim {
            m[(r_p, c)] /= ps;
            m[(r_q, c)] /= qs;
        }
    }
    m
}

fn describe_block(case: &NetworkCase, y: &Admittance, inverters: &[usize]) -> HullBlock {
    let gamma = case.gamma();
    let mut lines = Vec::new();
    let mut relevant: Vec<usize> = inverters.to_vec();
    for (k, l) in case.lines.iter().enumerate() {
        if inverters.contains(&l.from) || inverters.contains(&l.to) {
            lines.push(k);
            relevant.push(l.from);
            relevant.push(l.to);
        }
    }
    relevant.sort_unstable();
    relevant.dedup();
    let mut angles = Vec::with_capacity(lines.len());
    let mut augmented = Vec::new();
    for &k in &lines {
        let l = &case.lines[k];
        let mut cand = vec![-gamma, 0.0, gamma];
        if !angle_admissible(y.angle(l.from, l.to), gamma) {
            let extra = stationary_angles(y.g[(l.from, l.to)], y.b[(l.from, l.to)], gamma);
            if !extra.is_empty() {
                augmented.push(k);
                cand.extend(extra);
                cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
        }
        angles.push(cand);
    }
    let dim = 2 * inverters.len();
    HullBlock {
        inverters: inverters.to_vec(),
        relevant,
        lines,
        angles,
        augmented,
        lower: DMatrix::zeros(dim, dim),
        upper: DMatrix::zeros(dim, dim),
        vertices: Vec::new(),
    }
}

/// Every sampled Jacobian block, in mixed-radix order (magnitudes fastest).
pub fn block_samples(case: &NetworkCase, y: &Admittance, block: &HullBlock) -> Vec<DMatrix<f64>> {
    let nr = block.relevant.len();
    let total = block.sample_count() as usize;
    (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut e = vec![1.0; case.n()];
            let mask = idx & ((1usize << nr) - 1);
            for (bit, &bus) in block.relevant.iter().enumerate() {
                let b = &case.buses[bus];
                e[bus] = if mask >> bit & 1 == 1 { b.e_max } else { b.e_min };
            }
            let mut rest = idx >> nr;
            let delta: Vec<f64> = block
                .angles
                .iter()
                .map(|cand| {
                    let v = cand[rest % cand.len()];
                    rest /= cand.len();
                    v
                })
                .collect();
            block_matrix(case, y, block, &e, &delta)
        })
        .collect()
}

fn entrywise_bounds(samples: &[DMatrix<f64>], dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut lo = DMatrix::from_element(dim, dim, f64::INFINITY);
    let mut hi = DMatrix::from_element(dim, dim, f64::NEG_INFINITY);
    for s in samples {
        lo.zip_apply(s, |a, b| *a = a.min(b));
        hi.zip_apply(s, |a, b| *a = a.max(b));
    }
    (lo, hi)
}

/// All vertices of an entrywise box, skipping degenerate entries.
fn box_vertices(lo: &DMatrix<f64>, hi: &DMatrix<f64>, budget: u128) -> Result<Vec<DMatrix<f64>>> {
    let free: Vec<usize> = (0..lo.len()).filter(|&k| hi[k] > lo[k]).collect();
    if free.len() >= 127 || (1u128 << free.len()) > budget {
        return Err(Error::VertexBudget {
            count: if free.len() >= 127 { u128::MAX } else { 1u128 << free.len() },
            budget,
            hint: "the entry-box hull is only practical for blocks of at most two inverters; use the sampled hull",
        });
    }
    Ok((0..1usize << free.len())
        .map(|mask| {
            let mut m = lo.clone();
            for (bit, &k) in free.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    m[k] = hi[k];
                }
            }
            m
        })
        .collect())
}

/// Per-entry lower and upper bounds of one block over its sample set.
pub fn entry_bounds(case: &NetworkCase, y: &Admittance, inverters: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let block = describe_block(case, y, inverters);
    let samples = block_samples(case, y, &block);
    entrywise_bounds(&samples, block.dim())
}

/// Builds the hull for every block of the case.
pub fn build_hull(case: &NetworkCase, y: &Admittance, kind: HullKind, budget: u128) -> Result<IntervalHull> {
    let mut blocks = Vec::new();
    for inv in blocks_of(case) {
        let mut block = describe_block(case, y, &inv);
        let count = block.sample_count();
        if count > budget {
            return Err(Error::VertexBudget {
                count,
                budget,
                hint: "block touches too many buses and lines to sample",
            });
        }
        let samples = block_samples(case, y, &block);
        let (lo, hi) = entrywise_bounds(&samples, block.dim());
        block.lower = lo;
        block.upper = hi;
        block.vertices = match kind {
            HullKind::JBar => samples,
            HullKind::DBar => box_vertices(&block.lower, &block.upper, budget)?,
        };
        blocks.push(block);
    }
    Ok(IntervalHull { kind, blocks })
}

/// Outcome of the per-block negative-definiteness check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockFeasibility {
    pub pass: bool,
    /// Largest `λ_max(D K + Kᵀ Dᵀ)` found over all blocks and vertices.
    pub worst: f64,
    pub worst_block: usize,
    pub worst_vertex: usize,
    /// Per block: largest eigenvalue over its vertices.
    pub per_block: Vec<f64>,
    /// Per block: largest `‖D K‖₂` over its vertices.
    pub norms: Vec<f64>,
}

impl BlockFeasibility {
    /// Margin `d` actually achieved, `-worst`.
    pub fn margin(&self) -> f64 {
        -self.worst
    }
}

/// Stacked gain of a block in the block's inverter order.
pub fn block_gain(case: &NetworkCase, gains: &GainSet, inverters: &[usize]) -> Result<DMatrix<f64>> {
    let ids: Vec<u32> = inverters.iter().map(|&i| case.buses[i].id).collect();
    gains.stacked(&ids)
}

/// `(λ_max(DK + KᵀDᵀ), ‖DK‖₂)` for one vertex.
pub fn vertex_eval(d: &DMatrix<f64>, k: &DMatrix<f64>) -> (f64, f64) {
    let w = d * k;
    (linalg::lambda_max(&linalg::sym2(&w)), linalg::norm2(&w))
}

/// Checks `λ_max(D K_c + K_cᵀ Dᵀ) ≤ −d` over every vertex of every block.
pub fn block_feasibility(case: &NetworkCase, gains: &GainSet, hull: &IntervalHull, d: f64) -> Result<BlockFeasibility> {
    let mut per_block = Vec::with_capacity(hull.blocks.len());
    let mut norms = Vec::with_capacity(hull.blocks.len());
    let (mut worst, mut worst_block, mut worst_vertex) = (f64::NEG_INFINITY, 0, 0);
    for (bi, block) in hull.blocks.iter().enumerate() {
        let k = block_gain(case, gains, &block.inverters)?;
        let evals: Vec<(f64, f64)> = block.vertices.par_iter().map(|d| vertex_eval(d, &k)).collect();
        let (vi, top) = evals
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, e)| if e.0 > acc.1 { (i, e.0) } else { acc });
        per_block.push(top);
        norms.push(evals.iter().map(|e| e.1).fold(0.0, f64::max));
        if top > worst {
            worst = top;
            worst_block = bi;
            worst_vertex = vi;
        }
    }
    Ok(BlockFeasibility {
        pass: worst <= -d + 1e-9,
        worst,
        worst_block,
        worst_vertex,
        per_block,
        norms,
    })
}

/// Restricts a hull to a surviving subset of inverters by taking principal
/// submatrices of every vertex. Blocks with no survivors disappear.
pub fn restrict_hull(hull: &IntervalHull, survivors: &[usize]) -> IntervalHull {
    let mut blocks = Vec::new();
    for b in &hull.blocks {
        let keep_inv: Vec<usize> = b.inverters.iter().copied().filter(|i| survivors.contains(i)).collect();
        if keep_inv.is_empty() {
            continue;
        }
        let keep: Vec<usize> = b
            .inverters
            .iter()
            .enumerate()
            .filter(|(_, i)| survivors.contains(i))
            .flat_map(|(a, _)| [2 * a, 2 * a + 1])
            .collect();
        blocks.push(HullBlock {
            inverters: keep_inv,
            relevant: b.relevant.clone(),
            lines: b.lines.clone(),
            angles: b.angles.clone(),
            augmented: b.augmented.clone(),
            lower: linalg::principal(&b.lower, &keep),
            upper: linalg::principal(&b.upper, &keep),
            vertices: b.vertices.iter().map(|v| linalg::principal(v, &keep)).collect(),
        });
    }
    IntervalHull { kind: hull.kind, blocks }
}

//! Extreme voltage profiles of the security set.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netmodel::{graph, Admittance, NetworkCase};
use crate::powerflow::VoltageProfile;

const ANGLE_TOL: f64 = 1e-12;

/// Admittance angle folded into `(−π/2, π/2]`.
pub fn reduced_angle(phi: f64) -> f64 {
    let mut r = phi.rem_euclid(PI);
    if r > FRAC_PI_2 {
        r -= PI;
    }
    r
}

/// Whether an admittance angle keeps every trigonometric term of the
/// Jacobian monotone over branch differences in `[−γ, γ]`.
pub fn angle_admissible(phi: f64, gamma: f64) -> bool {
    let r = reduced_angle(phi).abs();
    (r - FRAC_PI_2).abs() <= ANGLE_TOL || r + gamma <= FRAC_PI_2 + ANGLE_TOL
}

/// Checks every nonzero admittance entry; the error names the first offender.
pub fn check_angle_hypothesis(case: &NetworkCase, y: &Admittance) -> Result<()> {
    let gamma = case.gamma();
    for i in 0..y.n() {
        for j in 0..y.n() {
            if y.y[(i, j)].norm() == 0.0 {
                continue;
            }
            let phi = y.angle(i, j);
            if !angle_admissible(phi, gamma) {
                return Err(Error::AngleHypothesis {
                    from: case.buses[i].id,
                    to: case.buses[j].id,
                    phi,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexSample {
    pub profile: VoltageProfile,
    /// Per bus: magnitude at its upper bound.
    pub e_high: Vec<bool>,
    /// Per line: branch difference `θ_from − θ_to` as a multiple of `γ` (−1, 0 or 1).
    pub delta: Vec<i8>,
    /// Every non-tree line carries its assigned difference.
    pub cycle_consistent: bool,
    /// Some non-tree line ends up with a difference beyond `γ`.
    pub over_range: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    pub samples: Vec<VertexSample>,
}

/// `2^n · 3^|lines|`, saturating.
pub fn vertex_count(case: &NetworkCase) -> u128 {
    let mut c: u128 = 1;
    for _ in 0..case.n() {
        c = c.saturating_mul(2);
    }
    for _ in 0..case.lines.len() {
        c = c.saturating_mul(3);
    }
    c
}

/// All magnitude-corner and branch-difference combinations, realized along a
/// breadth-first spanning tree rooted at bus 0 with `θ_0 = 0`.
pub fn vertex_samples(case: &NetworkCase, y: &Admittance, budget: u128) -> Result<VertexSet> {
    let count = vertex_count(case);
    if count > budget {
        return Err(Error::VertexBudget {
            count,
            budget,
            hint: "enumerate per block with the block hull instead",
        });
    }
    check_angle_hypothesis(case, y)?;
    let n = case.n();
    let m = case.lines.len();
    let gamma = case.gamma();
    let edges: Vec<_> = case.lines.iter().map(|l| (l.from, l.to)).collect();
    let (parent, order) = graph::spanning_tree(n, &edges);
    let mut in_tree = vec![false; m];
    for p in parent.iter().flatten() {
        in_tree[p.1] = true;
    }

    let mut samples = Vec::with_capacity(count as usize);
    let mut delta = vec![-1i8; m];
    loop {
        let mut theta: DVector<f64> = DVector::zeros(n);
        for &v in &order {
            if let Some((u, k)) = parent[v] {
                let d = delta[k] as f64 * gamma;
                theta[v] = if case.lines[k].to == v { theta[u] - d } else { theta[u] + d };
            }
        }
        let mut consistent = true;
        let mut over = false;
        for k in (0..m).filter(|&k| !in_tree[k]) {
            let l = &case.lines[k];
            let implied = theta[l.from] - theta[l.to];
            if (implied - delta[k] as f64 * gamma).abs() > 1e-12 {
                consistent = false;
            }
            if implied.abs() > gamma + 1e-12 {
                over = true;
            }
        }
        for mask in 0..(1u64 << n) {
            let e_high: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let e = DVector::from_iterator(
                n,
                case.buses
                    .iter()
                    .zip(&e_high)
                    .map(|(b, &h)| if h { b.e_max } else { b.e_min }),
            );
            samples.push(VertexSample {
                profile: VoltageProfile {
                    theta: theta.clone(),
                    e,
                },
                e_high,
                delta: delta.clone(),
                cycle_consistent: consistent,
                over_range: over,
            });
        }
        let mut k = 0;
        while k < m {
            if delta[k] < 1 {
                delta[k] += 1;
                break;
            }
            delta[k] = -1;
            k += 1;
        }
        if k == m {
            break;
        }
    }
    Ok(VertexSet { samples })
}

/// Random corner profiles: magnitudes at a box end, angles in `{−γ/2, 0, γ/2}`,
/// so every profile lies in the security set. Used where the full vertex set
/// is too large to enumerate.
pub fn corner_profiles(case: &NetworkCase, count: usize, seed: u64) -> Vec<VoltageProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 * case.gamma();
    (0..count)
        .map(|_| {
            let theta = DVector::from_fn(case.n(), |_, _| half * (rng.random_range(0..3) as f64 - 1.0));
            let e = DVector::from_iterator(
                case.n(),
                case.buses
                    .iter()
                    .map(|b| if rng.random_bool(0.5) { b.e_max } else { b.e_min }),
            );
            VoltageProfile { theta, e }
        })
        .collect()
}

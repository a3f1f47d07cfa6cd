use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix2};

use microgrid::certify::{
    block_feasibility, blocks_of, build_hull, certificate_digest, corner_profiles, synthesize_gains,
    verify_certificate, vertex_samples, zeta_estimate, CapacityBox, HullKind, IntervalHull, StabilityCertificate,
    SynthOptions, VerifyMode, VerifyOptions, BLOCK_SAMPLE_BUDGET, MARGIN_TOL,
};
use microgrid::controller::{GainSet, RateLimits};
use microgrid::netmodel::{build_admittance, NetworkCase, ShuntLoads};
use microgrid::{data, testnets, Error};

fn bundled_hull() -> (NetworkCase, IntervalHull) {
    let case = data::ieee14();
    let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
    let hull = build_hull(&case, &y, HullKind::JBar, BLOCK_SAMPLE_BUDGET).unwrap();
    (case, hull)
}

#[test]
fn bundled_case_has_three_blocks() {
    let case = data::ieee14();
    let ids: Vec<Vec<u32>> = blocks_of(&case)
        .iter()
        .map(|b| b.iter().map(|&i| case.buses[i].id).collect())
        .collect();
    assert_eq!(ids, vec![vec![1, 2, 3], vec![6], vec![8]]);
}

#[test]
fn bundled_hull_sizes_and_bounds() {
    let (_, hull) = bundled_hull();
    let sizes: Vec<usize> = hull.blocks.iter().map(|b| b.vertices.len()).collect();
    assert_eq!(sizes, [64800, 2592, 12]);
    assert_eq!(hull.product_count(), 64800 * 2592 * 12);
    let first = &hull.blocks[0];
    assert!(first.lower.iter().chain(first.upper.iter()).all(|v| v.is_finite()));
    assert!(first.lower.zip_map(&first.upper, |a, b| a <= b).iter().all(|&ok| ok));
}

// The published gains do not make the {1, 2, 3} block negative definite on
// this hull; the two singleton blocks pass.
#[test]
fn published_gains_block_check_is_pinned() {
    let (case, hull) = bundled_hull();
    let bf = block_feasibility(&case, &data::published_gains(), &hull, 0.0).unwrap();
    let expected = [0.5121589129758686, -0.30308909938243883, -0.5458095806834924];
    for (got, want) in bf.per_block.iter().zip(expected) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert!(!bf.pass);
    assert_eq!(bf.worst_block, 0);
}

#[test]
fn bundled_certificate_verifies() {
    let (case, hull) = bundled_hull();
    let gains = data::synthesized_gains();
    let cert = data::synthesized_certificate();
    assert_eq!(cert.digest, certificate_digest(&case, &gains));
    let rep = verify_certificate(&case, &gains, &cert, &hull, VerifyOptions::default()).unwrap();
    assert!(rep.pass);
    assert_eq!(rep.mode, VerifyMode::BlockBound);
    assert!(rep.worst_margin <= MARGIN_TOL);
    let bf = block_feasibility(&case, &gains, &hull, cert.d).unwrap();
    assert!(bf.pass);
    assert_eq!(StabilityCertificate::parse(&cert.to_json()).unwrap(), cert);
}

#[test]
fn certificate_for_other_gains_is_rejected() {
    let (case, hull) = bundled_hull();
    let cert = data::synthesized_certificate();
    let rep = verify_certificate(&case, &data::published_gains(), &cert, &hull, VerifyOptions::default()).unwrap();
    assert!(!rep.digest_ok);
    assert!(!rep.pass);
}

#[test]
fn bundled_synthesis_is_reproducible() {
    let (case, hull) = bundled_hull();
    let (gains, cert) = synthesize_gains(
        &case,
        &hull,
        RateLimits::default(),
        &CapacityBox::from_case(&case),
        SynthOptions::default(),
    )
    .unwrap();
    assert!(block_feasibility(&case, &gains, &hull, cert.d).unwrap().pass);
    let rep = verify_certificate(&case, &gains, &cert, &hull, VerifyOptions::default()).unwrap();
    assert!(rep.pass);
    assert_eq!(cert.digest, data::synthesized_certificate().digest);
}

#[test]
fn triangle_vertex_flags_match_implied_differences() {
    let tri = testnets::triangle_constant_power();
    let y = build_admittance(&tri, ShuntLoads::Exclude).unwrap();
    let z = vertex_samples(&tri, &y, 1_000).unwrap();
    assert_eq!(z.samples.len(), 216);
    let gamma = tri.gamma();
    for s in &z.samples {
        let all_match = tri.lines.iter().zip(&s.delta).all(|(l, &d)| {
            let implied = s.profile.theta[l.from] - s.profile.theta[l.to];
            (implied - d as f64 * gamma).abs() < 1e-12
        });
        assert_eq!(s.cycle_consistent, all_match);
    }
    assert!(z.samples.iter().any(|s| s.cycle_consistent));
    assert!(z.samples.iter().any(|s| !s.cycle_consistent));
}

fn scalar_hull(case: &NetworkCase, scales: &[f64]) -> IntervalHull {
    let y = build_admittance(case, ShuntLoads::Exclude).unwrap();
    let mut hull = build_hull(case, &y, HullKind::JBar, BLOCK_SAMPLE_BUDGET).unwrap();
    for b in &mut hull.blocks {
        assert_eq!(b.inverters.len(), 1);
        b.vertices = scales.iter().map(|&s| DMatrix::identity(2, 2) * s).collect();
        b.lower = DMatrix::identity(2, 2) * scales.iter().copied().fold(f64::INFINITY, f64::min);
        b.upper = DMatrix::identity(2, 2) * scales.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    hull
}

#[test]
fn scalar_hull_synthesis_gives_negative_gains() {
    let case = testnets::zero_load_path();
    let hull = scalar_hull(&case, &[0.5, 2.0]);
    let (gains, cert) = synthesize_gains(
        &case,
        &hull,
        RateLimits::default(),
        &CapacityBox::from_case(&case),
        SynthOptions::default(),
    )
    .unwrap();
    for id in [1, 2] {
        let k = gains.block(id).unwrap();
        let sym = (k + k.transpose()) * 0.5;
        assert!(sym.symmetric_eigen().eigenvalues.max() < 0.0, "K_{id} = {k}");
    }
    let rep = verify_certificate(&case, &gains, &cert, &hull, VerifyOptions::default()).unwrap();
    assert!(rep.pass);
    assert_eq!(rep.mode, VerifyMode::Explicit);
}

#[test]
fn sign_ambiguous_hull_fails_cleanly() {
    let case = testnets::zero_load_path();
    let hull = scalar_hull(&case, &[1.0, -1.0]);
    let r = synthesize_gains(
        &case,
        &hull,
        RateLimits::default(),
        &CapacityBox::from_case(&case),
        SynthOptions::default(),
    );
    assert!(matches!(r, Err(Error::Synthesis(_))), "{r:?}");
}

fn uniform_gains(case: &NetworkCase, k: Matrix2<f64>) -> GainSet {
    let map: BTreeMap<u32, Matrix2<f64>> = case.inverters().map(|i| (case.buses[i].id, k)).collect();
    GainSet::new(map, RateLimits::default()).unwrap()
}

#[test]
fn disturbance_degree_estimate_edge_cases() {
    let single = testnets::single_inverter();
    let y = build_admittance(&single, ShuntLoads::Exclude).unwrap();
    let g = uniform_gains(&single, Matrix2::new(-1.0, 0.0, 0.0, -1.0));
    assert_eq!(zeta_estimate(&single, &y, &g, &corner_profiles(&single, 4, 0)).unwrap(), 0.0);

    let tri = testnets::triangle_constant_power();
    let y = build_admittance(&tri, ShuntLoads::Exclude).unwrap();
    let zero = uniform_gains(&tri, Matrix2::zeros());
    assert_eq!(zeta_estimate(&tri, &y, &zero, &corner_profiles(&tri, 4, 0)).unwrap(), 0.0);

    let (case, _) = bundled_hull();
    let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
    let z = zeta_estimate(&case, &y, &data::published_gains(), &corner_profiles(&case, 200, 0)).unwrap();
    assert!(z.is_finite() && z > 0.0);
}

//! Sufficient conditions for a secure power-flow solution to exist.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::netmodel::{graph, Admittance, BusKind, NetworkCase};

/// User-supplied admissible injection ranges, keyed by bus id.
#[derive(Debug, Clone, Default, PartialEq, serde::Deserialize, Serialize)]
pub struct InjectionRanges {
    #[serde(default)]
    pub p: BTreeMap<u32, (f64, f64)>,
    #[serde(default)]
    pub q: BTreeMap<u32, (f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub label: char,
    pub description: &'static str,
    pub verdict: Verdict,
    /// Offending bus ids, or line endpoints as consecutive pairs.
    pub violations: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExistenceReport {
    pub conditions: Vec<Condition>,
}

impl ExistenceReport {
    pub fn get(&self, label: char) -> &Condition {
        self.conditions.iter().find(|c| c.label == label).expect("known label")
    }

    /// True when no checked condition failed.
    pub fn all_checked_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.verdict != Verdict::Fail)
    }
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Evaluates conditions (a) to (f) of the classical existence result.
///
/// `B_jk` is the imaginary part of `Y_jk`. Condition (f) is only checked
/// when ranges are supplied; inverters are tested at their nominal injection
/// and loads at their demand drawn at 1 p.u.
pub fn check_existence(case: &NetworkCase, y: &Admittance, ranges: Option<&InjectionRanges>) -> ExistenceReport {
    let n = case.n();
    let ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
    let mut out = Vec::new();

    let edges: Vec<_> = case.lines.iter().map(|l| (l.from, l.to)).collect();
    out.push(Condition {
        label: 'a',
        description: "electrical network connected",
        verdict: verdict(graph::is_connected(&(0..n).collect::<Vec<_>>(), &edges)),
        violations: vec![],
    });

    let mut asym = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if y.y[(i, j)] != y.y[(j, i)] {
                asym.extend([ids[i], ids[j]]);
            }
        }
    }
    out.push(Condition {
        label: 'b',
        description: "admittance matrix symmetric",
        verdict: verdict(asym.is_empty()),
        violations: asym,
    });

    let lo = case.buses.iter().map(|b| b.e_min).fold(f64::INFINITY, f64::min);
    let hi = case.buses.iter().map(|b| b.e_max).fold(f64::NEG_INFINITY, f64::max);
    let weak: Vec<u32> = case
        .buses
        .iter()
        .filter(|b| 2.0 * b.e_min <= hi)
        .map(|b| b.id)
        .collect();
    out.push(Condition {
        label: 'c',
        description: "2 E_j > E_k for all buses over the voltage box",
        verdict: verdict(2.0 * lo > hi),
        violations: weak,
    });

    let mut hot = Vec::new();
    for l in &case.lines {
        let b = y.b[(l.from, l.to)];
        if l.i_max > FRAC_PI_2 * b {
            hot.extend([ids[l.from], ids[l.to]]);
        }
    }
    out.push(Condition {
        label: 'd',
        description: "line current limits within pi/2 times line susceptance",
        verdict: verdict(hot.is_empty()),
        violations: hot,
    });

    let mut bad = Vec::new();
    let mut strict = false;
    for j in case.loads() {
        let to_inverters: f64 = case.inverters().map(|k| y.b[(j, k)]).sum();
        let lhs = case.buses[j].e_min * (-y.b[(j, j)] + to_inverters);
        let rhs: f64 = (0..n).filter(|&k| k != j).map(|k| y.b[(j, k)] * case.buses[k].e_max).sum();
        if lhs < rhs {
            bad.push(ids[j]);
        } else if lhs > rhs {
            strict = true;
        }
    }
    let e_ok = bad.is_empty() && (strict || case.n_loads() == 0);
    out.push(Condition {
        label: 'e',
        description: "load-bus susceptance dominance, strict at one load bus or more",
        verdict: verdict(e_ok),
        violations: bad,
    });

    let f = match ranges {
        None => Condition {
            label: 'f',
            description: "injections within serviceable ranges",
            verdict: Verdict::NotChecked,
            violations: vec![],
        },
        Some(r) => {
            let mut miss = Vec::new();
            for bus in &case.buses {
                let (p, q, check_q) = match bus.kind {
                    BusKind::Inverter { p_star, q_star, .. } => (p_star, q_star, false),
                    BusKind::Load(m) => {
                        let (pd, qd) = m.nominal();
                        (-pd, -qd, true)
                    }
                };
                let outside = |v: f64, range: Option<&(f64, f64)>| range.is_some_and(|&(a, b)| v < a || v > b);
                if outside(p, r.p.get(&bus.id)) || (check_q && outside(q, r.q.get(&bus.id))) {
                    miss.push(bus.id);
                }
            }
            Condition {
                label: 'f',
                description: "injections within serviceable ranges",
                verdict: verdict(miss.is_empty()),
                violations: miss,
            }
        }
    };
    out.push(f);
    ExistenceReport { conditions: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_admittance, ShuntLoads};
    use crate::testnets;

    #[test]
    fn voltage_box_condition() {
        let case = testnets::two_bus_inductive(1.0);
        let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let rep = check_existence(&case, &y, None);
        assert_eq!(rep.get('c').verdict, Verdict::Pass);
        assert_eq!(rep.get('f').verdict, Verdict::NotChecked);
    }

    #[test]
    fn current_limit_above_susceptance_fails() {
        let mut case = testnets::two_bus_inductive(1.0);
        case.lines[0].i_max = 2.0;
        let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let rep = check_existence(&case, &y, None);
        assert_eq!(rep.get('d').verdict, Verdict::Fail);
        assert_eq!(rep.get('d').violations, vec![case.buses[0].id, case.buses[1].id]);
    }

    #[test]
    fn ranges_are_checked_when_given() {
        let case = testnets::two_bus_inductive(1.0);
        let y = build_admittance(&case, ShuntLoads::Exclude).unwrap();
        let mut r = InjectionRanges::default();
        r.p.insert(case.buses[0].id, (0.0, 0.1));
        let rep = check_existence(&case, &y, Some(&r));
        assert_eq!(rep.get('f').verdict, Verdict::Fail);
    }
}

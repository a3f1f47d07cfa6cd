//! Fault events and the operating condition they leave behind.

use serde::{Deserialize, Serialize};

use crate::certify::{block_feasibility, restrict_hull, BlockFeasibility, IntervalHull};
use crate::controller::{ControlState, GainSet};
use crate::error::{Error, Result};
use crate::netmodel::{graph, LoadModel, NetworkCase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum FaultKind {
    /// Inverter at this bus disconnects.
    DerLoss { bus: u32 },
    /// Communication link between two inverter buses fails.
    CommLoss { a: u32, b: u32 },
    /// Load at this bus changes by `(dp, dq)` at nominal voltage.
    LoadStep { bus: u32, dp: f64, dq: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(flatten)]
    pub kind: FaultKind,
}

/// The network as currently operated: surviving inverters, surviving links,
/// and the reclassified case the simulation integrates.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingCondition {
    /// Original case with any load steps applied.
    pub base: NetworkCase,
    /// `base` with lost inverters turned into load buses.
    pub case: NetworkCase,
    /// Ids of lost inverters, ascending.
    pub lost: Vec<u32>,
    /// Surviving links as id pairs with `a < b`, ascending.
    pub edges: Vec<(u32, u32)>,
    /// Model of a lost inverter bus.
    pub residual: LoadModel,
    pub control: ControlState,
    pub connected: bool,
}

/// What an event changed, besides the condition itself.
#[derive(Debug, Clone, PartialEq)]
pub enum Reclassification {
    /// Inverter bus now treated as a load bus.
    InverterToLoad(u32),
    CommLinkDropped { a: u32, b: u32 },
    LoadChanged(u32),
    /// Event repeated an earlier one.
    Unchanged,
}

fn ordered(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

impl OperatingCondition {
    /// Healthy condition: every inverter online, every link up, lost
    /// inverters modeled as open switches.
    pub fn initial(case: &NetworkCase) -> Self {
        Self::with_residual(case, LoadModel::ConstantPower { p: 0.0, q: 0.0 })
    }

    pub fn with_residual(case: &NetworkCase, residual: LoadModel) -> Self {
        let mut edges: Vec<(u32, u32)> = case
            .comm_edges
            .iter()
            .map(|&(a, b)| ordered(case.buses[a].id, case.buses[b].id))
            .collect();
        edges.sort_unstable();
        OperatingCondition {
            base: case.clone(),
            case: case.clone(),
            lost: Vec::new(),
            edges,
            residual,
            control: ControlState::full(case),
            connected: case.comm_connected(),
        }
    }

    fn rebuild(base: NetworkCase, lost: Vec<u32>, edges: Vec<(u32, u32)>, residual: LoadModel) -> Result<Self> {
        let case = base.reconfigured(&lost, residual, &edges)?;
        let control = ControlState::full(&case);
        let connected = case.comm_connected();
        Ok(OperatingCondition {
            base,
            case,
            lost,
            edges,
            residual,
            control,
            connected,
        })
    }

    /// Ids of the inverters still online.
    pub fn active_ids(&self) -> &[u32] {
        &self.control.ids
    }

    /// Certification of the condition requires a connected comm graph.
    pub fn certified(&self) -> bool {
        self.connected
    }

    pub fn is_lost(&self, id: u32) -> bool {
        self.lost.binary_search(&id).is_ok()
    }
}

/// Applies one event. Disconnecting the comm graph is allowed and leaves the
/// condition uncertified.
pub fn apply_event(cond: &OperatingCondition, event: &FaultEvent) -> Result<(OperatingCondition, Reclassification)> {
    if !event.time.is_finite() {
        return Err(Error::InvalidEvent("event time is not finite".into()));
    }
    match event.kind {
        FaultKind::DerLoss { bus } => {
            let Some(i) = cond.base.index_of(bus) else {
                return Err(Error::InvalidEvent(format!("no bus {bus}")));
            };
            if !cond.base.buses[i].is_inverter() {
                return Err(Error::InvalidEvent(format!("bus {bus} is not an inverter bus")));
            }
            if cond.is_lost(bus) {
                return Ok((cond.clone(), Reclassification::Unchanged));
            }
            let mut lost = cond.lost.clone();
            lost.push(bus);
            lost.sort_unstable();
            let edges = cond.edges.iter().copied().filter(|&(a, b)| a != bus && b != bus).collect();
            let next = OperatingCondition::rebuild(cond.base.clone(), lost, edges, cond.residual)?;
            Ok((next, Reclassification::InverterToLoad(bus)))
        }
        FaultKind::CommLoss { a, b } => {
            let e = ordered(a, b);
            let Ok(pos) = cond.edges.binary_search(&e) else {
                return Err(Error::InvalidEvent(format!("no comm link {a}-{b}")));
            };
            let mut edges = cond.edges.clone();
            edges.remove(pos);
            let next = OperatingCondition::rebuild(cond.base.clone(), cond.lost.clone(), edges, cond.residual)?;
            Ok((next, Reclassification::CommLinkDropped { a: e.0, b: e.1 }))
        }
        FaultKind::LoadStep { bus, dp, dq } => {
            let Some(i) = cond.base.index_of(bus) else {
                return Err(Error::InvalidEvent(format!("no bus {bus}")));
            };
            let Some(model) = cond.base.buses[i].load_model() else {
                return Err(Error::InvalidEvent(format!("bus {bus} is not a load bus")));
            };
            if !(dp.is_finite() && dq.is_finite()) {
                return Err(Error::InvalidEvent("load step is not finite".into()));
            }
            let base = cond.base.with_load(bus, model.stepped(dp, dq))?;
            let next = OperatingCondition::rebuild(base, cond.lost.clone(), cond.edges.clone(), cond.residual)?;
            Ok((next, Reclassification::LoadChanged(bus)))
        }
    }
}

/// Result of re-checking block feasibility on a survivor set.
#[derive(Debug, Clone, PartialEq)]
pub enum InheritedFeasibility {
    /// Survivor comm graph disconnected; nothing is claimed.
    Skipped,
    Checked {
        report: BlockFeasibility,
        /// Margin at least the full-system margin, up to `1e-9`.
        inherits: bool,
    },
}

impl InheritedFeasibility {
    pub fn passed(&self) -> Option<bool> {
        match self {
            InheritedFeasibility::Skipped => None,
            InheritedFeasibility::Checked { report, .. } => Some(report.pass),
        }
    }
}

/// Restricts gains and hull to the surviving inverters and re-runs the block
/// check at margin `d`. `survivors` are bus ids; `edges` the surviving links.
pub fn inherited_feasibility(
    case: &NetworkCase,
    gains: &GainSet,
    hull: &IntervalHull,
    survivors: &[u32],
    edges: &[(u32, u32)],
    d: f64,
) -> Result<InheritedFeasibility> {
    let mut idx = Vec::with_capacity(survivors.len());
    for &id in survivors {
        match case.index_of(id) {
            Some(i) if case.buses[i].is_inverter() => idx.push(i),
            _ => return Err(Error::Validation(format!("bus {id} is not an inverter of the case"))),
        }
    }
    idx.sort_unstable();
    let mut local = Vec::new();
    for &(a, b) in edges {
        let (Some(i), Some(j)) = (case.index_of(a), case.index_of(b)) else {
            return Err(Error::Validation(format!("comm edge {a}-{b} names an unknown bus")));
        };
        if idx.contains(&i) && idx.contains(&j) {
            local.push((i, j));
        }
    }
    if idx.is_empty() || !graph::is_connected(&idx, &local) {
        return Ok(InheritedFeasibility::Skipped);
    }
    let restricted = restrict_hull(hull, &idx);
    let report = block_feasibility(case, gains, &restricted, d)?;
    let inherits = report.margin() >= d - 1e-9;
    Ok(InheritedFeasibility::Checked { report, inherits })
}

/// Every nonempty survivor subset of the case's inverters with its induced
/// comm links, in ascending bitmask order.
pub fn survivor_subsets(case: &NetworkCase) -> Vec<(Vec<u32>, Vec<(u32, u32)>)> {
    let n = case.n_inverters();
    let ids: Vec<u32> = case.inverters().map(|i| case.buses[i].id).collect();
    (1u64..(1 << n))
        .map(|mask| {
            let keep: Vec<u32> = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ids[k]).collect();
            let edges = case
                .comm_edges
                .iter()
                .map(|&(a, b)| ordered(case.buses[a].id, case.buses[b].id))
                .filter(|(a, b)| keep.contains(a) && keep.contains(b))
                .collect();
            (keep, edges)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::laplacian;
    use crate::testnets;

    fn der(bus: u32) -> FaultEvent {
        FaultEvent {
            time: 1.0,
            kind: FaultKind::DerLoss { bus },
        }
    }

    #[test]
    fn losing_an_inverter_reclassifies_it() {
        let case = testnets::three_inverter_feeder();
        let c0 = OperatingCondition::initial(&case);
        let (c1, r) = apply_event(&c0, &der(1)).unwrap();
        assert_eq!(r, Reclassification::InverterToLoad(1));
        assert_eq!(c1.active_ids(), &[2, 3]);
        assert_eq!(c1.case.n_inverters(), 2);
        assert_eq!(c1.edges, vec![(2, 3)]);
        assert!(c1.connected);
        let i = c1.case.index_of(1).unwrap();
        assert_eq!(c1.case.buses[i].load_model(), Some(LoadModel::ConstantPower { p: 0.0, q: 0.0 }));
    }

    #[test]
    fn repeated_loss_is_idempotent() {
        let case = testnets::three_inverter_feeder();
        let c0 = OperatingCondition::initial(&case);
        let (c1, _) = apply_event(&c0, &der(2)).unwrap();
        let (c2, r) = apply_event(&c1, &der(2)).unwrap();
        assert_eq!(r, Reclassification::Unchanged);
        assert_eq!(c1, c2);
    }

    #[test]
    fn bridge_loss_is_flagged() {
        let case = testnets::three_inverter_feeder();
        let c0 = OperatingCondition::initial(&case);
        let ev = FaultEvent {
            time: 0.5,
            kind: FaultKind::CommLoss { a: 2, b: 1 },
        };
        let (c1, _) = apply_event(&c0, &ev).unwrap();
        assert!(!c1.connected);
        assert!(!c1.certified());
        assert_eq!(c1.active_ids().len(), 3);
    }

    #[test]
    fn invalid_events_are_rejected() {
        let case = testnets::three_inverter_feeder();
        let c0 = OperatingCondition::initial(&case);
        for kind in [
            FaultKind::DerLoss { bus: 4 },
            FaultKind::DerLoss { bus: 99 },
            FaultKind::CommLoss { a: 1, b: 3 },
            FaultKind::LoadStep { bus: 1, dp: 0.1, dq: 0.0 },
        ] {
            let r = apply_event(&c0, &FaultEvent { time: 1.0, kind });
            assert!(matches!(r, Err(Error::InvalidEvent(_))), "{kind:?}");
        }
    }

    #[test]
    fn load_step_changes_only_that_bus() {
        let case = testnets::triangle_constant_power();
        let c0 = OperatingCondition::initial(&case);
        let ev = FaultEvent {
            time: 1.0,
            kind: FaultKind::LoadStep { bus: 3, dp: 0.1, dq: 0.05 },
        };
        let (c1, _) = apply_event(&c0, &ev).unwrap();
        let i = c1.case.index_of(3).unwrap();
        let (p, q) = c1.case.buses[i].load_model().unwrap().nominal();
        assert!((p - 0.7).abs() < 1e-15 && (q - 0.25).abs() < 1e-15);
        assert_eq!(c1.case.lines, case.lines);
    }

    #[test]
    fn laplacian_matches_fresh_build_after_events() {
        let case = testnets::three_inverter_feeder();
        let mut c = OperatingCondition::initial(&case);
        for ev in [der(3), der(3)] {
            c = apply_event(&c, &ev).unwrap().0;
        }
        let active: Vec<usize> = c.case.inverters().collect();
        assert_eq!(c.control.laplacian, laplacian(&c.case.comm_edges, &active));
    }

    #[test]
    fn event_file_round_trip() {
        let text = r#"[{"t": 1.0, "kind": "der_loss", "params": {"bus": 1}},
                       {"t": 2.0, "kind": "load_step", "params": {"bus": 10, "dp": 0.027, "dq": 0.0174}}]"#;
        let evs: Vec<FaultEvent> = serde_json::from_str(text).unwrap();
        assert_eq!(evs[0].kind, FaultKind::DerLoss { bus: 1 });
        assert_eq!(evs[1].time, 2.0);
        let back: Vec<FaultEvent> = serde_json::from_str(&serde_json::to_string(&evs).unwrap()).unwrap();
        assert_eq!(back, evs);
    }

    #[test]
    fn subsets_cover_every_mask() {
        let case = testnets::three_inverter_feeder();
        let subs = survivor_subsets(&case);
        assert_eq!(subs.len(), 7);
        assert_eq!(subs[6].0, vec![1, 2, 3]);
        assert_eq!(subs[4].1, vec![]);
    }
}

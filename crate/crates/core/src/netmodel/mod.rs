//! Microgrid data model: buses, lines, communication graph and security limits.
//!
//! Buses are stored inverters first (ascending file id), then loads (ascending
//! file id), so the inverter/load split of the state vector is an index range.
//! Everything is per-unit; the case file carries angles in degrees and the
//! nominal frequency in Hz, and [`NetworkCase`] exposes radian accessors.

mod admittance;
mod file;
pub mod graph;

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

pub use admittance::{build_admittance, Admittance, ShuntLoads};
pub use file::{BusKindTag, BusRecord, CapacityRecord, CaseFile, CaseParams, LineRecord, LoadRecord};
pub use graph::{laplacian, CommLaplacian};

/// Load model at a load bus. Demand is positive consumption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadModel {
    /// Fixed demand `p + jq`.
    ConstantPower { p: f64, q: f64 },
    /// Shunt admittance `g - jb`; consumes `g·E²` and `b·E²`.
    ConstantImpedance { g: f64, b: f64 },
}

impl LoadModel {
    /// Consumed active and reactive power at voltage magnitude `e`.
    pub fn demand(&self, e: f64) -> (f64, f64) {
        match *self {
            LoadModel::ConstantPower { p, q } => (p, q),
            LoadModel::ConstantImpedance { g, b } => (g * e * e, b * e * e),
        }
    }

    /// Derivative of the consumed powers with respect to `e`.
    pub fn demand_de(&self, e: f64) -> (f64, f64) {
        match *self {
            LoadModel::ConstantPower { .. } => (0.0, 0.0),
            LoadModel::ConstantImpedance { g, b } => (2.0 * g * e, 2.0 * b * e),
        }
    }

    /// Equivalent constant-impedance model drawing the same power at 1 p.u.
    pub fn to_impedance(&self) -> LoadModel {
        match *self {
            LoadModel::ConstantPower { p, q } => LoadModel::ConstantImpedance { g: p, b: q },
            z => z,
        }
    }

    /// Adds a demand increment, interpreted at 1 p.u. for impedance loads.
    pub fn stepped(&self, dp: f64, dq: f64) -> LoadModel {
        match *self {
            LoadModel::ConstantPower { p, q } => LoadModel::ConstantPower { p: p + dp, q: q + dq },
            LoadModel::ConstantImpedance { g, b } => LoadModel::ConstantImpedance { g: g + dp, b: b + dq },
        }
    }

    /// Demand at 1 p.u.
    pub fn nominal(&self) -> (f64, f64) {
        self.demand(1.0)
    }
}

/// Box of admissible inverter injections, in per-unit power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacity {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BusKind {
    Inverter {
        p_star: f64,
        q_star: f64,
        capacity: Option<Capacity>,
    },
    Load(LoadModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Identifier used in the case file and in trace headers.
    pub id: u32,
    pub kind: BusKind,
    pub e_min: f64,
    pub e_max: f64,
}

impl Bus {
    pub fn is_inverter(&self) -> bool {
        matches!(self.kind, BusKind::Inverter { .. })
    }

    pub fn load_model(&self) -> Option<LoadModel> {
        match self.kind {
            BusKind::Load(m) => Some(m),
            BusKind::Inverter { .. } => None,
        }
    }
}

/// Distribution line between two bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance, split evenly between the ends.
    pub b_sh: f64,
    pub i_max: f64,
}

impl Line {
    pub fn other(&self, bus: usize) -> Option<usize> {
        if self.from == bus {
            Some(self.to)
        } else if self.to == bus {
            Some(self.from)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    /// Communication links between inverter bus indices, stored with `a < b`.
    pub comm_edges: Vec<(usize, usize)>,
    pub gamma_deg: f64,
    pub f0_hz: f64,
    pub base_mva: f64,
    pub base_kv: f64,
    n_inverters: usize,
}

impl NetworkCase {
    /// Parses and validates a case file.
    pub fn parse(text: &str) -> Result<Self> {
        let file: CaseFile = serde_json::from_str(text).map_err(Error::from_json)?;
        Self::from_file(file)
    }

    pub fn from_file(file: CaseFile) -> Result<Self> {
        file::build(file)
    }

    /// Serializes back to the case-file schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("case serialization cannot fail")
    }

    pub fn to_file(&self) -> CaseFile {
        file::unbuild(self)
    }

    pub(crate) fn from_parts(
        name: String,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        comm_edges: Vec<(usize, usize)>,
        params: CaseParams,
    ) -> Result<Self> {
        let n_inverters = buses.iter().filter(|b| b.is_inverter()).count();
        let case = NetworkCase {
            name,
            buses,
            lines,
            comm_edges,
            gamma_deg: params.gamma_deg,
            f0_hz: params.f0_hz,
            base_mva: params.base_mva,
            base_kv: params.base_kv,
            n_inverters,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn n_inverters(&self) -> usize {
        self.n_inverters
    }

    pub fn n_loads(&self) -> usize {
        self.buses.len() - self.n_inverters
    }

    /// Inverter bus indices, `0..n_I`.
    pub fn inverters(&self) -> std::ops::Range<usize> {
        0..self.n_inverters
    }

    /// Load bus indices, `n_I..n`.
    pub fn loads(&self) -> std::ops::Range<usize> {
        self.n_inverters..self.buses.len()
    }

    /// Branch-angle limit in radians.
    pub fn gamma(&self) -> f64 {
        self.gamma_deg.to_radians()
    }

    /// Nominal angular frequency in rad/s.
    pub fn omega0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f0_hz
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn p_star(&self, bus: usize) -> Option<f64> {
        match self.buses[bus].kind {
            BusKind::Inverter { p_star, .. } => Some(p_star),
            BusKind::Load(_) => None,
        }
    }

    pub fn q_star(&self, bus: usize) -> Option<f64> {
        match self.buses[bus].kind {
            BusKind::Inverter { q_star, .. } => Some(q_star),
            BusKind::Load(_) => None,
        }
    }

    pub fn capacity(&self, bus: usize) -> Option<Capacity> {
        match self.buses[bus].kind {
            BusKind::Inverter { capacity, .. } => capacity,
            BusKind::Load(_) => None,
        }
    }

    /// Undirected adjacency of the electrical graph.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n()];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// Same case with every constant-power load replaced by the impedance
    /// drawing the same power at 1 p.u.
    pub fn with_impedance_loads(&self) -> NetworkCase {
        let mut out = self.clone();
        for bus in &mut out.buses {
            if let BusKind::Load(m) = bus.kind {
                bus.kind = BusKind::Load(m.to_impedance());
            }
        }
        out
    }

    /// Same case with a different communication graph (validated).
    pub fn with_comm_edges(&self, edges: Vec<(usize, usize)>) -> Result<NetworkCase> {
        let mut out = self.clone();
        out.comm_edges = edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        out.validate()?;
        Ok(out)
    }

    /// Same network with the listed inverters turned into load buses carrying
    /// `residual`, a new load model on selected buses, and the given comm links
    /// (bus id pairs). The comm graph may be disconnected here.
    pub fn reconfigured(
        &self,
        lost: &[u32],
        residual: LoadModel,
        comm: &[(u32, u32)],
    ) -> Result<NetworkCase> {
        let mut buses: Vec<Bus> = self.buses.clone();
        for bus in &mut buses {
            if lost.contains(&bus.id) && bus.is_inverter() {
                bus.kind = BusKind::Load(residual);
            }
        }
        buses.sort_by_key(|b| (!b.is_inverter(), b.id));
        let map: HashMap<u32, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let lines = self
            .lines
            .iter()
            .map(|l| Line {
                from: map[&self.buses[l.from].id],
                to: map[&self.buses[l.to].id],
                ..*l
            })
            .collect();
        let mut comm_edges = Vec::with_capacity(comm.len());
        for &(a, b) in comm {
            let (Some(&i), Some(&j)) = (map.get(&a), map.get(&b)) else {
                return Err(Error::Validation(format!("comm edge {a}-{b} names an unknown bus")));
            };
            comm_edges.push((i.min(j), i.max(j)));
        }
        let n_inverters = buses.iter().filter(|b| b.is_inverter()).count();
        let case = NetworkCase {
            name: self.name.clone(),
            buses,
            lines,
            comm_edges,
            gamma_deg: self.gamma_deg,
            f0_hz: self.f0_hz,
            base_mva: self.base_mva,
            base_kv: self.base_kv,
            n_inverters,
        };
        case.validate_structure()?;
        Ok(case)
    }

    /// Same case with bus `id` carrying a different load model.
    pub fn with_load(&self, id: u32, model: LoadModel) -> Result<NetworkCase> {
        let i = self
            .index_of(id)
            .ok_or_else(|| Error::Validation(format!("no bus {id}")))?;
        if self.buses[i].is_inverter() {
            return Err(Error::Validation(format!("bus {id} is not a load bus")));
        }
        let mut out = self.clone();
        out.buses[i].kind = BusKind::Load(model);
        out.validate_structure()?;
        Ok(out)
    }

    /// Whether the communication links connect every inverter.
    pub fn comm_connected(&self) -> bool {
        self.n_inverters == 0 || graph::is_connected(&(0..self.n_inverters).collect::<Vec<_>>(), &self.comm_edges)
    }

    fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if !self.comm_connected() {
            return Err(Error::Validation("comm graph disconnected".into()));
        }
        Ok(())
    }

    fn validate_structure(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Validation("case has no buses".into()));
        }
        let mut ids = BTreeSet::new();
        for (i, bus) in self.buses.iter().enumerate() {
            if !ids.insert(bus.id) {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.e_min > 0.0 && bus.e_min < bus.e_max && bus.e_max.is_finite()) {
                return Err(Error::Validation(format!(
                    "bus {}: voltage bounds must satisfy 0 < e_min < e_max",
                    bus.id
                )));
            }
            match bus.kind {
                BusKind::Inverter { p_star, q_star, capacity } => {
                    if i >= self.n_inverters {
                        return Err(Error::Validation("inverter buses must precede load buses".into()));
                    }
                    if p_star == 0.0 || q_star == 0.0 || !p_star.is_finite() || !q_star.is_finite() {
                        return Err(Error::Validation(format!(
                            "inverter bus {}: p_star and q_star must be finite and nonzero",
                            bus.id
                        )));
                    }
                    if let Some(c) = capacity {
                        if !(c.p_min <= c.p_max && c.q_min <= c.q_max) {
                            return Err(Error::Validation(format!("inverter bus {}: empty capacity box", bus.id)));
                        }
                    }
                }
                BusKind::Load(m) => {
                    let (a, b) = match m {
                        LoadModel::ConstantPower { p, q } => (p, q),
                        LoadModel::ConstantImpedance { g, b } => (g, b),
                    };
                    if !a.is_finite() || !b.is_finite() {
                        return Err(Error::Validation(format!("load bus {}: non-finite load", bus.id)));
                    }
                }
            }
        }

        let mut pairs = BTreeSet::new();
        for l in &self.lines {
            let (a, b) = (self.buses[l.from].id, self.buses[l.to].id);
            if l.from == l.to {
                return Err(Error::Validation(format!("line {a}-{b} is a self loop")));
            }
            if l.r == 0.0 && l.x == 0.0 {
                return Err(Error::SingularImpedance { from: a, to: b });
            }
            if ![l.r, l.x, l.b_sh, l.i_max].iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("line {a}-{b} has non-finite data")));
            }
            if !pairs.insert((l.from.min(l.to), l.from.max(l.to))) {
                return Err(Error::Validation(format!("duplicate line {a}-{b}")));
            }
        }
        let edges: Vec<_> = self.lines.iter().map(|l| (l.from, l.to)).collect();
        if n > 1 && !graph::is_connected(&(0..n).collect::<Vec<_>>(), &edges) {
            return Err(Error::Validation("electrical graph disconnected".into()));
        }

        let mut comm = BTreeSet::new();
        for &(a, b) in &self.comm_edges {
            if a >= self.n_inverters || b >= self.n_inverters {
                return Err(Error::Validation("comm edge touches a non-inverter bus".into()));
            }
            if a == b {
                return Err(Error::Validation("comm edge is a self loop".into()));
            }
            if !comm.insert((a.min(b), a.max(b))) {
                return Err(Error::Validation("duplicate comm edge".into()));
            }
        }
        let gamma = self.gamma();
        if !(0.0..FRAC_PI_2).contains(&gamma) {
            return Err(Error::Validation("gamma must lie in [0, 90) degrees".into()));
        }
        if !(self.f0_hz > 0.0 && self.base_mva > 0.0 && self.base_kv > 0.0) {
            return Err(Error::Validation("f0_hz, base_mva and base_kv must be positive".into()));
        }
        Ok(())
    }

    /// Map from file id to bus index.
    pub fn id_map(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }
}

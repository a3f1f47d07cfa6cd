//! Serde mirror of the case-file schema and the conversion to [`NetworkCase`].

use serde::{Deserialize, Serialize};

use super::{Bus, BusKind, Capacity, Line, LoadModel, NetworkCase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub params: CaseParams,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    /// Pairs of inverter bus ids.
    pub comm_edges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseParams {
    pub gamma_deg: f64,
    pub f0_hz: f64,
    pub base_mva: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKindTag {
    Inverter,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: u32,
    pub kind: BusKindTag,
    pub e_min: f64,
    pub e_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<CapacityRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<LoadRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityRecord {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadRecord {
    ConstantPower { p: f64, q: f64 },
    ConstantImpedance { g: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_sh: f64,
    pub i_max: f64,
}

pub(super) fn build(file: CaseFile) -> Result<NetworkCase> {
    let mut records = file.buses;
    records.sort_by_key(|b| (b.kind == BusKindTag::Load, b.id));

    let mut buses = Vec::with_capacity(records.len());
    for r in records {
        let kind = match r.kind {
            BusKindTag::Inverter => {
                if r.load.is_some() {
                    return Err(Error::Validation(format!("inverter bus {} carries a load record", r.id)));
                }
                let (Some(p_star), Some(q_star)) = (r.p_star, r.q_star) else {
                    return Err(Error::Validation(format!("inverter bus {} needs p_star and q_star", r.id)));
                };
                BusKind::Inverter {
                    p_star,
                    q_star,
                    capacity: r.capacity.map(|c| Capacity {
                        p_min: c.p_min,
                        p_max: c.p_max,
                        q_min: c.q_min,
                        q_max: c.q_max,
                    }),
                }
            }
            BusKindTag::Load => {
                if r.p_star.is_some() || r.q_star.is_some() || r.capacity.is_some() {
                    return Err(Error::Validation(format!("load bus {} carries inverter fields", r.id)));
                }
                let Some(load) = r.load else {
                    return Err(Error::Validation(format!("load bus {} needs a load record", r.id)));
                };
                BusKind::Load(match load {
                    LoadRecord::ConstantPower { p, q } => LoadModel::ConstantPower { p, q },
                    LoadRecord::ConstantImpedance { g, b } => LoadModel::ConstantImpedance { g, b },
                })
            }
        };
        buses.push(Bus {
            id: r.id,
            kind,
            e_min: r.e_min,
            e_max: r.e_max,
        });
    }

    let index = |id: u32, what: &str| {
        buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::Validation(format!("{what} references unknown bus {id}")))
    };
    let mut lines = Vec::with_capacity(file.lines.len());
    for l in &file.lines {
        lines.push(Line {
            from: index(l.from, "line")?,
            to: index(l.to, "line")?,
            r: l.r,
            x: l.x,
            b_sh: l.b_sh,
            i_max: l.i_max,
        });
    }
    let mut comm = Vec::with_capacity(file.comm_edges.len());
    for &(a, b) in &file.comm_edges {
        let (a, b) = (index(a, "comm edge")?, index(b, "comm edge")?);
        comm.push((a.min(b), a.max(b)));
    }
    NetworkCase::from_parts(file.name, buses, lines, comm, file.params)
}

pub(super) fn unbuild(case: &NetworkCase) -> CaseFile {
    let buses = case
        .buses
        .iter()
        .map(|b| {
            let mut r = BusRecord {
                id: b.id,
                kind: BusKindTag::Load,
                e_min: b.e_min,
                e_max: b.e_max,
                p_star: None,
                q_star: None,
                capacity: None,
                load: None,
            };
            match b.kind {
                BusKind::Inverter { p_star, q_star, capacity } => {
                    r.kind = BusKindTag::Inverter;
                    r.p_star = Some(p_star);
                    r.q_star = Some(q_star);
                    r.capacity = capacity.map(|c| CapacityRecord {
                        p_min: c.p_min,
                        p_max: c.p_max,
                        q_min: c.q_min,
                        q_max: c.q_max,
                    });
                }
                BusKind::Load(LoadModel::ConstantPower { p, q }) => r.load = Some(LoadRecord::ConstantPower { p, q }),
                BusKind::Load(LoadModel::ConstantImpedance { g, b }) => {
                    r.load = Some(LoadRecord::ConstantImpedance { g, b })
                }
            }
            r
        })
        .collect();
    let id = |i: usize| case.buses[i].id;
    CaseFile {
        name: case.name.clone(),
        params: CaseParams {
            gamma_deg: case.gamma_deg,
            f0_hz: case.f0_hz,
            base_mva: case.base_mva,
            base_kv: case.base_kv,
        },
        buses,
        lines: case
            .lines
            .iter()
            .map(|l| LineRecord {
                from: id(l.from),
                to: id(l.to),
                r: l.r,
                x: l.x,
                b_sh: l.b_sh,
                i_max: l.i_max,
            })
            .collect(),
        comm_edges: case.comm_edges.iter().map(|&(a, b)| (id(a), id(b))).collect(),
    }
}

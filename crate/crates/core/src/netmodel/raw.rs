//! Case data in file units (MW, MVAr, degrees), shared by the MATPOWER and
//! JSON readers, and its conversion to and from per-unit [`CaseData`].

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::case::{Branch, Bus, BusId, BusKind, CaseData, Generator};
use crate::error::{Error, Result};

pub const BUS_PQ: u8 = 1;
pub const BUS_PV: u8 = 2;
pub const BUS_REF: u8 = 3;
pub const BUS_ISOLATED: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBus {
    pub id: BusId,
    #[serde(rename = "type")]
    pub bus_type: u8,
    pub pd: f64,
    pub qd: f64,
    #[serde(default)]
    pub gs: f64,
    #[serde(default)]
    pub bs: f64,
    pub vm: f64,
    pub va_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGen {
    pub bus: BusId,
    pub pg: f64,
    #[serde(default)]
    pub qg: f64,
    pub vg: f64,
    #[serde(default = "one")]
    pub status: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBranch {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    /// 0 means nominal ratio.
    #[serde(default)]
    pub tap: f64,
    #[serde(default)]
    pub shift_deg: f64,
    #[serde(default = "one")]
    pub status: u8,
}

fn one() -> u8 {
    1
}

/// The JSON case format; also the intermediate form of a MATPOWER file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCase {
    pub base_mva: f64,
    pub buses: Vec<RawBus>,
    pub gens: Vec<RawGen>,
    pub branches: Vec<RawBranch>,
    /// Optional distributed-slack participation, bus id -> α.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participation: Option<BTreeMap<BusId, f64>>,
}

impl RawCase {
    /// Converts to per-unit and derives the PQ/PV partition.
    pub fn into_case_data(self) -> Result<CaseData> {
        let base = self.base_mva;
        if !(base > 0.0) {
            return Err(Error::Model(format!("base MVA must be positive, got {base}")));
        }
        let mut ids = HashSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(Error::Model(format!("duplicate bus id {}", b.id)));
            }
        }
        let isolated: HashSet<BusId> = self
            .buses
            .iter()
            .filter(|b| b.bus_type == BUS_ISOLATED)
            .map(|b| b.id)
            .collect();

        let gens: Vec<&RawGen> = self
            .gens
            .iter()
            .filter(|g| g.status > 0 && !isolated.contains(&g.bus))
            .collect();
        for g in &gens {
            if !ids.contains(&g.bus) {
                return Err(Error::Model(format!("generator at unknown bus {}", g.bus)));
            }
        }
        let mut first_gen: HashMap<BusId, &RawGen> = HashMap::new();
        for g in &gens {
            first_gen.entry(g.bus).or_insert(g);
        }

        let slack = self
            .buses
            .iter()
            .find(|b| b.bus_type == BUS_REF)
            .map(|b| b.id)
            .ok_or_else(|| Error::Model("case has no reference bus".into()))?;
        if !first_gen.contains_key(&slack) {
            return Err(Error::Model(format!(
                "reference bus {slack} has no in-service generator"
            )));
        }

        let buses: Vec<Bus> = self
            .buses
            .iter()
            .filter(|b| b.bus_type != BUS_ISOLATED)
            .map(|b| {
                let gen = first_gen.get(&b.id);
                Bus {
                    id: b.id,
                    kind: if gen.is_some() { BusKind::Pv } else { BusKind::Pq },
                    pd: b.pd / base,
                    qd: b.qd / base,
                    gs: b.gs / base,
                    bs: b.bs / base,
                    vm: gen.map_or(b.vm, |g| g.vg),
                    va: b.va_deg.to_radians(),
                }
            })
            .collect();

        let mut generators: Vec<Generator> = gens
            .iter()
            .map(|g| Generator {
                bus: g.bus,
                pg: g.pg / base,
                qg: g.qg / base,
                vg: g.vg,
                participation: 0.0,
            })
            .collect();
        match &self.participation {
            Some(alpha) => {
                for (&bus, &a) in alpha {
                    let g = generators
                        .iter_mut()
                        .find(|g| g.bus == bus)
                        .ok_or_else(|| {
                            Error::Model(format!("participation given for non-generator bus {bus}"))
                        })?;
                    g.participation = a;
                }
            }
            None => {
                let g = generators
                    .iter_mut()
                    .find(|g| g.bus == slack)
                    .expect("slack generator checked above");
                g.participation = 1.0;
            }
        }

        let branches = self
            .branches
            .iter()
            .filter(|br| br.status > 0)
            .map(|br| {
                if isolated.contains(&br.from) || isolated.contains(&br.to) {
                    return Err(Error::Model(format!(
                        "in-service branch {}-{} touches an isolated bus",
                        br.from, br.to
                    )));
                }
                Ok(Branch {
                    from: br.from,
                    to: br.to,
                    r: br.r,
                    x: br.x,
                    b_c: br.b,
                    tap: if br.tap == 0.0 { 1.0 } else { br.tap },
                    shift: br.shift_deg.to_radians(),
                    in_service: true,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let case = CaseData {
            base_mva: base,
            buses,
            gens: generators,
            branches,
            slack,
        };
        case.validate()?;
        Ok(case)
    }

    /// Inverse of [`RawCase::into_case_data`] up to dropped data.
    pub fn from_case_data(case: &CaseData) -> RawCase {
        let base = case.base_mva;
        let buses = case
            .buses
            .iter()
            .map(|b| RawBus {
                id: b.id,
                bus_type: if b.id == case.slack {
                    BUS_REF
                } else if b.kind == BusKind::Pv {
                    BUS_PV
                } else {
                    BUS_PQ
                },
                pd: b.pd * base,
                qd: b.qd * base,
                gs: b.gs * base,
                bs: b.bs * base,
                vm: b.vm,
                va_deg: b.va.to_degrees(),
            })
            .collect();
        let gens = case
            .gens
            .iter()
            .map(|g| RawGen {
                bus: g.bus,
                pg: g.pg * base,
                qg: g.qg * base,
                vg: g.vg,
                status: 1,
            })
            .collect();
        let branches = case
            .branches
            .iter()
            .map(|br| RawBranch {
                from: br.from,
                to: br.to,
                r: br.r,
                x: br.x,
                b: br.b_c,
                tap: br.tap,
                shift_deg: br.shift.to_degrees(),
                status: u8::from(br.in_service),
            })
            .collect();
        let participation = if case.is_single_slack() {
            None
        } else {
            let mut map = BTreeMap::new();
            for g in case.gens.iter().filter(|g| g.participation != 0.0) {
                *map.entry(g.bus).or_insert(0.0) += g.participation;
            }
            Some(map)
        };
        RawCase {
            base_mva: base,
            buses,
            gens,
            branches,
            participation,
        }
    }
}

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// External bus label as it appears in the case file.
pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Pq,
    Pv,
}

/// A bus, all quantities in per-unit on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    /// Voltage magnitude; the setpoint for PV buses.
    pub vm: f64,
    /// Voltage angle in radians.
    pub va: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    pub pg: f64,
    pub qg: f64,
    pub vg: f64,
    /// Distributed-slack participation factor.
    pub participation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b_c: f64,
    /// Off-nominal tap ratio (1 when the branch is a plain line).
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn is_pst(&self) -> bool {
        self.shift != 0.0
    }

    pub fn rx_ratio(&self) -> f64 {
        self.r / self.x
    }
}

/// A parsed, per-unit power flow case.
///
/// Out-of-service branches are dropped at load time, so every branch here
/// is in service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseData {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub gens: Vec<Generator>,
    pub branches: Vec<Branch>,
    /// Angle-reference (single slack) bus.
    pub slack: BusId,
}

impl CaseData {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self) -> HashMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn position(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Participation factor per bus, in case order.
    pub fn participation(&self) -> Vec<f64> {
        let index = self.bus_index();
        let mut alpha = vec![0.0; self.buses.len()];
        for g in &self.gens {
            if let Some(&i) = index.get(&g.bus) {
                alpha[i] += g.participation;
            }
        }
        alpha
    }

    /// True when all participation sits on the slack bus.
    pub fn is_single_slack(&self) -> bool {
        let alpha = self.participation();
        let slack = self.position(self.slack);
        alpha.iter().enumerate().all(|(i, &a)| {
            if Some(i) == slack {
                (a - 1.0).abs() <= 1e-12
            } else {
                a == 0.0
            }
        })
    }

    /// Known active injection P̄ = Pg − Pd per bus, in case order.
    pub fn p_injection(&self) -> Vec<f64> {
        let index = self.bus_index();
        let mut p: Vec<f64> = self.buses.iter().map(|b| -b.pd).collect();
        for g in &self.gens {
            p[index[&g.bus]] += g.pg;
        }
        p
    }

    /// Reactive injection −Qd per bus (generator Q excluded; it is an unknown).
    pub fn q_demand_injection(&self) -> Vec<f64> {
        self.buses.iter().map(|b| -b.qd).collect()
    }

    /// Checks the structural invariants of a case.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::Model(format!("base MVA must be positive, got {}", self.base_mva)));
        }
        if self.buses.is_empty() {
            return Err(Error::Model("case has no buses".into()));
        }
        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return Err(Error::Model(format!("duplicate bus id {}", b.id)));
            }
            if b.kind == BusKind::Pv && !(b.vm > 0.0) {
                return Err(Error::Model(format!(
                    "PV bus {} has non-positive voltage setpoint {}",
                    b.id, b.vm
                )));
            }
        }
        let index = self.bus_index();
        let slack = index
            .get(&self.slack)
            .ok_or_else(|| Error::Model(format!("slack bus {} does not exist", self.slack)))?;
        if self.buses[*slack].kind != BusKind::Pv {
            return Err(Error::Model(format!("slack bus {} has no generator", self.slack)));
        }
        for g in &self.gens {
            let i = *index
                .get(&g.bus)
                .ok_or_else(|| Error::Model(format!("generator at unknown bus {}", g.bus)))?;
            if g.participation < 0.0 {
                return Err(Error::Model(format!(
                    "negative participation factor at bus {}",
                    g.bus
                )));
            }
            if self.buses[i].kind != BusKind::Pv {
                return Err(Error::Model(format!("generator bus {} is not PV", g.bus)));
            }
        }
        let total: f64 = self.gens.iter().map(|g| g.participation).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Model(format!(
                "participation factors sum to {total}, expected 1"
            )));
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !index.contains_key(&end) {
                    return Err(Error::Model(format!("branch references unknown bus {end}")));
                }
            }
            if br.from == br.to {
                return Err(Error::Model(format!("branch {0}-{0} is a self loop", br.from)));
            }
            if !(br.tap > 0.0) {
                return Err(Error::Model(format!(
                    "branch {}-{} has non-positive tap {}",
                    br.from, br.to, br.tap
                )));
            }
        }
        if !self.is_connected() {
            return Err(Error::Model("in-service branch graph is not connected".into()));
        }
        Ok(())
    }

    /// Weak connectivity of the in-service branch graph.
    pub fn is_connected(&self) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return false;
        }
        let index = self.bus_index();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (Some(&f), Some(&t)) = (index.get(&br.from), index.get(&br.to)) else {
                continue;
            };
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == n
    }

    /// Caps every branch R/X ratio at `cap` by lowering r.
    ///
    /// Returns the modified case and the number of branches touched.
    pub fn cap_rx_ratios(&self, cap: f64) -> (CaseData, usize) {
        assert!(cap > 0.0, "R/X cap must be positive");
        let mut out = self.clone();
        let mut count = 0;
        for br in &mut out.branches {
            if br.x > 0.0 && br.r > cap * br.x {
                br.r = cap * br.x;
                count += 1;
            }
        }
        (out, count)
    }

    /// Scales all demands and scheduled generation uniformly.
    pub fn scale_loading(&self, factor: f64) -> CaseData {
        let mut out = self.clone();
        for b in &mut out.buses {
            b.pd *= factor;
            b.qd *= factor;
        }
        for g in &mut out.gens {
            g.pg *= factor;
        }
        out
    }

    /// Replaces the participation factors. Buses absent from the map get zero.
    pub fn with_participation(&self, alpha: &HashMap<BusId, f64>) -> Result<CaseData> {
        let mut out = self.clone();
        for g in &mut out.gens {
            g.participation = 0.0;
        }
        for (&bus, &a) in alpha {
            let g = out
                .gens
                .iter_mut()
                .find(|g| g.bus == bus)
                .ok_or_else(|| Error::Model(format!("participation given for non-generator bus {bus}")))?;
            g.participation = a;
        }
        out.validate()?;
        Ok(out)
    }
}

/// Load-first permutation of the buses used by every matrix in the crate.
///
/// Internal index `k < n_load` is a PQ bus, `k >= n_load` a PV bus; within
/// each group case order is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct BusOrdering {
    pub internal_to_case: Vec<usize>,
    pub case_to_internal: Vec<usize>,
    pub n_load: usize,
    pub n_gen: usize,
}

impl BusOrdering {
    pub fn new(case: &CaseData) -> Self {
        let loads = case
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Pq)
            .map(|(i, _)| i);
        let gens = case
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Pv)
            .map(|(i, _)| i);
        let internal_to_case: Vec<usize> = loads.chain(gens).collect();
        let mut case_to_internal = vec![0; internal_to_case.len()];
        for (k, &c) in internal_to_case.iter().enumerate() {
            case_to_internal[c] = k;
        }
        let n_load = case.buses.iter().filter(|b| b.kind == BusKind::Pq).count();
        BusOrdering {
            n_gen: internal_to_case.len() - n_load,
            internal_to_case,
            case_to_internal,
            n_load,
        }
    }

    pub fn len(&self) -> usize {
        self.internal_to_case.len()
    }

    pub fn is_empty(&self) -> bool {
        self.internal_to_case.is_empty()
    }

    /// Reorders a case-order vector into internal order.
    pub fn to_internal<T: Copy>(&self, case_order: &[T]) -> Vec<T> {
        self.internal_to_case.iter().map(|&c| case_order[c]).collect()
    }

    /// Reorders an internal-order vector back into case order.
    pub fn to_case<T: Copy + Default>(&self, internal: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); internal.len()];
        for (k, &c) in self.internal_to_case.iter().enumerate() {
            out[c] = internal[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus() -> CaseData {
        CaseData {
            base_mva: 100.0,
            buses: vec![
                Bus { id: 1, kind: BusKind::Pv, pd: 0.0, qd: 0.0, gs: 0.0, bs: 0.0, vm: 1.0, va: 0.0 },
                Bus { id: 2, kind: BusKind::Pq, pd: 0.5, qd: 0.2, gs: 0.0, bs: 0.0, vm: 1.0, va: 0.0 },
            ],
            gens: vec![Generator { bus: 1, pg: 0.0, qg: 0.0, vg: 1.0, participation: 1.0 }],
            branches: vec![Branch {
                from: 1,
                to: 2,
                r: 0.9,
                x: 1.0,
                b_c: 0.0,
                tap: 1.0,
                shift: 0.0,
                in_service: true,
            }],
            slack: 1,
        }
    }

    #[test]
    fn cap_replaces_high_ratio() {
        let (capped, count) = two_bus().cap_rx_ratios(0.8);
        assert_eq!(count, 1);
        assert_eq!(capped.branches[0].r, 0.8);
        assert_eq!(capped.branches[0].x, 1.0);
    }

    #[test]
    fn cap_leaves_low_ratio() {
        let mut case = two_bus();
        case.branches[0].r = 0.1;
        let (capped, count) = case.cap_rx_ratios(0.8);
        assert_eq!(count, 0);
        assert_eq!(capped, case);
    }

    #[test]
    fn cap_is_idempotent() {
        let (once, _) = two_bus().cap_rx_ratios(0.8);
        let (twice, count) = once.cap_rx_ratios(0.8);
        assert_eq!(once, twice);
        assert_eq!(count, 0);
    }

    #[test]
    fn disconnected_rejected() {
        let mut case = two_bus();
        case.branches.clear();
        assert!(matches!(case.validate(), Err(Error::Model(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut case = two_bus();
        case.buses[1].id = 1;
        assert!(matches!(case.validate(), Err(Error::Model(msg)) if msg.contains("duplicate")));
    }

    #[test]
    fn ordering_puts_loads_first() {
        let order = BusOrdering::new(&two_bus());
        assert_eq!(order.internal_to_case, vec![1, 0]);
        assert_eq!(order.case_to_internal, vec![1, 0]);
        assert_eq!(order.to_case(&order.to_internal(&[10, 20])), vec![10, 20]);
    }

    #[test]
    fn participation_must_sum_to_one() {
        let mut case = two_bus();
        case.gens[0].participation = 0.5;
        assert!(case.validate().is_err());
    }
}

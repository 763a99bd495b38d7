use serde::Serialize;

use super::admittance::NetworkMatrices;
use super::case::{BusId, CaseData};
use crate::bigraph::BidirGraph;

/// Per-edge positivity of the mutual susceptances.
#[derive(Debug, Clone, Serialize)]
pub struct BranchCheck {
    pub edge: usize,
    pub from: BusId,
    pub to: BusId,
    pub b_ft: f64,
    pub b_tf: f64,
    pub positive: bool,
}

/// Phase-shifter R/X condition b/g > |tan θ_s| for one branch.
#[derive(Debug, Clone, Serialize)]
pub struct PstCheck {
    pub from: BusId,
    pub to: BusId,
    pub b_over_g: f64,
    pub tan_shift: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// Strict row diagonal dominance of B_LL.
    pub strictly_dominant: bool,
    pub worst_dominance_margin: f64,
    pub worst_dominance_bus: Option<BusId>,
    /// B_LL nonsingular with −B_LL⁻¹ ≥ 0 element-wise and nonnegative
    /// off-diagonals; implied by strict dominance plus positivity and
    /// sufficient for a positive open-circuit voltage.
    pub nonsingular_m_matrix: bool,
    pub min_open_circuit_voltage: Option<f64>,
    pub branches: Vec<BranchCheck>,
    pub pst: Vec<PstCheck>,
}

impl AssumptionReport {
    pub fn positivity_ok(&self) -> bool {
        self.branches.iter().all(|b| b.positive)
    }

    pub fn pst_ok(&self) -> bool {
        self.pst.iter().all(|p| p.ok)
    }

    /// Conditions the fixed-point solver needs before it can start.
    pub fn solver_gate_ok(&self) -> bool {
        self.nonsingular_m_matrix && self.positivity_ok()
    }

    pub fn all_ok(&self) -> bool {
        self.strictly_dominant && self.solver_gate_ok() && self.pst_ok()
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.strictly_dominant {
            out.push(format!(
                "B_LL not strictly diagonally dominant (worst margin {:.6}{})",
                self.worst_dominance_margin,
                self.worst_dominance_bus.map_or_else(String::new, |b| format!(" at bus {b}"))
            ));
        }
        if !self.nonsingular_m_matrix {
            out.push("-B_LL is not a nonsingular M-matrix (open-circuit voltages not guaranteed positive)".into());
        }
        for b in self.branches.iter().filter(|b| !b.positive) {
            out.push(format!(
                "branch {}-{}: B_ft = {:.6}, B_tf = {:.6} (both must be positive)",
                b.from, b.to, b.b_ft, b.b_tf
            ));
        }
        for p in self.pst.iter().filter(|p| !p.ok) {
            out.push(format!(
                "PST {}-{}: b/g = {:.4} does not exceed |tan θ_s| = {:.4}",
                p.from, p.to, p.b_over_g, p.tan_shift
            ));
        }
        out
    }
}

pub fn check_assumptions(nm: &NetworkMatrices, graph: &BidirGraph, case: &CaseData) -> AssumptionReport {
    let n = nm.n_load();
    let bus_id = |k: usize| case.buses[nm.ordering.internal_to_case[k]].id;

    let b_ll = nm.b_ll();
    let mut worst = f64::INFINITY;
    let mut worst_bus = None;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| b_ll[(i, j)].abs()).sum();
        let margin = b_ll[(i, i)].abs() - off;
        if margin < worst {
            worst = margin;
            worst_bus = Some(bus_id(i));
        }
    }
    let strictly_dominant = n == 0 || worst > 0.0;

    let mut nonsingular_m_matrix = (0..n).all(|i| (0..n).all(|j| i == j || b_ll[(i, j)] >= 0.0));
    let mut min_voc = None;
    if n > 0 && nonsingular_m_matrix {
        match b_ll.clone().lu().try_inverse() {
            Some(inv) => {
                let scale = inv.abs().max();
                nonsingular_m_matrix = inv.iter().all(|&v| -v >= -1e-12 * scale);
                let vg = nalgebra::DVector::from_iterator(
                    nm.ordering.n_gen,
                    (n..nm.len()).map(|k| case.buses[nm.ordering.internal_to_case[k]].vm),
                );
                let voc = -(&inv * nm.b_lg() * vg);
                min_voc = Some(voc.min());
            }
            None => nonsingular_m_matrix = false,
        }
    }

    let branches = graph
        .edges
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let b_ft = nm.b_at(e.from, e.to);
            let b_tf = nm.b_at(e.to, e.from);
            BranchCheck {
                edge: k,
                from: bus_id(e.from),
                to: bus_id(e.to),
                b_ft,
                b_tf,
                positive: b_ft > 0.0 && b_tf > 0.0,
            }
        })
        .collect();

    let pst = case
        .branches
        .iter()
        .filter(|br| br.in_service && br.is_pst())
        .map(|br| {
            let z2 = br.r * br.r + br.x * br.x;
            let g = br.r / z2;
            let b = br.x / z2;
            let b_over_g = if g == 0.0 { f64::INFINITY } else { b / g };
            let tan_shift = br.shift.tan().abs();
            PstCheck {
                from: br.from,
                to: br.to,
                b_over_g,
                tan_shift,
                ok: b > 0.0 && b_over_g > tan_shift,
            }
        })
        .collect();

    AssumptionReport {
        strictly_dominant,
        worst_dominance_margin: if n == 0 { f64::INFINITY } else { worst },
        worst_dominance_bus: worst_bus,
        nonsingular_m_matrix,
        min_open_circuit_voltage: min_voc,
        branches,
        pst,
    }
}

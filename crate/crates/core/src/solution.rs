//! Solver output shared by every algorithm, and its JSON/CSV forms.

use std::io::Write;
use std::time::Duration;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::netmodel::{BusId, Network};

/// How an iteration ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// ‖ψ‖∞ > 1: the fixed-point iteration left its domain.
    LeftValidityRegion {
        iteration: usize,
        edge: usize,
        from: BusId,
        to: BusId,
        psi: f64,
    },
    NonPositiveVoltage {
        iteration: usize,
        bus: BusId,
        v: f64,
    },
    Singular {
        iteration: usize,
        what: String,
    },
    NonFinite {
        iteration: usize,
    },
}

impl Termination {
    pub fn converged(&self) -> bool {
        matches!(self, Termination::Converged)
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::Converged => write!(f, "converged"),
            Termination::MaxIterations => write!(f, "iteration limit reached"),
            Termination::LeftValidityRegion { iteration, edge, from, to, psi } => write!(
                f,
                "left validity region at iteration {iteration}: |psi| = {:.6} > 1 on branch {from}-{to} (edge {edge})",
                psi.abs()
            ),
            Termination::NonPositiveVoltage { iteration, bus, v } => {
                write!(f, "non-positive voltage {v:.6} at bus {bus}, iteration {iteration}")
            }
            Termination::Singular { iteration, what } => {
                write!(f, "singular {what} at iteration {iteration}")
            }
            Termination::NonFinite { iteration } => write!(f, "non-finite values at iteration {iteration}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub algorithm: String,
    pub termination: Termination,
    pub iterations: usize,
    /// Mismatch before the first iteration and after each one.
    pub mismatch_trace: Vec<f64>,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }

    pub fn final_mismatch(&self) -> f64 {
        self.mismatch_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub(crate) fn set_wall_time(&mut self, d: Duration) {
        self.wall_time_s = d.as_secs_f64();
    }
}

/// Bus voltages and recovered generator quantities, in case bus order.
///
/// For a run that did not converge the voltages are the last iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub report: SolveReport,
    pub bus_ids: Vec<BusId>,
    pub vm: Vec<f64>,
    /// Radians.
    pub va: Vec<f64>,
    pub gen_buses: Vec<BusId>,
    /// Reactive generation per generator bus (p.u.).
    pub qg: Vec<f64>,
    /// Slack power P_s (p.u.), shared by participation factors.
    pub ps: f64,
}

impl Solution {
    /// Builds a solution from internal-order polar voltages, recovering Q_G
    /// at generator buses and P_s = 1ᵀ(P − P̄).
    pub fn from_polar(net: &Network, vm_int: &[f64], va_int: &[f64], report: SolveReport) -> Self {
        let ord = net.ordering();
        let v: Vec<Complex64> = vm_int
            .iter()
            .zip(va_int)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        let s = net.matrices.injections(&v);
        let p_bar = ord.to_internal(&net.case.p_injection());
        let ps = s.iter().zip(&p_bar).map(|(s, p)| s.re - p).sum();
        let mut gen_buses = Vec::new();
        let mut qg = Vec::new();
        for k in ord.n_load..ord.len() {
            let bus = &net.case.buses[ord.internal_to_case[k]];
            gen_buses.push(bus.id);
            qg.push(s[k].im + bus.qd);
        }
        Solution {
            report,
            bus_ids: net.case.buses.iter().map(|b| b.id).collect(),
            vm: ord.to_case(vm_int),
            va: ord.to_case(va_int),
            gen_buses,
            qg,
            ps,
        }
    }

    pub fn converged(&self) -> bool {
        self.report.converged()
    }

    /// Largest |ΔV| and |Δθ| against another solution of the same case, with
    /// both angle vectors shifted so bus `reference` (case index) is at 0.
    pub fn max_difference(&self, other: &Solution, reference: usize) -> (f64, f64) {
        let dv = self
            .vm
            .iter()
            .zip(&other.vm)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let (ra, rb) = (self.va[reference], other.va[reference]);
        let da = self
            .va
            .iter()
            .zip(&other.va)
            .map(|(a, b)| ((a - ra) - (b - rb)).abs())
            .fold(0.0, f64::max);
        (dv, da)
    }

    pub fn to_json_value(&self, base_mva: f64) -> SolutionJson {
        SolutionJson {
            algorithm: self.report.algorithm.clone(),
            converged: self.converged(),
            termination: self.report.termination.clone(),
            iterations: self.report.iterations,
            mismatch_trace: self.report.mismatch_trace.clone(),
            wall_time_s: self.report.wall_time_s,
            base_mva,
            ps: self.ps,
            buses: self
                .bus_ids
                .iter()
                .zip(self.vm.iter().zip(&self.va))
                .map(|(&id, (&vm, &va))| BusResult {
                    id,
                    vm,
                    va_deg: va.to_degrees(),
                })
                .collect(),
            gens: self
                .gen_buses
                .iter()
                .zip(&self.qg)
                .map(|(&bus, &qg)| GenResult { bus, qg })
                .collect(),
        }
    }

    pub fn write_json(&self, base_mva: f64, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_json_value(base_mva))?;
        Ok(())
    }

    /// Iteration trace as CSV: `iteration,mismatch`.
    pub fn write_trace_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "mismatch"])?;
        for (k, m) in self.report.mismatch_trace.iter().enumerate() {
            out.write_record([k.to_string(), format!("{m:e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusResult {
    pub id: BusId,
    pub vm: f64,
    pub va_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResult {
    pub bus: BusId,
    /// p.u. on `base_mva`.
    pub qg: f64,
}

/// Serialized form of a [`Solution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionJson {
    pub algorithm: String,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub mismatch_trace: Vec<f64>,
    pub wall_time_s: f64,
    pub base_mva: f64,
    pub ps: f64,
    pub buses: Vec<BusResult>,
    pub gens: Vec<GenResult>,
}

//! Newton-Raphson and fast-decoupled load flow on the single-slack model.

mod fdlf;
mod nr;

use num_complex::Complex64;

pub use fdlf::{solve_fdlf, FdlfScheme, FdlfSolver};
pub use nr::solve_nr;

use crate::error::{Error, Result};
use crate::netmodel::Network;

#[derive(Debug, Clone, Copy)]
pub struct NrOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NrOptions {
    fn default() -> Self {
        NrOptions { tol: 1e-8, max_iter: 100 }
    }
}

impl NrOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Precondition("tol must be positive and max_iter at least 1".into()));
        }
        Ok(())
    }
}

/// Bus classification and specified injections for the polar formulation.
#[derive(Debug, Clone)]
pub(crate) struct PolarSetup {
    /// Buses with an angle unknown: non-slack PV buses, then PQ buses.
    pub pvpq: Vec<usize>,
    pub pq: Vec<usize>,
    pub sbus: Vec<Complex64>,
}

impl PolarSetup {
    pub fn new(net: &Network) -> Result<Self> {
        if !net.case.is_single_slack() {
            return Err(Error::Precondition(
                "the baselines support a single slack bus only".into(),
            ));
        }
        let ord = net.ordering();
        let slack = net.slack_index();
        let pq: Vec<usize> = (0..ord.n_load).collect();
        let pvpq: Vec<usize> = (ord.n_load..ord.len()).filter(|&k| k != slack).chain(pq.iter().copied()).collect();
        let p = ord.to_internal(&net.case.p_injection());
        let q = ord.to_internal(&net.case.q_demand_injection());
        let sbus = p.iter().zip(&q).map(|(&p, &q)| Complex64::new(p, q)).collect();
        Ok(PolarSetup { pvpq, pq, sbus })
    }

    pub fn voltages(vm: &[f64], va: &[f64]) -> Vec<Complex64> {
        vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    }

    /// V∘conj(YV) − S_bus.
    pub fn mismatch(&self, net: &Network, v: &[Complex64]) -> Vec<Complex64> {
        net.matrices
            .injections(v)
            .into_iter()
            .zip(&self.sbus)
            .map(|(s, sb)| s - sb)
            .collect()
    }
}

pub(crate) fn inf_norm(x: impl IntoIterator<Item = f64>) -> f64 {
    let mut m = 0.0f64;
    for v in x {
        if v.is_nan() {
            return f64::NAN;
        }
        m = m.max(v.abs());
    }
    m
}

/// Starting voltages in internal bus order. Generator magnitudes are always
/// reset to their setpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarInit {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl PolarInit {
    /// V_L = 1, generator setpoints, θ = 0.
    pub fn flat(net: &Network) -> Self {
        Self::with_load_magnitudes(net, &vec![1.0; net.n_load()])
    }

    pub fn with_load_magnitudes(net: &Network, vm_l: &[f64]) -> Self {
        let ord = net.ordering();
        let vm = (0..ord.len())
            .map(|k| {
                if k < ord.n_load {
                    vm_l[k]
                } else {
                    net.case.buses[ord.internal_to_case[k]].vm
                }
            })
            .collect();
        PolarInit {
            vm,
            va: vec![0.0; ord.len()],
        }
    }

    pub(crate) fn enforce_setpoints(&self, net: &Network) -> (Vec<f64>, Vec<f64>) {
        let ord = net.ordering();
        let mut vm = self.vm.clone();
        for k in ord.n_load..ord.len() {
            vm[k] = net.case.buses[ord.internal_to_case[k]].vm;
        }
        (vm, self.va.clone())
    }
}

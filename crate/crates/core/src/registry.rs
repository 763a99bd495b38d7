//! Interchangeable solvers behind one interface, looked up by name.

use crate::baselines::{solve_nr, FdlfScheme, FdlfSolver, NrOptions, PolarInit};
use crate::error::{Error, Result};
use crate::fppf::{build_constants, solve_fppf, FppfConstants, FppfOptions, FppfState, Injections, UpdateOrder};
use crate::netmodel::Network;
use crate::solution::Solution;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub order: UpdateOrder,
    /// Let the fixed-point solver start even if the assumption gate fails.
    pub allow_assumption_violations: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 100,
            order: UpdateOrder::VXcPsi,
            allow_assumption_violations: false,
        }
    }
}

impl SolverOptions {
    fn nr(&self) -> NrOptions {
        NrOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// A power flow method. `prepare` does the per-case work (factorizations,
/// constants) once; the prepared solver can then be run from many starts.
pub trait PowerFlowAlgorithm: Send + Sync {
    fn name(&self) -> &'static str;
    fn prepare(&self, net: &Network, opts: &SolverOptions) -> Result<Box<dyn PreparedSolver>>;
}

pub trait PreparedSolver: Send + Sync {
    /// Solves the case the solver was prepared for. `net` must be that case
    /// or one differing only in injections.
    fn solve(&self, net: &Network, init: &PolarInit) -> Result<Solution>;
}

pub struct Fppf;
pub struct NewtonRaphson;
pub struct FastDecoupled(pub FdlfScheme);

struct PreparedFppf {
    constants: FppfConstants,
    opts: FppfOptions,
}

impl PreparedSolver for PreparedFppf {
    fn solve(&self, net: &Network, init: &PolarInit) -> Result<Solution> {
        let c = &self.constants;
        let (vm, va) = init.enforce_setpoints(net);
        let vm_l = nalgebra::DVector::from_column_slice(&vm[..c.n_load]);
        let state = FppfState::from_voltages(c, &vm_l, &nalgebra::DVector::from_vec(va));
        Ok(solve_fppf(net, c, &Injections::from_network(net), state, &self.opts))
    }
}

impl PowerFlowAlgorithm for Fppf {
    fn name(&self) -> &'static str {
        "fppf"
    }

    fn prepare(&self, net: &Network, opts: &SolverOptions) -> Result<Box<dyn PreparedSolver>> {
        Ok(Box::new(PreparedFppf {
            constants: build_constants(net, opts.allow_assumption_violations)?,
            opts: FppfOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                order: opts.order,
            },
        }))
    }
}

struct PreparedNr(NrOptions);

impl PreparedSolver for PreparedNr {
    fn solve(&self, net: &Network, init: &PolarInit) -> Result<Solution> {
        solve_nr(net, init, &self.0)
    }
}

impl PowerFlowAlgorithm for NewtonRaphson {
    fn name(&self) -> &'static str {
        "nr"
    }

    fn prepare(&self, _net: &Network, opts: &SolverOptions) -> Result<Box<dyn PreparedSolver>> {
        let nr = opts.nr();
        nr.validate()?;
        Ok(Box::new(PreparedNr(nr)))
    }
}

struct PreparedFdlf(FdlfSolver, NrOptions);

impl PreparedSolver for PreparedFdlf {
    fn solve(&self, net: &Network, init: &PolarInit) -> Result<Solution> {
        self.0.solve(net, init, &self.1)
    }
}

impl PowerFlowAlgorithm for FastDecoupled {
    fn name(&self) -> &'static str {
        match self.0 {
            FdlfScheme::Xb => "fdlf",
            FdlfScheme::Bx => "fdlf-bx",
        }
    }

    fn prepare(&self, net: &Network, opts: &SolverOptions) -> Result<Box<dyn PreparedSolver>> {
        Ok(Box::new(PreparedFdlf(FdlfSolver::new(net, self.0)?, opts.nr())))
    }
}

pub struct AlgorithmRegistry {
    algorithms: Vec<Box<dyn PowerFlowAlgorithm>>,
}

impl Default for AlgorithmRegistry {
    fn default() -> Self {
        let mut r = AlgorithmRegistry { algorithms: Vec::new() };
        r.register(Box::new(Fppf));
        r.register(Box::new(NewtonRaphson));
        r.register(Box::new(FastDecoupled(FdlfScheme::Xb)));
        r.register(Box::new(FastDecoupled(FdlfScheme::Bx)));
        r
    }
}

impl AlgorithmRegistry {
    /// Adds an algorithm, replacing any with the same name.
    pub fn register(&mut self, algo: Box<dyn PowerFlowAlgorithm>) {
        self.algorithms.retain(|a| a.name() != algo.name());
        self.algorithms.push(algo);
    }

    pub fn get(&self, name: &str) -> Result<&dyn PowerFlowAlgorithm> {
        self.algorithms
            .iter()
            .find(|a| a.name() == name)
            .map(|a| a.as_ref())
            .ok_or_else(|| Error::UnknownAlgorithm(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.algorithms.iter().map(|a| a.name()).collect()
    }
}

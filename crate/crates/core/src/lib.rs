//! Fixed-point AC power flow for networks with losses, phase-shifting
//! transformers and a distributed slack bus, with Newton-Raphson and
//! fast-decoupled load flow as baselines.

pub mod baselines;
pub mod bigraph;
pub mod error;
pub mod experiments;
pub mod fppf;
pub mod netmodel;
pub mod registry;
pub mod solution;
pub mod twobus;

pub use baselines::PolarInit;
pub use error::{Error, Result};
pub use registry::{AlgorithmRegistry, PowerFlowAlgorithm, PreparedSolver, SolverOptions};
pub use solution::{Solution, SolveReport, Termination};

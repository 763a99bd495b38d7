//! Extended fixed-point power flow: per-case constants, the maps f_P and
//! f_Q, the loop-flow Newton step and the iteration driver.

mod constants;
mod maps;
mod solver;

pub use constants::{build_constants, FppfConstants, Injections, RANK_TOL};
pub use maps::{
    f_p, f_q, loop_jacobian, loop_newton_step, loop_residual, mismatch, powers, residuals, wrap_angle, FppfState,
    StepFailure,
};
pub use solver::{
    iterate, recover_theta, refine_theta, solve_fppf, state_magnitudes, sweep, verify_fixed_point, FixedPointReport, FppfOptions,
    FppfRun, UpdateOrder, LOOP_CONSISTENCY_TOL,
};

use std::collections::VecDeque;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::constants::{FppfConstants, Injections};
use super::maps::{self, FppfState, StepFailure};
use crate::bigraph::BidirGraph;
use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::solution::{Solution, SolveReport, Termination};

/// Tolerance on the non-tree edges when integrating angles.
pub const LOOP_CONSISTENCY_TOL: f64 = 1e-6;

/// Order of the three updates within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateOrder {
    /// v, then x_c, then ψ.
    #[default]
    VXcPsi,
    /// ψ, then x_c, then v.
    PsiXcV,
}

impl FromStr for UpdateOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v_xc_psi" | "v-xc-psi" => Ok(UpdateOrder::VXcPsi),
            "psi_xc_v" | "psi-xc-v" => Ok(UpdateOrder::PsiXcV),
            other => Err(Error::Model(format!(
                "unknown update order '{other}' (expected v_xc_psi or psi_xc_v)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FppfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub order: UpdateOrder,
}

impl Default for FppfOptions {
    fn default() -> Self {
        FppfOptions {
            tol: 1e-8,
            max_iter: 100,
            order: UpdateOrder::VXcPsi,
        }
    }
}

/// Raw result of the iteration, before voltages are recovered.
#[derive(Debug, Clone)]
pub struct FppfRun {
    /// Last state that passed every domain check.
    pub state: FppfState,
    pub termination: Termination,
    pub iterations: usize,
    pub trace: Vec<f64>,
    /// Every accepted state, including the initial one, when requested.
    pub history: Vec<FppfState>,
}

/// One full sweep of the three updates.
pub fn sweep(c: &FppfConstants, s: &FppfState, inj: &Injections, order: UpdateOrder) -> Result<FppfState, StepFailure> {
    match order {
        UpdateOrder::VXcPsi => {
            let v = maps::f_q(c, &s.psi, &s.v, inj)?;
            let xc = maps::loop_newton_step(c, &s.psi, &v, &s.xc)?;
            let psi = maps::f_p(c, &s.psi, &v, &xc, inj)?;
            Ok(FppfState { psi, v, xc })
        }
        UpdateOrder::PsiXcV => {
            let psi = maps::f_p(c, &s.psi, &s.v, &s.xc, inj)?;
            let xc = maps::loop_newton_step(c, &psi, &s.v, &s.xc)?;
            let v = maps::f_q(c, &psi, &s.v, inj)?;
            Ok(FppfState { psi, v, xc })
        }
    }
}

fn failure_to_termination(net: &Network, c: &FppfConstants, f: StepFailure, iteration: usize) -> Termination {
    match f {
        StepFailure::PsiOutOfRange { edge, psi } => {
            let (i, j) = c.endpoints[edge];
            Termination::LeftValidityRegion {
                iteration,
                edge,
                from: net.bus_id(i),
                to: net.bus_id(j),
                psi,
            }
        }
        StepFailure::NonPositiveVoltage { bus, v } => Termination::NonPositiveVoltage {
            iteration,
            bus: net.bus_id(bus),
            v,
        },
        StepFailure::SingularLoopJacobian => Termination::Singular {
            iteration,
            what: "loop-flow Jacobian".into(),
        },
        StepFailure::NonFinite => Termination::NonFinite { iteration },
    }
}

/// Runs the fixed-point iteration from `init`.
pub fn iterate(
    net: &Network,
    c: &FppfConstants,
    inj: &Injections,
    init: FppfState,
    opts: &FppfOptions,
    keep_history: bool,
) -> FppfRun {
    let mut state = init;
    let mut trace = vec![maps::mismatch(c, &state.psi, &state.v, inj)];
    let mut history = Vec::new();
    if keep_history {
        history.push(state.clone());
    }
    let mut k = 0;
    let mut termination = None;
    while !(trace[k] <= opts.tol) && k < opts.max_iter {
        if trace[k].is_nan() {
            termination = Some(Termination::NonFinite { iteration: k });
            break;
        }
        match sweep(c, &state, inj, opts.order) {
            Ok(next) => state = next,
            Err(f) => {
                termination = Some(failure_to_termination(net, c, f, k + 1));
                break;
            }
        }
        k += 1;
        trace.push(maps::mismatch(c, &state.psi, &state.v, inj));
        if keep_history {
            history.push(state.clone());
        }
    }
    let termination = termination.unwrap_or(if trace[k] <= opts.tol {
        Termination::Converged
    } else if trace[k].is_nan() {
        Termination::NonFinite { iteration: k }
    } else {
        Termination::MaxIterations
    });
    FppfRun {
        state,
        termination,
        iterations: k,
        trace,
        history,
    }
}

/// Recovers θ by integrating arcsin(ψ) along the spanning tree outward
/// from `reference`, then checks the non-tree edges.
pub fn recover_theta(graph: &BidirGraph, psi: &DVector<f64>, reference: usize, reference_angle: f64) -> Result<DVector<f64>> {
    let theta = integrate_tree(graph, psi, reference, reference_angle);
    for (k, e) in graph.edges.iter().enumerate() {
        if graph.in_tree[k] {
            continue;
        }
        let gap = maps::wrap_angle(theta[e.from] - theta[e.to] - psi[k].asin());
        if gap.abs() > LOOP_CONSISTENCY_TOL {
            return Err(Error::Consistency(format!(
                "angle differences around edge {k} disagree by {gap:.3e} rad"
            )));
        }
    }
    Ok(theta)
}

/// Least-squares correction of θ with edge weights `w`: minimizes
/// Σ w_k (θ_i − θ_j − arcsin ψ_k)² with θ_reference fixed. With w the
/// linearized branch stiffness this removes the first-order active power
/// error that tree integration leaves on the non-tree edges.
pub fn refine_theta(graph: &BidirGraph, psi: &DVector<f64>, w: &DVector<f64>, theta: &DVector<f64>, reference: usize) -> DVector<f64> {
    let n = graph.node_count;
    if graph.n_cycles() == 0 || n < 2 {
        return theta.clone();
    }
    let keep = |i: usize| if i < reference { Some(i) } else if i > reference { Some(i - 1) } else { None };
    let mut lap = DMatrix::zeros(n - 1, n - 1);
    let mut rhs = DVector::zeros(n - 1);
    for (k, e) in graph.edges.iter().enumerate() {
        let gap = maps::wrap_angle(theta[e.from] - theta[e.to] - psi[k].asin());
        let (a, b) = (keep(e.from), keep(e.to));
        if let Some(a) = a {
            lap[(a, a)] += w[k];
            rhs[a] -= w[k] * gap;
        }
        if let Some(b) = b {
            lap[(b, b)] += w[k];
            rhs[b] += w[k] * gap;
        }
        if let (Some(a), Some(b)) = (a, b) {
            lap[(a, b)] -= w[k];
            lap[(b, a)] -= w[k];
        }
    }
    match lap.cholesky() {
        Some(ch) => {
            let d = ch.solve(&rhs);
            DVector::from_fn(n, |i, _| theta[i] + keep(i).map_or(0.0, |j| d[j]))
        }
        None => theta.clone(),
    }
}

fn integrate_tree(graph: &BidirGraph, psi: &DVector<f64>, reference: usize, reference_angle: f64) -> DVector<f64> {
    let n = graph.node_count;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, e) in graph.edges.iter().enumerate().filter(|&(k, _)| graph.in_tree[k]) {
        adj[e.from].push(k);
        adj[e.to].push(k);
    }
    let mut theta = DVector::from_element(n, f64::NAN);
    theta[reference] = reference_angle;
    let mut queue = VecDeque::from([reference]);
    while let Some(u) = queue.pop_front() {
        for &k in &adj[u] {
            let e = &graph.edges[k];
            let d = psi[k].asin();
            let (w, value) = if e.from == u { (e.to, theta[u] - d) } else { (e.from, theta[u] + d) };
            if theta[w].is_nan() {
                theta[w] = value;
                queue.push_back(w);
            }
        }
    }
    theta
}

/// ∂(flow)/∂(angle difference) per edge at a state, averaged over the two
/// directions; positive under the standing assumptions.
fn stiffness(c: &FppfConstants, s: &FppfState) -> DVector<f64> {
    let h = c.h_of(&s.v);
    DVector::from_fn(c.n_edges(), |k, _| {
        let w = 0.5 * (c.dbp[k] + c.dbm[k]) * h[k] * (1.0 - s.psi[k] * s.psi[k]).sqrt();
        w.max(f64::EPSILON)
    })
}

/// Internal-order magnitudes for a state: [V_L°∘v; V_G].
pub fn state_magnitudes(c: &FppfConstants, v: &DVector<f64>) -> DVector<f64> {
    c.vcirc.component_mul(&c.g_of(v))
}

/// Solves from `init` and recovers (θ, V, Q_G, P_s).
pub fn solve_fppf(net: &Network, c: &FppfConstants, inj: &Injections, init: FppfState, opts: &FppfOptions) -> Solution {
    let start = Instant::now();
    let run = iterate(net, c, inj, init, opts, false);
    let mut termination = run.termination;
    let theta = if termination.converged() {
        match recover_theta(&net.graph, &run.state.psi, c.reference, c.reference_angle) {
            Ok(t) => refine_theta(&net.graph, &run.state.psi, &stiffness(c, &run.state), &t, c.reference),
            Err(e) => {
                log::warn!("{e}");
                termination = Termination::Singular {
                    iteration: run.iterations,
                    what: "loop-flow constraint at the reported solution".into(),
                };
                integrate_tree(&net.graph, &run.state.psi, c.reference, c.reference_angle)
            }
        }
    } else {
        integrate_tree(&net.graph, &run.state.psi, c.reference, c.reference_angle)
    };
    let vm = state_magnitudes(c, &run.state.v);
    let mut report = SolveReport {
        algorithm: "fppf".into(),
        termination,
        iterations: run.iterations,
        mismatch_trace: run.trace,
        wall_time_s: 0.0,
    };
    report.set_wall_time(start.elapsed());
    Solution::from_polar(net, vm.as_slice(), theta.as_slice(), report)
}

/// Residuals of the fixed-point and power-balance equations at a
/// candidate (θ, V_L).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FixedPointReport {
    /// ψ − f_P(ψ, v, x_c) with x_c the least-squares fit.
    pub active_map: f64,
    /// Cᵀarcsin ψ mod 2π.
    pub loop_flow: f64,
    /// v − f_Q(ψ, v).
    pub reactive_map: f64,
    /// Rᵀ(P̄ − 𝒫).
    pub active_balance: f64,
    /// Q_L − 𝒬.
    pub reactive_balance: f64,
}

impl FixedPointReport {
    pub fn max_map_residual(&self) -> f64 {
        self.active_map.max(self.loop_flow).max(self.reactive_map)
    }

    pub fn max_balance_residual(&self) -> f64 {
        self.active_balance.max(self.reactive_balance)
    }
}

/// Substitutes a candidate (θ, V_L), internal order, into both forms of the
/// equations.
pub fn verify_fixed_point(c: &FppfConstants, inj: &Injections, vm_l: &DVector<f64>, theta: &DVector<f64>) -> Result<FixedPointReport> {
    let mut s = FppfState::from_voltages(c, vm_l, theta);
    let h = c.h_of(&s.v);
    // particular part of hψ from the active balance, the rest fitted in ker M_B
    let hpsi = h.component_mul(&s.psi);
    let g = c.g_of(&s.v);
    let local = DVector::from_fn(c.n_bus, |i, _| (c.vcirc[i] * g[i]).powi(2) * c.gdiag[i]);
    let lossy = c
        .gamma_g
        .apply_abs(&h.component_mul(&s.psi.map(|x| (1.0 - x * x).sqrt())));
    let particular = &c.m_b_pinv * c.r_t(&(&inj.p_bar - local - lossy));
    if c.n_cycles() > 0 {
        s.xc = c.k.tr_mul(&(&hpsi - &particular));
    }
    let amax = |x: &DVector<f64>| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let to_domain = |e: StepFailure| Error::Domain(format!("{e:?}"));
    let psi_next = maps::f_p(c, &s.psi, &s.v, &s.xc, inj).map_err(to_domain)?;
    let v_next = maps::f_q(c, &s.psi, &s.v, inj).map_err(to_domain)?;
    let (rp, rq, rl) = maps::residuals(c, &s.psi, &s.v, inj);
    Ok(FixedPointReport {
        active_map: amax(&(&s.psi - psi_next)),
        loop_flow: amax(&rl),
        reactive_map: amax(&(&s.v - v_next)),
        active_balance: amax(&rp),
        reactive_balance: amax(&rq),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bigraph::Edge;
    use crate::fppf::build_constants;
    use crate::netmodel::{parse_case_str, CaseFormat};

    const CASE9: &str = include_str!("../../../../cases/case9.m");

    fn case9() -> (Network, FppfConstants, Injections) {
        let net = Network::new(parse_case_str(CASE9, CaseFormat::Matpower).unwrap()).unwrap();
        let c = build_constants(&net, false).unwrap();
        let inj = Injections::from_network(&net);
        (net, c, inj)
    }

    fn triangle() -> BidirGraph {
        let e = |from, to| Edge {
            from,
            to,
            branches: vec![],
        };
        BidirGraph::from_edges(3, vec![e(0, 1), e(1, 2), e(0, 2)]).unwrap()
    }

    #[test]
    fn update_order_names() {
        assert_eq!("v_xc_psi".parse::<UpdateOrder>().unwrap(), UpdateOrder::VXcPsi);
        assert_eq!("psi-xc-v".parse::<UpdateOrder>().unwrap(), UpdateOrder::PsiXcV);
        assert!("psi".parse::<UpdateOrder>().is_err());
    }

    #[test]
    fn flat_state() {
        let (_, c, _) = case9();
        let s = FppfState::flat(&c);
        assert!(s.psi.iter().all(|&p| p == 0.0));
        assert!(s.xc.iter().all(|&x| x == 0.0));
        for i in 0..c.n_load {
            assert!((s.v[i] * c.vcirc_l[i] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn theta_from_consistent_psi() {
        let g = triangle();
        let theta: DVector<f64> = DVector::from_vec(vec![0.0, -0.2, 0.15]);
        let psi = DVector::from_fn(3, |k, _| {
            let e = &g.edges[k];
            (theta[e.from] - theta[e.to]).sin()
        });
        let rec = recover_theta(&g, &psi, 0, 0.0).unwrap();
        assert!((rec - &theta).amax() < 1e-14);

        let mut bad = psi.clone();
        bad[0] += 0.01;
        assert!(recover_theta(&g, &bad, 0, 0.0).is_err());
    }

    #[test]
    fn refinement_spreads_loop_error() {
        let g = triangle();
        let theta: DVector<f64> = DVector::from_vec(vec![0.0, -0.2, 0.15]);
        let mut psi = DVector::from_fn(3, |k, _| {
            let e = &g.edges[k];
            (theta[e.from] - theta[e.to]).sin()
        });
        psi[2] = (theta[0] - theta[2] + 3e-7).sin();
        let w = DVector::from_element(3, 1.0);
        let start = recover_theta(&g, &psi, 0, 0.0).unwrap();
        let refined = refine_theta(&g, &psi, &w, &start, 0);
        assert_eq!(refined[0], 0.0);
        // equal weights: each edge ends up 1e-7 off its target
        for (k, e) in g.edges.iter().enumerate() {
            let gap = refined[e.from] - refined[e.to] - psi[k].asin();
            assert!((gap.abs() - 1e-7).abs() < 1e-12, "edge {k}: {gap:e}");
        }
    }

    #[test]
    fn both_orders_reach_the_same_point() {
        let (net, c, inj) = case9();
        let mut sols = Vec::new();
        for order in [UpdateOrder::VXcPsi, UpdateOrder::PsiXcV] {
            let opts = FppfOptions {
                order,
                ..FppfOptions::default()
            };
            let sol = solve_fppf(&net, &c, &inj, FppfState::flat(&c), &opts);
            assert!(sol.converged(), "{order:?}: {}", sol.report.termination);
            sols.push(sol);
        }
        let (dv, da) = sols[0].max_difference(&sols[1], net.case.position(net.case.slack).unwrap());
        assert!(dv < 1e-7 && da < 1e-7);
    }

    #[test]
    fn solution_is_a_fixed_point() {
        let (net, c, inj) = case9();
        let run = iterate(&net, &c, &inj, FppfState::flat(&c), &FppfOptions::default(), true);
        assert!(run.termination.converged());
        assert_eq!(run.history.len(), run.iterations + 1);
        assert!(run.trace.last().unwrap() < &1e-8);
        let next = sweep(&c, &run.state, &inj, UpdateOrder::VXcPsi).unwrap();
        assert!((&next.v - &run.state.v).amax() < 1e-8);
        assert!((&next.psi - &run.state.psi).amax() < 1e-8);
    }

    #[test]
    fn iteration_cap() {
        let (net, c, inj) = case9();
        let opts = FppfOptions {
            max_iter: 2,
            ..FppfOptions::default()
        };
        let run = iterate(&net, &c, &inj, FppfState::flat(&c), &opts, false);
        assert_eq!(run.termination, Termination::MaxIterations);
        assert_eq!(run.iterations, 2);
        assert_eq!(run.trace.len(), 3);
    }
}

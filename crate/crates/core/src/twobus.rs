//! Convergence certificates for the two-bus system: a PQ bus 1 fed from a
//! PV/slack bus 2 through one branch with losses, line charging and a
//! phase-shifting transformer at bus 2.
//!
//! The state is ξ = (ψ, x) with ψ = sin(θ₂ − θ₁) and x = v − 1, and one
//! iteration of the fixed-point algorithm is the map F_μ.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netmodel::{Branch, Bus, BusKind, CaseData, Generator};

/// Slack applied to the certificate inequalities, which hold with equality
/// at μ = 0, ε = 0.
pub const INEQ_TOL: f64 = 1e-12;

/// Perturbations away from the lossless, transformer-free branch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Perturbation {
    /// Series conductance.
    pub g: f64,
    /// Total line charging.
    pub b_c: f64,
    /// Tap ratio minus one.
    pub t_bar: f64,
    /// Phase shift (radians).
    pub theta_s: f64,
}

impl Perturbation {
    pub fn is_zero(&self) -> bool {
        *self == Perturbation::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoBusCase {
    /// Series susceptance, b > 0.
    pub b: f64,
    pub mu: Perturbation,
    pub v2: f64,
    /// Injections at bus 1 (negative for a load).
    pub p1: f64,
    pub q1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoBusParams {
    pub g_t: f64,
    pub b_t: f64,
    pub b_h: f64,
    pub rho: f64,
    pub rho_t: f64,
    /// Loading margins of the nominal system, P̄₁/(bV₂²) and Q₁/(bV₂²).
    pub gamma_p: f64,
    pub gamma_q: f64,
    /// γ̃ = k_μγ.
    pub gamma_p_t: f64,
    pub gamma_q_t: f64,
    pub k_mu: f64,
    pub v1_circ: f64,
}

pub fn derive_params(case: &TwoBusCase) -> Result<TwoBusParams> {
    let TwoBusCase { b, mu, v2, p1, q1 } = *case;
    if !(b > 0.0) {
        return Err(Error::Precondition(format!("series susceptance must be positive, got {b}")));
    }
    if !(mu.t_bar > -1.0) {
        return Err(Error::Precondition(format!("t_bar must exceed -1, got {}", mu.t_bar)));
    }
    if !(v2 > 0.0) {
        return Err(Error::Precondition(format!("V2 must be positive, got {v2}")));
    }
    let t = mu.t_bar + 1.0;
    let (s, c) = mu.theta_s.sin_cos();
    let g_t = (mu.g * c - b * s) / t;
    let b_t = (b * c + mu.g * s) / t;
    let b_h = b - mu.b_c / 2.0;
    if !(b_t > 0.0) {
        return Err(Error::Assumption(format!("b~ = {b_t:.6} must be positive")));
    }
    if !(b_h > 0.0) {
        return Err(Error::Assumption(format!("b^ = {b_h:.6} must be positive")));
    }
    let v1_circ = b_t / b_h * v2;
    let k_mu = b * b_h / (b_t * b_t);
    let gamma_p = p1 / (b * v2 * v2);
    let gamma_q = q1 / (b * v2 * v2);
    Ok(TwoBusParams {
        g_t,
        b_t,
        b_h,
        rho: mu.g / b_h,
        rho_t: g_t / b_t,
        gamma_p,
        gamma_q,
        gamma_p_t: p1 / (b_t * v1_circ * v2),
        gamma_q_t: q1 / (b_t * v1_circ * v2),
        k_mu,
        v1_circ,
    })
}

/// Half-widths (k₁⁻, k₂⁻) of the smallest nominal invariant box, and k₂⁺.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NominalBox {
    /// Signed k₁⁻ = −γ_P/(1 − k₂⁻); the box uses |k₁⁻|.
    pub k1m: f64,
    pub k2m: f64,
    pub k2p: f64,
}

impl NominalBox {
    /// The nominal high-voltage fixed point ξ = (k₁⁻, −k₂⁻).
    pub fn fixed_point(&self) -> (f64, f64) {
        (self.k1m, -self.k2m)
    }
}

pub fn nominal_box(gamma_p: f64, gamma_q: f64) -> Result<NominalBox> {
    let a = 4.0 * gamma_p * gamma_p - 4.0 * gamma_q;
    if !(a > 0.0) {
        return Err(Error::Domain(format!("4γ_P² − 4γ_Q = {a:.6} must be > 0")));
    }
    if !(a < 1.0) {
        return Err(Error::Domain(format!("4γ_P² − 4γ_Q = {a:.6} must be < 1")));
    }
    let disc = (0.25 + gamma_q - gamma_p * gamma_p).max(0.0).sqrt();
    let k2m = 1.0 - (0.5 + gamma_q + disc).sqrt();
    let k2p = 1.0 - (0.5 + gamma_q - disc).sqrt();
    Ok(NominalBox {
        k1m: -gamma_p / (1.0 - k2m),
        k2m,
        k2p,
    })
}

/// The ε-expanded box {|ψ| ≤ k1 + eps1, |x| ≤ k2 + eps2}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantBox {
    pub k1: f64,
    pub k2: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl InvariantBox {
    pub fn nominal(nb: &NominalBox) -> Self {
        InvariantBox {
            k1: nb.k1m.abs(),
            k2: nb.k2m,
            eps1: 0.0,
            eps2: 0.0,
        }
    }

    pub fn psi_max(&self) -> f64 {
        self.k1 + self.eps1
    }

    pub fn x_max(&self) -> f64 {
        self.k2 + self.eps2
    }

    pub fn contains(&self, psi: f64, x: f64, slack: f64) -> bool {
        psi.abs() <= self.psi_max() + slack && x.abs() <= self.x_max() + slack
    }
}

/// Left-hand sides of the two ε inequalities minus (ε₁, ε₂); the box is
/// certified when both are ≤ 0. Zero is the map E.
pub fn eps_map(p: &TwoBusParams, k1: f64, k2: f64, eps1: f64, eps2: f64) -> (f64, f64) {
    let c = 1.0 - k2;
    let gp = p.gamma_p.abs();
    let e1 = p.k_mu * gp / (c - eps2) - gp / c + p.rho * (1.0 + k2 + eps2) + p.rho_t - eps1;
    let s = k1 + eps1;
    let e2 = -p.k_mu * p.gamma_q / (c - eps2) + c + p.rho_t * s - (1.0 - s * s).sqrt() - eps2;
    (e1, e2)
}

fn eps_jacobian(p: &TwoBusParams, k1: f64, k2: f64, eps1: f64, eps2: f64) -> Matrix2<f64> {
    let c = 1.0 - k2;
    let d = (c - eps2).powi(2);
    let s = k1 + eps1;
    Matrix2::new(
        -1.0,
        p.k_mu * p.gamma_p.abs() / d + p.rho,
        p.rho_t + s / (1.0 - s * s).sqrt(),
        -p.k_mu * p.gamma_q / d - 1.0,
    )
}

/// True iff both ε inequalities hold for `bx`.
pub fn check_eps_invariance(p: &TwoBusParams, bx: &InvariantBox) -> Result<bool> {
    if bx.eps2 >= 1.0 - bx.k2 {
        return Err(Error::Precondition(format!(
            "eps2 = {} must be below 1 − k2 = {}",
            bx.eps2,
            1.0 - bx.k2
        )));
    }
    if bx.k1 + bx.eps1 > 1.0 {
        return Err(Error::Precondition(format!("k1 + eps1 = {} exceeds 1", bx.k1 + bx.eps1)));
    }
    let (e1, e2) = eps_map(p, bx.k1, bx.k2, bx.eps1, bx.eps2);
    Ok(e1 <= INEQ_TOL && e2 <= INEQ_TOL)
}

/// Result of the ε search.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpsOutcome {
    Certified(InvariantBox),
    Infeasible { reason: String },
}

impl EpsOutcome {
    pub fn certified(&self) -> Option<&InvariantBox> {
        match self {
            EpsOutcome::Certified(b) => Some(b),
            EpsOutcome::Infeasible { .. } => None,
        }
    }
}

fn failing_inequality(p: &TwoBusParams, k1: f64, k2: f64, eps1: f64, eps2: f64) -> String {
    let (e1, e2) = eps_map(p, k1, k2, eps1, eps2);
    let mut out = Vec::new();
    if e1 > INEQ_TOL {
        out.push(format!("psi bound exceeds eps1 by {e1:.3e}"));
    }
    if e2 > INEQ_TOL {
        out.push(format!("x bound exceeds eps2 by {e2:.3e}"));
    }
    out.join(", ")
}

/// Newton iteration on E(ε, μ) = 0 from ε = 0, halving steps that leave
/// ε₁ < 1 − k₁, ε₂ < 1 − k₂. A root with negative components is projected
/// onto ε ≥ 0 and accepted only if the inequalities hold there.
pub fn solve_eps(p: &TwoBusParams) -> Result<EpsOutcome> {
    let nb = nominal_box(p.gamma_p, p.gamma_q)?;
    let (k1, k2) = (nb.k1m.abs(), nb.k2m);
    let in_domain = |e: &Vector2<f64>| e[0] < 1.0 - k1 && e[1] < 1.0 - k2;
    let mut eps = Vector2::zeros();
    let mut converged = false;
    for _ in 0..100 {
        let (e1, e2) = eps_map(p, k1, k2, eps[0], eps[1]);
        let f = Vector2::new(e1, e2);
        if f.amax() <= 1e-14 {
            converged = true;
            break;
        }
        let Some(step) = eps_jacobian(p, k1, k2, eps[0], eps[1]).lu().solve(&f) else {
            return Ok(EpsOutcome::Infeasible {
                reason: "singular Jacobian of E".into(),
            });
        };
        let mut t = 1.0;
        let mut next = eps - step * t;
        while !in_domain(&next) && t > 1e-12 {
            t *= 0.5;
            next = eps - step * t;
        }
        if !in_domain(&next) {
            return Ok(EpsOutcome::Infeasible {
                reason: "Newton iterate left the admissible eps domain".into(),
            });
        }
        if (next - eps).amax() <= 1e-15 {
            eps = next;
            let (e1, e2) = eps_map(p, k1, k2, eps[0], eps[1]);
            converged = e1.abs().max(e2.abs()) <= 1e-10;
            break;
        }
        eps = next;
    }
    if !converged {
        return Ok(EpsOutcome::Infeasible {
            reason: format!(
                "no root of E found inside the domain; {}",
                failing_inequality(p, k1, k2, eps[0].max(0.0), eps[1].max(0.0))
            ),
        });
    }
    let bx = InvariantBox {
        k1,
        k2,
        eps1: eps[0].max(0.0),
        eps2: eps[1].max(0.0),
    };
    if bx.k1 + bx.eps1 > 1.0 {
        return Ok(EpsOutcome::Infeasible {
            reason: "box exceeds |psi| <= 1".into(),
        });
    }
    if check_eps_invariance(p, &bx)? {
        Ok(EpsOutcome::Certified(bx))
    } else {
        Ok(EpsOutcome::Infeasible {
            reason: failing_inequality(p, bx.k1, bx.k2, bx.eps1, bx.eps2),
        })
    }
}

/// One application of F_μ; `None` when |ψ| leaves [−1, 1] or x ≤ −1.
pub fn f_mu(p: &TwoBusParams, psi: f64, x: f64) -> Option<(f64, f64)> {
    if psi.abs() > 1.0 || x <= -1.0 {
        return None;
    }
    let u = x + 1.0;
    let psi_next = -p.gamma_p_t / u + p.rho * u - p.rho_t * (1.0 - psi * psi).sqrt();
    if psi_next.abs() > 1.0 || psi_next.is_nan() {
        return None;
    }
    let x_next = p.gamma_q_t / u - p.rho_t * psi_next + (1.0 - psi_next * psi_next).sqrt() - 1.0;
    Some((psi_next, x_next))
}

/// Analytic Jacobian of F_μ at (ψ, x).
pub fn f_mu_jacobian(p: &TwoBusParams, psi: f64, x: f64) -> Option<Matrix2<f64>> {
    let u = x + 1.0;
    let root = (1.0 - psi * psi).sqrt();
    let f1 = -p.gamma_p_t / u + p.rho * u - p.rho_t * root;
    if f1.abs() >= 1.0 || root == 0.0 || u <= 0.0 {
        return None;
    }
    let d1_psi = p.rho_t * psi / root;
    let d1_x = p.gamma_p_t / (u * u) + p.rho;
    let w = -p.rho_t - f1 / (1.0 - f1 * f1).sqrt();
    let j = Matrix2::new(d1_psi, d1_x, w * d1_psi, -p.gamma_q_t / (u * u) + w * d1_x);
    j.iter().all(|v| v.is_finite()).then_some(j)
}

fn inf_norm(m: &Matrix2<f64>) -> f64 {
    (m[(0, 0)].abs() + m[(0, 1)].abs()).max(m[(1, 0)].abs() + m[(1, 1)].abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionEstimate {
    /// Largest ∞-norm of the Jacobian found on the grid.
    pub factor: f64,
    /// Grid points where F_μ is undefined.
    pub excluded: usize,
}

/// Samples ‖∂F_μ‖∞ on a grid_n × grid_n lattice over the box.
pub fn contraction_factor(p: &TwoBusParams, bx: &InvariantBox, grid_n: usize) -> ContractionEstimate {
    let n = grid_n.max(2);
    let (a, b) = (bx.psi_max(), bx.x_max());
    let mut factor = 0.0f64;
    let mut excluded = 0;
    for i in 0..n {
        let psi = -a + 2.0 * a * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let x = -b + 2.0 * b * j as f64 / (n - 1) as f64;
            match f_mu_jacobian(p, psi, x) {
                Some(jac) => factor = factor.max(inf_norm(&jac)),
                None => excluded += 1,
            }
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} grid points excluded from the contraction estimate");
    }
    ContractionEstimate { factor, excluded }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// ξ_0, ξ_1, ... as (ψ, x).
    pub points: Vec<(f64, f64)>,
    /// True if the iteration stopped because F_μ left its domain.
    pub exited: bool,
}

impl Trajectory {
    pub fn last(&self) -> (f64, f64) {
        *self.points.last().expect("trajectory holds the initial point")
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "psi", "x"])?;
        for (k, (psi, x)) in self.points.iter().enumerate() {
            out.write_record([k.to_string(), psi.to_string(), x.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Iterates F_μ `iters` times from (ψ₀, x₀).
pub fn simulate_fmu(case: &TwoBusCase, init: (f64, f64), iters: usize) -> Result<Trajectory> {
    iterate_map(&derive_params(case)?, init, iters)
}

pub fn iterate_map(p: &TwoBusParams, init: (f64, f64), iters: usize) -> Result<Trajectory> {
    let (psi0, x0) = init;
    if psi0.abs() > 1.0 || x0 <= -1.0 {
        return Err(Error::Precondition(format!("initial point ({psi0}, {x0}) outside the domain")));
    }
    let mut points = vec![init];
    let mut exited = false;
    let mut cur = init;
    for _ in 0..iters {
        match f_mu(p, cur.0, cur.1) {
            Some(next) => {
                cur = next;
                points.push(next);
            }
            None => {
                exited = true;
                break;
            }
        }
    }
    Ok(Trajectory { points, exited })
}

/// The equivalent network: bus 1 PQ, bus 2 the single slack, one branch
/// from bus 2 (tap side) to bus 1.
pub fn to_case_data(case: &TwoBusCase) -> Result<CaseData> {
    let TwoBusCase { b, mu, v2, p1, q1 } = *case;
    let z2 = mu.g * mu.g + b * b;
    let data = CaseData {
        base_mva: 100.0,
        buses: vec![
            Bus {
                id: 1,
                kind: BusKind::Pq,
                pd: -p1,
                qd: -q1,
                gs: 0.0,
                bs: 0.0,
                vm: 1.0,
                va: 0.0,
            },
            Bus {
                id: 2,
                kind: BusKind::Pv,
                pd: 0.0,
                qd: 0.0,
                gs: 0.0,
                bs: 0.0,
                vm: v2,
                va: 0.0,
            },
        ],
        gens: vec![Generator {
            bus: 2,
            pg: 0.0,
            qg: 0.0,
            vg: v2,
            participation: 1.0,
        }],
        branches: vec![Branch {
            from: 2,
            to: 1,
            r: mu.g / z2,
            x: b / z2,
            b_c: mu.b_c,
            tap: mu.t_bar + 1.0,
            shift: mu.theta_s,
            in_service: true,
        }],
        slack: 2,
    };
    data.validate()?;
    Ok(data)
}

/// Everything the certification pipeline produces for one case.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub params: TwoBusParams,
    pub nominal: NominalBox,
    pub outcome: EpsOutcome,
    pub contraction: Option<ContractionEstimate>,
    /// Trajectory from the box centre, when certified.
    pub trajectory: Option<Trajectory>,
}

impl Certificate {
    /// Certified invariant box with a sampled contraction factor below 1.
    pub fn passed(&self) -> bool {
        self.outcome.certified().is_some() && self.contraction.is_some_and(|c| c.factor < 1.0)
    }
}

pub fn certify(case: &TwoBusCase, grid_n: usize, iters: usize) -> Result<Certificate> {
    let params = derive_params(case)?;
    let nominal = nominal_box(params.gamma_p, params.gamma_q)?;
    let outcome = solve_eps(&params)?;
    let (contraction, trajectory) = match outcome.certified() {
        Some(bx) => (
            Some(contraction_factor(&params, bx, grid_n)),
            Some(iterate_map(&params, (0.0, 0.0), iters)?),
        ),
        None => (None, None),
    };
    Ok(Certificate {
        params,
        nominal,
        outcome,
        contraction,
        trajectory,
    })
}

/// One row of a certification scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub g: f64,
    pub b_c: f64,
    pub t_bar: f64,
    pub theta_s: f64,
    pub feasible: bool,
    /// Empty when not certified.
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub contraction_factor: Option<f64>,
}

/// Certifies `base` with each perturbation in turn. Perturbations that
/// violate the parameter preconditions are reported as infeasible.
pub fn scan(base: &TwoBusCase, mus: &[Perturbation], grid_n: usize) -> Vec<ScanRow> {
    mus.iter()
        .map(|&mu| {
            let case = TwoBusCase { mu, ..*base };
            let cert = derive_params(&case).and_then(|p| Ok((p, solve_eps(&p)?)));
            let (feasible, eps1, eps2, factor) = match cert {
                Ok((p, EpsOutcome::Certified(bx))) => (
                    true,
                    Some(bx.eps1),
                    Some(bx.eps2),
                    Some(contraction_factor(&p, &bx, grid_n).factor),
                ),
                _ => (false, None, None, None),
            };
            ScanRow {
                g: mu.g,
                b_c: mu.b_c,
                t_bar: mu.t_bar,
                theta_s: mu.theta_s,
                feasible,
                eps1,
                eps2,
                contraction_factor: factor,
            }
        })
        .collect()
}

pub fn write_scan_csv(rows: &[ScanRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

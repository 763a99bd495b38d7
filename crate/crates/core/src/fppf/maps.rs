use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::constants::{FppfConstants, Injections};

/// Iteration variables.
#[derive(Debug, Clone, PartialEq)]
pub struct FppfState {
    pub psi: DVector<f64>,
    pub v: DVector<f64>,
    pub xc: DVector<f64>,
}

impl FppfState {
    /// State for load voltages `vm_l` and bus angles `theta` (internal order),
    /// with x_c = 0.
    pub fn from_voltages(c: &FppfConstants, vm_l: &DVector<f64>, theta: &DVector<f64>) -> Self {
        FppfState {
            psi: DVector::from_iterator(
                c.n_edges(),
                c.endpoints.iter().map(|&(i, j)| (theta[i] - theta[j]).sin()),
            ),
            v: vm_l.component_div(&c.vcirc_l),
            xc: DVector::zeros(c.n_cycles()),
        }
    }

    /// V_L = 1, θ = 0.
    pub fn flat(c: &FppfConstants) -> Self {
        Self::from_voltages(c, &DVector::from_element(c.n_load, 1.0), &DVector::zeros(c.n_bus))
    }
}

/// Why a map could not be applied.
#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    /// |ψ_k| > 1 (or = 1 where a derivative of arcsin is needed).
    PsiOutOfRange { edge: usize, psi: f64 },
    NonPositiveVoltage { bus: usize, v: f64 },
    SingularLoopJacobian,
    NonFinite,
}

fn check_psi(psi: &DVector<f64>, strict: bool) -> Result<(), StepFailure> {
    for (edge, &p) in psi.iter().enumerate() {
        if p.is_nan() {
            return Err(StepFailure::NonFinite);
        }
        if p.abs() > 1.0 || (strict && p.abs() == 1.0) {
            return Err(StepFailure::PsiOutOfRange { edge, psi: p });
        }
    }
    Ok(())
}

fn check_v(v: &DVector<f64>) -> Result<(), StepFailure> {
    for (bus, &x) in v.iter().enumerate() {
        if x.is_nan() {
            return Err(StepFailure::NonFinite);
        }
        if x <= 0.0 {
            return Err(StepFailure::NonPositiveVoltage { bus, v: x });
        }
    }
    Ok(())
}

fn sqrt_one_minus_sq(psi: &DVector<f64>) -> DVector<f64> {
    psi.map(|p| (1.0 - p * p).sqrt())
}

/// Reduces an angle into (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Reactive update v ← f_Q(ψ, v).
pub fn f_q(c: &FppfConstants, psi: &DVector<f64>, v: &DVector<f64>, inj: &Injections) -> Result<DVector<f64>, StepFailure> {
    check_v(v)?;
    check_psi(psi, false)?;
    let n = c.n_load;
    let h = c.h_of(v);
    let hpsi = h.component_mul(psi);
    let hcos = h.component_mul(&sqrt_one_minus_sq(psi).map(|s| 1.0 - s));
    let gg = c.gamma_g.apply(&hpsi);
    let gba = c.gamma_b.apply_abs(&hcos);
    let rhs = DVector::from_fn(n, |i, _| (inj.q_l[i] - gg[i] - gba[i]) / v[i]);
    let next = c.solve_s(&rhs).map(|x| 1.0 - 0.25 * x);
    check_v(&next)?;
    Ok(next)
}

/// Active update ψ ← f_P(ψ, v, x_c).
pub fn f_p(
    c: &FppfConstants,
    psi: &DVector<f64>,
    v: &DVector<f64>,
    xc: &DVector<f64>,
    inj: &Injections,
) -> Result<DVector<f64>, StepFailure> {
    check_v(v)?;
    check_psi(psi, false)?;
    let h = c.h_of(v);
    let g = c.g_of(v);
    let local = DVector::from_fn(c.n_bus, |i, _| {
        let vi = c.vcirc[i] * g[i];
        vi * c.gdiag[i] * vi
    });
    let lossy = c.gamma_g.apply_abs(&h.component_mul(&sqrt_one_minus_sq(psi)));
    let resid = &inj.p_bar - local - lossy;
    let mut hpsi = &c.m_b_pinv * c.r_t(&resid);
    if c.n_cycles() > 0 {
        hpsi += &c.k * xc;
    }
    let next = hpsi.component_div(&h);
    check_psi(&next, false)?;
    Ok(next)
}

/// Cᵀarcsin(ψ), each entry reduced into (−π, π].
pub fn loop_residual(c: &FppfConstants, psi: &DVector<f64>) -> DVector<f64> {
    c.c_t(&psi.map(f64::asin)).map(wrap_angle)
}

/// J_c = Cᵀ(I − [ψ]²)^{−1/2}[h(v)]⁻¹K.
pub fn loop_jacobian(c: &FppfConstants, psi: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let h = c.h_of(v);
    let d = DVector::from_fn(c.n_edges(), |k, _| 1.0 / ((1.0 - psi[k] * psi[k]).sqrt() * h[k]));
    let dk = DMatrix::from_fn(c.n_edges(), c.n_cycles(), |k, j| d[k] * c.k[(k, j)]);
    DMatrix::from_fn(c.n_cycles(), c.n_cycles(), |r, j| {
        c.cycles[r].iter().map(|&(k, s)| f64::from(s) * dk[(k, j)]).sum()
    })
}

/// One Newton step on Cᵀarcsin(ψ) = 0 in x_c; `v` should be the newest
/// voltage iterate.
pub fn loop_newton_step(
    c: &FppfConstants,
    psi: &DVector<f64>,
    v: &DVector<f64>,
    xc: &DVector<f64>,
) -> Result<DVector<f64>, StepFailure> {
    if c.n_cycles() == 0 {
        return Ok(xc.clone());
    }
    check_psi(psi, true)?;
    let res = loop_residual(c, psi);
    let j = loop_jacobian(c, psi, v);
    let step = j.lu().solve(&res).ok_or(StepFailure::SingularLoopJacobian)?;
    if step.iter().any(|x| !x.is_finite()) {
        return Err(StepFailure::SingularLoopJacobian);
    }
    Ok(xc - step)
}

/// Bus active and reactive injections (𝒫 for all buses, 𝒬 for load buses)
/// as functions of (ψ, v).
pub fn powers(c: &FppfConstants, psi: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let h = c.h_of(v);
    let g = c.g_of(v);
    let sq = sqrt_one_minus_sq(psi);
    let hpsi = h.component_mul(psi);
    let hsq = h.component_mul(&sq);
    let vv = DVector::from_fn(c.n_bus, |i, _| (c.vcirc[i] * g[i]).powi(2));
    let p = vv.component_mul(&c.gdiag) + c.gamma_g.apply_abs(&hsq) + c.gamma_b.apply(&hpsi);
    let gg = c.gamma_g.apply(&hpsi);
    let gba = c.gamma_b.apply_abs(&hsq);
    let q = DVector::from_fn(c.n_load, |i, _| -vv[i] * c.bdiag[i] + gg[i] - gba[i]);
    (p, q)
}

/// The three residual blocks: Rᵀ(P̄ − 𝒫), Q_L − 𝒬, Cᵀarcsin ψ mod 2π.
pub fn residuals(
    c: &FppfConstants,
    psi: &DVector<f64>,
    v: &DVector<f64>,
    inj: &Injections,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let (p, q) = powers(c, psi, v);
    (c.r_t(&(&inj.p_bar - p)), &inj.q_l - q, loop_residual(c, psi))
}

fn amax(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0, |m: f64, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

/// ∞-norm of the stacked residual.
pub fn mismatch(c: &FppfConstants, psi: &DVector<f64>, v: &DVector<f64>, inj: &Injections) -> f64 {
    let (rp, rq, rl) = residuals(c, psi, v, inj);
    let parts = [amax(&rp), amax(&rq), amax(&rl)];
    if parts.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    parts.into_iter().fold(0.0, f64::max)
}

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{inf_norm, NrOptions, PolarInit, PolarSetup};
use crate::error::Result;
use crate::netmodel::Network;
use crate::solution::{Solution, SolveReport, Termination};

fn stacked(setup: &PolarSetup, mis: &[Complex64]) -> DVector<f64> {
    DVector::from_iterator(
        setup.pvpq.len() + setup.pq.len(),
        setup.pvpq.iter().map(|&k| mis[k].re).chain(setup.pq.iter().map(|&k| mis[k].im)),
    )
}

/// Polar Jacobian [∂P/∂θ ∂P/∂|V|; ∂Q/∂θ ∂Q/∂|V|] restricted to the unknowns.
fn jacobian(net: &Network, setup: &PolarSetup, v: &[Complex64]) -> DMatrix<f64> {
    let nb = v.len();
    let nm = &net.matrices;
    let npv = setup.pvpq.len();
    let mut col_a = vec![usize::MAX; nb];
    let mut col_m = vec![usize::MAX; nb];
    for (c, &k) in setup.pvpq.iter().enumerate() {
        col_a[k] = c;
    }
    for (c, &k) in setup.pq.iter().enumerate() {
        col_m[k] = npv + c;
    }
    let mut row_p = vec![usize::MAX; nb];
    let mut row_q = vec![usize::MAX; nb];
    for (r, &k) in setup.pvpq.iter().enumerate() {
        row_p[k] = r;
    }
    for (r, &k) in setup.pq.iter().enumerate() {
        row_q[k] = npv + r;
    }
    let dim = npv + setup.pq.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let j = Complex64::i();
    for i in 0..nb {
        if row_p[i] == usize::MAX && row_q[i] == usize::MAX {
            continue;
        }
        let current: Complex64 = nm.y_row(i).map(|(k, y)| y * v[k]).sum();
        let ui = v[i] / v[i].norm();
        for (k, y) in nm.y_row(i) {
            let uk = v[k] / v[k].norm();
            let mut ds_da = -j * v[i] * (y * v[k]).conj();
            let mut ds_dm = v[i] * (y * uk).conj();
            if k == i {
                ds_da += j * v[i] * current.conj();
                ds_dm += current.conj() * ui;
            }
            for (row, part) in [(row_p[i], 0), (row_q[i], 1)] {
                if row == usize::MAX {
                    continue;
                }
                let pick = |z: Complex64| if part == 0 { z.re } else { z.im };
                if col_a[k] != usize::MAX {
                    jac[(row, col_a[k])] += pick(ds_da);
                }
                if col_m[k] != usize::MAX {
                    jac[(row, col_m[k])] += pick(ds_dm);
                }
            }
        }
    }
    jac
}

/// Full polar Newton-Raphson from `init`.
pub fn solve_nr(net: &Network, init: &PolarInit, opts: &NrOptions) -> Result<Solution> {
    opts.validate()?;
    let start = Instant::now();
    let setup = PolarSetup::new(net)?;
    let (mut vm, mut va) = init.enforce_setpoints(net);
    let mut v = PolarSetup::voltages(&vm, &va);
    let mut f = stacked(&setup, &setup.mismatch(net, &v));
    let mut trace = vec![inf_norm(f.iter().copied())];
    let mut k = 0;
    let mut termination = None;
    while !(trace[k] <= opts.tol) && k < opts.max_iter {
        if trace[k].is_nan() {
            termination = Some(Termination::NonFinite { iteration: k });
            break;
        }
        let jac = jacobian(net, &setup, &v);
        let Some(dx) = jac.lu().solve(&f) else {
            termination = Some(Termination::Singular {
                iteration: k + 1,
                what: "Newton-Raphson Jacobian".into(),
            });
            break;
        };
        k += 1;
        let npv = setup.pvpq.len();
        for (c, &b) in setup.pvpq.iter().enumerate() {
            va[b] -= dx[c];
        }
        for (c, &b) in setup.pq.iter().enumerate() {
            vm[b] -= dx[npv + c];
        }
        v = PolarSetup::voltages(&vm, &va);
        for (b, z) in v.iter().enumerate() {
            vm[b] = z.norm();
            va[b] = z.arg();
        }
        f = stacked(&setup, &setup.mismatch(net, &v));
        trace.push(inf_norm(f.iter().copied()));
    }
    let termination = termination.unwrap_or(if trace[k] <= opts.tol {
        Termination::Converged
    } else if trace[k].is_nan() {
        Termination::NonFinite { iteration: k }
    } else {
        Termination::MaxIterations
    });
    let report = SolveReport {
        algorithm: "nr".into(),
        termination,
        iterations: k,
        mismatch_trace: trace,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(Solution::from_polar(net, &vm, &va, report))
}

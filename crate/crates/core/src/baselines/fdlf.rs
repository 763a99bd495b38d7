use std::time::Instant;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use sprs::CsMat;

use super::{inf_norm, NrOptions, PolarInit, PolarSetup};
use crate::error::{Error, Result};
use crate::netmodel::{admittance_parts, Branch, Network};
use crate::solution::{Solution, SolveReport, Termination};

/// Which matrix drops the series resistance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdlfScheme {
    /// B′ from reactances only, B″ keeps resistance.
    #[default]
    Xb,
    /// B′ keeps resistance, B″ drops it.
    Bx,
}

/// Fast-decoupled solver with B′ and B″ factored once per case.
#[derive(Debug, Clone)]
pub struct FdlfSolver {
    scheme: FdlfScheme,
    setup: PolarSetup,
    bp: LU<f64, Dyn, Dyn>,
    bpp: LU<f64, Dyn, Dyn>,
}

fn submatrix(m: &CsMat<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut pos = vec![usize::MAX; m.rows()];
    for (c, &k) in idx.iter().enumerate() {
        pos[k] = c;
    }
    let mut out = DMatrix::zeros(idx.len(), idx.len());
    for (&v, (i, j)) in m.iter() {
        if pos[i] != usize::MAX && pos[j] != usize::MAX {
            out[(pos[i], pos[j])] = -v;
        }
    }
    out
}

impl FdlfSolver {
    pub fn new(net: &Network, scheme: FdlfScheme) -> Result<Self> {
        let setup = PolarSetup::new(net)?;
        let ord = net.ordering();
        let drop_r = |br: &Branch| Branch { r: 0.0, ..br.clone() };
        let (_, b_prime) = admittance_parts(&net.case, ord, false, |br| {
            let base = Branch {
                b_c: 0.0,
                tap: 1.0,
                shift: 0.0,
                ..br.clone()
            };
            match scheme {
                FdlfScheme::Xb => drop_r(&base),
                FdlfScheme::Bx => base,
            }
        })?;
        let (_, b_second) = admittance_parts(&net.case, ord, true, |br| {
            let base = Branch { shift: 0.0, ..br.clone() };
            match scheme {
                FdlfScheme::Xb => base,
                FdlfScheme::Bx => drop_r(&base),
            }
        })?;
        let bp = submatrix(&b_prime, &setup.pvpq).lu();
        let bpp = submatrix(&b_second, &setup.pq).lu();
        if !bp.is_invertible() || !bpp.is_invertible() {
            return Err(Error::Numerical("singular B' or B'' matrix".into()));
        }
        Ok(FdlfSolver { scheme, setup, bp, bpp })
    }

    pub fn scheme(&self) -> FdlfScheme {
        self.scheme
    }

    /// Mismatches divided by |V|: (P on non-slack buses, Q on load buses).
    fn scaled(&self, net: &Network, vm: &[f64], va: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let v = PolarSetup::voltages(vm, va);
        let mis = self.setup.mismatch(net, &v);
        let p = DVector::from_iterator(self.setup.pvpq.len(), self.setup.pvpq.iter().map(|&k| mis[k].re / vm[k]));
        let q = DVector::from_iterator(self.setup.pq.len(), self.setup.pq.iter().map(|&k| mis[k].im / vm[k]));
        (p, q)
    }

    pub fn solve(&self, net: &Network, init: &PolarInit, opts: &NrOptions) -> Result<Solution> {
        opts.validate()?;
        let start = Instant::now();
        let (mut vm, mut va) = init.enforce_setpoints(net);
        let norm = |p: &DVector<f64>, q: &DVector<f64>| inf_norm(p.iter().chain(q.iter()).copied());
        let (mut p, mut q) = self.scaled(net, &vm, &va);
        let mut trace = vec![norm(&p, &q)];
        let mut k = 0;
        let mut termination = None;
        if !(trace[0] <= opts.tol) {
            while k < opts.max_iter {
                k += 1;
                let da = self.bp.solve(&p).expect("factored");
                for (c, &b) in self.setup.pvpq.iter().enumerate() {
                    va[b] -= da[c];
                }
                (p, q) = self.scaled(net, &vm, &va);
                let m = norm(&p, &q);
                if m.is_nan() {
                    trace.push(m);
                    termination = Some(Termination::NonFinite { iteration: k });
                    break;
                }
                if m <= opts.tol {
                    trace.push(m);
                    termination = Some(Termination::Converged);
                    break;
                }
                let dm = self.bpp.solve(&q).expect("factored");
                for (c, &b) in self.setup.pq.iter().enumerate() {
                    vm[b] -= dm[c];
                }
                (p, q) = self.scaled(net, &vm, &va);
                let m = norm(&p, &q);
                trace.push(m);
                if m.is_nan() {
                    termination = Some(Termination::NonFinite { iteration: k });
                    break;
                }
                if m <= opts.tol {
                    termination = Some(Termination::Converged);
                    break;
                }
            }
        }
        let termination = termination.unwrap_or(if trace[k] <= opts.tol {
            Termination::Converged
        } else {
            Termination::MaxIterations
        });
        let report = SolveReport {
            algorithm: match self.scheme {
                FdlfScheme::Xb => "fdlf".into(),
                FdlfScheme::Bx => "fdlf-bx".into(),
            },
            termination,
            iterations: k,
            mismatch_trace: trace,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        Ok(Solution::from_polar(net, &vm, &va, report))
    }
}

/// Fast-decoupled load flow from `init`.
pub fn solve_fdlf(net: &Network, init: &PolarInit, opts: &NrOptions, scheme: FdlfScheme) -> Result<Solution> {
    FdlfSolver::new(net, scheme)?.solve(net, init, opts)
}

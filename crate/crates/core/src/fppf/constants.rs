use nalgebra::{DMatrix, DVector};

use crate::bigraph::{aw_incidence, AwIncidence};
use crate::error::{Error, Result};
use crate::netmodel::Network;

/// Relative singular-value threshold for the rank of M_B.
pub const RANK_TOL: f64 = 1e-8;

/// Everything the fixed-point maps need that does not change between
/// iterations. Immutable once built.
#[derive(Debug, Clone)]
pub struct FppfConstants {
    pub n_load: usize,
    pub n_bus: usize,
    /// Open-circuit load voltages V_L° = −B_LL⁻¹B_LG V_G.
    pub vcirc_l: DVector<f64>,
    /// V° = [V_L°; V_G].
    pub vcirc: DVector<f64>,
    pub dbp: DVector<f64>,
    pub dbm: DVector<f64>,
    pub dgp: DVector<f64>,
    pub dgm: DVector<f64>,
    pub gamma_b: AwIncidence,
    pub gamma_g: AwIncidence,
    /// S = ¼[V_L°]B_LL[V_L°].
    pub s: DMatrix<f64>,
    s_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub alpha: DVector<f64>,
    /// Slack index when α is a unit vector; R is then I without that column.
    pub single_slack: Option<usize>,
    /// (n+m)×(n+m−1) with Rᵀα = 0.
    pub r: DMatrix<f64>,
    pub m_b: DMatrix<f64>,
    /// M_B† = M_Bᵀ(M_B M_Bᵀ)⁻¹.
    pub m_b_pinv: DMatrix<f64>,
    /// Orthonormal basis of ker M_B, |E| × n_c.
    pub k: DMatrix<f64>,
    pub cycles: Vec<Vec<(usize, i32)>>,
    pub endpoints: Vec<(usize, usize)>,
    pub gdiag: DVector<f64>,
    pub bdiag: DVector<f64>,
    /// Angle reference bus (internal index) and its case angle.
    pub reference: usize,
    pub reference_angle: f64,
}

/// Known injections in internal order.
#[derive(Debug, Clone)]
pub struct Injections {
    /// P̄ for every bus.
    pub p_bar: DVector<f64>,
    /// Q at load buses.
    pub q_l: DVector<f64>,
}

impl Injections {
    pub fn from_network(net: &Network) -> Self {
        let ord = net.ordering();
        let p = ord.to_internal(&net.case.p_injection());
        let q = ord.to_internal(&net.case.q_demand_injection());
        Injections {
            p_bar: DVector::from_vec(p),
            q_l: DVector::from_iterator(ord.n_load, q.into_iter().take(ord.n_load)),
        }
    }
}

/// Columns 1..N of the Householder reflector sending α to a multiple of
/// e_p, p = argmax |α|.
fn householder_complement(alpha: &DVector<f64>) -> DMatrix<f64> {
    let n = alpha.len();
    let a = alpha / alpha.norm();
    let p = a.iamax();
    let mut w = a.clone();
    w[p] += a[p].signum();
    let h = DMatrix::identity(n, n) - (&w * w.transpose()) * (2.0 / w.norm_squared());
    h.remove_column(p)
}

/// Builds the per-case constants. Refuses to start when the solver gate of
/// the assumption report fails, unless `allow_violations` is set.
pub fn build_constants(net: &Network, allow_violations: bool) -> Result<FppfConstants> {
    let report = net.check_assumptions();
    if !report.solver_gate_ok() && !allow_violations {
        return Err(Error::Assumption(report.failures().join("; ")));
    }
    let nm = &net.matrices;
    let ord = net.ordering();
    let n = ord.n_load;
    let n_bus = ord.len();
    let graph = &net.graph;

    let vg = DVector::from_iterator(
        ord.n_gen,
        (n..n_bus).map(|k| net.case.buses[ord.internal_to_case[k]].vm),
    );
    let b_ll = nm.b_ll();
    let b_ll_lu = b_ll.clone().lu();
    let vcirc_l = if n == 0 {
        DVector::zeros(0)
    } else {
        b_ll_lu
            .solve(&(nm.b_lg() * &vg))
            .map(|x| -x)
            .ok_or_else(|| Error::Assumption("B_LL is singular".into()))?
    };
    if let Some(k) = vcirc_l.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Assumption(format!(
            "open-circuit voltage at bus {} is {:.6}, must be positive",
            net.bus_id(k),
            vcirc_l[k]
        )));
    }
    let vcirc = DVector::from_iterator(n_bus, vcirc_l.iter().chain(vg.iter()).copied());

    let endpoints = graph.endpoints();
    let weight = |f: &dyn Fn(usize, usize) -> f64, fwd: bool| {
        DVector::from_iterator(
            endpoints.len(),
            endpoints.iter().map(|&(i, j)| {
                let y = if fwd { f(i, j) } else { f(j, i) };
                vcirc[i] * vcirc[j] * y
            }),
        )
    };
    let dbp = weight(&|i, j| nm.b_at(i, j), true);
    let dbm = weight(&|i, j| nm.b_at(i, j), false);
    let dgp = weight(&|i, j| nm.g_at(i, j), true);
    let dgm = weight(&|i, j| nm.g_at(i, j), false);
    let gamma_b = aw_incidence(graph, dbp.clone(), dbm.clone())?;
    let gamma_g = aw_incidence(graph, dgp.clone(), dgm.clone())?;

    let s = DMatrix::from_fn(n, n, |i, j| 0.25 * vcirc_l[i] * b_ll[(i, j)] * vcirc_l[j]);
    let s_lu = s.clone().lu();
    if n > 0 && !s_lu.is_invertible() {
        return Err(Error::Assumption("nodal stiffness matrix S is singular".into()));
    }

    let alpha = DVector::from_vec(ord.to_internal(&net.case.participation()));
    let unit = alpha.iter().filter(|&&a| a != 0.0).count() == 1;
    let single_slack = if unit { Some(alpha.iamax()) } else { None };
    let r = match single_slack {
        Some(s) => DMatrix::identity(n_bus, n_bus).remove_column(s),
        None => householder_complement(&alpha),
    };
    let reference = single_slack.unwrap_or_else(|| alpha.imax());
    let reference_angle = net.case.buses[ord.internal_to_case[reference]].va;

    let m_b = r.transpose() * gamma_b.dense();
    let rows = n_bus - 1;
    let svd = m_b.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
    if rank < rows {
        let suspects = graph
            .edges
            .iter()
            .enumerate()
            .filter(|&(k, _)| !(dbp[k] > 1e-9 * dbp.amax()) || !(dbm[k] > 1e-9 * dbm.amax()))
            .map(|(_, e)| (net.bus_id(e.from), net.bus_id(e.to)))
            .collect();
        return Err(Error::RankDeficient {
            rank,
            expected: rows,
            suspects,
        });
    }
    let gram = &m_b * m_b.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("M_B M_Bᵀ is not positive definite".into()))?;
    let m_b_pinv = chol.solve(&m_b).transpose();

    let n_c = graph.n_cycles();
    let k = if n_c == 0 {
        DMatrix::zeros(endpoints.len(), 0)
    } else {
        let ne = endpoints.len();
        let proj = DMatrix::identity(ne, ne) - &m_b_pinv * &m_b;
        let proj = (&proj + proj.transpose()) * 0.5;
        let eig = proj.symmetric_eigen();
        let cols: Vec<usize> = (0..ne).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        if cols.len() != n_c {
            return Err(Error::Numerical(format!(
                "kernel of M_B has dimension {}, expected {n_c}",
                cols.len()
            )));
        }
        let mut k = eig.eigenvectors.select_columns(&cols);
        // fix each column's sign so the basis is reproducible
        for mut col in k.column_iter_mut() {
            let p = col.iamax();
            if col[p] < 0.0 {
                col.neg_mut();
            }
        }
        k
    };

    Ok(FppfConstants {
        n_load: n,
        n_bus,
        vcirc_l,
        vcirc,
        dbp,
        dbm,
        dgp,
        dgm,
        gamma_b,
        gamma_g,
        s,
        s_lu,
        alpha,
        single_slack,
        r,
        m_b,
        m_b_pinv,
        k,
        cycles: graph.cycles.clone(),
        endpoints,
        gdiag: nm.gdiag.clone(),
        bdiag: nm.bdiag.clone(),
        reference,
        reference_angle,
    })
}

impl FppfConstants {
    pub fn n_edges(&self) -> usize {
        self.endpoints.len()
    }

    pub fn n_cycles(&self) -> usize {
        self.k.ncols()
    }

    pub fn solve_s(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.s_lu.solve(rhs).expect("S checked invertible")
    }

    /// Rᵀx.
    pub fn r_t(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.single_slack {
            Some(s) => x.clone().remove_row(s),
            None => self.r.tr_mul(x),
        }
    }

    /// g(v) = [v; 1_m].
    pub fn g_of(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n_bus,
            v.iter().copied().chain(std::iter::repeat_n(1.0, self.n_bus - self.n_load)),
        )
    }

    /// h(v)_k = g_i g_j for edge k = (i, j).
    pub fn h_of(&self, v: &DVector<f64>) -> DVector<f64> {
        let g = self.g_of(v);
        DVector::from_iterator(self.n_edges(), self.endpoints.iter().map(|&(i, j)| g[i] * g[j]))
    }

    /// Cᵀx for an edge vector.
    pub fn c_t(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.cycles.len(),
            self.cycles
                .iter()
                .map(|col| col.iter().map(|&(k, s)| f64::from(s) * x[k]).sum()),
        )
    }
}

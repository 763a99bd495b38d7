use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use sprs::CsMat;

use super::case::{Branch, BusOrdering, CaseData};
use crate::error::{Error, Result};

/// Conductance and susceptance matrices (Y = G + jB) in load-first order.
///
/// `g` and `b` share one sparsity pattern: every structurally nonzero entry
/// of Y is stored in both, even when one part is exactly zero.
#[derive(Debug, Clone)]
pub struct NetworkMatrices {
    pub ordering: BusOrdering,
    pub g: CsMat<f64>,
    pub b: CsMat<f64>,
    pub gdiag: DVector<f64>,
    pub bdiag: DVector<f64>,
}

/// Branch stamp: (y_ff, y_ft, y_tf, y_tt).
pub(crate) fn branch_stamp(br: &Branch) -> (Complex64, Complex64, Complex64, Complex64) {
    let y_se = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
    let charging = Complex64::new(0.0, br.b_c / 2.0);
    let tau = Complex64::from_polar(br.tap, br.shift);
    let y_tt = y_se + charging;
    let y_ff = y_tt / (br.tap * br.tap);
    let y_ft = -y_se / tau.conj();
    let y_tf = -y_se / tau;
    (y_ff, y_ft, y_tf, y_tt)
}

/// Stamps branches (after `map`) and optionally bus shunts into a sparse
/// complex admittance, returned as its real and imaginary parts.
pub fn assemble(
    case: &CaseData,
    ordering: &BusOrdering,
    bus_shunts: bool,
    map: impl Fn(&Branch) -> Branch,
) -> Result<(CsMat<f64>, CsMat<f64>)> {
    let index = case.bus_index();
    let n = ordering.len();
    let mut entries: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    for i in 0..n {
        entries.insert((i, i), Complex64::new(0.0, 0.0));
    }
    for original in case.branches.iter().filter(|b| b.in_service) {
        if original.x == 0.0 && original.r == 0.0 {
            return Err(Error::Model(format!(
                "branch {}-{} has zero impedance",
                original.from, original.to
            )));
        }
        if original.x == 0.0 {
            return Err(Error::Model(format!(
                "branch {}-{} has zero reactance",
                original.from, original.to
            )));
        }
        let br = map(original);
        let f = ordering.case_to_internal[index[&br.from]];
        let t = ordering.case_to_internal[index[&br.to]];
        let (y_ff, y_ft, y_tf, y_tt) = branch_stamp(&br);
        *entries.entry((f, f)).or_default() += y_ff;
        *entries.entry((f, t)).or_default() += y_ft;
        *entries.entry((t, f)).or_default() += y_tf;
        *entries.entry((t, t)).or_default() += y_tt;
    }
    if bus_shunts {
        for (c, bus) in case.buses.iter().enumerate() {
            let k = ordering.case_to_internal[c];
            *entries.entry((k, k)).or_default() += Complex64::new(bus.gs, bus.bs);
        }
    }

    let mut indptr = vec![0usize; n + 1];
    let mut indices = Vec::with_capacity(entries.len());
    let mut gdata = Vec::with_capacity(entries.len());
    let mut bdata = Vec::with_capacity(entries.len());
    for (&(i, j), y) in &entries {
        indptr[i + 1] += 1;
        indices.push(j);
        gdata.push(y.re);
        bdata.push(y.im);
    }
    for i in 0..n {
        indptr[i + 1] += indptr[i];
    }
    let g = CsMat::new((n, n), indptr.clone(), indices.clone(), gdata);
    let b = CsMat::new((n, n), indptr, indices, bdata);
    Ok((g, b))
}

/// Builds Y = G + jB from the Π-line / phase-shifting-transformer model.
pub fn build_admittance(case: &CaseData) -> Result<NetworkMatrices> {
    let ordering = BusOrdering::new(case);
    let (g, b) = assemble(case, &ordering, true, Branch::clone)?;
    let n = ordering.len();
    let gdiag = DVector::from_iterator(n, (0..n).map(|i| *g.get(i, i).unwrap_or(&0.0)));
    let bdiag = DVector::from_iterator(n, (0..n).map(|i| *b.get(i, i).unwrap_or(&0.0)));
    Ok(NetworkMatrices {
        ordering,
        g,
        b,
        gdiag,
        bdiag,
    })
}

impl NetworkMatrices {
    pub fn n_load(&self) -> usize {
        self.ordering.n_load
    }

    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn g_at(&self, i: usize, j: usize) -> f64 {
        *self.g.get(i, j).unwrap_or(&0.0)
    }

    pub fn b_at(&self, i: usize, j: usize) -> f64 {
        *self.b.get(i, j).unwrap_or(&0.0)
    }

    pub fn y_at(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.g_at(i, j), self.b_at(i, j))
    }

    /// Nonzeros of row `i` of Y as `(column, Y_ij)`.
    pub fn y_row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.g.indptr().outer_inds_sz(i);
        let cols = &self.g.indices()[range.clone()];
        let gv = &self.g.data()[range.clone()];
        let bv = &self.b.data()[range];
        cols.iter()
            .zip(gv)
            .zip(bv)
            .map(|((&j, &g), &b)| (j, Complex64::new(g, b)))
    }

    fn dense_block(m: &CsMat<f64>, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for i in rows.clone() {
            if let Some(row) = m.outer_view(i) {
                for (j, &v) in row.iter() {
                    if cols.contains(&j) {
                        out[(i - rows.start, j - cols.start)] = v;
                    }
                }
            }
        }
        out
    }

    pub fn b_ll(&self) -> DMatrix<f64> {
        let n = self.n_load();
        Self::dense_block(&self.b, 0..n, 0..n)
    }

    pub fn b_lg(&self) -> DMatrix<f64> {
        let n = self.n_load();
        Self::dense_block(&self.b, 0..n, n..self.len())
    }

    pub fn b_gl(&self) -> DMatrix<f64> {
        let n = self.n_load();
        Self::dense_block(&self.b, n..self.len(), 0..n)
    }

    pub fn b_gg(&self) -> DMatrix<f64> {
        let n = self.n_load();
        Self::dense_block(&self.b, n..self.len(), n..self.len())
    }

    pub fn g_dense(&self) -> DMatrix<f64> {
        Self::dense_block(&self.g, 0..self.len(), 0..self.len())
    }

    pub fn b_dense(&self) -> DMatrix<f64> {
        Self::dense_block(&self.b, 0..self.len(), 0..self.len())
    }

    /// Complex bus injections S = V ∘ conj(Y V), V in internal order.
    pub fn injections(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.len())
            .map(|i| {
                let current: Complex64 = self.y_row(i).map(|(j, y)| y * v[j]).sum();
                v[i] * current.conj()
            })
            .collect()
    }
}

//! Bidirected graph of the network: incidence split A = A⁺ − A⁻, a
//! fundamental cycle matrix, and asymmetrically weighted (AW) incidence
//! matrices Γ = A⁺[w⁺] − A⁻[w⁻], |Γ| = A⁺[w⁺] + A⁻[w⁻].

use std::collections::{HashMap, VecDeque};

use nalgebra::DVector;
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::netmodel::{BusOrdering, CaseData};

/// A forward edge between internal node indices, with the case branches
/// merged into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub branches: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BidirGraph {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    /// Sparse columns of the cycle matrix C, entries ±1.
    pub cycles: Vec<Vec<(usize, i32)>>,
    /// Spanning-tree membership per edge.
    pub in_tree: Vec<bool>,
}

impl BidirGraph {
    /// Builds the graph of the in-service branches of `case`.
    ///
    /// Parallel branches collapse into one edge oriented like the first of
    /// them; a parallel group that contains a phase shifter is rejected.
    pub fn build(case: &CaseData, ordering: &BusOrdering) -> Result<Self> {
        let index = case.bus_index();
        let mut edges: Vec<Edge> = Vec::new();
        let mut by_pair: HashMap<(usize, usize), usize> = HashMap::new();
        for (bi, br) in case.branches.iter().enumerate().filter(|(_, b)| b.in_service) {
            let f = ordering.case_to_internal[index[&br.from]];
            let t = ordering.case_to_internal[index[&br.to]];
            if f == t {
                return Err(Error::Model(format!("branch {0}-{0} is a self loop", br.from)));
            }
            let key = (f.min(t), f.max(t));
            match by_pair.get(&key) {
                Some(&k) => edges[k].branches.push(bi),
                None => {
                    by_pair.insert(key, edges.len());
                    edges.push(Edge {
                        from: f,
                        to: t,
                        branches: vec![bi],
                    });
                }
            }
        }
        for e in &edges {
            if e.branches.len() > 1 && e.branches.iter().any(|&b| case.branches[b].is_pst()) {
                let br = &case.branches[e.branches[0]];
                return Err(Error::Model(format!(
                    "parallel branches {}-{} include a phase shifter and cannot be merged",
                    br.from, br.to
                )));
            }
        }
        Self::from_edges(ordering.len(), edges)
    }

    /// Builds from explicit edges; the spanning tree is breadth-first from
    /// node 0, scanning incident edges in edge order.
    pub fn from_edges(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); node_count];
        for (k, e) in edges.iter().enumerate() {
            if e.from >= node_count || e.to >= node_count {
                return Err(Error::Model(format!("edge {k} references a missing node")));
            }
            adj[e.from].push(k);
            adj[e.to].push(k);
        }
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; node_count];
        let mut depth = vec![usize::MAX; node_count];
        let mut in_tree = vec![false; edges.len()];
        if node_count > 0 {
            depth[0] = 0;
            let mut queue = VecDeque::from([0usize]);
            while let Some(u) = queue.pop_front() {
                for &k in &adj[u] {
                    let w = if edges[k].from == u { edges[k].to } else { edges[k].from };
                    if depth[w] == usize::MAX {
                        depth[w] = depth[u] + 1;
                        parent[w] = Some((u, k));
                        in_tree[k] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        if depth.contains(&usize::MAX) {
            return Err(Error::Model("network graph is not connected".into()));
        }

        let mut cycles = Vec::new();
        for (k, e) in edges.iter().enumerate() {
            if in_tree[k] {
                continue;
            }
            // traverse e from `from` to `to`, then return through the tree
            let mut col = vec![(k, 1)];
            let (mut a, mut b) = (e.to, e.from);
            let mut down = Vec::new();
            while a != b {
                if depth[a] >= depth[b] {
                    let (p, pk) = parent[a].expect("non-root has parent");
                    col.push((pk, if edges[pk].from == a { 1 } else { -1 }));
                    a = p;
                } else {
                    let (p, pk) = parent[b].expect("non-root has parent");
                    down.push((pk, if edges[pk].from == p { 1 } else { -1 }));
                    b = p;
                }
            }
            col.extend(down.into_iter().rev());
            col.sort_unstable_by_key(|&(i, _)| i);
            cycles.push(col);
        }

        Ok(BidirGraph {
            node_count,
            edges,
            cycles,
            in_tree,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn n_cycles(&self) -> usize {
        self.cycles.len()
    }

    fn incidence_with(&self, plus: i32, minus: i32) -> CsMat<i32> {
        let mut tri = TriMat::new((self.node_count, self.edges.len()));
        for (k, e) in self.edges.iter().enumerate() {
            if plus != 0 {
                tri.add_triplet(e.from, k, plus);
            }
            if minus != 0 {
                tri.add_triplet(e.to, k, minus);
            }
        }
        tri.to_csc()
    }

    /// Incidence matrix A, +1 at the tail and −1 at the head of each edge.
    pub fn incidence(&self) -> CsMat<i32> {
        self.incidence_with(1, -1)
    }

    pub fn a_plus(&self) -> CsMat<i32> {
        self.incidence_with(1, 0)
    }

    pub fn a_minus(&self) -> CsMat<i32> {
        self.incidence_with(0, 1)
    }

    pub fn abs_incidence(&self) -> CsMat<i32> {
        self.incidence_with(1, 1)
    }

    /// Cycle matrix C (|E| × n_c), column-compressed.
    pub fn cycle_matrix(&self) -> CsMat<i32> {
        let mut tri = TriMat::new((self.edges.len(), self.cycles.len()));
        for (c, col) in self.cycles.iter().enumerate() {
            for &(k, s) in col {
                tri.add_triplet(k, c, s);
            }
        }
        tri.to_csc()
    }

    /// Aᵀθ: per-edge difference θ_from − θ_to.
    pub fn edge_differences(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.edges.len(),
            self.edges.iter().map(|e| theta[e.from] - theta[e.to]),
        )
    }

    /// Cᵀx for an edge vector x.
    pub fn cycle_sums(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.cycles.len(),
            self.cycles
                .iter()
                .map(|col| col.iter().map(|&(k, s)| f64::from(s) * x[k]).sum()),
        )
    }

    /// Endpoints of each forward edge.
    pub fn endpoints(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.from, e.to)).collect()
    }

    /// Matrix-market dump of A and C for debugging.
    pub fn to_matrix_market(&self) -> (String, String) {
        fn dump(m: &CsMat<i32>) -> String {
            let mut s = String::from("%%MatrixMarket matrix coordinate integer general\n");
            s.push_str(&format!("{} {} {}\n", m.rows(), m.cols(), m.nnz()));
            for (v, (i, j)) in m.iter() {
                s.push_str(&format!("{} {} {}\n", i + 1, j + 1, v));
            }
            s
        }
        (dump(&self.incidence()), dump(&self.cycle_matrix()))
    }
}

/// Γ and |Γ| for one pair of forward/backward weight vectors.
#[derive(Debug, Clone)]
pub struct AwIncidence {
    pub node_count: usize,
    pub endpoints: Vec<(usize, usize)>,
    pub wplus: DVector<f64>,
    pub wminus: DVector<f64>,
    pub gamma: CsMat<f64>,
    pub gamma_abs: CsMat<f64>,
}

pub fn aw_incidence(graph: &BidirGraph, wplus: DVector<f64>, wminus: DVector<f64>) -> Result<AwIncidence> {
    AwIncidence::new(graph.node_count, graph.endpoints(), wplus, wminus)
}

impl AwIncidence {
    pub fn new(
        node_count: usize,
        endpoints: Vec<(usize, usize)>,
        wplus: DVector<f64>,
        wminus: DVector<f64>,
    ) -> Result<Self> {
        for (what, w) in [("w+", &wplus), ("w-", &wminus)] {
            if w.len() != endpoints.len() {
                return Err(Error::Dimension {
                    what,
                    expected: endpoints.len(),
                    got: w.len(),
                });
            }
        }
        let shape = (node_count, endpoints.len());
        let mut g = TriMat::new(shape);
        let mut ga = TriMat::new(shape);
        for (k, &(f, t)) in endpoints.iter().enumerate() {
            g.add_triplet(f, k, wplus[k]);
            g.add_triplet(t, k, -wminus[k]);
            ga.add_triplet(f, k, wplus[k]);
            ga.add_triplet(t, k, wminus[k]);
        }
        Ok(AwIncidence {
            node_count,
            endpoints,
            wplus,
            wminus,
            gamma: g.to_csc(),
            gamma_abs: ga.to_csc(),
        })
    }

    /// Γx for an edge vector x.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.node_count);
        for (k, &(f, t)) in self.endpoints.iter().enumerate() {
            out[f] += self.wplus[k] * x[k];
            out[t] -= self.wminus[k] * x[k];
        }
        out
    }

    /// |Γ|x for an edge vector x.
    pub fn apply_abs(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.node_count);
        for (k, &(f, t)) in self.endpoints.iter().enumerate() {
            out[f] += self.wplus[k] * x[k];
            out[t] += self.wminus[k] * x[k];
        }
        out
    }

    /// Γᵀy for a node vector y.
    pub fn apply_t(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.endpoints.len(),
            self.endpoints
                .iter()
                .enumerate()
                .map(|(k, &(f, t))| self.wplus[k] * y[f] - self.wminus[k] * y[t]),
        )
    }

    /// Γ as a dense matrix.
    pub fn dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.node_count, self.endpoints.len());
        for (k, &(f, t)) in self.endpoints.iter().enumerate() {
            m[(f, k)] += self.wplus[k];
            m[(t, k)] -= self.wminus[k];
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSign {
    NotInKernel,
    AllPositive,
    AllNegative,
    /// In the kernel but not single-signed; contradicts the sign property and
    /// only possible when its preconditions fail numerically.
    MixedSign,
}

/// Classifies a node vector against ker Γᵀ with tolerance
/// ‖Γᵀx‖∞ ≤ 1e−9·‖x‖∞.
pub fn kernel_sign_check(aw: &AwIncidence, x: &DVector<f64>) -> Result<KernelSign> {
    if x.len() != aw.node_count {
        return Err(Error::Dimension {
            what: "x",
            expected: aw.node_count,
            got: x.len(),
        });
    }
    let scale = x.amax();
    if scale == 0.0 {
        return Err(Error::Precondition("x must be nonzero".into()));
    }
    if aw.wplus.iter().chain(aw.wminus.iter()).any(|&w| !(w > 0.0)) {
        return Err(Error::Precondition("weights must be strictly positive".into()));
    }
    if aw.apply_t(x).amax() > 1e-9 * scale {
        return Ok(KernelSign::NotInKernel);
    }
    Ok(if x.iter().all(|&v| v > 0.0) {
        KernelSign::AllPositive
    } else if x.iter().all(|&v| v < 0.0) {
        KernelSign::AllNegative
    } else {
        KernelSign::MixedSign
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn edge(from: usize, to: usize) -> Edge {
        Edge { from, to, branches: vec![] }
    }

    fn dense(m: &CsMat<i32>) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(m.rows(), m.cols());
        for (v, (i, j)) in m.iter() {
            d[(i, j)] = f64::from(*v);
        }
        d
    }

    #[test]
    fn path_has_no_cycles() {
        let g = BidirGraph::from_edges(3, vec![edge(0, 1), edge(1, 2)]).unwrap();
        assert_eq!(g.n_cycles(), 0);
        assert_eq!(g.cycle_matrix().cols(), 0);
    }

    #[test]
    fn triangle_has_one_cycle() {
        let g = BidirGraph::from_edges(3, vec![edge(0, 1), edge(1, 2), edge(2, 0)]).unwrap();
        assert_eq!(g.n_cycles(), 1);
        let c = dense(&g.cycle_matrix());
        assert!(c.iter().all(|&v| v.abs() == 1.0));
        let ac = dense(&g.incidence()) * &c;
        assert_eq!(ac.amax(), 0.0);
    }

    #[test]
    fn orientation_mixed_cycle() {
        // edges point in inconsistent directions around the square
        let g = BidirGraph::from_edges(
            4,
            vec![edge(0, 1), edge(2, 1), edge(2, 3), edge(0, 3), edge(3, 1)],
        )
        .unwrap();
        assert_eq!(g.n_cycles(), 2);
        let ac = dense(&g.incidence()) * dense(&g.cycle_matrix());
        assert_eq!(ac.amax(), 0.0);
    }

    #[test]
    fn incidence_split() {
        let g = BidirGraph::from_edges(3, vec![edge(0, 1), edge(2, 1)]).unwrap();
        let a = dense(&g.incidence());
        let ap = dense(&g.a_plus());
        let am = dense(&g.a_minus());
        assert_eq!(&ap - &am, a);
        assert_eq!(ap + am, dense(&g.abs_incidence()));
        for k in 0..2 {
            let col = a.column(k);
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&v| v == -1.0).count(), 1);
        }
    }

    #[test]
    fn disconnected_graph_rejected() {
        assert!(BidirGraph::from_edges(3, vec![edge(0, 1)]).is_err());
    }

    #[test]
    fn unit_weights_collapse_to_incidence() {
        let g = BidirGraph::from_edges(3, vec![edge(0, 1), edge(1, 2), edge(2, 0)]).unwrap();
        let ones = DVector::from_element(3, 1.0);
        let aw = aw_incidence(&g, ones.clone(), ones).unwrap();
        assert_eq!(aw.dense(), dense(&g.incidence()));
        let mut abs = DMatrix::zeros(3, 3);
        for (v, (i, j)) in aw.gamma_abs.iter() {
            abs[(i, j)] = *v;
        }
        assert_eq!(abs, dense(&g.abs_incidence()));
    }

    #[test]
    fn single_edge_weights() {
        let g = BidirGraph::from_edges(2, vec![edge(0, 1)]).unwrap();
        let aw = aw_incidence(&g, DVector::from_element(1, 3.0), DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(aw.dense(), DMatrix::from_row_slice(2, 1, &[3.0, -2.0]));
    }

    #[test]
    fn weight_length_mismatch() {
        let g = BidirGraph::from_edges(2, vec![edge(0, 1)]).unwrap();
        let r = aw_incidence(&g, DVector::from_element(2, 1.0), DVector::from_element(1, 1.0));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn kernel_classes_on_triangle() {
        let g = BidirGraph::from_edges(3, vec![edge(0, 1), edge(1, 2), edge(2, 0)]).unwrap();
        let ones = DVector::from_element(3, 1.0);
        let aw = aw_incidence(&g, ones.clone(), ones).unwrap();
        assert_eq!(kernel_sign_check(&aw, &DVector::from_element(3, 1.0)).unwrap(), KernelSign::AllPositive);
        assert_eq!(kernel_sign_check(&aw, &DVector::from_element(3, -2.0)).unwrap(), KernelSign::AllNegative);
        assert_eq!(
            kernel_sign_check(&aw, &DVector::from_vec(vec![1.0, -1.0, 0.0])).unwrap(),
            KernelSign::NotInKernel
        );
        assert!(kernel_sign_check(&aw, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn apply_matches_dense() {
        let g = BidirGraph::from_edges(3, vec![edge(0, 1), edge(1, 2), edge(2, 0)]).unwrap();
        let aw = aw_incidence(
            &g,
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DVector::from_vec(vec![0.5, 4.0, 1.5]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let y = DVector::from_vec(vec![2.0, -1.0, 0.25]);
        let d = aw.dense();
        assert!((aw.apply(&x) - &d * &x).amax() < 1e-15);
        assert!((aw.apply_t(&y) - d.transpose() * &y).amax() < 1e-15);
        assert!((aw.apply_abs(&x) - d.abs() * &x).amax() < 1e-15);
    }
}

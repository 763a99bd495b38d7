#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use fppf::bigraph::{AwIncidence, BidirGraph, Edge};
use fppf::fppf::FppfConstants;
use fppf::netmodel::{load_case, CaseData, Network};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(format!("{name}.m"))
}

pub fn load(name: &str) -> CaseData {
    load_case(case_path(name)).unwrap()
}

pub fn capped(name: &str) -> CaseData {
    load(name).cap_rx_ratios(0.8).0
}

/// r = 0, b_c = 0, t = 1, θ_s = 0, no shunts.
pub fn lossless(case: &CaseData) -> CaseData {
    let mut out = case.clone();
    for b in &mut out.branches {
        b.r = 0.0;
        b.b_c = 0.0;
        b.tap = 1.0;
        b.shift = 0.0;
    }
    for b in &mut out.buses {
        b.gs = 0.0;
        b.bs = 0.0;
    }
    out
}

/// Random connected simple graph: a random spanning tree plus `extra`
/// distinct chords, with random orientations.
pub fn random_graph(rng: &mut impl Rng, n: usize, extra: usize) -> BidirGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pairs = Vec::new();
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        pairs.push((parent, order[k]));
    }
    let mut tries = 0;
    while pairs.len() < n - 1 + extra && tries < 1000 {
        tries += 1;
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a == b || pairs.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            continue;
        }
        pairs.push((a, b));
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let (from, to) = if rng.gen() { (a, b) } else { (b, a) };
            Edge {
                from,
                to,
                branches: vec![],
            }
        })
        .collect();
    BidirGraph::from_edges(n, edges).unwrap()
}

/// Random positive weights for which ker Γᵀ is nontrivial: arbitrary on a
/// tree, symmetric or x-balanced on a cyclic graph.
pub fn random_weights(rng: &mut impl Rng, g: &BidirGraph, mode: u8) -> (DVector<f64>, DVector<f64>) {
    let m = g.edge_count();
    let wp = DVector::from_fn(m, |_, _| rng.gen_range(0.1..10.0));
    let wm = match (g.n_cycles(), mode % 2) {
        (0, _) => DVector::from_fn(m, |_, _| rng.gen_range(0.1..10.0)),
        (_, 0) => wp.clone(),
        _ => {
            let x: Vec<f64> = (0..g.node_count).map(|_| rng.gen_range(0.5..2.0)).collect();
            DVector::from_fn(m, |k, _| {
                let e = &g.edges[k];
                wp[k] * x[e.from] / x[e.to]
            })
        }
    };
    (wp, wm)
}

/// A nonzero solution of Γᵀx = 0 with x₀ = 1, from a least-squares solve
/// on the remaining coordinates.
pub fn kernel_vector(aw: &AwIncidence) -> DVector<f64> {
    let gt = aw.dense().transpose();
    let n = gt.ncols();
    let rest = gt.columns(1, n - 1).into_owned();
    let rhs = -gt.column(0).into_owned();
    let y = rest.svd(true, true).solve(&rhs, 1e-14).unwrap();
    DVector::from_iterator(n, std::iter::once(1.0).chain(y.iter().copied()))
}

fn wrap(x: f64) -> f64 {
    x - 2.0 * PI * (x / (2.0 * PI)).round()
}

/// Lossless fixed-point maps evaluated in bus form from the branch data,
/// with only the edge indexing and cycle basis shared with the library.
pub struct LosslessOracle {
    n: usize,
    nb: usize,
    slack: usize,
    b: DMatrix<f64>,
    vcirc: DVector<f64>,
    s_inv: DMatrix<f64>,
    ends: Vec<(usize, usize)>,
    m_r: DMatrix<f64>,
    m_r_pinv: DMatrix<f64>,
    cycles: Vec<Vec<(usize, i32)>>,
    p_bar: DVector<f64>,
    q_l: DVector<f64>,
}

impl LosslessOracle {
    pub fn new(net: &Network) -> Self {
        let case = &net.case;
        let ord = net.ordering();
        let nb = ord.len();
        let n = ord.n_load;
        let idx = |id| ord.case_to_internal[case.position(id).unwrap()];
        let mut b = DMatrix::<f64>::zeros(nb, nb);
        for br in &case.branches {
            let (i, j) = (idx(br.from), idx(br.to));
            let y = 1.0 / br.x;
            b[(i, j)] += y;
            b[(j, i)] += y;
            b[(i, i)] -= y;
            b[(j, j)] -= y;
        }
        let vg: Vec<f64> = (n..nb).map(|k| case.buses[ord.internal_to_case[k]].vm).collect();
        let b_ll = b.view((0, 0), (n, n)).into_owned();
        let b_lg = b.view((0, n), (n, nb - n)).into_owned();
        let vl: DVector<f64> = -b_ll.clone().try_inverse().unwrap() * b_lg * DVector::from_vec(vg.clone());
        let vcirc = DVector::from_iterator(nb, vl.iter().chain(vg.iter()).copied());
        let s = DMatrix::from_fn(n, n, |i, j| 0.25 * vcirc[i] * b_ll[(i, j)] * vcirc[j]);
        let ends: Vec<(usize, usize)> = net.graph.edges.iter().map(|e| (e.from, e.to)).collect();
        let slack = net.slack_index();
        let mut m = DMatrix::zeros(nb, ends.len());
        for (k, &(i, j)) in ends.iter().enumerate() {
            let w = vcirc[i] * vcirc[j] * b[(i, j)];
            m[(i, k)] = w;
            m[(j, k)] = -w;
        }
        let m_r = m.remove_row(slack);
        let m_r_pinv = m_r.clone().pseudo_inverse(1e-12).unwrap();
        let p: Vec<f64> = ord.to_internal(&case.p_injection());
        let q: Vec<f64> = ord.to_internal(&case.q_demand_injection());
        LosslessOracle {
            n,
            nb,
            slack,
            s_inv: s.try_inverse().unwrap(),
            b,
            vcirc,
            ends,
            m_r,
            m_r_pinv,
            cycles: net.graph.cycles.clone(),
            p_bar: DVector::from_vec(p),
            q_l: DVector::from_vec(q[..n].to_vec()),
        }
    }

    fn mag(&self, v: &DVector<f64>, i: usize) -> f64 {
        if i < self.n {
            self.vcirc[i] * v[i]
        } else {
            self.vcirc[i]
        }
    }

    fn scale(&self, v: &DVector<f64>, i: usize) -> f64 {
        if i < self.n {
            v[i]
        } else {
            1.0
        }
    }

    /// Σ over neighbours of B_ij V_i V_j (1 − cos θ_ij), bus by bus.
    fn cos_deficit(&self, psi: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nb);
        for (k, &(i, j)) in self.ends.iter().enumerate() {
            let t = self.b[(i, j)] * self.mag(v, i) * self.mag(v, j) * (1.0 - (1.0 - psi[k] * psi[k]).sqrt());
            out[i] += t;
            out[j] += t;
        }
        out
    }

    pub fn f_q(&self, psi: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let def = self.cos_deficit(psi, v);
        let r = DVector::from_fn(self.n, |i, _| (self.q_l[i] - def[i]) / v[i]);
        DVector::from_element(self.n, 1.0) - &self.s_inv * r * 0.25
    }

    /// Lossless f_P does not depend on ψ. `kxc` is the kernel component Kx_c.
    pub fn f_p(&self, v: &DVector<f64>, kxc: &DVector<f64>) -> DVector<f64> {
        let rhs = self.p_bar.clone().remove_row(self.slack);
        let proj = DMatrix::identity(self.ends.len(), self.ends.len()) - &self.m_r_pinv * &self.m_r;
        let y = &self.m_r_pinv * rhs + proj * kxc;
        DVector::from_fn(self.ends.len(), |k, _| {
            let (i, j) = self.ends[k];
            y[k] / (self.scale(v, i) * self.scale(v, j))
        })
    }

    pub fn mismatch(&self, psi: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let mut p = DVector::<f64>::zeros(self.nb);
        let mut q = DVector::<f64>::zeros(self.nb);
        for i in 0..self.nb {
            q[i] = -self.b[(i, i)] * self.mag(v, i).powi(2);
        }
        for (k, &(i, j)) in self.ends.iter().enumerate() {
            let vv = self.b[(i, j)] * self.mag(v, i) * self.mag(v, j);
            let c = (1.0 - psi[k] * psi[k]).sqrt();
            p[i] += vv * psi[k];
            p[j] -= vv * psi[k];
            q[i] -= vv * c;
            q[j] -= vv * c;
        }
        let mut worst = 0.0f64;
        for i in (0..self.nb).filter(|&i| i != self.slack) {
            worst = worst.max((self.p_bar[i] - p[i]).abs());
        }
        for i in 0..self.n {
            worst = worst.max((self.q_l[i] - q[i]).abs());
        }
        for cyc in &self.cycles {
            let s: f64 = cyc.iter().map(|&(k, sg)| f64::from(sg) * psi[k].asin()).sum();
            worst = worst.max(wrap(s).abs());
        }
        worst
    }
}

/// Largest |a − b|.
pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Random state in a neighbourhood of flat start, for map comparisons.
pub fn random_state(rng: &mut impl Rng, c: &FppfConstants) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let psi = DVector::from_fn(c.n_edges(), |_, _| rng.gen_range(-0.3..0.3));
    let v = DVector::from_fn(c.n_load, |_, _| rng.gen_range(0.9..1.1));
    let xc = DVector::from_fn(c.n_cycles(), |_, _| rng.gen_range(-0.2..0.2));
    (psi, v, xc)
}

/// Coefficient of determination of the least-squares line through (x, y).
pub fn r_squared(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    (1.0 - ss_res / syy, slope)
}

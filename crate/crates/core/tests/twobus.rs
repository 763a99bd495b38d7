use fppf::fppf::{build_constants, iterate, FppfOptions, FppfState, Injections, UpdateOrder};
use fppf::netmodel::Network;
use fppf::twobus::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case(mu: Perturbation) -> TwoBusCase {
    TwoBusCase {
        b: 5.0,
        mu,
        v2: 1.0,
        p1: -1.5,
        q1: -0.25,
    }
}

fn small_mu() -> Perturbation {
    Perturbation {
        g: 0.05,
        b_c: 0.04,
        t_bar: 0.0,
        theta_s: 0.0,
    }
}

// high-voltage root of u = γ_Q/u + √(1 − γ_P²/u²) by scanning down from u = 2
fn brute_force_fixed_point(gp: f64, gq: f64) -> (f64, f64) {
    let f = |u: f64| gq / u + (1.0 - gp * gp / (u * u)).max(0.0).sqrt() - u;
    let n = 200_000;
    let mut hi = 2.0;
    let mut lo = hi;
    for k in 1..n {
        let u = 2.0 - 1.9 * k as f64 / n as f64;
        if f(u) > 0.0 {
            lo = u;
            break;
        }
        hi = u;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    (-gp / u, u - 1.0)
}

#[test]
fn nominal_limit_matches_brute_force() {
    let c = case(Perturbation::default());
    let p = derive_params(&c).unwrap();
    let nb = nominal_box(p.gamma_p, p.gamma_q).unwrap();
    let (psi_o, x_o) = brute_force_fixed_point(p.gamma_p, p.gamma_q);
    let (psi_f, x_f) = nb.fixed_point();
    assert!((psi_o - psi_f).abs() < 1e-10 && (x_o - x_f).abs() < 1e-10);
    let t = simulate_fmu(&c, (0.0, 0.0), 400).unwrap();
    let (psi, x) = t.last();
    assert!((psi - psi_o).abs() < 1e-10 && (x - x_o).abs() < 1e-10);
}

#[test]
fn fixed_point_is_stationary() {
    let c = case(Perturbation::default());
    let p = derive_params(&c).unwrap();
    let xi = nominal_box(p.gamma_p, p.gamma_q).unwrap().fixed_point();
    let t = simulate_fmu(&c, xi, 20).unwrap();
    for &(psi, x) in &t.points {
        assert!((psi - xi.0).abs() < 1e-12 && (x - xi.1).abs() < 1e-12);
    }
}

#[test]
fn converged_point_satisfies_both_rows() {
    let c = case(small_mu());
    let p = derive_params(&c).unwrap();
    let (psi, x) = simulate_fmu(&c, (0.1, -0.02), 500).unwrap().last();
    let u = x + 1.0;
    let r1 = psi - (-p.gamma_p_t / u + p.rho * u - p.rho_t * (1.0 - psi * psi).sqrt());
    let r2 = x - (p.gamma_q_t / u - p.rho_t * psi + (1.0 - psi * psi).sqrt() - 1.0);
    assert!(r1.abs() < 1e-10 && r2.abs() < 1e-10);
}

#[test]
fn certified_box_is_invariant_by_sampling() {
    let c = case(small_mu());
    let p = derive_params(&c).unwrap();
    let bx = *solve_eps(&p).unwrap().certified().expect("small mu certifies");
    assert!(check_eps_invariance(&p, &bx).unwrap());
    let (a, b) = (bx.psi_max(), bx.x_max());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..10_000 {
        let (psi, x) = match k % 4 {
            0 => (if rng.gen() { a } else { -a }, rng.gen_range(-b..=b)),
            1 => (rng.gen_range(-a..=a), if rng.gen() { b } else { -b }),
            _ => (rng.gen_range(-a..=a), rng.gen_range(-b..=b)),
        };
        let (pn, xn) = f_mu(&p, psi, x).expect("map defined on the box");
        assert!(bx.contains(pn, xn, 1e-12), "({psi}, {x}) -> ({pn}, {xn}) leaves {bx:?}");
    }
}

#[test]
fn contraction_jacobian_vs_finite_differences_at_random_points() {
    let c = case(small_mu());
    let p = derive_params(&c).unwrap();
    let bx = *solve_eps(&p).unwrap().certified().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..20 {
        let psi = rng.gen_range(-bx.psi_max()..bx.psi_max());
        let x = rng.gen_range(-bx.x_max()..bx.x_max());
        let j = f_mu_jacobian(&p, psi, x).unwrap();
        let a = f_mu(&p, psi + h, x).unwrap();
        let b = f_mu(&p, psi - h, x).unwrap();
        let cc = f_mu(&p, psi, x + h).unwrap();
        let d = f_mu(&p, psi, x - h).unwrap();
        let fd = [
            (a.0 - b.0) / (2.0 * h),
            (cc.0 - d.0) / (2.0 * h),
            (a.1 - b.1) / (2.0 * h),
            (cc.1 - d.1) / (2.0 * h),
        ];
        let an = [j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]];
        for (u, v) in fd.iter().zip(an) {
            assert!((u - v).abs() < 1e-6);
        }
    }
}

#[test]
fn nominal_certificate_passes() {
    let cert = certify(&case(Perturbation::default()), 101, 200).unwrap();
    assert!(cert.passed());
    let bx = cert.outcome.certified().unwrap();
    assert_eq!((bx.eps1, bx.eps2), (0.0, 0.0));
    let c = cert.contraction.unwrap();
    assert!(c.factor < 1.0 && c.excluded == 0);
}

#[test]
fn large_rho_tilde_not_certified() {
    // g̃/b̃ = 1 through a large phase shift
    let mu = Perturbation {
        g: 0.0,
        b_c: 0.0,
        t_bar: 0.0,
        theta_s: -std::f64::consts::FRAC_PI_4,
    };
    let p = derive_params(&case(mu)).unwrap();
    assert!((p.rho_t - 1.0).abs() < 1e-12);
    match solve_eps(&p).unwrap() {
        EpsOutcome::Infeasible { reason } => assert!(!reason.is_empty()),
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn scan_reports_both_outcomes() {
    let mus = [
        Perturbation::default(),
        small_mu(),
        Perturbation {
            theta_s: -std::f64::consts::FRAC_PI_4,
            ..Default::default()
        },
    ];
    let rows = scan(&case(Perturbation::default()), &mus, 21);
    assert_eq!(rows.iter().map(|r| r.feasible).collect::<Vec<_>>(), [true, true, false]);
    let mut buf = Vec::new();
    write_scan_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("g,b_c,t_bar,theta_s,feasible,eps1,eps2,contraction_factor\n"));
    assert_eq!(text.lines().count(), 4);
}

fn general_solver(c: &TwoBusCase) -> (Network, fppf::fppf::FppfConstants, Injections) {
    let net = Network::new(to_case_data(c).unwrap()).unwrap();
    let k = build_constants(&net, false).unwrap();
    let inj = Injections::from_network(&net);
    (net, k, inj)
}

#[test]
fn general_solver_reproduces_each_step() {
    let c = case(Perturbation {
        g: 0.05,
        b_c: 0.04,
        t_bar: 0.02,
        theta_s: 0.01,
    });
    let (net, k, inj) = general_solver(&c);
    assert!((k.vcirc_l[0] - derive_params(&c).unwrap().v1_circ).abs() < 1e-14);
    let init = (0.2, -0.05);
    let traj = simulate_fmu(&c, init, 30).unwrap();
    let state = FppfState {
        psi: DVector::from_element(1, init.0),
        v: DVector::from_element(1, init.1 + 1.0),
        xc: DVector::zeros(0),
    };
    let opts = FppfOptions {
        tol: 0.0,
        max_iter: 30,
        order: UpdateOrder::PsiXcV,
    };
    let run = iterate(&net, &k, &inj, state, &opts, true);
    assert_eq!(run.history.len(), traj.points.len());
    for (s, &(psi, x)) in run.history.iter().zip(&traj.points) {
        assert!((s.psi[0] - psi).abs() < 1e-13, "{} vs {psi}", s.psi[0]);
        assert!((s.v[0] - 1.0 - x).abs() < 1e-13);
    }
}

#[test]
fn random_interior_starts_reach_general_solution() {
    let c = case(small_mu());
    let p = derive_params(&c).unwrap();
    let bx = *solve_eps(&p).unwrap().certified().unwrap();
    let (net, k, inj) = general_solver(&c);
    let run = iterate(&net, &k, &inj, FppfState::flat(&k), &FppfOptions::default(), false);
    assert!(run.termination.converged());
    let (psi_g, x_g) = (run.state.psi[0], run.state.v[0] - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let init = (
            rng.gen_range(-bx.psi_max()..bx.psi_max()),
            rng.gen_range(-bx.x_max()..bx.x_max()),
        );
        let t = simulate_fmu(&c, init, 300).unwrap();
        assert!(!t.exited);
        assert!(t.points.iter().all(|&(a, b)| bx.contains(a, b, 1e-12)));
        let (psi, x) = t.last();
        assert!((psi - psi_g).abs() < 1e-8 && (x - x_g).abs() < 1e-8);
    }
}

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fppf::experiments::{self, ExperimentConfig, SweepConfig};
use fppf::netmodel::{load_case, CaseData, Network};
use fppf::solution::SolutionJson;
use fppf::twobus::{self, Perturbation, TwoBusCase};
use fppf::{AlgorithmRegistry, Error, PolarInit, Solution, SolverOptions};

use crate::{BenchArgs, CheckArgs, SolveArgs, SolverFlags, SweepArgs, TwoBusArgs};

pub enum Status {
    Success,
    NotConverged,
}

/// 1 for numerical failures, 2 for bad input or model errors.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Numerical(_)) => 1,
        _ => 2,
    }
}

fn config(flags: &SolverFlags) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig {
        algorithms: flags.algo.clone(),
        solver: SolverOptions {
            tol: flags.tol,
            max_iter: flags.max_iter,
            order: flags.update_order.parse()?,
            allow_assumption_violations: flags.allow_assumption_violations,
        },
        rx_cap: flags.rx_cap,
        load_scale: flags.load_scale,
        sweep: SweepConfig::default(),
    };
    cfg.validate()?;
    let registry = AlgorithmRegistry::default();
    for a in &cfg.algorithms {
        registry.get(a)?;
    }
    Ok(cfg)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "case".into(), |s| s.to_string_lossy().into_owned())
}

fn read_case(path: &Path) -> Result<CaseData> {
    load_case(path).with_context(|| format!("reading {}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Initial voltages from a solution JSON, matched by bus id.
fn read_init(path: &Path, net: &Network) -> Result<PolarInit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let sol: SolutionJson = serde_json::from_str(&text).map_err(Error::from)?;
    let by_id: HashMap<_, _> = sol.buses.iter().map(|b| (b.id, (b.vm, b.va_deg.to_radians()))).collect();
    let mut vm = Vec::new();
    let mut va = Vec::new();
    for bus in &net.case.buses {
        let &(m, a) = by_id
            .get(&bus.id)
            .ok_or_else(|| Error::Model(format!("initial point has no entry for bus {}", bus.id)))?;
        vm.push(m);
        va.push(a);
    }
    let ord = net.ordering();
    Ok(PolarInit {
        vm: ord.to_internal(&vm),
        va: ord.to_internal(&va),
    })
}

pub fn solve(args: &SolveArgs) -> Result<Status> {
    let cfg = config(&args.solver)?;
    let case = read_case(&args.case)?;
    let net = Network::new(cfg.apply(&case))?;
    let init = match &args.init {
        Some(p) => read_init(p, &net)?,
        None => PolarInit::flat(&net),
    };
    let registry = AlgorithmRegistry::default();
    let label = stem(&args.case);
    let out = &args.solver.out_dir;
    let mut solutions: Vec<Solution> = Vec::new();
    for algo in &cfg.algorithms {
        let sol = registry.get(algo)?.prepare(&net, &cfg.solver)?.solve(&net, &init)?;
        sol.write_json(net.case.base_mva, create(out, &format!("{label}_{algo}.json"))?)?;
        sol.write_trace_csv(create(out, &format!("{label}_{algo}_trace.csv"))?)?;
        println!(
            "{algo}: {} ({} completed iterations, mismatch {:.3e}, {:.1} ms)",
            sol.report.termination,
            sol.report.iterations,
            sol.report.final_mismatch(),
            sol.report.wall_time_s * 1e3
        );
        solutions.push(sol);
    }
    let slack = net.case.position(net.case.slack).expect("validated case");
    let converged: Vec<&Solution> = solutions.iter().filter(|s| s.converged()).collect();
    if let Some((first, rest)) = converged.split_first() {
        for s in rest {
            let (dv, da) = first.max_difference(s, slack);
            println!(
                "{} vs {}: max |dV| {dv:.2e} p.u., max |dθ| {da:.2e} rad",
                first.report.algorithm, s.report.algorithm
            );
        }
    }
    println!("reports written to {}", out.display());
    Ok(if converged.len() == solutions.len() {
        Status::Success
    } else {
        Status::NotConverged
    })
}

pub fn bench(args: &BenchArgs) -> Result<Status> {
    let cfg = config(&args.solver)?;
    let cases = args
        .case
        .iter()
        .map(|p| Ok((stem(p), read_case(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let registry = AlgorithmRegistry::default();
    let rows = experiments::bench(&registry, &cases, &cfg)?;
    let out = &args.solver.out_dir;
    experiments::write_bench_csv(&rows, create(out, "bench.csv")?)?;
    experiments::write_bench_csv(&rows, io::stdout().lock())?;

    if let Some(top) = args.max_scale {
        let mut w = csv::Writer::from_writer(create(out, "max_scale.csv")?);
        w.write_record(["case", "algorithm", "converged_scale", "failed_scale", "failure"])?;
        for (label, case) in &cases {
            for algo in &cfg.algorithms {
                let rec = match experiments::max_convergent_scale(&registry, algo, case, &cfg, (1.0, top), 0.01) {
                    Ok(s) => [
                        format!("{:.4}", s.converged_scale),
                        s.failed_scale.map_or_else(String::new, |f| format!("{f:.4}")),
                        s.failure.unwrap_or_default(),
                    ],
                    Err(e) => [String::new(), String::new(), e.to_string()],
                };
                println!("{label} {algo}: largest convergent scale {} ({})", rec[0], rec[2]);
                w.write_record([label.as_str(), algo.as_str(), &rec[0], &rec[1], &rec[2]])?;
            }
        }
        w.flush()?;
    }
    Ok(Status::Success)
}

pub fn sweep_init(args: &SweepArgs) -> Result<Status> {
    let mut cfg = config(&args.solver)?;
    cfg.sweep = SweepConfig {
        deltas: args.delta.clone(),
        samples: args.samples,
        seed: args.seed,
        threads: args.threads,
    };
    let case = read_case(&args.case)?;
    let res = experiments::sweep_init(&AlgorithmRegistry::default(), &case, &cfg)?;
    let out = &args.solver.out_dir;
    experiments::write_sweep_csv(&res.summary, create(out, "sweep.csv")?)?;
    experiments::write_samples_csv(&res.samples, create(out, "sweep_samples.csv")?)?;
    experiments::write_sweep_csv(&res.summary, io::stdout().lock())?;
    Ok(Status::Success)
}

fn scan_grid(args: &TwoBusArgs) -> Vec<Perturbation> {
    let base = Perturbation {
        g: args.g,
        b_c: args.b_c,
        t_bar: args.t_bar,
        theta_s: args.theta_s,
    };
    let gs = if args.scan_g.is_empty() { vec![args.g] } else { args.scan_g.clone() };
    let ts = if args.scan_theta_s.is_empty() {
        vec![args.theta_s]
    } else {
        args.scan_theta_s.clone()
    };
    gs.iter()
        .flat_map(|&g| ts.iter().map(move |&theta_s| Perturbation { g, theta_s, ..base }))
        .collect()
}

pub fn twobus_cert(args: &TwoBusArgs) -> Result<Status> {
    let case = TwoBusCase {
        b: args.b,
        mu: Perturbation {
            g: args.g,
            b_c: args.b_c,
            t_bar: args.t_bar,
            theta_s: args.theta_s,
        },
        v2: args.v2,
        p1: args.p1,
        q1: args.q1,
    };
    let cert = twobus::certify(&case, args.grid_n, args.iters)?;
    let p = &cert.params;
    let nb = &cert.nominal;
    println!(
        "gamma_P = {:.6}, gamma_Q = {:.6}, rho = {:.6}, rho~ = {:.6}, k_mu = {:.6}",
        p.gamma_p, p.gamma_q, p.rho, p.rho_t, p.k_mu
    );
    println!("nominal box: k1- = {:.6}, k2- = {:.6}, k2+ = {:.6}", nb.k1m, nb.k2m, nb.k2p);
    match (&cert.outcome, &cert.contraction) {
        (twobus::EpsOutcome::Certified(bx), Some(c)) => {
            println!("eps = ({:.6e}, {:.6e}), |psi| <= {:.6}, |x| <= {:.6}", bx.eps1, bx.eps2, bx.psi_max(), bx.x_max());
            println!(
                "sampled contraction factor {:.6} on a {}x{} grid ({} points excluded)",
                c.factor, args.grid_n, args.grid_n, c.excluded
            );
        }
        (twobus::EpsOutcome::Infeasible { reason }, _) => println!("not certified: {reason}"),
        _ => {}
    }
    if let Some(t) = &cert.trajectory {
        let (psi, x) = t.last();
        println!("trajectory from (0, 0): psi = {psi:.10}, x = {x:.10} after {} steps", t.points.len() - 1);
        t.write_csv(create(&args.out_dir, "twobus_trajectory.csv")?)?;
    }
    println!("certificate: {}", if cert.passed() { "PASS" } else { "FAIL" });
    serde_json::to_writer_pretty(create(&args.out_dir, "twobus_certificate.json")?, &cert)?;
    let rows = twobus::scan(&case, &scan_grid(args), args.grid_n);
    twobus::write_scan_csv(&rows, create(&args.out_dir, "twobus_scan.csv")?)?;
    Ok(Status::Success)
}

pub fn check(args: &CheckArgs) -> Result<Status> {
    let mut case = read_case(&args.case)?;
    if let Some(cap) = args.rx_cap {
        let (capped, n) = case.cap_rx_ratios(cap);
        println!("R/X capped at {cap} on {n} branches");
        case = capped;
    }
    let net = Network::new(case)?;
    let report = net.check_assumptions();
    println!(
        "buses {} (load {}, generator {}), edges {}, independent cycles {}",
        net.n_bus(),
        net.n_load(),
        net.n_bus() - net.n_load(),
        net.graph.edge_count(),
        net.graph.n_cycles()
    );
    println!(
        "strict diagonal dominance of B_LL: {} (worst margin {:.6})",
        report.strictly_dominant, report.worst_dominance_margin
    );
    println!("-B_LL nonsingular M-matrix: {}", report.nonsingular_m_matrix);
    if let Some(v) = report.min_open_circuit_voltage {
        println!("minimum open-circuit load voltage: {v:.6}");
    }
    println!(
        "positive mutual susceptances: {} of {} edges",
        report.branches.iter().filter(|b| b.positive).count(),
        report.branches.len()
    );
    println!(
        "phase shifters within limits: {} of {}",
        report.pst.iter().filter(|p| p.ok).count(),
        report.pst.len()
    );
    for f in report.failures() {
        println!("  {f}");
    }
    if let Some(dir) = &args.out_dir {
        let name: PathBuf = format!("{}_assumptions.json", stem(&args.case)).into();
        serde_json::to_writer_pretty(create(dir, &name.to_string_lossy())?, &report)?;
    }
    if report.solver_gate_ok() {
        println!("fixed-point solver can start");
        Ok(Status::Success)
    } else {
        Err(Error::Assumption(report.failures().join("; ")).into())
    }
}

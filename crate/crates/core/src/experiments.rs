//! Batch experiments: iteration-count benchmarks, randomized-initialization
//! sweeps and the largest convergent uniform load scale.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{solve_nr, NrOptions, PolarInit};
use crate::error::{Error, Result};
use crate::netmodel::{CaseData, Network};
use crate::registry::{AlgorithmRegistry, PreparedSolver, SolverOptions};
use crate::solution::Solution;

/// A sample succeeds when its solution is within this distance of the
/// reference, in p.u. for magnitudes and radians for angles.
pub const MATCH_TOL: f64 = 1e-5;

/// Tolerance for the flat-start NR reference solution.
pub const REFERENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            deltas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            samples: 200,
            seed: 1,
            threads: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithms: Vec<String>,
    pub solver: SolverOptions,
    pub rx_cap: Option<f64>,
    pub load_scale: f64,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithms: vec!["nr".into(), "fdlf".into(), "fppf".into()],
            solver: SolverOptions::default(),
            rx_cap: None,
            load_scale: 1.0,
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Precondition("no algorithms selected".into()));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::Precondition("tol must be positive and max_iter at least 1".into()));
        }
        if let Some(cap) = self.rx_cap {
            if !(cap > 0.0) {
                return Err(Error::Precondition(format!("rx cap must be positive, got {cap}")));
            }
        }
        if !(self.load_scale >= 1.0) || !self.load_scale.is_finite() {
            return Err(Error::Precondition(format!("load scale must be >= 1, got {}", self.load_scale)));
        }
        if let Some(&d) = self.sweep.deltas.iter().find(|&&d| !(0.0..1.0).contains(&d)) {
            return Err(Error::Precondition(format!("delta must lie in [0, 1), got {d}")));
        }
        if self.sweep.samples == 0 {
            return Err(Error::Precondition("samples must be at least 1".into()));
        }
        if self.sweep.threads == Some(0) {
            return Err(Error::Precondition("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Caps R/X first, then scales the loading.
    pub fn apply(&self, case: &CaseData) -> CaseData {
        let capped = match self.rx_cap {
            Some(cap) => case.cap_rx_ratios(cap).0,
            None => case.clone(),
        };
        if self.load_scale == 1.0 {
            capped
        } else {
            capped.scale_loading(self.load_scale)
        }
    }
}

/// Solves from flat start with a registry algorithm.
pub fn solve_flat(registry: &AlgorithmRegistry, name: &str, net: &Network, opts: &SolverOptions) -> Result<Solution> {
    registry.get(name)?.prepare(net, opts)?.solve(net, &PolarInit::flat(net))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub case: String,
    pub algorithm: String,
    /// `None` when the run failed.
    pub iterations: Option<usize>,
    pub status: String,
}

/// Iteration counts for every case × algorithm. Setup errors and
/// non-convergence become FAIL cells.
pub fn bench(registry: &AlgorithmRegistry, cases: &[(String, CaseData)], cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (label, case) in cases {
        let net = Network::new(cfg.apply(case));
        for algo in &cfg.algorithms {
            let outcome = net
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|net| solve_flat(registry, algo, net, &cfg.solver).map_err(|e| e.to_string()));
            let (iterations, status) = match outcome {
                Ok(sol) if sol.converged() => (Some(sol.report.iterations), "converged".to_string()),
                Ok(sol) => (None, sol.report.termination.to_string()),
                Err(e) => (None, e),
            };
            log::info!("{label} {algo}: {status}");
            rows.push(BenchRow {
                case: label.clone(),
                algorithm: algo.clone(),
                iterations,
                status,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["case", "algorithm", "iterations", "status"])?;
    for r in rows {
        let it = r.iterations.map_or_else(|| "FAIL".to_string(), |k| k.to_string());
        out.write_record([r.case.as_str(), r.algorithm.as_str(), it.as_str(), r.status.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

/// Uniform base draws for one sample, one per load bus. Depends only on
/// (seed, sample).
pub fn sample_uniforms(seed: u64, sample: usize, n_load: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    (0..n_load).map(|_| rng.gen::<f64>()).collect()
}

/// V_L = 1 + δ(2u − 1), uniform on [1 − δ, 1 + δ).
pub fn sample_load_voltages(seed: u64, sample: usize, n_load: usize, delta: f64) -> Vec<f64> {
    sample_uniforms(seed, sample, n_load)
        .into_iter()
        .map(|u| 1.0 + delta * (2.0 * u - 1.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub delta: f64,
    pub sample: usize,
    pub algorithm: String,
    pub converged: bool,
    pub iterations: usize,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub algorithm: String,
    pub successes: usize,
    pub samples: usize,
    pub success_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub summary: Vec<SweepRow>,
    /// Ordered by δ, then sample, then algorithm.
    pub samples: Vec<SampleOutcome>,
}

impl SweepResult {
    pub fn success_pct(&self, delta: f64, algorithm: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.delta == delta && r.algorithm == algorithm)
            .map(|r| r.success_pct)
    }
}

fn run_sample(
    net: &Network,
    solvers: &[(String, Box<dyn PreparedSolver>)],
    reference: &Solution,
    delta: f64,
    sample: usize,
    seed: u64,
) -> Vec<SampleOutcome> {
    let vm_l = sample_load_voltages(seed, sample, net.n_load(), delta);
    let init = PolarInit::with_load_magnitudes(net, &vm_l);
    let slack = net.case.position(net.case.slack).expect("validated case");
    solvers
        .iter()
        .map(|(name, solver)| {
            let (converged, iterations, matched) = match solver.solve(net, &init) {
                Ok(sol) => {
                    let (dv, da) = sol.max_difference(reference, slack);
                    let ok = sol.converged();
                    (ok, sol.report.iterations, ok && dv <= MATCH_TOL && da <= MATCH_TOL)
                }
                Err(e) => {
                    log::warn!("{name} sample {sample}: {e}");
                    (false, 0, false)
                }
            };
            SampleOutcome {
                delta,
                sample,
                algorithm: name.clone(),
                converged,
                iterations,
                matched,
            }
        })
        .collect()
}

/// Randomized-initialization sweep on one case. Every algorithm sees the
/// same initial voltages for a given (δ, sample); angles start at zero.
pub fn sweep_init(registry: &AlgorithmRegistry, case: &CaseData, cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let net = Network::new(cfg.apply(case))?;
    let reference = solve_nr(
        &net,
        &PolarInit::flat(&net),
        &NrOptions {
            tol: REFERENCE_TOL,
            max_iter: cfg.solver.max_iter.max(50),
        },
    )?;
    if !reference.converged() {
        return Err(Error::Numerical(format!(
            "flat-start NR reference did not converge: {}",
            reference.report.termination
        )));
    }
    let solvers = cfg
        .algorithms
        .iter()
        .map(|name| Ok((name.clone(), registry.get(name)?.prepare(&net, &cfg.solver)?)))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(f64, usize)> = cfg
        .sweep
        .deltas
        .iter()
        .flat_map(|&d| (0..cfg.sweep.samples).map(move |k| (d, k)))
        .collect();
    let seed = cfg.sweep.seed;
    let work = || -> Vec<SampleOutcome> {
        jobs.par_iter()
            .flat_map_iter(|&(d, k)| run_sample(&net, &solvers, &reference, d, k, seed))
            .collect()
    };
    let samples = match cfg.sweep.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Precondition(e.to_string()))?
            .install(work),
        None => work(),
    };

    let mut summary = Vec::new();
    for &delta in &cfg.sweep.deltas {
        for name in &cfg.algorithms {
            let successes = samples
                .iter()
                .filter(|s| s.delta == delta && &s.algorithm == name && s.matched)
                .count();
            summary.push(SweepRow {
                delta,
                algorithm: name.clone(),
                successes,
                samples: cfg.sweep.samples,
                success_pct: 100.0 * successes as f64 / cfg.sweep.samples as f64,
            });
        }
    }
    Ok(SweepResult { summary, samples })
}

pub fn write_sweep_csv(rows: &[SweepRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_samples_csv(rows: &[SampleOutcome], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleSearch {
    /// Largest scale found to converge.
    pub converged_scale: f64,
    /// Smallest scale found to fail, if any within the bracket.
    pub failed_scale: Option<f64>,
    /// How the run at `failed_scale` ended.
    pub failure: Option<String>,
}

/// Bisects on the uniform load scale for the largest value at which
/// `algorithm` still converges from flat start. The R/X cap of `cfg` is
/// applied; its load scale is ignored.
pub fn max_convergent_scale(
    registry: &AlgorithmRegistry,
    algorithm: &str,
    case: &CaseData,
    cfg: &ExperimentConfig,
    bracket: (f64, f64),
    resolution: f64,
) -> Result<ScaleSearch> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && resolution > 0.0) {
        return Err(Error::Precondition(format!("invalid bracket ({lo}, {hi})")));
    }
    let base = ExperimentConfig {
        load_scale: 1.0,
        ..cfg.clone()
    }
    .apply(case);
    let run = |s: f64| -> Result<Solution> {
        let net = Network::new(base.scale_loading(s))?;
        solve_flat(registry, algorithm, &net, &cfg.solver)
    };
    let first = run(lo)?;
    if !first.converged() {
        return Err(Error::Precondition(format!(
            "{algorithm} does not converge at the lower scale {lo}: {}",
            first.report.termination
        )));
    }
    let top = run(hi)?;
    if top.converged() {
        return Ok(ScaleSearch {
            converged_scale: hi,
            failed_scale: None,
            failure: None,
        });
    }
    let mut failure = top.report.termination.to_string();
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        let sol = run(mid)?;
        if sol.converged() {
            lo = mid;
        } else {
            hi = mid;
            failure = sol.report.termination.to_string();
        }
    }
    Ok(ScaleSearch {
        converged_scale: lo,
        failed_scale: Some(hi),
        failure: Some(failure),
    })
}

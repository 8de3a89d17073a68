//! Monte-Carlo benchmark runner and CSV reporting.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use cpd_core::krproj::KrMethod;
use cpd_core::ktensor::msir;
use cpd_core::{
    cp_als, fit, mrcpd_decompose, Compression, Init, KTensor64, KrProjOptions, ModeSplit, MrcpdOptions, SolverOptions,
    SplitChoice, Tensor64,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{BenchError, Result};
use crate::synth::{add_noise, gen_bottleneck_ktensor, gen_random_ktensor};

pub const DEFAULT_GCR_THRESHOLD: f64 = 0.99;

/// Fresh draws allowed when a bottleneck draw misses the correlation target.
const MAX_DATA_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Random normal factors at the uniqueness boundary.
    Sim1,
    /// Order-5 bottleneck data with collinear components.
    Sim2,
    /// Random normal factors of any shape.
    Custom,
}

#[derive(Debug, Clone)]
pub enum MethodSpec {
    CpAls(SolverOptions<f64>),
    Mrcpd(MrcpdOptions<f64>),
}

#[derive(Debug, Clone)]
pub struct Method {
    pub name: String,
    pub spec: MethodSpec,
}

impl Method {
    pub fn cp_als() -> Self {
        Self {
            name: "cp_als".into(),
            spec: MethodSpec::CpAls(SolverOptions::default()),
        }
    }

    /// Split `1|2,3|4,5`, SVD compression of the third merged mode, algebraic
    /// start of the 3-way solve and power-iteration projection.
    pub fn mrcpd_preset() -> Self {
        Self {
            name: "mrcpd".into(),
            spec: MethodSpec::Mrcpd(MrcpdOptions {
                split: SplitChoice::Given(ModeSplit::parse("1|2,3|4,5").expect("valid split")),
                compression: Compression::Svd { mode: 2 },
                solver: SolverOptions {
                    init: Init::Gevd,
                    ..Default::default()
                },
                krproj: KrProjOptions {
                    method: KrMethod::Power,
                    ..Default::default()
                },
                ..Default::default()
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub experiment: Experiment,
    pub shape: Vec<usize>,
    pub rank: usize,
    /// `f64::INFINITY` for noiseless data.
    pub snr_db: f64,
    pub runs: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub output: Option<PathBuf>,
    pub gcr_threshold: f64,
}

impl BenchConfig {
    /// Five modes of `size` (default 20), rank 48, 20 dB.
    pub fn sim1(size: Option<usize>) -> Self {
        Self {
            experiment: Experiment::Sim1,
            shape: vec![size.unwrap_or(20); 5],
            rank: 48,
            snr_db: 20.0,
            runs: 50,
            seed: 0,
            methods: vec![Method::mrcpd_preset(), Method::cp_als()],
            output: None,
            gcr_threshold: DEFAULT_GCR_THRESHOLD,
        }
    }

    /// Five modes of `size` (default 20), rank 5, 20 dB.
    pub fn sim2(size: Option<usize>) -> Self {
        Self {
            experiment: Experiment::Sim2,
            shape: vec![size.unwrap_or(20); 5],
            rank: 5,
            ..Self::sim1(None)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(BenchError::Invalid("runs must be at least 1".into()));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(BenchError::Invalid(format!("bad SNR {}", self.snr_db)));
        }
        if !(self.gcr_threshold > 0.0 && self.gcr_threshold <= 1.0) {
            return Err(BenchError::Invalid(format!(
                "GCR threshold {} outside (0, 1]",
                self.gcr_threshold
            )));
        }
        if self.methods.is_empty() || self.rank == 0 || self.shape.is_empty() {
            return Err(BenchError::Invalid("need methods, a rank and a shape".into()));
        }
        if self.experiment == Experiment::Sim2 && (self.shape.len() != 5 || self.shape.iter().any(|&s| s != self.shape[0])) {
            return Err(BenchError::Invalid("bottleneck data is order 5 with equal sizes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: String,
    pub run: usize,
    /// Fit of the estimate against the noiseless tensor.
    pub fit_noiseless: f64,
    pub fit_observed: f64,
    pub msir_per_mode: Vec<f64>,
    pub msir_mean: f64,
    pub runtime_s: f64,
    pub converged: bool,
    pub eps_k: Option<f64>,
    pub bound_slack: Option<f64>,
    /// Set when the method failed; the numeric fields are then zero.
    pub error: Option<String>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    run: usize,
    fit_noiseless: f64,
    fit_observed: f64,
    msir_mean: f64,
    runtime_s: f64,
    converged: bool,
    eps_k: Option<f64>,
    bound_slack: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_fit: f64,
    pub mean_msir: f64,
    pub median_runtime_s: f64,
    pub gcr_percent: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<MethodSummary>,
}

/// Data, noise and method seeds of one run, from its own ChaCha stream.
fn run_seeds(master: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run as u64);
    rng
}

fn ground_truth(cfg: &BenchConfig, rng: &mut ChaCha8Rng) -> Result<KTensor64> {
    match cfg.experiment {
        Experiment::Sim1 | Experiment::Custom => gen_random_ktensor(&cfg.shape, cfg.rank, rng.next_u64()),
        Experiment::Sim2 => {
            let mut last = None;
            for _ in 0..MAX_DATA_ATTEMPTS {
                match gen_bottleneck_ktensor(cfg.shape[0], cfg.rank, rng.next_u64()) {
                    Ok(kt) => return Ok(kt),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("attempted at least once"))
        }
    }
}

fn run_method(
    method: &Method,
    run: usize,
    truth: &KTensor64,
    clean: &Tensor64,
    observed: &Tensor64,
    rank: usize,
    seed: u64,
) -> RunRecord {
    let start = Instant::now();
    let outcome = match &method.spec {
        MethodSpec::CpAls(opts) => {
            let opts = SolverOptions { seed, ..opts.clone() };
            cp_als(observed, rank, &opts).map(|(kt, rep)| (kt, rep.converged, None, None))
        }
        MethodSpec::Mrcpd(opts) => {
            let mut opts = opts.clone();
            opts.solver.seed = seed;
            mrcpd_decompose(observed, rank, &opts)
                .map(|res| (res.ktensor, res.report.converged, Some(res.bound.eps_k), Some(res.bound.slack())))
        }
    };
    let runtime_s = start.elapsed().as_secs_f64();
    let scored = outcome.map_err(BenchError::from).and_then(|(kt, converged, eps_k, slack)| {
        let rec = kt.reconstruct();
        let msir_per_mode = (0..truth.order())
            .map(|n| msir(truth.factor(n), kt.factor(n)))
            .collect::<cpd_core::Result<Vec<_>>>()?;
        Ok(RunRecord {
            method: method.name.clone(),
            run,
            fit_noiseless: fit(clean, &rec)?,
            fit_observed: fit(observed, &rec)?,
            msir_mean: msir_per_mode.iter().sum::<f64>() / msir_per_mode.len() as f64,
            msir_per_mode,
            runtime_s,
            converged,
            eps_k,
            bound_slack: slack,
            error: None,
        })
    });
    scored.unwrap_or_else(|e| RunRecord {
        method: method.name.clone(),
        run,
        fit_noiseless: 0.0,
        fit_observed: 0.0,
        msir_per_mode: vec![0.0; truth.order()],
        msir_mean: 0.0,
        runtime_s,
        converged: false,
        eps_k: None,
        bound_slack: None,
        error: Some(e.to_string()),
    })
}

fn single_run(cfg: &BenchConfig, run: usize) -> Result<Vec<RunRecord>> {
    let mut rng = run_seeds(cfg.seed, run);
    let truth = ground_truth(cfg, &mut rng)?;
    let noise_seed = rng.next_u64();
    let method_seed = rng.next_u64();
    let clean = truth.reconstruct();
    let observed = add_noise(&clean, cfg.snr_db, noise_seed)?;
    Ok(cfg
        .methods
        .iter()
        .map(|m| run_method(m, run, &truth, &clean, &observed, cfg.rank, method_seed))
        .collect())
}

/// Runs every method on `runs` fresh problems (in parallel across runs),
/// writes the CSV when an output path is set and summarizes per method.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let per_run = (0..cfg.runs)
        .into_par_iter()
        .map(|run| single_run(cfg, run))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    if let Some(path) = &cfg.output {
        let file = std::fs::File::create(path)?;
        write_csv(file, &records)?;
    }
    let summaries = cfg
        .methods
        .iter()
        .map(|m| summarize(&records, &m.name, cfg.gcr_threshold))
        .collect();
    Ok(BenchOutcome { records, summaries })
}

pub fn write_csv<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(CsvRow {
            method: &r.method,
            run: r.run,
            fit_noiseless: r.fit_noiseless,
            fit_observed: r.fit_observed,
            msir_mean: r.msir_mean,
            runtime_s: r.runtime_s,
            converged: r.converged,
            eps_k: r.eps_k,
            bound_slack: r.bound_slack,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Percentage of the method's runs whose noiseless fit reaches `threshold`.
pub fn gcr(records: &[RunRecord], method: &str, threshold: f64) -> f64 {
    let rows: Vec<&RunRecord> = records.iter().filter(|r| r.method == method).collect();
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows.iter().filter(|r| r.error.is_none() && r.fit_noiseless >= threshold).count();
    100.0 * hits as f64 / rows.len() as f64
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub fn summarize(records: &[RunRecord], method: &str, threshold: f64) -> MethodSummary {
    let rows: Vec<&RunRecord> = records.iter().filter(|r| r.method == method).collect();
    let n = rows.len().max(1) as f64;
    let mut runtimes: Vec<f64> = rows.iter().map(|r| r.runtime_s).collect();
    MethodSummary {
        method: method.to_string(),
        runs: rows.len(),
        failures: rows.iter().filter(|r| r.error.is_some()).count(),
        mean_fit: rows.iter().map(|r| r.fit_noiseless).sum::<f64>() / n,
        mean_msir: rows.iter().map(|r| r.msir_mean).sum::<f64>() / n,
        median_runtime_s: median(&mut runtimes),
        gcr_percent: gcr(records, method, threshold),
    }
}

pub fn format_summary(summaries: &[MethodSummary]) -> String {
    let mut s = format!(
        "{:<10} {:>5} {:>9} {:>10} {:>12} {:>7} {:>6}\n",
        "method", "runs", "fit", "msir_db", "median_s", "gcr_%", "fails"
    );
    for m in summaries {
        let _ = writeln!(
            s,
            "{:<10} {:>5} {:>9.4} {:>10.2} {:>12.3} {:>7.1} {:>6}",
            m.method, m.runs, m.mean_fit, m.mean_msir, m.median_runtime_s, m.gcr_percent, m.failures
        );
    }
    s
}

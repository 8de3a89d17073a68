//! Argument types and command bodies of the `cpd` binary. Each command
//! returns its report as text so it can be tested without a process.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpd_core::io::{load_any, load_ktensor, load_tensor, save_ktensor, TensorFile};
use cpd_core::krproj::{kr_project_with, KrMethod, KrProjOptions, ProjectionKind};
use cpd_core::uniqueness::{check_unfolded_uniqueness, kruskal_rank, ksb_check, mode_rank, numerical_rank, MAX_EXACT_KRANK_COLUMNS, RANK_TOL};
use cpd_core::{
    cp_als, fit, matricize, mrcpd_decompose, plan_unfolding, Compression, Init,
    KTensor64, ModeSplit, MrcpdOptions, SolverOptions, SplitChoice, Tensor64,
};

use crate::error::{BenchError, Result};
use crate::harness::{format_summary, run_benchmark, BenchConfig};

#[derive(Debug, Parser)]
#[command(name = "cpd", about = "CP decomposition by mode reduction", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose a dense tensor file.
    Decompose(DecomposeArgs),
    /// Run a Monte-Carlo simulation and write per-run CSV rows.
    Bench(BenchArgs),
    /// Report mode ranks, Kruskal-rank estimates and a recommended split.
    Analyze(AnalyzeArgs),
    /// Khatri-Rao projection of a matrix stored as an order-2 tensor file.
    Krproj(KrprojArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Als,
    Mrcpd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KrMethodArg {
    Svd,
    Power,
}

impl From<KrMethodArg> for KrMethod {
    fn from(m: KrMethodArg) -> Self {
        match m {
            KrMethodArg::Svd => KrMethod::Svd,
            KrMethodArg::Power => KrMethod::Power,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Groups split by `|`, 1-based modes by `,`; planned from mode ranks if absent.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 1e-8)]
    pub solver_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `none`, `svd:MODE` or `fibers:MODE:COUNT` (MODE of the 3-way tensor, 1-based).
    #[arg(long, default_value = "none")]
    pub compress: String,
    #[arg(long, value_enum, default_value = "power")]
    pub krproj: KrMethodArg,
    /// `none`, `nonneg` or `soft:LAMBDA`.
    #[arg(long, default_value = "none")]
    pub proj: String,
    /// Starting model (KTNS): order N, or order 3 for the reduced tensor.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimArg {
    Sim1,
    Sim2,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub experiment: SimArg,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Size of every mode (20 for both simulations by default).
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long, default_value_t = crate::harness::DEFAULT_GCR_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rank: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KrprojArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Row sizes `I1,I2,...`, first fastest; their product is the row count.
    #[arg(long)]
    pub shape: String,
    #[arg(long, value_enum, default_value = "power")]
    pub method: KrMethodArg,
    #[arg(long, default_value = "none")]
    pub proj: String,
    /// Write the factors as a KTNS file with unit weights.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn bad(msg: impl Into<String>) -> BenchError {
    BenchError::Invalid(msg.into())
}

/// `none`, `svd:MODE`, `fibers:MODE:COUNT`, with MODE in 1..=3.
pub fn parse_compression(text: &str, seed: u64) -> Result<Compression> {
    let parts: Vec<&str> = text.trim().split(':').collect();
    let mode = |s: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(m @ 1..=3) => Ok(m - 1),
            _ => Err(bad(format!("compression mode must be 1, 2 or 3, got {s:?}"))),
        }
    };
    match parts.as_slice() {
        ["none"] => Ok(Compression::None),
        ["svd", m] => Ok(Compression::Svd { mode: mode(m)? }),
        ["fibers", m, c] => {
            let count = c.parse::<usize>().map_err(|_| bad(format!("bad fiber count {c:?}")))?;
            if count == 0 {
                return Err(bad("fiber count must be positive"));
            }
            Ok(Compression::Fibers {
                mode: mode(m)?,
                count: Some(count),
                seed,
            })
        }
        _ => Err(bad(format!("unknown compression {text:?}"))),
    }
}

/// `none`, `nonneg`, `soft:LAMBDA` with LAMBDA ≥ 0.
pub fn parse_projection(text: &str) -> Result<ProjectionKind<f64>> {
    match text.trim() {
        "none" => Ok(ProjectionKind::None),
        "nonneg" => Ok(ProjectionKind::Nonnegative),
        s => match s.strip_prefix("soft:").map(str::parse::<f64>) {
            Some(Ok(l)) if l >= 0.0 && l.is_finite() => Ok(ProjectionKind::SoftThreshold(l)),
            _ => Err(bad(format!("unknown projection {text:?}"))),
        },
    }
}

pub fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let dims = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad(format!("bad size {s:?} in {text:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(bad(format!("shape {text:?} needs positive sizes")));
    }
    Ok(dims)
}

pub fn decompose(args: &DecomposeArgs) -> Result<String> {
    let t: Tensor64 = load_tensor(&args.input)?;
    let init = match (&args.init, args.method) {
        (Some(p), _) => Init::Given(load_ktensor(p)?),
        (None, MethodArg::Als) => Init::RandomNormal,
        (None, MethodArg::Mrcpd) => Init::Gevd,
    };
    let solver = SolverOptions {
        max_iters: args.max_iters,
        tol: args.solver_tol,
        seed: args.seed,
        init,
    };
    let mut out = String::new();
    match args.method {
        MethodArg::Als => {
            let (kt, rep) = cp_als(&t, args.rank, &solver)?;
            save_ktensor(&args.output, &kt)?;
            let _ = writeln!(out, "fit: {:.10}", fit(&t, &kt.reconstruct())?);
            let _ = writeln!(out, "runtime_s: {:.3}", rep.runtime_s);
            let _ = writeln!(out, "iterations: {} (converged: {})", rep.iterations, rep.converged);
            let _ = writeln!(out, "eps_k: n/a");
            let _ = writeln!(out, "bound_slack: n/a");
            for w in &rep.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
        }
        MethodArg::Mrcpd => {
            let split = match &args.split {
                Some(s) => SplitChoice::Given(ModeSplit::parse(s)?),
                None => SplitChoice::Auto,
            };
            let opts = MrcpdOptions {
                split,
                solver,
                compression: parse_compression(&args.compress, args.seed)?,
                krproj: KrProjOptions {
                    method: args.krproj.into(),
                    projection: parse_projection(&args.proj)?,
                    ..Default::default()
                },
                restarts: args.restarts,
                ..Default::default()
            };
            let res = mrcpd_decompose(&t, args.rank, &opts)?;
            save_ktensor(&args.output, &res.ktensor)?;
            let _ = writeln!(out, "split: {}", res.split);
            let _ = writeln!(out, "fit: {:.10}", res.report.final_fit);
            let _ = writeln!(out, "runtime_s: {:.3}", res.report.runtime_s);
            let _ = writeln!(
                out,
                "iterations: {} (converged: {})",
                res.report.iterations, res.report.converged
            );
            let _ = writeln!(out, "eps_k: {:.6e}", res.bound.eps_k);
            let _ = writeln!(out, "fit3_err: {:.6e}", res.bound.fit3);
            let _ = writeln!(out, "final_err: {:.6e}", res.bound.final_err);
            let _ = writeln!(out, "bound_slack: {:.6e}", res.bound.slack());
            for w in &res.report.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
        }
    }
    Ok(out)
}

pub fn bench(args: &BenchArgs) -> Result<String> {
    let mut cfg = match args.experiment {
        SimArg::Sim1 => BenchConfig::sim1(args.scale),
        SimArg::Sim2 => BenchConfig::sim2(args.scale),
    };
    cfg.runs = args.runs;
    cfg.seed = args.seed;
    cfg.output = Some(args.out.clone());
    cfg.gcr_threshold = args.threshold;
    let outcome = run_benchmark(&cfg)?;
    let mut out = format_summary(&outcome.summaries);
    for r in outcome.records.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(out, "run {} {}: {}", r.run, r.method, r.error.as_deref().unwrap_or(""));
    }
    Ok(out)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<String> {
    let mut out = String::new();
    let (kranks, rank) = match load_any::<f64>(&args.input)? {
        TensorFile::Dense(t) => {
            let ranks = (0..t.order())
                .map(|n| mode_rank(&t, n, RANK_TOL))
                .collect::<cpd_core::Result<Vec<_>>>()?;
            let _ = writeln!(out, "shape: {:?}", t.shape());
            let _ = writeln!(out, "mode ranks: {ranks:?}");
            let rank = args.rank.unwrap_or_else(|| ranks.iter().copied().max().unwrap_or(1));
            let est: Vec<usize> = ranks.iter().map(|&r| r.min(rank)).collect();
            let _ = writeln!(out, "krank estimates (mode ranks capped at J={rank}): {est:?}");
            (est, rank)
        }
        TensorFile::Kruskal(kt) => analyze_kruskal(&kt, args.rank, &mut out)?,
    };
    let order = kranks.len();
    if order >= 2 {
        let r = ksb_check(&kranks, rank, order)?;
        let _ = writeln!(
            out,
            "KSB: sum {} vs 2J+N-1 = {} (margin {}): {}",
            r.lhs,
            r.rhs,
            r.margin,
            if r.satisfied { "satisfied" } else { "not satisfied" }
        );
    }
    if order >= 4 && !kranks.contains(&0) {
        let split = plan_unfolding(&kranks, rank)?;
        let r = check_unfolded_uniqueness(&kranks, rank, &split)?;
        let _ = writeln!(out, "recommended split: {split}");
        let _ = writeln!(
            out,
            "unfolded KSB bounds {:?}: sum {} vs {} (margin {}): {}",
            r.kranks,
            r.lhs,
            r.rhs,
            r.margin,
            if r.satisfied { "satisfied" } else { "not satisfied" }
        );
    }
    Ok(out)
}

fn analyze_kruskal(kt: &KTensor64, rank: Option<usize>, out: &mut String) -> Result<(Vec<usize>, usize)> {
    let rank = rank.unwrap_or(kt.rank());
    let _ = writeln!(out, "shape: {:?} rank {}", kt.shape(), kt.rank());
    let ranks = kt
        .factors()
        .iter()
        .map(|f| numerical_rank(f, RANK_TOL))
        .collect::<cpd_core::Result<Vec<_>>>()?;
    let _ = writeln!(out, "factor ranks: {ranks:?}");
    let kranks = if kt.rank() <= MAX_EXACT_KRANK_COLUMNS {
        let k = kt
            .factors()
            .iter()
            .map(|f| kruskal_rank(f, RANK_TOL))
            .collect::<cpd_core::Result<Vec<_>>>()?;
        let _ = writeln!(out, "kruskal ranks: {k:?}");
        k
    } else {
        let _ = writeln!(out, "krank estimates (factor ranks, too many columns to enumerate): {ranks:?}");
        ranks
    };
    Ok((kranks, rank))
}

pub fn krproj(args: &KrprojArgs) -> Result<String> {
    let t: Tensor64 = load_tensor(&args.input)?;
    if t.order() != 2 {
        return Err(bad(format!("expected a matrix (order 2), got order {}", t.order())));
    }
    let h = matricize(&t, 0)?;
    let sizes = parse_shape(&args.shape)?;
    let opts = KrProjOptions {
        method: args.method.into(),
        projection: parse_projection(&args.proj)?,
        ..Default::default()
    };
    let res = kr_project_with(&h, &sizes, &opts)?;
    let mut out = String::new();
    let _ = writeln!(out, "eps_k: {:.6e}", res.eps_k);
    let cols: Vec<String> = res.column_residuals.iter().map(|r| format!("{r:.3e}")).collect();
    let _ = writeln!(out, "column residuals: [{}]", cols.join(", "));
    if !res.zero_columns.is_empty() {
        let _ = writeln!(out, "zero columns: {:?}", res.zero_columns);
    }
    if !res.flagged_columns.is_empty() {
        let _ = writeln!(out, "flagged columns: {:?}", res.flagged_columns);
    }
    if let Some(path) = &args.output {
        save_ktensor(path, &KTensor64::from_factors(res.factors)?)?;
    }
    Ok(out)
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Decompose(a) => decompose(a),
        Command::Bench(a) => bench(a),
        Command::Analyze(a) => analyze(a),
        Command::Krproj(a) => krproj(a),
    }
}

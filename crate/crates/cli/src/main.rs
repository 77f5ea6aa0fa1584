//! `bvcast`: run decomposition grids, build forecast registries, forecast
//! new cells and voting ensembles, and flatten results to plot CSVs.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numeric fit failure,
//! 4 partial completion.

mod curves;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bvcast::decomp::{RunRecord, SscvConfig};
use bvcast::ensemble::{default_grid, forecast_ensemble, observe_final, VotingEnsemble};
use bvcast::experiment::{self, DatasetSource, ExperimentPlan, RunOptions};
use bvcast::forecast::{self, build_registry, forecast_cell, ModelRegistry};
use bvcast::data::{self, Generator, SyntheticSpec, DEFAULT_LABEL_COLUMN};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const DEFAULT_ENSEMBLE: &str = "ens:plurality[gnb|knn:k=1|tree:depth=8|stump|knn:k=3]";

#[derive(Parser, Debug)]
#[command(name = "bvcast", version, about = "Bias/variance estimation and error forecasting for classifiers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Global {
    /// Master seed (overrides the plan).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cross-validation folds [default: 10].
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Cross-validation repeats [default: 10].
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Output directory (output file for `curves` and `generate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads [default: plan parallelism, else 1].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Recompute results that already exist.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decompose every (dataset, learner, n) cell of a plan, plus full-size runs.
    Decompose(PlanArgs),
    /// Fit the pooled regression registry from a record file.
    Build {
        /// Record file written by `decompose`.
        records: PathBuf,
    },
    /// Forecast final values for new cells and compare with observations.
    Predict {
        #[arg(long)]
        registry: PathBuf,
        /// Record file with estimates (full-size records, if present, are
        /// used as observations).
        records: PathBuf,
        /// Only forecast from estimates at this size.
        #[arg(long)]
        n: Option<usize>,
        /// Use the closest grid size when `n` is not in the registry.
        #[arg(long)]
        nearest: bool,
        /// Skip cells the registry was built from.
        #[arg(long)]
        unseen_only: bool,
    },
    /// Forecast voting-ensemble error from nested prefixes.
    Ensemble {
        #[command(flatten)]
        plan: PlanArgs,
        /// Ensemble spec.
        #[arg(long)]
        ensemble: Option<String>,
        /// Also cross-validate on the full dataset and record the result.
        #[arg(long)]
        observe: bool,
    },
    /// Flatten a result file (records, registry, forecasts, evaluation or
    /// ensemble forecast) to CSV.
    Curves { input: PathBuf },
    /// Write a synthetic dataset as CSV.
    Generate {
        #[arg(long, value_enum, default_value = "gaussian-mixture")]
        generator: GeneratorArg,
        #[arg(long)]
        items: usize,
        #[arg(long)]
        features: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0.0)]
        bayes_error: f64,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
    },
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum GeneratorArg {
    GaussianMixture,
    Hypercube,
}

#[derive(Args, Debug, Clone)]
struct PlanArgs {
    /// JSON experiment plan.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// CSV dataset(s), used instead of or added to the plan's.
    #[arg(long = "data")]
    data: Vec<PathBuf>,
    #[arg(long, default_value = DEFAULT_LABEL_COLUMN)]
    label_column: String,
    /// Learner specs, comma separated (e.g. `gnb,knn:k=3,bag:count=10,depth=8`).
    /// A `key=value` piece without a learner name continues the previous spec.
    #[arg(long)]
    learners: Vec<String>,
    /// Grid sizes: `100,200,300` or `start:end:step`.
    #[arg(long)]
    grid: Option<String>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Outcome {
    Partial(String),
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Partial(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Outcome {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Outcome>().is_some() {
        return 4;
    }
    match err.chain().find_map(|e| e.downcast_ref::<bvcast::Error>()) {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    match cli.command {
        Command::Decompose(args) => cmd_decompose(&g, &args),
        Command::Build { records } => cmd_build(&g, &records),
        Command::Predict {
            registry,
            records,
            n,
            nearest,
            unseen_only,
        } => cmd_predict(&g, &registry, &records, n, nearest, unseen_only),
        Command::Ensemble {
            plan,
            ensemble,
            observe,
        } => cmd_ensemble(&g, &plan, ensemble.as_deref(), observe),
        Command::Curves { input } => cmd_curves(&g, &input),
        Command::Generate {
            generator,
            items,
            features,
            classes,
            bayes_error,
            separation,
        } => {
            let spec = SyntheticSpec {
                generator: match generator {
                    GeneratorArg::GaussianMixture => Generator::GaussianMixture,
                    GeneratorArg::Hypercube => Generator::RuleLabelledHypercube,
                },
                item_count: items,
                feature_count: features,
                class_count: classes,
                bayes_error,
                seed: g.seed.unwrap_or(0),
                separation,
            };
            let out = g.out.clone().context("generate needs --out <file.csv>")?;
            data::generate(&spec)?.save_csv(&out, DEFAULT_LABEL_COLUMN)?;
            eprintln!("wrote {items} items to {}", out.display());
            Ok(())
        }
    }
}

fn split_learners(args: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for piece in args.iter().flat_map(|a| a.split(',')).map(str::trim) {
        if piece.is_empty() {
            continue;
        }
        match out.last_mut() {
            Some(prev) if piece.contains('=') && !piece.contains(':') && prev.contains(':') => {
                prev.push(',');
                prev.push_str(piece);
            }
            _ => out.push(piece.to_owned()),
        }
    }
    out
}

fn parse_grid(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if let Some((start, rest)) = s.split_once(':') {
        let (end, step) = rest.split_once(':').unwrap_or((rest, "1"));
        let (start, end, step): (usize, usize, usize) = (
            start.trim().parse().context("grid start")?,
            end.trim().parse().context("grid end")?,
            step.trim().parse().context("grid step")?,
        );
        if step == 0 || start > end {
            bail!("grid '{s}' needs start <= end and step >= 1");
        }
        return Ok((start..=end).step_by(step).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad grid value '{v}'")))
        .collect()
}

/// The plan from `--plan` and/or ad-hoc flags; command-line values win.
/// Returns the plan and the directory relative CSV paths resolve against.
fn assemble_plan(g: &Global, args: &PlanArgs) -> Result<(ExperimentPlan, PathBuf)> {
    let (mut plan, base) = match &args.plan {
        Some(p) => {
            let plan = ExperimentPlan::load(p).with_context(|| format!("reading plan {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (plan, base)
        }
        None => (
            ExperimentPlan {
                datasets: Vec::new(),
                learners: Vec::new(),
                n_grid: Vec::new(),
                sscv: SscvConfig::default(),
                output_dir: PathBuf::from("out"),
                parallelism: 1,
                ensemble: None,
            },
            PathBuf::new(),
        ),
    };
    let cwd = std::env::current_dir()?;
    for path in &args.data {
        plan.datasets.push(DatasetSource::Csv {
            path: cwd.join(path),
            label_column: args.label_column.clone(),
            name: None,
        });
    }
    if !args.learners.is_empty() {
        plan.learners = split_learners(&args.learners);
    }
    if let Some(grid) = &args.grid {
        plan.n_grid = parse_grid(grid)?;
    }
    if let Some(seed) = g.seed {
        plan.sscv.seed = seed;
    }
    if let Some(folds) = g.folds {
        plan.sscv.folds = folds;
    }
    if let Some(repeats) = g.repeats {
        plan.sscv.repeats = repeats;
    }
    if let Some(out) = &g.out {
        plan.output_dir = out.clone();
    } else if args.plan.is_some() && plan.output_dir.is_relative() {
        plan.output_dir = base.join(&plan.output_dir);
    }
    if let Some(jobs) = g.jobs {
        plan.parallelism = jobs;
    }
    Ok((plan, base))
}

fn cmd_decompose(g: &Global, args: &PlanArgs) -> Result<()> {
    let (plan, base) = assemble_plan(g, args)?;
    plan.validate()?;
    let sets = plan.load_datasets(&base)?;
    let summary = experiment::run_plan(
        &plan,
        &sets,
        &RunOptions {
            jobs: plan.parallelism,
            force: g.force,
        },
    )?;
    eprintln!(
        "{} cells: {} computed, {} reused, {} failed -> {}",
        summary.total,
        summary.computed,
        summary.reused,
        summary.failures.len(),
        summary.records_path.display()
    );
    if !summary.complete() {
        for f in &summary.failures {
            eprintln!("  {}: {}", f.cell, f.error);
        }
        return Err(Outcome::Partial(format!(
            "{} cells failed; see {}",
            summary.failures.len(),
            plan.output_dir.join(experiment::FAILURES_FILE).display()
        ))
        .into());
    }
    Ok(())
}

fn out_dir(g: &Global, default: &Path) -> Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| default.to_path_buf());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_build(g: &Global, records: &Path) -> Result<()> {
    let (grid, finals) = experiment::split_finals(experiment::read_records(records)?);
    let registry = build_registry(&grid, &finals)?;
    let dir = out_dir(g, records.parent().unwrap_or(Path::new(".")))?;
    registry.save(dir.join("registry.json"))?;
    let mut w = csv_writer(&dir.join("r2_by_n.csv"))?;
    w.write_record(["n", "r2_bias2", "r2_variance", "r2_error", "point_count"])?;
    for (n, r2, count) in registry.r2_table() {
        w.write_record([n.to_string(), r2[0].to_string(), r2[1].to_string(), r2[2].to_string(), count.to_string()])?;
    }
    w.flush()?;
    eprintln!(
        "registry over {} cells and {} grid sizes -> {}",
        registry.provenance.len(),
        registry.n_grid.len(),
        dir.join("registry.json").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluationAtN {
    n: usize,
    report: forecast::EvaluationReport,
}

fn cmd_predict(
    g: &Global,
    registry_path: &Path,
    records: &Path,
    only_n: Option<usize>,
    nearest: bool,
    unseen_only: bool,
) -> Result<()> {
    let registry = ModelRegistry::load(registry_path)?;
    let (grid, finals) = experiment::split_finals(experiment::read_records(records)?);
    let observed = |r: &RunRecord| {
        finals
            .iter()
            .find(|f| f.dataset == r.dataset && f.learner == r.learner)
            .map(RunRecord::decomposition)
    };
    let mut forecasts = Vec::new();
    for r in grid.iter().filter(|r| only_n.is_none_or(|n| r.n == n)) {
        if unseen_only && registry.has_seen(&r.dataset, &r.learner) {
            continue;
        }
        let mut f = forecast_cell(&registry, r, nearest).with_context(|| r.cell_label())?;
        if f.n_used != f.n {
            eprintln!("warning: {} forecast with the n={} models", r.cell_label(), f.n_used);
        }
        f.observed_final = observed(r);
        forecasts.push(f);
    }
    if forecasts.is_empty() {
        bail!("no estimates to forecast in {}", records.display());
    }
    let dir = out_dir(g, records.parent().unwrap_or(Path::new(".")))?;
    write_json(&dir.join("forecasts.json"), &forecasts)?;

    let mut sizes: Vec<usize> = forecasts.iter().map(|f| f.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut reports = Vec::new();
    for n in sizes {
        let at_n: Vec<_> = forecasts.iter().filter(|f| f.n == n).cloned().collect();
        if at_n.iter().filter(|f| f.observed_final.is_some()).count() < 2 {
            continue;
        }
        let report = forecast::evaluate(&at_n)?;
        for v in &report.variables {
            eprintln!(
                "n={n} {:<17} r2={} t={:.3} p={:.4} mean rel dev={}",
                v.variable.name(),
                v.r2.map_or("-".into(), |r| format!("{r:.3}")),
                v.t_test.t,
                v.t_test.p_two_sided,
                v.mean_rel_dev_pct.map_or("-".into(), |d| format!("{d:+.1}%"))
            );
        }
        reports.push(EvaluationAtN { n, report });
    }
    if !reports.is_empty() {
        write_json(&dir.join("evaluation.json"), &reports)?;
        let rows: Vec<_> = reports.iter().flat_map(|r| r.report.rows.iter().cloned()).collect();
        curves::write_evaluation_rows(&dir.join("evaluation.csv"), &rows)?;
    }
    eprintln!("{} forecasts -> {}", forecasts.len(), dir.display());
    Ok(())
}

fn cmd_ensemble(g: &Global, args: &PlanArgs, spec: Option<&str>, observe: bool) -> Result<()> {
    let mut args = args.clone();
    if args.grid.is_none() && args.plan.is_none() {
        args.grid = Some("100:1000:20".into());
    }
    let (plan, base) = assemble_plan(g, &args)?;
    let spec = spec
        .map(str::to_owned)
        .or_else(|| plan.ensemble.clone())
        .unwrap_or_else(|| DEFAULT_ENSEMBLE.to_owned());
    let ensemble: VotingEnsemble = spec.parse()?;
    let grid = if plan.n_grid.is_empty() { default_grid() } else { plan.n_grid.clone() };
    if plan.datasets.is_empty() {
        bail!(bvcast::Error::InvalidArgument("no datasets given (use --data or --plan)".into()));
    }
    let config = plan.sscv;
    config.validate(grid[0])?;
    let dir = plan.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let pool = rayon_pool(plan.parallelism)?;
    for source in &plan.datasets {
        let dataset = source.load(&base)?;
        let json = dir.join(format!("ensemble-{}.json", dataset.name()));
        if json.exists() && !g.force {
            eprintln!("{} exists; skipping (use --force to recompute)", json.display());
            continue;
        }
        let mut fc = pool
            .install(|| forecast_ensemble(&dataset, &ensemble, &grid, &config))
            .with_context(|| format!("ensemble forecast for '{}'", dataset.name()))?;
        if observe {
            fc.observed_final = Some(pool.install(|| observe_final(&dataset, &ensemble, &config))?);
        }
        write_json(&json, &fc)?;
        curves::write_ensemble_curve(&json.with_extension("csv"), &fc)?;
        let p = fc.predicted_final;
        eprintln!(
            "{}: or={:.4} predicted error at n={} is {:.4} ± {:.4}{}",
            dataset.name(),
            fc.or_constant,
            p.n,
            p.value,
            p.band,
            fc.observed_final
                .map_or(String::new(), |o| format!(" (observed {:.4})", o.error_mean))
        );
    }
    Ok(())
}

fn rayon_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?)
}

fn cmd_curves(g: &Global, input: &Path) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    match &g.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            curves::flatten(&text, file)
        }
        None => curves::flatten(&text, std::io::stdout().lock()),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

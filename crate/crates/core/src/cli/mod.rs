//! Command-line front end. [`run`] parses arguments, executes one command and
//! returns the process exit code: 0 ok, 2 infeasible, 3 invalid input, 4 I/O.

pub mod eval;
pub mod files;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ann::GraphParams;
use crate::error::{Error, Result};
use crate::estimators::{fit, Models, SampleParams, StorageModel, StorageUnit, TrainingSample};
use crate::model::{ColumnSet, Configuration, Dataset, IndexDescriptor, Workload};
use crate::planner::{PlanRecord, Planner, PlannerParams};
use crate::searcher::{baseline_per_column, baseline_per_query, sweep, SearchParams, TuneReport, Tuner};
use crate::synth::{binomial_vids, clustered_dataset, query_probabilities, DataSpec};
use files::{load_dataset, save_dataset, write_atomic, write_json, WorkloadColumn, WorkloadFile, WorkloadQuery};

#[derive(Debug, Parser)]
#[command(name = "mvtune", version, about = "Index tuning for multi-vector search")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a clustered synthetic dataset and a binomial workload.
    Gen(GenArgs),
    /// Fit cost and recall models on a row sample.
    Train(TrainArgs),
    /// Search for a configuration and compare it with the baselines.
    Tune(TuneArgs),
    /// Plan one query against a given configuration.
    Plan(PlanArgs),
    /// Build the recommended indexes and execute every plan.
    Eval(EvalArgs),
    /// Tune at several storage budgets.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for the dataset and workload.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub rows: usize,
    /// Comma-separated column dimensions.
    #[arg(long, value_delimiter = ',', default_value = "32,48,64")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.8)]
    pub spread: f32,
    #[arg(long, default_value_t = 4)]
    pub queries: usize,
    /// Probability that a column joins a query.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub recall: f64,
    #[arg(long, default_value_t = 3.0)]
    pub budget: f64,
    #[arg(long, value_enum, default_value = "index-count")]
    pub storage_unit: UnitArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnitArg {
    IndexCount,
    Bytes,
}

impl From<UnitArg> for StorageUnit {
    fn from(u: UnitArg) -> Self {
        match u {
            UnitArg::IndexCount => StorageUnit::IndexCount,
            UnitArg::Bytes => StorageUnit::Bytes,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub fraction: f64,
    #[arg(long, default_value_t = 1000)]
    pub min_rows: usize,
    #[arg(long, default_value_t = 50)]
    pub train_queries: usize,
}

#[derive(Debug, Args, Clone)]
pub struct SearchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Override the workload's storage budget.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Override the workload's recall threshold.
    #[arg(long)]
    pub recall: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub di: usize,
    #[arg(long, default_value_t = 2)]
    pub se: usize,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long, default_value_t = 0.05)]
    pub im: f64,
    #[arg(long, default_value_t = 5)]
    pub kprime: usize,
    #[arg(long, default_value_t = 20)]
    pub max_iterations: usize,
    /// Seed with all within-budget configurations when there are at most this many.
    #[arg(long, default_value_t = SearchParams::default().exhaustive_limit)]
    pub exhaustive_limit: usize,
    /// Reject configurations leaving a query without a usable index.
    #[arg(long)]
    pub no_scan_fallback: bool,
    /// Plan with ranks extrapolated from the model's row sample.
    #[arg(long)]
    pub sampled_ranks: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    /// Query position in the workload.
    #[arg(long)]
    pub query: usize,
    /// Indexes as column lists, e.g. "1,2;3".
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    /// Report written by `tune`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InfeasiblePlan(_) | Error::InfeasibleWorkload(_) => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the first pool; that is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed),
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Tune(a) => cmd_tune(a, cli.seed),
        Command::Plan(a) => cmd_plan(a, cli.seed),
        Command::Eval(a) => cmd_eval(a, cli.seed),
        Command::Sweep(a) => cmd_sweep(a, cli.seed),
    }
}

fn cmd_gen(a: &GenArgs, seed: u64) -> Result<()> {
    if a.rows < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 rows, got {}", a.rows)));
    }
    let spec = DataSpec {
        rows: a.rows,
        dims: a.dims.clone(),
        clusters: a.clusters,
        spread: a.spread,
        seed,
    };
    let ds = clustered_dataset(&spec)?;
    save_dataset(&ds, &a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_0000);
    let vids = binomial_vids(a.dims.len() as u32, a.p, a.queries, &mut rng)?;
    let probs = query_probabilities(a.queries, &mut rng);
    let wf = WorkloadFile {
        columns: ds
            .columns()
            .iter()
            .map(|c| WorkloadColumn {
                id: c.id,
                dim: c.dim,
                name: c.name.clone(),
            })
            .collect(),
        queries: vids
            .into_iter()
            .zip(probs)
            .enumerate()
            .map(|(i, (vid, probability))| WorkloadQuery {
                vid,
                k: a.k,
                probability,
                vectors_ref: None,
                seed: Some(seed.wrapping_mul(1000).wrapping_add(i as u64)),
            })
            .collect(),
        recall_threshold: a.recall,
        storage_budget: a.budget,
        storage_unit: a.storage_unit.into(),
    };
    wf.resolve(&ds, &a.out)?;
    wf.write(&a.out.join("workload.json"))?;
    eprintln!("wrote {} rows x {} columns and {} queries to {}", a.rows, a.dims.len(), a.queries, a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: u64) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let params = SampleParams {
        fraction: a.fraction,
        min_rows: a.min_rows,
        train_queries: a.train_queries,
        seed,
        ..Default::default()
    };
    let sample = TrainingSample::draw(&ds, &params)?;
    let graph = GraphParams {
        seed,
        ..Default::default()
    };
    let (models, _) = fit(&ds, &sample, &params, graph, StorageModel::default())?;
    models.write(&a.out)?;
    for c in &models.columns {
        println!(
            "column {}: r2_cost {:.4} r2_recall {:.4} (a {:.4}, b {:.2}, c {:.4}, d {:.4})",
            c.id, c.r2_cost, c.r2_recall, c.a, c.b, c.c, c.d
        );
    }
    Ok(())
}

struct Loaded {
    ds: Dataset,
    workload: Workload,
    models: Models,
}

fn load_inputs(s: &SearchArgs) -> Result<Loaded> {
    let ds = load_dataset(&s.dataset)?;
    let wf = WorkloadFile::read(&s.workload)?;
    let base = s.workload.parent().unwrap_or(Path::new("."));
    let mut workload = wf.resolve(&ds, base)?;
    if let Some(b) = s.budget {
        workload = Workload::new(workload.queries, workload.recall_threshold, b)?;
    }
    if let Some(r) = s.recall {
        workload = Workload::new(workload.queries, r, workload.storage_budget)?;
    }
    let mut models = Models::read(&s.model)?;
    if models.num_rows != ds.num_rows() {
        return Err(Error::InvalidInput(format!(
            "model was trained on {} rows, dataset has {}",
            models.num_rows,
            ds.num_rows()
        )));
    }
    models.storage.unit = wf.storage_unit;
    Ok(Loaded { ds, workload, models })
}

fn planner_params(s: &SearchArgs, seed: u64) -> PlannerParams {
    PlannerParams {
        di: s.di,
        k_prime: s.kprime,
        rank_source: if s.sampled_ranks {
            crate::planner::RankSource::Sampled
        } else {
            crate::planner::RankSource::Exact
        },
        seed,
        ..Default::default()
    }
}

fn search_params(s: &SearchArgs) -> SearchParams {
    SearchParams {
        di: s.di,
        se: s.se,
        beam: s.beam,
        im: s.im,
        max_iterations: s.max_iterations,
        scan_fallback: !s.no_scan_fallback,
        exhaustive_limit: s.exhaustive_limit,
        ..Default::default()
    }
}

/// Tunes and runs both baselines; the report is a pure function of the inputs.
pub fn tune_report(ds: &Dataset, w: &Workload, models: &Models, pp: PlannerParams, sp: &SearchParams, seed: u64) -> Result<TuneReport> {
    let planner = Planner::new(ds, models, w.recall_threshold, pp)?;
    let tuned = Tuner::new(&planner, w, sp.clone())?.tune()?;
    let per_column = baseline_per_column(&planner, w)?;
    let per_query = baseline_per_query(&planner, w)?;
    Ok(TuneReport::new(w, &planner, sp, &tuned, &per_column, &per_query, seed))
}

fn plans_csv(reports: &[(Option<f64>, &TuneReport)]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    wtr.write_record(["budget", "source", "query_id", "vid", "ek", "est_cost", "est_recall", "algorithm"])
        .map_err(csv_err)?;
    for (budget, r) in reports {
        let b = budget.map(|v| v.to_string()).unwrap_or_default();
        for (source, plans) in [("tuned", &r.plans), ("per_column", &r.baselines.per_column.plans), ("per_query", &r.baselines.per_query.plans)] {
            for p in plans {
                let algo = serde_json::to_value(p.algorithm)?.as_str().unwrap_or_default().to_string();
                if p.assignments.is_empty() {
                    wtr.write_record([b.clone(), source.into(), p.query_id.to_string(), String::new(), "0".into(), p.est_cost.to_string(), p.est_recall.to_string(), algo.clone()])
                        .map_err(csv_err)?;
                }
                for a in &p.assignments {
                    let vid = a.vid.ids().map(|i| i.to_string()).collect::<Vec<_>>().join(";");
                    wtr.write_record([b.clone(), source.into(), p.query_id.to_string(), vid, a.ek.to_string(), p.est_cost.to_string(), p.est_recall.to_string(), algo.clone()])
                        .map_err(csv_err)?;
                }
            }
        }
    }
    wtr.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

fn cmd_tune(a: &TuneArgs, seed: u64) -> Result<()> {
    let l = load_inputs(&a.search)?;
    let report = tune_report(&l.ds, &l.workload, &l.models, planner_params(&a.search, seed), &search_params(&a.search), seed)?;
    match a.format {
        Format::Json => write_json(&a.out, &report)?,
        Format::Csv => write_atomic(&a.out, &plans_csv(&[(None, &report)])?)?,
    }
    println!(
        "tuned cost {:.1} | per-column {:.1} | per-query {:.1} | speedup {:.2}x | config {}",
        report.workload_cost,
        report.baseline_costs.per_column,
        report.baseline_costs.per_query,
        report.speedup,
        report.configuration()
    );
    Ok(())
}

/// Parses "1,2;3" into a configuration.
pub fn parse_config(text: &str) -> Result<Configuration> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|part| {
            let ids = part
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::InvalidInput(format!("bad column id {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IndexDescriptor::new(ColumnSet::from_ids(ids)?))
        })
        .collect()
}

fn cmd_plan(a: &PlanArgs, seed: u64) -> Result<()> {
    let l = load_inputs(&a.search)?;
    let q = l
        .workload
        .queries
        .get(a.query)
        .ok_or_else(|| Error::InvalidInput(format!("workload has no query {}", a.query)))?;
    let conf = parse_config(&a.config)?;
    let planner = Planner::new(&l.ds, &l.models, l.workload.recall_threshold, planner_params(&a.search, seed))?;
    let plan = planner.plan(a.query, q, &conf)?;
    let record = PlanRecord::new(a.query, &plan);
    match &a.out {
        Some(p) => write_json(p, &record)?,
        None => {
            let text = serde_json::to_string_pretty(&record)?;
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let wf = WorkloadFile::read(&a.workload)?;
    let w = wf.resolve(&ds, a.workload.parent().unwrap_or(Path::new(".")))?;
    let report: TuneReport = files::read_json(&a.report)?;
    let w = Workload::new(w.queries, report.recall_threshold, report.storage_budget)?;
    let graph = GraphParams {
        seed,
        ..Default::default()
    };
    let (ev, timings) = eval::evaluate(&ds, &w, &report, graph)?;
    match a.format {
        Format::Json => write_json(&a.out, &ev)?,
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
            for (source, rows) in [("tuned", &ev.tuned), ("per_column", &ev.per_column)] {
                for r in rows.iter() {
                    wtr.serialize((source, r)).map_err(csv_err)?;
                }
            }
            write_atomic(&a.out, &wtr.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?)?;
        }
    }
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".timings.json");
    write_json(Path::new(&sidecar), &timings)?;
    eprintln!(
        "built indexes in {:.2}s; executed tuned plans in {:.3}s, per-column in {:.3}s",
        timings.build_secs, timings.tuned_exec_secs, timings.per_column_exec_secs
    );
    println!(
        "measured cost tuned {:.1} vs per-column {:.1} ({:.2}x); recall ok {:.0}%, min {:.3}",
        ev.tuned_summary.measured_cost,
        ev.per_column_summary.measured_cost,
        ev.measured_speedup,
        100.0 * ev.tuned_summary.recall_ok,
        ev.tuned_summary.min_recall
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepEntry {
    pub budget: f64,
    pub report: TuneReport,
}

fn cmd_sweep(a: &SweepArgs, seed: u64) -> Result<()> {
    let l = load_inputs(&a.search)?;
    let sp = search_params(&a.search);
    let planner = Planner::new(&l.ds, &l.models, l.workload.recall_threshold, planner_params(&a.search, seed))?;
    let runs = sweep(&planner, &l.workload, &sp, &a.budgets)?;
    let per_column = baseline_per_column(&planner, &l.workload)?;
    let per_query = baseline_per_query(&planner, &l.workload)?;
    let entries: Vec<SweepEntry> = runs
        .iter()
        .map(|(b, r)| {
            let wb = Workload {
                storage_budget: *b,
                ..l.workload.clone()
            };
            SweepEntry {
                budget: *b,
                report: TuneReport::new(&wb, &planner, &sp, r, &per_column, &per_query, seed),
            }
        })
        .collect();
    match a.format {
        Format::Json => write_json(&a.out, &entries)?,
        Format::Csv => {
            let refs: Vec<(Option<f64>, &TuneReport)> = entries.iter().map(|e| (Some(e.budget), &e.report)).collect();
            write_atomic(&a.out, &plans_csv(&refs)?)?;
        }
    }
    for e in &entries {
        println!("budget {}: cost {:.1} config {}", e.budget, e.report.workload_cost, e.report.configuration());
    }
    Ok(())
}

mod svg;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nsaga::bench::{
    cached_graph, load_instance, read_trace, replicate_grid, replicate_synthetic, run_experiment,
    run_grid, with_workers, write_trace, BenchError, DatasetSpec, ExperimentResult, MetricsTrace,
    RunConfig, REPLICATE_EPS,
};
use nsaga::memengine::EngineError;
use nsaga::neighbors::verify_uniformity;
use nsaga::problem::{LabelMap, LossKind};
use nsaga::theory::{rate_table, TheoryError};

use svg::XAxis;

#[derive(Parser)]
#[command(name = "nsaga", version, about = "Variance-reduced SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config over its seeds; writes trace.csv, chart.svg and config.txt.
    Run(RunArgs),
    /// Print step sizes and guaranteed rates for (n, mu, L, q).
    Rates(RatesArgs),
    /// Build (or load from cache) the neighbor graph and audit its in-degrees.
    Neighbors(NeighborsArgs),
    /// SAGA, q-SAGA, eps-N-SAGA and SGD side by side for two values of mu.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key after the file, e.g. `--set algorithm.q=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to `runs/run-<unix time>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chart x axis.
    #[arg(long, value_enum, default_value = "datapoint_evals")]
    x: XAxis,
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1e-3)]
    mu: f64,
    #[arg(long = "L", default_value_t = 1.0)]
    l: f64,
    #[arg(long, default_value_t = 20)]
    q: usize,
}

#[derive(Args)]
struct NeighborsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// In-degree; defaults to `algorithm.q`.
    #[arg(long)]
    q: Option<usize>,
    /// Cache directory; defaults to `graph_cache` or `graphs`.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReplicateData {
    Synthetic,
    Libsvm,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    dataset: ReplicateData,
    /// libsvm file, required with `--dataset libsvm`.
    #[arg(long)]
    path: Option<PathBuf>,
    /// Label relabeling for libsvm data, e.g. `1:1,2:-1`.
    #[arg(long)]
    label_map: Option<LabelMap>,
    /// Points drawn from the dataset (synthetic: points generated).
    #[arg(long, default_value_t = 10_000)]
    subsample: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.001])]
    mu: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    q: usize,
    /// eps values for eps-N-SAGA; one curve per value.
    #[arg(long, value_delimiter = ',', default_values_t = [REPLICATE_EPS])]
    eps: Vec<f64>,
    /// Further overrides applied on top of the preset.
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to `runs/replicate-<unix time>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error with a fixed exit status: 1 config, 2 data, 3 divergence.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Failure {}

fn fail(code: u8, msg: impl Into<String>) -> anyhow::Error {
    Failure {
        code,
        msg: msg.into(),
    }
    .into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(b) = cause.downcast_ref::<BenchError>() {
            return match b {
                BenchError::Config { .. } | BenchError::Theory(_) => 1,
                BenchError::Engine(EngineError::Diverged { .. }) => 3,
                BenchError::Engine(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<TheoryError>().is_some() {
            return 1;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Neighbors(a) => cmd_neighbors(a),
        Command::Replicate(a) => cmd_replicate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn apply_config(base: RunConfig, args: &ConfigArgs) -> Result<RunConfig> {
    let mut c = base;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| fail(1, format!("cannot read config {}: {e}", path.display())))?;
        c.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| fail(1, format!("--set `{kv}`: expected KEY=VALUE")))?;
        c.set(k.trim(), v).context("in --set")?;
    }
    c.validate()?;
    Ok(c)
}

fn out_dir(out: Option<PathBuf>, prefix: &str) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        PathBuf::from("runs").join(format!("{prefix}-{secs}"))
    });
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes the CSV, then renders the chart from what was written.
fn emit(trace: &MetricsTrace, csv: &Path, svg: &[(PathBuf, XAxis)], title: &str) -> Result<()> {
    write_trace(trace, csv).with_context(|| format!("cannot write {}", csv.display()))?;
    let back = read_trace(csv)?;
    for (path, x) in svg {
        write_file(path, &svg::render(&back, *x, title))?;
    }
    Ok(())
}

fn summary(r: &ExperimentResult) {
    let last = r.trace.curve(&r.label).last().map_or(f64::NAN, |p| p.mean);
    println!(
        "{:<40} gamma = {:<12.6e} final mean suboptimality = {last:.6e}",
        r.label, r.gamma
    );
}

fn diverged_error(results: &[ExperimentResult]) -> Result<()> {
    let bad: Vec<String> = results
        .iter()
        .flat_map(|r| {
            r.trace
                .diverged
                .iter()
                .map(|(a, s)| format!("{a} seed {s}"))
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(fail(3, format!("diverged: {}", bad.join(", "))))
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = apply_config(RunConfig::default(), &args.config)?;
    let dir = out_dir(args.out, "run")?;
    write_file(&dir.join("config.txt"), &config.to_text())?;
    let res = run_experiment(&config)?;
    println!(
        "n = {}, L = {:.6e}, f* = {:.12e}",
        res.n, res.lipschitz, res.f_star
    );
    summary(&res);
    let title = format!("{} (mu = {})", res.label, config.mu);
    emit(
        &res.trace,
        &dir.join("trace.csv"),
        &[(dir.join("chart.svg"), args.x)],
        &title,
    )?;
    println!("wrote {}", dir.display());
    diverged_error(std::slice::from_ref(&res))
}

fn cmd_rates(args: RatesArgs) -> Result<()> {
    let table = rate_table(args.n, args.mu, args.l, args.q)?;
    print!("{table}");
    Ok(())
}

fn cmd_neighbors(args: NeighborsArgs) -> Result<()> {
    let config = apply_config(RunConfig::default(), &args.config)?;
    let q = args.q.unwrap_or(config.algorithm.q);
    let cache = args
        .cache
        .or(config.graph_cache.clone())
        .unwrap_or_else(|| PathBuf::from("graphs"));
    let instance = load_instance(&config)?;
    if q == 0 || q > instance.n() {
        return Err(fail(
            1,
            format!(
                "algorithm.q: q = {q} must satisfy 1 <= q <= n = {}",
                instance.n()
            ),
        ));
    }
    let graph = with_workers(|| cached_graph(&instance, q, Some(&cache)))?;
    let report = verify_uniformity(&graph);
    println!(
        "problem {} (n = {}, d = {})",
        instance.fingerprint(),
        instance.n(),
        instance.dim()
    );
    println!("cache {}", cache.display());
    println!(
        "q = {q}, edges = {}, max out-degree = {}",
        graph.edge_count(),
        graph.max_out_degree()
    );
    let mut hist = std::collections::BTreeMap::new();
    for &d in &report.in_degrees {
        *hist.entry(d).or_insert(0usize) += 1;
    }
    for (deg, count) in hist {
        println!("in-degree {deg}: {count} nodes");
    }
    if report.passed() {
        println!("uniform: every node has in-degree {q}");
        Ok(())
    } else {
        Err(fail(
            2,
            format!("{} nodes have in-degree != {q}", report.failures.len()),
        ))
    }
}

fn cmd_replicate(args: ReplicateArgs) -> Result<()> {
    let mut base = match args.dataset {
        ReplicateData::Synthetic => replicate_synthetic(args.subsample),
        ReplicateData::Libsvm => {
            let path = args
                .path
                .clone()
                .ok_or_else(|| fail(1, "--dataset libsvm needs --path"))?;
            let mut c = replicate_synthetic(args.subsample);
            c.dataset = DatasetSpec::Libsvm {
                path,
                label_map: args.label_map.clone(),
                dim: None,
            };
            c.subsample = Some(args.subsample);
            c.loss = LossKind::Logistic;
            c
        }
    };
    base = apply_config(base, &args.config)?;
    let dir = out_dir(args.out, "replicate")?;
    write_file(&dir.join("config.txt"), &base.to_text())?;
    let cells = replicate_grid(&base, &args.mu, args.q, &args.eps);
    let listing: Vec<String> = cells
        .iter()
        .map(|c| format!("[{}]\n{}", c.label(), c.to_text()))
        .collect();
    write_file(&dir.join("cells.txt"), &listing.join("\n"))?;
    let results = run_grid(&cells)?;
    for &mu in &args.mu {
        let mut panel = MetricsTrace::default();
        println!("mu = {mu}");
        for (c, r) in cells.iter().zip(&results) {
            if c.mu == mu {
                summary(r);
                panel.merge(r.trace.clone());
            }
        }
        let stem = format!("mu{mu}");
        let svgs = [XAxis::DatapointEvals, XAxis::GradientEvals]
            .map(|x| (dir.join(format!("chart-{stem}-{}.svg", x.name())), x));
        emit(
            &panel,
            &dir.join(format!("trace-{stem}.csv")),
            &svgs,
            &format!("mu = {mu}"),
        )?;
    }
    println!("wrote {}", dir.display());
    diverged_error(&results)
}

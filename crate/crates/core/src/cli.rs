//! `geode` command-line interface.
//!
//! Exit codes: 0 ok, 1 I/O, 2 schema, 3 dimension, 4 no path, 64 usage.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::run_bench;
use crate::decoder::{load_decoder, Decoder};
use crate::error::{Error, Result};
use crate::graph::{build_graph, read_latents_csv, LatentGraph};
use crate::metric::{mf_grid, Bounds, JacobianMode, MetricConfig};
use crate::search::{
    astar, euclidean_baseline, interpolate_path, piecewise_euclidean_baseline,
    write_interpolation_csv, Heuristic, SearchOutcome,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_PATH: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "geode",
    version,
    about = "Graph-based geodesics in decoder latent spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a latent graph with Riemannian edge weights.
    Build(BuildArgs),
    /// Find the geodesic between two nodes or latent points.
    Query(QueryArgs),
    /// Magnification-factor grid of a 2-D latent space.
    Mf(MfArgs),
    /// Straight-line (and, with a graph, piecewise-Euclidean) baseline lengths.
    Baseline(BaselineArgs),
    /// Geodesic vs baseline statistics over random node pairs.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum JacobianArg {
    Fd,
    Stoch,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeuristicArg {
    Zero,
    ObsChord,
    LatentLine,
}

impl From<HeuristicArg> for Heuristic {
    fn from(h: HeuristicArg) -> Self {
        match h {
            HeuristicArg::Zero => Heuristic::Zero,
            HeuristicArg::ObsChord => Heuristic::ObsChord,
            HeuristicArg::LatentLine => Heuristic::LatentLine,
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long, value_enum, default_value = "fd")]
    pub jacobian: JacobianArg,
    #[arg(long, default_value_t = 1e-5)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl MetricArgs {
    fn config(&self, curve_samples: usize) -> MetricConfig {
        MetricConfig {
            jacobian_mode: match self.jacobian {
                JacobianArg::Fd => JacobianMode::FiniteDifference,
                JacobianArg::Stoch => JacobianMode::Stochastic,
                JacobianArg::Exact => JacobianMode::Exact,
            },
            fd_step: self.fd_step,
            stoch_sigma: self.sigma,
            stoch_samples: self.mc_samples,
            curve_samples,
            rng_seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub decoder: PathBuf,
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub neighbors: usize,
    #[arg(long)]
    pub edge_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Latents CSV has no header row; columns are positional.
    #[arg(long)]
    pub headerless: bool,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub decoder: PathBuf,
    #[arg(long, conflicts_with = "start")]
    pub start_id: Option<usize>,
    #[arg(long, conflicts_with = "target")]
    pub target_id: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    /// Neighbours for inserted query points (defaults to the graph's k).
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long, value_enum, default_value = "obs-chord")]
    pub heuristic: HeuristicArg,
    /// Path output (`geode-path-v1`); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Decode P points per edge into an interpolation CSV.
    #[arg(long, value_name = "P")]
    pub interpolate: Option<usize>,
    /// Interpolation CSV path (defaults to the path output with `.csv`).
    #[arg(long)]
    pub interp_out: Option<PathBuf>,
    /// Include decoded observation columns in the interpolation CSV.
    #[arg(long)]
    pub observations: bool,
    /// Save inserted query points back into the graph file.
    #[arg(long)]
    pub persist_insert: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct MfArgs {
    #[arg(long)]
    pub decoder: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: String,
    #[arg(long)]
    pub res: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub decoder: PathBuf,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    #[arg(long)]
    pub start_id: Option<usize>,
    #[arg(long)]
    pub target_id: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub edge_samples: usize,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub decoder: PathBuf,
    #[arg(long)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "obs-chord")]
    pub heuristic: HeuristicArg,
    /// Summary JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include wall-clock timing in the JSON summary.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Build(a) => cmd_build(&a, stdout),
        Command::Query(a) => cmd_query(&a, stdout, stderr),
        Command::Mf(a) => cmd_mf(&a, stdout),
        Command::Baseline(a) => cmd_baseline(&a, stdout, stderr),
        Command::Bench(a) => cmd_bench(&a, stdout),
    }
}

/// Runs `f` on a dedicated pool of `workers` threads, or the global pool.
fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn out_io(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn parse_vector(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("{what}: bad number \"{}\"", s.trim())))
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_build(a: &BuildArgs, stdout: &mut dyn Write) -> Result<i32> {
    let model = load_decoder(&a.decoder)?;
    let nodes = read_latents_csv(&a.latents, !a.headerless)
        .map_err(|e| with_file_context(e, &a.latents))?;
    let cfg = a.metric.config(a.edge_samples);
    let began = Instant::now();
    let graph = with_workers(a.workers, || {
        build_graph(model.as_ref(), nodes, a.neighbors, &cfg)
    })??;
    let seconds = began.elapsed().as_secs_f64();
    graph.save(&a.out)?;
    if a.json {
        writeln!(
            stdout,
            "{}",
            serde_json::json!({
                "nodes": graph.len(),
                "edges": graph.edge_count(),
                "build_s": seconds,
                "out": a.out.display().to_string(),
            })
        )
        .map_err(out_io)?;
    } else {
        writeln!(
            stdout,
            "nodes {}  edges {}  build {:.3} s  -> {}",
            graph.len(),
            graph.edge_count(),
            seconds,
            a.out.display()
        )
        .map_err(out_io)?;
    }
    Ok(EXIT_OK)
}

fn with_file_context(e: Error, path: &Path) -> Error {
    match e {
        Error::Schema { location, message } => Error::Schema {
            location: format!("{}: {location}", path.display()),
            message,
        },
        Error::Dimension {
            location,
            expected,
            actual,
        } => Error::Dimension {
            location: format!("{}: {location}", path.display()),
            expected,
            actual,
        },
        other => other,
    }
}

fn load_pair(graph_path: &Path, decoder_path: &Path) -> Result<(LatentGraph, Box<dyn Decoder>)> {
    let graph = LatentGraph::load(graph_path).map_err(|e| with_file_context(e, graph_path))?;
    let model = load_decoder(decoder_path)?;
    graph.check_decoder(model.as_ref())?;
    Ok((graph, model))
}

fn endpoint(
    graph: &mut LatentGraph,
    model: &dyn Decoder,
    id: Option<usize>,
    raw: Option<&str>,
    k: usize,
    what: &str,
) -> Result<usize> {
    match (id, raw) {
        (Some(id), None) => {
            graph.node(id)?;
            Ok(id)
        }
        (None, Some(text)) => {
            let z = parse_vector(text, what)?;
            let cfg = graph.metric_config().clone();
            graph.insert_node(model, &z, k, &cfg)
        }
        _ => Err(Error::Config(format!(
            "give exactly one of --{what}-id or --{what}"
        ))),
    }
}

fn cmd_query(a: &QueryArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let (original, model) = load_pair(&a.graph, &a.decoder)?;
    let mut graph = original.clone();
    let k = a.neighbors.unwrap_or(graph.k());
    let (start, target) = with_workers(a.workers, || -> Result<(usize, usize)> {
        let s = endpoint(
            &mut graph,
            model.as_ref(),
            a.start_id,
            a.start.as_deref(),
            k,
            "start",
        )?;
        let t = endpoint(
            &mut graph,
            model.as_ref(),
            a.target_id,
            a.target.as_deref(),
            k,
            "target",
        )?;
        Ok((s, t))
    })??;
    if a.persist_insert && graph.len() != original.len() {
        graph.save(&a.graph)?;
    }

    let cfg = graph.metric_config().clone();
    let outcome = astar(
        &graph,
        model.as_ref(),
        start,
        target,
        a.heuristic.into(),
        &cfg,
    )?;
    let path = match outcome {
        SearchOutcome::Found(p) => p,
        SearchOutcome::NoPath {
            explored,
            expansions,
            ..
        } => {
            writeln!(
                stderr,
                "no path from {start} to {target}: explored component has {explored} nodes ({expansions} expansions)"
            )
            .map_err(out_io)?;
            return Ok(EXIT_NO_PATH);
        }
    };

    let json = path.to_json_string();
    match &a.out {
        Some(out) => {
            write_text(out, &json)?;
            if a.json {
                writeln!(stdout, "{json}").map_err(out_io)?;
            } else {
                writeln!(
                    stdout,
                    "path {} nodes  length {:.9}  expansions {}  search {:.6} s  -> {}",
                    path.node_ids.len(),
                    path.total_length,
                    path.expansions,
                    path.elapsed,
                    out.display()
                )
                .map_err(out_io)?;
            }
        }
        None => writeln!(stdout, "{json}").map_err(out_io)?,
    }

    if let Some(points) = a.interpolate {
        let samples = interpolate_path(model.as_ref(), &path, points, &cfg)?;
        let mut buf = Vec::new();
        write_interpolation_csv(&mut buf, &samples, a.observations).map_err(out_io)?;
        let target_path = a
            .interp_out
            .clone()
            .or_else(|| a.out.as_ref().map(|o| o.with_extension("csv")));
        match target_path {
            Some(p) => std::fs::write(&p, buf).map_err(|e| Error::io(&p, e))?,
            None => stdout.write_all(&buf).map_err(out_io)?,
        }
    }
    Ok(EXIT_OK)
}

fn cmd_mf(a: &MfArgs, stdout: &mut dyn Write) -> Result<i32> {
    let model = load_decoder(&a.decoder)?;
    let b = parse_vector(&a.bounds, "bounds")?;
    if b.len() != 4 {
        return Err(Error::Config("--bounds takes xmin,xmax,ymin,ymax".into()));
    }
    let bounds = Bounds::new(b[0], b[1], b[2], b[3])?;
    let cfg = a.metric.config(1);
    let grid = with_workers(a.workers, || mf_grid(model.as_ref(), bounds, a.res, &cfg))??;
    match &a.out {
        Some(out) => grid.save_csv(out)?,
        None => grid.write_csv(stdout).map_err(out_io)?,
    }
    Ok(EXIT_OK)
}

fn cmd_baseline(a: &BaselineArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let mut report = serde_json::Map::new();
    match &a.graph {
        Some(graph_path) => {
            let (mut graph, model) = load_pair(graph_path, &a.decoder)?;
            let k = graph.k();
            let start = endpoint(
                &mut graph,
                model.as_ref(),
                a.start_id,
                a.start.as_deref(),
                k,
                "start",
            )?;
            let target = endpoint(
                &mut graph,
                model.as_ref(),
                a.target_id,
                a.target.as_deref(),
                k,
                "target",
            )?;
            let cfg = graph.metric_config().clone();
            let nodes = graph.nodes();
            let straight =
                euclidean_baseline(model.as_ref(), &nodes[start].z, &nodes[target].z, &cfg)?;
            report.insert("euclidean".into(), straight.into());
            match piecewise_euclidean_baseline(&graph, start, target)? {
                SearchOutcome::Found(p) => {
                    report.insert("piecewise_euclidean".into(), p.total_length.into());
                    report.insert("piecewise_nodes".into(), p.node_ids.into());
                }
                SearchOutcome::NoPath { explored, .. } => {
                    writeln!(
                        stderr,
                        "no path from {start} to {target}: explored component has {explored} nodes"
                    )
                    .map_err(out_io)?;
                    print_report(stdout, &report, a.json)?;
                    return Ok(EXIT_NO_PATH);
                }
            }
        }
        None => {
            let model = load_decoder(&a.decoder)?;
            let (Some(s), Some(t)) = (&a.start, &a.target) else {
                return Err(Error::Config(
                    "without --graph, give --start and --target latent vectors".into(),
                ));
            };
            let zs = parse_vector(s, "start")?;
            let zt = parse_vector(t, "target")?;
            let cfg = a.metric.config(a.edge_samples);
            cfg.validate(model.input_dim())?;
            report.insert(
                "euclidean".into(),
                euclidean_baseline(model.as_ref(), &zs, &zt, &cfg)?.into(),
            );
        }
    }
    print_report(stdout, &report, a.json)?;
    Ok(EXIT_OK)
}

fn print_report(
    stdout: &mut dyn Write,
    report: &serde_json::Map<String, serde_json::Value>,
    json: bool,
) -> Result<()> {
    if json {
        writeln!(stdout, "{}", serde_json::Value::Object(report.clone())).map_err(out_io)
    } else {
        for (k, v) in report {
            writeln!(stdout, "{k:<20} {v}").map_err(out_io)?;
        }
        Ok(())
    }
}

fn cmd_bench(a: &BenchArgs, stdout: &mut dyn Write) -> Result<i32> {
    let (graph, model) = load_pair(&a.graph, &a.decoder)?;
    let heuristic = a.heuristic.into();
    let summary = with_workers(a.workers, || {
        run_bench(&graph, model.as_ref(), a.pairs, a.seed, heuristic)
    })??;
    let json = summary.to_json_string(a.timing);
    if let Some(out) = &a.out {
        write_text(out, &json)?;
    }
    if a.json {
        writeln!(stdout, "{json}").map_err(out_io)?;
    } else {
        writeln!(stdout, "{summary}").map_err(out_io)?;
    }
    Ok(EXIT_OK)
}

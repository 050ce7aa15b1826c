//! Batch front end: inspect traces, dump projections and metrics, draw plots,
//! and launch the HTTP service.

pub mod plot;

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use vistrace_core::projection::LayerProjection;
use vistrace_core::{decode_trace, Category, LayerMetrics, MetricsConfig, TraceAnalysis};
use vistrace_server::store::read_support_sidecar;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("no such file: {}", .0.display())]
    NoSuchFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    /// 1 for domain errors, 2 for usage and IO errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::NoSuchFile(_) | CliError::Io { .. } => 2,
        }
    }

    fn domain(e: impl std::fmt::Display) -> Self {
        CliError::Domain(e.to_string())
    }

    fn stdout(source: io::Error) -> Self {
        CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "vistrace",
    version,
    about = "Inspect and visualize per-layer hidden-state traces"
)]
pub struct Cli {
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
    /// Print a summary of a trace file.
    Inspect { path: PathBuf },
    /// Dump 2D token coordinates for one or all layers.
    Project {
        path: PathBuf,
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        layer: Option<usize>,
        #[arg(long)]
        all: bool,
        /// Rigidly align each layer to the previous one.
        #[arg(long)]
        align: bool,
        /// Leave out [CLS]/[SEP] tokens.
        #[arg(long)]
        no_special: bool,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Dump the per-layer metric series.
    Metrics {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write an SVG scatter plot of one layer.
    Plot {
        path: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        align: bool,
    },
    /// Run the HTTP service. Flags override `VISTRACE_*` variables.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        extractor_url: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Shortest decimal that round-trips the value rounded to 9 significant digits.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

pub fn load(path: &Path) -> CliResult<TraceAnalysis> {
    let bytes = std::fs::read(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => CliError::NoSuchFile(path.to_path_buf()),
        _ => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    let trace = decode_trace(&bytes).map_err(CliError::domain)?;
    Ok(TraceAnalysis::new(trace, read_support_sidecar(path)))
}

pub fn inspect(analysis: &TraceAnalysis, out: &mut impl Write) -> io::Result<()> {
    let m = &analysis.trace().manifest;
    writeln!(out, "model: {}", m.model_name)?;
    writeln!(out, "layers: {}", m.num_layers)?;
    writeln!(
        out,
        "stored layers: {}{}",
        m.stored_layers,
        if m.includes_embedding_layer {
            " (with embedding)"
        } else {
            ""
        }
    )?;
    writeln!(out, "hidden size: {}", m.hidden_size)?;
    writeln!(out, "tokens: {}", m.num_tokens)?;
    if let Some(task) = &m.task {
        writeln!(out, "task: {task}")?;
    }
    if let Some(q) = &m.question_text {
        writeln!(out, "question: {q}")?;
    }
    match &m.prediction {
        Some(p) => writeln!(
            out,
            "predicted answer: {} (tokens {}..={})",
            p.answer_text, p.answer_start_token, p.answer_end_token
        )?,
        None => writeln!(out, "predicted answer: none")?,
    }
    if let Some(gold) = &m.gold_answer_text {
        writeln!(out, "gold answer: {gold}")?;
    }
    let cats = analysis.categories();
    let counts: Vec<String> = Category::ALL
        .iter()
        .map(|&c| format!("{}={}", c.as_str(), cats.count(c)))
        .collect();
    writeln!(out, "categories: {}", counts.join(" "))?;
    Ok(())
}

/// Projections for the requested layers; alignment chains from layer 0.
pub fn projections(
    analysis: &TraceAnalysis,
    layer: Option<usize>,
    align: bool,
    include_special: bool,
) -> CliResult<Vec<LayerProjection>> {
    let stored = analysis.stored_layers();
    if let Some(k) = layer {
        if k >= stored {
            return Err(CliError::Domain(format!(
                "layer index out of range: {k} not in 0..{stored}"
            )));
        }
        if !align {
            return Ok(vec![analysis
                .project_layer(k, include_special)
                .map_err(CliError::domain)?]);
        }
    }
    let mut all = analysis.project_all(include_special).map_err(CliError::domain)?;
    if align {
        TraceAnalysis::align_chain(&mut all).map_err(CliError::domain)?;
    }
    Ok(match layer {
        Some(k) => vec![all.swap_remove(k)],
        None => all,
    })
}

#[derive(Serialize)]
struct ProjectedToken<'a> {
    layer: usize,
    index: usize,
    token: &'a str,
    x: f64,
    y: f64,
    category: Category,
}

pub fn write_projections(
    analysis: &TraceAnalysis,
    projections: &[LayerProjection],
    include_special: bool,
    format: Format,
    out: &mut impl Write,
) -> CliResult<()> {
    let indices = analysis.token_indices(include_special);
    let m = &analysis.trace().manifest;
    let cats = &analysis.categories().categories;
    let rows = projections.iter().flat_map(|p| {
        indices.iter().zip(&p.points).map(move |(&i, pt)| ProjectedToken {
            layer: p.layer_index,
            index: i,
            token: &m.tokens[i].text,
            x: pt[0],
            y: pt[1],
            category: cats[i],
        })
    });
    match format {
        Format::Json => {
            let rows: Vec<_> = rows.collect();
            serde_json::to_writer_pretty(&mut *out, &rows).map_err(|e| CliError::stdout(e.into()))?;
            writeln!(out).map_err(CliError::stdout)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let csv_err = |e: csv::Error| CliError::stdout(e.into());
            w.write_record(["layer", "token", "x", "y", "category"])
                .map_err(csv_err)?;
            for r in rows {
                w.write_record([
                    r.layer.to_string(),
                    r.token.to_string(),
                    format_float(r.x),
                    format_float(r.y),
                    r.category.as_str().to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(CliError::stdout)?;
        }
    }
    Ok(())
}

pub fn write_metrics(series: &[LayerMetrics], format: Format, out: &mut impl Write) -> CliResult<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, series).map_err(|e| CliError::stdout(e.into()))?;
            writeln!(out).map_err(CliError::stdout)?;
        }
        Format::Csv => {
            let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
            let mut w = csv::Writer::from_writer(out);
            let csv_err = |e: csv::Error| CliError::stdout(e.into());
            w.write_record([
                "layer",
                "block",
                "phase",
                "question_fact_distance",
                "answer_separation",
                "cluster_distinctness",
            ])
            .map_err(csv_err)?;
            for m in series {
                w.write_record([
                    m.layer_index.to_string(),
                    m.block.to_string(),
                    m.phase.to_string(),
                    opt(m.question_fact_distance),
                    opt(m.answer_separation),
                    opt(m.cluster_distinctness),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(CliError::stdout)?;
        }
    }
    Ok(())
}

fn serve(
    port: Option<u16>,
    data_dir: Option<PathBuf>,
    extractor_url: Option<String>,
    static_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> CliResult<()> {
    let mut config = vistrace_server::Config::from_env().map_err(CliError::domain)?;
    if let Some(p) = port {
        config.port = p;
    }
    if data_dir.is_some() {
        config.data_dir = data_dir;
    }
    if let Some(url) = extractor_url {
        config.extractor_url = Some(url.trim_end_matches('/').to_string());
    }
    if static_dir.is_some() {
        config.static_dir = static_dir;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .try_init();
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::stdout)?;
    runtime
        .block_on(vistrace_server::serve(config))
        .map_err(|source| CliError::Io {
            path: PathBuf::from("<listener>"),
            source,
        })
}

pub fn run(cli: Cli, out: &mut impl Write) -> CliResult<()> {
    match cli.command {
        Command::Inspect { path } => {
            let analysis = load(&path)?;
            inspect(&analysis, out).map_err(CliError::stdout)
        }
        Command::Project {
            path,
            layer,
            all,
            align,
            no_special,
            format,
        } => {
            let analysis = load(&path)?;
            let layer = if all { None } else { layer };
            let projections = projections(&analysis, layer, align, !no_special)?;
            write_projections(&analysis, &projections, !no_special, format, out)
        }
        Command::Metrics { path, format, seed } => {
            let analysis = load(&path)?;
            let config = MetricsConfig {
                seed,
                ..MetricsConfig::default()
            };
            let series = analysis.metric_series(true, &config).map_err(CliError::domain)?;
            write_metrics(&series, format, out)
        }
        Command::Plot {
            path,
            layer,
            out: target,
            align,
        } => {
            let analysis = load(&path)?;
            let projection = projections(&analysis, Some(layer), align, true)?.remove(0);
            let svg = plot::render_svg(&analysis, &projection);
            std::fs::write(&target, svg)
                .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", target.display())))
        }
        Command::Serve {
            port,
            data_dir,
            extractor_url,
            static_dir,
            seed,
        } => serve(port, data_dir, extractor_url, static_dir, seed),
    }
}

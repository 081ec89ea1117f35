//! `crosscam` command-line driver.
//!
//! Every command writes its normal output to the provided writer and
//! diagnostics to the error writer, and returns a process exit code:
//! 0 on success, 2 for configuration errors, 3 for input errors and
//! 4 for model backend errors.

pub mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use crosscam_core::eval::{
    delta_range, delta_sweep, divergence_report, divergence_table, ingestion_table, parse_deltas,
    segment_pairs, sweep_table, token_rows, token_table,
};
use crosscam_core::gateway::{
    Embedder, HttpBackend, LanguageModel, MockBackend, VisionModel, ENDPOINT_ENV, TOKEN_ENV,
};
use crosscam_core::rag::{answer, build_index, chunk_document, VectorIndex};
use crosscam_core::synth::{generate, street_document, FixtureSpec};
use crosscam_core::{
    compare_modes, format_timestamp, ingest, parse_manifest, serialize_manifest,
    CameraFeedManifest, CameraId, IngestError, IngestionConfig, IngestionReport,
    IntersectionDocument, RagError,
};
use thiserror::Error;

pub use config::{BackendKind, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Backend(_) => 4,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Config(_) | IngestError::UnsortedDeltas | IngestError::Validation(_) => {
                CliError::Config(e.to_string())
            }
            IngestError::Backend { .. } => CliError::Backend(e.to_string()),
            IngestError::MissingBaseCamera(_)
            | IngestError::MissingCamera(_)
            | IngestError::Segment(_)
            | IngestError::MissingBaseSegment(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<RagError> for CliError {
    fn from(e: RagError) -> Self {
        match e {
            RagError::Embed { .. } | RagError::Backend(_) => CliError::Backend(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "crosscam",
    version,
    about = "Multi-camera video narratives as a queryable knowledge base"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Describe every clip of the given camera manifests and write a report.
    Ingest {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Report JSON path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the rendered text document here.
        #[arg(long)]
        document: Option<PathBuf>,
    },
    /// Chunk and embed a document (report JSON or document JSON) into an index file.
    Index {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer a question from an index file.
    Query {
        #[arg(long)]
        index: PathBuf,
        question: String,
    },
    /// Compare baseline and incremental ingestion latency. Uses a seeded
    /// synthetic fixture when no manifests are given.
    Bench { manifests: Vec<PathBuf> },
    /// Incremental ingestion latency across similarity thresholds.
    Sweep {
        manifests: Vec<PathBuf>,
        /// Comma-separated ascending thresholds; defaults to 0.1..0.9.
        #[arg(long)]
        deltas: Option<String>,
    },
    /// Token statistics and follow-up divergence for saved reports.
    Eval {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Write seeded synthetic inputs.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// One manifest per camera, named `<camera>.jsonl`.
    Feeds {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        clips: usize,
        #[arg(long, value_delimiter = ',', default_value = "right,left")]
        cameras: Vec<String>,
    },
    /// A street document as JSON, ready for `index`.
    Document {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    return 0;
                }
                _ => 2,
            };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "crosscam: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match &cli.overrides.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&cli.overrides)?;
    match cli.command {
        Command::Ingest {
            manifests,
            out: path,
            document,
        } => cmd_ingest(
            &manifests,
            &cfg,
            path.as_deref(),
            document.as_deref(),
            out,
            err,
        ),
        Command::Index { input, out: path } => cmd_index(&input, &cfg, &path, out),
        Command::Query { index, question } => cmd_query(&index, &question, &cfg, out),
        Command::Bench { manifests } => cmd_bench(&manifests, &cfg, out),
        Command::Sweep { manifests, deltas } => cmd_sweep(&manifests, &cfg, deltas.as_deref(), out),
        Command::Eval { reports } => cmd_eval(&reports, out),
        Command::Synth(SynthCommand::Feeds {
            out_dir,
            clips,
            cameras,
        }) => cmd_synth_feeds(&out_dir, clips, cameras, &cfg, out),
        Command::Synth(SynthCommand::Document { out: path }) => {
            cmd_synth_document(&path, &cfg, out)
        }
    }
}

enum Backend {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl Backend {
    fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        match cfg.backend {
            BackendKind::Mock => Ok(Backend::Mock(MockBackend::new(cfg.latency))),
            BackendKind::Http => {
                let endpoint = cfg
                    .endpoint
                    .clone()
                    .or_else(|| std::env::var(ENDPOINT_ENV).ok())
                    .ok_or_else(|| {
                        CliError::Config(format!("http backend needs --endpoint or {ENDPOINT_ENV}"))
                    })?;
                let mut http = HttpBackend::new(
                    &endpoint,
                    std::env::var(TOKEN_ENV).ok(),
                    cfg.model.clone(),
                    Duration::from_secs(cfg.timeout_secs),
                )
                .map_err(|e| CliError::Backend(e.to_string()))?;
                if let Some(m) = &cfg.embedding_model {
                    http = http.with_embedding_model(
                        m.clone(),
                        crosscam_core::gateway::MOCK_EMBEDDING_DIM,
                    );
                }
                Ok(Backend::Http(http))
            }
        }
    }

    fn vlm(&self) -> &dyn VisionModel {
        match self {
            Backend::Mock(m) => m,
            Backend::Http(h) => h,
        }
    }

    fn embedder(&self) -> &dyn Embedder {
        match self {
            Backend::Mock(m) => m,
            Backend::Http(h) => h,
        }
    }

    fn llm(&self) -> &dyn LanguageModel {
        match self {
            Backend::Mock(m) => m,
            Backend::Http(h) => h,
        }
    }
}

fn load_manifests(paths: &[PathBuf]) -> Result<Vec<CameraFeedManifest>, CliError> {
    paths
        .iter()
        .map(|p| {
            let f = File::open(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            parse_manifest(BufReader::new(f))
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Feeds from the given manifests, or the seeded standard fixture.
fn feeds_or_fixture(
    paths: &[PathBuf],
    cfg: &RunConfig,
) -> Result<Vec<CameraFeedManifest>, CliError> {
    if paths.is_empty() {
        Ok(generate(&FixtureSpec::standard(cfg.seed)))
    } else {
        load_manifests(paths)
    }
}

/// Camera order from the config or the manifest order, with the base
/// camera moved to the front.
fn ingestion_config(
    feeds: &[CameraFeedManifest],
    cfg: &RunConfig,
) -> Result<IngestionConfig, CliError> {
    let mut order: Vec<CameraId> = match &cfg.camera_order {
        Some(names) => names
            .iter()
            .map(|n| CameraId::new(n.clone()).map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<_, _>>()?,
        None => feeds.iter().map(|f| f.camera.clone()).collect(),
    };
    if let Some(base) = &cfg.base_camera {
        let pos = order
            .iter()
            .position(|c| c.as_str() == base)
            .ok_or_else(|| CliError::Config(format!("base camera {base:?} has no manifest")))?;
        let base = order.remove(pos);
        order.insert(0, base);
    }
    let mut ic = IngestionConfig::new(cfg.mode, order)?;
    ic.schedule = cfg.schedule;
    ic.similarity = cfg.similarity;
    ic.accumulation = cfg.accumulation;
    ic.segmenter = cfg.segmenter;
    ic.workers = cfg.workers;
    ic.validate()?;
    Ok(ic)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn io_out(e: std::io::Error) -> CliError {
    CliError::Input(format!("stdout: {e}"))
}

fn cmd_ingest(
    manifests: &[PathBuf],
    cfg: &RunConfig,
    report_path: Option<&Path>,
    document_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let feeds = load_manifests(manifests)?;
    let ic = ingestion_config(&feeds, cfg)?;
    let backend = Backend::from_config(cfg)?;
    let report = ingest(&feeds, &ic, backend.vlm())?;

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match report_path {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{json}")
                .and_then(|_| w.flush())
                .map_err(write_err(path))?;
            writeln!(
                out,
                "{}: {} entries, {} VLM calls, {} skipped, {} ms",
                path.display(),
                report.document.entries.len(),
                report.vlm_calls,
                report.skipped_clips,
                report.total_latency_ms
            )
            .map_err(io_out)?;
        }
        None => writeln!(out, "{json}").map_err(io_out)?,
    }
    if let Some(path) = document_path {
        let mut w = create(path)?;
        writeln!(w, "{}", report.document.render())
            .and_then(|_| w.flush())
            .map_err(write_err(path))?;
    }
    if !report.failed_clips.is_empty() {
        for f in &report.failed_clips {
            let _ = writeln!(err, "camera {} clip {}: {}", f.camera, f.clip_id, f.error);
        }
        return Err(CliError::Backend(format!(
            "{} base clip(s) failed; report written with empty entries",
            report.failed_clips.len()
        )));
    }
    Ok(())
}

/// Reads either an ingestion report or a bare document.
fn read_document(path: &Path) -> Result<IntersectionDocument, CliError> {
    let text = std::fs::read_to_string(path).map_err(write_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let doc = if value.get("document").is_some() {
        serde_json::from_value::<IngestionReport>(value).map(|r| r.document)
    } else {
        serde_json::from_value::<IntersectionDocument>(value)
    };
    doc.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_index(
    input: &Path,
    cfg: &RunConfig,
    path: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let doc = read_document(input)?;
    let chunks = chunk_document(&doc, cfg.chunk_chars)?;
    let backend = Backend::from_config(cfg)?;
    let index = build_index(&chunks, backend.embedder())?;
    let mut w = create(path)?;
    index.persist(&mut w)?;
    w.flush().map_err(write_err(path))?;
    writeln!(
        out,
        "{}: {} chunks, dimension {}",
        path.display(),
        index.len(),
        index.dimension()
    )
    .map_err(io_out)
}

fn cmd_query(
    index_path: &Path,
    question: &str,
    cfg: &RunConfig,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let f = File::open(index_path).map_err(write_err(index_path))?;
    let index = VectorIndex::load(BufReader::new(f))
        .map_err(|e| CliError::Input(format!("{}: {e}", index_path.display())))?;
    if index.is_empty() {
        return Err(CliError::Input(format!(
            "{}: index is empty",
            index_path.display()
        )));
    }
    let backend = Backend::from_config(cfg)?;
    let ans = answer(question, &index, cfg.k, backend.embedder(), backend.llm())?;
    writeln!(out, "{}", ans.answer_text).map_err(io_out)?;
    writeln!(out, "sources:").map_err(io_out)?;
    for r in &ans.used_chunks {
        writeln!(
            out,
            "  {} - {} (score {:.3})",
            format_timestamp(r.chunk.start_ms),
            format_timestamp(r.chunk.end_ms),
            r.score
        )
        .map_err(io_out)?;
    }
    Ok(())
}

fn cmd_bench(manifests: &[PathBuf], cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let feeds = feeds_or_fixture(manifests, cfg)?;
    let ic = ingestion_config(&feeds, cfg)?;
    let backend = Backend::from_config(cfg)?;
    let summary = compare_modes(&feeds, &ic, &ic, backend.vlm())?;
    write!(out, "{}", ingestion_table(&summary)).map_err(io_out)
}

fn cmd_sweep(
    manifests: &[PathBuf],
    cfg: &RunConfig,
    deltas: Option<&str>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let deltas = match deltas {
        Some(list) => parse_deltas(list).map_err(CliError::Config)?,
        None => delta_range(0.1, 0.9, 0.1),
    };
    if deltas.is_empty() {
        return Err(CliError::Config("no thresholds given".into()));
    }
    let feeds = feeds_or_fixture(manifests, cfg)?;
    let ic = ingestion_config(&feeds, cfg)?;
    let backend = Backend::from_config(cfg)?;
    let points = delta_sweep(&feeds, &ic, &deltas, backend.vlm())?;
    write!(out, "{}", sweep_table(&points)).map_err(io_out)
}

fn cmd_eval(reports: &[PathBuf], out: &mut dyn Write) -> Result<(), CliError> {
    let mut divergence = Vec::new();
    for path in reports {
        let text = std::fs::read_to_string(path).map_err(write_err(path))?;
        let report: IngestionReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        writeln!(out, "# {}", path.display()).map_err(io_out)?;
        write!(out, "{}", token_table(&token_rows(&report))).map_err(io_out)?;
        if let Ok(score) = divergence_report(&segment_pairs(&report, None)) {
            divergence.push((report.config.mode.to_string(), score));
        }
    }
    if !divergence.is_empty() {
        write!(out, "{}", divergence_table(&divergence)).map_err(io_out)?;
    }
    Ok(())
}

fn cmd_synth_feeds(
    dir: &Path,
    clips: usize,
    cameras: Vec<String>,
    cfg: &RunConfig,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if clips == 0 || cameras.is_empty() || cameras.iter().any(|c| c.trim().is_empty()) {
        return Err(CliError::Config(
            "need at least one clip and non-empty camera names".into(),
        ));
    }
    let spec = FixtureSpec {
        cameras,
        clips,
        threshold: cfg.similarity.delta(),
        ..FixtureSpec::standard(cfg.seed)
    };
    std::fs::create_dir_all(dir).map_err(write_err(dir))?;
    for feed in generate(&spec) {
        let path = dir.join(format!("{}.jsonl", feed.camera));
        std::fs::write(&path, serialize_manifest(&feed)).map_err(write_err(&path))?;
        writeln!(out, "{}", path.display()).map_err(io_out)?;
    }
    Ok(())
}

fn cmd_synth_document(path: &Path, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let doc = street_document(cfg.seed);
    let json = serde_json::to_string_pretty(&doc).expect("document serializes");
    std::fs::write(path, json + "\n").map_err(write_err(path))?;
    writeln!(out, "{}: {} entries", path.display(), doc.entries.len()).map_err(io_out)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sema_core::analysis::NormScope;
use sema_core::dataset::coco::{self, CoordinateUnits, ImportOptions};
use sema_core::dataset::write_manifest;
use sema_core::encoding::EncodingCondition;
use sema_core::pipeline::{Pipeline, PipelineError, RunConfig, StageReport};
use sema_core::spatial::GridSpec;
use sema_core::vlm::FixationListStyle;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "sema", version, about = "Semantic vs. spatial scanpath similarity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode every fixation and collect VLM descriptions.
    Describe(RunArgs),
    /// Aggregate fixation descriptions into one summary per scanpath.
    Summarize(RunArgs),
    /// Compute semantic and spatial scores for all within-image pairs.
    Score(RunArgs),
    /// Correlation matrices, divergence tables, diagnostics and heatmaps.
    Analyze(RunArgs),
    /// describe, summarize, score and analyze in order.
    RunAll(RunArgs),
    /// Convert a COCO-FreeView style fixation export into a manifest.
    ImportCoco(ImportArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated: patch96, patch192, patch256, marker.
    #[arg(long, value_delimiter = ',')]
    conditions: Option<Vec<EncodingCondition>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, env = "VLM_ENDPOINT")]
    vlm_endpoint: Option<String>,
    #[arg(long, env = "VLM_API_KEY", hide_env_values = true)]
    vlm_api_key: Option<String>,
    #[arg(long)]
    vlm_model: Option<String>,
    #[arg(long)]
    max_concurrent_requests: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Seconds.
    #[arg(long)]
    request_timeout: Option<f64>,
    /// Base delay in seconds for retry backoff.
    #[arg(long)]
    retry_base: Option<f64>,
    #[arg(long)]
    fixation_list_style: Option<FixationListStyle>,
    #[arg(long, env = "EMBED_ENDPOINT")]
    embed_endpoint: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    /// Weight embedding matches by corpus IDF.
    #[arg(long)]
    embed_idf: bool,
    /// Rescale embedding scores against this baseline.
    #[arg(long)]
    embed_baseline: Option<f64>,
    /// COLSxROWS, e.g. 14x8.
    #[arg(long)]
    grid: Option<GridSpec>,
    #[arg(long)]
    tde_m: Option<usize>,
    #[arg(long)]
    tde_delay: Option<usize>,
    #[arg(long)]
    scanmatch_gap: Option<f64>,
    #[arg(long)]
    scanmatch_maxsub: Option<f64>,
    /// condition | image
    #[arg(long)]
    norm_scope: Option<NormScope>,
    #[arg(long)]
    top_k: Option<usize>,
    /// File with one token per line.
    #[arg(long)]
    blur_lexicon: Option<PathBuf>,
    /// Write every encoded fixation PNG to this directory.
    #[arg(long)]
    dump_encodings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Serve model responses from the cache only.
    #[arg(long)]
    offline: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag {
                    c.$($field)+ = v;
                }
            };
        }
        set!(self.manifest => manifest);
        set!(self.conditions => conditions);
        set!(self.out => out_dir);
        set!(self.cache_dir => cache_dir);
        set!(self.vlm_model => vlm.model_id);
        set!(self.max_concurrent_requests => vlm.max_concurrent_requests);
        set!(self.max_retries => vlm.max_retries);
        set!(self.request_timeout => vlm.request_timeout_s);
        set!(self.retry_base => vlm.retry_base_s);
        set!(self.fixation_list_style => vlm.fixation_list_style);
        set!(self.embed_model => embedding.model);
        set!(self.grid => metrics.grid);
        set!(self.tde_m => metrics.tde_m);
        set!(self.tde_delay => metrics.tde_delay);
        set!(self.scanmatch_gap => metrics.scanmatch.gap);
        set!(self.scanmatch_maxsub => metrics.scanmatch.max_sub);
        set!(self.norm_scope => norm_scope);
        set!(self.top_k => top_k);
        set!(self.seed => seed);
        if self.vlm_endpoint.is_some() {
            c.vlm.endpoint_url = self.vlm_endpoint;
        }
        if self.vlm_api_key.is_some() {
            c.vlm.api_key = self.vlm_api_key;
        }
        if self.embed_endpoint.is_some() {
            c.embedding.endpoint_url = self.embed_endpoint;
        }
        if self.embed_baseline.is_some() {
            c.embedding.baseline = self.embed_baseline;
        }
        if self.blur_lexicon.is_some() {
            c.blur_lexicon = self.blur_lexicon;
        }
        if self.dump_encodings.is_some() {
            c.dump_encodings = self.dump_encodings;
        }
        c.embedding.idf |= self.embed_idf;
        c.offline |= self.offline;
        if c.manifest.as_os_str().is_empty() {
            return Err(PipelineError::Config("--manifest is required".into()));
        }
        Ok(c)
    }
}

#[derive(Args)]
struct ImportArgs {
    /// Fixation export (JSON list of trials).
    #[arg(long)]
    input: PathBuf,
    /// Manifest to write.
    #[arg(long)]
    output: PathBuf,
    /// Directory holding the stimulus images.
    #[arg(long)]
    image_dir: PathBuf,
    /// Whether X/Y are pixels or already normalized.
    #[arg(long)]
    units: CoordinateUnits,
    #[arg(long, default_value_t = 1680)]
    width: u32,
    #[arg(long, default_value_t = 1050)]
    height: u32,
    #[arg(long)]
    max_images: Option<usize>,
    #[arg(long)]
    scanpaths_per_image: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_report(r: &StageReport) {
    println!(
        "{}: {} item(s), {} network call(s), {} failure(s), {} warning(s)",
        r.stages.join("+"),
        r.processed,
        r.network_calls,
        r.failures.len(),
        r.warnings.len()
    );
    for f in &r.failures {
        eprintln!("failed: {f}");
    }
}

fn run(cli: Cli) -> Result<i32, anyhow::Error> {
    let (args, stage): (RunArgs, fn(&Pipeline) -> Result<StageReport, PipelineError>) = match cli.command {
        Command::ImportCoco(a) => {
            let opts = ImportOptions {
                coordinates: a.units,
                width_px: a.width,
                height_px: a.height,
                image_dir: a.image_dir,
                max_images: a.max_images,
                scanpaths_per_image: a.scanpaths_per_image,
                seed: a.seed,
            };
            let (records, stats) = coco::import_file(&a.input, &opts)?;
            write_manifest(&records, &a.output)?;
            println!(
                "import-coco: {} trial(s), {} image(s), {} scanpath(s) dropped, {} fixation(s) dropped",
                stats.trials, stats.images, stats.dropped_scanpaths, stats.dropped_fixations
            );
            return Ok(0);
        }
        Command::Describe(a) => (a, Pipeline::describe),
        Command::Summarize(a) => (a, Pipeline::summarize),
        Command::Score(a) => (a, Pipeline::score),
        Command::Analyze(a) => (a, Pipeline::analyze),
        Command::RunAll(a) => (a, Pipeline::run_all),
    };
    let pipeline = Pipeline::from_config(args.into_config()?)?;
    let report = stage(&pipeline)?;
    print_report(&report);
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

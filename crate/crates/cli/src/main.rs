//! `vidrep`: batch driver for the video representation pipeline.
//!
//! Exit status: 0 on success, 2 for usage or configuration errors, 3 for
//! data or format errors, 4 for numeric failures. Failures also print one
//! JSON object on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidrep::encode::{EncoderKind, NormOrder};
use vidrep::error::ErrorCategory;
use vidrep::eval::PairGrouping;

use config::Kernel;

/// A bad flag, config key or value.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "vidrep", version, about = "Video-level representations, PQ scoring, SVM event detectors and mAP")]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true, env = "VIDREP_CONFIG")]
    pub config: Option<PathBuf>,

    /// Seed for every randomized step.
    #[arg(long, global = true, env = "VIDREP_SEED")]
    pub seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "VIDREP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit PCA on ℓ2-normalized frame descriptors.
    FitPca(FitPcaArgs),
    /// Fit a k-means codebook for VLAD.
    FitKmeans(FitClusterArgs),
    /// Fit a diagonal GMM for Fisher vectors.
    FitGmm(FitClusterArgs),
    /// Turn a pool5 tensor file into latent concept descriptors.
    Lcd(LcdArgs),
    /// Encode frame descriptors into one video-level vector.
    Encode(EncodeArgs),
    /// Fit product-quantization codebooks on video vectors.
    FitPq(FitPqArgs),
    /// Compress video vectors into PQ codes.
    PqEncode(PqEncodeArgs),
    /// Train a linear or kernel SVM for one event.
    Train(TrainArgs),
    /// Select C (and σ) by stratified cross-validation.
    Cv(CvArgs),
    /// Score uncompressed video vectors.
    Predict(PredictArgs),
    /// Score PQ codes with a linear model through look-up tables.
    PredictPq(PredictPqArgs),
    /// Average precision of score files against label files.
    Eval(EvalArgs),
    /// Average per-video scores of several models.
    Fuse(FuseArgs),
    /// Cosine-similarity histograms of pos–pos and pos–neg pairs.
    Simstats(SimstatsArgs),
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Run encoder ablations end to end on a synthetic corpus.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct FitPcaArgs {
    /// Output dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub whiten: bool,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Sample at most this many training frames.
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Descriptor files or directories of them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitClusterArgs {
    #[arg(long, short)]
    pub k: Option<usize>,
    /// PCA model applied after ℓ2 normalization.
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LcdArgs {
    /// Pyramid levels, e.g. 6,3,2,1.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Emit all a² raw descriptors instead of pyramid-pooled ones.
    #[arg(long)]
    pub no_spp: bool,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long, value_parser = parse_encoder)]
    pub method: Option<EncoderKind>,
    #[arg(long)]
    pub knn: Option<usize>,
    /// K-means codebook (VLAD) or GMM (FV).
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long)]
    pub no_ssr: bool,
    #[arg(long)]
    pub no_intra: bool,
    #[arg(long)]
    pub no_l2: bool,
    #[arg(long, value_parser = parse_norm_order)]
    pub norm_order: Option<NormOrder>,
    /// Frame file, or a directory of them.
    pub input: PathBuf,
    /// Output file, or a directory when the input is one.
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitPqArgs {
    /// Sub-vector length.
    #[arg(long, short)]
    pub b: Option<usize>,
    /// Bits per sub-vector code.
    #[arg(long, short)]
    pub m: Option<u32>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Video vector files or directories of them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PqEncodeArgs {
    #[arg(long)]
    pub pq: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Video vector files or directories; ids are file stems.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory holding `<video_id>.vdsc` vectors.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum)]
    pub kernel: Option<Kernel>,
    #[arg(long, short)]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum)]
    pub kernel: Option<Kernel>,
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sigma_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Write the selection as JSON here as well as to stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Train on all rows with the selected parameters and save the model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Score only the ids listed in this label file.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictPqArgs {
    /// Linear SVM model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pq: PathBuf,
    #[arg(long)]
    pub codes: PathBuf,
    /// Score only the ids listed in this label file.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Score files, paired in order with `--labels`.
    #[arg(long, required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub labels: Vec<PathBuf>,
    #[arg(long)]
    pub interpolated: bool,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Average raw scores without z-normalization.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimstatsArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// One label file per event.
    #[arg(long, required = true)]
    pub labels: Vec<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, value_parser = parse_grouping)]
    pub grouping: Option<PairGrouping>,
    /// Histogram CSV.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub events: Option<usize>,
    /// Training positives per event.
    #[arg(long)]
    pub pos: Option<usize>,
    /// Shared training negatives.
    #[arg(long)]
    pub neg: Option<usize>,
    #[arg(long)]
    pub test_pos: Option<usize>,
    #[arg(long)]
    pub test_neg: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_delimiter = ',')]
    pub pca_dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub knns: Option<Vec<usize>>,
    /// SSR settings to try, e.g. `on,off`.
    #[arg(long, value_delimiter = ',', value_parser = parse_switch)]
    pub ssr: Option<Vec<bool>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_switch)]
    pub intra: Option<Vec<bool>>,
    /// Frame dimension of the generated corpus.
    #[arg(long)]
    pub synth_dim: Option<usize>,
    /// JSON report of every run.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn parse_encoder(s: &str) -> Result<EncoderKind, String> {
    match s {
        "avg" | "average" => Ok(EncoderKind::Avg),
        "fv" | "fisher" => Ok(EncoderKind::Fv),
        "vlad" => Ok(EncoderKind::Vlad),
        _ => Err(format!("unknown method {s:?}; expected avg, fv or vlad")),
    }
}

fn parse_norm_order(s: &str) -> Result<NormOrder, String> {
    match s {
        "intra-then-ssr" => Ok(NormOrder::IntraThenSsr),
        "ssr-then-intra" => Ok(NormOrder::SsrThenIntra),
        _ => Err(format!("unknown order {s:?}; expected intra-then-ssr or ssr-then-intra")),
    }
}

fn parse_grouping(s: &str) -> Result<PairGrouping, String> {
    match s {
        "within-event" => Ok(PairGrouping::WithinEvent),
        "pooled" => Ok(PairGrouping::Pooled),
        _ => Err(format!("unknown grouping {s:?}; expected within-event or pooled")),
    }
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

/// Exit status and error kind for a failed run.
fn classify_error(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<vidrep::Error>() {
            let code = match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            };
            return (code, e.kind_name());
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return (2, "usage");
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (3, "io");
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return (3, "format");
        }
    }
    (3, "other")
}

fn report(code: u8, kind: &str, message: &str) {
    let line = serde_json::json!({"error": {"code": code, "kind": kind, "message": message}});
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            report(2, "usage", e.kind().as_str().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VIDREP_LOG", "info")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify_error(&err);
            report(code, kind, &format!("{err:#}"));
            ExitCode::from(code)
        }
    }
}

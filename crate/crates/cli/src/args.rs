//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smad_core::classifier::{ClassWeight, FeaturesPerSplit};
use smad_core::dataset::MissingFilePolicy;
use smad_core::features::{ExtractionOrder, FeatureSettings, VectorTag};
use smad_core::ForestParams;

use crate::exit::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "smad",
    version,
    about = "Single-image morphing attack detection: features, forests, metrics, LOO runs",
    propagate_version = true
)]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalise every manifest image to the canonical 180x240 grayscale face.
    Preprocess(PreprocessArgs),
    /// Write per-method feature vectors as CSV.
    Extract(ExtractArgs),
    /// Train a random forest on one (possibly fused) feature.
    Train(TrainArgs),
    /// Score manifest samples with a trained model.
    Score(ScoreArgs),
    /// Compute EER, BPCER10/20 and the DET curve from a scores CSV.
    Eval(EvalArgs),
    /// Run the leave-one-morph-tool-out experiment from a JSON config.
    Loo(LooArgs),
    /// Render feature maps of one image plus a contact sheet.
    Visualize(VisualizeArgs),
    /// Serve the /v1 HTTP analysis API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MissingArg {
    Fail,
    Warn,
    Skip,
}

impl From<MissingArg> for MissingFilePolicy {
    fn from(m: MissingArg) -> Self {
        match m {
            MissingArg::Fail => MissingFilePolicy::Fail,
            MissingArg::Warn => MissingFilePolicy::Warn,
            MissingArg::Skip => MissingFilePolicy::Skip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Test,
}

/// Extractor parameters. Flags override values from `--settings`.
#[derive(Debug, Clone, Default, Args)]
pub struct FeatureArgs {
    /// JSON file with extractor settings.
    #[arg(long, value_name = "JSON")]
    pub settings: Option<PathBuf>,
    /// JPEG quality used by ELA.
    #[arg(long, value_name = "Q")]
    pub ela_quality: Option<u8>,
    /// BSIF bank id (e.g. 3x3_5bit) or path to a bank JSON file.
    #[arg(long, value_name = "BANK")]
    pub bsif_bank: Option<String>,
    /// Rank of the SVD reconstruction.
    #[arg(long, value_name = "K")]
    pub svd_k: Option<usize>,
    /// DCT block size; whole-image DCT when omitted.
    #[arg(long, value_name = "N")]
    pub dct_block: Option<usize>,
    /// JSON file with SRM kernels.
    #[arg(long, value_name = "JSON")]
    pub srm_kernels: Option<PathBuf>,
    /// Extract on the aligned raster before the final downscale.
    #[arg(long)]
    pub extract_before_resize: bool,
}

impl FeatureArgs {
    pub fn settings(&self) -> CliResult<FeatureSettings> {
        let mut s = match &self.settings {
            Some(path) => {
                let bytes = std::fs::read(path)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
            }
            None => FeatureSettings::default(),
        };
        if let Some(q) = self.ela_quality {
            s.ela_quality = q;
        }
        if let Some(b) = &self.bsif_bank {
            s.bsif_bank = b.clone();
        }
        if let Some(k) = self.svd_k {
            s.svd_k = k;
        }
        if let Some(n) = self.dct_block {
            s.dct_block = Some(n);
        }
        if let Some(p) = &self.srm_kernels {
            s.srm_kernels = Some(p.to_string_lossy().into_owned());
        }
        if self.extract_before_resize {
            s.order = ExtractionOrder::ExtractThenResize;
        }
        Ok(s)
    }
}

/// Random forest hyperparameters.
#[derive(Debug, Clone, Default, Args)]
pub struct ForestArgs {
    /// Number of trees [default: 300].
    #[arg(long, value_name = "N")]
    pub trees: Option<usize>,
    /// Maximum tree depth; unlimited when omitted.
    #[arg(long, value_name = "D")]
    pub max_depth: Option<usize>,
    /// Minimum samples per leaf [default: 1].
    #[arg(long, value_name = "N")]
    pub min_leaf: Option<usize>,
    /// Features tried per split: sqrt, log2, all or an integer [default: sqrt].
    #[arg(long, value_name = "RULE", value_parser = parse_features_per_split)]
    pub features_per_split: Option<FeaturesPerSplit>,
    /// Grow each tree on the full training set.
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Forest seed [default: 0].
    #[arg(long, value_name = "SEED")]
    pub forest_seed: Option<u64>,
    /// Weight classes inversely to their frequency.
    #[arg(long)]
    pub balanced: bool,
}

fn parse_features_per_split(s: &str) -> Result<FeaturesPerSplit, String> {
    match s.to_ascii_lowercase().as_str() {
        "sqrt" => Ok(FeaturesPerSplit::Sqrt),
        "log2" => Ok(FeaturesPerSplit::Log2),
        "all" => Ok(FeaturesPerSplit::All),
        other => other
            .parse::<usize>()
            .map(FeaturesPerSplit::Fixed)
            .map_err(|_| format!("expected sqrt, log2, all or an integer, got `{s}`")),
    }
}

impl ForestArgs {
    pub fn params(&self) -> CliResult<ForestParams> {
        let mut p = ForestParams::default();
        if let Some(n) = self.trees {
            p.n_trees = n;
        }
        p.max_depth = self.max_depth;
        if let Some(n) = self.min_leaf {
            p.min_samples_leaf = n;
        }
        if let Some(f) = self.features_per_split {
            p.features_per_split = f;
        }
        p.bootstrap = !self.no_bootstrap;
        if let Some(s) = self.forest_seed {
            p.seed = s;
        }
        if self.balanced {
            p.class_weight = ClassWeight::Balanced;
        }
        p.validate()?;
        Ok(p)
    }
}

pub fn parse_tag(s: &str) -> Result<VectorTag, String> {
    s.parse::<VectorTag>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for faces and the rewritten manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// What to do with manifest rows whose image is missing.
    #[arg(long, value_enum, default_value = "fail")]
    pub missing: MissingArg,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated method tags; `A+B` fuses. All fourteen when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_tag)]
    pub methods: Vec<VectorTag>,
    /// Output directory; one `<TAG>.csv` per method.
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict to one side of a split file written by `train`.
    #[arg(long, requires = "subset")]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, requires = "split")]
    pub subset: Option<Subset>,
    #[arg(long, value_enum, default_value = "fail")]
    pub missing: MissingArg,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Feature tag, e.g. DCT2 or LBP81+FUSION_LBP.
    #[arg(long, value_parser = parse_tag)]
    pub method: VectorTag,
    /// Model JSON path. The split is written next to it as `<stem>.split.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of every stratum used for training.
    #[arg(long, default_value_t = 0.7)]
    pub ratio: f64,
    /// Split seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Train on every sample; no split, no operating points.
    #[arg(long, conflicts_with_all = ["ratio", "seed"])]
    pub all: bool,
    #[arg(long, value_enum, default_value = "fail")]
    pub missing: MissingArg,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict to one side of a split file.
    #[arg(long, requires = "subset")]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, requires = "split")]
    pub subset: Option<Subset>,
    /// Output scores CSV (`id,label,score`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "fail")]
    pub missing: MissingArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores CSV with columns id,label,score.
    #[arg(long)]
    pub scores: PathBuf,
    /// Output directory for metrics.json, det.csv and det.png.
    #[arg(long)]
    pub out: PathBuf,
    /// Legend label of the DET plot.
    #[arg(long, default_value = "scores")]
    pub label: String,
    /// Store the EER/BPCER10/BPCER20 thresholds in this model file.
    #[arg(long, value_name = "MODEL")]
    pub annotate_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LooArgs {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Skip PNG rendering.
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// Face image (PNG or JPEG).
    #[arg(long)]
    pub image: PathBuf,
    /// Comma-separated methods in gallery order.
    #[arg(long, value_delimiter = ',', default_value = "ELA,DFT,DCT2,SVD,SRM")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// File-name prefix; the image file stem when omitted.
    #[arg(long)]
    pub id: Option<String>,
    /// Eye centres as `lx,ly,rx,ry`.
    #[arg(long, value_delimiter = ',', num_args = 4, value_name = "X")]
    pub landmarks: Option<Vec<f64>>,
    /// Maximum tiles per contact-sheet row.
    #[arg(long, default_value_t = 5)]
    pub columns: u32,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Model JSON file; repeatable.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Load every `*.json` model in this directory.
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Analyses whose maps are kept for download.
    #[arg(long, default_value_t = 64)]
    pub max_analyses: usize,
    /// Largest accepted upload in bytes.
    #[arg(long, default_value_t = 16 * 1024 * 1024)]
    pub max_upload: usize,
    /// Settings for rendering maps of unscored methods.
    #[command(flatten)]
    pub features: FeatureArgs,
}

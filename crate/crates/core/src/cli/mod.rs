//! Argument parsing, config-file merging and process plumbing.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use unit_insight::abx::AbxMode;
use unit_insight::merge::MergeMethod;
use unit_insight::redundancy::CrNormalization;
use unit_insight::viz::tsne::TsneMetric;
use unit_insight::vocoder::KeyKind;
use unit_insight::LabelKind;

pub const THREADS_ENV: &str = "UNIT_INSIGHT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "unit-insight", version, about = "Discrete speech unit analysis toolkit")]
pub struct Cli {
    /// JSON object of flag defaults for the subcommand (keys are long flag names).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit a k-means codebook on pooled feature frames.
    KmeansTrain(KmeansTrainArgs),
    /// Map every feature frame to its nearest centroid.
    Quantize(QuantizeArgs),
    /// Collapse runs of repeated units.
    Dedup(DedupArgs),
    /// Homogeneity, completeness and V-measure of units against labels.
    Vmeasure(VmeasureArgs),
    /// Render a t-SNE Voronoi map of the codebook.
    Viz(VizArgs),
    /// Lookup-vocoder resynthesis and memorization report.
    LvResynth(LvResynthArgs),
    /// Unit edit distance between two transcriptions.
    Ued(UedArgs),
    /// Circular-resynthesis swap-rate matrix.
    Cr(CrArgs),
    /// Merge codebook units (kk, kh or kwh).
    Merge(MergeArgs),
    /// ABX discrimination error.
    Abx(AbxArgs),
    /// Write a seeded synthetic corpus with planted labels and swaps.
    GenSynthetic(GenSyntheticArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::KmeansTrain(_) => "kmeans-train",
            Command::Quantize(_) => "quantize",
            Command::Dedup(_) => "dedup",
            Command::Vmeasure(_) => "vmeasure",
            Command::Viz(_) => "viz",
            Command::LvResynth(_) => "lv-resynth",
            Command::Ued(_) => "ued",
            Command::Cr(_) => "cr",
            Command::Merge(_) => "merge",
            Command::Abx(_) => "abx",
            Command::GenSynthetic(_) => "gen-synthetic",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct KmeansTrainArgs {
    /// Directory of .feats files.
    #[arg(long)]
    pub feats: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Z-score each dimension before clustering; writes the scaler next to the codebook.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub feats: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    /// Scaler written by `kmeans-train --standardize`.
    #[arg(long)]
    pub standardizer: Option<PathBuf>,
    /// Merge map applied to the units after quantization.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DedupArgs {
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Phoneme,
    Speaker,
    Gender,
}

impl From<KindArg> for LabelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Phoneme => LabelKind::Phoneme,
            KindArg::Speaker => LabelKind::Speaker,
            KindArg::Gender => LabelKind::Gender,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VmeasureArgs {
    /// Frame-level unit file.
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub alignment: PathBuf,
    #[arg(long, value_enum, default_value = "phoneme")]
    pub kind: KindArg,
    /// Vocabulary size (default: largest unit + 1).
    #[arg(long)]
    pub k: Option<usize>,
    /// Skip frames labelled SIL.
    #[arg(long)]
    pub exclude_sil: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for TsneMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => TsneMetric::Euclidean,
            MetricArg::Cosine => TsneMetric::Cosine,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VizArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    /// Frame-level unit file used for majority phone labels.
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub alignment: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    /// Bounding-box margin as a fraction of the embedding extent.
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Phone-to-family table (default: bundled TIMIT folding).
    #[arg(long)]
    pub families: Option<PathBuf>,
    /// Optional TSV of the 2-D embedding.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyArg {
    Ls,
    Lf,
    Cs,
    Cf,
}

impl From<KeyArg> for KeyKind {
    fn from(k: KeyArg) -> Self {
        match k {
            KeyArg::Ls => KeyKind::LocalSingle,
            KeyArg::Lf => KeyKind::LocalFull,
            KeyArg::Cs => KeyKind::ContextSingle,
            KeyArg::Cf => KeyKind::ContextFull,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LvResynthArgs {
    /// Deduplicated unit file.
    #[arg(long)]
    pub units: PathBuf,
    /// Directory holding `<utterance_id>.wav`.
    #[arg(long)]
    pub wav_dir: PathBuf,
    #[arg(long, value_enum, default_value = "cf")]
    pub key: KeyArg,
    /// Seeds the table fill order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50.0)]
    pub frame_rate: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Report the corpus-pooled unseen rate instead of the per-utterance mean.
    #[arg(long)]
    pub pooled: bool,
    /// Ground truth from `gen-synthetic`; enables in-process re-encoding.
    #[arg(long, requires_all = ["feats", "codebook", "pass2_units"])]
    pub synthetic_truth: Option<PathBuf>,
    /// Feature directory the units were quantized from (synthetic re-encoding only).
    #[arg(long, requires = "synthetic_truth")]
    pub feats: Option<PathBuf>,
    /// Codebook used for both passes (synthetic re-encoding only).
    #[arg(long, requires = "synthetic_truth")]
    pub codebook: Option<PathBuf>,
    /// Where to write the deduplicated second-pass units.
    #[arg(long, requires = "synthetic_truth")]
    pub pass2_units: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct UedArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationArg {
    SourceOccurrences,
    TotalEdits,
}

impl From<NormalizationArg> for CrNormalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::SourceOccurrences => CrNormalization::SourceOccurrences,
            NormalizationArg::TotalEdits => CrNormalization::TotalEdits,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CrArgs {
    #[arg(long)]
    pub units_pass1: PathBuf,
    #[arg(long)]
    pub units_pass2: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "source-occurrences")]
    pub normalization: NormalizationArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Kk,
    Kh,
    Kwh,
}

impl From<MethodArg> for MergeMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Kk => MergeMethod::KK,
            MethodArg::Kh => MergeMethod::KH,
            MethodArg::Kwh => MergeMethod::KWH,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct MergeArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub target: usize,
    /// Swap-rate matrix (required for kwh).
    #[arg(long)]
    pub cr: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// kk only: weight centroids by their training occupancy.
    #[arg(long)]
    pub weighted: bool,
    /// kwh only: clamp CR averages into [0, 1] instead of rejecting them.
    #[arg(long)]
    pub clamp_cr: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Within,
    Across,
}

impl From<ModeArg> for AbxMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Within => AbxMode::Within,
            ModeArg::Across => AbxMode::Across,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AbxArgs {
    /// Frame-level unit file.
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub phones: PathBuf,
    #[arg(long)]
    pub speakers: PathBuf,
    #[arg(long, value_enum, default_value = "within")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 500)]
    pub max_triples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Collapse repeated units inside each item before DTW.
    #[arg(long)]
    pub deduped: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Blob count including silence.
    #[arg(long, default_value_t = 12)]
    pub phones: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub utterances: usize,
    /// Phone runs per utterance.
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    #[arg(long, default_value_t = 4)]
    pub speakers: usize,
    #[arg(long, default_value_t = 0.5)]
    pub blob_sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    pub speaker_shift: f64,
    #[arg(long, default_value_t = 2)]
    pub swap_pairs: usize,
    #[arg(long, default_value_t = 0.7)]
    pub swap_probability: f64,
    /// Gaussian noise on second-pass features.
    #[arg(long, default_value_t = 0.0)]
    pub reencode_noise: f64,
}

/// Flags from `--config` that are not already on the command line, appended
/// after the user's own arguments.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| format!("{}: config must be a JSON object", path.display()))?;
    let present = |flag: &str| {
        args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag || s.starts_with(&format!("{flag}="))
        })
    };
    let mut out = args.clone();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        if present(&flag) {
            continue;
        }
        match v {
            serde_json::Value::Bool(true) => out.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::String(s) => out.extend([flag.into(), s.into()]),
            serde_json::Value::Number(n) => out.extend([flag.into(), n.to_string().into()]),
            _ => return Err(format!("{}: config key {key:?} must be a scalar", path.display())),
        }
    }
    Ok(out)
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Writes the resolved invocation as `<subcommand>.run.json` into `dir`.
pub fn echo_config(cli: &Cli, dir: &Path) -> unit_insight::Result<()> {
    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        log_level: String,
        args: &'a Command,
    }
    let echo = Echo {
        subcommand: cli.command.name(),
        log_level: cli.log_level.to_string().to_lowercase(),
        args: &cli.command,
    };
    let text = serde_json::to_string_pretty(&echo).expect("arguments serialize") + "\n";
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    std::fs::create_dir_all(dir).map_err(|e| unit_insight::Error::Io { path: dir.to_path_buf(), source: e })?;
    let path = dir.join(format!("{}.run.json", cli.command.name()));
    std::fs::write(&path, text).map_err(|e| unit_insight::Error::Io { path, source: e })
}

pub fn run(args: Vec<OsString>) -> i32 {
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    let mut out = std::io::stdout().lock();
    match commands::dispatch(&cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

//! The `persiland` command-line tool.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors
//! (bad flags, invalid configuration, empty signals).

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::analysis::{branch_weight_summary, landscape_activity_correlation, Activity};
use crate::data::{generate_synthetic, load_features, read_feature_file, Dataset, NormalizationParams, Split, SyntheticConfig};
use crate::error::Error;
use crate::landscape::{sample_landscape, LandscapeSpec};
use crate::metrics::{evaluate, EvalTable, Evaluation};
use crate::network::train::{epochs_csv, evaluate_examples};
use crate::network::{
    train, Activation, ConvLayerSpec, NetworkSpec, PersistenceLayerSpec, SavedModel, TrainConfig, Variant,
};
use crate::topology::{compute_pairs, Signal};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptySignal | Error::InvalidConfig(_) => 2,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "persiland", version, about = "Persistence landscapes and persistence-landscape CNNs for 1-D signals")]
struct Cli {
    /// Worker threads for data-parallel work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print birth,death pairs of a signal, most persistent first.
    Pairs {
        #[command(flatten)]
        input: SignalInput,
    },
    /// Print the sampled persistence landscape of a signal.
    Landscape {
        #[command(flatten)]
        input: SignalInput,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        c0: f64,
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        c1: f64,
        #[arg(long, default_value_t = 5)]
        pieces: usize,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        /// Emit one row of P*Q values per segment of this length instead of a P x Q matrix.
        #[arg(long)]
        segment_length: Option<usize>,
    },
    /// Write a synthetic peak-count dataset.
    Generate(GenerateArgs),
    /// Train a network from a JSON run configuration.
    Train(TrainArgs),
    /// Print per-class / per-clip AUC and MAP on one split.
    Eval(EvalArgs),
    /// Print per-tag scores for one feature file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Raw f32 feature file with the model's channel count.
        #[arg(long)]
        input: PathBuf,
    },
    /// Write landscape/activity correlation and branch weight reports.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct SignalInput {
    /// Text file of reals (one per line, or comma/space separated), or a raw
    /// f32 feature file when --channel is given.
    input: PathBuf,
    /// Channel to read from a binary feature file.
    #[arg(long)]
    channel: Option<usize>,
    /// Channel count of the binary feature file.
    #[arg(long, default_value_t = 1)]
    num_channels: usize,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON generator config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_clips: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    num_channels: Option<usize>,
    #[arg(long)]
    max_peaks: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "scores", conflicts_with = "scores")]
    model: Option<PathBuf>,
    /// CSV of precomputed scores: clip_id then one column per tag.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Also write per-tag AUC / AP to this CSV.
    #[arg(long)]
    tag_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value = "peaks")]
    activity: Activity,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Training run description. Every field has a default, so `{}` is a valid
/// configuration once a manifest is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub variant: Variant,
    pub early: Vec<ConvLayerSpec>,
    pub middle: ConvLayerSpec,
    pub persistence: PersistenceLayerSpec,
    /// Hidden late layers; the `(num_tags, 1, 1)` output layer is appended.
    pub late: Vec<ConvLayerSpec>,
    pub activation: Activation,
    /// z-score inputs with statistics of the training split.
    pub normalize: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            variant: Variant::Pcnn,
            early: vec![ConvLayerSpec::new(64, 8, 4)],
            middle: ConvLayerSpec::new(3200, 1, 32),
            persistence: PersistenceLayerSpec::default(),
            late: vec![ConvLayerSpec::pointwise(512), ConvLayerSpec::pointwise(512)],
            activation: Activation::Relu,
            normalize: true,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn network_spec(&self, input_channels: usize, num_tags: usize) -> NetworkSpec {
        let mut late = self.late.clone();
        late.push(ConvLayerSpec::pointwise(num_tags));
        NetworkSpec {
            input_channels,
            early: self.early.clone(),
            variant: self.variant,
            middle: self.variant.uses_middle().then_some(self.middle),
            persistence: self.variant.uses_persistence().then_some(self.persistence),
            late,
            num_tags,
            activation: self.activation,
        }
    }

    /// Every violated invariant of the network and training settings.
    pub fn violations(&self, input_channels: usize, num_tags: usize) -> Vec<String> {
        let mut v = self.network_spec(input_channels, num_tags).violations();
        v.extend(self.train.violations());
        v
    }
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("PERSILAND_LOG", "error"))
        .format_timestamp(None)
        .try_init();
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(CliError {
                    code: 2,
                    message: String::new(),
                })
            };
        }
    };
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError {
            code: 1,
            message: e.to_string(),
        })?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    let text = match command {
        Command::Pairs { input } => cmd_pairs(&input)?,
        Command::Landscape {
            input,
            c0,
            c1,
            pieces,
            samples,
            segment_length,
        } => {
            let spec = LandscapeSpec::new(c0, c1, pieces, samples).map_err(|e| CliError::usage(e.to_string()))?;
            cmd_landscape(&input, &spec, segment_length)?
        }
        Command::Generate(args) => cmd_generate(&args)?,
        Command::Train(args) => cmd_train(&args)?,
        Command::Eval(args) => cmd_eval(&args)?,
        Command::Predict { model, input } => cmd_predict(&model, &input)?,
        Command::Analyze(args) => cmd_analyze(&args)?,
    };
    out.write_all(text.as_bytes()).map_err(|e| CliError {
        code: 1,
        message: e.to_string(),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn read_signal(input: &SignalInput) -> CliResult<Signal> {
    let values = match input.channel {
        Some(c) => {
            if c >= input.num_channels {
                return Err(CliError::usage(format!(
                    "--channel {c} out of range for {} channels",
                    input.num_channels
                )));
            }
            let map = read_feature_file(&input.input, input.num_channels, None)?;
            map.channel(c).to_vec()
        }
        None => {
            let path = &input.input;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            text.split(|ch: char| ch == ',' || ch.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::format("signal file", format!("{}: not a number: {t:?}", path.display())))
                })
                .collect::<crate::Result<Vec<f64>>>()?
        }
    };
    Ok(Signal::new(values)?)
}

fn cmd_pairs(input: &SignalInput) -> CliResult<String> {
    let signal = read_signal(input)?;
    let mut s = String::new();
    for p in compute_pairs(&signal).by_persistence() {
        s.push_str(&format!("{},{}\n", p.birth, p.death));
    }
    Ok(s)
}

fn cmd_landscape(input: &SignalInput, spec: &LandscapeSpec, segment_length: Option<usize>) -> CliResult<String> {
    let signal = read_signal(input)?;
    match segment_length {
        None => Ok(sample_landscape(&compute_pairs(&signal), spec).to_csv()),
        Some(0) => Err(CliError::usage("--segment-length must be >= 1")),
        Some(t) => {
            if signal.len() < t {
                return Err(Error::invalid(format!(
                    "signal of length {} is shorter than one segment of {t}",
                    signal.len()
                ))
                .into());
            }
            let mut s = String::new();
            for seg in signal.values().chunks_exact(t) {
                let d = compute_pairs(&Signal::new(seg.to_vec())?);
                s.push_str(&sample_landscape(&d, spec).to_csv_row());
            }
            Ok(s)
        }
    }
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<String> {
    let mut cfg: SyntheticConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = args.$f { cfg.$f = v; })* };
    }
    set!(num_clips, length, num_channels, max_peaks, noise_std, seed, valid_fraction, test_fraction);
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::InvalidConfig(v).into());
    }
    let ds = generate_synthetic(&cfg)?;
    create_dir(&args.out_dir)?;
    let manifest = ds.save(&args.out_dir)?;
    write_file(
        &args.out_dir.join("generate.json"),
        serde_json::to_string_pretty(&cfg).map_err(Error::from)?,
    )?;
    info!("wrote {} clips to {}", ds.clips.len(), manifest.display());
    Ok(format!("{}\n", manifest.display()))
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e).into())
}

fn cmd_train(args: &TrainArgs) -> CliResult<String> {
    let mut cfg: RunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &args.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| CliError::usage("no manifest: pass --manifest or set it in the config"))?;
    // Relative paths in a config file are resolved against the config's directory.
    let manifest = match (&args.config, &args.manifest) {
        (Some(c), None) if manifest.is_relative() => c.parent().unwrap_or(Path::new(".")).join(manifest),
        _ => manifest,
    };
    cfg.manifest = Some(absolute(&manifest)?);

    let ds = load_features(&manifest)?;
    let channels = dataset_channels(&ds)?;
    let v = cfg.violations(channels, ds.num_tags());
    if !v.is_empty() {
        return Err(Error::InvalidConfig(v).into());
    }
    let spec = cfg.network_spec(channels, ds.num_tags());
    for c in &ds.clips {
        spec.trace_shapes(c.features.len())
            .map_err(|e| CliError::usage(format!("clip {:?}: {e}", c.id)))?;
    }

    let norm = if cfg.normalize {
        Some(NormalizationParams::fit_split(&ds, Split::Train)?)
    } else {
        None
    };
    let train_set = ds.examples(Split::Train, norm.as_ref())?;
    let valid = ds.examples(Split::Valid, norm.as_ref())?;
    info!(
        "training {} on {} clips ({} validation)",
        cfg.variant,
        train_set.len(),
        valid.len()
    );
    let outcome = train(spec, &train_set, &valid, &cfg.train)?;

    create_dir(&args.out_dir)?;
    let save = |net: &crate::network::Network, name: &str| -> CliResult<()> {
        let model = SavedModel {
            network: net.clone(),
            tags: ds.tags.clone(),
            normalization: norm.clone(),
        };
        Ok(model.save(args.out_dir.join(name))?)
    };
    save(&outcome.last, "model.bin")?;
    save(&outcome.best, "best.bin")?;
    write_file(&args.out_dir.join("epochs.csv"), epochs_csv(&outcome.history))?;
    write_file(
        &args.out_dir.join("config.json"),
        serde_json::to_string_pretty(&cfg).map_err(Error::from)?,
    )?;
    Ok(format!(
        "best epoch {} of {}; wrote model.bin, best.bin, epochs.csv, config.json to {}\n",
        outcome.best_epoch,
        outcome.history.len(),
        args.out_dir.display()
    ))
}

fn dataset_channels(ds: &Dataset) -> CliResult<usize> {
    ds.clips
        .first()
        .map(|c| c.features.channels())
        .ok_or_else(|| Error::invalid("dataset has no clips").into())
}

fn check_tags(model: &SavedModel, ds: &Dataset) -> CliResult<()> {
    if !model.tags.is_empty() && model.tags != ds.tags {
        return Err(Error::invalid(format!(
            "model tags {:?} differ from manifest tags {:?}",
            model.tags, ds.tags
        ))
        .into());
    }
    Ok(())
}

fn format_evaluation(e: &Evaluation) -> String {
    let mut s = String::from("metric,value\n");
    for (name, m) in [
        ("perclass_auc", &e.perclass_auc),
        ("perclip_auc", &e.perclip_auc),
        ("perclass_map", &e.perclass_map),
        ("perclip_map", &e.perclip_map),
    ] {
        s.push_str(&format!("{name},{}\n", m.value()));
        if m.undefined > 0 {
            info!("{name}: {} undefined entries excluded", m.undefined);
        }
    }
    s
}

fn read_scores(path: &Path, ds: &Dataset, split: Split) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let headers = reader.headers().map_err(Error::from)?.clone();
    let tags: Vec<&str> = headers.iter().skip(1).map(str::trim).collect();
    if tags != ds.tags.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::format("scores file", "tag columns must match the manifest").into());
    }
    let mut by_id = std::collections::HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(Error::from)?;
        let id = rec.get(0).unwrap_or_default().trim().to_string();
        let row = rec
            .iter()
            .skip(1)
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format("scores file", format!("clip {id:?}: bad score {t:?}")))
            })
            .collect::<crate::Result<Vec<f64>>>()?;
        by_id.insert(id, row);
    }
    ds.split(split)
        .map(|c| {
            by_id
                .remove(&c.id)
                .ok_or_else(|| Error::format("scores file", format!("no scores for clip {:?}", c.id)).into())
        })
        .collect()
}

fn cmd_eval(args: &EvalArgs) -> CliResult<String> {
    let ds = load_features(&args.manifest)?;
    let eval = match (&args.model, &args.scores) {
        (Some(m), _) => {
            let model = SavedModel::load(m)?;
            check_tags(&model, &ds)?;
            let examples = ds.examples(args.split, model.normalization.as_ref())?;
            evaluate_examples(&model.network, &examples)?
        }
        (None, Some(p)) => {
            let scores = read_scores(p, &ds, args.split)?;
            let labels: Vec<Vec<bool>> = ds
                .split(args.split)
                .map(|c| c.labels.iter().map(|&l| l == 1).collect())
                .collect();
            evaluate(&EvalTable::from_rows(&scores, &labels)?)?
        }
        (None, None) => return Err(CliError::usage("pass --model or --scores")),
    };
    if let Some(p) = &args.tag_csv {
        write_file(p, eval.tag_csv(&ds.tags))?;
    }
    Ok(format_evaluation(&eval))
}

fn cmd_predict(model: &Path, input: &Path) -> CliResult<String> {
    let model = SavedModel::load(model)?;
    let features = read_feature_file(input, model.network.spec().input_channels, None)?;
    let features = match &model.normalization {
        Some(n) => n.apply(&features)?,
        None => features,
    };
    let scores = model.network.predict(&features)?;
    let mut s = String::from("tag,score\n");
    for (i, v) in scores.iter().enumerate() {
        let name = model.tags.get(i).cloned().unwrap_or_else(|| format!("tag{i}"));
        s.push_str(&format!("{name},{v}\n"));
    }
    Ok(s)
}

fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<String> {
    let model = SavedModel::load(&args.model)?;
    let ds = load_features(&args.manifest)?;
    check_tags(&model, &ds)?;
    let clips: Vec<_> = ds.split(args.split).collect();
    let report = landscape_activity_correlation(&model.network, &clips, model.normalization.as_ref(), args.activity)?;
    let weights = branch_weight_summary(&model.network)?;
    let pieces = report.coefficients.len();

    create_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("correlation.csv"), report.coefficients_csv())?;
    write_file(
        &args.out_dir.join("correlation.json"),
        serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )?;
    write_file(&args.out_dir.join("weights.csv"), weights.csv())?;
    let mut ranking = format!("tag,mean_lambda_{pieces},clips\n");
    for (tag, v, n) in report.tag_ranking(&clips, &ds.tags, pieces) {
        ranking.push_str(&format!("{tag},{v},{n}\n"));
    }
    write_file(&args.out_dir.join("tag_ranking.csv"), ranking)?;
    Ok(report.coefficients_csv())
}

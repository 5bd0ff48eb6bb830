//! Command-line front end. Each subcommand delegates to the library module of
//! the same concern and writes a resolved-config JSON next to its outputs.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::aggregation::export_similarity_map;
use crate::corpuscan::{scan_corpus, InputFormat, NegationLexicon, NounList};
use crate::data::{
    load_features, mask_labels, read_bank, read_tensor_file, write_bank, write_features, DatasetBundle,
    LabelMatrix, MaskSpec, SynthConfig, Synthesizer,
};
use crate::error::{Error, Result};
use crate::heads::{
    load_checkpoint, save_checkpoint, EmbeddingBank, Head, HeadKind, Polarity, ProjectorHead, SideInit,
    DEFAULT_TEMPERATURE,
};
use crate::loss::LossConfig;
use crate::model::evaluate;
use crate::numerics::Tensor;
use crate::promptlab::{pairwise_stats, template_sweep_stats, SweepPooling};
use crate::train::{train_run, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "partial-mlr", version, about = "Multi-label recognition with partial annotations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic bundle, anchor banks and a training manifest.
    Synth(SynthArgs),
    /// Hide labels at random, keeping each with probability p.
    Mask(MaskArgs),
    /// Train a head from a run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint: per-class AP and mAP.
    Eval(EvalArgs),
    /// Write per-class similarity maps of one image as .mlt and .pgm.
    ExportMaps(ExportMapsArgs),
    /// Count captions containing negation words in text shards.
    Scan(ScanArgs),
    /// Cosine statistics between prompt-embedding banks.
    Promptstats(PromptstatsArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub images: usize,
    #[arg(long, default_value_t = 256)]
    pub test_images: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 3)]
    pub height: usize,
    #[arg(long, default_value_t = 3)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.25)]
    pub presence: f64,
    /// Shared background directions; 0 for isotropic backgrounds.
    #[arg(long, default_value_t = 4)]
    pub background_prototypes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub background_noise: f64,
    /// Cosine between each synthetic text anchor and its class concept.
    #[arg(long, default_value_t = 0.3)]
    pub fidelity: f64,
    /// Head kind written into the generated manifest.
    #[arg(long, default_value = "baseline")]
    pub head: HeadKind,
    /// Label availability written into the generated manifest.
    #[arg(long, default_value_t = 0.2)]
    pub known_fraction: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MaskArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Probability of keeping each label.
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest's worker count.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityChoice {
    Positive,
    Negative,
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportMapsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Index of the image in the feature file.
    #[arg(long, default_value_t = 0)]
    pub image: usize,
    /// Class index; every class when omitted.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, value_enum, default_value_t = PolarityChoice::Both)]
    pub polarity: PolarityChoice,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScanArgs {
    /// Shard paths or glob patterns.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<String>,
    /// One negation word per line; the built-in list when omitted.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// One noun per line; the bundled list when omitted.
    #[arg(long)]
    pub nouns: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// txt, csv, tsv, csv:col=N or tsv:col=N.
    #[arg(long, default_value = "txt")]
    pub format: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingChoice {
    Pooled,
    TemplateMeans,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PromptstatsArgs {
    #[arg(long, requires = "b", conflicts_with = "sweep")]
    pub a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    pub b: Option<PathBuf>,
    /// JSON manifest `{"p1": [...], "n1": [...], "p2": [...]}` of bank paths.
    #[arg(long, required_unless_present = "a")]
    pub sweep: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PoolingChoice::Pooled)]
    pub pooling: PoolingChoice,
}

/// Whether anchored sides keep training or stay fixed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorMode {
    #[default]
    Learnable,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub features: PathBuf,
    pub labels: PathBuf,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_true() -> bool {
    true
}

/// Everything a training run needs. Relative paths resolve against the
/// manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub features: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub anchors_positive: Option<PathBuf>,
    #[serde(default)]
    pub anchors_negative: Option<PathBuf>,
    pub head: HeadKind,
    #[serde(default)]
    pub anchor_mode: AnchorMode,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_true")]
    pub use_bias: bool,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    /// Applied to the (fully annotated) training labels before training.
    #[serde(default)]
    pub mask: Option<MaskSpec>,
    #[serde(default)]
    pub validation: Option<EvalSet>,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // a manifest that does not parse is a usage error, not bad data
        let mut m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve_paths(base);
        Ok(m)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.features);
        join(&mut self.labels);
        join(&mut self.output_dir);
        if let Some(p) = self.anchors_positive.as_mut() {
            join(p);
        }
        if let Some(p) = self.anchors_negative.as_mut() {
            join(p);
        }
        if let Some(v) = self.validation.as_mut() {
            join(&mut v.features);
            join(&mut v.labels);
        }
    }
}

fn read_anchor(path: Option<&PathBuf>, kind: HeadKind, side: &str) -> Result<Tensor> {
    let path = path.ok_or_else(|| Error::Config(format!("head {kind:?} needs anchors_{side}")))?;
    Ok(read_bank(path)?.0)
}

/// Builds the initial head described by a manifest.
pub fn build_head(m: &RunManifest, num_classes: usize, dim: usize) -> Result<Head> {
    let seed = m.train.seed;
    let frozen = m.anchor_mode == AnchorMode::Frozen;
    let anchored = |path: Option<&PathBuf>, side: &str| -> Result<SideInit> {
        Ok(SideInit::Anchor {
            anchor: read_anchor(path, m.head, side)?,
            frozen,
        })
    };
    let free = |stream| SideInit::Free { seed, stream };
    let (pos, neg) = match m.head {
        HeadKind::Baseline => {
            return Ok(Head::Projector(ProjectorHead::init(num_classes, dim, m.use_bias, seed)?));
        }
        HeadKind::PositiveCoop => (anchored(m.anchors_positive.as_ref(), "positive")?, free(0)),
        HeadKind::NegativeCoop => (free(0), anchored(m.anchors_negative.as_ref(), "negative")?),
        HeadKind::FreeDual => (free(0), free(1)),
        HeadKind::AnchoredDual => (
            anchored(m.anchors_positive.as_ref(), "positive")?,
            anchored(m.anchors_negative.as_ref(), "negative")?,
        ),
    };
    Ok(Head::Embedding(EmbeddingBank::new(num_classes, dim, pos, neg, m.temperature)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `<file>.config.json` next to a single-file output.
fn config_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".config.json");
    out.with_file_name(name)
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(f)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let out = &args.out;
    create_dir(out)?;
    let cfg = SynthConfig {
        noise: args.noise,
        presence: args.presence,
        background_prototypes: args.background_prototypes,
        background_noise: args.background_noise,
        ..SynthConfig::new(args.classes, args.height, args.width, args.dim, args.seed)
    };
    let mut synth = Synthesizer::new(cfg.clone())?;
    let train = synth.sample(args.images)?;
    let test = synth.sample(args.test_images)?;
    let names = synth.class_names();
    write_features(out.join("features.mlt"), train.features())?;
    train.labels().write_csv(out.join("labels.csv"), &names)?;
    write_features(out.join("test_features.mlt"), test.features())?;
    test.labels().write_csv(out.join("test_labels.csv"), &names)?;
    write_bank(out.join("anchors_positive.mlt"), &synth.text_anchors(args.fidelity, args.seed)?, &names)?;
    write_bank(
        out.join("anchors_negative.mlt"),
        &synth.text_anchors(args.fidelity, args.seed.wrapping_add(1))?,
        &names,
    )?;
    let manifest = RunManifest {
        features: "features.mlt".into(),
        labels: "labels.csv".into(),
        anchors_positive: Some("anchors_positive.mlt".into()),
        anchors_negative: Some("anchors_negative.mlt".into()),
        head: args.head,
        anchor_mode: AnchorMode::Learnable,
        temperature: DEFAULT_TEMPERATURE,
        use_bias: true,
        train: TrainConfig {
            seed: args.seed,
            ..TrainConfig::default()
        },
        loss: LossConfig::default(),
        mask: Some(MaskSpec::new(args.known_fraction, args.seed)?),
        validation: Some(EvalSet {
            features: "test_features.mlt".into(),
            labels: "test_labels.csv".into(),
        }),
        output_dir: "run".into(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(
        &out.join("synth.config.json"),
        &serde_json::json!({ "args": args, "synth": cfg }),
    )?;
    println!("wrote synthetic bundle to {}", out.display());
    Ok(())
}

pub fn cmd_mask(args: &MaskArgs) -> Result<()> {
    let spec = MaskSpec::new(args.p, args.seed)?;
    let (full, names) = LabelMatrix::read_csv(&args.labels)?;
    let masked = mask_labels(&full, &spec)?;
    masked.write_csv(&args.out, &names)?;
    write_json(&config_path_for(&args.out), &serde_json::json!({ "args": args, "mask": spec }))?;
    println!(
        "kept {} of {} labels",
        masked.known_count(),
        full.num_images() * full.num_classes()
    );
    Ok(())
}

fn load_eval_set(set: &EvalSet) -> Result<DatasetBundle> {
    let bundle = DatasetBundle::load(&set.features, &set.labels)?;
    if !bundle.labels().is_fully_annotated() {
        return Err(Error::Label(format!("{} has unknown labels", set.labels.display())));
    }
    Ok(bundle)
}

/// Runs training from a manifest and writes `checkpoint/`, `metrics.csv` and
/// `resolved_config.json` under the manifest's output directory.
pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::read(&args.manifest)?;
    if let Some(w) = args.workers {
        manifest.train.workers = w;
    }
    manifest.train.validate()?;
    manifest.loss.validate()?;
    let mut bundle = DatasetBundle::load(&manifest.features, &manifest.labels)?;
    if let Some(spec) = &manifest.mask {
        spec.validate()?;
        let masked = mask_labels(bundle.labels(), spec)?;
        bundle = bundle.with_labels(masked)?;
    }
    let validation = manifest.validation.as_ref().map(load_eval_set).transpose()?;
    let (_, _, dim) = bundle
        .feature_dims()
        .ok_or_else(|| Error::Shape("no training images".into()))?;
    let head = build_head(&manifest, bundle.num_classes(), dim)?;

    let out = &manifest.output_dir;
    create_dir(out)?;
    write_json(&out.join("resolved_config.json"), &manifest)?;
    let outcome = train_run(&bundle, head, &manifest.train, &manifest.loss, validation.as_ref())?;
    save_checkpoint(&outcome.head, out.join("checkpoint"))?;
    outcome.write_metrics_csv(out.join("metrics.csv"))?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} epochs, final loss {:.6}{}",
            outcome.log.len(),
            last.train_loss,
            last.val_map.map(|m| format!(", validation mAP {m:.4}")).unwrap_or_default()
        );
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let head = load_checkpoint(&args.checkpoint)?;
    let bundle = load_eval_set(&EvalSet {
        features: args.features.clone(),
        labels: args.labels.clone(),
    })?;
    let report = with_pool(args.workers, || evaluate(&head, &bundle))?;
    report.write_csv(&args.out, bundle.class_names())?;
    write_json(&config_path_for(&args.out), &serde_json::json!({ "args": args }))?;
    println!("mAP {:.6}", report.map);
    Ok(())
}

pub fn cmd_export_maps(args: &ExportMapsArgs) -> Result<()> {
    let head = load_checkpoint(&args.checkpoint)?;
    let features = load_features(&args.features)?;
    let z = features.get(args.image).ok_or_else(|| {
        Error::Range(format!("image index {} with {} images", args.image, features.len()))
    })?;
    let logits = head.forward(z)?;
    let classes: Vec<usize> = match args.class {
        Some(j) => vec![j],
        None => (0..head.num_classes()).collect(),
    };
    let polarities: &[Polarity] = match args.polarity {
        PolarityChoice::Positive => &[Polarity::Positive],
        PolarityChoice::Negative => &[Polarity::Negative],
        PolarityChoice::Both => &[Polarity::Positive, Polarity::Negative],
    };
    create_dir(&args.out_dir)?;
    let mut written = Vec::new();
    for &j in &classes {
        for &pol in polarities {
            let tag = match pol {
                Polarity::Positive => "pos",
                Polarity::Negative => "neg",
            };
            let stem = args.out_dir.join(format!("image{:04}_class{j:03}_{tag}", args.image));
            let (mlt, pgm) = export_similarity_map(&logits, j, pol, stem)?;
            written.push(mlt);
            written.push(pgm);
        }
    }
    write_json(
        &args.out_dir.join("resolved_config.json"),
        &serde_json::json!({ "args": args, "files": written }),
    )?;
    println!("wrote {} files to {}", written.len(), args.out_dir.display());
    Ok(())
}

/// Expands glob patterns. A pattern matching nothing is kept verbatim so the
/// missing shard shows up in the scan's error list.
fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pat in patterns {
        let matches: Vec<PathBuf> = glob::glob(pat)
            .map_err(|e| Error::Config(format!("bad glob {pat:?}: {e}")))?
            .filter_map(|m| m.ok())
            .collect();
        if matches.is_empty() {
            out.push(PathBuf::from(pat));
        } else {
            out.extend(matches);
        }
    }
    Ok(out)
}

/// Scan result and whether every shard was read.
pub fn scan_json(args: &ScanArgs) -> Result<(serde_json::Value, bool, String)> {
    let format: InputFormat = args.format.parse()?;
    let lexicon = match &args.lexicon {
        Some(p) => NegationLexicon::from_file(p)?,
        None => NegationLexicon::default(),
    };
    let nouns = match &args.nouns {
        Some(p) => NounList::from_file(p)?,
        None => NounList::default(),
    };
    let inputs = expand_inputs(&args.input)?;
    let report = scan_corpus(&inputs, &lexicon, &nouns, args.workers, format)?;
    let json = serde_json::json!({
        "config": {
            "inputs": inputs,
            "lexicon": args.lexicon,
            "lexicon_size": lexicon.len(),
            "nouns": args.nouns,
            "noun_count": nouns.len(),
            "workers": args.workers,
            "format": format,
        },
        "stats": report.stats,
        "invalid_utf8": report.invalid_utf8,
        "shards": report.shards,
        "errors": report.errors,
    });
    Ok((json, report.is_complete(), report.stats.summary()))
}

pub fn cmd_scan(args: &ScanArgs) -> Result<bool> {
    let (json, complete, summary) = scan_json(args)?;
    println!("{}", serde_json::to_string_pretty(&json).expect("serialisable"));
    eprintln!("{summary}");
    Ok(complete)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub p1: Vec<PathBuf>,
    pub n1: Vec<PathBuf>,
    pub p2: Vec<PathBuf>,
}

fn read_banks(paths: &[PathBuf], base: &Path) -> Result<Vec<Tensor>> {
    paths.iter().map(|p| read_tensor_file(base.join(p))).collect()
}

pub fn promptstats_json(args: &PromptstatsArgs) -> Result<(serde_json::Value, String)> {
    if let (Some(a), Some(b)) = (&args.a, &args.b) {
        let stats = pairwise_stats(&read_bank(a)?.0, &read_bank(b)?.0)?;
        let table = format!("a vs b  {}", stats.table_row());
        return Ok((serde_json::json!({ "config": args, "stats": stats }), table));
    }
    let path = args
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("give --a and --b, or --sweep".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sweep: SweepManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("sweep manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let pooling = match args.pooling {
        PoolingChoice::Pooled => SweepPooling::Pooled,
        PoolingChoice::TemplateMeans => SweepPooling::TemplateMeans,
    };
    let stats = template_sweep_stats(
        &read_banks(&sweep.p1, base)?,
        &read_banks(&sweep.n1, base)?,
        &read_banks(&sweep.p2, base)?,
        pooling,
    )?;
    let table = format!(
        "P1-N1  {}\nP1-P2  {}",
        stats.p1_n1.table_row(),
        stats.p1_p2.table_row()
    );
    Ok((serde_json::json!({ "config": args, "sweep": sweep, "stats": stats }), table))
}

pub fn cmd_promptstats(args: &PromptstatsArgs) -> Result<()> {
    let (json, table) = promptstats_json(args)?;
    println!("{}", serde_json::to_string_pretty(&json).expect("serialisable"));
    eprintln!("{table}");
    Ok(())
}

/// Runs one parsed command and returns its exit code.
pub fn execute(command: &Command) -> i32 {
    let result = match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportMaps(a) => cmd_export_maps(a),
        Command::Scan(a) => match cmd_scan(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: some shards could not be read");
                return 2;
            }
            Err(e) => Err(e),
        },
        Command::Promptstats(a) => cmd_promptstats(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `argv` (including the program name) and runs it. Usage errors exit 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => execute(&cli.command),
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
    }
}

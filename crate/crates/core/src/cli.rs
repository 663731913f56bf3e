//! Command-line front end: `synth`, `train`, `eval`, `counter`, `analyze`.
//!
//! Settings resolve as defaults < `CCFCNET_SEED` < the run's recorded config
//! (for commands that take `--run`) < `--config` file < flags. Every command
//! writes the fully resolved settings to `<out>/resolved_config`; passing
//! that file back via `--config` reproduces the outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::report::Num;
use crate::analysis::{
    counter_condition_classify, diff_maps, mask_statistics, subtype_cluster, write_counter_metrics,
    write_diff_edges, write_diff_plotdata, write_mask_plotdata, write_mask_stats, write_subtype_plotdata,
    write_subtypes, ExtremeMode,
};
use crate::data::{
    generate_synthetic, load_dataset, planted_module, save_dataset, split, stratified_folds, write_file, Dataset,
    Split, SyntheticSpec, PATIENT,
};
use crate::error::Error;
use crate::kv::KvFile;
use crate::model::{load_checkpoint, quarter_edges, save_checkpoint, Ablations, Checkpoint, Model, ModelConfig};
use crate::train::{evaluate, train, write_epoch_log, MetricSet, TrainConfig};

pub const SEED_ENV: &str = "CCFCNET_SEED";
pub const RESOLVED_CONFIG: &str = "resolved_config";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const SPLITS_FILE: &str = "splits.csv";

/// Exit status of a failed command.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "ccfcnet", version, about = "Counter-condition FC diagnosis: synthesize, train, evaluate, explain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with planted group differences.
    Synth(Flags),
    /// Train a model (alternating Step 1 / Step 2) and save the best checkpoint.
    Train(Flags),
    /// AUC/ACC/SEN/SPC of a trained run on one partition.
    Eval(Flags),
    /// Counter-condition classification and per-subject diff maps.
    Counter(Flags),
    /// Mask statistics, degree centrality and subtype clustering.
    Analyze(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Counter(_) => "counter",
            Command::Analyze(_) => "analyze",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Synth(f) | Command::Train(f) | Command::Eval(f) | Command::Counter(f) | Command::Analyze(f) => f,
        }
    }
}

/// Every flag is also a config key (dashes become underscores).
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training run directory (eval, counter, analyze).
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, help_heading = "Synthetic data")]
    pub r: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    pub n_per_class: Option<usize>,
    /// Number of planted connections.
    #[arg(long, help_heading = "Synthetic data")]
    pub planted: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    pub effect: Option<f64>,
    #[arg(long, help_heading = "Synthetic data")]
    pub subtypes: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    pub overlap: Option<f64>,
    #[arg(long, help_heading = "Synthetic data")]
    pub noise: Option<f64>,
    #[arg(long, help_heading = "Synthetic data")]
    pub sites: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    pub site_effect: Option<f64>,

    #[arg(long, help_heading = "Model")]
    pub d: Option<usize>,
    #[arg(long, help_heading = "Model")]
    pub hidden_enc: Option<usize>,
    #[arg(long, help_heading = "Model")]
    pub n_blocks: Option<usize>,
    #[arg(long, help_heading = "Model")]
    pub n_heads: Option<usize>,
    #[arg(long, help_heading = "Model")]
    pub tau_gumbel: Option<f64>,
    #[arg(long, help_heading = "Model")]
    pub softmax_temp: Option<f64>,
    #[arg(long, help_heading = "Model")]
    pub dropout: Option<f64>,
    #[arg(long, help_heading = "Model")]
    pub attn_hidden: Option<usize>,
    #[arg(long, help_heading = "Model")]
    pub dec_hidden: Option<usize>,

    #[arg(long, help_heading = "Training")]
    pub epochs: Option<usize>,
    #[arg(long, help_heading = "Training")]
    pub lr_step1: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub lr_step2: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub batch_size: Option<usize>,
    #[arg(long, help_heading = "Training")]
    pub weight_decay: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub lambda_recon: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub lambda_class: Option<f64>,
    /// Comma-separated: no_mask, no_intra, no_prototype, no_step2, no_reg.
    #[arg(long, help_heading = "Training")]
    pub ablate: Option<String>,
    #[arg(long, help_heading = "Training")]
    pub train_frac: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub val_frac: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub test_frac: Option<f64>,
    /// Stratified k-fold cross-validation instead of a single split (k ≥ 3).
    #[arg(long, help_heading = "Training")]
    pub folds: Option<usize>,

    /// Partition to evaluate or analyse: train, val, test or all.
    #[arg(long, help_heading = "Analysis")]
    pub split: Option<String>,
    /// exclude (zero the top-1% |diff|) or keep (keep only them).
    #[arg(long, help_heading = "Analysis")]
    pub extreme_mode: Option<String>,
    /// Number of subtype clusters.
    #[arg(long, help_heading = "Analysis")]
    pub k: Option<usize>,
}

impl Flags {
    fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        let mut put = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(key, v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("data", path(&self.data));
        put("out", path(&self.out));
        put("run", path(&self.run));
        put("seed", self.seed.map(|v| v.to_string()));
        put("r", self.r.map(|v| v.to_string()));
        put("n_per_class", self.n_per_class.map(|v| v.to_string()));
        put("planted", self.planted.map(|v| v.to_string()));
        put("effect", self.effect.map(|v| v.to_string()));
        put("subtypes", self.subtypes.map(|v| v.to_string()));
        put("overlap", self.overlap.map(|v| v.to_string()));
        put("noise", self.noise.map(|v| v.to_string()));
        put("sites", self.sites.map(|v| v.to_string()));
        put("site_effect", self.site_effect.map(|v| v.to_string()));
        put("d", self.d.map(|v| v.to_string()));
        put("hidden_enc", self.hidden_enc.map(|v| v.to_string()));
        put("n_blocks", self.n_blocks.map(|v| v.to_string()));
        put("n_heads", self.n_heads.map(|v| v.to_string()));
        put("tau_gumbel", self.tau_gumbel.map(|v| v.to_string()));
        put("softmax_temp", self.softmax_temp.map(|v| v.to_string()));
        put("dropout", self.dropout.map(|v| v.to_string()));
        put("attn_hidden", self.attn_hidden.map(|v| v.to_string()));
        put("dec_hidden", self.dec_hidden.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("lr_step1", self.lr_step1.map(|v| v.to_string()));
        put("lr_step2", self.lr_step2.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("weight_decay", self.weight_decay.map(|v| v.to_string()));
        put("lambda_recon", self.lambda_recon.map(|v| v.to_string()));
        put("lambda_class", self.lambda_class.map(|v| v.to_string()));
        put("ablate", self.ablate.clone());
        put("train_frac", self.train_frac.map(|v| v.to_string()));
        put("val_frac", self.val_frac.map(|v| v.to_string()));
        put("test_frac", self.test_frac.map(|v| v.to_string()));
        put("folds", self.folds.map(|v| v.to_string()));
        put("split", self.split.clone());
        put("extreme_mode", self.extreme_mode.clone());
        put("k", self.k.map(|v| v.to_string()));
        kv
    }
}

/// Recognised config keys.
pub const KEYS: [&str; 38] = [
    "data", "out", "run", "seed", "r", "n_per_class", "planted", "effect", "subtypes", "overlap", "noise", "sites",
    "site_effect", "d", "hidden_enc", "n_blocks", "n_heads", "tau_gumbel", "softmax_temp", "dropout", "attn_hidden",
    "dec_hidden", "epochs", "lr_step1", "lr_step2", "batch_size", "weight_decay", "lambda_recon", "lambda_class",
    "ablate", "train_frac", "val_frac", "test_frac", "folds", "split", "extreme_mode", "k", "command",
];

/// Which records a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for Partition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            "all" => Ok(Partition::All),
            other => Err(format!("unknown split {other:?} (expected train, val, test or all)")),
        }
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
            Partition::All => "all",
        })
    }
}

/// Every setting after defaults and overrides have been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub run: Option<PathBuf>,
    pub seed: u64,
    pub synth: SyntheticSpec,
    pub n_planted: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fractions: (f64, f64, f64),
    pub folds: usize,
    pub split: Partition,
    pub extreme_mode: ExtremeMode,
    pub k: usize,
}

fn get<T: std::str::FromStr>(kv: &KvFile, key: &str, default: T) -> crate::Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(kv.parse_value(key)?.unwrap_or(default))
}

impl RunConfig {
    /// Resolves `kv` (already layered) against the defaults for `command`.
    pub fn from_kv(command: &str, kv: &KvFile) -> crate::Result<Self> {
        if let Some((key, _)) = kv.iter().find(|(k, _)| !KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown setting {key:?}")));
        }
        let seed: u64 = get(kv, "seed", TrainConfig::default().seed)?;
        let r: usize = get(kv, "r", 20)?;
        let n_planted: usize = get(kv, "planted", 40)?;
        let synth = SyntheticSpec {
            r,
            n_per_class: get(kv, "n_per_class", 100)?,
            planted_edges: planted_module(r, n_planted, seed),
            effect_size: get(kv, "effect", 0.6)?,
            n_subtypes: get(kv, "subtypes", 1)?,
            subtype_edge_overlap: get(kv, "overlap", 0.0)?,
            noise_std: get(kv, "noise", 0.05)?,
            n_sites: get(kv, "sites", 1)?,
            site_effect: get(kv, "site_effect", 0.0)?,
            seed,
        };
        let base = ModelConfig::for_rois(r);
        let d = get(kv, "d", r)?;
        let model = ModelConfig {
            r,
            d,
            hidden_enc: get(kv, "hidden_enc", base.hidden_enc)?,
            n_blocks: get(kv, "n_blocks", base.n_blocks)?,
            n_heads: get(kv, "n_heads", base.n_heads)?,
            tau_gumbel: get(kv, "tau_gumbel", base.tau_gumbel)?,
            softmax_temp: get(kv, "softmax_temp", base.softmax_temp)?,
            dropout: get(kv, "dropout", base.dropout)?,
            attn_hidden: get(kv, "attn_hidden", quarter_edges(r))?,
            dec_hidden: get(kv, "dec_hidden", quarter_edges(r))?,
            n_classes: 2,
        };
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            lr_step1: get(kv, "lr_step1", defaults.lr_step1)?,
            lr_step2: get(kv, "lr_step2", defaults.lr_step2)?,
            batch_size: get(kv, "batch_size", defaults.batch_size)?,
            weight_decay: get(kv, "weight_decay", defaults.weight_decay)?,
            lambda_recon: get(kv, "lambda_recon", defaults.lambda_recon)?,
            lambda_class: get(kv, "lambda_class", defaults.lambda_class)?,
            epochs: get(kv, "epochs", defaults.epochs)?,
            seed,
            ablations: Ablations::parse(kv.get("ablate").unwrap_or(""))?,
        };
        let default_split = if command == "analyze" { Partition::All } else { Partition::Test };
        let cfg = RunConfig {
            command: command.to_string(),
            data: kv.get("data").map(PathBuf::from),
            out: kv.get("out").map_or_else(|| default_out(command, kv.get("run")), PathBuf::from),
            run: kv.get("run").map(PathBuf::from),
            seed,
            synth,
            n_planted,
            model,
            train,
            fractions: (get(kv, "train_frac", 0.6)?, get(kv, "val_frac", 0.2)?, get(kv, "test_frac", 0.2)?),
            folds: get(kv, "folds", 0)?,
            split: get(kv, "split", default_split)?,
            extreme_mode: get(kv, "extreme_mode", ExtremeMode::default())?,
            k: get(kv, "k", 3)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> crate::Result<()> {
        self.train.validate()?;
        if self.command == "train" {
            self.model.validate()?;
        }
        if self.folds == 1 || self.folds == 2 {
            return Err(Error::Config(format!("folds must be 0 (single split) or at least 3, got {}", self.folds)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    /// All settings as `key = value` lines, paths included.
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.set("command", &self.command);
        if let Some(d) = &self.data {
            kv.set("data", d.display());
        }
        kv.set("out", self.out.display());
        if let Some(r) = &self.run {
            kv.set("run", r.display());
        }
        kv.set("seed", self.seed);
        let s = &self.synth;
        kv.set("r", s.r);
        kv.set("n_per_class", s.n_per_class);
        kv.set("planted", self.n_planted);
        kv.set("effect", s.effect_size);
        kv.set("subtypes", s.n_subtypes);
        kv.set("overlap", s.subtype_edge_overlap);
        kv.set("noise", s.noise_std);
        kv.set("sites", s.n_sites);
        kv.set("site_effect", s.site_effect);
        let m = &self.model;
        kv.set("d", m.d);
        kv.set("hidden_enc", m.hidden_enc);
        kv.set("n_blocks", m.n_blocks);
        kv.set("n_heads", m.n_heads);
        kv.set("tau_gumbel", m.tau_gumbel);
        kv.set("softmax_temp", m.softmax_temp);
        kv.set("dropout", m.dropout);
        kv.set("attn_hidden", m.attn_hidden);
        kv.set("dec_hidden", m.dec_hidden);
        let t = &self.train;
        kv.set("epochs", t.epochs);
        kv.set("lr_step1", t.lr_step1);
        kv.set("lr_step2", t.lr_step2);
        kv.set("batch_size", t.batch_size);
        kv.set("weight_decay", t.weight_decay);
        kv.set("lambda_recon", t.lambda_recon);
        kv.set("lambda_class", t.lambda_class);
        kv.set("ablate", t.ablations.to_list());
        kv.set("train_frac", self.fractions.0);
        kv.set("val_frac", self.fractions.1);
        kv.set("test_frac", self.fractions.2);
        kv.set("folds", self.folds);
        kv.set("split", self.split);
        kv.set("extreme_mode", self.extreme_mode);
        kv.set("k", self.k);
        kv
    }
}

fn default_out(command: &str, run: Option<&str>) -> PathBuf {
    match (command, run) {
        ("eval" | "counter" | "analyze", Some(run)) => Path::new(run).join(command),
        ("synth", _) => PathBuf::from("data"),
        _ => PathBuf::from("runs").join(command),
    }
}

/// A failed command: the library error plus the process exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for CliError {}

trait Stage<T> {
    /// Tags an error with the exit status of the stage it came from;
    /// configuration errors always map to [`EXIT_CONFIG`].
    fn stage(self, code: u8) -> Result<T, CliError>;
}

impl<T> Stage<T> for crate::Result<T> {
    fn stage(self, code: u8) -> Result<T, CliError> {
        self.map_err(|error| {
            let code = if matches!(error, Error::Config(_) | Error::Spec(_)) { EXIT_CONFIG } else { code };
            CliError { code, error }
        })
    }
}

type CliResult<T> = Result<T, CliError>;

/// Layers env, the run's recorded config, the config file and flags.
pub fn resolve(command: &Command) -> CliResult<RunConfig> {
    let flags = command.flags();
    let flag_kv = flags.to_kv();
    let mut kv = KvFile::default();
    if let Ok(seed) = std::env::var(SEED_ENV) {
        kv.set("seed", seed.trim());
    }
    let file_kv = match &flags.config {
        Some(p) => Some(KvFile::read(p).stage(EXIT_CONFIG)?),
        None => None,
    };
    let run = flag_kv.get("run").or_else(|| file_kv.as_ref().and_then(|f| f.get("run"))).map(PathBuf::from);
    if let Some(run) = &run {
        let recorded = run.join(RESOLVED_CONFIG);
        if recorded.exists() {
            let mut inherited = KvFile::read(&recorded).stage(EXIT_CONFIG)?;
            for key in ["command", "out", "run", "split", "extreme_mode", "k"] {
                inherited.remove(key);
            }
            kv.merge(&inherited);
        }
    }
    if let Some(f) = &file_kv {
        kv.merge(f);
        kv.remove("command");
    }
    kv.merge(&flag_kv);
    RunConfig::from_kv(command.name(), &kv).stage(EXIT_CONFIG)
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(&cli.command)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::io(format!("creating {}", cfg.out.display()), e))
        .stage(EXIT_RUNTIME)?;
    write_file(&cfg.out.join(RESOLVED_CONFIG), &cfg.to_kv().render()).stage(EXIT_RUNTIME)?;
    match cli.command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Counter(_) => cmd_counter(&cfg),
        Command::Analyze(_) => cmd_analyze(&cfg),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let ds = generate_synthetic(&cfg.synth).stage(EXIT_CONFIG)?;
    let manifest = save_dataset(&ds, &cfg.out).stage(EXIT_RUNTIME)?;
    println!("wrote {} subjects to {}", ds.len(), manifest.display());
    Ok(())
}

fn data_path(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.data
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset given (use --data or a config with `data = ...`)".into()))
        .stage(EXIT_CONFIG)
}

fn load_data(cfg: &RunConfig) -> CliResult<Dataset> {
    load_dataset(data_path(cfg)?).stage(EXIT_DATA)
}

fn write_splits(path: &Path, parts: &Split) -> crate::Result<()> {
    let mut s = String::from("subject_id,partition\n");
    for (name, ds) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        for rec in ds.records() {
            writeln!(s, "{},{name}", rec.subject_id).unwrap();
        }
    }
    write_file(path, &s)
}

fn metrics_row(label: &str, m: &MetricSet) -> String {
    format!("{label},{},{},{},{}\n", Num(m.auc), Num(m.acc), Num(m.sen), Num(m.spc))
}

const METRICS_HEADER: &str = "split,auc,acc,sen,spc\n";

fn print_metrics(title: &str, rows: &[(&str, MetricSet)]) {
    println!("{title}");
    println!("{:<8} {:>8} {:>8} {:>8} {:>8}", "split", "AUC", "ACC", "SEN", "SPC");
    for (name, m) in rows {
        println!("{name:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", m.auc, m.acc, m.sen, m.spc);
    }
}

/// Trains on one split and writes checkpoint, epoch log, split assignment
/// and metrics into `dir`.
fn train_one(cfg: &RunConfig, ds: &Dataset, parts: &Split, dir: &Path) -> CliResult<(MetricSet, MetricSet)> {
    let model = Model::new(cfg.model.clone(), cfg.train.ablations, cfg.seed).stage(EXIT_CONFIG)?;
    let out = train(&parts.train, &parts.val, model, &cfg.train).stage(EXIT_RUNTIME)?;
    let test = evaluate(&out.best, &parts.test).stage(EXIT_RUNTIME)?.metrics;
    let mut extra = KvFile::default();
    extra.set("best_epoch", out.best_epoch);
    extra.set("epochs", cfg.train.epochs);
    extra.set("lr_step1", cfg.train.lr_step1);
    extra.set("lr_step2", cfg.train.lr_step2);
    extra.set("weight_decay", cfg.train.weight_decay);
    extra.set("batch_size", cfg.train.batch_size);
    extra.set("lambda_recon", cfg.train.lambda_recon);
    extra.set("lambda_class", cfg.train.lambda_class);
    let ck = Checkpoint { model: out.best, seed: cfg.seed, class_names: ds.class_names().to_vec(), extra };
    let run = || -> crate::Result<()> {
        save_checkpoint(&ck, &dir.join(CHECKPOINT_DIR))?;
        write_epoch_log(&dir.join("epoch_log.csv"), &out.logs)?;
        write_splits(&dir.join(SPLITS_FILE), parts)?;
        let body = metrics_row("val", &out.best_val) + &metrics_row("test", &test);
        write_file(&dir.join("metrics.csv"), &format!("{METRICS_HEADER}{body}"))
    };
    run().stage(EXIT_RUNTIME)?;
    println!("best epoch {} (val AUC {:.4})", out.best_epoch, out.best_val.auc);
    Ok((out.best_val, test))
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let ds = load_data(cfg)?;
    if ds.r() != cfg.model.r {
        return Err(Error::Config(format!("dataset has R = {} but the model is configured for r = {}", ds.r(), cfg.model.r)))
            .stage(EXIT_CONFIG);
    }
    if cfg.folds == 0 {
        let parts = split(&ds, cfg.fractions, cfg.seed).stage(EXIT_DATA)?;
        let (val, test) = train_one(cfg, &ds, &parts, &cfg.out)?;
        print_metrics("best checkpoint", &[("val", val), ("test", test)]);
        return Ok(());
    }
    let folds = stratified_folds(&ds, cfg.folds, cfg.seed).stage(EXIT_DATA)?;
    let mut body = String::from("fold,auc,acc,sen,spc\n");
    let mut rows = Vec::new();
    for (i, parts) in folds.iter().enumerate() {
        log::info!("fold {}/{}", i + 1, folds.len());
        let (_, test) = train_one(cfg, &ds, parts, &cfg.out.join(format!("fold{}", i + 1)))?;
        body.push_str(&metrics_row(&(i + 1).to_string(), &test));
        rows.push(test);
    }
    let n = rows.len() as f64;
    let mean = MetricSet {
        auc: rows.iter().map(|m| m.auc).sum::<f64>() / n,
        acc: rows.iter().map(|m| m.acc).sum::<f64>() / n,
        sen: rows.iter().map(|m| m.sen).sum::<f64>() / n,
        spc: rows.iter().map(|m| m.spc).sum::<f64>() / n,
    };
    body.push_str(&metrics_row("mean", &mean));
    write_file(&cfg.out.join("cv_metrics.csv"), &body).stage(EXIT_RUNTIME)?;
    print_metrics("cross-validation (test folds)", &[("mean", mean)]);
    Ok(())
}

fn run_dir(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.run.as_deref().ok_or_else(|| Error::Config("no training run given (use --run)".into())).stage(EXIT_CONFIG)
}

fn load_run(cfg: &RunConfig) -> CliResult<Checkpoint> {
    load_checkpoint(&run_dir(cfg)?.join(CHECKPOINT_DIR)).stage(EXIT_DATA)
}

/// Records of `cfg.split`, looked up in the run's `splits.csv`.
fn partition(cfg: &RunConfig, ds: &Dataset) -> CliResult<Dataset> {
    if cfg.split == Partition::All {
        return Ok(ds.clone());
    }
    let path = run_dir(cfg)?.join(SPLITS_FILE);
    let read = || -> crate::Result<std::collections::HashSet<String>> {
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| Error::Parse { path: path.clone(), line: 1, msg: e.to_string() })?;
        let mut ids = std::collections::HashSet::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::Parse { path: path.clone(), line: 0, msg: e.to_string() })?;
            if row.get(1) == Some(&cfg.split.to_string()) {
                ids.insert(row.get(0).unwrap_or("").to_string());
            }
        }
        Ok(ids)
    };
    let ids = read().stage(EXIT_DATA)?;
    let part = ds.filter(|r| ids.contains(&r.subject_id));
    if part.is_empty() {
        return Err(Error::TooSmall(format!("partition {} is empty", cfg.split))).stage(EXIT_DATA);
    }
    Ok(part)
}

pub fn cmd_eval(cfg: &RunConfig) -> CliResult<()> {
    let ck = load_run(cfg)?;
    let ds = load_data(cfg)?;
    let part = partition(cfg, &ds)?;
    let ev = evaluate(&ck.model, &part).stage(EXIT_RUNTIME)?;
    let mut preds = String::from("subject_id,label,predicted,prob_patient\n");
    for p in &ev.predictions {
        writeln!(preds, "{},{},{},{}", p.subject_id, p.label, p.predicted, Num(p.prob_patient)).unwrap();
    }
    let split = cfg.split.to_string();
    let write = || -> crate::Result<()> {
        write_file(&cfg.out.join("metrics.csv"), &format!("{METRICS_HEADER}{}", metrics_row(&split, &ev.metrics)))?;
        write_file(&cfg.out.join("predictions.csv"), &preds)
    };
    write().stage(EXIT_RUNTIME)?;
    print_metrics(&format!("{} subjects", part.len()), &[(&split, ev.metrics)]);
    Ok(())
}

fn require_prototypes(ck: &Checkpoint) -> CliResult<()> {
    if ck.model.ablations.no_prototype || ck.model.prototypes().is_none() {
        return Err(Error::Config(
            "checkpoint was trained with no_prototype; counter-condition analysis needs class prototypes".into(),
        ))
        .stage(EXIT_CONFIG);
    }
    Ok(())
}

fn write_skipped(path: &Path, skipped: &[(String, String)]) -> crate::Result<()> {
    let mut s = String::from("subject_id,reason\n");
    for (id, reason) in skipped {
        writeln!(s, "{id},\"{}\"", reason.replace('"', "'")).unwrap();
    }
    write_file(path, &s)
}

pub fn cmd_counter(cfg: &RunConfig) -> CliResult<()> {
    let ck = load_run(cfg)?;
    require_prototypes(&ck)?;
    let ds = load_data(cfg)?;
    let part = partition(cfg, &ds)?;
    let eval = counter_condition_classify(&ck.model, &part).stage(EXIT_RUNTIME)?;
    let (reports, skipped) = diff_maps(&ck.model, &part, cfg.extreme_mode).stage(EXIT_RUNTIME)?;
    let mut preds = String::from("subject_id,label,target,predicted,prob_patient\n");
    for p in &eval.predictions {
        writeln!(preds, "{},{},{},{},{}", p.subject_id, p.label, p.target, p.predicted, Num(p.prob_patient)).unwrap();
    }
    let write = || -> crate::Result<()> {
        write_counter_metrics(&cfg.out.join("counter_metrics.csv"), &eval)?;
        write_file(&cfg.out.join("counter_predictions.csv"), &preds)?;
        write_diff_edges(&cfg.out.join("diff_edges.csv"), &reports)?;
        write_skipped(&cfg.out.join("diff_skipped.csv"), &skipped)?;
        write_diff_plotdata(&cfg.out.join("plotdata"), &reports, &ck.class_names)
    };
    write().stage(EXIT_RUNTIME)?;
    print_metrics(
        &format!("counter-condition: {} of {} subjects pass the filter", eval.predictions.len(), eval.n_subjects),
        &[(&cfg.split.to_string(), eval.metrics)],
    );
    println!("diff maps: {} written, {} filtered out", reports.len(), skipped.len());
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfig) -> CliResult<()> {
    let ck = load_run(cfg)?;
    let ds = load_data(cfg)?;
    let part = partition(cfg, &ds)?;
    let stats = mask_statistics(&ck.model, &part).stage(EXIT_RUNTIME)?;
    let write = || -> crate::Result<()> {
        write_mask_stats(&cfg.out.join("mask_stats.csv"), &stats, &ck.class_names)?;
        write_mask_plotdata(&cfg.out.join("plotdata"), &stats, &ck.class_names)
    };
    write().stage(EXIT_RUNTIME)?;
    let top: Vec<String> = stats.dc_rank().iter().take(10).map(usize::to_string).collect();
    println!("top-10 ROIs by |group DC difference|: {}", top.join(" "));

    if ck.model.prototypes().is_none() {
        println!("no prototypes in this checkpoint; skipping subtype analysis");
        return Ok(());
    }
    let (reports, _) = diff_maps(&ck.model, &part, cfg.extreme_mode).stage(EXIT_RUNTIME)?;
    let patients: Vec<_> = reports.iter().filter(|r| r.label == PATIENT).collect();
    let diffs: Vec<Vec<f64>> = patients.iter().map(|r| r.diff.upper()).collect();
    let ids: Vec<String> = patients.iter().map(|r| r.subject_id.clone()).collect();
    let scores: Vec<Option<f64>> = ids
        .iter()
        .map(|id| part.records().iter().find(|r| &r.subject_id == id).and_then(|r| r.clinical_score))
        .collect();
    let res = subtype_cluster(&diffs, part.r(), cfg.k, &scores).stage(EXIT_RUNTIME)?;
    let mut roi = String::from("roi,p_bonferroni\n");
    if let Some(ps) = &res.roi_anova_pvalues {
        for (i, p) in ps.iter().enumerate() {
            writeln!(roi, "{i},{}", Num(*p)).unwrap();
        }
    }
    let score_p = res.score_anova_pvalue.map_or(String::new(), |p| Num(p).to_string());
    let summary = format!("k,n_patients,score_anova_p\n{},{},{score_p}\n", res.k, ids.len());
    let write = || -> crate::Result<()> {
        write_subtypes(&cfg.out.join("subtypes.csv"), &ids, &res)?;
        write_file(&cfg.out.join("subtype_roi_anova.csv"), &roi)?;
        write_file(&cfg.out.join("subtype_summary.csv"), &summary)?;
        write_subtype_plotdata(&cfg.out.join("plotdata"), &res)
    };
    write().stage(EXIT_RUNTIME)?;
    let sizes: Vec<String> =
        (1..=res.k).map(|c| res.assignments.iter().filter(|&&a| a == c).count().to_string()).collect();
    println!("{} subtypes over {} patients, sizes {}", res.k, ids.len(), sizes.join("/"));
    match res.score_anova_pvalue {
        Some(p) => println!("clinical score ANOVA p = {p:.4e}"),
        None => println!("clinical score ANOVA not applicable"),
    }
    Ok(())
}

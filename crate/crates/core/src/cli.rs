//! Command line front end: config parsing, run manifests and the
//! `train` / `translate` / `evaluate` / `visualize-latent` / `sample-grid`
//! subcommands.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_pipeline::image_io::{load_image, save_image};
use crate::data_pipeline::{dump_dataset, list_images, load_dataset, split_train_test, Dataset, Split};
use crate::evaluation::{
    latent_cluster_report, run_all_settings, run_experiment_setting, sample_grid, ClassifierConfig, EvalMetrics,
    Setting, TsneConfig,
};
use crate::trainer::{load_checkpoint, translate, RunOptions, TrainConfig, TrainState, Trainer};
use crate::{Error, Result};

/// Number of data loading threads; 0 loads in the training thread.
pub const WORKERS_ENV: &str = "STYLESHIFT_NUM_WORKERS";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Parser)]
#[command(name = "styleshift", version, about = "Multi-domain style-conditioned image translation")]
pub struct Cli {
    /// Overrides the seed of the config or checkpoint.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a config, or continue from a checkpoint.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run directory. Defaults to `runs/<config hash>` for new runs and
        /// to the checkpoint's run directory when resuming.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the loaded dataset as `<dir>/<domain>/*.png`.
        #[arg(long, value_name = "DIR")]
        dump_synthetic: Option<PathBuf>,
    },
    /// Translate one image to a target domain.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Target domain name.
        #[arg(long)]
        domain: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Classifier-based evaluation of a checkpoint's translations.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        setting: SettingArg,
        /// Report path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Silhouettes and t-SNE plots of dataset images and their latents.
    VisualizeLatent {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        /// Which images of the checkpoint's dataset to embed.
        #[arg(long, value_enum, default_value = "all")]
        images: ImageSet,
    },
    /// Grid of every image in a folder translated to every domain.
    SampleGrid {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ImageSet {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SettingArg {
    Ssc,
    Sc,
    Cc,
    All,
}

/// Reads a TOML config. Missing keys take their defaults; unknown keys,
/// type mismatches and invalid values are errors naming the key path.
pub fn parse_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<TrainConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config(e.to_string().trim_end().to_string()))?;
    let config: TrainConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let message = e.into_inner().message().to_string();
        if key == "." {
            Error::config(message)
        } else {
            Error::config_at(key, message)
        }
    })?;
    config.validate()?;
    Ok(config)
}

/// Content hash of a config, computed like a git blob id over its
/// canonical TOML echo, but with SHA-256.
pub fn config_hash(config: &TrainConfig) -> String {
    let echo = config_echo(config);
    let mut h = Sha256::new();
    h.update(format!("config {}\0", echo.len()).as_bytes());
    h.update(echo.as_bytes());
    hex::encode(h.finalize())
}

pub fn config_echo(config: &TrainConfig) -> String {
    toml::to_string(config).expect("configs always serialize")
}

/// One invocation's record in a run directory's `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub started: String,
    pub finished: Option<String>,
    /// Run directory contents, relative to the run directory.
    pub layout: Vec<String>,
    /// TOML echo, parseable with [`parse_config_str`].
    pub config: String,
}

impl RunManifest {
    fn new(command: &str, config: &TrainConfig) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash(config),
            seed: config.seed,
            started: now(),
            finished: None,
            layout: ["manifest.jsonl", "metrics.csv", "checkpoints/ckpt_<iteration>.ckpt", "samples/grid_<iteration>.png"]
                .map(String::from)
                .to_vec(),
            config: config_echo(config),
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Appends `entry` as one JSON line.
pub fn append_manifest(dir: &Path, entry: &RunManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    let line = serde_json::to_string(entry).expect("manifest serializes");
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Data worker count from the environment, 0 when unset.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::config_at(WORKERS_ENV, format!("expected a thread count, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on failure with a single
/// `error[<kind>]: <message>` line on stderr, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}

struct Loaded {
    state: TrainState,
    dataset: Dataset,
    split: Split,
    seed: u64,
}

fn load(ckpt: &Path, seed: Option<u64>) -> Result<Loaded> {
    let state = load_checkpoint(ckpt)?;
    let dataset = load_dataset(&state.config.dataset)?;
    // the split follows the training run, the seed override only reseeds evaluation
    let split = split_train_test(&dataset, state.config.dataset.test_fraction, state.config.seed)?;
    let seed = seed.unwrap_or(state.config.seed);
    Ok(Loaded { state, dataset, split, seed })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct EvalReport<'a> {
    checkpoint: String,
    iteration: u64,
    seed: u64,
    classifier: ClassifierConfig,
    settings: Vec<(Setting, EvalMetrics)>,
    config: &'a TrainConfig,
}

pub fn execute(cli: &Cli) -> Result<()> {
    let workers = workers_from_env()?;
    match &cli.command {
        Command::Train { config, resume, out, dump_synthetic } => {
            let opts = |dir: PathBuf| RunOptions { out_dir: Some(dir), workers };
            let mut trainer = match resume {
                Some(ckpt) => {
                    if config.is_some() {
                        return Err(Error::config("--config and --resume are exclusive, the checkpoint carries its config"));
                    }
                    let dir = match out {
                        Some(d) => d.clone(),
                        None => ckpt
                            .parent()
                            .and_then(Path::parent)
                            .map(Path::to_path_buf)
                            .ok_or_else(|| Error::config(format!("cannot infer the run directory of {}", ckpt.display())))?,
                    };
                    let trainer = Trainer::resume(ckpt, opts(dir))?;
                    if let Some(s) = cli.seed.filter(|&s| s != trainer.state.config.seed) {
                        return Err(Error::config_at(
                            "seed",
                            format!("--seed {s} differs from the checkpoint's seed {}", trainer.state.config.seed),
                        ));
                    }
                    trainer
                }
                None => {
                    let path = config.as_ref().expect("clap requires --config without --resume");
                    let mut cfg = parse_config(path)?;
                    if let Some(s) = cli.seed {
                        cfg.seed = s;
                    }
                    let dir = out.clone().unwrap_or_else(|| Path::new("runs").join(&config_hash(&cfg)[..12]));
                    Trainer::new(cfg, opts(dir))?
                }
            };
            let dir = trainer.out_dir().expect("run directory set").to_path_buf();
            if let Some(d) = dump_synthetic {
                dump_dataset(trainer.dataset(), d)?;
            }
            let mut manifest = RunManifest::new(if resume.is_some() { "train --resume" } else { "train" }, &trainer.state.config);
            append_manifest(&dir, &manifest)?;
            trainer.run()?;
            manifest.finished = Some(now());
            append_manifest(&dir, &manifest)?;
            log::info!("run finished at iteration {} in {}", trainer.state.iteration, dir.display());
            Ok(())
        }
        Command::Translate { ckpt, input, domain, output } => {
            let state = load_checkpoint(ckpt)?;
            let ds = &state.config.dataset;
            let target = ds.domain_index(domain).ok_or_else(|| {
                Error::config_at("domain", format!("unknown domain `{domain}`, expected one of {:?}", ds.domain_names))
            })?;
            let image = load_image(input, ds.crop_size, ds.image_size)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(state.config.seed));
            let y = translate(&state.nets, &image, target, None, &mut rng)?;
            save_image(&y, output)
        }
        Command::Evaluate { ckpt, setting, out } => {
            let l = load(ckpt, cli.seed)?;
            let cfg = ClassifierConfig::default();
            let nets = &l.state.nets;
            let settings = match setting {
                SettingArg::All => {
                    let r = run_all_settings(nets, &l.dataset, &l.split, &cfg, l.seed)?;
                    Setting::ALL.iter().map(|&s| (s, r.get(s).clone())).collect()
                }
                one => {
                    let s = match one {
                        SettingArg::Ssc => Setting::Ssc,
                        SettingArg::Sc => Setting::Sc,
                        _ => Setting::Cc,
                    };
                    vec![(s, run_experiment_setting(s, nets, &l.dataset, &l.split, &cfg, l.seed)?)]
                }
            };
            for (s, m) in &settings {
                log::info!("{s}: accuracy {:.4} f1 {:.4}", m.accuracy, m.f1);
            }
            let report = EvalReport {
                checkpoint: ckpt.display().to_string(),
                iteration: l.state.iteration,
                seed: l.seed,
                classifier: cfg,
                settings,
                config: &l.state.config,
            };
            write_json(out, &report)
        }
        Command::VisualizeLatent { ckpt, out, perplexity, images } => {
            let l = load(ckpt, cli.seed)?;
            let indices: Vec<usize> = match images {
                ImageSet::Train => l.split.train.clone(),
                ImageSet::Test => l.split.test.clone(),
                ImageSet::All => (0..l.dataset.len()).collect(),
            };
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let tsne = TsneConfig { perplexity: *perplexity, ..Default::default() };
            let report = latent_cluster_report(&l.state.nets, &l.dataset, &indices, &tsne, l.seed, Some(out))?;
            write_json(&out.join("latent_report.json"), &report)
        }
        Command::SampleGrid { ckpt, inputs, out } => {
            let state = load_checkpoint(ckpt)?;
            let ds = &state.config.dataset;
            let images: Vec<Array3<f32>> =
                list_images(inputs)?.iter().map(|p| load_image(p, ds.crop_size, ds.image_size)).collect::<Result<_>>()?;
            if images.is_empty() {
                return Err(Error::Data(format!("no images in {}", inputs.display())));
            }
            let grid = sample_grid(&state.nets, &images, cli.seed.unwrap_or(state.config.seed))?;
            save_image(&grid, out)
        }
    }
}

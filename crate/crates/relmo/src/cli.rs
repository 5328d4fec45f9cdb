//! Command-line surface: data generation, training, evaluation,
//! prediction export, correlation analysis, and gradient verification.
//!
//! Every command is deterministic given its flags and seed. The seed
//! resolves as: explicit flag or config value first, then the
//! `RELMO_SEED` environment variable, then 42.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure. [`CliError::exit_code`] carries the mapping; the binary's
//! `main` applies it.

use crate::analysis::{export_pcc_csv, pcc_matrix, AnalysisError};
use crate::data::{
    generate_dataset, load_dataset, save_dataset, DataError, Scene, SceneDims,
};
use crate::metrics::MetricsError;
use crate::model::{
    load_checkpoint, save_checkpoint, Ablation, ModelConfig, ModelError, ModelParams,
};
use crate::train::{
    evaluate, train, write_log_csv, LossMode, TrainConfig, TrainError,
};
use crate::verify::{verify_gradients, VerifyError};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Fallback seed when neither a flag nor `RELMO_SEED` provides one.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag values or out-of-range indices. Exit 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed, or mismatched files and configs. Exit 2.
    #[error("{0}")]
    Data(String),
    /// A gradient check ran and failed. Exit 3.
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

macro_rules! data_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error_from!(DataError, ModelError, TrainError, MetricsError, AnalysisError, std::io::Error);

#[derive(Debug, Parser)]
#[command(
    name = "relmo",
    version,
    about = "Collaborative multi-person motion prediction at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-person dataset (.mmp).
    GenData {
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        /// Persons per scene.
        #[arg(long, default_value_t = 2)]
        persons: usize,
        /// Observed frames per scene.
        #[arg(long, default_value_t = 15)]
        frames_obs: usize,
        /// Predicted (future) frames per scene.
        #[arg(long, default_value_t = 15)]
        frames_pred: usize,
        /// Joints per person.
        #[arg(long, default_value_t = 15)]
        joints: usize,
        /// Generator seed (falls back to RELMO_SEED, then 42).
        #[arg(long)]
        seed: Option<u64>,
        /// Person-coupling strength; 0 makes persons fully independent.
        #[arg(long, default_value_t = 1.0)]
        interaction: f64,
    },
    /// Train a model described by a JSON run config.
    Train {
        /// Run config (JSON with `model`, `train`, `data`, `seed`).
        #[arg(long)]
        config: PathBuf,
        /// Where to write the trained checkpoint.
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Where to write the per-epoch CSV log.
        #[arg(long)]
        log: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and print metric reports.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset to score (.mmp).
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated 0-based frame indices (default: every
        /// predicted frame).
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
    },
    /// Export a checkpoint's predictions on a dataset as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV: scene, person, frame, joint, x, y, z.
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Joint-to-joint correlation matrix between two persons of one scene.
    Pcc {
        #[arg(long)]
        data: PathBuf,
        /// Scene index within the dataset.
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long)]
        person_a: usize,
        #[arg(long)]
        person_b: usize,
        /// Output CSV holding the joints × joints matrix.
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        /// Seed for parameters and the probe scene (falls back to
        /// RELMO_SEED, then 42).
        #[arg(long)]
        seed: Option<u64>,
        /// Optional run config; its `model` section replaces the built-in
        /// toy architecture. Dropout must be 0.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

// ------------------------------------------------------------ run config

/// Top-level JSON run config. Unknown keys anywhere are rejected so a
/// typo cannot silently disable an ablation or hyperparameter.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub data: DataSection,
    /// Run seed; omitted → RELMO_SEED → 42.
    pub seed: Option<u64>,
}

/// Training hyperparameters; every field optional, defaulting to
/// [`TrainConfig::default`].
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub lr_decay_every: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub weight_decay: Option<f64>,
    pub loss_mode: Option<LossMode>,
    pub ablation: Option<Ablation>,
}

impl TrainSection {
    fn to_train_config(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            lr_decay_every: self.lr_decay_every.unwrap_or(d.lr_decay_every),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed,
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            loss_mode: self.loss_mode.unwrap_or(d.loss_mode),
            ablation: self.ablation.unwrap_or_default(),
        }
    }
}

/// Where training data comes from: a `.mmp` file (`path`) or the
/// synthetic generator (`scenes` + optional `interaction`/`seed`, with
/// dimensions taken from the model section).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub scenes: Option<usize>,
    pub interaction: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Data(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Data(format!("cannot parse config {}: {e}", path.display()))
        })
    }

    /// Materialize the configured dataset.
    fn load_data(&self, run_seed: u64) -> Result<Vec<Scene>, CliError> {
        match (&self.data.path, self.data.scenes) {
            (Some(path), None) => {
                if self.data.interaction.is_some() || self.data.seed.is_some() {
                    return Err(CliError::Data(
                        "data.interaction and data.seed apply only to synthetic data; \
                         remove them or drop data.path"
                            .into(),
                    ));
                }
                Ok(load_dataset(path)?)
            }
            (None, Some(count)) => {
                let dims = SceneDims {
                    persons: self.model.persons,
                    obs_frames: self.model.obs_frames,
                    pred_frames: self.model.pred_frames,
                    joints: self.model.joints,
                };
                let seed = self.data.seed.unwrap_or(run_seed);
                let strength = self.data.interaction.unwrap_or(1.0);
                Ok(generate_dataset(dims, count, seed, strength)?)
            }
            (Some(_), Some(_)) => Err(CliError::Data(
                "data section sets both path and scenes; choose one source".into(),
            )),
            (None, None) => Err(CliError::Data(
                "data section needs either path (a .mmp file) or scenes (synthetic)".into(),
            )),
        }
    }
}

// ------------------------------------------------------------- plumbing

/// Flag value, then `RELMO_SEED`, then [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("RELMO_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "RELMO_SEED must be an unsigned integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn load_scored_pair(
    checkpoint: &Path,
    data: &Path,
) -> Result<(ModelConfig, ModelParams, Vec<Scene>), CliError> {
    let (cfg, params) = load_checkpoint(checkpoint)?;
    let scenes = load_dataset(data)?;
    let d = scenes[0].dims();
    if d.persons != cfg.persons
        || d.joints != cfg.joints
        || d.obs_frames != cfg.obs_frames
        || d.pred_frames != cfg.pred_frames
    {
        return Err(CliError::Data(format!(
            "checkpoint was trained for persons={} joints={} obs={} pred={}, \
             but {} holds persons={} joints={} obs={} pred={}",
            cfg.persons,
            cfg.joints,
            cfg.obs_frames,
            cfg.pred_frames,
            data.display(),
            d.persons,
            d.joints,
            d.obs_frames,
            d.pred_frames
        )));
    }
    Ok((cfg, params, scenes))
}

// ------------------------------------------------------------- commands

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            out,
            scenes,
            persons,
            frames_obs,
            frames_pred,
            joints,
            seed,
            interaction,
        } => cmd_gen_data(
            &out, scenes, persons, frames_obs, frames_pred, joints, seed, interaction,
        ),
        Command::Train {
            config,
            out_checkpoint,
            log,
        } => cmd_train(&config, &out_checkpoint, &log),
        Command::Eval {
            checkpoint,
            data,
            horizons,
        } => cmd_eval(&checkpoint, &data, &horizons),
        Command::Predict {
            checkpoint,
            data,
            out_csv,
        } => cmd_predict(&checkpoint, &data, &out_csv),
        Command::Pcc {
            data,
            scene,
            person_a,
            person_b,
            out_csv,
        } => cmd_pcc(&data, scene, person_a, person_b, &out_csv),
        Command::Gradcheck { seed, config } => cmd_gradcheck(seed, config.as_deref()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_data(
    out: &Path,
    scenes: usize,
    persons: usize,
    frames_obs: usize,
    frames_pred: usize,
    joints: usize,
    seed: Option<u64>,
    interaction: f64,
) -> Result<(), CliError> {
    let usage = |m: String| Err(CliError::Usage(m));
    if scenes == 0 {
        return usage("--scenes must be >= 1".into());
    }
    if persons == 0 {
        return usage("--persons must be >= 1".into());
    }
    if joints < 2 {
        return usage(format!("--joints must be >= 2, got {joints}"));
    }
    if frames_obs < 2 {
        return usage(format!("--frames-obs must be >= 2, got {frames_obs}"));
    }
    if frames_pred == 0 {
        return usage("--frames-pred must be >= 1".into());
    }
    if !interaction.is_finite() || interaction < 0.0 {
        return usage(format!(
            "--interaction must be finite and >= 0, got {interaction}"
        ));
    }
    let seed = resolve_seed(seed)?;
    let dims = SceneDims {
        persons,
        obs_frames: frames_obs,
        pred_frames: frames_pred,
        joints,
    };
    let dataset = generate_dataset(dims, scenes, seed, interaction)?;
    save_dataset(&dataset, out)?;
    let bytes = std::fs::metadata(out)?.len();
    println!(
        "wrote {}: {} scenes, N={} T={} P={} J={}, {} bytes",
        out.display(),
        scenes,
        persons,
        frames_obs,
        frames_pred,
        joints,
        bytes
    );
    Ok(())
}

fn cmd_train(config: &Path, out_checkpoint: &Path, log: &Path) -> Result<(), CliError> {
    let rc = RunConfig::from_path(config)?;
    let seed = resolve_seed(rc.seed)?;
    let scenes = rc.load_data(seed)?;
    let train_cfg = rc.train.to_train_config(seed);
    let (state, logs) = train(&scenes, &rc.model, &train_cfg)?;
    for l in &logs {
        println!(
            "epoch {:>4}  lr {:.3e}  loss {:.6e}  mpjpe {:.6e}  vim {:.6e}",
            l.epoch, l.lr, l.train_loss, l.mpjpe, l.vim_avg
        );
    }
    save_checkpoint(&rc.model, &state.params, out_checkpoint)?;
    write_log_csv(&logs, log)?;
    let last = logs.last();
    println!(
        "saved checkpoint {} and log {} after {} epochs (final mpjpe {})",
        out_checkpoint.display(),
        log.display(),
        logs.len(),
        last.map_or("n/a".to_string(), |l| format!("{:.6e}", l.mpjpe)),
    );
    Ok(())
}

fn resolve_horizons(requested: &[usize], pred_frames: usize) -> Result<Vec<usize>, CliError> {
    if requested.is_empty() {
        return Ok((0..pred_frames).collect());
    }
    for &h in requested {
        if h >= pred_frames {
            return Err(CliError::Usage(format!(
                "--horizons entry {h} out of range: the model predicts {pred_frames} \
                 frames (0-based indices)"
            )));
        }
    }
    Ok(requested.to_vec())
}

fn cmd_eval(checkpoint: &Path, data: &Path, horizons: &[usize]) -> Result<(), CliError> {
    let (cfg, params, scenes) = load_scored_pair(checkpoint, data)?;
    let horizons = resolve_horizons(horizons, cfg.pred_frames)?;
    let report = evaluate(&scenes, &params, &cfg, Ablation::default(), &horizons)?;
    print!("{}", report.vim.to_csv());
    print!("{}", report.mpjpe.to_csv());
    println!("mpjpe,all,{:.16e}", report.mpjpe_all);
    Ok(())
}

fn cmd_predict(checkpoint: &Path, data: &Path, out_csv: &Path) -> Result<(), CliError> {
    let (cfg, params, scenes) = load_scored_pair(checkpoint, data)?;
    let mut params = params;
    let mut out = String::from("scene,person,frame,joint,x,y,z\n");
    let mut rows = 0usize;
    for (si, scene) in scenes.iter().enumerate() {
        let pose = crate::model::predict(scene, &mut params, &cfg, Ablation::default())?;
        for n in 0..pose.persons {
            for t in 0..pose.frames {
                for j in 0..pose.joints {
                    let p = pose.get(n, t, j);
                    out.push_str(&format!("{si},{n},{t},{j},{},{},{}\n", p[0], p[1], p[2]));
                    rows += 1;
                }
            }
        }
    }
    std::fs::write(out_csv, out)?;
    println!("wrote {} rows to {}", rows, out_csv.display());
    Ok(())
}

fn cmd_pcc(
    data: &Path,
    scene: usize,
    person_a: usize,
    person_b: usize,
    out_csv: &Path,
) -> Result<(), CliError> {
    let scenes = load_dataset(data)?;
    if scene >= scenes.len() {
        return Err(CliError::Usage(format!(
            "--scene {scene} out of range: dataset holds {} scenes",
            scenes.len()
        )));
    }
    let persons = scenes[scene].dims().persons;
    for (flag, p) in [("--person-a", person_a), ("--person-b", person_b)] {
        if p >= persons {
            return Err(CliError::Usage(format!(
                "{flag} {p} out of range: scenes have {persons} persons"
            )));
        }
    }
    let matrix = pcc_matrix(&scenes[scene], person_a, person_b)?;
    export_pcc_csv(&matrix, out_csv)?;
    println!(
        "wrote {}x{} matrix to {} (mean |r| {:.6}, {} degenerate entries)",
        matrix.joints,
        matrix.joints,
        out_csv.display(),
        matrix.mean_abs(),
        matrix.degenerate_count()
    );
    Ok(())
}

fn cmd_gradcheck(seed: Option<u64>, config: Option<&Path>) -> Result<(), CliError> {
    let seed = resolve_seed(seed)?;
    let cfg = match config {
        Some(path) => RunConfig::from_path(path)?.model,
        None => ModelConfig::toy(),
    };
    // Central differences cost two forward passes per parameter
    // component; hold the line at toy-adjacent sizes.
    const MAX_COMPONENTS: usize = 20_000;
    let components = ModelParams::init(&cfg, seed)
        .map_err(CliError::from)?
        .trainable_len();
    if components > MAX_COMPONENTS {
        return Err(CliError::Usage(format!(
            "config has {components} trainable components; finite-difference \
             checking is limited to {MAX_COMPONENTS} (use a smaller architecture)"
        )));
    }
    let report = verify_gradients(&cfg, seed).map_err(|e| match e {
        VerifyError::DropoutEnabled { .. } => CliError::Data(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    print!("{}", report.summary());
    if report.pass() {
        Ok(())
    } else {
        let w = report.full_model.worst();
        Err(CliError::Verification(format!(
            "gradient check failed: {}[{}] rel err {:.3e} exceeds {:.0e}",
            w.name, w.worst_index, w.max_rel_err, report.threshold
        )))
    }
}

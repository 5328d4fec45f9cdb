//! Loss, optimizer, schedule, and the train/eval loops.
//!
//! The loss is a per-element mean squared error with two terms: one on
//! predicted positions, one on predicted frame-to-frame velocities (where
//! the first predicted frame differences against the last observed frame).
//! Optimization is AdamW — bias-corrected moments with decoupled weight
//! decay applied to weight matrices only — under a step schedule that
//! scales the learning rate by a fixed factor every few epochs.
//!
//! Training processes scenes one at a time, accumulating gradients to the
//! configured batch size. Everything is deterministic in the seed: data
//! order, dropout, and parameter init derive from independent streams, so
//! two runs with equal seeds match bit for bit.

use crate::data::Scene;
use crate::metrics::{mpjpe, vim_report, HorizonReport, MetricsError};
use crate::model::net::{forward_full, scene_loss_ids};
use crate::model::{Ablation, ModelConfig, ModelError, ModelParams};
use crate::rng::DetRng;
use crate::tensor::{Tape, TapeError};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad train config: {reason}")]
    BadConfig { reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite gradient in parameter {name:?}")]
    NonFiniteGrad { name: String },
    #[error("gradient for {name:?} has length {got}, expected {expected}")]
    GradShape { name: String, got: usize, expected: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Which loss terms are active.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Position,
    Velocity,
    #[default]
    Both,
}

/// Training hyperparameters. Defaults follow the desk-scale recipe:
/// small learning rate, step decay of 0.8 every 10 epochs, batch 8.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `lr_decay_every`
    /// epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub loss_mode: LossMode,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            lr_decay: 0.8,
            lr_decay_every: 10,
            batch_size: 8,
            epochs: 50,
            seed: 42,
            weight_decay: 1e-2,
            loss_mode: LossMode::Both,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |reason: String| Err(TrainError::BadConfig { reason });
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_decay_every == 0 {
            return bad("lr decay interval must be >= 1 epoch".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Stepped learning rate: `lr0 * decay^(epoch / every)`.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.learning_rate * cfg.lr_decay.powi((epoch / cfg.lr_decay_every) as i32)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state: parameters plus per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    first_moment: HashMap<String, Vec<f64>>,
    second_moment: HashMap<String, Vec<f64>>,
    pub step: usize,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        let mut first = HashMap::new();
        let mut second = HashMap::new();
        for e in params.entries().iter().filter(|e| e.trainable) {
            first.insert(e.name.clone(), vec![0.0; e.len()]);
            second.insert(e.name.clone(), vec![0.0; e.len()]);
        }
        TrainState {
            params,
            first_moment: first,
            second_moment: second,
            step: 0,
            epoch: 0,
        }
    }
}

/// One AdamW update over every trainable parameter. `grads` must hold one
/// gradient vector per trainable entry; decay applies directly to the
/// weights (decoupled), and only to entries flagged for it.
pub fn adamw_step(
    state: &mut TrainState,
    grads: &HashMap<String, Vec<f64>>,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..state.params.entries().len() {
        let e = state.params.entry_mut_by_index(i);
        if !e.trainable {
            continue;
        }
        let name = e.name.clone();
        let g = grads
            .get(&name)
            .ok_or_else(|| TrainError::GradShape {
                name: name.clone(),
                got: 0,
                expected: e.len(),
            })?;
        if g.len() != e.len() {
            return Err(TrainError::GradShape {
                name,
                got: g.len(),
                expected: e.len(),
            });
        }
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            let _ = k;
            return Err(TrainError::NonFiniteGrad { name });
        }
        let m = state.first_moment.get_mut(&name).expect("moment buffer");
        let v = state.second_moment.get_mut(&name).expect("moment buffer");
        let decay = e.decay && weight_decay > 0.0;
        for j in 0..g.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            if decay {
                e.data[j] -= lr * weight_decay * e.data[j];
            }
            e.data[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Loss values of one scene, all terms evaluated.
#[derive(Debug, Clone, Copy)]
pub struct SceneLoss {
    pub position: f64,
    pub velocity: f64,
    pub total: f64,
}

/// One row of the per-epoch log. The CSV export carries the five columns
/// `epoch, lr, train_loss, mpjpe, vim_avg`; the split loss terms ride
/// along in the struct for consumers that audit term additivity.
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub mpjpe: f64,
    pub vim_avg: f64,
    pub loss_position: f64,
    pub loss_velocity: f64,
}

/// Write the per-epoch log as CSV (`epoch, lr, train_loss, mpjpe,
/// vim_avg`).
pub fn write_log_csv(logs: &[EpochLog], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let mut out = String::from("epoch,lr,train_loss,mpjpe,vim_avg\n");
    for l in logs {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            l.epoch, l.lr, l.train_loss, l.mpjpe, l.vim_avg
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn tape_seed(seed: u64, step: usize, scene: usize) -> u64 {
    DetRng::derive(seed, 0x7472_0000 ^ ((step as u64) << 16) ^ scene as u64).next_u64()
}

/// Forward + loss for one scene on a fresh tape. Returns the tape (for
/// backward), the loss tensor, and the evaluated terms.
fn scene_forward_loss(
    scene: &Scene,
    params: &mut ModelParams,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    training: bool,
) -> Result<(Tape, crate::tensor::TensorId, crate::model::net::Bound, SceneLoss), TrainError> {
    let mut tape = Tape::with_seed(seed);
    let (preds, bound) = forward_full(
        &mut tape,
        scene,
        params,
        model_cfg,
        training,
        train_cfg.ablation,
    )?;
    let (pos_id, vel_id) = scene_loss_ids(&mut tape, model_cfg, scene, &preds)?;
    let total_id = match train_cfg.loss_mode {
        LossMode::Position => pos_id,
        LossMode::Velocity => vel_id,
        LossMode::Both => tape.add(pos_id, vel_id)?,
    };
    let loss = SceneLoss {
        position: tape.scalar_value(pos_id),
        velocity: tape.scalar_value(vel_id),
        total: tape.scalar_value(total_id),
    };
    Ok((tape, total_id, bound, loss))
}

/// Evaluate the loss of one scene without training side effects (eval
/// mode, parameters untouched).
pub fn scene_loss(
    scene: &Scene,
    params: &ModelParams,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<SceneLoss, TrainError> {
    let mut cloned = params.clone();
    let (_, _, _, loss) =
        scene_forward_loss(scene, &mut cloned, model_cfg, train_cfg, 0, false)?;
    Ok(loss)
}

/// Metric summary of a dataset under fixed parameters (eval mode).
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub vim: HorizonReport,
    pub mpjpe: HorizonReport,
    /// Mean per-joint error over the whole predicted window.
    pub mpjpe_all: f64,
}

/// Eval-mode metrics averaged over a dataset: per-horizon displacement
/// norms, per-horizon prefix mean joint errors, and the full-window mean
/// joint error.
pub fn evaluate(
    scenes: &[Scene],
    params: &ModelParams,
    model_cfg: &ModelConfig,
    ablation: Ablation,
    horizons: &[usize],
) -> Result<EvalReport, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut cloned = params.clone();
    let mut vim_sum: Option<HorizonReport> = None;
    let mut mpjpe_sum: Option<HorizonReport> = None;
    let mut all = 0.0;
    for scene in scenes {
        let pose = crate::model::predict(scene, &mut cloned, model_cfg, ablation)?;
        let truth = scene.future();
        let v = vim_report(&pose, &truth, horizons)?;
        let m = crate::metrics::mpjpe_report(&pose, &truth, horizons)?;
        all += mpjpe(&pose, &truth)?;
        vim_sum = Some(accumulate(vim_sum, v));
        mpjpe_sum = Some(accumulate(mpjpe_sum, m));
    }
    let n = scenes.len() as f64;
    let mut vim = vim_sum.expect("nonempty");
    let mut mp = mpjpe_sum.expect("nonempty");
    for r in [&mut vim, &mut mp] {
        for e in r.entries.iter_mut() {
            e.1 /= n;
        }
        r.average /= n;
    }
    Ok(EvalReport {
        vim,
        mpjpe: mp,
        mpjpe_all: all / n,
    })
}

fn accumulate(acc: Option<HorizonReport>, add: HorizonReport) -> HorizonReport {
    match acc {
        None => add,
        Some(mut a) => {
            for (e, n) in a.entries.iter_mut().zip(&add.entries) {
                e.1 += n.1;
            }
            a.average += add.average;
            a
        }
    }
}

fn check_dataset(scenes: &[Scene], cfg: &ModelConfig) -> Result<(), TrainError> {
    let first = scenes.first().ok_or(TrainError::EmptyDataset)?;
    let d = first.dims();
    if scenes.iter().any(|s| s.dims() != d) {
        return Err(TrainError::BadConfig {
            reason: "dataset scenes have heterogeneous dimensions".into(),
        });
    }
    if d.persons != cfg.persons
        || d.joints != cfg.joints
        || d.obs_frames != cfg.obs_frames
        || d.pred_frames != cfg.pred_frames
    {
        return Err(TrainError::BadConfig {
            reason: format!(
                "dataset dims (persons {}, joints {}, obs {}, pred {}) do not match \
                 model (persons {}, joints {}, obs {}, pred {})",
                d.persons,
                d.joints,
                d.obs_frames,
                d.pred_frames,
                cfg.persons,
                cfg.joints,
                cfg.obs_frames,
                cfg.pred_frames
            ),
        });
    }
    Ok(())
}

/// Train from fresh parameters. Deterministic in the seed; returns the
/// final optimizer state and one log row per epoch (metrics computed in
/// eval mode on the training set).
pub fn train(
    scenes: &[Scene],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(TrainState, Vec<EpochLog>), TrainError> {
    train_cfg.validate()?;
    model_cfg.validate().map_err(TrainError::Model)?;
    check_dataset(scenes, model_cfg)?;
    let params = ModelParams::init(model_cfg, train_cfg.seed)?;
    let mut state = TrainState::new(params);
    let mut logs = Vec::with_capacity(train_cfg.epochs);
    let horizons: Vec<usize> = (0..model_cfg.pred_frames).collect();

    for epoch in 0..train_cfg.epochs {
        let lr = lr_schedule(train_cfg, epoch);
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        DetRng::derive(train_cfg.seed, 0x0e50_0000 + epoch as u64).shuffle(&mut order);

        let mut acc: HashMap<String, Vec<f64>> = HashMap::new();
        let mut in_batch = 0usize;
        let mut sum = SceneLoss { position: 0.0, velocity: 0.0, total: 0.0 };

        for (i, &si) in order.iter().enumerate() {
            let seed = tape_seed(train_cfg.seed, state.step, si);
            let (mut tape, loss_id, bound, loss) = scene_forward_loss(
                &scenes[si],
                &mut state.params,
                model_cfg,
                train_cfg,
                seed,
                true,
            )?;
            tape.backward(loss_id)?;
            sum.position += loss.position;
            sum.velocity += loss.velocity;
            sum.total += loss.total;
            for (name, tid) in bound.iter() {
                if let Some(g) = tape.grad(tid) {
                    let slot = acc
                        .entry(name.to_string())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    for (a, &x) in slot.iter_mut().zip(g) {
                        *a += x;
                    }
                }
            }
            in_batch += 1;
            if in_batch == train_cfg.batch_size || i + 1 == order.len() {
                let scale = 1.0 / in_batch as f64;
                let mut grads: HashMap<String, Vec<f64>> = HashMap::new();
                for e in state.params.entries().iter().filter(|e| e.trainable) {
                    let g = match acc.remove(&e.name) {
                        Some(mut g) => {
                            g.iter_mut().for_each(|x| *x *= scale);
                            g
                        }
                        None => vec![0.0; e.len()],
                    };
                    grads.insert(e.name.clone(), g);
                }
                adamw_step(&mut state, &grads, lr, train_cfg.weight_decay)?;
                acc.clear();
                in_batch = 0;
            }
        }
        state.epoch = epoch + 1;

        let report = evaluate(
            scenes,
            &state.params,
            model_cfg,
            train_cfg.ablation,
            &horizons,
        )?;
        let n = scenes.len() as f64;
        logs.push(EpochLog {
            epoch,
            lr,
            train_loss: sum.total / n,
            mpjpe: report.mpjpe_all,
            vim_avg: report.vim.average,
            loss_position: sum.position / n,
            loss_velocity: sum.velocity / n,
        });
    }
    Ok((state, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SceneDims, SynthConfig};

    fn toy_dataset(count: usize, seed: u64) -> Vec<Scene> {
        let cfg = ModelConfig::toy();
        (0..count)
            .map(|i| {
                generate_synthetic(&SynthConfig {
                    dims: SceneDims {
                        persons: cfg.persons,
                        obs_frames: cfg.obs_frames,
                        pred_frames: cfg.pred_frames,
                        joints: cfg.joints,
                    },
                    seed: seed + i as u64,
                    interaction_strength: 0.8,
                })
                .unwrap()
            })
            .collect()
    }

    fn quick_cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            epochs,
            batch_size: 2,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_steps_by_factor_every_interval() {
        let cfg = TrainConfig { learning_rate: 1e-5, ..Default::default() };
        for e in 0..10 {
            assert_eq!(lr_schedule(&cfg, e), 1e-5);
        }
        assert!((lr_schedule(&cfg, 10) - 0.8e-5).abs() < 1e-20);
        assert!((lr_schedule(&cfg, 25) - 0.64e-5).abs() < 1e-20);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.lr_decay = 1.5;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn adamw_zero_grads_zero_decay_is_identity() {
        let params = ModelParams::init(&ModelConfig::toy(), 1).unwrap();
        let mut state = TrainState::new(params.clone());
        let grads: HashMap<String, Vec<f64>> = params
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| (e.name.clone(), vec![0.0; e.len()]))
            .collect();
        adamw_step(&mut state, &grads, 0.1, 0.0).unwrap();
        for (a, b) in state.params.entries().iter().zip(params.entries()) {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adamw_descends_a_quadratic() {
        // Treat one bias vector as the optimization variable of
        // f(w) = ||w||²/2, whose gradient is w itself.
        let params = ModelParams::init(&ModelConfig::toy(), 1).unwrap();
        let mut state = TrainState::new(params);
        state.params.get_mut("decoder.bias").unwrap().data = vec![0.6, 0.8];
        let zero_grads = |p: &ModelParams| -> HashMap<String, Vec<f64>> {
            p.entries()
                .iter()
                .filter(|e| e.trainable)
                .map(|e| (e.name.clone(), vec![0.0; e.len()]))
                .collect()
        };
        // One step decreases |w|.
        let mut g = zero_grads(&state.params);
        g.insert("decoder.bias".into(), state.params.get("decoder.bias").unwrap().data.clone());
        adamw_step(&mut state, &g, 0.1, 0.0).unwrap();
        let w = &state.params.get("decoder.bias").unwrap().data;
        let norm = (w[0] * w[0] + w[1] * w[1]).sqrt();
        assert!(norm < 1.0);
        // 200 steps converge behind 1e-2.
        for _ in 0..199 {
            let mut g = zero_grads(&state.params);
            g.insert(
                "decoder.bias".into(),
                state.params.get("decoder.bias").unwrap().data.clone(),
            );
            adamw_step(&mut state, &g, 0.1, 0.0).unwrap();
        }
        let w = &state.params.get("decoder.bias").unwrap().data;
        let norm = (w[0] * w[0] + w[1] * w[1]).sqrt();
        assert!(norm < 1e-2, "after 200 steps |w| = {norm}");
    }

    #[test]
    fn adamw_rejects_non_finite_gradients_by_name() {
        let params = ModelParams::init(&ModelConfig::toy(), 1).unwrap();
        let mut state = TrainState::new(params.clone());
        let mut grads: HashMap<String, Vec<f64>> = params
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| (e.name.clone(), vec![0.0; e.len()]))
            .collect();
        grads.get_mut("proj.w1").unwrap()[3] = f64::NAN;
        match adamw_step(&mut state, &grads, 0.1, 0.0) {
            Err(TrainError::NonFiniteGrad { name }) => assert_eq!(name, "proj.w1"),
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
    }

    #[test]
    fn weight_decay_shrinks_only_flagged_entries() {
        let params = ModelParams::init(&ModelConfig::toy(), 2).unwrap();
        let mut state = TrainState::new(params.clone());
        let grads: HashMap<String, Vec<f64>> = params
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| (e.name.clone(), vec![0.0; e.len()]))
            .collect();
        adamw_step(&mut state, &grads, 0.5, 0.1).unwrap();
        let before = params.get("decoder.weight").unwrap();
        let after = state.params.get("decoder.weight").unwrap();
        for (a, b) in after.data.iter().zip(&before.data) {
            assert!((a - b * (1.0 - 0.05)).abs() < 1e-15);
        }
        // Adjacency is trainable but not decayed.
        assert_eq!(
            state.params.get("intra.block0.adj").unwrap().data,
            params.get("intra.block0.adj").unwrap().data
        );
    }

    #[test]
    fn loss_is_zero_only_for_perfect_prediction() {
        let scenes = toy_dataset(1, 3);
        let cfg = ModelConfig::toy();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let tc = TrainConfig::default();
        let l = scene_loss(&scenes[0], &params, &cfg, &tc).unwrap();
        assert!(l.total > 0.0);
        assert!(l.position >= 0.0 && l.velocity >= 0.0);
    }

    #[test]
    fn loss_terms_are_additive() {
        let scenes = toy_dataset(2, 11);
        let cfg = ModelConfig::toy();
        let params = ModelParams::init(&cfg, 5).unwrap();
        for scene in &scenes {
            let both = scene_loss(
                scene,
                &params,
                &cfg,
                &TrainConfig { loss_mode: LossMode::Both, ..Default::default() },
            )
            .unwrap();
            let pos = scene_loss(
                scene,
                &params,
                &cfg,
                &TrainConfig { loss_mode: LossMode::Position, ..Default::default() },
            )
            .unwrap();
            let vel = scene_loss(
                scene,
                &params,
                &cfg,
                &TrainConfig { loss_mode: LossMode::Velocity, ..Default::default() },
            )
            .unwrap();
            assert!((both.total - (pos.total + vel.total)).abs() < 1e-12);
            assert_eq!(both.position, pos.total);
            assert_eq!(both.velocity, vel.total);
        }
    }

    #[test]
    fn constant_offset_velocity_term_hits_only_the_boundary() {
        // Prediction = truth + delta on every frame: position term sees
        // delta² per element; velocities agree except the first predicted
        // frame (whose predecessor, the last observed frame, is shared).
        let scenes = toy_dataset(1, 17);
        let scene = &scenes[0];
        let cfg = ModelConfig::toy();
        let delta = 0.25;
        let mut tape = Tape::with_seed(0);
        let mut preds = Vec::new();
        for n in 0..cfg.persons {
            let mut ch = scene.future_channels(n);
            ch.iter_mut().for_each(|v| *v += delta);
            preds.push(tape.param(ch, vec![cfg.channels(), cfg.pred_frames]).unwrap());
        }
        let (pos_id, vel_id) = scene_loss_ids(&mut tape, &cfg, scene, &preds).unwrap();
        let pos = tape.scalar_value(pos_id);
        let vel = tape.scalar_value(vel_id);
        assert!((pos - delta * delta).abs() < 1e-12, "position term {pos}");
        // Velocity error: delta² only at the first of P frames, averaged.
        let expect = delta * delta / cfg.pred_frames as f64;
        assert!((vel - expect).abs() < 1e-12, "velocity term {vel}");
    }

    #[test]
    fn training_is_bit_deterministic() {
        let scenes = toy_dataset(3, 21);
        let cfg = ModelConfig::toy();
        let tc = quick_cfg(2, 1e-4);
        let (s1, l1) = train(&scenes, &cfg, &tc).unwrap();
        let (s2, l2) = train(&scenes, &cfg, &tc).unwrap();
        assert_eq!(l1.len(), l2.len());
        for (a, b) in l1.iter().zip(&l2) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.mpjpe.to_bits(), b.mpjpe.to_bits());
        }
        for (a, b) in s1.params.entries().iter().zip(s2.params.entries()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits(), "{}", a.name);
            }
        }
    }

    #[test]
    fn short_training_reduces_loss() {
        let scenes = toy_dataset(4, 31);
        let cfg = ModelConfig::toy();
        let tc = quick_cfg(20, 1e-3);
        let (_, logs) = train(&scenes, &cfg, &tc).unwrap();
        let first = logs.first().unwrap().train_loss;
        let last = logs.last().unwrap().train_loss;
        assert!(
            last < first,
            "training loss went from {first} to {last} without improving"
        );
    }

    #[test]
    fn train_rejects_mismatched_dataset() {
        let cfg = ModelConfig::toy();
        let wrong = generate_synthetic(&SynthConfig {
            dims: SceneDims {
                persons: 2,
                obs_frames: 4,
                pred_frames: 2,
                joints: 5,
            },
            seed: 1,
            interaction_strength: 0.0,
        })
        .unwrap();
        let tc = quick_cfg(1, 1e-4);
        assert!(matches!(
            train(&[wrong], &cfg, &tc),
            Err(TrainError::BadConfig { .. })
        ));
        assert!(matches!(
            train(&[], &cfg, &tc),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn evaluate_is_deterministic_and_matches_training_log() {
        let scenes = toy_dataset(2, 41);
        let cfg = ModelConfig::toy();
        let tc = quick_cfg(2, 1e-4);
        let (state, logs) = train(&scenes, &cfg, &tc).unwrap();
        let horizons: Vec<usize> = (0..cfg.pred_frames).collect();
        let r1 = evaluate(&scenes, &state.params, &cfg, tc.ablation, &horizons).unwrap();
        let r2 = evaluate(&scenes, &state.params, &cfg, tc.ablation, &horizons).unwrap();
        assert_eq!(r1.mpjpe_all.to_bits(), r2.mpjpe_all.to_bits());
        let logged = logs.last().unwrap();
        assert!((r1.mpjpe_all - logged.mpjpe).abs() < 1e-9);
        assert!((r1.vim.average - logged.vim_avg).abs() < 1e-9);
    }

    #[test]
    fn log_csv_has_pinned_columns() {
        let logs = vec![EpochLog {
            epoch: 0,
            lr: 1e-3,
            train_loss: 0.5,
            mpjpe: 0.25,
            vim_avg: 0.75,
            loss_position: 0.3,
            loss_velocity: 0.2,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log_csv(&logs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,lr,train_loss,mpjpe,vim_avg");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 5);
        assert_eq!(row[0], "0");
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.25);
    }

    #[test]
    fn every_ablation_trains_and_reduces_loss() {
        let scenes = toy_dataset(3, 55);
        let cfg = ModelConfig::toy();
        let variants = [
            Ablation { no_velocity_input: true, ..Default::default() },
            Ablation { no_intra: true, ..Default::default() },
            Ablation { no_inter: true, ..Default::default() },
            Ablation { no_iam: true, ..Default::default() },
            Ablation { no_intra: true, no_inter: true, ..Default::default() },
        ];
        for ablation in variants {
            // Single-scene batches: the logged epoch loss averages several
            // optimizer steps, which keeps the short curve smooth enough
            // to compare endpoints.
            let tc = TrainConfig {
                epochs: 30,
                batch_size: 1,
                learning_rate: 1e-3,
                weight_decay: 0.0,
                seed: 3,
                ablation,
                ..Default::default()
            };
            let (_, logs) = train(&scenes, &cfg, &tc).unwrap();
            let first = logs.first().unwrap().train_loss;
            let last = logs.last().unwrap().train_loss;
            assert!(
                last.is_finite() && last < first,
                "{ablation:?}: loss {first} -> {last}"
            );
        }
    }
}

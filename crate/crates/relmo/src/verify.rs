//! Gradient verification: reverse-mode derivatives against central finite
//! differences.
//!
//! Two layers of checking. [`check_modules`] drives each stage of the
//! network in isolation (encoder, cross-attention, graph-convolution
//! stack, projection, aggregation layer, decoder) and measures the worst
//! relative error of the input gradient. [`check_full_model`] perturbs
//! every component of every trainable parameter of the assembled model
//! and compares the combined-loss gradient component by component. Both
//! report
//!
//! ```text
//! |analytic - numeric| / max(1, |analytic|)
//! ```
//!
//! Finite differences require a deterministic forward pass, so checking
//! refuses configurations with dropout enabled.

use crate::data::{generate_synthetic, DataError, Scene, SceneDims, SynthConfig};
use crate::model::net::{
    bind, cross_attention_block, decode, encode, forward_full, iam_layer, intra_relation,
    project_intra, scene_loss_ids,
};
use crate::model::{Ablation, ModelConfig, ModelError, ModelParams};
use crate::rng::DetRng;
use crate::tensor::check::{grad_check, CheckError};
use crate::tensor::{Tape, TapeError, TensorId};
use thiserror::Error;

/// Central-difference step used by the full-model check.
pub const FD_EPS: f64 = 1e-5;
/// A gradient component is considered wrong above this relative error.
pub const REL_ERR_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(
        "gradient checking needs a deterministic forward pass; set dropout \
         to 0 (config has {dropout})"
    )]
    DropoutEnabled { dropout: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Worst input-gradient error of one isolated network stage.
#[derive(Debug, Clone)]
pub struct ModuleCheck {
    pub module: &'static str,
    pub max_rel_err: f64,
}

/// Worst gradient error within one named parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst component.
    pub worst_index: usize,
}

/// Component-by-component comparison of the full model's parameter
/// gradient against central differences.
#[derive(Debug, Clone)]
pub struct FullModelCheck {
    pub per_param: Vec<ParamCheck>,
    pub checked_components: usize,
}

impl FullModelCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> &ParamCheck {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .expect("at least one parameter")
    }
}

/// Combined verification result.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub modules: Vec<ModuleCheck>,
    pub full_model: FullModelCheck,
    pub threshold: f64,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.modules.iter().all(|m| m.max_rel_err < self.threshold)
            && self.full_model.max_rel_err() < self.threshold
    }

    /// Human-readable per-module lines plus a verdict naming the worst
    /// offender when the check fails.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for m in &self.modules {
            let state = if m.max_rel_err < self.threshold { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<22} max rel err {:>9.3e}  {}\n",
                m.module, m.max_rel_err, state
            ));
        }
        let fm = &self.full_model;
        let w = fm.worst();
        let state = if fm.max_rel_err() < self.threshold { "ok" } else { "FAIL" };
        out.push_str(&format!(
            "{:<22} max rel err {:>9.3e}  {}  ({} parameters, {} components, worst {}[{}])\n",
            "full model",
            fm.max_rel_err(),
            state,
            fm.per_param.len(),
            fm.checked_components,
            w.name,
            w.worst_index
        ));
        if self.pass() {
            out.push_str(&format!("verdict: PASS (threshold {:.0e})\n", self.threshold));
        } else {
            out.push_str(&format!(
                "verdict: FAIL — {}[{}] rel err {:.3e} exceeds {:.0e}\n",
                w.name,
                w.worst_index,
                w.max_rel_err,
                self.threshold
            ));
        }
        out
    }
}

/// Unwrap a model-layer error inside a gradient-check closure. The
/// closures feed fixed, well-formed shapes, so anything but an underlying
/// tape error is a bug in the check itself.
fn tape_err(e: ModelError) -> TapeError {
    match e {
        ModelError::Tape(t) => t,
        other => panic!("gradient-check fixture hit a non-tape error: {other}"),
    }
}

/// Contract a tensor to a scalar with fixed pseudo-random weights, so
/// every output component influences the check with a distinct
/// coefficient.
fn weighted_sum(
    tape: &mut Tape,
    x: TensorId,
    salt: u64,
) -> Result<TensorId, TapeError> {
    let shape = tape.shape_of(x).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = DetRng::derive(0x5753, salt);
    let w: Vec<f64> = (0..n).map(|_| rng.symmetric(1.0)).collect();
    let w = tape.constant(w, shape)?;
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn random_vec(rng: &mut DetRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.symmetric(scale)).collect()
}

/// Fresh parameters nudged to a generic point: every trainable component
/// gets an independent uniform offset in ±0.1, keyed by entry name so the
/// perturbation is deterministic and order-independent. Fresh parameters
/// contain structured values (zero decoder and batch-norm gains, zero
/// biases) that silence entire gradient paths; checking derivatives there
/// would vacuously compare zero against zero. The nudge makes every path
/// active, which is the stronger check.
fn jittered_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, VerifyError> {
    let mut params = ModelParams::init(cfg, seed)?;
    for e in params.entries_mut().iter_mut().filter(|e| e.trainable) {
        let mut rng = DetRng::for_label(seed ^ 0x6a69_7474, &e.name);
        for v in &mut e.data {
            *v += rng.symmetric(0.1);
        }
    }
    Ok(params)
}

/// Check the input gradient of each network stage in isolation at toy
/// scale, in training mode (dropout 0), against central differences.
pub fn check_modules(seed: u64) -> Result<Vec<ModuleCheck>, VerifyError> {
    let cfg = ModelConfig::toy();
    let params = jittered_params(&cfg, seed)?;
    let c = cfg.channels();
    let d = cfg.feature;
    let t = cfg.obs_frames;
    let mut rng = DetRng::derive(seed, 0x6d63_6b00);
    let mut out = Vec::new();

    let x_ct = random_vec(&mut rng, c * t, 0.8);
    let err = grad_check(
        |tape, leaf| {
            let b = bind(tape, &params).map_err(tape_err)?;
            let h = encode(tape, &cfg, &b, leaf, true).map_err(tape_err)?;
            weighted_sum(tape, h, 1)
        },
        &x_ct,
        &[c, t],
        FD_EPS,
    )?;
    out.push(ModuleCheck { module: "encoder", max_rel_err: err });

    let q_cd = random_vec(&mut rng, c * d, 0.8);
    let kv_fixed = random_vec(&mut rng, c * d, 0.8);
    let err = grad_check(
        |tape, leaf| {
            let b = bind(tape, &params).map_err(tape_err)?;
            let kv = tape.constant(kv_fixed.clone(), vec![c, d])?;
            let h = cross_attention_block(tape, &cfg, &b, 0, leaf, kv).map_err(tape_err)?;
            weighted_sum(tape, h, 2)
        },
        &q_cd,
        &[c, d],
        FD_EPS,
    )?;
    out.push(ModuleCheck { module: "cross-attention", max_rel_err: err });

    let h_cd = random_vec(&mut rng, c * d, 0.8);
    let err = grad_check(
        |tape, leaf| {
            let b = bind(tape, &params).map_err(tape_err)?;
            let mut p = params.clone();
            let h = intra_relation(tape, &cfg, &b, &mut p, leaf, true).map_err(tape_err)?;
            weighted_sum(tape, h, 3)
        },
        &h_cd,
        &[c, d],
        FD_EPS,
    )?;
    out.push(ModuleCheck { module: "graph-conv-stack", max_rel_err: err });

    let f_cd = random_vec(&mut rng, c * d, 0.8);
    let err = grad_check(
        |tape, leaf| {
            let b = bind(tape, &params).map_err(tape_err)?;
            let h = project_intra(tape, &b, leaf).map_err(tape_err)?;
            weighted_sum(tape, h, 4)
        },
        &f_cd,
        &[c, d],
        FD_EPS,
    )?;
    out.push(ModuleCheck { module: "projection", max_rel_err: err });

    // Both aggregation inputs ride in one leaf: columns [0, D) are the
    // global stream, [D, 2D) the local one.
    let gl = random_vec(&mut rng, c * 2 * d, 0.8);
    let err = grad_check(
        |tape, leaf| {
            let b = bind(tape, &params).map_err(tape_err)?;
            let g = tape.slice_cols(leaf, 0, d)?;
            let l = tape.slice_cols(leaf, d, 2 * d)?;
            let (g2, l2) = iam_layer(tape, &cfg, &b, 0, g, l, true).map_err(tape_err)?;
            let sg = weighted_sum(tape, g2, 5)?;
            let sl = weighted_sum(tape, l2, 6)?;
            tape.add(sg, sl)
        },
        &gl,
        &[c, 2 * d],
        FD_EPS,
    )?;
    out.push(ModuleCheck { module: "aggregation-layer", max_rel_err: err });

    let gl = random_vec(&mut rng, c * 2 * d, 0.8);
    let x_last = random_vec(&mut rng, c, 1.0);
    let err = grad_check(
        |tape, leaf| {
            let b = bind(tape, &params).map_err(tape_err)?;
            let g = tape.slice_cols(leaf, 0, d)?;
            let l = tape.slice_cols(leaf, d, 2 * d)?;
            let h = decode(tape, &cfg, &b, g, l, &x_last).map_err(tape_err)?;
            weighted_sum(tape, h, 7)
        },
        &gl,
        &[c, 2 * d],
        FD_EPS,
    )?;
    out.push(ModuleCheck { module: "decoder", max_rel_err: err });

    Ok(out)
}

/// Combined (position + velocity) training loss of the full model on one
/// scene, evaluated on a throwaway copy of the parameters so batch-norm
/// side effects never leak between evaluations.
fn loss_at(
    scene: &Scene,
    base: &ModelParams,
    cfg: &ModelConfig,
    ablation: Ablation,
    touch: Option<(&str, usize, f64)>,
) -> Result<f64, VerifyError> {
    let mut p = base.clone();
    if let Some((name, idx, delta)) = touch {
        p.get_mut(name)?.data[idx] += delta;
    }
    let mut tape = Tape::with_seed(0);
    let (preds, _) = forward_full(&mut tape, scene, &mut p, cfg, true, ablation)?;
    let (pos, vel) = scene_loss_ids(&mut tape, cfg, scene, &preds)?;
    let total = tape.add(pos, vel)?;
    Ok(tape.scalar_value(total))
}

fn fixture_scene(cfg: &ModelConfig, seed: u64) -> Result<Scene, VerifyError> {
    Ok(generate_synthetic(&SynthConfig {
        dims: SceneDims {
            persons: cfg.persons,
            obs_frames: cfg.obs_frames,
            pred_frames: cfg.pred_frames,
            joints: cfg.joints,
        },
        seed: DetRng::derive(seed, 0x6664_7363).next_u64(),
        interaction_strength: 0.5,
    })?)
}

/// Reduce one parameter's analytic-vs-numeric gradient pair to its worst
/// component.
fn compare_entry(name: &str, analytic: &[f64], numeric: &[f64]) -> ParamCheck {
    let mut worst = 0.0f64;
    let mut worst_index = 0;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(1.0);
        if rel > worst {
            worst = rel;
            worst_index = i;
        }
    }
    ParamCheck {
        name: name.to_string(),
        max_rel_err: worst,
        worst_index,
    }
}

/// Compare the analytic gradient of the combined loss against central
/// finite differences for every component of every trainable parameter.
/// Runs in training mode; refuses configurations with dropout enabled.
pub fn check_full_model(cfg: &ModelConfig, seed: u64) -> Result<FullModelCheck, VerifyError> {
    check_full_model_ablated(cfg, seed, Ablation::default())
}

/// [`check_full_model`] with part of the pipeline switched off, so the
/// gradient of each reduced variant is verified too. Parameters that the
/// ablated forward never touches must show a zero gradient on both sides.
pub fn check_full_model_ablated(
    cfg: &ModelConfig,
    seed: u64,
    ablation: Ablation,
) -> Result<FullModelCheck, VerifyError> {
    if cfg.dropout > 0.0 {
        return Err(VerifyError::DropoutEnabled { dropout: cfg.dropout });
    }
    cfg.validate()?;
    let scene = fixture_scene(cfg, seed)?;
    let params = jittered_params(cfg, seed)?;

    // One reverse sweep for every analytic gradient.
    let analytic: std::collections::HashMap<String, Vec<f64>> = {
        let mut p = params.clone();
        let mut tape = Tape::with_seed(0);
        let (preds, bound) =
            forward_full(&mut tape, &scene, &mut p, cfg, true, ablation)?;
        let (pos, vel) = scene_loss_ids(&mut tape, cfg, &scene, &preds)?;
        let total = tape.add(pos, vel)?;
        tape.backward(total)?;
        bound
            .iter()
            .map(|(name, id)| {
                let g = tape
                    .grad(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(id).len()]);
                (name.to_string(), g)
            })
            .collect()
    };

    let mut per_param = Vec::new();
    let mut checked = 0;
    for e in params.entries().iter().filter(|e| e.trainable) {
        let a = &analytic[&e.name];
        let mut numeric = vec![0.0; e.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let hi = loss_checked(&scene, &params, cfg, ablation, &e.name, i, FD_EPS)?;
            let lo = loss_checked(&scene, &params, cfg, ablation, &e.name, i, -FD_EPS)?;
            *slot = (hi - lo) / (2.0 * FD_EPS);
            checked += 1;
        }
        per_param.push(compare_entry(&e.name, a, &numeric));
    }
    Ok(FullModelCheck {
        per_param,
        checked_components: checked,
    })
}

fn loss_checked(
    scene: &Scene,
    params: &ModelParams,
    cfg: &ModelConfig,
    ablation: Ablation,
    name: &str,
    idx: usize,
    delta: f64,
) -> Result<f64, VerifyError> {
    let v = loss_at(scene, params, cfg, ablation, Some((name, idx, delta)))?;
    if !v.is_finite() {
        return Err(VerifyError::Check(CheckError::NonFinite { index: idx }));
    }
    Ok(v)
}

/// Run both check layers and bundle the outcome.
pub fn verify_gradients(cfg: &ModelConfig, seed: u64) -> Result<VerifyReport, VerifyError> {
    verify_gradients_ablated(cfg, seed, Ablation::default())
}

/// [`verify_gradients`] for a reduced pipeline variant. The per-stage
/// checks do not depend on the switches (each stage is driven in
/// isolation); the full-model sweep runs with the given ablation.
pub fn verify_gradients_ablated(
    cfg: &ModelConfig,
    seed: u64,
    ablation: Ablation,
) -> Result<VerifyReport, VerifyError> {
    if cfg.dropout > 0.0 {
        return Err(VerifyError::DropoutEnabled { dropout: cfg.dropout });
    }
    let modules = check_modules(seed)?;
    let full_model = check_full_model_ablated(cfg, seed, ablation)?;
    Ok(VerifyReport {
        modules,
        full_model,
        threshold: REL_ERR_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_module_gradient_matches_finite_differences() {
        let checks = check_modules(11).unwrap();
        assert_eq!(checks.len(), 6);
        for c in &checks {
            assert!(
                c.max_rel_err < 1e-5,
                "{} rel err {:.3e}",
                c.module,
                c.max_rel_err
            );
        }
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = ModelConfig::toy();
        let check = check_full_model(&cfg, 3).unwrap();
        let worst = check.worst();
        assert!(
            check.max_rel_err() < REL_ERR_THRESHOLD,
            "worst {}[{}] rel err {:.3e}",
            worst.name,
            worst.worst_index,
            worst.max_rel_err
        );
        assert_eq!(
            check.checked_components,
            ModelParams::init(&cfg, 3)
                .unwrap()
                .trainable_len()
        );
    }

    #[test]
    fn dropout_configs_are_refused_with_guidance() {
        let mut cfg = ModelConfig::toy();
        cfg.dropout = 0.5;
        match check_full_model(&cfg, 1) {
            Err(VerifyError::DropoutEnabled { dropout }) => {
                assert_eq!(dropout, 0.5);
            }
            other => panic!("expected dropout refusal, got {other:?}"),
        }
        let msg = check_full_model(&cfg, 1).unwrap_err().to_string();
        assert!(msg.contains("dropout"), "{msg}");
    }

    #[test]
    fn comparison_flags_a_corrupted_gradient_by_name_and_index() {
        // A sign flip in one component must surface as the worst entry.
        let analytic = vec![0.5, -1.25, 2.0];
        let mut corrupted = analytic.clone();
        corrupted[1] = 1.25;
        let check = compare_entry("some.weight", &corrupted, &analytic);
        assert_eq!(check.worst_index, 1);
        assert!(check.max_rel_err > 1.0);
        // An agreeing pair stays below threshold.
        let ok = compare_entry("some.weight", &analytic, &analytic);
        assert_eq!(ok.max_rel_err, 0.0);
    }

    #[test]
    fn corrupted_analytic_gradient_fails_an_end_to_end_check() {
        // Rebuild the real comparison for one small parameter, then break
        // the analytic side and confirm the check notices.
        let cfg = ModelConfig::toy();
        let scene = fixture_scene(&cfg, 5).unwrap();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let name = "inter.lambda";
        let mut tape = Tape::with_seed(0);
        let mut p = params.clone();
        let (preds, bound) =
            forward_full(&mut tape, &scene, &mut p, &cfg, true, Ablation::default()).unwrap();
        let (pos, vel) = scene_loss_ids(&mut tape, &cfg, &scene, &preds).unwrap();
        let total = tape.add(pos, vel).unwrap();
        tape.backward(total).unwrap();
        let id = bound.iter().find(|(n, _)| *n == name).unwrap().1;
        let analytic = tape.grad(id).unwrap()[0];

        let hi = loss_at(&scene, &params, &cfg, Ablation::default(), Some((name, 0, FD_EPS))).unwrap();
        let lo = loss_at(&scene, &params, &cfg, Ablation::default(), Some((name, 0, -FD_EPS))).unwrap();
        let numeric = (hi - lo) / (2.0 * FD_EPS);

        let honest = compare_entry(name, &[analytic], &[numeric]);
        assert!(honest.max_rel_err < REL_ERR_THRESHOLD, "{:.3e}", honest.max_rel_err);
        let broken = compare_entry(name, &[analytic * 1.1 + 0.01], &[numeric]);
        assert!(broken.max_rel_err > REL_ERR_THRESHOLD);
    }

    #[test]
    fn report_summary_names_modules_and_verdict() {
        let report = VerifyReport {
            modules: vec![ModuleCheck { module: "encoder", max_rel_err: 1e-9 }],
            full_model: FullModelCheck {
                per_param: vec![ParamCheck {
                    name: "decoder.weight".into(),
                    max_rel_err: 2e-10,
                    worst_index: 4,
                }],
                checked_components: 32,
            },
            threshold: REL_ERR_THRESHOLD,
        };
        assert!(report.pass());
        let s = report.summary();
        assert!(s.contains("encoder"));
        assert!(s.contains("decoder.weight"));
        assert!(s.contains("PASS"));

        let failing = VerifyReport {
            modules: report.modules.clone(),
            full_model: FullModelCheck {
                per_param: vec![ParamCheck {
                    name: "proj.w2".into(),
                    max_rel_err: 0.5,
                    worst_index: 7,
                }],
                checked_components: 32,
            },
            threshold: REL_ERR_THRESHOLD,
        };
        assert!(!failing.pass());
        let s = failing.summary();
        assert!(s.contains("FAIL"));
        assert!(s.contains("proj.w2[7]"));
    }
}

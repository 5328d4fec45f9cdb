//! The differentiable forward pipeline.
//!
//! Every function here builds onto a [`Tape`], so one backward call after
//! the loss yields gradients for all bound parameters. The pipeline per
//! person: velocity channels (`C x T`) -> encoder MLP (`C x D` tokens) ->
//! two branches — cross-person attention weighted by a learnable
//! distance-decay factor, and graph convolution over the person's own
//! channels — -> gated projection of the intra stream -> attention-based
//! aggregation of the two streams -> linear decoder emitting residuals on
//! the last observed frame.

use super::params::ModelParams;
use super::{Ablation, ModelConfig, ModelError};
use crate::data::{velocity_augment, PoseSeq, Scene};
use crate::tensor::{sigmoid_scalar, Tape, TensorId};
use std::collections::HashMap;

/// Tape handles for every trainable parameter, by name. Binding clones
/// parameter data onto the tape; gradients are read back through these
/// ids after a backward pass.
pub(crate) struct Bound {
    ids: HashMap<String, TensorId>,
}

impl Bound {
    pub(crate) fn id(&self, name: &str) -> Result<TensorId, ModelError> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownParam { name: name.to_string() })
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Put every trainable parameter on the tape as a gradient-carrying leaf.
/// Batch-norm running statistics stay off-tape; the forward pass reads
/// and updates them directly in `ModelParams`.
pub(crate) fn bind(tape: &mut Tape, params: &ModelParams) -> Result<Bound, ModelError> {
    let mut ids = HashMap::new();
    for e in params.entries() {
        if !e.trainable {
            continue;
        }
        let id = tape.param(e.data.clone(), e.shape.clone())?;
        ids.insert(e.name.clone(), id);
    }
    Ok(Bound { ids })
}

// ------------------------------------------------------------- encoder

/// Three linear layers lifting one person's `C x T` input to `C x D`
/// tokens, with activation and dropout after the first two.
pub(crate) fn encode(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &Bound,
    x: TensorId,
    training: bool,
) -> Result<TensorId, ModelError> {
    let mut h = x;
    for l in 0..3 {
        h = tape.matmul(h, b.id(&format!("encoder.lin{l}.weight"))?)?;
        h = tape.add_bias(h, b.id(&format!("encoder.lin{l}.bias"))?)?;
        if l < 2 {
            h = tape.gelu(h);
            h = tape.dropout(h, cfg.dropout, training)?;
        }
    }
    Ok(h)
}

// ----------------------------------------------------------- attention

/// Multi-head scaled dot-product attention over token rows. `q`, `k`,
/// `v` are already-projected `C x D` tensors; heads split the feature
/// axis. Returns the concatenated head outputs (before any output
/// projection).
fn multi_head_attention(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    heads: usize,
) -> Result<TensorId, ModelError> {
    let d = tape.shape_of(q)[1];
    let dh = d / heads;
    let norm = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, norm);
        let probs = tape.softmax(scaled, 1)?;
        outs.push(tape.matmul(probs, vh)?);
    }
    Ok(tape.concat(&outs, 1)?)
}

/// One cross-attention block: queries from the first stream, keys and
/// values from the second, multi-head core, output projection, and a
/// residual add of the query stream.
pub(crate) fn cross_attention_block(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &Bound,
    block: usize,
    q_stream: TensorId,
    kv_stream: TensorId,
) -> Result<TensorId, ModelError> {
    let p = |w: &str| format!("inter.block{block}.{w}");
    let q = tape.matmul(q_stream, b.id(&p("wq"))?)?;
    let k = tape.matmul(kv_stream, b.id(&p("wk"))?)?;
    let v = tape.matmul(kv_stream, b.id(&p("wv"))?)?;
    let att = multi_head_attention(tape, q, k, v, cfg.heads)?;
    let proj = tape.matmul(att, b.id(&p("wo"))?)?;
    Ok(tape.add(proj, q_stream)?)
}

// ------------------------------------------------------- distance decay

/// Mean over observed frames and joints of the Euclidean distance
/// between two persons' corresponding joints.
pub fn mean_joint_distance(scene: &Scene, n: usize, m: usize) -> Result<f64, ModelError> {
    if n == m {
        return Err(ModelError::SelfPair { n });
    }
    let d = scene.dims();
    let mut total = 0.0;
    for t in 0..d.obs_frames {
        for j in 0..d.joints {
            let a = scene.pos(n, t, j);
            let b = scene.pos(m, t, j);
            let dx = a[0] - b[0];
            let dy = a[1] - b[1];
            let dz = a[2] - b[2];
            total += (dx * dx + dy * dy + dz * dz).sqrt();
        }
    }
    Ok(total / (d.obs_frames * d.joints) as f64)
}

/// The distance-decay weight as a plain number:
/// `α = 1 / (σ(λ) · mean_distance + 1)`, always in `(0, 1]`.
pub fn alpha_weight(scene: &Scene, n: usize, m: usize, lambda: f64) -> Result<f64, ModelError> {
    let mu = mean_joint_distance(scene, n, m)?;
    Ok(1.0 / (sigmoid_scalar(lambda) * mu + 1.0))
}

/// Same computation on the tape, so gradients reach the decay scalar.
fn alpha_tensor(tape: &mut Tape, lambda: TensorId, mean_dist: f64) -> TensorId {
    let sig = tape.sigmoid(lambda);
    let scaled = tape.scale(sig, mean_dist);
    let shifted = tape.add_scalar(scaled, 1.0);
    tape.recip(shifted)
}

/// Cross-person feature for person `n`: chain the cross-attention blocks
/// against each other person `m` (block 1 queries person n's encoding,
/// later blocks query the running result, keys/values always person m),
/// then sum the per-pair results weighted by the distance decay. A
/// single-person scene yields the zero feature.
pub(crate) fn inter_feature(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &Bound,
    scene: &Scene,
    enc: &[TensorId],
    n: usize,
) -> Result<TensorId, ModelError> {
    if cfg.persons == 1 {
        return Ok(tape.zeros(vec![cfg.channels(), cfg.feature]));
    }
    let lambda = b.id("inter.lambda")?;
    let mut acc: Option<TensorId> = None;
    for m in 0..cfg.persons {
        if m == n {
            continue;
        }
        let mut s = enc[n];
        for block in 0..cfg.cross_blocks {
            s = cross_attention_block(tape, cfg, b, block, s, enc[m])?;
        }
        let dist = mean_joint_distance(scene, n, m)?;
        let alpha = alpha_tensor(tape, lambda, dist);
        let term = tape.mul_by_scalar(s, alpha)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    Ok(acc.expect("persons > 1 guarantees at least one pair"))
}

// -------------------------------------------------------- intra branch

/// One graph-convolution block: batch-norm over the channel rows, then
/// adjacency multiply, feature weight multiply, tanh, dropout.
fn gc_block(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &Bound,
    params: &mut ModelParams,
    block: usize,
    h: TensorId,
    training: bool,
) -> Result<TensorId, ModelError> {
    let p = |w: &str| format!("intra.block{block}.{w}");
    let gain = b.id(&p("bn.gain"))?;
    let bias = b.id(&p("bn.bias"))?;
    // Running stats live off-tape; clone out, let batch_norm update them
    // (training mode only), write back.
    let mut rm = params.get(&p("bn.running_mean"))?.data.clone();
    let mut rv = params.get(&p("bn.running_var"))?.data.clone();
    let bn = tape.batch_norm(h, gain, bias, &mut rm, &mut rv, training)?;
    params.get_mut(&p("bn.running_mean"))?.data = rm;
    params.get_mut(&p("bn.running_var"))?.data = rv;
    let graph = tape.matmul(b.id(&p("adj"))?, bn)?;
    let feat = tape.matmul(graph, b.id(&p("weight"))?)?;
    let act = tape.tanh(feat);
    Ok(tape.dropout(act, cfg.dropout, training)?)
}

/// The chained graph-convolution blocks with U-shaped skips: the input of
/// block `l` (for `l <= floor(L2/2)`) is added to the output of block
/// `L2 + 1 - l`. Odd depths leave the middle block skip-free.
pub(crate) fn intra_relation(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &Bound,
    params: &mut ModelParams,
    x: TensorId,
    training: bool,
) -> Result<TensorId, ModelError> {
    let l2 = cfg.gc_blocks;
    let mut h = x;
    let mut inputs = Vec::with_capacity(l2);
    for l in 1..=l2 {
        inputs.push(h);
        let mut out = gc_block(tape, cfg, b, params, l - 1, h, training)?;
        let source = l2 + 1 - l;
        if source <= l2 / 2 {
            out = tape.add(out, inputs[source - 1])?;
        }
        h = out;
    }
    Ok(h)
}

/// Gated projection of the intra stream:
/// `σ(F·W1) + σ((W2·(F·W1)) ⊙ (W3·(F·W1)))`. Every output element lies
/// in (0, 2).
pub(crate) fn project_intra(
    tape: &mut Tape,
    b: &Bound,
    f: TensorId,
) -> Result<TensorId, ModelError> {
    let fw1 = tape.matmul(f, b.id("proj.w1")?)?;
    let direct = tape.sigmoid(fw1);
    let left = tape.matmul(b.id("proj.w2")?, fw1)?;
    let right = tape.matmul(b.id("proj.w3")?, fw1)?;
    let gate = tape.mul(left, right)?;
    let gated = tape.sigmoid(gate);
    Ok(tape.add(direct, gated)?)
}

// --------------------------------------------------------- aggregation

/// Deterministic sinusoidal position encoding over the channel index,
/// row-major `channels x feature`.
pub fn positional_encoding(channels: usize, feature: usize) -> Vec<f64> {
    let mut pe = vec![0.0; channels * feature];
    for c in 0..channels {
        for i in 0..feature {
            let pair = (i / 2) as f64;
            let rate = 10000.0f64.powf(2.0 * pair / feature as f64);
            let angle = c as f64 / rate;
            pe[c * feature + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// One aggregation layer. Fusion: the inter stream's query and key
/// projections each receive the local stream additively before scoring;
/// values come from the inter stream alone. The fused tokens then update
/// both streams: the global stream through a norm + two-layer MLP
/// residual, the local stream through a norm + cross-attention residual
/// (queries from the local stream, keys/values from the fused tokens).
pub(crate) fn iam_layer(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &Bound,
    layer: usize,
    g_in: TensorId,
    l_in: TensorId,
    training: bool,
) -> Result<(TensorId, TensorId), ModelError> {
    let p = |w: &str| format!("iam.layer{layer}.{w}");

    // Fused attention.
    let gq = tape.matmul(g_in, b.id(&p("fuse.wq"))?)?;
    let q = tape.add(gq, l_in)?;
    let gk = tape.matmul(g_in, b.id(&p("fuse.wk"))?)?;
    let k = tape.add(gk, l_in)?;
    let v = tape.matmul(g_in, b.id(&p("fuse.wv"))?)?;
    let att = multi_head_attention(tape, q, k, v, cfg.heads)?;
    let g_fu = tape.matmul(att, b.id(&p("fuse.wo"))?)?;

    // Global update: LN -> MLP -> residual.
    let ln_g = tape.layer_norm(g_fu, b.id(&p("ln_g.gain"))?, b.id(&p("ln_g.bias"))?)?;
    let mut h = tape.matmul(ln_g, b.id(&p("gu.lin0.weight"))?)?;
    h = tape.add_bias(h, b.id(&p("gu.lin0.bias"))?)?;
    h = tape.gelu(h);
    h = tape.dropout(h, cfg.dropout, training)?;
    h = tape.matmul(h, b.id(&p("gu.lin1.weight"))?)?;
    h = tape.add_bias(h, b.id(&p("gu.lin1.bias"))?)?;
    let g_out = tape.add(h, g_in)?;

    // Local update: LN the fused tokens, attend into them from the local
    // stream, residual.
    let ln_l = tape.layer_norm(g_fu, b.id(&p("ln_l.gain"))?, b.id(&p("ln_l.bias"))?)?;
    let lq = tape.matmul(l_in, b.id(&p("lu.wq"))?)?;
    let lk = tape.matmul(ln_l, b.id(&p("lu.wk"))?)?;
    let lv = tape.matmul(ln_l, b.id(&p("lu.wv"))?)?;
    let latt = multi_head_attention(tape, lq, lk, lv, cfg.heads)?;
    let lproj = tape.matmul(latt, b.id(&p("lu.wo"))?)?;
    let l_out = tape.add(lproj, l_in)?;

    Ok((g_out, l_out))
}

/// Position encoding added once to both streams, then the aggregation
/// layers chained.
pub(crate) fn iam_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &Bound,
    g0: TensorId,
    l0: TensorId,
    training: bool,
) -> Result<(TensorId, TensorId), ModelError> {
    let c = cfg.channels();
    let pe = tape.constant(positional_encoding(c, cfg.feature), vec![c, cfg.feature])?;
    let mut g = tape.add(g0, pe)?;
    let mut l = tape.add(l0, pe)?;
    for layer in 0..cfg.iam_layers {
        (g, l) = iam_layer(tape, cfg, b, layer, g, l, training)?;
    }
    Ok((g, l))
}

// -------------------------------------------------------------- decoder

/// Concatenate the two streams to `C x 2D`, map to `C x P` frames, and
/// add the person's last observed position per channel, so zero weights
/// decode to a constant pose.
pub(crate) fn decode(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &Bound,
    g: TensorId,
    l: TensorId,
    x_last: &[f64],
) -> Result<TensorId, ModelError> {
    let cat = tape.concat(&[g, l], 1)?;
    let fc = tape.matmul(cat, b.id("decoder.weight")?)?;
    let fc = tape.add_bias(fc, b.id("decoder.bias")?)?;
    let (c, pf) = (cfg.channels(), cfg.pred_frames);
    debug_assert_eq!(x_last.len(), c);
    let mut base = Vec::with_capacity(c * pf);
    for &x in x_last {
        base.extend(std::iter::repeat(x).take(pf));
    }
    let base = tape.constant(base, vec![c, pf])?;
    Ok(tape.add(fc, base)?)
}

// -------------------------------------------------------- full pipeline

fn check_scene(cfg: &ModelConfig, scene: &Scene) -> Result<(), ModelError> {
    let d = scene.dims();
    if d.persons != cfg.persons
        || d.joints != cfg.joints
        || d.obs_frames != cfg.obs_frames
        || d.pred_frames != cfg.pred_frames
    {
        return Err(ModelError::SceneMismatch {
            reason: format!(
                "scene has (persons, joints, obs, pred) = ({}, {}, {}, {}), \
                 model expects ({}, {}, {}, {})",
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

/// Full forward pass, returning the per-person `C x P` prediction tensors
/// together with the parameter binding (for gradient readback).
pub(crate) fn forward_full(
    tape: &mut Tape,
    scene: &Scene,
    params: &mut ModelParams,
    cfg: &ModelConfig,
    training: bool,
    ablation: Ablation,
) -> Result<(Vec<TensorId>, Bound), ModelError> {
    cfg.validate()?;
    check_scene(cfg, scene)?;
    let b = bind(tape, params)?;
    let c = cfg.channels();

    let inputs: Vec<TensorId> = if ablation.no_velocity_input {
        (0..cfg.persons)
            .map(|n| tape.constant(scene.observed_channels(n), vec![c, cfg.obs_frames]))
            .collect::<Result<_, _>>()?
    } else {
        let vel = velocity_augment(scene)?;
        (0..cfg.persons)
            .map(|n| tape.constant(vel.channels(n), vec![c, cfg.obs_frames]))
            .collect::<Result<_, _>>()?
    };

    let mut enc = Vec::with_capacity(cfg.persons);
    for &x in &inputs {
        enc.push(encode(tape, cfg, &b, x, training)?);
    }

    let mut inter = Vec::with_capacity(cfg.persons);
    for n in 0..cfg.persons {
        if ablation.no_inter {
            inter.push(tape.zeros(vec![c, cfg.feature]));
        } else {
            inter.push(inter_feature(tape, cfg, &b, scene, &enc, n)?);
        }
    }

    let mut intra = Vec::with_capacity(cfg.persons);
    for n in 0..cfg.persons {
        if ablation.no_intra {
            intra.push(tape.zeros(vec![c, cfg.feature]));
        } else {
            let f = intra_relation(tape, cfg, &b, params, enc[n], training)?;
            intra.push(project_intra(tape, &b, f)?);
        }
    }

    let mut preds = Vec::with_capacity(cfg.persons);
    for n in 0..cfg.persons {
        let (g, l) = if ablation.no_iam {
            (inter[n], intra[n])
        } else {
            iam_forward(tape, cfg, &b, inter[n], intra[n], training)?
        };
        preds.push(decode(tape, cfg, &b, g, l, &scene.last_observed(n))?);
    }
    Ok((preds, b))
}

/// Full forward pass; see [`forward_full`]. The returned ids are one
/// `C x P` tensor per person.
pub fn forward_tensors(
    tape: &mut Tape,
    scene: &Scene,
    params: &mut ModelParams,
    cfg: &ModelConfig,
    training: bool,
    ablation: Ablation,
) -> Result<Vec<TensorId>, ModelError> {
    forward_full(tape, scene, params, cfg, training, ablation).map(|(p, _)| p)
}

/// Read per-person `C x P` prediction tensors back into a pose block.
pub fn predictions_to_pose(tape: &Tape, cfg: &ModelConfig, preds: &[TensorId]) -> PoseSeq {
    let pf = cfg.pred_frames;
    let mut out = PoseSeq::zeros(preds.len(), pf, cfg.joints);
    for (n, &id) in preds.iter().enumerate() {
        let v = tape.value(id);
        for t in 0..pf {
            for j in 0..cfg.joints {
                out.set(
                    n,
                    t,
                    j,
                    [
                        v[(j * 3) * pf + t],
                        v[(j * 3 + 1) * pf + t],
                        v[(j * 3 + 2) * pf + t],
                    ],
                );
            }
        }
    }
    out
}

/// Eval-mode inference: fresh tape, dropout off, batch-norm running
/// statistics; returns predicted positions for every person.
pub fn predict(
    scene: &Scene,
    params: &mut ModelParams,
    cfg: &ModelConfig,
    ablation: Ablation,
) -> Result<PoseSeq, ModelError> {
    let mut tape = Tape::with_seed(0);
    let preds = forward_tensors(&mut tape, scene, params, cfg, false, ablation)?;
    Ok(predictions_to_pose(&tape, cfg, &preds))
}

/// Build both loss terms on the tape from per-person `C x P` prediction
/// tensors: a per-element mean squared position error against the true
/// future window, and the same on frame-to-frame velocities, where the
/// first predicted frame differences against the last observed one. Each
/// term is averaged over persons. Returns `(position, velocity)` scalar
/// ids.
pub(crate) fn scene_loss_ids(
    tape: &mut Tape,
    cfg: &ModelConfig,
    scene: &Scene,
    preds: &[TensorId],
) -> Result<(TensorId, TensorId), ModelError> {
    check_scene(cfg, scene)?;
    if preds.len() != cfg.persons {
        return Err(ModelError::SceneMismatch {
            reason: format!(
                "{} prediction tensors for {} persons",
                preds.len(),
                cfg.persons
            ),
        });
    }
    let c = cfg.channels();
    let p = cfg.pred_frames;
    let mut pos_acc: Option<TensorId> = None;
    let mut vel_acc: Option<TensorId> = None;
    for (n, &pred) in preds.iter().enumerate() {
        let truth = scene.future_channels(n);
        let last = scene.last_observed(n);

        let truth_id = tape.constant(truth.clone(), vec![c, p])?;
        let diff = tape.sub(pred, truth_id)?;
        let sq = tape.mul(diff, diff)?;
        let pos_n = tape.mean(sq);

        // Predicted velocities: column 0 minus the last observed frame,
        // then successive column differences.
        let last_id = tape.constant(last.clone(), vec![c, 1])?;
        let first = tape.slice_cols(pred, 0, 1)?;
        let v_first = tape.sub(first, last_id)?;
        let v_pred = if p > 1 {
            let hi = tape.slice_cols(pred, 1, p)?;
            let lo = tape.slice_cols(pred, 0, p - 1)?;
            let rest = tape.sub(hi, lo)?;
            tape.concat(&[v_first, rest], 1)?
        } else {
            v_first
        };
        // True velocities are data, not graph: one constant tensor.
        let mut v_truth = vec![0.0; c * p];
        for row in 0..c {
            v_truth[row * p] = truth[row * p] - last[row];
            for t in 1..p {
                v_truth[row * p + t] = truth[row * p + t] - truth[row * p + t - 1];
            }
        }
        let v_truth_id = tape.constant(v_truth, vec![c, p])?;
        let v_diff = tape.sub(v_pred, v_truth_id)?;
        let v_sq = tape.mul(v_diff, v_diff)?;
        let vel_n = tape.mean(v_sq);

        pos_acc = Some(match pos_acc {
            None => pos_n,
            Some(a) => tape.add(a, pos_n)?,
        });
        vel_acc = Some(match vel_acc {
            None => vel_n,
            Some(a) => tape.add(a, vel_n)?,
        });
    }
    let inv = 1.0 / cfg.persons as f64;
    let pos = tape.scale(pos_acc.expect("at least one person"), inv);
    let vel = tape.scale(vel_acc.expect("at least one person"), inv);
    Ok((pos, vel))
}

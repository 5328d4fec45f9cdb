//! Named parameter store and checkpoint serialization.
//!
//! Every tensor the model owns — weights, biases, the distance-decay
//! scalar, graph adjacencies, normalization parameters, and batch-norm
//! running statistics — lives here as a named entry. Names are stable
//! (`encoder.lin0.weight`, `intra.block1.adj`, ...) and drive three
//! things: deterministic initialization (each entry draws from its own
//! seeded stream, so adding entries never reshuffles others), optimizer
//! policy (weight decay applies to matrices only), and the checkpoint
//! format, which stores entries by name and restores them by name.

use super::{ModelConfig, ModelError};
use crate::rng::DetRng;
use std::collections::HashMap;
use std::path::Path;

/// One named tensor. `trainable` distinguishes optimizable weights from
/// state carried by the forward pass (batch-norm running statistics);
/// `decay` marks entries subject to weight decay (2-D weight matrices
/// only — never biases, gains, adjacencies, or the decay scalar).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
    pub decay: bool,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The full parameter set of one model, with name lookup.
#[derive(Debug, Clone)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    fn push(&mut self, entry: ParamEntry) {
        debug_assert!(
            !self.index.contains_key(&entry.name),
            "duplicate parameter name {}",
            entry.name
        );
        debug_assert_eq!(entry.data.len(), entry.len());
        self.index.insert(entry.name.clone(), self.entries.len());
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry, ModelError> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| ModelError::UnknownParam { name: name.to_string() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry, ModelError> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| ModelError::UnknownParam { name: name.to_string() })?;
        Ok(&mut self.entries[i])
    }

    pub fn entry_mut_by_index(&mut self, i: usize) -> &mut ParamEntry {
        &mut self.entries[i]
    }

    /// Total number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.len())
            .sum()
    }

    /// Fresh parameters for a config: matrices get uniform glorot-style
    /// init, biases and the decay scalar start at zero. Two entries
    /// deliberately break that pattern, following standard practice for
    /// residual networks: batch-norm gains start at zero so each
    /// graph-conv block initially contributes nothing beyond its skip
    /// connection (the "zero-gamma" init — it also means train- and
    /// eval-mode disagree by nothing at the start, since the only
    /// batch-statistics-dependent path is silenced until the optimizer
    /// actually buys loss with it), and the decoder matrix starts at zero
    /// so the first prediction is exactly the last observed pose — the
    /// model begins at the constant-pose baseline instead of at noise.
    /// Each random entry draws from a stream keyed by its own name, so
    /// initialization is independent of entry order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let c = cfg.channels();
        let d = cfg.feature;
        let mut p = ModelParams {
            entries: Vec::new(),
            index: HashMap::new(),
        };

        let matrix = |p: &mut ModelParams, name: String, rows: usize, cols: usize, decay: bool| {
            let mut rng = DetRng::for_label(seed, &name);
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.symmetric(limit)).collect();
            p.push(ParamEntry {
                name,
                shape: vec![rows, cols],
                data,
                trainable: true,
                decay,
            });
        };
        let fill = |p: &mut ModelParams, name: String, len: usize, value: f64, trainable: bool| {
            p.push(ParamEntry {
                name,
                shape: vec![len],
                data: vec![value; len],
                trainable,
                decay: false,
            });
        };

        // Encoder: three linear layers lifting the temporal axis T -> D.
        matrix(&mut p, "encoder.lin0.weight".into(), cfg.obs_frames, d, true);
        fill(&mut p, "encoder.lin0.bias".into(), d, 0.0, true);
        for l in 1..3 {
            matrix(&mut p, format!("encoder.lin{l}.weight"), d, d, true);
            fill(&mut p, format!("encoder.lin{l}.bias"), d, 0.0, true);
        }

        // Inter branch: distance-decay scalar plus per-block attention
        // projections (unshared across blocks, shared across person pairs).
        fill(&mut p, "inter.lambda".into(), 1, 0.0, true);
        for l in 0..cfg.cross_blocks {
            for w in ["wq", "wk", "wv", "wo"] {
                matrix(&mut p, format!("inter.block{l}.{w}"), d, d, true);
            }
        }

        // Intra branch: per-block learnable adjacency (no decay — it is a
        // graph, not a feature map), feature weight, and batch norm.
        for l in 0..cfg.gc_blocks {
            matrix(&mut p, format!("intra.block{l}.adj"), c, c, false);
            matrix(&mut p, format!("intra.block{l}.weight"), d, d, true);
            fill(&mut p, format!("intra.block{l}.bn.gain"), d, 0.0, true);
            fill(&mut p, format!("intra.block{l}.bn.bias"), d, 0.0, true);
            fill(&mut p, format!("intra.block{l}.bn.running_mean"), d, 0.0, false);
            fill(&mut p, format!("intra.block{l}.bn.running_var"), d, 1.0, false);
        }

        // Projection of the intra stream: feature-axis map plus a gated
        // channel-axis product.
        matrix(&mut p, "proj.w1".into(), d, d, true);
        matrix(&mut p, "proj.w2".into(), c, c, true);
        matrix(&mut p, "proj.w3".into(), c, c, true);

        // Aggregation layers.
        for l in 0..cfg.iam_layers {
            for w in ["wq", "wk", "wv", "wo"] {
                matrix(&mut p, format!("iam.layer{l}.fuse.{w}"), d, d, true);
            }
            fill(&mut p, format!("iam.layer{l}.ln_g.gain"), d, 1.0, true);
            fill(&mut p, format!("iam.layer{l}.ln_g.bias"), d, 0.0, true);
            for m in 0..2 {
                matrix(&mut p, format!("iam.layer{l}.gu.lin{m}.weight"), d, d, true);
                fill(&mut p, format!("iam.layer{l}.gu.lin{m}.bias"), d, 0.0, true);
            }
            fill(&mut p, format!("iam.layer{l}.ln_l.gain"), d, 1.0, true);
            fill(&mut p, format!("iam.layer{l}.ln_l.bias"), d, 0.0, true);
            for w in ["wq", "wk", "wv", "wo"] {
                matrix(&mut p, format!("iam.layer{l}.lu.{w}"), d, d, true);
            }
        }

        // Decoder: concatenated streams (2D) to P frames per channel,
        // decoded as residuals on the last observed frame. Zero-initialized
        // so the untrained model predicts the constant-pose baseline.
        p.push(ParamEntry {
            name: "decoder.weight".into(),
            shape: vec![2 * d, cfg.pred_frames],
            data: vec![0.0; 2 * d * cfg.pred_frames],
            trainable: true,
            decay: true,
        });
        fill(&mut p, "decoder.bias".into(), cfg.pred_frames, 0.0, true);

        Ok(p)
    }
}

// ------------------------------------------------------------ checkpoints

const MAGIC: [u8; 4] = *b"RMP1";

/// Serialize config + parameters: magic `RMP1`; nine u32 header fields
/// (persons, joints, obs, pred, feature, heads, cross, gc, iam) plus the
/// dropout rate as f64; then each entry as name length, name bytes, rank,
/// dims, and little-endian f64 payload. Bit-exact by construction.
pub fn save_checkpoint(
    cfg: &ModelConfig,
    params: &ModelParams,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MAGIC);
    for v in [
        cfg.persons,
        cfg.joints,
        cfg.obs_frames,
        cfg.pred_frames,
        cfg.feature,
        cfg.heads,
        cfg.cross_blocks,
        cfg.gc_blocks,
        cfg.iam_layers,
    ] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&cfg.dropout.to_le_bytes());
    bytes.extend_from_slice(&(params.entries.len() as u32).to_le_bytes());
    for e in &params.entries {
        bytes.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(e.name.as_bytes());
        bytes.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &dim in &e.shape {
            bytes.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &x in &e.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.offset + n > self.bytes.len() {
            return Err(ModelError::CheckpointTruncated { offset: self.offset });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}

/// Load a checkpoint: rebuild the parameter skeleton from the header
/// config, then overwrite every entry by name. The stored entry set must
/// match the config-derived set exactly.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams), ModelError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { bytes: &bytes, offset: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(ModelError::CheckpointMagic { found });
    }
    let mut dims = [0usize; 9];
    for d in dims.iter_mut() {
        *d = r.u32()?;
    }
    let cfg = ModelConfig {
        persons: dims[0],
        joints: dims[1],
        obs_frames: dims[2],
        pred_frames: dims[3],
        feature: dims[4],
        heads: dims[5],
        cross_blocks: dims[6],
        gc_blocks: dims[7],
        iam_layers: dims[8],
        dropout: r.f64()?,
    };
    cfg.validate()?;
    let mut params = ModelParams::init(&cfg, 0)?;
    let count = r.u32()?;
    let mut seen = vec![false; params.entries.len()];
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| ModelError::CheckpointTruncated { offset: r.offset })?;
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        let i = *params
            .index
            .get(&name)
            .ok_or(ModelError::UnknownParam { name: name.clone() })?;
        if params.entries[i].shape != shape {
            return Err(ModelError::ParamShape {
                name,
                got: shape,
                expected: params.entries[i].shape.clone(),
            });
        }
        params.entries[i].data = data;
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(ModelError::MissingParam {
            name: params.entries[i].name.clone(),
        });
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_order_independent_per_entry() {
        let cfg = ModelConfig::toy();
        let a = ModelParams::init(&cfg, 42).unwrap();
        let b = ModelParams::init(&cfg, 42).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x, y);
        }
        // A wider config leaves shared entry values identical (streams are
        // keyed by name, not position).
        let mut wide = cfg;
        wide.iam_layers = 2;
        let w = ModelParams::init(&wide, 42).unwrap();
        assert_eq!(
            a.get("proj.w1").unwrap().data,
            w.get("proj.w1").unwrap().data
        );
        assert_eq!(
            a.get("intra.block1.adj").unwrap().data,
            w.get("intra.block1.adj").unwrap().data
        );
    }

    #[test]
    fn seeds_change_weights_but_not_structure() {
        let cfg = ModelConfig::toy();
        let a = ModelParams::init(&cfg, 1).unwrap();
        let b = ModelParams::init(&cfg, 2).unwrap();
        assert_ne!(
            a.get("proj.w1").unwrap().data,
            b.get("proj.w1").unwrap().data
        );
        assert_eq!(a.entries().len(), b.entries().len());
    }

    #[test]
    fn policy_flags_follow_entry_kind() {
        let p = ModelParams::init(&ModelConfig::toy(), 0).unwrap();
        let by = |n: &str| p.get(n).unwrap();
        assert!(by("encoder.lin0.weight").decay);
        assert!(!by("encoder.lin0.bias").decay);
        assert!(!by("inter.lambda").decay);
        assert!(!by("intra.block0.adj").decay && by("intra.block0.adj").trainable);
        assert!(!by("intra.block0.bn.gain").decay && by("intra.block0.bn.gain").trainable);
        assert!(!by("intra.block0.bn.running_mean").trainable);
        assert!(!by("intra.block0.bn.running_var").trainable);
        assert!(by("decoder.weight").decay);
        assert_eq!(by("inter.lambda").data, vec![0.0]);
        assert_eq!(by("encoder.lin1.bias").data, vec![0.0; 8]);
        assert_eq!(by("intra.block0.bn.running_var").data, vec![1.0; 8]);
        // Residual-path zero inits: graph-conv blocks start as pure skips,
        // the decoder starts at the constant-pose baseline.
        assert_eq!(by("intra.block0.bn.gain").data, vec![0.0; 8]);
        assert!(by("decoder.weight").data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn glorot_bounds_hold() {
        let cfg = ModelConfig::toy();
        let p = ModelParams::init(&cfg, 3).unwrap();
        let w = p.get("encoder.lin1.weight").unwrap();
        let limit = (6.0 / 16.0f64).sqrt();
        assert!(w.data.iter().all(|x| x.abs() <= limit));
        assert!(w.data.iter().any(|x| x.abs() > limit * 0.5));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = ModelConfig::toy();
        let mut params = ModelParams::init(&cfg, 7).unwrap();
        // Perturb running stats so non-default state is covered.
        params
            .get_mut("intra.block0.bn.running_mean")
            .unwrap()
            .data[2] = 0.125;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rmp");
        save_checkpoint(&cfg, &params, &path).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params.entries().len(), params2.entries().len());
        for (a, b) in params.entries().iter().zip(params2.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits(), "{}", a.name);
            }
        }
    }

    #[test]
    fn checkpoint_bad_magic_and_truncation_error() {
        let cfg = ModelConfig::toy();
        let params = ModelParams::init(&cfg, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rmp");
        save_checkpoint(&cfg, &params, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'Z';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ModelError::CheckpointMagic { .. })
        ));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ModelError::CheckpointTruncated { .. })
        ));
    }

    #[test]
    fn unknown_name_lookup_errors() {
        let p = ModelParams::init(&ModelConfig::toy(), 0).unwrap();
        assert!(matches!(
            p.get("encoder.lin9.weight"),
            Err(ModelError::UnknownParam { .. })
        ));
    }

    #[test]
    fn trainable_count_covers_weights_not_stats() {
        let cfg = ModelConfig::toy();
        let p = ModelParams::init(&cfg, 0).unwrap();
        let total: usize = p.entries().iter().map(|e| e.len()).sum();
        let running: usize = p
            .entries()
            .iter()
            .filter(|e| !e.trainable)
            .map(|e| e.len())
            .sum();
        assert_eq!(p.trainable_len(), total - running);
        assert_eq!(running, 2 * cfg.gc_blocks * cfg.feature);
    }
}

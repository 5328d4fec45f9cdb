//! The prediction network: configuration, parameters, and the forward
//! pipeline.
//!
//! One person's observed motion enters as `C = J*3` channel tokens. An
//! encoder MLP lifts the temporal axis to a `D`-wide feature per channel;
//! two parallel branches then learn relations — cross-attention between
//! persons (weighted by a learnable distance-decay factor) and graph
//! convolution over the channels of each person — and an attention-based
//! aggregation module fuses the two streams before a linear decoder emits
//! future positions as residuals on the last observed frame.
//!
//! Submodules:
//! * [`params`] — named parameter store, initialization, checkpoints.
//! * [`net`] — the differentiable forward pieces and the full pipeline.

pub mod net;
pub mod params;

pub use net::{
    alpha_weight, forward_tensors, mean_joint_distance, positional_encoding, predict,
    predictions_to_pose,
};
pub use params::{load_checkpoint, save_checkpoint, ModelParams, ParamEntry};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {reason}")]
    BadConfig { reason: String },
    #[error("scene does not match model config: {reason}")]
    SceneMismatch { reason: String },
    #[error("unknown parameter {name:?}")]
    UnknownParam { name: String },
    #[error("checkpoint missing parameter {name:?}")]
    MissingParam { name: String },
    #[error("parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("self-pair: person {n} cannot attend to itself")]
    SelfPair { n: usize },
    #[error("bad checkpoint magic: expected \"RMP1\", found {found:?}")]
    CheckpointMagic { found: [u8; 4] },
    #[error("checkpoint truncated at byte {offset}")]
    CheckpointTruncated { offset: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tape(#[from] crate::tensor::TapeError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Static architecture description. Persons, frames, and joints must match
/// the scenes the model runs on; the rest sizes the network itself.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub persons: usize,
    pub joints: usize,
    pub obs_frames: usize,
    pub pred_frames: usize,
    /// Feature width D of every token.
    pub feature: usize,
    /// Attention heads H; must divide `feature`.
    pub heads: usize,
    /// Cross-attention blocks chained per person pair.
    pub cross_blocks: usize,
    /// Graph-convolution blocks in the intra branch.
    pub gc_blocks: usize,
    /// Aggregation layers fusing the two streams.
    pub iam_layers: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Channel count: one token per joint coordinate.
    pub fn channels(&self) -> usize {
        self.joints * 3
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::BadConfig { reason });
        if self.persons < 1 {
            return bad("persons must be >= 1".into());
        }
        if self.joints < 2 {
            return bad(format!("joints must be >= 2, got {}", self.joints));
        }
        if self.obs_frames < 2 {
            return bad(format!("observed frames must be >= 2, got {}", self.obs_frames));
        }
        if self.pred_frames < 1 {
            return bad("predicted frames must be >= 1".into());
        }
        if self.feature == 0 || self.heads == 0 || self.feature % self.heads != 0 {
            return bad(format!(
                "feature width {} must be a positive multiple of heads {}",
                self.feature, self.heads
            ));
        }
        if self.cross_blocks < 1 || self.gc_blocks < 1 || self.iam_layers < 1 {
            return bad("cross_blocks, gc_blocks, and iam_layers must all be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Smallest config that exercises every code path; used by the
    /// gradient suite and the overfit experiment.
    pub fn toy() -> Self {
        ModelConfig {
            persons: 2,
            joints: 3,
            obs_frames: 4,
            pred_frames: 2,
            feature: 8,
            heads: 2,
            cross_blocks: 1,
            gc_blocks: 2,
            iam_layers: 1,
            dropout: 0.0,
        }
    }

    /// Desk-scale default: sized to train on one CPU in minutes.
    pub fn desk_default() -> Self {
        ModelConfig {
            persons: 2,
            joints: 15,
            obs_frames: 15,
            pred_frames: 15,
            feature: 64,
            heads: 8,
            cross_blocks: 4,
            gc_blocks: 13,
            iam_layers: 4,
            dropout: 0.1,
        }
    }
}

/// Switches that remove one part of the pipeline at a time, for isolating
/// each component's contribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Feed raw positions to the encoder instead of frame differences.
    pub no_velocity_input: bool,
    /// Zero the per-person graph-convolution branch.
    pub no_intra: bool,
    /// Zero the cross-person attention branch.
    pub no_inter: bool,
    /// Skip the aggregation module; decode the two branch outputs
    /// concatenated as-is.
    pub no_iam: bool,
}

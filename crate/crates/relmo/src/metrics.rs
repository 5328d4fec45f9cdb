//! Evaluation metrics for multi-person pose prediction.
//!
//! Two standard measures over a predicted pose block and its ground
//! truth (`N` persons x `P` frames x `J` joints x 3):
//!
//! * **Per-frame displacement norm** ([`vim_at`]): at one frame, the mean
//!   over persons of the Euclidean norm of the stacked `J*3` error vector.
//! * **Mean per-joint position error** ([`mpjpe`]): the mean over frames,
//!   persons, and joints of the per-joint Euclidean distance.
//!
//! Both are plain functions of the two blocks — no visibility masks, no
//! alignment. Frame indices are 0-based within the predicted window.

use crate::data::PoseSeq;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: prediction {pred:?} vs truth {truth:?} (persons, frames, joints)")]
    ShapeMismatch {
        pred: (usize, usize, usize),
        truth: (usize, usize, usize),
    },
    #[error("frame {frame} out of range: prediction has {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("horizon list is empty")]
    NoHorizons,
}

fn check_shapes(pred: &PoseSeq, truth: &PoseSeq) -> Result<(), MetricsError> {
    if !pred.same_shape(truth) {
        return Err(MetricsError::ShapeMismatch {
            pred: (pred.persons, pred.frames, pred.joints),
            truth: (truth.persons, truth.frames, truth.joints),
        });
    }
    Ok(())
}

/// Mean over persons of the Euclidean norm of the whole-body displacement
/// error at one frame: `(1/N) Σ_n sqrt(Σ_j Σ_c (Y - Ŷ)²)`.
pub fn vim_at(pred: &PoseSeq, truth: &PoseSeq, frame: usize) -> Result<f64, MetricsError> {
    check_shapes(pred, truth)?;
    if frame >= pred.frames {
        return Err(MetricsError::FrameOutOfRange {
            frame,
            frames: pred.frames,
        });
    }
    let mut total = 0.0;
    for n in 0..pred.persons {
        let mut sq = 0.0;
        for j in 0..pred.joints {
            let a = pred.get(n, frame, j);
            let b = truth.get(n, frame, j);
            for k in 0..3 {
                let d = a[k] - b[k];
                sq += d * d;
            }
        }
        total += sq.sqrt();
    }
    Ok(total / pred.persons as f64)
}

/// Mean per-joint position error over the first `frames` predicted frames:
/// `(1/frames)(1/N)(1/J) Σ_t Σ_n Σ_j ‖Y - Ŷ‖₂`.
pub fn mpjpe_upto(pred: &PoseSeq, truth: &PoseSeq, frames: usize) -> Result<f64, MetricsError> {
    check_shapes(pred, truth)?;
    if frames == 0 || frames > pred.frames {
        return Err(MetricsError::FrameOutOfRange {
            frame: frames,
            frames: pred.frames,
        });
    }
    let mut total = 0.0;
    for t in 0..frames {
        for n in 0..pred.persons {
            for j in 0..pred.joints {
                let a = pred.get(n, t, j);
                let b = truth.get(n, t, j);
                let mut sq = 0.0;
                for k in 0..3 {
                    let d = a[k] - b[k];
                    sq += d * d;
                }
                total += sq.sqrt();
            }
        }
    }
    Ok(total / (frames * pred.persons * pred.joints) as f64)
}

/// Mean per-joint position error over the full predicted window.
pub fn mpjpe(pred: &PoseSeq, truth: &PoseSeq) -> Result<f64, MetricsError> {
    mpjpe_upto(pred, truth, pred.frames.max(1))
}

/// Named per-horizon metric values plus their unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReport {
    pub metric: String,
    /// `(frame index, value)` pairs in the order requested.
    pub entries: Vec<(usize, f64)>,
    /// Unweighted mean of the listed horizons.
    pub average: f64,
}

impl HorizonReport {
    /// One CSV row per horizon plus a final `avg` row:
    /// `metric,frame,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,frame,value\n");
        for (frame, value) in &self.entries {
            out.push_str(&format!("{},{},{:.16e}\n", self.metric, frame, value));
        }
        out.push_str(&format!("{},avg,{:.16e}\n", self.metric, self.average));
        out
    }
}

fn horizon_report<F>(
    metric: &str,
    horizons: &[usize],
    mut eval: F,
) -> Result<HorizonReport, MetricsError>
where
    F: FnMut(usize) -> Result<f64, MetricsError>,
{
    if horizons.is_empty() {
        return Err(MetricsError::NoHorizons);
    }
    let mut entries = Vec::with_capacity(horizons.len());
    let mut sum = 0.0;
    for &h in horizons {
        let v = eval(h)?;
        sum += v;
        entries.push((h, v));
    }
    Ok(HorizonReport {
        metric: metric.to_string(),
        entries,
        average: sum / horizons.len() as f64,
    })
}

/// Per-frame displacement norm at each requested horizon (0-based frame
/// indices), with their unweighted mean.
pub fn vim_report(
    pred: &PoseSeq,
    truth: &PoseSeq,
    horizons: &[usize],
) -> Result<HorizonReport, MetricsError> {
    horizon_report("vim", horizons, |h| vim_at(pred, truth, h))
}

/// Mean per-joint error accumulated up to each requested horizon
/// (`frame index h` means frames `0..=h`), with the unweighted mean.
pub fn mpjpe_report(
    pred: &PoseSeq,
    truth: &PoseSeq,
    horizons: &[usize],
) -> Result<HorizonReport, MetricsError> {
    horizon_report("mpjpe", horizons, |h| mpjpe_upto(pred, truth, h + 1))
}

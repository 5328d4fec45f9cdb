//! Scenes, velocity views, synthetic data, and the `.mmp` dataset format.
//!
//! A [`Scene`] holds the full coordinate block for one multi-person clip:
//! `N` persons x `T + P` frames x `J` joints x 3 coordinates, where the
//! first `T` frames are the observed window and the last `P` frames are the
//! ground-truth future. The network consumes per-person *velocities*
//! ([`velocity_augment`]) rather than absolute positions; the inverse view
//! ([`reconstruct_positions`]) exists so the velocity representation is
//! auditable — the round trip must give back the original bits.
//!
//! [`generate_synthetic`] produces deterministic desk-scale scenes: a
//! linear root drift plus fixed skeletal offsets plus person-specific
//! sinusoidal gait, with an optional interaction term that couples people
//! together (used by the correlation tests). Generated coordinates are
//! snapped to a `2^-26` grid (about 15 nm), which makes every difference
//! and prefix sum exactly representable in f64 — that, not luck, is what
//! guarantees bit-identical velocity round trips.

use crate::rng::DetRng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid scene dimensions: {reason}")]
    InvalidDims { reason: String },
    #[error("scene contains non-finite coordinates")]
    NonFinite,
    #[error("velocity augmentation needs at least 2 observed frames, got {frames}")]
    TooFewFrames { frames: usize },
    #[error("shape mismatch: {reason}")]
    ShapeMismatch { reason: String },
    #[error("dataset is empty or scene dimensions are not homogeneous")]
    BadDataset,
    #[error("bad magic: expected \"MMP1\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("file truncated: need at least {needed} bytes, file has {got}")]
    Truncated { needed: usize, got: usize },
    #[error("header/payload length mismatch: header implies {expected} payload bytes, found {actual}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dimensions shared by every scene in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneDims {
    pub persons: usize,
    pub obs_frames: usize,
    pub pred_frames: usize,
    pub joints: usize,
}

impl SceneDims {
    pub fn total_frames(&self) -> usize {
        self.obs_frames + self.pred_frames
    }

    pub fn coord_count(&self) -> usize {
        self.persons * self.total_frames() * self.joints * 3
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| Err(DataError::InvalidDims { reason });
        if self.persons < 1 {
            return bad(format!("persons must be >= 1, got {}", self.persons));
        }
        if self.joints < 2 {
            return bad(format!("joints must be >= 2, got {}", self.joints));
        }
        if self.obs_frames < 2 {
            return bad(format!("observed frames must be >= 2, got {}", self.obs_frames));
        }
        if self.pred_frames < 1 {
            return bad(format!("predicted frames must be >= 1, got {}", self.pred_frames));
        }
        Ok(())
    }
}

/// One clip: observed window plus ground-truth future for every person.
///
/// Immutable after construction; coordinates are stored row-major in
/// `(person, frame, joint, coord)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    dims: SceneDims,
    coords: Vec<f64>,
}

impl Scene {
    pub fn new(dims: SceneDims, coords: Vec<f64>) -> Result<Self, DataError> {
        dims.validate()?;
        if coords.len() != dims.coord_count() {
            return Err(DataError::ShapeMismatch {
                reason: format!(
                    "expected {} coordinates for {:?}, got {}",
                    dims.coord_count(),
                    dims,
                    coords.len()
                ),
            });
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(DataError::NonFinite);
        }
        Ok(Scene { dims, coords })
    }

    pub fn dims(&self) -> SceneDims {
        self.dims
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    fn idx(&self, person: usize, frame: usize, joint: usize) -> usize {
        debug_assert!(person < self.dims.persons);
        debug_assert!(frame < self.dims.total_frames());
        debug_assert!(joint < self.dims.joints);
        ((person * self.dims.total_frames() + frame) * self.dims.joints + joint) * 3
    }

    /// Position of one joint at one (absolute) frame.
    pub fn pos(&self, person: usize, frame: usize, joint: usize) -> [f64; 3] {
        let i = self.idx(person, frame, joint);
        [self.coords[i], self.coords[i + 1], self.coords[i + 2]]
    }

    /// The observed window as a pose block (frames `0..T`).
    pub fn observed(&self) -> PoseSeq {
        self.frame_block(0, self.dims.obs_frames)
    }

    /// The ground-truth future as a pose block (frames `T..T+P`).
    pub fn future(&self) -> PoseSeq {
        self.frame_block(self.dims.obs_frames, self.dims.pred_frames)
    }

    fn frame_block(&self, start: usize, len: usize) -> PoseSeq {
        let d = self.dims;
        let mut data = Vec::with_capacity(d.persons * len * d.joints * 3);
        for n in 0..d.persons {
            for t in start..start + len {
                for j in 0..d.joints {
                    data.extend_from_slice(&self.pos(n, t, j));
                }
            }
        }
        PoseSeq {
            persons: d.persons,
            frames: len,
            joints: d.joints,
            data,
        }
    }

    /// Last observed frame of one person, flattened `J*3` in joint-major
    /// order — the residual base for decoding.
    pub fn last_observed(&self, person: usize) -> Vec<f64> {
        let t = self.dims.obs_frames - 1;
        let mut out = Vec::with_capacity(self.dims.joints * 3);
        for j in 0..self.dims.joints {
            out.extend_from_slice(&self.pos(person, t, j));
        }
        out
    }

    /// Observed positions of one person as a channel-major matrix
    /// (`J*3` rows, `T` columns; row `j*3 + coord`).
    pub fn observed_channels(&self, person: usize) -> Vec<f64> {
        let d = self.dims;
        let c = d.joints * 3;
        let mut out = vec![0.0; c * d.obs_frames];
        for t in 0..d.obs_frames {
            for j in 0..d.joints {
                let p = self.pos(person, t, j);
                for k in 0..3 {
                    out[(j * 3 + k) * d.obs_frames + t] = p[k];
                }
            }
        }
        out
    }

    /// Ground-truth future positions of one person as a channel-major
    /// matrix (`J*3` rows, `P` columns; row `j*3 + coord`).
    pub fn future_channels(&self, person: usize) -> Vec<f64> {
        let d = self.dims;
        let c = d.joints * 3;
        let mut out = vec![0.0; c * d.pred_frames];
        for (col, t) in (d.obs_frames..d.total_frames()).enumerate() {
            for j in 0..d.joints {
                let p = self.pos(person, t, j);
                for k in 0..3 {
                    out[(j * 3 + k) * d.pred_frames + col] = p[k];
                }
            }
        }
        out
    }
}

/// A dense pose block (`persons x frames x joints x 3`), used for both
/// predictions and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSeq {
    pub persons: usize,
    pub frames: usize,
    pub joints: usize,
    data: Vec<f64>,
}

impl PoseSeq {
    pub fn new(
        persons: usize,
        frames: usize,
        joints: usize,
        data: Vec<f64>,
    ) -> Result<Self, DataError> {
        if data.len() != persons * frames * joints * 3 {
            return Err(DataError::ShapeMismatch {
                reason: format!(
                    "pose block {persons}x{frames}x{joints}x3 needs {} values, got {}",
                    persons * frames * joints * 3,
                    data.len()
                ),
            });
        }
        Ok(PoseSeq {
            persons,
            frames,
            joints,
            data,
        })
    }

    pub fn zeros(persons: usize, frames: usize, joints: usize) -> Self {
        PoseSeq {
            persons,
            frames,
            joints,
            data: vec![0.0; persons * frames * joints * 3],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn idx(&self, person: usize, frame: usize, joint: usize) -> usize {
        debug_assert!(person < self.persons);
        debug_assert!(frame < self.frames);
        debug_assert!(joint < self.joints);
        ((person * self.frames + frame) * self.joints + joint) * 3
    }

    pub fn get(&self, person: usize, frame: usize, joint: usize) -> [f64; 3] {
        let i = self.idx(person, frame, joint);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, person: usize, frame: usize, joint: usize, v: [f64; 3]) {
        let i = self.idx(person, frame, joint);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    pub fn same_shape(&self, other: &PoseSeq) -> bool {
        self.persons == other.persons
            && self.frames == other.frames
            && self.joints == other.joints
    }
}

/// Frame-to-frame position differences over the observed window; the first
/// frame is exactly zero for every person and joint.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySeq {
    pub persons: usize,
    pub frames: usize,
    pub joints: usize,
    data: Vec<f64>,
}

impl VelocitySeq {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, person: usize, frame: usize, joint: usize) -> [f64; 3] {
        let i = ((person * self.frames + frame) * self.joints + joint) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// One person's velocities as a channel-major matrix
    /// (`J*3` rows, `T` columns; row `j*3 + coord`).
    pub fn channels(&self, person: usize) -> Vec<f64> {
        let c = self.joints * 3;
        let mut out = vec![0.0; c * self.frames];
        for t in 0..self.frames {
            for j in 0..self.joints {
                let v = self.get(person, t, j);
                for k in 0..3 {
                    out[(j * 3 + k) * self.frames + t] = v[k];
                }
            }
        }
        out
    }
}

/// Velocity view of the observed window: `v_1 = 0`, `v_t = x_t - x_{t-1}`.
pub fn velocity_augment(scene: &Scene) -> Result<VelocitySeq, DataError> {
    let d = scene.dims();
    if d.obs_frames < 2 {
        return Err(DataError::TooFewFrames { frames: d.obs_frames });
    }
    let mut data = Vec::with_capacity(d.persons * d.obs_frames * d.joints * 3);
    for n in 0..d.persons {
        for t in 0..d.obs_frames {
            for j in 0..d.joints {
                if t == 0 {
                    data.extend_from_slice(&[0.0, 0.0, 0.0]);
                } else {
                    let cur = scene.pos(n, t, j);
                    let prev = scene.pos(n, t - 1, j);
                    data.extend_from_slice(&[
                        cur[0] - prev[0],
                        cur[1] - prev[1],
                        cur[2] - prev[2],
                    ]);
                }
            }
        }
    }
    Ok(VelocitySeq {
        persons: d.persons,
        frames: d.obs_frames,
        joints: d.joints,
        data,
    })
}

/// Prefix-sum inverse of [`velocity_augment`]: `x_t = x_{t-1} + v_t`, with
/// `x_1` supplied as a single-frame pose block.
pub fn reconstruct_positions(v: &VelocitySeq, x1: &PoseSeq) -> Result<PoseSeq, DataError> {
    if x1.persons != v.persons || x1.joints != v.joints || x1.frames != 1 {
        return Err(DataError::ShapeMismatch {
            reason: format!(
                "first-frame block {}x{}x{} does not match velocities {}x{}x{}",
                x1.persons, x1.frames, x1.joints, v.persons, v.frames, v.joints
            ),
        });
    }
    let mut out = PoseSeq::zeros(v.persons, v.frames, v.joints);
    for n in 0..v.persons {
        for j in 0..v.joints {
            let mut cur = x1.get(n, 0, j);
            out.set(n, 0, j, cur);
            for t in 1..v.frames {
                let vel = v.get(n, t, j);
                cur = [cur[0] + vel[0], cur[1] + vel[1], cur[2] + vel[2]];
                out.set(n, t, j, cur);
            }
        }
    }
    Ok(out)
}

// -------------------------------------------------------- synthetic data

/// Configuration for the deterministic scene generator.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub dims: SceneDims,
    pub seed: u64,
    /// 0 = fully independent persons; > 0 pulls people toward each other
    /// and aligns their drift, producing measurable joint correlation.
    pub interaction_strength: f64,
}

/// Quantization grid for generated coordinates: every value is a multiple
/// of 2^-26 (~15 nm). Differences and prefix sums of such values with
/// magnitude below ~2^26 are exact in f64, so velocity round trips are
/// bit-identical by construction rather than by luck.
const GRID: f64 = 67_108_864.0; // 2^26

fn snap(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

const PERSON_SALT: u64 = 0x9e01;
const SCENE_SALT: u64 = 0x5c3d;
const DATASET_SALT: u64 = 0x6473_0000;

/// Per-person motion parameters, drawn from a stream that depends only on
/// `(seed, person)` — never on how many persons the scene has.
struct PersonMotion {
    root: [f64; 3],
    drift: [f64; 3],
    freq: f64,
    phase: f64,
    joint_offset: Vec<[f64; 3]>,
    joint_amp: Vec<[f64; 3]>,
    joint_phase: Vec<f64>,
}

fn person_motion(seed: u64, person: usize, joints: usize) -> PersonMotion {
    let mut rng = DetRng::derive(seed, PERSON_SALT + person as u64);
    // Spread starting positions around a rough circle so persons begin a
    // couple of meters apart.
    let angle = rng.range(0.0, std::f64::consts::TAU);
    let radius = rng.range(1.0, 2.0);
    let root = [
        radius * angle.cos(),
        rng.range(0.8, 1.0),
        radius * angle.sin(),
    ];
    let heading = rng.range(0.0, std::f64::consts::TAU);
    let speed = rng.range(0.006, 0.02); // meters per frame, gentle walk
    let drift = [speed * heading.cos(), 0.0, speed * heading.sin()];
    let freq = rng.range(0.4, 1.1); // radians per frame
    let phase = rng.range(0.0, std::f64::consts::TAU);
    let mut joint_offset = vec![[0.0; 3]];
    let mut joint_amp = vec![[
        rng.symmetric(0.03),
        rng.symmetric(0.03),
        rng.symmetric(0.03),
    ]];
    let mut joint_phase = vec![rng.range(0.0, std::f64::consts::TAU)];
    for _ in 1..joints {
        joint_offset.push([
            rng.symmetric(0.35),
            rng.symmetric(0.7),
            rng.symmetric(0.35),
        ]);
        joint_amp.push([
            rng.symmetric(0.09),
            rng.symmetric(0.09),
            rng.symmetric(0.09),
        ]);
        joint_phase.push(rng.range(0.0, std::f64::consts::TAU));
    }
    PersonMotion {
        root,
        drift,
        freq,
        phase,
        joint_offset,
        joint_amp,
        joint_phase,
    }
}

impl PersonMotion {
    fn root_at(&self, t: usize) -> [f64; 3] {
        let tf = t as f64;
        [
            self.root[0] + self.drift[0] * tf,
            self.root[1] + self.drift[1] * tf,
            self.root[2] + self.drift[2] * tf,
        ]
    }

    fn joint_at(&self, t: usize, j: usize) -> [f64; 3] {
        let r = self.root_at(t);
        let s = (self.freq * t as f64 + self.phase + self.joint_phase[j]).sin();
        [
            r[0] + self.joint_offset[j][0] + self.joint_amp[j][0] * s,
            r[1] + self.joint_offset[j][1] + self.joint_amp[j][1] * s,
            r[2] + self.joint_offset[j][2] + self.joint_amp[j][2] * s,
        ]
    }
}

/// Deterministic synthetic scene: linear root drift + fixed skeletal
/// offsets + person-specific sinusoidal gait. Joint 0 is the root.
///
/// With `interaction_strength > 0` the persons are coupled two ways, both
/// scaled by the strength: their drift directions are blended toward a
/// shared scene-level drift, and each person is pulled toward the nearest
/// other person frame by frame. At strength 0 the coupling pass is skipped
/// entirely, so each person's coordinates depend only on `(seed, person)`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Scene, DataError> {
    cfg.dims.validate()?;
    if !cfg.interaction_strength.is_finite() || cfg.interaction_strength < 0.0 {
        return Err(DataError::InvalidDims {
            reason: format!(
                "interaction_strength must be finite and >= 0, got {}",
                cfg.interaction_strength
            ),
        });
    }
    let d = cfg.dims;
    let frames = d.total_frames();
    let motions: Vec<PersonMotion> = (0..d.persons)
        .map(|p| person_motion(cfg.seed, p, d.joints))
        .collect();

    // Base (uncoupled) trajectories.
    let mut coords = vec![0.0; d.coord_count()];
    let write = |coords: &mut Vec<f64>, n: usize, t: usize, j: usize, v: [f64; 3]| {
        let i = ((n * frames + t) * d.joints + j) * 3;
        coords[i] = v[0];
        coords[i + 1] = v[1];
        coords[i + 2] = v[2];
    };
    for (n, m) in motions.iter().enumerate() {
        for t in 0..frames {
            for j in 0..d.joints {
                write(&mut coords, n, t, j, m.joint_at(t, j));
            }
        }
    }

    // Coupling pass: shared drift alignment + mutual attraction. Skipped
    // entirely at strength 0 so independence is exact, not approximate.
    let s = cfg.interaction_strength;
    if s > 0.0 && d.persons > 1 {
        let blend = s.min(1.0);
        let mut scene_rng = DetRng::derive(cfg.seed, SCENE_SALT);
        let shared_heading = scene_rng.range(0.0, std::f64::consts::TAU);
        let shared_speed = scene_rng.range(0.01, 0.02);
        let shared_drift = [
            shared_speed * shared_heading.cos(),
            0.0,
            shared_speed * shared_heading.sin(),
        ];
        // Per-person cumulative offset from the coupling dynamics.
        let mut offset = vec![[0.0f64; 3]; d.persons];
        let mut pull = vec![[0.0f64; 3]; d.persons];
        for t in 1..frames {
            // Roots as of the previous frame, coupling applied.
            let prev_root: Vec<[f64; 3]> = (0..d.persons)
                .map(|n| {
                    let r = motions[n].root_at(t - 1);
                    [
                        r[0] + offset[n][0],
                        r[1] + offset[n][1],
                        r[2] + offset[n][2],
                    ]
                })
                .collect();
            for n in 0..d.persons {
                // Nearest other person at the previous frame.
                let mut best = usize::MAX;
                let mut best_d2 = f64::INFINITY;
                for m in 0..d.persons {
                    if m == n {
                        continue;
                    }
                    let dx = prev_root[m][0] - prev_root[n][0];
                    let dy = prev_root[m][1] - prev_root[n][1];
                    let dz = prev_root[m][2] - prev_root[n][2];
                    let d2 = dx * dx + dy * dy + dz * dz;
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = m;
                    }
                }
                // Damped pull toward the nearest person.
                for k in 0..3 {
                    let toward = prev_root[best][k] - prev_root[n][k];
                    pull[n][k] = 0.85 * pull[n][k] + 0.004 * s.min(2.0) * toward;
                }
                // Drift correction: blend personal drift toward the shared
                // one, applied as an incremental offset per frame.
                for k in 0..3 {
                    let drift_delta = blend * (shared_drift[k] - motions[n].drift[k]);
                    offset[n][k] += drift_delta + pull[n][k];
                }
            }
            for n in 0..d.persons {
                for j in 0..d.joints {
                    let base = motions[n].joint_at(t, j);
                    write(
                        &mut coords,
                        n,
                        t,
                        j,
                        [
                            base[0] + offset[n][0],
                            base[1] + offset[n][1],
                            base[2] + offset[n][2],
                        ],
                    );
                }
            }
        }
    }

    for c in coords.iter_mut() {
        *c = snap(*c);
    }
    Scene::new(d, coords)
}

/// A whole dataset of independent scenes: scene `i` is generated from a
/// seed derived from `(seed, i)`, so adding scenes never shifts earlier
/// ones.
pub fn generate_dataset(
    dims: SceneDims,
    count: usize,
    seed: u64,
    interaction_strength: f64,
) -> Result<Vec<Scene>, DataError> {
    if count == 0 {
        return Err(DataError::BadDataset);
    }
    (0..count)
        .map(|i| {
            generate_synthetic(&SynthConfig {
                dims,
                seed: DetRng::derive(seed, DATASET_SALT + i as u64).next_u64(),
                interaction_strength,
            })
        })
        .collect()
}

// ----------------------------------------------------------- file format

const MAGIC: [u8; 4] = *b"MMP1";
const HEADER_LEN: usize = 4 + 5 * 4; // magic + five u32 fields

/// Write scenes to the `.mmp` binary format: magic `MMP1`; header
/// `N, T, P, J, count` as little-endian u32; payload as little-endian f64
/// in `(scene, person, frame, joint, coord)` order.
pub fn save_dataset(scenes: &[Scene], path: impl AsRef<Path>) -> Result<(), DataError> {
    let first = scenes.first().ok_or(DataError::BadDataset)?;
    let dims = first.dims();
    if scenes.iter().any(|s| s.dims() != dims) {
        return Err(DataError::BadDataset);
    }
    let mut bytes =
        Vec::with_capacity(HEADER_LEN + scenes.len() * dims.coord_count() * 8);
    bytes.extend_from_slice(&MAGIC);
    for v in [
        dims.persons,
        dims.obs_frames,
        dims.pred_frames,
        dims.joints,
        scenes.len(),
    ] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for scene in scenes {
        for &c in scene.coords() {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read scenes back from the `.mmp` format, validating magic, header, and
/// payload length with distinct errors.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Scene>, DataError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(DataError::BadMagic { found });
    }
    let u32_at = |i: usize| {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[4 + i * 4..8 + i * 4]);
        u32::from_le_bytes(b) as usize
    };
    let dims = SceneDims {
        persons: u32_at(0),
        obs_frames: u32_at(1),
        pred_frames: u32_at(2),
        joints: u32_at(3),
    };
    let count = u32_at(4);
    dims.validate()?;
    if count == 0 {
        return Err(DataError::BadDataset);
    }
    let expected = count * dims.coord_count() * 8;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(DataError::PayloadLength { expected, actual });
    }
    let mut scenes = Vec::with_capacity(count);
    let mut off = HEADER_LEN;
    for _ in 0..count {
        let n = dims.coord_count();
        let mut coords = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[off..off + 8]);
            coords.push(f64::from_le_bytes(b));
            off += 8;
        }
        scenes.push(Scene::new(dims, coords)?);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dims() -> SceneDims {
        SceneDims {
            persons: 2,
            obs_frames: 4,
            pred_frames: 2,
            joints: 3,
        }
    }

    fn gen(seed: u64, strength: f64) -> Scene {
        generate_synthetic(&SynthConfig {
            dims: toy_dims(),
            seed,
            interaction_strength: strength,
        })
        .unwrap()
    }

    #[test]
    fn scene_rejects_bad_dims_and_non_finite() {
        let mut d = toy_dims();
        d.joints = 1;
        assert!(matches!(
            Scene::new(d, vec![]),
            Err(DataError::InvalidDims { .. })
        ));
        let d = toy_dims();
        let mut coords = vec![0.0; d.coord_count()];
        coords[5] = f64::NAN;
        assert!(matches!(Scene::new(d, coords), Err(DataError::NonFinite)));
    }

    #[test]
    fn velocity_of_constant_positions_is_zero() {
        let d = toy_dims();
        let scene = Scene::new(d, vec![1.5; d.coord_count()]).unwrap();
        let v = velocity_augment(&scene).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn velocity_hand_differences() {
        // x-channel of joint 0 follows [0, 1, 3, 6]; expect v = [0, 1, 2, 3].
        let d = SceneDims {
            persons: 1,
            obs_frames: 4,
            pred_frames: 1,
            joints: 2,
        };
        let mut coords = vec![0.0; d.coord_count()];
        for (t, x) in [0.0, 1.0, 3.0, 6.0].iter().enumerate() {
            coords[(t * d.joints) * 3] = *x;
        }
        let scene = Scene::new(d, coords).unwrap();
        let v = velocity_augment(&scene).unwrap();
        let xs: Vec<f64> = (0..4).map(|t| v.get(0, t, 0)[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn velocity_first_frame_always_zero() {
        let scene = gen(11, 0.7);
        let v = velocity_augment(&scene).unwrap();
        for n in 0..2 {
            for j in 0..3 {
                assert_eq!(v.get(n, 0, j), [0.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn reconstruct_of_zero_velocities_is_constant() {
        let v = VelocitySeq {
            persons: 1,
            frames: 3,
            joints: 2,
            data: vec![0.0; 18],
        };
        let mut x1 = PoseSeq::zeros(1, 1, 2);
        x1.set(0, 0, 0, [1.0, 2.0, 3.0]);
        x1.set(0, 0, 1, [-1.0, 0.5, 0.0]);
        let out = reconstruct_positions(&v, &x1).unwrap();
        for t in 0..3 {
            assert_eq!(out.get(0, t, 0), [1.0, 2.0, 3.0]);
            assert_eq!(out.get(0, t, 1), [-1.0, 0.5, 0.0]);
        }
    }

    #[test]
    fn reconstruct_hand_case() {
        // v = [0, 1, 1] on one channel from x1 = 0 gives [0, 1, 2].
        let mut data = vec![0.0; 18];
        data[6] = 1.0; // frame 1, joint 0, x
        data[12] = 1.0; // frame 2, joint 0, x
        let v = VelocitySeq {
            persons: 1,
            frames: 3,
            joints: 2,
            data,
        };
        let x1 = PoseSeq::zeros(1, 1, 2);
        let out = reconstruct_positions(&v, &x1).unwrap();
        let xs: Vec<f64> = (0..3).map(|t| out.get(0, t, 0)[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn round_trip_is_bit_exact_on_generated_scenes() {
        for seed in 0..25u64 {
            let scene = gen(seed, if seed % 2 == 0 { 0.0 } else { 1.0 });
            let v = velocity_augment(&scene).unwrap();
            let observed = scene.observed();
            let mut x1 = PoseSeq::zeros(2, 1, 3);
            for n in 0..2 {
                for j in 0..3 {
                    x1.set(n, 0, j, observed.get(n, 0, j));
                }
            }
            let rec = reconstruct_positions(&v, &x1).unwrap();
            for n in 0..2 {
                for t in 0..4 {
                    for j in 0..3 {
                        let a = observed.get(n, t, j);
                        let b = rec.get(n, t, j);
                        for k in 0..3 {
                            assert_eq!(
                                a[k].to_bits(),
                                b[k].to_bits(),
                                "seed {seed} person {n} frame {t} joint {j} coord {k}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(gen(42, 0.5), gen(42, 0.5));
        assert_ne!(gen(42, 0.5), gen(43, 0.5));
    }

    #[test]
    fn generator_persons_independent_without_interaction() {
        // Adding a third person must not disturb the first two: each person
        // draws from a stream keyed only by (seed, person index).
        let two = gen(7, 0.0);
        let three = generate_synthetic(&SynthConfig {
            dims: SceneDims {
                persons: 3,
                ..toy_dims()
            },
            seed: 7,
            interaction_strength: 0.0,
        })
        .unwrap();
        for n in 0..2 {
            for t in 0..6 {
                for j in 0..3 {
                    assert_eq!(two.pos(n, t, j), three.pos(n, t, j));
                }
            }
        }
    }

    #[test]
    fn generator_rejects_negative_strength() {
        let r = generate_synthetic(&SynthConfig {
            dims: toy_dims(),
            seed: 1,
            interaction_strength: -0.5,
        });
        assert!(r.is_err());
    }

    #[test]
    fn observed_and_future_split_the_frames() {
        let scene = gen(3, 0.0);
        let obs = scene.observed();
        let fut = scene.future();
        assert_eq!((obs.frames, fut.frames), (4, 2));
        assert_eq!(obs.get(0, 3, 1), scene.pos(0, 3, 1));
        assert_eq!(fut.get(0, 0, 1), scene.pos(0, 4, 1));
        assert_eq!(scene.last_observed(1)[..3], scene.pos(1, 3, 0));
    }

    #[test]
    fn channel_matrix_layout() {
        let scene = gen(5, 0.0);
        let ch = scene.observed_channels(1);
        // Row j*3+k, column t.
        let p = scene.pos(1, 2, 1);
        assert_eq!(ch[(1 * 3 + 2) * 4 + 2], p[2]);
        let v = velocity_augment(&scene).unwrap();
        let vch = v.channels(0);
        let vv = v.get(0, 3, 2);
        assert_eq!(vch[(2 * 3 + 0) * 4 + 3], vv[0]);
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.mmp");
        let scenes: Vec<Scene> = (0..3).map(|s| gen(s, 0.8)).collect();
        save_dataset(&scenes, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in scenes.iter().zip(&back) {
            assert_eq!(a.dims(), b.dims());
            for (x, y) in a.coords().iter().zip(b.coords()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn dataset_bad_magic_is_its_own_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.mmp");
        save_dataset(&[gen(0, 0.0)], &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DataError::BadMagic { .. })
        ));
    }

    #[test]
    fn dataset_truncated_by_one_byte_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.mmp");
        save_dataset(&[gen(0, 0.0)], &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        match load_dataset(&path) {
            Err(DataError::PayloadLength { expected, actual }) => {
                assert_eq!(actual + 1, expected);
            }
            other => panic!("expected PayloadLength, got {other:?}"),
        }
    }

    #[test]
    fn dataset_shorter_than_header_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.mmp");
        std::fs::write(&path, b"MMP1\x01\x00").unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn dataset_rejects_heterogeneous_scenes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.mmp");
        let a = gen(0, 0.0);
        let b = generate_synthetic(&SynthConfig {
            dims: SceneDims {
                joints: 4,
                ..toy_dims()
            },
            seed: 0,
            interaction_strength: 0.0,
        })
        .unwrap();
        assert!(matches!(
            save_dataset(&[a, b], &path),
            Err(DataError::BadDataset)
        ));
    }

    #[test]
    fn snapped_coordinates_sit_on_the_grid() {
        let scene = gen(9, 1.3);
        for &c in scene.coords() {
            let scaled = c * super::GRID;
            assert_eq!(scaled, scaled.round(), "coordinate {c} off-grid");
        }
    }
}

//! Inter-person joint correlation analysis.
//!
//! Quantifies how strongly two persons' joints move together: each joint's
//! 3-D trajectory over the observed window is reduced to a scalar series
//! (the Euclidean norm of its displacement from its own temporal mean),
//! and every joint pair gets a standard sample Pearson correlation
//! coefficient. Constant joints have no correlation to speak of; they are
//! reported as 0 with a `degenerate` flag instead of NaN so matrices stay
//! renderable.

use crate::data::{DataError, Scene};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("series too short: Pearson correlation needs at least 2 samples, got {len}")]
    TooShort { len: usize },
    #[error("series lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("person index {person} out of range for {persons} persons")]
    PersonOutOfRange { person: usize, persons: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A Pearson coefficient plus a flag marking zero-variance inputs (for
/// which the coefficient is reported as 0 by convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PccValue {
    pub r: f64,
    pub degenerate: bool,
}

/// Standard sample Pearson correlation between two equal-length series.
///
/// Two-pass: means first, then centered covariance and variances. Either
/// series having zero variance yields `r = 0` with `degenerate = true`.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<PccValue, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.len() < 2 {
        return Err(AnalysisError::TooShort { len: a.len() });
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(PccValue { r: 0.0, degenerate: true });
    }
    // Rounding can push perfectly collinear inputs a few ulps past +/-1;
    // clamp so the Cauchy-Schwarz bound holds exactly.
    Ok(PccValue {
        r: (cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Joint-by-joint correlation matrix between two persons.
#[derive(Debug, Clone)]
pub struct PccMatrix {
    pub joints: usize,
    pub person_a: usize,
    pub person_b: usize,
    /// Row i, column j: correlation between joint i of person a and joint
    /// j of person b.
    values: Vec<f64>,
    degenerate: Vec<bool>,
}

impl PccMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.joints + j]
    }

    pub fn is_degenerate(&self, i: usize, j: usize) -> bool {
        self.degenerate[i * self.joints + j]
    }

    /// Mean of |r| over all non-degenerate entries (0 if none).
    pub fn mean_abs(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (v, d) in self.values.iter().zip(&self.degenerate) {
            if !d {
                sum += v.abs();
                count += 1;
            }
        }
        if count == 0 { 0.0 } else { sum / count as f64 }
    }

    /// How many entries had a zero-variance series on either side.
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Scalarize one joint's observed trajectory: per-frame Euclidean norm of
/// the displacement from the joint's temporal mean position.
fn displacement_series(scene: &Scene, person: usize, joint: usize) -> Vec<f64> {
    let t_obs = scene.dims().obs_frames;
    let mut mean = [0.0f64; 3];
    for t in 0..t_obs {
        let p = scene.pos(person, t, joint);
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    for m in mean.iter_mut() {
        *m /= t_obs as f64;
    }
    (0..t_obs)
        .map(|t| {
            let p = scene.pos(person, t, joint);
            let dx = p[0] - mean[0];
            let dy = p[1] - mean[1];
            let dz = p[2] - mean[2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .collect()
}

/// Raw single-coordinate series of one joint over the observed window
/// (coord 0 = x). Used for trajectory-level correlation probes.
pub fn coordinate_series(scene: &Scene, person: usize, joint: usize, coord: usize) -> Vec<f64> {
    assert!(coord < 3, "coordinate index must be 0..3");
    (0..scene.dims().obs_frames)
        .map(|t| scene.pos(person, t, joint)[coord])
        .collect()
}

/// Correlation matrix over the observed window between all joints of
/// `person_a` and all joints of `person_b`.
pub fn pcc_matrix(
    scene: &Scene,
    person_a: usize,
    person_b: usize,
) -> Result<PccMatrix, AnalysisError> {
    let d = scene.dims();
    for p in [person_a, person_b] {
        if p >= d.persons {
            return Err(AnalysisError::PersonOutOfRange {
                person: p,
                persons: d.persons,
            });
        }
    }
    let series_a: Vec<Vec<f64>> = (0..d.joints)
        .map(|j| displacement_series(scene, person_a, j))
        .collect();
    let series_b: Vec<Vec<f64>> = (0..d.joints)
        .map(|j| displacement_series(scene, person_b, j))
        .collect();
    let mut values = Vec::with_capacity(d.joints * d.joints);
    let mut degenerate = Vec::with_capacity(d.joints * d.joints);
    for i in 0..d.joints {
        for j in 0..d.joints {
            let v = pcc(&series_a[i], &series_b[j])?;
            values.push(v.r);
            degenerate.push(v.degenerate);
        }
    }
    Ok(PccMatrix {
        joints: d.joints,
        person_a,
        person_b,
        values,
        degenerate,
    })
}

/// Mean |PCC| between two persons averaged over every scene in a dataset —
/// the summary statistic used to compare coupled vs uncoupled data.
pub fn dataset_mean_abs_pcc(
    scenes: &[Scene],
    person_a: usize,
    person_b: usize,
) -> Result<f64, AnalysisError> {
    if scenes.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for scene in scenes {
        sum += pcc_matrix(scene, person_a, person_b)?.mean_abs();
    }
    Ok(sum / scenes.len() as f64)
}

/// Write a matrix as CSV: a header row of joint indices, then one row per
/// joint of person a, 17 significant digits per value.
pub fn export_pcc_csv(m: &PccMatrix, path: impl AsRef<Path>) -> Result<(), AnalysisError> {
    let mut out = String::new();
    out.push_str("joint");
    for j in 0..m.joints {
        out.push_str(&format!(",{j}"));
    }
    out.push('\n');
    for i in 0..m.joints {
        out.push_str(&i.to_string());
        for j in 0..m.joints {
            out.push_str(&format!(",{:.16e}", m.get(i, j)));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SceneDims, SynthConfig};
    use crate::rng::DetRng;

    fn toy_scene(seed: u64, strength: f64) -> Scene {
        generate_synthetic(&SynthConfig {
            dims: SceneDims {
                persons: 2,
                obs_frames: 12,
                pred_frames: 2,
                joints: 4,
            },
            seed,
            interaction_strength: strength,
        })
        .unwrap()
    }

    #[test]
    fn pcc_self_is_one() {
        let x = [1.0, 2.0, 4.0, 8.0, 3.0];
        let v = pcc(&x, &x).unwrap();
        assert!(!v.degenerate);
        assert!((v.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcc_negated_is_minus_one() {
        let x = [1.0, 2.0, 4.0, 8.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let v = pcc(&x, &y).unwrap();
        assert!((v.r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcc_matches_independent_two_pass_oracle() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 2.0, 3.5];
        // Oracle computed the long way, written separately from pcc().
        let ma = a.iter().sum::<f64>() / 3.0;
        let mb = b.iter().sum::<f64>() / 3.0;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let sa: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>().sqrt();
        let sb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>().sqrt();
        let oracle = cov / (sa * sb);
        let v = pcc(&a, &b).unwrap();
        assert!((v.r - oracle).abs() < 1e-12);
    }

    #[test]
    fn pcc_zero_variance_is_flagged_zero() {
        let x = [2.0, 2.0, 2.0];
        let y = [1.0, 2.0, 3.0];
        let v = pcc(&x, &y).unwrap();
        assert_eq!(v.r, 0.0);
        assert!(v.degenerate);
    }

    #[test]
    fn pcc_rejects_short_or_mismatched() {
        assert!(matches!(
            pcc(&[1.0], &[2.0]),
            Err(AnalysisError::TooShort { .. })
        ));
        assert!(matches!(
            pcc(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pcc_bounded_and_symmetric_on_random_series() {
        let mut rng = DetRng::new(99);
        for _ in 0..200 {
            let a: Vec<f64> = (0..12).map(|_| rng.symmetric(5.0)).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.symmetric(5.0)).collect();
            let ab = pcc(&a, &b).unwrap().r;
            let ba = pcc(&b, &a).unwrap().r;
            assert!(ab.abs() <= 1.0 + 1e-12);
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn pcc_positive_affine_invariant() {
        let mut rng = DetRng::new(7);
        for _ in 0..50 {
            let a: Vec<f64> = (0..10).map(|_| rng.symmetric(2.0)).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.symmetric(2.0)).collect();
            let scale = rng.range(0.1, 5.0);
            let shift = rng.symmetric(10.0);
            let a2: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            let base = pcc(&a, &b).unwrap().r;
            let affine = pcc(&a2, &b).unwrap().r;
            assert!(
                (base - affine).abs() < 1e-10,
                "affine transform moved pcc from {base} to {affine}"
            );
        }
    }

    #[test]
    fn matrix_diagonal_is_one_for_self_pair() {
        let scene = toy_scene(3, 0.0);
        let m = pcc_matrix(&scene, 1, 1).unwrap();
        for j in 0..4 {
            assert!(!m.is_degenerate(j, j));
            assert!((m.get(j, j) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_cross_pair_is_transpose_of_reverse() {
        let scene = toy_scene(5, 0.9);
        let ab = pcc_matrix(&scene, 0, 1).unwrap();
        let ba = pcc_matrix(&scene, 1, 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((ab.get(i, j) - ba.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_person_out_of_range_errors() {
        let scene = toy_scene(1, 0.0);
        assert!(matches!(
            pcc_matrix(&scene, 0, 2),
            Err(AnalysisError::PersonOutOfRange { person: 2, .. })
        ));
    }

    #[test]
    fn coupled_scenes_correlate_more_than_uncoupled() {
        // The statistic backing the generator's interaction knob: averaged
        // over a handful of seeds, strength-1 scenes must show clearly
        // higher mean |PCC| than strength-0 scenes.
        let coupled: Vec<Scene> = (0..6).map(|s| toy_scene(100 + s, 1.0)).collect();
        let free: Vec<Scene> = (0..6).map(|s| toy_scene(100 + s, 0.0)).collect();
        let c = dataset_mean_abs_pcc(&coupled, 0, 1).unwrap();
        let f = dataset_mean_abs_pcc(&free, 0, 1).unwrap();
        assert!(
            c > f,
            "coupled mean |PCC| {c} not above uncoupled {f}"
        );
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let scene = toy_scene(8, 0.5);
        let m = pcc_matrix(&scene, 0, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcc.csv");
        export_pcc_csv(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5); // header + 4 joints
        assert!(lines[0].starts_with("joint,0,1,2,3"));
        for (i, line) in lines[1..].iter().enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 5);
            assert_eq!(cells[0], i.to_string());
            for j in 0..4 {
                let parsed: f64 = cells[j + 1].parse().unwrap();
                assert_eq!(parsed, m.get(i, j), "row {i} col {j}");
            }
        }
    }

    #[test]
    fn csv_export_to_bad_path_errors() {
        let scene = toy_scene(8, 0.5);
        let m = pcc_matrix(&scene, 0, 1).unwrap();
        assert!(matches!(
            export_pcc_csv(&m, "/nonexistent-dir-xyz/pcc.csv"),
            Err(AnalysisError::Io(_))
        ));
    }
}

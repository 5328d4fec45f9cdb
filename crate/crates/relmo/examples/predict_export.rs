//! Predict future poses for a dataset and export them as CSV, showing
//! how an untrained model starts from the "last observed pose" baseline
//! and improves with training.
//!
//!     cargo run --example predict_export

use relmo::data::generate_dataset;
use relmo::metrics::mpjpe;
use relmo::model::{predict, Ablation, ModelConfig, ModelParams};
use relmo::train::{train, LossMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::toy();
    let dims = relmo::data::SceneDims {
        persons: cfg.persons,
        obs_frames: cfg.obs_frames,
        pred_frames: cfg.pred_frames,
        joints: cfg.joints,
    };
    let scenes = generate_dataset(dims, 8, 42, 1.0)?;

    // Freshly initialized parameters decode to exactly the last observed
    // pose (the decoder starts at zero), so the untrained error equals
    // the constant-pose baseline.
    let mut untrained = ModelParams::init(&cfg, 42)?;
    let score = |params: &mut ModelParams| -> Result<f64, Box<dyn std::error::Error>> {
        let mut total = 0.0;
        for scene in &scenes {
            let pose = predict(scene, params, &cfg, Ablation::default())?;
            total += mpjpe(&pose, &scene.future())?;
        }
        Ok(total / scenes.len() as f64)
    };
    let baseline = score(&mut untrained)?;
    println!("untrained (constant-pose baseline) mpjpe: {baseline:.4e}");

    let tc = TrainConfig {
        learning_rate: 1e-3,
        lr_decay: 1.0,
        lr_decay_every: 100,
        batch_size: 3,
        epochs: 666,
        seed: 42,
        weight_decay: 0.0,
        loss_mode: LossMode::Both,
        ablation: Ablation::default(),
    };
    let (state, _) = train(&scenes, &cfg, &tc)?;
    let mut trained = state.params;
    let after = score(&mut trained)?;
    println!("trained mpjpe: {after:.4e}  ({:.1}x better)\n", baseline / after);

    // Export every prediction: one row per scene, person, frame, joint.
    let mut csv = String::from("scene,person,frame,joint,x,y,z\n");
    let mut rows = 0usize;
    for (si, scene) in scenes.iter().enumerate() {
        let pose = predict(scene, &mut trained, &cfg, Ablation::default())?;
        for n in 0..pose.persons {
            for t in 0..pose.frames {
                for j in 0..pose.joints {
                    let p = pose.get(n, t, j);
                    csv.push_str(&format!("{si},{n},{t},{j},{},{},{}\n", p[0], p[1], p[2]));
                    rows += 1;
                }
            }
        }
    }
    let path = std::env::temp_dir().join("relmo_example_predictions.csv");
    std::fs::write(&path, &csv)?;
    println!("wrote {rows} rows to {}", path.display());

    // The decimal text round-trips: parsing the file back and re-scoring
    // it reproduces the in-memory metric exactly.
    let mut parsed: Vec<relmo::data::PoseSeq> = scenes
        .iter()
        .map(|_| relmo::data::PoseSeq::zeros(cfg.persons, cfg.pred_frames, cfg.joints))
        .collect();
    for line in std::fs::read_to_string(&path)?.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (s, n, t, j): (usize, usize, usize, usize) =
            (f[0].parse()?, f[1].parse()?, f[2].parse()?, f[3].parse()?);
        parsed[s].set(n, t, j, [f[4].parse()?, f[5].parse()?, f[6].parse()?]);
    }
    let rescored = scenes
        .iter()
        .zip(&parsed)
        .map(|(scene, pose)| mpjpe(pose, &scene.future()).unwrap())
        .sum::<f64>()
        / scenes.len() as f64;
    println!(
        "re-scored from the CSV: {rescored:.4e} (drift {:e})",
        (rescored - after).abs()
    );

    // Compare one joint's prediction with its ground truth.
    let scene = &scenes[0];
    let pose = predict(scene, &mut trained, &cfg, Ablation::default())?;
    println!("\nscene 0, person 0, joint 0:");
    for t in 0..cfg.pred_frames {
        let p = pose.get(0, t, 0);
        let g = scene.future().get(0, t, 0);
        println!(
            "  frame {t}: predicted ({:+.4}, {:+.4}, {:+.4})  truth ({:+.4}, {:+.4}, {:+.4})",
            p[0], p[1], p[2], g[0], g[1], g[2]
        );
    }
    Ok(())
}

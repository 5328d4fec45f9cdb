//! Train briefly, save a checkpoint, reload it, and show that evaluation
//! metrics survive the round trip with zero drift.
//!
//!     cargo run --example checkpoint_eval

use relmo::data::generate_dataset;
use relmo::model::{load_checkpoint, save_checkpoint, Ablation, ModelConfig};
use relmo::train::{evaluate, train, LossMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::toy();
    let dims = relmo::data::SceneDims {
        persons: cfg.persons,
        obs_frames: cfg.obs_frames,
        pred_frames: cfg.pred_frames,
        joints: cfg.joints,
    };
    let scenes = generate_dataset(dims, 8, 42, 1.0)?;
    let tc = TrainConfig {
        learning_rate: 1e-3,
        lr_decay: 1.0,
        lr_decay_every: 100,
        batch_size: 3,
        epochs: 120,
        seed: 42,
        weight_decay: 0.0,
        loss_mode: LossMode::Both,
        ablation: Ablation::default(),
    };
    let (state, logs) = train(&scenes, &cfg, &tc)?;
    println!(
        "trained {} epochs, final train loss {:.4e}",
        logs.len(),
        logs.last().unwrap().train_loss
    );

    let horizons: Vec<usize> = (0..cfg.pred_frames).collect();
    let before = evaluate(&scenes, &state.params, &cfg, Ablation::default(), &horizons)?;

    let path = std::env::temp_dir().join("relmo_example_model.ckpt");
    save_checkpoint(&cfg, &state.params, &path)?;
    let (cfg_loaded, params_loaded) = load_checkpoint(&path)?;
    println!(
        "saved and reloaded {} ({} bytes)",
        path.display(),
        std::fs::metadata(&path)?.len()
    );

    let after = evaluate(&scenes, &params_loaded, &cfg_loaded, Ablation::default(), &horizons)?;
    println!("\nper-horizon reports from the reloaded checkpoint:");
    print!("{}", after.vim.to_csv());
    print!("{}", after.mpjpe.to_csv());
    println!("mpjpe,all,{:.16e}", after.mpjpe_all);

    let drift = (after.mpjpe_all - before.mpjpe_all).abs();
    println!(
        "\nmean joint error before save {:.16e}, after reload {:.16e}, drift {drift:e}",
        before.mpjpe_all, after.mpjpe_all
    );
    assert_eq!(before.mpjpe_all.to_bits(), after.mpjpe_all.to_bits());
    println!("round trip is bit-exact");
    Ok(())
}

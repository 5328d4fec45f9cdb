//! Compare every analytic parameter gradient of the small architecture
//! against central finite differences, module by module and through the
//! full model.
//!
//!     cargo run --example gradient_check

use relmo::model::ModelConfig;
use relmo::verify::{verify_gradients, FD_EPS, REL_ERR_THRESHOLD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::toy();
    println!(
        "checking {} persons, {} joints, {}+{} frames, feature width {} \
         (finite-difference step {FD_EPS:.0e}, threshold {REL_ERR_THRESHOLD:.0e})\n",
        cfg.persons, cfg.joints, cfg.obs_frames, cfg.pred_frames, cfg.feature
    );

    let start = std::time::Instant::now();
    let report = verify_gradients(&cfg, 42)?;
    print!("{}", report.summary());
    println!("\nfinished in {:.2?}", start.elapsed());

    if !report.pass() {
        std::process::exit(3);
    }
    Ok(())
}

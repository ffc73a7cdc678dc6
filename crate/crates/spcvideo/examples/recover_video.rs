//! End-to-end recovery at desk scale: simulate a moving scene, compute
//! previews and flow constraints, then compare the flow-constrained
//! reconstruction against the no-flow and frame-wise baselines.
//!
//! ```bash
//! cargo run --release -p spcvideo --example recover_video
//! ```

use std::time::Instant;

use spcvideo::config::ExperimentConfig;
use spcvideo::pipeline::{cmd_pipeline, cmd_simulate, Arm};

fn main() -> spcvideo::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.n = 64;
    cfg.scene.duration_measurements = 8192;
    cfg.scene.speed = 8.0;
    cfg.scene.speed_window = 4096;
    cfg.scene.foreground_size = 20;
    cfg.sensing.n_l = 32;
    cfg.sensing.noise_snr_db = 60.0;
    cfg.stride = 512;
    cfg.solver.outer_iterations = 25;
    cfg.solver.cg_iterations = 25;
    cfg.output_dir = std::env::temp_dir().join("spcvideo_recover");

    let t0 = Instant::now();
    cmd_simulate(&cfg)?;
    println!("simulated {} measurements in {:?}", 8192, t0.elapsed());

    let t1 = Instant::now();
    let results = cmd_pipeline(
        &cfg,
        &[Arm::FlowConstrained, Arm::NoFlow, Arm::Framewise, Arm::Nyquist],
    )?;
    println!("recovered all arms in {:?}:", t1.elapsed());
    for (arm, snr) in results {
        println!("  {:>10}: {snr:6.2} dB", arm.name());
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

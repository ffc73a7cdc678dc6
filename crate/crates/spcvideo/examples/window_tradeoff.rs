//! The spatio-temporal window tradeoff: sweeping the measurement window
//! length against object speed, plus the rule-of-thumb window selector.
//!
//! ```bash
//! cargo run --release -p spcvideo --example window_tradeoff
//! ```

use spcvideo::config::ExperimentConfig;
use spcvideo::pipeline::cmd_tradeoff;
use spcvideo::sensing::select_window;

fn main() -> spcvideo::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.n = 64;
    cfg.scene.duration_measurements = 1024;
    cfg.scene.speed_window = 1024;
    cfg.scene.foreground_size = 20;
    cfg.sensing.n_l = 16;
    cfg.sensing.noise_snr_db = f64::INFINITY;
    cfg.output_dir = std::env::temp_dir().join("spcvideo_tradeoff");

    let windows = [64usize, 256, 1024];
    let speeds = [2.0f64, 8.0, 32.0];
    let cells = cmd_tradeoff(&cfg, &windows, &speeds)?;
    println!("preview RSNR (dB) by window x speed:");
    print!("{:>8}", "W");
    for s in speeds {
        print!("{s:>10.0}px");
    }
    println!();
    for &w in &windows {
        print!("{w:>8}");
        for &s in &speeds {
            let cell = cells
                .iter()
                .find(|c| c.window == w && c.speed == s)
                .unwrap();
            print!("{:>12.2}", cell.preview_rsnr_db);
        }
        println!();
    }

    // The selection rule keeps motion below one preview pixel per window.
    for speed_px_per_s in [0.0, 64.0, 512.0] {
        let choice = select_window(64, &[8, 16, 32], speed_px_per_s, 8192.0)?;
        println!(
            "speed {speed_px_per_s:5.0} px/s -> W = {} (n_l = {}){}",
            choice.w,
            choice.n_l,
            if choice.fallback { " [fallback]" } else { "" }
        );
    }
    Ok(())
}

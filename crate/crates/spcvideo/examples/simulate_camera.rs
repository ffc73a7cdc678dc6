//! Simulates a single-pixel camera measuring a moving synthetic scene and
//! writes the measurement stream to disk.
//!
//! ```bash
//! cargo run --release -p spcvideo --example simulate_camera
//! ```

use spcvideo::scene::{Scene, SceneKind, SceneSpec};
use spcvideo::sensing::{acquire, DssMatrix, MeasurementStream, NoiseModel, SceneSource};

fn main() -> spcvideo::Result<()> {
    let spec = SceneSpec {
        kind: SceneKind::TranslatingCross,
        n: 64,
        duration_measurements: 4096,
        speed: 6.0,
        speed_window: 4096,
        background_seed: 11,
        foreground_size: 18,
    };
    let scene = Scene::new(spec)?;
    let matrix = DssMatrix::build(64, 16, 16, 2, 1)?;
    let stream = acquire(
        &matrix,
        SceneSource::Live(&scene),
        4096,
        NoiseModel::TargetSnrDb(60.0),
        2,
    )?;
    println!(
        "acquired {} measurements; achieved SNR {:.2} dB (sigma {:.3e})",
        stream.len(),
        stream.achieved_snr_db.unwrap_or(f64::INFINITY),
        stream.sigma
    );

    let path = std::env::temp_dir().join("spcvideo_example.csms");
    stream.write(&path)?;
    let back = MeasurementStream::read(&path)?;
    println!(
        "wrote {} and read it back: {} samples, matrix seed {}",
        path.display(),
        back.len(),
        back.matrix_seed
    );
    Ok(())
}

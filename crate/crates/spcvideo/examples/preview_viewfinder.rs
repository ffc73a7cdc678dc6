//! The offline viewfinder: fast low-resolution previews from sliding
//! measurement windows, exported as a PGM image sequence.
//!
//! ```bash
//! cargo run --release -p spcvideo --example preview_viewfinder
//! ```

use std::time::Instant;

use spcvideo::plan::FramePlan;
use spcvideo::preview::preview_sequence;
use spcvideo::scene::{Scene, SceneKind, SceneSpec};
use spcvideo::sensing::{acquire, DssMatrix, NoiseModel, SceneSource};

fn main() -> spcvideo::Result<()> {
    let n = 128;
    let spec = SceneSpec {
        kind: SceneKind::PendulumLetter,
        n,
        duration_measurements: 16384,
        speed: 24.0,
        speed_window: 4096,
        background_seed: 3,
        foreground_size: 40,
    };
    let scene = Scene::new(spec)?;
    let matrix = DssMatrix::build(n, 32, 16, 2, 5)?;
    let stream = acquire(
        &matrix,
        SceneSource::Live(&scene),
        16384,
        NoiseModel::TargetSnrDb(60.0),
        8,
    )?;

    let plan = FramePlan::new(16384, matrix.window(), 256)?;
    let start = Instant::now();
    let previews = preview_sequence(&matrix, &stream, &plan)?;
    let elapsed = start.elapsed();
    println!(
        "{} previews of {}x{} in {elapsed:?} ({:.1} us/frame)",
        previews.frames(),
        previews.n_l(),
        previews.n_l(),
        elapsed.as_micros() as f64 / previews.frames() as f64
    );

    let dir = std::env::temp_dir().join("spcvideo_viewfinder");
    previews.to_volume().write_pgm_sequence(&dir, "preview")?;
    println!("wrote PGM sequence to {}", dir.display());
    Ok(())
}

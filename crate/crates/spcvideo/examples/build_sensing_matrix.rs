//! Builds a dual-scale sensing matrix and verifies its defining structure:
//! every implied entry is ±1 and the product with the block-replication
//! upsampler is the scaled permuted Hadamard core, for every cycle.
//!
//! ```bash
//! cargo run -p spcvideo --example build_sensing_matrix
//! ```

use spcvideo::sensing::{upsample_replicate, DssMatrix};

fn main() -> spcvideo::Result<()> {
    let (n, n_l, cycles, scale, seed) = (16, 4, 3, 2, 7);
    let m = DssMatrix::build(n, n_l, cycles, scale, seed)?;
    println!(
        "built {}x{} operator: W={} rows/cycle, block {}x{}, scale s={}, {} cycles",
        m.max_measurements(),
        m.pixels(),
        m.window(),
        m.block(),
        m.block(),
        m.scale(),
        m.cycles()
    );

    // Sample implied entries: all must be ±1.
    let mut signs = [0usize; 2];
    for t in (0..m.max_measurements()).step_by(7) {
        for j in (0..m.pixels()).step_by(11) {
            let e = m.entry(t, j);
            assert!(e == 1.0 || e == -1.0);
            signs[(e < 0.0) as usize] += 1;
        }
    }
    println!("sampled entries: {} plus, {} minus", signs[0], signs[1]);

    // Phi U = s H' for each cycle, checked matrix-free column by column.
    let mut worst: f64 = 0.0;
    for cycle in 0..cycles {
        for k in 0..m.window() {
            let mut low = vec![0.0; m.window()];
            low[k] = 1.0;
            let up = upsample_replicate(&low, n_l, n);
            for row in 0..m.window() {
                let got = m.apply_row(&up, cycle * m.window() + row)?;
                let want = scale as f64 * m.hadamard().entry(row, k);
                worst = worst.max((got - want).abs());
            }
        }
    }
    println!("max |Phi U - s H'| over all cycles: {worst:.3e}");
    Ok(())
}

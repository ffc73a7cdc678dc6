//! Fast Walsh-Hadamard transform basics: involution up to scale and
//! orthogonality of the seeded column-permuted variant.
//!
//! ```bash
//! cargo run -p spcvideo --example fwht_transform
//! ```

use spcvideo::hadamard::{fwht, PermutedHadamard};

fn main() -> spcvideo::Result<()> {
    let v = [0.25, -1.0, 3.5, 0.0, 1.0, 2.0, -0.5, 0.75];
    let transformed = fwht(&v)?;
    println!("v            = {v:?}");
    println!("H v          = {transformed:?}");

    let twice = fwht(&transformed)?;
    println!(
        "H(Hv) / 8    = {:?}   (the transform is an involution up to W)",
        twice.iter().map(|x| x / 8.0).collect::<Vec<_>>()
    );

    let h = PermutedHadamard::new(1024, 42)?;
    let x: Vec<f64> = (0..1024).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let forward = h.apply(&x, false)?;
    let back = h.apply(&forward, true)?;
    let max_err = back
        .iter()
        .zip(x.iter())
        .map(|(a, b)| (a / 1024.0 - b).abs())
        .fold(0.0, f64::max)
        .max(0.0);
    println!("permuted round trip at W=1024: max abs error {max_err:.3e}");
    Ok(())
}

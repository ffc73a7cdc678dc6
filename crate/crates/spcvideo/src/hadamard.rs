//! Sylvester Hadamard matrices, the fast Walsh-Hadamard transform, and
//! seeded column permutations.
//!
//! The transform is unnormalized: `fwht(fwht(v)) = W * v`. Entry `(i, j)` of
//! the order-`W` Sylvester matrix is `(-1)^popcount(i & j)`, so the matrix is
//! symmetric and `H^T H = W * I`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// In-place fast Walsh-Hadamard transform (Sylvester/natural order).
///
/// Length must be a power of two. Cost is O(W log W).
pub fn fwht_in_place(v: &mut [f64]) {
    let w = v.len();
    debug_assert!(w.is_power_of_two());
    let mut h = 1;
    while h < w {
        let step = h * 2;
        let mut base = 0;
        while base < w {
            for j in base..base + h {
                let a = v[j];
                let b = v[j + h];
                v[j] = a + b;
                v[j + h] = a - b;
            }
            base += step;
        }
        h = step;
    }
}

/// Returns `H_syl * v` for the Sylvester Hadamard matrix of order `v.len()`.
pub fn fwht(v: &[f64]) -> Result<Vec<f64>> {
    if !v.len().is_power_of_two() || v.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "fwht length {} is not a power of two",
            v.len()
        )));
    }
    let mut out = v.to_vec();
    fwht_in_place(&mut out);
    Ok(out)
}

/// Sign of entry `(row, col)` of the Sylvester Hadamard matrix: +1 or -1.
#[inline]
pub fn sylvester_sign(row: usize, col: usize) -> f64 {
    if (row & col).count_ones() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// A Sylvester Hadamard matrix with seeded column permutation,
/// `H' = H_syl * P`, so column `j` of `H'` is column `perm[j]` of `H_syl`.
///
/// `H'` keeps orthogonal columns: `H'^T H' = W * I`.
#[derive(Debug, Clone)]
pub struct PermutedHadamard {
    order: usize,
    perm: Vec<u32>,
    seed: u64,
}

impl PermutedHadamard {
    /// Builds an order-`w` permuted Hadamard with a Fisher-Yates permutation
    /// drawn from a ChaCha stream seeded by `seed`.
    pub fn new(w: usize, seed: u64) -> Result<Self> {
        if !w.is_power_of_two() || w == 0 {
            return Err(Error::InvalidParameter(format!(
                "Hadamard order {w} is not a power of two"
            )));
        }
        let mut perm: Vec<u32> = (0..w as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..w).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        debug_assert!(is_bijection(&perm));
        Ok(Self {
            order: w,
            perm,
            seed,
        })
    }

    /// The identity permutation, `H' = H_syl`.
    pub fn identity(w: usize) -> Result<Self> {
        let mut h = Self::new(w, 0)?;
        h.perm = (0..w as u32).collect();
        h
            .verify_bijection()
            .expect("identity permutation is a bijection");
        Ok(h)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Column map: column `j` of `H'` is column `perm(j)` of `H_syl`.
    #[inline]
    pub fn perm(&self, j: usize) -> usize {
        self.perm[j] as usize
    }

    /// Entry `(row, col)` of `H'`; +1 or -1.
    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        sylvester_sign(row, self.perm[col] as usize)
    }

    /// Checks that the stored permutation is a bijection on `[0, W)`.
    pub fn verify_bijection(&self) -> Result<()> {
        if is_bijection(&self.perm) {
            Ok(())
        } else {
            Err(Error::Numerical(
                "stored permutation is not a bijection".into(),
            ))
        }
    }

    /// Computes `H' * v` (or `H'^T * v` with `transpose`) via the fast
    /// transform plus index permutation.
    pub fn apply(&self, v: &[f64], transpose: bool) -> Result<Vec<f64>> {
        if v.len() != self.order {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} does not match Hadamard order {}",
                v.len(),
                self.order
            )));
        }
        if transpose {
            // H'^T v = P^T H v  (H_syl is symmetric)
            let t = fwht(v)?;
            Ok((0..self.order).map(|j| t[self.perm[j] as usize]).collect())
        } else {
            // H' v = H (P v) with (P v)[perm[j]] = v[j]
            let mut t = vec![0.0; self.order];
            for (j, &p) in self.perm.iter().enumerate() {
                t[p as usize] = v[j];
            }
            fwht_in_place(&mut t);
            Ok(t)
        }
    }
}

fn is_bijection(perm: &[u32]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        let p = p as usize;
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Dense Sylvester Hadamard built by the doubling recursion; test oracle
    /// independent of the bit-count formula and of the butterfly.
    fn dense_sylvester(w: usize) -> Vec<Vec<f64>> {
        let mut h = vec![vec![1.0]];
        let mut size = 1;
        while size < w {
            let mut next = vec![vec![0.0; size * 2]; size * 2];
            for i in 0..size {
                for j in 0..size {
                    next[i][j] = h[i][j];
                    next[i][j + size] = h[i][j];
                    next[i + size][j] = h[i][j];
                    next[i + size][j + size] = -h[i][j];
                }
            }
            h = next;
            size *= 2;
        }
        h
    }

    #[test]
    fn fwht_first_column_of_h2() {
        assert_eq!(fwht(&[1.0, 0.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn fwht_involution_up_to_scale() {
        let v = [0.3, -1.2, 4.0, 0.25];
        let twice = fwht(&fwht(&v).unwrap()).unwrap();
        for (a, b) in twice.iter().zip(v.iter()) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn fwht_columns_match_dense_recursion_at_w8() {
        let dense = dense_sylvester(8);
        for j in 0..8 {
            let mut e = vec![0.0; 8];
            e[j] = 1.0;
            let col = fwht(&e).unwrap();
            for i in 0..8 {
                assert_eq!(col[i], dense[i][j], "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn fwht_rejects_non_power_of_two() {
        assert!(fwht(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn identity_permutation_matches_fwht() {
        let h = PermutedHadamard::identity(16).unwrap();
        let v: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        assert_eq!(h.apply(&v, false).unwrap(), fwht(&v).unwrap());
    }

    #[test]
    fn permuted_round_trip_w1024() {
        let h = PermutedHadamard::new(1024, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fwd = h.apply(&v, false).unwrap();
        let back = h.apply(&fwd, true).unwrap();
        for (a, b) in back.iter().zip(v.iter()) {
            assert!((a / 1024.0 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_is_scaled_identity_at_w16() {
        // Dense multiplication oracle: H'^T H' = 16 I.
        let h = PermutedHadamard::new(16, 3).unwrap();
        let mut dense = vec![vec![0.0; 16]; 16];
        for i in 0..16 {
            for j in 0..16 {
                dense[i][j] = h.entry(i, j);
            }
        }
        for a in 0..16 {
            for b in 0..16 {
                let dot: f64 = (0..16).map(|i| dense[i][a] * dense[i][b]).sum();
                let expect = if a == b { 16.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonality_across_orders() {
        for &w in &[4usize, 16, 64] {
            let h = PermutedHadamard::new(w, 11).unwrap();
            // (1/W) H'^T H' e_j = e_j for every j.
            for j in 0..w {
                let mut e = vec![0.0; w];
                e[j] = 1.0;
                let out = h.apply(&h.apply(&e, false).unwrap(), true).unwrap();
                for i in 0..w {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (out[i] / w as f64 - expect).abs() < 1e-12,
                        "W={w} entry ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn permutation_seed_determinism() {
        let a = PermutedHadamard::new(256, 42).unwrap();
        let b = PermutedHadamard::new(256, 42).unwrap();
        assert_eq!(a.perm, b.perm);
        let c = PermutedHadamard::new(256, 43).unwrap();
        assert_ne!(a.perm, c.perm);
    }

    #[test]
    fn inverse_transform_noise_variance() {
        // Entries of (1/W) H'^T e have variance sigma^2 / W for iid noise e.
        let w = 64;
        let trials = 10_000;
        let sigma = 0.7;
        let h = PermutedHadamard::new(w, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for _ in 0..trials {
            let e: Vec<f64> = (0..w)
                .map(|_| {
                    let g: f64 = rng.sample(rand_distr::StandardNormal);
                    sigma * g
                })
                .collect();
            let out = h.apply(&e, true).unwrap();
            for x in out {
                let v = x / w as f64;
                sum_sq += v * v;
                count += 1;
            }
        }
        let var = sum_sq / count as f64;
        let expect = sigma * sigma / w as f64;
        assert!(
            (var - expect).abs() < 0.10 * expect,
            "variance {var} vs expected {expect}"
        );
    }
}

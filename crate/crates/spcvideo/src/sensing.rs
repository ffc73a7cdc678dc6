//! Dual-scale sensing: structured ±1 measurement matrices whose product
//! with the block-replication upsampler is a scaled permuted Hadamard
//! matrix, plus single-pixel acquisition simulation.
//!
//! Entry `(i, j)` of cycle `c` is `H'[i, k(j)] * p[c][i][pos(j)]` where
//! `k(j)` is pixel `j`'s low-resolution block and `pos(j)` its position
//! within the block. Each row's pattern `p` sums to the scale `s`, which
//! makes `Phi_c * U = s * H'` hold exactly for every cycle while keeping
//! every entry ±1. The matrix is never stored dense: only the per-cycle,
//! per-row block patterns are kept.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hadamard::PermutedHadamard;
use crate::scene::Scene;
use crate::volume::VideoVolume;

pub const MEASUREMENT_MAGIC: &[u8; 4] = b"CSMS";

const PATTERN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Structured dual-scale sensing operator.
#[derive(Debug, Clone)]
pub struct DssMatrix {
    n: usize,
    n_l: usize,
    w: usize,
    block: usize,
    block_size: usize,
    scale: usize,
    cycles: usize,
    hadamard: PermutedHadamard,
    /// `cycles * w` patterns of `block_size` signs each, stored as ±1.
    patterns: Vec<i8>,
    seed: u64,
}

impl DssMatrix {
    /// Builds the operator with a seeded column-permuted Hadamard core and
    /// fresh uniform random patterns for every cycle.
    pub fn build(n: usize, n_l: usize, cycles: usize, scale: usize, seed: u64) -> Result<Self> {
        let hadamard = PermutedHadamard::new(n_l * n_l, seed)?;
        Self::build_with_hadamard(n, n_l, cycles, scale, seed, hadamard)
    }

    /// As [`DssMatrix::build`] but with a caller-supplied Hadamard core
    /// (e.g. the identity permutation).
    pub fn build_with_hadamard(
        n: usize,
        n_l: usize,
        cycles: usize,
        scale: usize,
        seed: u64,
        hadamard: PermutedHadamard,
    ) -> Result<Self> {
        if !n.is_power_of_two() || !n_l.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "resolutions must be powers of two, got n={n}, n_l={n_l}"
            )));
        }
        if n_l > n {
            return Err(Error::InvalidParameter(format!(
                "preview resolution {n_l} exceeds full resolution {n}"
            )));
        }
        if cycles == 0 {
            return Err(Error::InvalidParameter("cycle count must be positive".into()));
        }
        let w = n_l * n_l;
        if hadamard.order() != w {
            return Err(Error::DimensionMismatch(format!(
                "Hadamard order {} != W = {}",
                hadamard.order(),
                w
            )));
        }
        let block = n / n_l;
        let block_size = block * block;
        if scale == 0 {
            return Err(Error::InvalidParameter(
                "scale s = 0 rejected: the low-resolution forward map would vanish".into(),
            ));
        }
        if scale > block_size {
            return Err(Error::InvalidParameter(format!(
                "scale {scale} exceeds block size {block_size}"
            )));
        }
        if scale % 2 != block_size % 2 {
            return Err(Error::InvalidParameter(format!(
                "scale {scale} has wrong parity: a sum of {block_size} signs has parity of {block_size}"
            )));
        }

        // Uniform draw from {p in {-1,+1}^B : sum p = s}: shuffle a fixed
        // multiset of (B+s)/2 ones and (B-s)/2 minus-ones per row.
        let positives = (block_size + scale) / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PATTERN_SALT);
        let mut patterns = vec![0i8; cycles * w * block_size];
        for row_pattern in patterns.chunks_mut(block_size) {
            for (idx, sign) in row_pattern.iter_mut().enumerate() {
                *sign = if idx < positives { 1 } else { -1 };
            }
            for i in (1..block_size).rev() {
                let j = rng.gen_range(0..=i);
                row_pattern.swap(i, j);
            }
        }
        Ok(Self {
            n,
            n_l,
            w,
            block,
            block_size,
            scale,
            cycles,
            hadamard,
            patterns,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_l(&self) -> usize {
        self.n_l
    }

    /// Rows per cycle, `W = n_l^2`.
    pub fn window(&self) -> usize {
        self.w
    }

    /// Side length of one low-resolution block, `n / n_l`.
    pub fn block(&self) -> usize {
        self.block
    }

    /// Pixels per block, `B = (n / n_l)^2`.
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hadamard(&self) -> &PermutedHadamard {
        &self.hadamard
    }

    /// Total measurements this matrix can produce, `C * W`.
    pub fn max_measurements(&self) -> usize {
        self.cycles * self.w
    }

    pub fn pixels(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    fn block_of(&self, j: usize) -> (usize, usize) {
        let x = j % self.n;
        let y = j / self.n;
        let k = (y / self.block) * self.n_l + x / self.block;
        let pos = (y % self.block) * self.block + x % self.block;
        (k, pos)
    }

    #[inline]
    fn pattern(&self, cycle: usize, row: usize) -> &[i8] {
        let base = (cycle * self.w + row) * self.block_size;
        &self.patterns[base..base + self.block_size]
    }

    /// Implied matrix entry for measurement `t` and pixel `j`; always ±1.
    pub fn entry(&self, t: usize, j: usize) -> f64 {
        let (cycle, row) = (t / self.w, t % self.w);
        let (k, pos) = self.block_of(j);
        self.hadamard.entry(row, k) * self.pattern(cycle, row)[pos] as f64
    }

    /// Inner product of the implied row `t` with a full-resolution frame.
    pub fn apply_row(&self, frame: &[f64], t: usize) -> Result<f64> {
        if frame.len() != self.pixels() {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} pixels, expected {}",
                frame.len(),
                self.pixels()
            )));
        }
        if t >= self.max_measurements() {
            return Err(Error::InvalidParameter(format!(
                "measurement index {t} out of range (C*W = {})",
                self.max_measurements()
            )));
        }
        let (cycle, row) = (t / self.w, t % self.w);
        let pattern = self.pattern(cycle, row);
        let mut acc = 0.0;
        // Walk block rows so the Hadamard sign is looked up once per block row.
        let n = self.n;
        for by in 0..self.n_l {
            for bx in 0..self.n_l {
                let k = by * self.n_l + bx;
                let sign = self.hadamard.entry(row, k);
                let mut block_acc = 0.0;
                for dy in 0..self.block {
                    let base = (by * self.block + dy) * n + bx * self.block;
                    let prow = &pattern[dy * self.block..(dy + 1) * self.block];
                    for dx in 0..self.block {
                        block_acc += prow[dx] as f64 * frame[base + dx];
                    }
                }
                acc += sign * block_acc;
            }
        }
        Ok(acc)
    }

    /// Adjoint of a single row: accumulates `value * phi_t` into `out`.
    pub fn apply_row_adjoint(&self, t: usize, value: f64, out: &mut [f64]) -> Result<()> {
        if out.len() != self.pixels() {
            return Err(Error::DimensionMismatch("adjoint output size".into()));
        }
        if t >= self.max_measurements() {
            return Err(Error::InvalidParameter(format!(
                "measurement index {t} out of range"
            )));
        }
        let (cycle, row) = (t / self.w, t % self.w);
        let pattern = self.pattern(cycle, row);
        let n = self.n;
        for by in 0..self.n_l {
            for bx in 0..self.n_l {
                let k = by * self.n_l + bx;
                let signed = value * self.hadamard.entry(row, k);
                for dy in 0..self.block {
                    let base = (by * self.block + dy) * n + bx * self.block;
                    let prow = &pattern[dy * self.block..(dy + 1) * self.block];
                    for dx in 0..self.block {
                        out[base + dx] += signed * prow[dx] as f64;
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies rows `[row_lo, row_hi)` of one cycle to a frame via per-block
    /// slice Hadamard transforms: O(N log W) instead of O(rows * N).
    pub fn apply_rows_batch(
        &self,
        cycle: usize,
        row_lo: usize,
        row_hi: usize,
        frame: &[f64],
    ) -> Result<Vec<f64>> {
        if frame.len() != self.pixels() {
            return Err(Error::DimensionMismatch("batch frame size".into()));
        }
        if cycle >= self.cycles || row_hi > self.w || row_lo > row_hi {
            return Err(Error::InvalidParameter("batch row range out of range".into()));
        }
        let mut out = vec![0.0; row_hi - row_lo];
        let mut slice = vec![0.0; self.w];
        for pos in 0..self.block_size {
            let (dx, dy) = (pos % self.block, pos / self.block);
            for k in 0..self.w {
                let (bx, by) = (k % self.n_l, k / self.n_l);
                slice[k] = frame[(by * self.block + dy) * self.n + bx * self.block + dx];
            }
            let transformed = self.hadamard.apply(&slice, false)?;
            for (o, row) in out.iter_mut().zip(row_lo..row_hi) {
                *o += self.pattern(cycle, row)[pos] as f64 * transformed[row];
            }
        }
        Ok(out)
    }

    /// Adjoint of [`Self::apply_rows_batch`]: scatters `values` (one per row
    /// in `[row_lo, row_hi)`) back to a full-resolution frame accumulator.
    pub fn apply_rows_batch_adjoint(
        &self,
        cycle: usize,
        row_lo: usize,
        row_hi: usize,
        values: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        if out.len() != self.pixels() {
            return Err(Error::DimensionMismatch("batch adjoint output size".into()));
        }
        if values.len() != row_hi - row_lo {
            return Err(Error::DimensionMismatch("batch adjoint value count".into()));
        }
        if cycle >= self.cycles || row_hi > self.w || row_lo > row_hi {
            return Err(Error::InvalidParameter("batch row range out of range".into()));
        }
        let mut masked = vec![0.0; self.w];
        for pos in 0..self.block_size {
            let (dx, dy) = (pos % self.block, pos / self.block);
            for m in masked.iter_mut() {
                *m = 0.0;
            }
            for (v, row) in values.iter().zip(row_lo..row_hi) {
                masked[row] = v * self.pattern(cycle, row)[pos] as f64;
            }
            let transformed = self.hadamard.apply(&masked, true)?;
            for k in 0..self.w {
                let (bx, by) = (k % self.n_l, k / self.n_l);
                out[(by * self.block + dy) * self.n + bx * self.block + dx] += transformed[k];
            }
        }
        Ok(())
    }

    /// Least-squares low-resolution estimate from one window of `W`
    /// measurements starting at `start`: rotates measurements onto their
    /// Hadamard rows then applies the scaled inverse transform. Equals
    /// `pinv(Phi U) * y` because `Phi U = s H'`.
    pub fn preview_from_window(&self, values: &[f64], start: usize) -> Result<Vec<f64>> {
        if start + self.w > values.len() {
            return Err(Error::InvalidParameter(format!(
                "window [{start}, {}) exceeds stream length {}",
                start + self.w,
                values.len()
            )));
        }
        let mut rotated = vec![0.0; self.w];
        for j in 0..self.w {
            let t = start + j;
            rotated[t % self.w] = values[t];
        }
        let mut out = self.hadamard.apply(&rotated, true)?;
        let norm = 1.0 / (self.scale as f64 * self.w as f64);
        for v in &mut out {
            *v *= norm;
        }
        Ok(out)
    }
}

/// Block-replication upsampler `U`: low-resolution pixel values repeated
/// over their `(n/n_l)^2` blocks. Satisfies `D * U = I`.
pub fn upsample_replicate(low: &[f64], n_l: usize, n: usize) -> Vec<f64> {
    let block = n / n_l;
    let mut out = vec![0.0; n * n];
    for (i, o) in out.iter_mut().enumerate() {
        let (x, y) = (i % n, i / n);
        *o = low[(y / block) * n_l + x / block];
    }
    out
}

/// Block-averaging downsampler `D`.
pub fn downsample_average(full: &[f64], n: usize, n_l: usize) -> Vec<f64> {
    let block = n / n_l;
    let norm = 1.0 / (block * block) as f64;
    let mut out = vec![0.0; n_l * n_l];
    for (k, o) in out.iter_mut().enumerate() {
        let (bx, by) = (k % n_l, k / n_l);
        let mut acc = 0.0;
        for dy in 0..block {
            for dx in 0..block {
                acc += full[(by * block + dy) * n + bx * block + dx];
            }
        }
        *o = acc * norm;
    }
    out
}

/// Where acquisition reads ground-truth frames from.
#[derive(Clone, Copy)]
pub enum SceneSource<'a> {
    /// Pre-rendered volume; each frame is held for `hold` measurements.
    Volume { volume: &'a VideoVolume, hold: usize },
    /// Frames rendered on demand, one per measurement instant.
    Live(&'a Scene),
}

impl<'a> SceneSource<'a> {
    pub fn frame_at(&self, t: usize) -> Vec<f64> {
        match self {
            SceneSource::Volume { volume, hold } => volume.frame(t / hold).to_vec(),
            SceneSource::Live(scene) => scene.render_frame(t),
        }
    }

    fn check_length(&self, t_count: usize) -> Result<()> {
        match self {
            SceneSource::Volume { volume, hold } => {
                if *hold == 0 {
                    return Err(Error::InvalidParameter("hold must be positive".into()));
                }
                if volume.frames() * hold < t_count {
                    return Err(Error::InvalidParameter(format!(
                        "scene provides {} x hold {} = {} instants, but {} measurements requested",
                        volume.frames(),
                        hold,
                        volume.frames() * hold,
                        t_count
                    )));
                }
                Ok(())
            }
            SceneSource::Live(_) => Ok(()),
        }
    }

    pub fn scene_hash(&self) -> u64 {
        match self {
            SceneSource::Volume { .. } => 0,
            SceneSource::Live(scene) => scene.spec().hash(),
        }
    }
}

/// Measurement noise specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Gaussian with a fixed standard deviation.
    Sigma(f64),
    /// Gaussian with sigma chosen so `20 log10(rms(clean)/sigma)` hits the
    /// target.
    TargetSnrDb(f64),
}

/// Time-ordered scalar measurements with acquisition metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStream {
    values: Vec<f64>,
    pub n: usize,
    pub n_l: usize,
    pub w: usize,
    pub scale: usize,
    pub cycles: usize,
    pub sigma: f64,
    pub matrix_seed: u64,
    pub noise_seed: u64,
    pub scene_hash: u64,
    /// Empirical `20 log10(rms(clean)/rms(noise))`; not persisted.
    pub achieved_snr_db: Option<f64>,
}

impl MeasurementStream {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn matches_matrix(&self, m: &DssMatrix) -> bool {
        self.n == m.n()
            && self.n_l == m.n_l()
            && self.scale == m.scale()
            && self.cycles == m.cycles()
            && self.matrix_seed == m.seed()
    }

    /// Writes the binary measurement format; the ingestion point for
    /// externally captured single-pixel logs.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = BufWriter::new(file);
        let ctx = || path.display().to_string();
        out.write_all(MEASUREMENT_MAGIC)
            .map_err(|e| Error::io(ctx(), e))?;
        for v in [
            self.n,
            self.n_l,
            self.w,
            self.scale,
            self.cycles,
            self.values.len(),
        ] {
            let v = u32::try_from(v)
                .map_err(|_| Error::format(path, format!("header field {v} overflows u32")))?;
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(ctx(), e))?;
        }
        out.write_all(&self.sigma.to_le_bytes())
            .map_err(|e| Error::io(ctx(), e))?;
        for v in [self.matrix_seed, self.noise_seed, self.scene_hash] {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(ctx(), e))?;
        }
        for &v in &self.values {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(ctx(), e))?;
        }
        out.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut input = BufReader::new(file);
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if &magic != MEASUREMENT_MAGIC {
            return Err(Error::format(path, "magic mismatch, expected CSMS"));
        }
        let mut u32s = [0usize; 6];
        for v in &mut u32s {
            let mut buf = [0u8; 4];
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::format(path, "truncated header"))?;
            *v = u32::from_le_bytes(buf) as usize;
        }
        let [n, n_l, w, scale, cycles, count] = u32s;
        if w != n_l * n_l {
            return Err(Error::format(path, format!("W = {w} != n_l^2 = {}", n_l * n_l)));
        }
        let mut word = || -> Result<[u8; 8]> {
            let mut buf = [0u8; 8];
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::format(path, "truncated header"))?;
            Ok(buf)
        };
        let sigma = f64::from_le_bytes(word()?);
        let matrix_seed = u64::from_le_bytes(word()?);
        let noise_seed = u64::from_le_bytes(word()?);
        let scene_hash = u64::from_le_bytes(word()?);
        let mut payload = vec![0u8; count * 8];
        input
            .read_exact(&mut payload)
            .map_err(|_| Error::format(path, "truncated payload"))?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            values,
            n,
            n_l,
            w,
            scale,
            cycles,
            sigma,
            matrix_seed,
            noise_seed,
            scene_hash,
            achieved_snr_db: None,
        })
    }
}

/// Simulates single-pixel acquisition: `y_t = <phi_t, x_t> + e_t` with iid
/// Gaussian noise, deterministic in `noise_seed` regardless of thread order.
pub fn acquire(
    matrix: &DssMatrix,
    source: SceneSource,
    t_count: usize,
    noise: NoiseModel,
    noise_seed: u64,
) -> Result<MeasurementStream> {
    if t_count > matrix.max_measurements() {
        return Err(Error::InvalidParameter(format!(
            "{t_count} measurements requested but matrix provides C*W = {}",
            matrix.max_measurements()
        )));
    }
    source.check_length(t_count)?;

    let clean: Vec<f64> = match source {
        SceneSource::Volume { volume, hold } => (0..t_count)
            .into_par_iter()
            .map(|t| matrix.apply_row(volume.frame(t / hold), t))
            .collect::<Result<_>>()?,
        SceneSource::Live(scene) => acquire_live_clean(matrix, scene, t_count)?,
    };

    let sigma = match noise {
        NoiseModel::None => 0.0,
        NoiseModel::Sigma(s) => {
            if s < 0.0 || !s.is_finite() {
                return Err(Error::InvalidParameter("noise sigma must be finite and >= 0".into()));
            }
            s
        }
        NoiseModel::TargetSnrDb(db) => {
            let rms = root_mean_square(&clean);
            if rms == 0.0 {
                return Err(Error::InvalidParameter(
                    "cannot target an SNR against all-zero measurements".into(),
                ));
            }
            rms / 10f64.powf(db / 20.0)
        }
    };

    let mut values = clean;
    let mut achieved = None;
    if sigma > 0.0 {
        let noise_vec: Vec<f64> = (0..t_count as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
                rng.set_stream(t);
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                sigma * g
            })
            .collect();
        let clean_rms = root_mean_square(&values);
        let noise_rms = root_mean_square(&noise_vec);
        if noise_rms > 0.0 {
            achieved = Some(20.0 * (clean_rms / noise_rms).log10());
        }
        for (v, e) in values.iter_mut().zip(noise_vec.iter()) {
            *v += e;
        }
    }

    Ok(MeasurementStream {
        values,
        n: matrix.n(),
        n_l: matrix.n_l(),
        w: matrix.window(),
        scale: matrix.scale(),
        cycles: matrix.cycles(),
        sigma,
        matrix_seed: matrix.seed(),
        noise_seed,
        scene_hash: source.scene_hash(),
        achieved_snr_db: achieved,
    })
}

/// Noiseless measurements of a live scene without materializing frames:
/// batched background inner products per cycle plus a per-instant
/// foreground correction over the overlay's dirty rectangle.
fn acquire_live_clean(matrix: &DssMatrix, scene: &Scene, t_count: usize) -> Result<Vec<f64>> {
    let n = matrix.n();
    if scene.spec().n != n {
        return Err(Error::DimensionMismatch(format!(
            "scene resolution {} != matrix resolution {n}",
            scene.spec().n
        )));
    }
    let w = matrix.window();
    let cycles_needed = t_count.div_ceil(w);
    let bg = scene.background();
    let bg_dots: Vec<Vec<f64>> = (0..cycles_needed)
        .into_par_iter()
        .map(|c| matrix.apply_rows_batch(c, 0, w, bg))
        .collect::<Result<_>>()?;

    (0..t_count)
        .into_par_iter()
        .map(|t| {
            let base = bg_dots[t / w][t % w];
            let correction = match scene.overlay(t) {
                None => 0.0,
                Some(ov) => {
                    let mut acc = 0.0;
                    for v in 0..ov.height {
                        let y = (ov.y0 + v as i64).rem_euclid(n as i64) as usize;
                        for u in 0..ov.width {
                            let a = ov.coverage[v * ov.width + u];
                            if a == 0.0 {
                                continue;
                            }
                            let x = (ov.x0 + u as i64).rem_euclid(n as i64) as usize;
                            let j = y * n + x;
                            // Rendered pixel is bg + a*(fg - bg), clamped to
                            // [0,1]; background already lies inside.
                            let pixel = (bg[j] + a * (ov.intensity - bg[j])).clamp(0.0, 1.0);
                            acc += matrix.entry(t, j) * (pixel - bg[j]);
                        }
                    }
                    acc
                }
            };
            Ok(base + correction)
        })
        .collect()
}

fn root_mean_square(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// The three error sources in one window of measurements, plus the preview
/// SNR they induce.
#[derive(Debug, Clone, Copy)]
pub struct ErrorDecomposition {
    /// `||Phi (I - U D) b||_2`: down-sampling loss pushed through the matrix.
    pub spatial: f64,
    /// `||z||_2` with `z_t = <phi_t, x_t - b>`: static-scene violation.
    pub temporal: f64,
    /// `||e||_2`: measurement noise over the window.
    pub measurement: f64,
    /// Full-resolution RSNR of the replicated preview against the frame at
    /// the window center.
    pub preview_snr_db: f64,
}

/// The window's measurement vector split into its exact components:
/// `y = low + spatial + temporal + noise` elementwise.
#[derive(Debug, Clone)]
pub struct ErrorVectors {
    pub low: Vec<f64>,
    pub spatial: Vec<f64>,
    pub temporal: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn decompose_error_vectors(
    matrix: &DssMatrix,
    stream: &MeasurementStream,
    source: SceneSource,
    start: usize,
) -> Result<ErrorVectors> {
    let w = matrix.window();
    if start + w > stream.len() {
        return Err(Error::InvalidParameter(format!(
            "window [{start}, {}) exceeds stream length {}",
            start + w,
            stream.len()
        )));
    }
    let n = matrix.n();
    let pixels = matrix.pixels();

    // Static component: temporal mean over the window.
    let mut mean = vec![0.0; pixels];
    for t in start..start + w {
        let frame = source.frame_at(t);
        for (m, v) in mean.iter_mut().zip(frame.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= w as f64;
    }
    let mean_low = downsample_average(&mean, n, matrix.n_l());
    let mean_replicated = upsample_replicate(&mean_low, matrix.n_l(), n);
    let residual: Vec<f64> = mean
        .iter()
        .zip(mean_replicated.iter())
        .map(|(a, b)| a - b)
        .collect();

    let rows: Vec<(f64, f64, f64, f64)> = (start..start + w)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64, f64, f64)> {
            let frame = source.frame_at(t);
            let full = matrix.apply_row(&frame, t)?;
            let of_mean = matrix.apply_row(&mean, t)?;
            let spatial = matrix.apply_row(&residual, t)?;
            let low = of_mean - spatial;
            Ok((low, spatial, full - of_mean, stream.values()[t] - full))
        })
        .collect::<Result<_>>()?;

    let mut vecs = ErrorVectors {
        low: Vec::with_capacity(w),
        spatial: Vec::with_capacity(w),
        temporal: Vec::with_capacity(w),
        noise: Vec::with_capacity(w),
    };
    for (low, spatial, temporal, noise) in rows {
        vecs.low.push(low);
        vecs.spatial.push(spatial);
        vecs.temporal.push(temporal);
        vecs.noise.push(noise);
    }
    Ok(vecs)
}

/// Computes the spatial / temporal / measurement error norms for the window
/// starting at `start`. Requires the ground truth the stream was acquired
/// from.
pub fn decompose_errors(
    matrix: &DssMatrix,
    stream: &MeasurementStream,
    source: SceneSource,
    start: usize,
) -> Result<ErrorDecomposition> {
    let vecs = decompose_error_vectors(matrix, stream, source, start)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let preview = matrix.preview_from_window(stream.values(), start)?;
    let replicated = upsample_replicate(&preview, matrix.n_l(), matrix.n());
    let center = source.frame_at(start + matrix.window() / 2);
    let reference = VideoVolume::new(matrix.n(), matrix.n(), 1, center)?;
    let estimate = VideoVolume::new(matrix.n(), matrix.n(), 1, replicated)?;
    let preview_snr_db = crate::volume::rsnr(&reference, &estimate)?;

    Ok(ErrorDecomposition {
        spatial: norm(&vecs.spatial),
        temporal: norm(&vecs.temporal),
        measurement: norm(&vecs.noise),
        preview_snr_db,
    })
}

/// Result of the window-selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowChoice {
    pub w: usize,
    pub n_l: usize,
    /// Set when no candidate satisfied the motion bound and the smallest
    /// window was returned as a fallback.
    pub fallback: bool,
}

/// Picks the largest candidate window `W = n_l^2` whose acquisition time
/// keeps object motion below one preview pixel (`n / n_l` full-resolution
/// pixels); falls back to the smallest candidate with a warning flag.
pub fn select_window(
    n: usize,
    n_l_candidates: &[usize],
    speed_px_per_s: f64,
    rate_meas_per_s: f64,
) -> Result<WindowChoice> {
    if n_l_candidates.is_empty() {
        return Err(Error::InvalidParameter("empty window candidate list".into()));
    }
    if speed_px_per_s < 0.0 || rate_meas_per_s <= 0.0 {
        return Err(Error::InvalidParameter(
            "speed must be >= 0 and rate > 0".into(),
        ));
    }
    let mut candidates = n_l_candidates.to_vec();
    candidates.sort_unstable();
    for &n_l in &candidates {
        if !n_l.is_power_of_two() || n_l > n {
            return Err(Error::InvalidParameter(format!(
                "candidate n_l = {n_l} invalid for n = {n}"
            )));
        }
    }
    for &n_l in candidates.iter().rev() {
        let w = n_l * n_l;
        let motion = speed_px_per_s * w as f64 / rate_meas_per_s;
        if motion < n as f64 / n_l as f64 {
            return Ok(WindowChoice {
                w,
                n_l,
                fallback: false,
            });
        }
    }
    let n_l = candidates[0];
    Ok(WindowChoice {
        w: n_l * n_l,
        n_l,
        fallback: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SceneKind, SceneSpec};

    fn densify(m: &DssMatrix, cycle: usize) -> Vec<Vec<f64>> {
        (0..m.window())
            .map(|row| {
                (0..m.pixels())
                    .map(|j| m.entry(cycle * m.window() + row, j))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn dense_product_with_upsampler_is_scaled_hadamard() {
        // n=4, n_l=2, B=4, s=2: all entries ±1 and Phi U = 2 H'.
        let m = DssMatrix::build(4, 2, 2, 2, 5).unwrap();
        for cycle in 0..2 {
            let dense = densify(&m, cycle);
            for row in &dense {
                assert!(row.iter().all(|&v| v == 1.0 || v == -1.0));
            }
            for k in 0..4 {
                let mut low = vec![0.0; 4];
                low[k] = 1.0;
                let up = upsample_replicate(&low, 2, 4);
                for (i, row) in dense.iter().enumerate() {
                    let dot: f64 = row.iter().zip(up.iter()).map(|(a, b)| a * b).sum();
                    assert!(
                        (dot - 2.0 * m.hadamard().entry(i, k)).abs() < 1e-12,
                        "cycle {cycle} row {i} column {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn full_scale_patterns_degenerate_to_replicated_hadamard() {
        // s = B forces all-plus patterns, so the high-frequency part is zero.
        let m = DssMatrix::build(8, 4, 1, 4, 9).unwrap();
        for t in 0..m.window() {
            for j in 0..m.pixels() {
                let (k, _) = m.block_of(j);
                assert_eq!(m.entry(t, j), m.hadamard.entry(t, k));
            }
        }
    }

    #[test]
    fn scale_parity_and_range_are_enforced() {
        // B = 4: odd s has the wrong parity.
        assert!(DssMatrix::build(4, 2, 1, 1, 0).is_err());
        assert!(DssMatrix::build(4, 2, 1, 0, 0).is_err());
        assert!(DssMatrix::build(4, 2, 1, 6, 0).is_err());
        // B = 1 (n_l = n): s = 1 is the only legal value.
        assert!(DssMatrix::build(4, 4, 1, 1, 0).is_ok());
        assert!(DssMatrix::build(4, 4, 1, 2, 0).is_err());
    }

    #[test]
    fn all_ones_frame_row_zero_yields_scale_times_window() {
        let h = PermutedHadamard::identity(16).unwrap();
        let m = DssMatrix::build_with_hadamard(16, 4, 1, 2, 0, h).unwrap();
        let frame = vec![1.0; 256];
        let y = m.apply_row(&frame, 0).unwrap();
        assert_eq!(y, (m.scale() * m.window()) as f64);
    }

    #[test]
    fn zero_frame_measures_zero() {
        let m = DssMatrix::build(8, 2, 1, 2, 1).unwrap();
        assert_eq!(m.apply_row(&vec![0.0; 64], 3).unwrap(), 0.0);
    }

    #[test]
    fn row_adjointness() {
        let m = DssMatrix::build(16, 4, 2, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..100 {
            let t = rng.gen_range(0..m.max_measurements());
            let x: Vec<f64> = (0..m.pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: f64 = rng.gen_range(-1.0..1.0);
            let ax = m.apply_row(&x, t).unwrap();
            let mut aty = vec![0.0; m.pixels()];
            m.apply_row_adjoint(t, y, &mut aty).unwrap();
            let lhs = ax * y;
            let rhs: f64 = x.iter().zip(aty.iter()).map(|(a, b)| a * b).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(
                ((lhs - rhs) / scale).abs() < 1e-10,
                "trial {trial}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn batch_paths_match_per_row_application() {
        let m = DssMatrix::build(16, 4, 2, 2, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frame: Vec<f64> = (0..m.pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (lo, hi) = (3, 13);
        let batch = m.apply_rows_batch(1, lo, hi, &frame).unwrap();
        for (o, row) in batch.iter().zip(lo..hi) {
            let direct = m.apply_row(&frame, m.window() + row).unwrap();
            assert!((o - direct).abs() < 1e-9);
        }
        let values: Vec<f64> = (0..hi - lo).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut batch_adj = vec![0.0; m.pixels()];
        m.apply_rows_batch_adjoint(1, lo, hi, &values, &mut batch_adj)
            .unwrap();
        let mut direct_adj = vec![0.0; m.pixels()];
        for (v, row) in values.iter().zip(lo..hi) {
            m.apply_row_adjoint(m.window() + row, *v, &mut direct_adj)
                .unwrap();
        }
        for (a, b) in batch_adj.iter().zip(direct_adj.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cycles_refresh_their_patterns() {
        let m = DssMatrix::build(16, 4, 3, 2, 21).unwrap();
        for c in 1..3 {
            assert_ne!(
                m.patterns[..m.window() * m.block_size()],
                m.patterns[c * m.window() * m.block_size()..(c + 1) * m.window() * m.block_size()],
                "cycle {c} repeats cycle 0 patterns"
            );
        }
    }

    #[test]
    fn sampled_entries_are_all_signs() {
        let m = DssMatrix::build(64, 16, 2, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100_000 {
            let t = rng.gen_range(0..m.max_measurements());
            let j = rng.gen_range(0..m.pixels());
            assert_eq!(m.entry(t, j).abs(), 1.0);
        }
    }

    fn static_spec(n: usize) -> SceneSpec {
        SceneSpec {
            kind: SceneKind::StaticTexture,
            n,
            duration_measurements: 1024,
            speed: 0.0,
            speed_window: 1024,
            background_seed: 13,
            foreground_size: n / 4,
        }
    }

    #[test]
    fn noiseless_static_acquisition_equals_inner_products() {
        let m = DssMatrix::build(16, 4, 2, 2, 3).unwrap();
        let scene = Scene::new(static_spec(16)).unwrap();
        let vol = crate::scene::synthesize_scene(&static_spec(16), 1).unwrap();
        let stream = acquire(
            &m,
            SceneSource::Volume {
                volume: &vol,
                hold: 32,
            },
            32,
            NoiseModel::None,
            0,
        )
        .unwrap();
        for (t, &y) in stream.values().iter().enumerate() {
            let expect = m.apply_row(scene.background(), t).unwrap();
            assert_eq!(y, expect);
        }
    }

    #[test]
    fn live_fast_path_matches_naive_rendering() {
        let spec = SceneSpec {
            kind: SceneKind::TranslatingCross,
            n: 16,
            duration_measurements: 64,
            speed: 3.0,
            speed_window: 64,
            background_seed: 5,
            foreground_size: 6,
        };
        let scene = Scene::new(spec).unwrap();
        let m = DssMatrix::build(16, 4, 4, 2, 11).unwrap();
        let stream = acquire(&m, SceneSource::Live(&scene), 64, NoiseModel::None, 0).unwrap();
        for (t, &y) in stream.values().iter().enumerate() {
            let frame = scene.render_frame(t);
            let expect = m.apply_row(&frame, t).unwrap();
            assert!((y - expect).abs() < 1e-10, "t={t}: {y} vs {expect}");
        }
    }

    #[test]
    fn acquisition_is_seed_deterministic() {
        let m = DssMatrix::build(16, 4, 4, 2, 1).unwrap();
        let scene = Scene::new(static_spec(16)).unwrap();
        let a = acquire(&m, SceneSource::Live(&scene), 64, NoiseModel::Sigma(0.5), 7).unwrap();
        let b = acquire(&m, SceneSource::Live(&scene), 64, NoiseModel::Sigma(0.5), 7).unwrap();
        assert_eq!(a.values(), b.values());
        let c = acquire(&m, SceneSource::Live(&scene), 64, NoiseModel::Sigma(0.5), 8).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn target_snr_is_achieved_within_half_db() {
        let m = DssMatrix::build(8, 2, 16384, 2, 17).unwrap();
        let scene = Scene::new(static_spec(8)).unwrap();
        let stream = acquire(
            &m,
            SceneSource::Live(&scene),
            65536,
            NoiseModel::TargetSnrDb(60.0),
            3,
        )
        .unwrap();
        let achieved = stream.achieved_snr_db.unwrap();
        assert!(
            (achieved - 60.0).abs() < 0.5,
            "achieved SNR {achieved} dB not within 0.5 dB of 60"
        );
    }

    #[test]
    fn stream_too_long_for_matrix_is_rejected() {
        let m = DssMatrix::build(8, 2, 2, 2, 17).unwrap();
        let scene = Scene::new(static_spec(8)).unwrap();
        assert!(acquire(&m, SceneSource::Live(&scene), 9, NoiseModel::None, 0).is_err());
        let vol = crate::scene::synthesize_scene(&static_spec(8), 4).unwrap();
        // 4 frames, hold 1 -> only 4 instants available.
        assert!(acquire(
            &m,
            SceneSource::Volume {
                volume: &vol,
                hold: 1
            },
            8,
            NoiseModel::None,
            0
        )
        .is_err());
    }

    #[test]
    fn measurement_file_round_trip() {
        let m = DssMatrix::build(16, 4, 2, 2, 23).unwrap();
        let scene = Scene::new(static_spec(16)).unwrap();
        let stream = acquire(&m, SceneSource::Live(&scene), 32, NoiseModel::Sigma(0.1), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csms");
        stream.write(&path).unwrap();
        let back = MeasurementStream::read(&path).unwrap();
        assert_eq!(stream.values(), back.values());
        assert_eq!(back.n, 16);
        assert_eq!(back.n_l, 4);
        assert_eq!(back.scale, 2);
        assert_eq!(back.matrix_seed, 23);
        assert_eq!(back.scene_hash, scene.spec().hash());
    }

    #[test]
    fn decomposition_reassembles_the_window() {
        let spec = SceneSpec {
            kind: SceneKind::TranslatingCross,
            n: 16,
            duration_measurements: 32,
            speed: 4.0,
            speed_window: 32,
            background_seed: 2,
            foreground_size: 6,
        };
        let scene = Scene::new(spec).unwrap();
        let m = DssMatrix::build(16, 4, 2, 2, 31).unwrap();
        let stream = acquire(&m, SceneSource::Live(&scene), 32, NoiseModel::Sigma(0.2), 5).unwrap();
        let vecs = decompose_error_vectors(&m, &stream, SceneSource::Live(&scene), 8).unwrap();
        let norm: f64 = stream.values()[8..24].iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..16 {
            let sum = vecs.low[j] + vecs.spatial[j] + vecs.temporal[j] + vecs.noise[j];
            assert!(
                (sum - stream.values()[8 + j]).abs() <= 1e-8 * norm.max(1.0),
                "component sum mismatch at {j}"
            );
        }
    }

    #[test]
    fn static_noiseless_decomposition_vanishes() {
        let scene = Scene::new(static_spec(16)).unwrap();
        let m = DssMatrix::build(16, 4, 2, 2, 3).unwrap();
        let stream = acquire(&m, SceneSource::Live(&scene), 32, NoiseModel::None, 0).unwrap();
        let d = decompose_errors(&m, &stream, SceneSource::Live(&scene), 4).unwrap();
        assert!(d.temporal < 1e-10);
        assert!(d.measurement < 1e-10);
    }

    #[test]
    fn full_resolution_matrix_has_no_spatial_error() {
        // n_l = n: U = D = I so the downsampling residual vanishes.
        let scene = Scene::new(static_spec(8)).unwrap();
        let m = DssMatrix::build(8, 8, 2, 1, 3).unwrap();
        let stream = acquire(&m, SceneSource::Live(&scene), 128, NoiseModel::None, 0).unwrap();
        let d = decompose_errors(&m, &stream, SceneSource::Live(&scene), 0).unwrap();
        assert!(d.spatial < 1e-10);
    }

    #[test]
    fn temporal_error_grows_with_window() {
        let spec = SceneSpec {
            kind: SceneKind::TranslatingCross,
            n: 64,
            duration_measurements: 4096,
            speed: 8.0,
            speed_window: 4096,
            background_seed: 6,
            foreground_size: 20,
        };
        let scene = Scene::new(spec).unwrap();
        let mut previous = 0.0;
        for &n_l in &[8usize, 16, 32] {
            let w = n_l * n_l;
            let m = DssMatrix::build(64, n_l, 1, 2, 41).unwrap();
            let stream = acquire(&m, SceneSource::Live(&scene), w, NoiseModel::None, 0).unwrap();
            let d = decompose_errors(&m, &stream, SceneSource::Live(&scene), 0).unwrap();
            assert!(
                d.temporal >= previous,
                "temporal error not monotone at W={w}: {} < {previous}",
                d.temporal
            );
            previous = d.temporal;
        }
    }

    #[test]
    fn window_selection_rule() {
        // Worked example: n=256 at 8192 meas/s, object crosses the field in
        // 16384 measurements (128 px/s) -> only n_l=16 passes.
        let choice = select_window(256, &[16, 32, 64, 128], 128.0, 8192.0).unwrap();
        assert_eq!(choice.w, 256);
        assert_eq!(choice.n_l, 16);
        assert!(!choice.fallback);

        let still = select_window(256, &[16, 32, 64, 128], 0.0, 8192.0).unwrap();
        assert_eq!(still.w, 128 * 128);
        assert!(!still.fallback);

        let frantic = select_window(256, &[16, 32, 64, 128], 1e9, 8192.0).unwrap();
        assert_eq!(frantic.w, 256);
        assert!(frantic.fallback);

        assert!(select_window(256, &[], 1.0, 8192.0).is_err());
    }
}

//! Video volume representation and file I/O.
//!
//! A [`VideoVolume`] is an `n x n x frames` stack of scalar frames stored
//! frame-major. The raw on-disk format is little-endian: magic `CSMV`,
//! three `u32` fields (width, height, frames), then an `f32` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 4] = b"CSMV";

/// Reconstruction SNR is capped at this value when the error norm is zero,
/// so CSV outputs never contain infinities.
pub const RSNR_CAP_DB: f64 = 300.0;

/// An `n x n x frames` intensity volume, frame-major, row-major within a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoVolume {
    width: usize,
    height: usize,
    frames: usize,
    data: Vec<f64>,
    /// Seconds per frame; metadata only, not persisted by the raw format.
    pub frame_period: f64,
}

impl VideoVolume {
    pub fn new(width: usize, height: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * frames {
            return Err(Error::DimensionMismatch(format!(
                "volume data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                frames
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "volume intensities must be finite".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            frames,
            data,
            frame_period: 1.0,
        })
    }

    pub fn zeros(width: usize, height: usize, frames: usize) -> Self {
        Self {
            width,
            height,
            frames,
            data: vec![0.0; width * height * frames],
            frame_period: 1.0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.pixels_per_frame();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.pixels_per_frame();
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Clamps every intensity to [0, 1] in place. Applied on synthesis and on
    /// file export, never inside solver iterations.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Writes the raw little-endian format.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = BufWriter::new(file);
        let ctx = || path.display().to_string();
        out.write_all(VOLUME_MAGIC).map_err(|e| Error::io(ctx(), e))?;
        for dim in [self.width, self.height, self.frames] {
            let v = u32::try_from(dim)
                .map_err(|_| Error::format(path, format!("dimension {dim} overflows u32")))?;
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(ctx(), e))?;
        }
        for &v in &self.data {
            out.write_all(&(v as f32).to_le_bytes())
                .map_err(|e| Error::io(ctx(), e))?;
        }
        out.flush().map_err(|e| Error::io(ctx(), e))
    }

    /// Reads the raw format written by [`VideoVolume::write`].
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut input = BufReader::new(file);
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if &magic != VOLUME_MAGIC {
            return Err(Error::format(path, "magic mismatch, expected CSMV"));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut buf = [0u8; 4];
            input
                .read_exact(&mut buf)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        let [width, height, frames] = dims;
        let count = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(frames))
            .ok_or_else(|| Error::format(path, "dimension overflow"))?;
        let mut payload = vec![0u8; count * 4];
        input
            .read_exact(&mut payload)
            .map_err(|_| Error::format(path, "truncated payload"))?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(width, height, frames, data)
    }

    /// Exports an 8-bit binary PGM (P5) per frame, `prefix_000000.pgm` style
    /// zero-padded frame indices. Intensities clamp to [0,1] and quantize
    /// round-half-up: 0.5 maps to 128.
    pub fn write_pgm_sequence(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for k in 0..self.frames {
            let path = dir.join(format!("{prefix}_{k:06}.pgm"));
            let file =
                File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let mut out = BufWriter::new(file);
            let ctx = || path.display().to_string();
            write!(out, "P5\n{} {}\n255\n", self.width, self.height)
                .map_err(|e| Error::io(ctx(), e))?;
            let bytes: Vec<u8> = self
                .frame(k)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
                .collect();
            out.write_all(&bytes).map_err(|e| Error::io(ctx(), e))?;
            out.flush().map_err(|e| Error::io(ctx(), e))?;
        }
        Ok(())
    }
}

/// Reconstruction SNR in dB: `-20 log10(||x - xhat|| / ||x||)`, capped at
/// [`RSNR_CAP_DB`] when the error norm is exactly zero.
pub fn rsnr(reference: &VideoVolume, estimate: &VideoVolume) -> Result<f64> {
    if reference.width != estimate.width
        || reference.height != estimate.height
        || reference.frames != estimate.frames
    {
        return Err(Error::DimensionMismatch(
            "rsnr operands have different shapes".into(),
        ));
    }
    let signal: f64 = reference.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if signal == 0.0 {
        return Err(Error::InvalidParameter(
            "rsnr reference has zero norm".into(),
        ));
    }
    let err: f64 = reference
        .data
        .iter()
        .zip(estimate.data.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if err == 0.0 {
        return Ok(RSNR_CAP_DB);
    }
    Ok((-20.0 * (err / signal).log10()).min(RSNR_CAP_DB))
}

/// Emulates a non-compressive camera that trades spatial for temporal
/// resolution at a matched compression ratio: block-average spatially by
/// `spatial_factor`, average groups of `compression / spatial_factor^2`
/// frames, then upsample back (nearest-neighbor spatial, hold temporal).
pub fn nyquist_binning_baseline(
    ground_truth: &VideoVolume,
    compression: usize,
    spatial_factor: usize,
) -> Result<VideoVolume> {
    if compression == 0 || spatial_factor == 0 {
        return Err(Error::InvalidParameter(
            "compression and spatial factor must be positive".into(),
        ));
    }
    let sf2 = spatial_factor * spatial_factor;
    if compression % sf2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "compression {compression} is not divisible by spatial_factor^2 = {sf2}"
        )));
    }
    let temporal_factor = compression / sf2;
    let (w, h) = (ground_truth.width, ground_truth.height);
    if w % spatial_factor != 0 || h % spatial_factor != 0 {
        return Err(Error::InvalidParameter(format!(
            "spatial factor {spatial_factor} does not divide frame size {w}x{h}"
        )));
    }
    let n = ground_truth.pixels_per_frame();
    let mut out = VideoVolume::zeros(w, h, ground_truth.frames);
    out.frame_period = ground_truth.frame_period;

    let mut group = 0;
    while group * temporal_factor < ground_truth.frames {
        let start = group * temporal_factor;
        let end = (start + temporal_factor).min(ground_truth.frames);
        // Temporal mean over the group.
        let mut mean = vec![0.0; n];
        for k in start..end {
            for (m, v) in mean.iter_mut().zip(ground_truth.frame(k)) {
                *m += v;
            }
        }
        let scale = 1.0 / (end - start) as f64;
        for m in &mut mean {
            *m *= scale;
        }
        // Spatial bin then nearest-neighbor upsample.
        let bw = w / spatial_factor;
        let mut binned = vec![0.0; bw * (h / spatial_factor)];
        for (bi, b) in binned.iter_mut().enumerate() {
            let (bx, by) = (bi % bw, bi / bw);
            let mut acc = 0.0;
            for dy in 0..spatial_factor {
                for dx in 0..spatial_factor {
                    acc += mean[(by * spatial_factor + dy) * w + bx * spatial_factor + dx];
                }
            }
            *b = acc / sf2 as f64;
        }
        let mut up = vec![0.0; n];
        for (i, u) in up.iter_mut().enumerate() {
            let (x, y) = (i % w, i / w);
            *u = binned[(y / spatial_factor) * bw + x / spatial_factor];
        }
        for k in start..end {
            out.frame_mut(k).copy_from_slice(&up);
        }
        group += 1;
    }
    Ok(out)
}

/// Picks a spatial/temporal factorization for a target compression ratio:
/// the largest spatial factor whose square divides the ratio. Returns
/// `(ratio, spatial_factor)`.
pub fn nyquist_split(compression: usize) -> (usize, usize) {
    let mut s = (compression as f64).sqrt().floor() as usize;
    while s > 1 && compression % (s * s) != 0 {
        s -= 1;
    }
    (compression, s.max(1))
}

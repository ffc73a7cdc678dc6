//! Sliding-window least-squares previews.
//!
//! A window of `W` consecutive measurements covers each Hadamard row exactly
//! once (rows cycle with period `W`), so for any window offset the
//! low-resolution least-squares estimate reduces to one inverse transform:
//! `(1/(sW)) H'^T` applied to the rotation-aligned window. Windows may
//! straddle cycle boundaries; each measurement is matched to its own row.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::plan::FramePlan;
use crate::sensing::{DssMatrix, MeasurementStream};
use crate::volume::VideoVolume;

/// Low-resolution preview frames, one per plan window.
#[derive(Debug, Clone)]
pub struct PreviewVideo {
    n_l: usize,
    stride: usize,
    frames: usize,
    data: Vec<f64>,
}

impl PreviewVideo {
    pub fn n_l(&self) -> usize {
        self.n_l
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.n_l * self.n_l;
        &self.data[k * n..(k + 1) * n]
    }

    /// Copies into a volume for export; preview intensities are not clamped
    /// here (display and PGM export clamp).
    pub fn to_volume(&self) -> VideoVolume {
        let mut vol = VideoVolume::zeros(self.n_l, self.n_l, self.frames);
        vol.data_mut().copy_from_slice(&self.data);
        vol.frame_period = self.stride as f64;
        vol
    }
}

fn check_stream(matrix: &DssMatrix, stream: &MeasurementStream) -> Result<()> {
    if !stream.matches_matrix(matrix) {
        return Err(Error::DimensionMismatch(
            "measurement stream descriptor does not match the sensing matrix".into(),
        ));
    }
    Ok(())
}

/// Least-squares preview for the window starting at `start`.
pub fn preview_window(
    matrix: &DssMatrix,
    stream: &MeasurementStream,
    start: usize,
) -> Result<Vec<f64>> {
    check_stream(matrix, stream)?;
    matrix.preview_from_window(stream.values(), start)
}

/// One preview per plan frame `k`, from the window `[k*stride, k*stride+W)`.
/// Windows are independent and processed in parallel.
pub fn preview_sequence(
    matrix: &DssMatrix,
    stream: &MeasurementStream,
    plan: &FramePlan,
) -> Result<PreviewVideo> {
    check_stream(matrix, stream)?;
    if plan.window() != matrix.window() {
        return Err(Error::DimensionMismatch(format!(
            "plan window {} != matrix window {}",
            plan.window(),
            matrix.window()
        )));
    }
    if plan.total() > stream.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} measurements but stream holds {}",
            plan.total(),
            stream.len()
        )));
    }
    let previews: Vec<Vec<f64>> = (0..plan.frames())
        .into_par_iter()
        .map(|k| matrix.preview_from_window(stream.values(), plan.window_start(k)))
        .collect::<Result<_>>()?;
    let n_l = matrix.n_l();
    let mut data = Vec::with_capacity(plan.frames() * n_l * n_l);
    for p in previews {
        data.extend_from_slice(&p);
    }
    Ok(PreviewVideo {
        n_l,
        stride: plan.stride(),
        frames: plan.frames(),
        data,
    })
}

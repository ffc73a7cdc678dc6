//! Measurement-to-frame bookkeeping.

use crate::error::{Error, Result};

/// Groups `total` measurements into overlapping windows of length `window`
/// advanced by `stride`, yielding `frames = (total - window)/stride + 1`
/// recovered frames. Measurement `t` belongs to the frame whose window
/// center is nearest (round), clamped at the edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePlan {
    total: usize,
    window: usize,
    stride: usize,
    frames: usize,
}

impl FramePlan {
    pub fn new(total: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::InvalidParameter(
                "window and stride must be positive".into(),
            ));
        }
        if stride > window {
            return Err(Error::InvalidParameter(format!(
                "stride {stride} exceeds window {window}"
            )));
        }
        if !is_power_of_four(window) {
            return Err(Error::InvalidParameter(format!(
                "window {window} is not a power of four"
            )));
        }
        if total < window {
            return Err(Error::InvalidParameter(format!(
                "total {total} shorter than one window {window}"
            )));
        }
        let frames = (total - window) / stride + 1;
        Ok(Self {
            total,
            window,
            stride,
            frames,
        })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// First measurement of frame `k`'s window.
    pub fn window_start(&self, k: usize) -> usize {
        k * self.stride
    }

    /// Measurement index at the center of frame `k`'s window.
    pub fn frame_center(&self, k: usize) -> usize {
        k * self.stride + self.window / 2
    }

    /// Frame index owning measurement `t`: nearest window center, clamped.
    pub fn frame_of(&self, t: usize) -> usize {
        let raw = (t as f64 - self.window as f64 / 2.0) / self.stride as f64;
        let k = raw.round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.frames - 1)
        }
    }

    /// Half-open measurement range assigned to frame `k` by [`frame_of`].
    ///
    /// [`Self::frame_of`] is non-decreasing, so the assignment is an interval.
    pub fn measurement_range(&self, k: usize) -> (usize, usize) {
        debug_assert!(k < self.frames);
        // Centers are at window/2 + k*stride; boundaries halfway between.
        let lo = if k == 0 {
            0
        } else {
            let boundary = self.window as f64 / 2.0 + (k as f64 - 0.5) * self.stride as f64;
            // First t with round((t - W/2)/stride) >= k.
            let mut t = boundary.floor() as usize;
            while self.frame_of(t) < k {
                t += 1;
            }
            t
        };
        let hi = if k + 1 == self.frames {
            self.total
        } else {
            let boundary = self.window as f64 / 2.0 + (k as f64 + 0.5) * self.stride as f64;
            let mut t = boundary.floor() as usize;
            while t < self.total && self.frame_of(t) <= k {
                t += 1;
            }
            t
        };
        (lo, hi)
    }
}

pub fn is_power_of_four(v: usize) -> bool {
    v.is_power_of_two() && v.trailing_zeros() % 2 == 0
}

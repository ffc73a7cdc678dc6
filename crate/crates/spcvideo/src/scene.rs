//! Synthetic test scenes: a moving foreground rendered with bilinear
//! subpixel placement over a static textured background.
//!
//! Rendering is a pure function of the spec, so identical specs give
//! byte-identical volumes. The scene changes continuously: there is one
//! rendered state per measurement instant `t`.

use crate::error::{Error, Result};
use crate::volume::VideoVolume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    TranslatingCross,
    ResolutionChart,
    PendulumLetter,
    StaticTexture,
}

impl SceneKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "translating-cross" => Ok(Self::TranslatingCross),
            "resolution-chart" => Ok(Self::ResolutionChart),
            "pendulum-letter" => Ok(Self::PendulumLetter),
            "static-texture" => Ok(Self::StaticTexture),
            other => Err(Error::InvalidParameter(format!(
                "unknown scene kind '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TranslatingCross => "translating-cross",
            Self::ResolutionChart => "resolution-chart",
            Self::PendulumLetter => "pendulum-letter",
            Self::StaticTexture => "static-texture",
        }
    }
}

/// Deterministic description of a synthetic scene.
///
/// `speed` is the number of pixels the foreground traverses over
/// `speed_window` measurement instants (sub-pixel precision; for the
/// pendulum it is the peak speed of the swing).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub n: usize,
    pub duration_measurements: usize,
    pub speed: f64,
    pub speed_window: usize,
    pub background_seed: u64,
    pub foreground_size: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::TranslatingCross,
            n: 128,
            duration_measurements: 65536,
            speed: 8.0,
            speed_window: 4096,
            background_seed: 7,
            foreground_size: 36,
        }
    }
}

impl SceneSpec {
    /// FNV-1a over the canonical field encoding; links measurement files
    /// back to the scene that produced them.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.kind.name().as_bytes());
        eat(&(self.n as u64).to_le_bytes());
        eat(&(self.duration_measurements as u64).to_le_bytes());
        eat(&self.speed.to_le_bytes());
        eat(&(self.speed_window as u64).to_le_bytes());
        eat(&self.background_seed.to_le_bytes());
        eat(&(self.foreground_size as u64).to_le_bytes());
        h
    }
}

/// A renderable scene: static background plus a canonical foreground mask
/// translated per instant. Frames render on demand so long acquisitions
/// never materialize the full per-instant volume.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    background: Vec<f64>,
    mask: Vec<f64>,
    foreground_intensity: f64,
}

/// The foreground's dirty rectangle at one instant: fractional coverage per
/// patch pixel, anchored at (possibly negative, wrapped) `x0, y0`.
#[derive(Debug, Clone)]
pub struct Overlay {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
    pub coverage: Vec<f64>,
    pub intensity: f64,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        if spec.n == 0 {
            return Err(Error::InvalidParameter("scene size must be positive".into()));
        }
        if spec.speed < 0.0 || !spec.speed.is_finite() {
            return Err(Error::InvalidParameter(
                "scene speed must be finite and nonnegative".into(),
            ));
        }
        if spec.speed_window == 0 {
            return Err(Error::InvalidParameter(
                "speed_window must be positive".into(),
            ));
        }
        let has_foreground = spec.kind != SceneKind::StaticTexture;
        if has_foreground && spec.foreground_size > spec.n {
            return Err(Error::InvalidParameter(format!(
                "foreground size {} exceeds field of view {}",
                spec.foreground_size, spec.n
            )));
        }
        if has_foreground && spec.foreground_size == 0 {
            return Err(Error::InvalidParameter(
                "foreground size must be positive".into(),
            ));
        }
        let background = textured_background(spec.n, spec.background_seed);
        let mask = match spec.kind {
            SceneKind::TranslatingCross => cross_mask(spec.foreground_size),
            SceneKind::ResolutionChart => chart_mask(spec.foreground_size),
            SceneKind::PendulumLetter => letter_mask(spec.foreground_size),
            SceneKind::StaticTexture => Vec::new(),
        };
        Ok(Self {
            spec,
            background,
            mask,
            foreground_intensity: 1.0,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    /// Continuous foreground displacement from the anchor at instant `t`.
    fn displacement(&self, t: usize) -> (f64, f64) {
        let per_instant = self.spec.speed / self.spec.speed_window as f64;
        match self.spec.kind {
            SceneKind::TranslatingCross | SceneKind::ResolutionChart => {
                (per_instant * t as f64, 0.0)
            }
            SceneKind::PendulumLetter => {
                let amplitude =
                    ((self.spec.n - self.spec.foreground_size) as f64 / 2.0 - 1.0).max(0.0);
                if amplitude == 0.0 || per_instant == 0.0 {
                    (0.0, 0.0)
                } else {
                    let omega = per_instant / amplitude;
                    (amplitude * (omega * t as f64).sin(), 0.0)
                }
            }
            SceneKind::StaticTexture => (0.0, 0.0),
        }
    }

    /// Foreground coverage patch at instant `t`, or `None` for pure texture.
    pub fn overlay(&self, t: usize) -> Option<Overlay> {
        if self.spec.kind == SceneKind::StaticTexture {
            return None;
        }
        let fg = self.spec.foreground_size;
        let anchor = ((self.spec.n - fg) / 2) as f64;
        let (dx, dy) = self.displacement(t);
        let (px, py) = (anchor + dx, anchor + dy);
        let (x0, y0) = (px.floor() as i64, py.floor() as i64);
        let (fx, fy) = (px - px.floor(), py - py.floor());

        // Bilinear shift of the binary mask by the fractional part; the patch
        // grows by one pixel in each direction.
        let (w, h) = (fg + 1, fg + 1);
        let mut coverage = vec![0.0; w * h];
        let m = |x: i64, y: i64| -> f64 {
            if x < 0 || y < 0 || x >= fg as i64 || y >= fg as i64 {
                0.0
            } else {
                self.mask[y as usize * fg + x as usize]
            }
        };
        for v in 0..h as i64 {
            for u in 0..w as i64 {
                let a = m(u, v) * (1.0 - fx) * (1.0 - fy)
                    + m(u - 1, v) * fx * (1.0 - fy)
                    + m(u, v - 1) * (1.0 - fx) * fy
                    + m(u - 1, v - 1) * fx * fy;
                coverage[v as usize * w + u as usize] = a;
            }
        }
        Some(Overlay {
            x0,
            y0,
            width: w,
            height: h,
            coverage,
            intensity: self.foreground_intensity,
        })
    }

    pub fn render_frame_into(&self, t: usize, out: &mut [f64]) {
        let n = self.spec.n;
        debug_assert_eq!(out.len(), n * n);
        out.copy_from_slice(&self.background);
        if let Some(ov) = self.overlay(t) {
            for v in 0..ov.height {
                let y = (ov.y0 + v as i64).rem_euclid(n as i64) as usize;
                for u in 0..ov.width {
                    let a = ov.coverage[v * ov.width + u];
                    if a == 0.0 {
                        continue;
                    }
                    let x = (ov.x0 + u as i64).rem_euclid(n as i64) as usize;
                    let j = y * n + x;
                    out[j] += a * (ov.intensity - out[j]);
                }
            }
        }
        for p in out.iter_mut() {
            *p = p.clamp(0.0, 1.0);
        }
    }

    pub fn render_frame(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.n * self.spec.n];
        self.render_frame_into(t, &mut out);
        out
    }
}

/// Renders one frame per measurement instant `0..t_count`.
pub fn synthesize_scene(spec: &SceneSpec, t_count: usize) -> Result<VideoVolume> {
    synthesize_sampled(spec, t_count, 1)
}

/// Renders frames at instants `0, stride, 2*stride, ...` below `t_count`;
/// pairs with acquisition in hold mode to bound memory on long runs.
pub fn synthesize_sampled(spec: &SceneSpec, t_count: usize, stride: usize) -> Result<VideoVolume> {
    if t_count == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "scene duration and stride must be positive".into(),
        ));
    }
    let scene = Scene::new(spec.clone())?;
    let frames = t_count.div_ceil(stride);
    let n = spec.n;
    let mut vol = VideoVolume::zeros(n, n, frames);
    for k in 0..frames {
        scene.render_frame_into(k * stride, vol.frame_mut(k));
    }
    vol.frame_period = stride as f64;
    Ok(vol)
}

/// Smooth two-octave value noise in [0.15, 0.85]; deterministic in the seed.
fn textured_background(n: usize, seed: u64) -> Vec<f64> {
    let octave = |cell: usize, seed: u64| -> Vec<f64> {
        let cell = cell.max(2);
        let gw = n / cell + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid: Vec<f64> = (0..gw * gw).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut out = vec![0.0; n * n];
        for y in 0..n {
            let gy = y as f64 / cell as f64;
            let (y0, ty) = (gy.floor() as usize, gy.fract());
            for x in 0..n {
                let gx = x as f64 / cell as f64;
                let (x0, tx) = (gx.floor() as usize, gx.fract());
                let g = |i: usize, j: usize| grid[j * gw + i];
                out[y * n + x] = g(x0, y0) * (1.0 - tx) * (1.0 - ty)
                    + g(x0 + 1, y0) * tx * (1.0 - ty)
                    + g(x0, y0 + 1) * (1.0 - tx) * ty
                    + g(x0 + 1, y0 + 1) * tx * ty;
            }
        }
        out
    };
    let coarse = octave(n / 8, seed);
    let fine = octave(n / 16, seed.wrapping_add(1));
    coarse
        .iter()
        .zip(fine.iter())
        .map(|(c, f)| 0.15 + 0.7 * (0.7 * c + 0.3 * f))
        .collect()
}

fn cross_mask(fg: usize) -> Vec<f64> {
    let mut mask = vec![0.0; fg * fg];
    let arm = (fg / 3).max(1);
    let lo = (fg - arm) / 2;
    let hi = lo + arm;
    for y in 0..fg {
        for x in 0..fg {
            if (lo..hi).contains(&x) || (lo..hi).contains(&y) {
                mask[y * fg + x] = 1.0;
            }
        }
    }
    mask
}

/// Vertical bar groups of width 1, 2, 4, 8 px stacked in horizontal bands.
fn chart_mask(fg: usize) -> Vec<f64> {
    let mut mask = vec![0.0; fg * fg];
    let band = (fg / 4).max(1);
    for y in 0..fg {
        let width = 1usize << (y / band).min(3);
        for x in 0..fg {
            if (x / width) % 2 == 0 {
                mask[y * fg + x] = 1.0;
            }
        }
    }
    mask
}

/// Blocky letter glyph: vertical stroke, upper bowl, diagonal leg.
fn letter_mask(fg: usize) -> Vec<f64> {
    let mut mask = vec![0.0; fg * fg];
    let stroke = (fg / 5).max(1);
    for y in 0..fg {
        for x in 0..fg {
            let vertical = x < stroke;
            let top_bar = y < stroke && x < fg - stroke;
            let mid_bar = y >= fg / 2 && y < fg / 2 + stroke && x < fg - stroke;
            let bowl = x >= fg - 2 * stroke && x < fg - stroke && y < fg / 2;
            let diag = y >= fg / 2 && {
                let p = (y - fg / 2) as f64 / (fg - fg / 2) as f64;
                let cx = stroke as f64 + p * (fg - 2 * stroke) as f64;
                (x as f64 - cx).abs() < stroke as f64
            };
            if vertical || top_bar || mid_bar || bowl || diag {
                mask[y * fg + x] = 1.0;
            }
        }
    }
    mask
}

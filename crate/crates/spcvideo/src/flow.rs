//! Optical flow between upsampled preview frames and the subpixel
//! brightness-constancy constraints derived from it.
//!
//! The estimator is coarse-to-fine Horn-Schunck: a box-filter pyramid down
//! to 16 px, bilinear warping between relaxation passes, and an SOR solve
//! of the coupled per-pixel 2x2 systems at each level. Forward/backward
//! consistency discards pixels whose composed displacement exceeds one
//! pixel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::plan::FramePlan;

pub const FLOW_MAGIC: &[u8; 4] = b"CSFL";

/// Per-pixel displacement field with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the binary flow format: header, f32 u and v planes, u8 mask.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = BufWriter::new(file);
        let ctx = || path.display().to_string();
        out.write_all(FLOW_MAGIC).map_err(|e| Error::io(ctx(), e))?;
        for dim in [self.width, self.height] {
            let v =
                u32::try_from(dim).map_err(|_| Error::format(path, "dimension overflows u32"))?;
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(ctx(), e))?;
        }
        for plane in [&self.u, &self.v] {
            for &x in plane.iter() {
                out.write_all(&(x as f32).to_le_bytes())
                    .map_err(|e| Error::io(ctx(), e))?;
            }
        }
        let mask: Vec<u8> = self.valid.iter().map(|&m| m as u8).collect();
        out.write_all(&mask).map_err(|e| Error::io(ctx(), e))?;
        out.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut input = BufReader::new(file);
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if &magic != FLOW_MAGIC {
            return Err(Error::format(path, "magic mismatch, expected CSFL"));
        }
        let mut dims = [0usize; 2];
        for d in &mut dims {
            let mut buf = [0u8; 4];
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::format(path, "truncated header"))?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        let [width, height] = dims;
        let count = width * height;
        let mut plane = |path: &Path| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 4];
            input
                .read_exact(&mut bytes)
                .map_err(|_| Error::format(path, "truncated plane"))?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        let u = plane(path)?;
        let v = plane(path)?;
        let mut mask = vec![0u8; count];
        input
            .read_exact(&mut mask)
            .map_err(|_| Error::format(path, "truncated mask"))?;
        Ok(Self {
            width,
            height,
            u,
            v,
            valid: mask.into_iter().map(|m| m != 0).collect(),
        })
    }
}

/// Catmull-Rom cubic kernel (a = -0.5).
fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Bicubic upsampling of a square low-resolution frame to `n x n`
/// (edge-clamped, center-aligned sampling). `n` must be a multiple of the
/// input resolution.
pub fn upsample_bicubic(low: &[f64], n_l: usize, n: usize) -> Result<Vec<f64>> {
    if low.len() != n_l * n_l {
        return Err(Error::DimensionMismatch(format!(
            "expected {} low-resolution pixels, got {}",
            n_l * n_l,
            low.len()
        )));
    }
    if n_l == 0 || n % n_l != 0 {
        return Err(Error::InvalidParameter(format!(
            "target {n} is not an integer multiple of source {n_l}"
        )));
    }
    let scale = (n / n_l) as f64;
    let clamp = |i: i64| i.clamp(0, n_l as i64 - 1) as usize;
    let mut out = vec![0.0; n * n];
    for oy in 0..n {
        let sy = (oy as f64 + 0.5) / scale - 0.5;
        let y0 = sy.floor() as i64;
        let wy: Vec<f64> = (-1..3)
            .map(|d| cubic_weight(sy - (y0 + d) as f64))
            .collect();
        for ox in 0..n {
            let sx = (ox as f64 + 0.5) / scale - 0.5;
            let x0 = sx.floor() as i64;
            let mut acc = 0.0;
            for (dy, wy) in wy.iter().enumerate() {
                let row = clamp(y0 + dy as i64 - 1) * n_l;
                let mut line = 0.0;
                for dx in -1..3i64 {
                    let wx = cubic_weight(sx - (x0 + dx) as f64);
                    line += wx * low[row + clamp(x0 + dx)];
                }
                acc += wy * line;
            }
            out[oy * n + ox] = acc;
        }
    }
    Ok(out)
}

/// Horn-Schunck estimator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Smoothness weight on [0,1]-scaled intensities.
    pub alpha: f64,
    /// Warping passes per pyramid level.
    pub warps: usize,
    /// SOR sweeps per warp.
    pub iterations: usize,
    /// Coarsest pyramid level keeps at least this many pixels per side.
    pub pyramid_min: usize,
    /// SOR over-relaxation factor.
    pub omega: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        // alpha is calibrated for [0,1] intensities: the mean-flow mode is
        // driven only by the data term, whose per-sweep pull scales like
        // Ix^2 / (4 alpha^2); much larger alphas cannot leave the zero
        // initialization within the iteration budget.
        Self {
            alpha: 0.5,
            warps: 3,
            iterations: 100,
            pyramid_min: 16,
            omega: 1.9,
        }
    }
}

fn bilinear(img: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, width as f64 - 1.0);
    let y = y.clamp(0.0, height as f64 - 1.0);
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    img[y0 * width + x0] * (1.0 - fx) * (1.0 - fy)
        + img[y0 * width + x1] * fx * (1.0 - fy)
        + img[y1 * width + x0] * (1.0 - fx) * fy
        + img[y1 * width + x1] * fx * fy
}

fn box_downsample(img: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (width / 2, height / 2);
    let mut out = vec![0.0; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            out[y * w2 + x] = 0.25
                * (img[2 * y * width + 2 * x]
                    + img[2 * y * width + 2 * x + 1]
                    + img[(2 * y + 1) * width + 2 * x]
                    + img[(2 * y + 1) * width + 2 * x + 1]);
        }
    }
    (out, w2, h2)
}

fn central_gradients(img: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; width * height];
    let mut gy = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(width - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(height - 1);
            gx[y * width + x] = 0.5 * (img[y * width + xp] - img[y * width + xm]);
            gy[y * width + x] = 0.5 * (img[yp * width + x] - img[ym * width + x]);
        }
    }
    (gx, gy)
}

/// One Horn-Schunck solve at a single pyramid level, updating `u, v` in
/// place. Each warp linearizes the brightness-constancy residual at the
/// current flow and relaxes the coupled Euler-Lagrange system by SOR.
fn horn_schunck_level(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
    u: &mut [f64],
    v: &mut [f64],
    params: &FlowParams,
) {
    let alpha2 = params.alpha * params.alpha;
    let count = width * height;
    let mut warped = vec![0.0; count];
    for _ in 0..params.warps {
        for (i, w) in warped.iter_mut().enumerate() {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            *w = bilinear(b, width, height, x + u[i], y + v[i]);
        }
        let (ax, ay) = central_gradients(a, width, height);
        let (bx, by) = central_gradients(&warped, width, height);
        let ix: Vec<f64> = ax
            .iter()
            .zip(bx.iter())
            .map(|(p, q)| 0.5 * (p + q))
            .collect();
        let iy: Vec<f64> = ay
            .iter()
            .zip(by.iter())
            .map(|(p, q)| 0.5 * (p + q))
            .collect();
        // Constant part of the linearized residual: Ix u + Iy v + rhs = 0.
        let rhs: Vec<f64> = (0..count)
            .map(|i| warped[i] - a[i] - ix[i] * u[i] - iy[i] * v[i])
            .collect();

        for _ in 0..params.iterations {
            for y in 0..height {
                for x in 0..width {
                    let i = y * width + x;
                    let mut su = 0.0;
                    let mut sv = 0.0;
                    let mut c = 0.0;
                    if x > 0 {
                        su += u[i - 1];
                        sv += v[i - 1];
                        c += 1.0;
                    }
                    if x + 1 < width {
                        su += u[i + 1];
                        sv += v[i + 1];
                        c += 1.0;
                    }
                    if y > 0 {
                        su += u[i - width];
                        sv += v[i - width];
                        c += 1.0;
                    }
                    if y + 1 < height {
                        su += u[i + width];
                        sv += v[i + width];
                        c += 1.0;
                    }
                    let (gx, gy, r) = (ix[i], iy[i], rhs[i]);
                    let a11 = gx * gx + alpha2 * c;
                    let a22 = gy * gy + alpha2 * c;
                    let a12 = gx * gy;
                    let b1 = alpha2 * su - gx * r;
                    let b2 = alpha2 * sv - gy * r;
                    let det = a11 * a22 - a12 * a12;
                    if det <= 0.0 {
                        continue;
                    }
                    let nu = (a22 * b1 - a12 * b2) / det;
                    let nv = (a11 * b2 - a12 * b1) / det;
                    u[i] += params.omega * (nu - u[i]);
                    v[i] += params.omega * (nv - v[i]);
                }
            }
        }
    }
}

/// Coarse-to-fine Horn-Schunck flow from `a` to `b`:
/// `a(x, y) ~ b(x + u, y + v)`. Deterministic; identical frames give
/// exactly zero flow with full validity.
pub fn estimate_flow(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
    params: &FlowParams,
) -> Result<FlowField> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "flow inputs must both be {width}x{height}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter("empty flow input".into()));
    }

    // Pyramid of (a, b, w, h), fine to coarse.
    let mut levels = vec![(a.to_vec(), b.to_vec(), width, height)];
    loop {
        let (pa, pb, w, h) = levels.last().unwrap();
        if w / 2 < params.pyramid_min || h / 2 < params.pyramid_min || w % 2 != 0 || h % 2 != 0 {
            break;
        }
        let (da, w2, h2) = box_downsample(pa, *w, *h);
        let (db, _, _) = box_downsample(pb, *w, *h);
        levels.push((da, db, w2, h2));
    }

    let (_, _, mut cw, mut ch) = *levels.last().unwrap();
    let mut u = vec![0.0; cw * ch];
    let mut v = vec![0.0; cw * ch];
    for (la, lb, lw, lh) in levels.iter().rev() {
        if (*lw, *lh) != (cw, ch) {
            // Upsample flow to the finer level and double the displacements.
            let mut nu = vec![0.0; lw * lh];
            let mut nv = vec![0.0; lw * lh];
            for y in 0..*lh {
                for x in 0..*lw {
                    let sx = (x as f64 + 0.5) / 2.0 - 0.5;
                    let sy = (y as f64 + 0.5) / 2.0 - 0.5;
                    nu[y * lw + x] = 2.0 * bilinear(&u, cw, ch, sx, sy);
                    nv[y * lw + x] = 2.0 * bilinear(&v, cw, ch, sx, sy);
                }
            }
            u = nu;
            v = nv;
            cw = *lw;
            ch = *lh;
        }
        horn_schunck_level(la, lb, *lw, *lh, &mut u, &mut v, params);
    }

    Ok(FlowField {
        width,
        height,
        u,
        v,
        valid: vec![true; width * height],
    })
}

/// Forward/backward consistency: keeps `fwd`'s displacements and marks a
/// pixel valid only when the backward flow sampled at its forward target
/// cancels it to within one pixel. Out-of-bounds targets invalidate.
pub fn consistency_mask(fwd: &FlowField, bwd: &FlowField) -> Result<FlowField> {
    if (fwd.width, fwd.height) != (bwd.width, bwd.height) {
        return Err(Error::DimensionMismatch(
            "forward/backward flow dimensions differ".into(),
        ));
    }
    let (w, h) = (fwd.width, fwd.height);
    let mut out = fwd.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !fwd.valid[i] {
                out.valid[i] = false;
                continue;
            }
            let tx = x as f64 + fwd.u[i];
            let ty = y as f64 + fwd.v[i];
            // Pixel-extent bounds: positions within half a pixel of the
            // border still have a well-defined (edge-clamped) lookup.
            if tx < -0.5 || ty < -0.5 || tx >= w as f64 - 0.5 || ty >= h as f64 - 0.5 {
                out.valid[i] = false;
                continue;
            }
            let bu = bilinear(&bwd.u, w, h, tx, ty);
            let bv = bilinear(&bwd.v, w, h, tx, ty);
            let ex = fwd.u[i] + bu;
            let ey = fwd.v[i] + bv;
            out.valid[i] = (ex * ex + ey * ey).sqrt() <= 1.0;
        }
    }
    Ok(out)
}

/// One brightness-constancy equation: the source pixel equals the weighted
/// combination of four neighbors in the destination frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConstraint {
    pub src_frame: u32,
    pub src_pixel: u32,
    pub dst_frame: u32,
    pub dst_pixels: [u32; 4],
    pub weights: [f64; 4],
}

/// Sparse subpixel brightness-constancy equations between consecutive
/// frames.
#[derive(Debug, Clone, Default)]
pub struct FlowConstraintSet {
    pub constraints: Vec<FlowConstraint>,
}

impl FlowConstraintSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Total constraint count `P`, the input to the flow residual bound.
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

/// Builds constraints from consistency-masked forward/backward flow pairs,
/// one pair per consecutive frame pair of the plan. A constraint is emitted
/// where the forward mask holds and the backward mask holds at the rounded
/// target pixel; integer displacements collapse to one unit-weight neighbor.
pub fn build_constraints(
    pairs: &[(FlowField, FlowField)],
    plan: &FramePlan,
) -> Result<FlowConstraintSet> {
    if pairs.len() + 1 != plan.frames() && !(pairs.is_empty() && plan.frames() == 1) {
        return Err(Error::DimensionMismatch(format!(
            "{} flow pairs cannot link {} frames",
            pairs.len(),
            plan.frames()
        )));
    }
    let mut set = FlowConstraintSet::empty();
    for (frame, (fwd, bwd)) in pairs.iter().enumerate() {
        if (fwd.width, fwd.height) != (bwd.width, bwd.height) {
            return Err(Error::DimensionMismatch(
                "forward/backward flow dimensions differ".into(),
            ));
        }
        let (w, h) = (fwd.width, fwd.height);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !fwd.valid[i] {
                    continue;
                }
                let tx = x as f64 + fwd.u[i];
                let ty = y as f64 + fwd.v[i];
                let (rx, ry) = (tx.round(), ty.round());
                if rx < 0.0 || ry < 0.0 || rx >= w as f64 || ry >= h as f64 {
                    continue;
                }
                if !bwd.valid[ry as usize * w + rx as usize] {
                    continue;
                }
                let x0 = tx.floor();
                let y0 = ty.floor();
                let fx = tx - x0;
                let fy = ty - y0;
                // Zero-weight neighbors clamp onto the anchor so stored
                // coordinates always lie in-bounds.
                let x1 = if fx == 0.0 { x0 } else { x0 + 1.0 };
                let y1 = if fy == 0.0 { y0 } else { y0 + 1.0 };
                if x0 < 0.0 || y0 < 0.0 || x1 >= w as f64 || y1 >= h as f64 {
                    continue;
                }
                let (x0, y0, x1, y1) = (x0 as u32, y0 as u32, x1 as u32, y1 as u32);
                let wd = w as u32;
                set.constraints.push(FlowConstraint {
                    src_frame: frame as u32,
                    src_pixel: i as u32,
                    dst_frame: frame as u32 + 1,
                    dst_pixels: [y0 * wd + x0, y0 * wd + x1, y1 * wd + x0, y1 * wd + x1],
                    weights: [
                        (1.0 - fx) * (1.0 - fy),
                        fx * (1.0 - fy),
                        (1.0 - fx) * fy,
                        fx * fy,
                    ],
                });
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth random texture built from a bilinear grid of the given cell
    /// size.
    fn smooth_grid(width: usize, height: usize, seed: u64, cells: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gw = width / cells + 3;
        let gh = height / cells + 3;
        let grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut out = vec![0.0; width * height];
        for y in 0..height {
            for x in 0..width {
                let gx = x as f64 / cells as f64;
                let gy = y as f64 / cells as f64;
                let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
                let (fx, fy) = (gx.fract(), gy.fract());
                let g = |i: usize, j: usize| grid[j * gw + i];
                out[y * width + x] = g(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + g(x0 + 1, y0) * fx * (1.0 - fy)
                    + g(x0, y0 + 1) * (1.0 - fx) * fy
                    + g(x0 + 1, y0 + 1) * fx * fy;
            }
        }
        out
    }

    fn median(mut values: Vec<f64>) -> f64 {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values[values.len() / 2]
    }

    fn interior_median(field: &[f64], width: usize, height: usize, margin: usize) -> f64 {
        let mut vals = Vec::new();
        for y in margin..height - margin {
            for x in margin..width - margin {
                vals.push(field[y * width + x]);
            }
        }
        median(vals)
    }

    #[test]
    fn upsample_preserves_constants() {
        let low = vec![0.37; 16];
        let up = upsample_bicubic(&low, 4, 16).unwrap();
        for v in up {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_by_one_is_identity() {
        let low: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let up = upsample_bicubic(&low, 4, 4).unwrap();
        for (a, b) in up.iter().zip(low.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_reproduces_linear_ramps_in_the_interior() {
        let n_l = 8;
        let n = 32;
        let scale = n / n_l;
        let ramp = |x: f64, y: f64| 0.2 + 0.03 * x + 0.05 * y;
        let low: Vec<f64> = (0..n_l * n_l)
            .map(|i| ramp((i % n_l) as f64, (i / n_l) as f64))
            .collect();
        let up = upsample_bicubic(&low, n_l, n).unwrap();
        // Away from clamped borders the cubic has linear precision.
        let margin = 2 * scale;
        for y in margin..n - margin {
            for x in margin..n - margin {
                let sx = (x as f64 + 0.5) / scale as f64 - 0.5;
                let sy = (y as f64 + 0.5) / scale as f64 - 0.5;
                let expect = ramp(sx, sy);
                assert!(
                    (up[y * n + x] - expect).abs() < 1e-10,
                    "({x},{y}): {} vs {expect}",
                    up[y * n + x]
                );
            }
        }
    }

    #[test]
    fn upsample_rejects_non_integer_scale() {
        assert!(upsample_bicubic(&vec![0.0; 9], 3, 8).is_err());
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let img = smooth_grid(64, 64, 1, 8);
        let flow = estimate_flow(&img, &img, 64, 64, &FlowParams::default()).unwrap();
        for i in 0..flow.len() {
            assert!(flow.u[i].abs() < 1e-6 && flow.v[i].abs() < 1e-6);
            assert!(flow.valid[i]);
        }
    }

    #[test]
    fn constant_frames_give_zero_flow_with_full_validity() {
        let img = vec![0.5; 64 * 64];
        let flow = estimate_flow(&img, &img, 64, 64, &FlowParams::default()).unwrap();
        assert!(flow.u.iter().all(|&u| u == 0.0));
        assert!(flow.valid.iter().all(|&m| m));
    }

    fn circular_shift(img: &[f64], width: usize, height: usize, dx: i64, dy: i64) -> Vec<f64> {
        let mut out = vec![0.0; width * height];
        for y in 0..height {
            for x in 0..width {
                let sx = (x as i64 - dx).rem_euclid(width as i64) as usize;
                let sy = (y as i64 - dy).rem_euclid(height as i64) as usize;
                out[y * width + x] = img[sy * width + sx];
            }
        }
        out
    }

    #[test]
    fn integer_shift_is_recovered() {
        let a = smooth_grid(64, 64, 2, 8);
        let b = circular_shift(&a, 64, 64, 3, 0);
        let flow = estimate_flow(&a, &b, 64, 64, &FlowParams::default()).unwrap();
        let mu = interior_median(&flow.u, 64, 64, 8);
        let mv = interior_median(&flow.v, 64, 64, 8);
        assert!((2.5..=3.5).contains(&mu), "median u = {mu}");
        assert!((-0.5..=0.5).contains(&mv), "median v = {mv}");
    }

    #[test]
    fn subpixel_shift_is_recovered() {
        let a = smooth_grid(64, 64, 3, 8);
        // Half-pixel shift rendered bilinearly: b(x) = (a(x) + a(x-1)) / 2.
        let mut b = vec![0.0; 64 * 64];
        for y in 0..64usize {
            for x in 0..64usize {
                let xm = x.saturating_sub(1);
                b[y * 64 + x] = 0.5 * (a[y * 64 + x] + a[y * 64 + xm]);
            }
        }
        let flow = estimate_flow(&a, &b, 64, 64, &FlowParams::default()).unwrap();
        let mu = interior_median(&flow.u, 64, 64, 8);
        assert!((0.25..=0.75).contains(&mu), "median u = {mu}");
    }

    #[test]
    fn translation_equivariance_up_to_three_pixels() {
        let a = smooth_grid(64, 64, 4, 8);
        for d in 1..=3i64 {
            let b = circular_shift(&a, 64, 64, d, 0);
            let flow = estimate_flow(&a, &b, 64, 64, &FlowParams::default()).unwrap();
            let mu = interior_median(&flow.u, 64, 64, 8);
            assert!((mu - d as f64).abs() < 0.5, "shift {d}: median u = {mu}");
        }
    }

    #[test]
    fn exact_reverse_flow_is_all_valid() {
        let mut fwd = FlowField::zeros(16, 16);
        for u in fwd.u.iter_mut() {
            *u = 0.4;
        }
        let mut bwd = FlowField::zeros(16, 16);
        for u in bwd.u.iter_mut() {
            *u = -0.4;
        }
        let masked = consistency_mask(&fwd, &bwd).unwrap();
        assert!(masked.valid.iter().all(|&m| m));
    }

    #[test]
    fn inconsistent_flow_is_all_invalid() {
        let mut fwd = FlowField::zeros(16, 16);
        for u in fwd.u.iter_mut() {
            *u = 5.0;
        }
        let bwd = FlowField::zeros(16, 16);
        let masked = consistency_mask(&fwd, &bwd).unwrap();
        assert!(masked.valid.iter().all(|&m| !m));
    }

    #[test]
    fn occlusion_band_is_mostly_invalidated() {
        // A textured object advances over a retreating textured background;
        // the background strip its leading edge covers between the frames
        // has no consistent forward/backward match. Opposing motions keep
        // the two smoothing layers from cancelling in the composition, and
        // a small alpha keeps the occlusion signal data-driven.
        let (w, h) = (96usize, 96usize);
        let (oy, osz) = (28usize, 40usize);
        let half = 5i64;
        let bg = smooth_grid(w, h, 5, 10);
        let obj = smooth_grid(osz, osz, 9, 10);
        let shift = |img: &[f64], d: i64| -> Vec<f64> {
            let mut out = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let sx = (x as i64 - d).rem_euclid(w as i64) as usize;
                    out[y * w + x] = img[y * w + sx];
                }
            }
            out
        };
        let render = |obj_x: i64, bg_shift: i64| -> Vec<f64> {
            let mut img = shift(&bg, bg_shift);
            for y in 0..osz {
                for x in 0..osz {
                    img[(oy + y) * w + (obj_x + x as i64) as usize] = obj[y * osz + x];
                }
            }
            img
        };
        let ox = 18i64;
        let a = render(ox, 0);
        let b = render(ox + half, -half);
        let params = FlowParams {
            alpha: 0.07,
            warps: 6,
            iterations: 400,
            ..FlowParams::default()
        };
        let fwd = estimate_flow(&a, &b, w, h, &params).unwrap();
        let bwd = estimate_flow(&b, &a, w, h, &params).unwrap();
        let masked = consistency_mask(&fwd, &bwd).unwrap();
        // Occluded band: background right of the object in `a` whose content
        // slides under the advancing leading edge in `b`.
        let band_lo = (ox + osz as i64) as usize;
        let band_hi = band_lo + 2 * half as usize;
        let (mut invalid, mut total) = (0, 0);
        for y in oy + 2..oy + osz - 2 {
            for x in band_lo..band_hi {
                total += 1;
                if !masked.valid[y * w + x] {
                    invalid += 1;
                }
            }
        }
        let band_frac = invalid as f64 / total as f64;
        assert!(
            band_frac > 0.5,
            "only {band_frac} of the occluded band was masked"
        );
        // The invalidation is concentrated: far background stays valid.
        let (mut inv_bg, mut tot_bg) = (0, 0);
        for y in 6..20 {
            for x in 12..84 {
                tot_bg += 1;
                if !masked.valid[y * w + x] {
                    inv_bg += 1;
                }
            }
        }
        let bg_frac = inv_bg as f64 / tot_bg as f64;
        assert!(bg_frac < 0.25, "{bg_frac} of far background was masked");
    }

    #[test]
    fn identity_flow_constraints_pair_every_pixel() {
        let plan = FramePlan::new(32, 16, 16).unwrap();
        assert_eq!(plan.frames(), 2);
        let fwd = FlowField::zeros(4, 4);
        let bwd = FlowField::zeros(4, 4);
        let set = build_constraints(&[(fwd, bwd)], &plan).unwrap();
        assert_eq!(set.len(), 16);
        for (i, c) in set.constraints.iter().enumerate() {
            assert_eq!(c.src_pixel, i as u32);
            assert_eq!(c.weights, [1.0, 0.0, 0.0, 0.0]);
            assert_eq!(c.dst_pixels, [i as u32; 4]);
        }
    }

    #[test]
    fn fractional_flow_weights_are_bilinear_products() {
        let plan = FramePlan::new(32, 16, 16).unwrap();
        let mut fwd = FlowField::zeros(4, 4);
        fwd.valid.iter_mut().for_each(|m| *m = false);
        fwd.valid[5] = true; // pixel (1, 1)
        fwd.u[5] = 0.3;
        fwd.v[5] = 0.6;
        let bwd = FlowField::zeros(4, 4);
        let set = build_constraints(&[(fwd, bwd)], &plan).unwrap();
        assert_eq!(set.len(), 1);
        let c = &set.constraints[0];
        let expect = [0.28, 0.12, 0.42, 0.18];
        for (w, e) in c.weights.iter().zip(expect.iter()) {
            assert!((w - e).abs() < 1e-12);
        }
        // Neighbors: (1,1), (2,1), (1,2), (2,2).
        assert_eq!(c.dst_pixels, [5, 6, 9, 10]);
    }

    #[test]
    fn all_invalid_masks_give_an_empty_legal_set() {
        let plan = FramePlan::new(32, 16, 16).unwrap();
        let mut fwd = FlowField::zeros(4, 4);
        fwd.valid.iter_mut().for_each(|m| *m = false);
        let bwd = FlowField::zeros(4, 4);
        let set = build_constraints(&[(fwd, bwd)], &plan).unwrap();
        assert_eq!(set.len(), 0);
    }

    #[test]
    fn pair_count_must_match_plan() {
        let plan = FramePlan::new(48, 16, 16).unwrap();
        assert_eq!(plan.frames(), 3);
        let pair = (FlowField::zeros(4, 4), FlowField::zeros(4, 4));
        assert!(build_constraints(&[pair], &plan).is_err());
    }

    #[test]
    fn weights_partition_unity_for_random_flows() {
        let plan = FramePlan::new(32, 16, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut fwd = FlowField::zeros(8, 8);
        for i in 0..fwd.len() {
            fwd.u[i] = rng.gen_range(-2.0..2.0);
            fwd.v[i] = rng.gen_range(-2.0..2.0);
        }
        let bwd = FlowField::zeros(8, 8);
        let set = build_constraints(&[(fwd, bwd)], &plan).unwrap();
        assert!(!set.is_empty());
        for c in &set.constraints {
            let sum: f64 = c.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(c.weights.iter().all(|&w| w >= 0.0));
            assert!(c.dst_pixels.iter().all(|&p| (p as usize) < 64));
        }
    }

    #[test]
    fn flow_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csfl");
        let mut flow = FlowField::zeros(6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for i in 0..flow.len() {
            flow.u[i] = (rng.gen_range(-4.0..4.0) as f32) as f64;
            flow.v[i] = (rng.gen_range(-4.0..4.0) as f32) as f64;
            flow.valid[i] = rng.gen_bool(0.7);
        }
        flow.write(&path).unwrap();
        let back = FlowField::read(&path).unwrap();
        assert_eq!(flow, back);
    }
}

//! Full-resolution video recovery: isotropic 3D total-variation
//! minimization subject to per-frame measurement residual balls and a
//! global flow-constraint residual ball, solved by ADMM.
//!
//! Splitting: auxiliary variables for the spatio-temporal gradient field
//! (group shrinkage), the measurement residuals (per-frame l2-ball
//! projection onto radius eps1) and the flow residuals (l2-ball of radius
//! eps2). The x-update solves the normal equations by conjugate gradients
//! with matrix-free operators throughout. The same path hosts the no-flow
//! and frame-wise baselines.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowConstraintSet;
use crate::plan::FramePlan;
use crate::sensing::{DssMatrix, MeasurementStream};
use crate::volume::VideoVolume;

/// `eps2 = 0.02 sqrt(P)` on [0,1]-scaled intensities; `scale` multiplies
/// for other ranges.
pub fn epsilon2_rule(constraint_count: usize, scale: f64) -> f64 {
    0.02 * (constraint_count as f64).sqrt() * scale
}

/// Isotropic 3D total variation with forward differences, replicate
/// boundary, and temporal gradients weighted by `sqrt(beta_t)` inside the
/// per-voxel norm.
pub fn tv3d_weighted(volume: &VideoVolume, beta_t: f64) -> f64 {
    let n = volume.width();
    let h = volume.height();
    let frames = volume.frames();
    let data = volume.data();
    let pixels = n * h;
    let mut total = 0.0;
    for k in 0..frames {
        for y in 0..h {
            for x in 0..n {
                let i = k * pixels + y * n + x;
                let dx = if x + 1 < n { data[i + 1] - data[i] } else { 0.0 };
                let dy = if y + 1 < h { data[i + n] - data[i] } else { 0.0 };
                let dt = if k + 1 < frames {
                    data[i + pixels] - data[i]
                } else {
                    0.0
                };
                total += (dx * dx + dy * dy + beta_t * dt * dt).sqrt();
            }
        }
    }
    total
}

/// [`tv3d_weighted`] with the default unit temporal weight.
pub fn tv3d(volume: &VideoVolume) -> f64 {
    tv3d_weighted(volume, 1.0)
}

/// ADMM and inner-solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub rho_meas: f64,
    pub rho_flow: f64,
    pub rho_tv: f64,
    /// Temporal gradient weight in the TV norm.
    pub beta_t: f64,
    pub outer_iterations: usize,
    pub cg_iterations: usize,
    pub cg_tolerance: f64,
    /// Outer stop: relative primal residual below this ends early.
    pub tolerance: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            rho_meas: 1.0,
            rho_flow: 1.0,
            rho_tv: 0.5,
            beta_t: 1.0,
            outer_iterations: 40,
            cg_iterations: 50,
            cg_tolerance: 1e-6,
            tolerance: 1e-6,
        }
    }
}

/// A reconstruction task: measurements, their frame assignment, flow
/// constraints and solver settings.
pub struct ReconProblem<'a> {
    pub matrix: &'a DssMatrix,
    pub stream: &'a MeasurementStream,
    pub plan: FramePlan,
    pub constraints: FlowConstraintSet,
    /// Per-frame measurement residual bound; `None` derives
    /// `sigma * sqrt(m_k)` from the stream's noise level.
    pub eps_measurement: Option<f64>,
    /// Flow residual bound; `None` applies [`epsilon2_rule`] with unit scale.
    pub eps_flow: Option<f64>,
    pub params: SolverParams,
    /// Warm start, e.g. replicated previews. Zeros when absent.
    pub init: Option<VideoVolume>,
}

/// Per-outer-iteration diagnostics.
#[derive(Debug, Clone, Default)]
pub struct IterateLog {
    pub tv: Vec<f64>,
    pub measurement_residual: Vec<f64>,
    pub flow_residual: Vec<f64>,
    /// Augmented-Lagrangian merit after each outer iteration.
    pub merit: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub volume: VideoVolume,
    pub log: IterateLog,
    pub converged: bool,
    /// Set when any inner CG solve had to fall back to its best iterate.
    pub cg_stalled: bool,
}

/// One contiguous run of measurement rows inside a single cycle.
#[derive(Debug, Clone, Copy)]
struct Segment {
    cycle: usize,
    row_lo: usize,
    row_hi: usize,
    /// Offset of this segment's first value in the frame's value slice.
    offset: usize,
}

/// Matrix-free operators for one reconstruction problem.
pub struct Operators<'a> {
    matrix: Option<&'a DssMatrix>,
    pub n: usize,
    pub frames: usize,
    /// Measurement values per frame.
    values: Vec<Vec<f64>>,
    segments: Vec<Vec<Segment>>,
    constraints: FlowConstraintSet,
    beta_t: f64,
}

impl<'a> Operators<'a> {
    /// Builds operators for `plan`'s frame assignment over the stream.
    pub fn from_problem(
        matrix: &'a DssMatrix,
        stream: &MeasurementStream,
        plan: &FramePlan,
        constraints: FlowConstraintSet,
        beta_t: f64,
    ) -> Result<Self> {
        if !stream.matches_matrix(matrix) {
            return Err(Error::DimensionMismatch(
                "stream descriptor does not match sensing matrix".into(),
            ));
        }
        if plan.total() > stream.len() {
            return Err(Error::DimensionMismatch(format!(
                "plan needs {} measurements, stream has {}",
                plan.total(),
                stream.len()
            )));
        }
        let ranges: Vec<(usize, usize)> = (0..plan.frames())
            .map(|k| plan.measurement_range(k))
            .collect();
        Self::from_ranges(matrix, stream, plan.frames(), &ranges, constraints, beta_t)
    }

    /// Builds operators from explicit per-frame measurement ranges; used by
    /// the frame-wise baseline and by constraint-only problems (empty
    /// ranges).
    pub fn from_ranges(
        matrix: &'a DssMatrix,
        stream: &MeasurementStream,
        frames: usize,
        ranges: &[(usize, usize)],
        constraints: FlowConstraintSet,
        beta_t: f64,
    ) -> Result<Self> {
        if ranges.len() != frames {
            return Err(Error::DimensionMismatch(
                "one measurement range per frame required".into(),
            ));
        }
        let n = matrix.n();
        let w = matrix.window();
        let mut values = Vec::with_capacity(frames);
        let mut segments = Vec::with_capacity(frames);
        for &(lo, hi) in ranges {
            if hi > stream.len() || lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "measurement range [{lo}, {hi}) out of stream bounds"
                )));
            }
            values.push(stream.values()[lo..hi].to_vec());
            let mut segs = Vec::new();
            if hi > lo {
                let mut t = lo;
                while t < hi {
                    let cycle = t / w;
                    let end = ((cycle + 1) * w).min(hi);
                    segs.push(Segment {
                        cycle,
                        row_lo: t - cycle * w,
                        row_hi: end - cycle * w,
                        offset: t - lo,
                    });
                    t = end;
                }
            }
            segments.push(segs);
        }
        for c in &constraints.constraints {
            if c.src_frame as usize >= frames || c.dst_frame as usize >= frames {
                return Err(Error::InvalidParameter(
                    "flow constraint frame index out of range".into(),
                ));
            }
            if c.src_pixel as usize >= n * n || c.dst_pixels.iter().any(|&p| p as usize >= n * n) {
                return Err(Error::InvalidParameter(
                    "flow constraint pixel index out of range".into(),
                ));
            }
        }
        Ok(Self {
            matrix: Some(matrix),
            n,
            frames,
            values,
            segments,
            constraints,
            beta_t,
        })
    }

    /// Operators with no measurements at all (constraint/TV-only systems).
    pub fn constraints_only(
        n: usize,
        frames: usize,
        constraints: FlowConstraintSet,
        beta_t: f64,
    ) -> Self {
        Self {
            matrix: None,
            n,
            frames,
            values: vec![Vec::new(); frames],
            segments: vec![Vec::new(); frames],
            constraints,
            beta_t,
        }
    }

    pub fn pixels(&self) -> usize {
        self.n * self.n
    }

    pub fn total_len(&self) -> usize {
        self.pixels() * self.frames
    }

    pub fn measurement_count(&self, frame: usize) -> usize {
        self.values[frame].len()
    }

    pub fn total_measurements(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn frame_values(&self, frame: usize) -> &[f64] {
        &self.values[frame]
    }

    /// Per-frame measurement operator: `out[k] = A_k x_k`.
    pub fn measure(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let pixels = self.pixels();
        (0..self.frames)
            .into_par_iter()
            .map(|k| {
                let frame = &x[k * pixels..(k + 1) * pixels];
                let mut out = vec![0.0; self.values[k].len()];
                if let Some(m) = self.matrix {
                    for seg in &self.segments[k] {
                        let part = m
                            .apply_rows_batch(seg.cycle, seg.row_lo, seg.row_hi, frame)
                            .expect("segment bounds verified at construction");
                        out[seg.offset..seg.offset + part.len()].copy_from_slice(&part);
                    }
                }
                out
            })
            .collect()
    }

    /// Adjoint of [`Self::measure`]: writes `A_k^T v_k` per frame into `out`.
    pub fn measure_adjoint(&self, v: &[Vec<f64>], out: &mut [f64]) {
        let pixels = self.pixels();
        out.par_chunks_mut(pixels)
            .enumerate()
            .for_each(|(k, frame)| {
                frame.iter_mut().for_each(|o| *o = 0.0);
                if let Some(m) = self.matrix {
                    for seg in &self.segments[k] {
                        let vals = &v[k][seg.offset..seg.offset + (seg.row_hi - seg.row_lo)];
                        m.apply_rows_batch_adjoint(seg.cycle, seg.row_lo, seg.row_hi, vals, frame)
                            .expect("segment bounds verified at construction");
                    }
                }
            });
    }

    /// Forward-difference spatio-temporal gradient; temporal part scaled by
    /// `sqrt(beta_t)`. Replicate boundary (last difference is zero).
    pub fn gradient(&self, x: &[f64], gx: &mut [f64], gy: &mut [f64], gt: &mut [f64]) {
        let n = self.n;
        let pixels = self.pixels();
        let frames = self.frames;
        let bt = self.beta_t.sqrt();
        gx.par_chunks_mut(pixels)
            .zip(gy.par_chunks_mut(pixels))
            .zip(gt.par_chunks_mut(pixels))
            .enumerate()
            .for_each(|(k, ((cx, cy), ct))| {
                for y in 0..n {
                    for xx in 0..n {
                        let j = y * n + xx;
                        let i = k * pixels + j;
                        cx[j] = if xx + 1 < n { x[i + 1] - x[i] } else { 0.0 };
                        cy[j] = if y + 1 < n { x[i + n] - x[i] } else { 0.0 };
                        ct[j] = if k + 1 < frames {
                            bt * (x[i + pixels] - x[i])
                        } else {
                            0.0
                        };
                    }
                }
            });
    }

    /// Adjoint of [`Self::gradient`].
    pub fn gradient_adjoint(&self, gx: &[f64], gy: &[f64], gt: &[f64], out: &mut [f64]) {
        let n = self.n;
        let pixels = self.pixels();
        let frames = self.frames;
        let bt = self.beta_t.sqrt();
        out.par_chunks_mut(pixels)
            .enumerate()
            .for_each(|(k, frame)| {
                for y in 0..n {
                    for xx in 0..n {
                        let j = y * n + xx;
                        let i = k * pixels + j;
                        let mut acc = 0.0;
                        if xx + 1 < n {
                            acc -= gx[i];
                        }
                        if xx > 0 {
                            acc += gx[i - 1];
                        }
                        if y + 1 < n {
                            acc -= gy[i];
                        }
                        if y > 0 {
                            acc += gy[i - n];
                        }
                        if k + 1 < frames {
                            acc -= bt * gt[i];
                        }
                        if k > 0 {
                            acc += bt * gt[i - pixels];
                        }
                        frame[j] = acc;
                    }
                }
            });
    }

    /// Flow constraint residuals: `r_p = x[src] - sum_q w_q x[dst_q]`.
    pub fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let pixels = self.pixels();
        self.constraints
            .constraints
            .iter()
            .map(|c| {
                let src = c.src_frame as usize * pixels + c.src_pixel as usize;
                let base = c.dst_frame as usize * pixels;
                let mut r = x[src];
                for (p, w) in c.dst_pixels.iter().zip(c.weights.iter()) {
                    r -= w * x[base + *p as usize];
                }
                r
            })
            .collect()
    }

    /// Adjoint of [`Self::constrain`]: overwrites `out` with `C^T v`.
    pub fn constrain_adjoint(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let pixels = self.pixels();
        for (c, &val) in self.constraints.constraints.iter().zip(v.iter()) {
            let src = c.src_frame as usize * pixels + c.src_pixel as usize;
            out[src] += val;
            let base = c.dst_frame as usize * pixels;
            for (p, w) in c.dst_pixels.iter().zip(c.weights.iter()) {
                out[base + *p as usize] -= w * val;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Normal operator `M = rho_tv G^T G + rho_m A^T A + rho_f C^T C` applied
/// matrix-free.
struct NormalOperator<'o, 'a> {
    ops: &'o Operators<'a>,
    rho_tv: f64,
    rho_meas: f64,
    rho_flow: f64,
    gx: Vec<f64>,
    gy: Vec<f64>,
    gt: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'o, 'a> NormalOperator<'o, 'a> {
    fn new(ops: &'o Operators<'a>, rho_tv: f64, rho_meas: f64, rho_flow: f64) -> Self {
        let len = ops.total_len();
        Self {
            ops,
            rho_tv,
            rho_meas,
            rho_flow,
            gx: vec![0.0; len],
            gy: vec![0.0; len],
            gt: vec![0.0; len],
            scratch: vec![0.0; len],
        }
    }

    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        self.ops
            .gradient(x, &mut self.gx, &mut self.gy, &mut self.gt);
        self.ops.gradient_adjoint(&self.gx, &self.gy, &self.gt, out);
        for o in out.iter_mut() {
            *o *= self.rho_tv;
        }
        if self.rho_meas > 0.0 && self.ops.total_measurements() > 0 {
            let ax = self.ops.measure(x);
            self.ops.measure_adjoint(&ax, &mut self.scratch);
            for (o, s) in out.iter_mut().zip(self.scratch.iter()) {
                *o += self.rho_meas * s;
            }
        }
        if self.rho_flow > 0.0 && self.ops.constraint_count() > 0 {
            let cx = self.ops.constrain(x);
            self.ops.constrain_adjoint(&cx, &mut self.scratch);
            for (o, s) in out.iter_mut().zip(self.scratch.iter()) {
                *o += self.rho_flow * s;
            }
        }
    }
}

/// Conjugate gradients on the normal equations with warm start; keeps the
/// best iterate seen and reports whether the solve stalled (residual
/// stopped improving or went non-finite).
fn conjugate_gradient(
    op: &mut NormalOperator,
    rhs: &[f64],
    x: &mut Vec<f64>,
    max_iterations: usize,
    tolerance: f64,
) -> bool {
    let len = rhs.len();
    let mut ax = vec![0.0; len];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(ax.iter()).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let rhs_norm = norm(rhs).max(1e-300);
    let mut best = x.clone();
    let mut best_rs = rs;
    let mut stalls = 0;
    let mut stalled = false;

    for _ in 0..max_iterations {
        if rs.sqrt() <= tolerance * rhs_norm {
            break;
        }
        op.apply(&p, &mut ax);
        let pap = dot(&p, &ax);
        if pap <= 0.0 || !pap.is_finite() {
            stalled = rs.sqrt() > tolerance * rhs_norm;
            break;
        }
        let alpha = rs / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            stalled = true;
            break;
        }
        if rs_new < best_rs {
            best_rs = rs_new;
            best.copy_from_slice(x);
            stalls = 0;
        } else {
            stalls += 1;
            if stalls >= 10 {
                stalled = true;
                break;
            }
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..len {
            p[i] = r[i] + beta * p[i];
        }
    }
    if stalled {
        x.copy_from_slice(&best);
    }
    stalled
}

fn project_ball(values: &mut [f64], radius: f64) {
    let len = norm(values);
    if len > radius {
        let s = if radius == 0.0 { 0.0 } else { radius / len };
        for v in values.iter_mut() {
            *v *= s;
        }
    }
}

/// Core ADMM loop shared by all reconstruction arms.
pub fn admm_solve(
    ops: &Operators,
    eps_measurement: &[f64],
    eps_flow: f64,
    params: &SolverParams,
    init: Option<&[f64]>,
) -> Result<ReconResult> {
    let len = ops.total_len();
    let frames = ops.frames;
    if eps_measurement.len() != frames {
        return Err(Error::DimensionMismatch(
            "one eps1 bound per frame required".into(),
        ));
    }
    let mut x = match init {
        Some(v) if v.len() == len => v.to_vec(),
        Some(_) => {
            return Err(Error::DimensionMismatch("warm start has wrong size".into()));
        }
        None => vec![0.0; len],
    };

    let (rho_tv, rho_m, rho_f) = (params.rho_tv, params.rho_meas, params.rho_flow);
    let has_meas = ops.total_measurements() > 0;
    let has_flow = ops.constraint_count() > 0;

    let mut op = NormalOperator::new(ops, rho_tv, rho_m, rho_f);

    // Splitting variables and scaled duals.
    let mut g = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut ug = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut r: Vec<Vec<f64>> = (0..frames)
        .map(|k| vec![0.0; ops.measurement_count(k)])
        .collect();
    let mut ur = r.clone();
    let mut q = vec![0.0; ops.constraint_count()];
    let mut uq = q.clone();

    // Start the gradient auxiliary at the warm start's gradient.
    let (mut gx, mut gy, mut gt) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    ops.gradient(&x, &mut gx, &mut gy, &mut gt);
    g.0.copy_from_slice(&gx);
    g.1.copy_from_slice(&gy);
    g.2.copy_from_slice(&gt);

    let mut log = IterateLog::default();
    let mut rhs = vec![0.0; len];
    let mut scratch = vec![0.0; len];
    let mut converged = false;
    let mut cg_stalled = false;

    for _ in 0..params.outer_iterations {
        // x-update rhs.
        let tx: Vec<f64> = g.0.iter().zip(ug.0.iter()).map(|(a, b)| a - b).collect();
        let ty: Vec<f64> = g.1.iter().zip(ug.1.iter()).map(|(a, b)| a - b).collect();
        let tt: Vec<f64> = g.2.iter().zip(ug.2.iter()).map(|(a, b)| a - b).collect();
        ops.gradient_adjoint(&tx, &ty, &tt, &mut rhs);
        for v in rhs.iter_mut() {
            *v *= rho_tv;
        }
        if has_meas {
            let targets: Vec<Vec<f64>> = (0..frames)
                .map(|k| {
                    ops.frame_values(k)
                        .iter()
                        .zip(r[k].iter())
                        .zip(ur[k].iter())
                        .map(|((y, rr), uu)| y + rr - uu)
                        .collect()
                })
                .collect();
            ops.measure_adjoint(&targets, &mut scratch);
            for (o, s) in rhs.iter_mut().zip(scratch.iter()) {
                *o += rho_m * s;
            }
        }
        if has_flow {
            let target: Vec<f64> = q.iter().zip(uq.iter()).map(|(a, b)| a - b).collect();
            ops.constrain_adjoint(&target, &mut scratch);
            for (o, s) in rhs.iter_mut().zip(scratch.iter()) {
                *o += rho_f * s;
            }
        }

        cg_stalled |= conjugate_gradient(
            &mut op,
            &rhs,
            &mut x,
            params.cg_iterations,
            params.cg_tolerance,
        );

        // g-update: per-voxel group shrinkage with threshold 1/rho_tv,
        // dual update folded in.
        ops.gradient(&x, &mut gx, &mut gy, &mut gt);
        let kappa = 1.0 / rho_tv;
        let mut primal_sq = 0.0;
        for i in 0..len {
            let (vx, vy, vt) = (gx[i] + ug.0[i], gy[i] + ug.1[i], gt[i] + ug.2[i]);
            let mag = (vx * vx + vy * vy + vt * vt).sqrt();
            let f = if mag > kappa { 1.0 - kappa / mag } else { 0.0 };
            g.0[i] = f * vx;
            g.1[i] = f * vy;
            g.2[i] = f * vt;
            ug.0[i] += gx[i] - g.0[i];
            ug.1[i] += gy[i] - g.1[i];
            ug.2[i] += gt[i] - g.2[i];
            let (ex, ey, et) = (gx[i] - g.0[i], gy[i] - g.1[i], gt[i] - g.2[i]);
            primal_sq += ex * ex + ey * ey + et * et;
        }

        // r-update: per-frame l2-ball projection of the residual.
        let mut meas_res_sq = 0.0;
        let ax = if has_meas { ops.measure(&x) } else { Vec::new() };
        if has_meas {
            for k in 0..frames {
                let y = ops.frame_values(k);
                for i in 0..r[k].len() {
                    r[k][i] = ax[k][i] - y[i] + ur[k][i];
                }
                project_ball(&mut r[k], eps_measurement[k]);
                for i in 0..r[k].len() {
                    let res = ax[k][i] - y[i];
                    meas_res_sq += res * res;
                    ur[k][i] += res - r[k][i];
                }
            }
        }

        // q-update: global l2-ball projection of the flow residuals.
        let mut flow_res_sq = 0.0;
        let cx = if has_flow { ops.constrain(&x) } else { Vec::new() };
        if has_flow {
            for i in 0..q.len() {
                q[i] = cx[i] + uq[i];
            }
            project_ball(&mut q, eps_flow);
            for i in 0..q.len() {
                flow_res_sq += cx[i] * cx[i];
                uq[i] += cx[i] - q[i];
            }
        }

        // Diagnostics: TV of the iterate, residual norms, and the merit
        // driving the constrained program: objective plus quadratic
        // penalties on ball-constraint violations. Dual variables are kept
        // out so the merit is anchored to the iterate, not to the dual
        // ramp-up.
        let tv: f64 = (0..len)
            .map(|i| (gx[i] * gx[i] + gy[i] * gy[i] + gt[i] * gt[i]).sqrt())
            .sum();
        let mut merit = tv;
        if has_meas {
            for k in 0..frames {
                let y = ops.frame_values(k);
                let res: f64 = ax[k]
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let excess = (res - eps_measurement[k]).max(0.0);
                merit += rho_m / 2.0 * excess * excess;
            }
        }
        if has_flow {
            let excess = (norm(&cx) - eps_flow).max(0.0);
            merit += rho_f / 2.0 * excess * excess;
        }
        log.tv.push(tv);
        log.measurement_residual.push(meas_res_sq.sqrt());
        log.flow_residual.push(flow_res_sq.sqrt());
        log.merit.push(merit);

        // Primal residual across all splittings, relative.
        let mut total_primal = primal_sq;
        if has_meas {
            for k in 0..frames {
                let y = ops.frame_values(k);
                for i in 0..r[k].len() {
                    let e = ax[k][i] - y[i] - r[k][i];
                    total_primal += e * e;
                }
            }
        }
        if has_flow {
            for (c, qq) in cx.iter().zip(q.iter()) {
                total_primal += (c - qq) * (c - qq);
            }
        }
        let scale = norm(&x).max(1.0);
        if total_primal.sqrt() / scale < params.tolerance {
            converged = true;
            break;
        }
    }

    let mut volume = VideoVolume::zeros(ops.n, ops.n, frames);
    volume.data_mut().copy_from_slice(&x);
    Ok(ReconResult {
        volume,
        log,
        converged,
        cg_stalled,
    })
}

fn eps_measurement_vector(problem: &ReconProblem, ops: &Operators) -> Vec<f64> {
    (0..ops.frames)
        .map(|k| match problem.eps_measurement {
            Some(e) => e,
            None => problem.stream.sigma * (ops.measurement_count(k) as f64).sqrt(),
        })
        .collect()
}

/// Flow-constrained recovery: 3D TV plus measurement and flow residual
/// balls.
pub fn reconstruct(problem: &ReconProblem) -> Result<ReconResult> {
    let ops = Operators::from_problem(
        problem.matrix,
        problem.stream,
        &problem.plan,
        problem.constraints.clone(),
        problem.params.beta_t,
    )?;
    let eps1 = eps_measurement_vector(problem, &ops);
    let eps2 = problem
        .eps_flow
        .unwrap_or_else(|| epsilon2_rule(problem.constraints.len(), 1.0));
    admm_solve(
        &ops,
        &eps1,
        eps2,
        &problem.params,
        problem.init.as_ref().map(|v| v.data()),
    )
}

/// 3D-TV-only baseline: the same solver path with the constraint set
/// stripped.
pub fn reconstruct_baseline_no_flow(problem: &ReconProblem) -> Result<ReconResult> {
    let ops = Operators::from_problem(
        problem.matrix,
        problem.stream,
        &problem.plan,
        FlowConstraintSet::empty(),
        problem.params.beta_t,
    )?;
    let eps1 = eps_measurement_vector(problem, &ops);
    admm_solve(
        &ops,
        &eps1,
        0.0,
        &problem.params,
        problem.init.as_ref().map(|v| v.data()),
    )
}

/// Frame-wise baseline: each frame recovered independently with 2D TV from
/// its own measurements.
pub fn reconstruct_framewise(problem: &ReconProblem) -> Result<ReconResult> {
    let plan = &problem.plan;
    let frames = plan.frames();
    let pixels = problem.matrix.pixels();
    let results: Vec<ReconResult> = (0..frames)
        .into_par_iter()
        .map(|k| -> Result<ReconResult> {
            let ops = Operators::from_ranges(
                problem.matrix,
                problem.stream,
                1,
                &[plan.measurement_range(k)],
                FlowConstraintSet::empty(),
                problem.params.beta_t,
            )?;
            let eps1 = match problem.eps_measurement {
                Some(e) => vec![e],
                None => vec![problem.stream.sigma * (ops.measurement_count(0) as f64).sqrt()],
            };
            let init = problem.init.as_ref().map(|v| v.frame(k));
            admm_solve(&ops, &eps1, 0.0, &problem.params, init)
        })
        .collect::<Result<_>>()?;

    let mut volume = VideoVolume::zeros(problem.matrix.n(), problem.matrix.n(), frames);
    let mut log = IterateLog::default();
    let mut cg_stalled = false;
    let mut converged = true;
    for (k, res) in results.iter().enumerate() {
        volume.data_mut()[k * pixels..(k + 1) * pixels].copy_from_slice(res.volume.data());
        cg_stalled |= res.cg_stalled;
        converged &= res.converged;
        for i in 0..res.log.tv.len() {
            if log.tv.len() <= i {
                log.tv.push(0.0);
                log.measurement_residual.push(0.0);
                log.flow_residual.push(0.0);
                log.merit.push(0.0);
            }
            log.tv[i] += res.log.tv[i];
            log.measurement_residual[i] = (log.measurement_residual[i].powi(2)
                + res.log.measurement_residual[i].powi(2))
            .sqrt();
            log.flow_residual[i] += res.log.flow_residual[i];
            log.merit[i] += res.log.merit[i];
        }
    }
    Ok(ReconResult {
        volume,
        log,
        converged,
        cg_stalled,
    })
}

/// Per-frame measurement residuals `||A_k x_k - y_k||_2` of a candidate
/// volume; diagnostic for feasibility checks.
pub fn per_frame_residuals(
    matrix: &DssMatrix,
    stream: &MeasurementStream,
    plan: &FramePlan,
    volume: &VideoVolume,
) -> Result<Vec<f64>> {
    let ops = Operators::from_problem(matrix, stream, plan, FlowConstraintSet::empty(), 1.0)?;
    let ax = ops.measure(volume.data());
    Ok((0..ops.frames)
        .map(|k| {
            let y = ops.frame_values(k);
            ax[k]
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

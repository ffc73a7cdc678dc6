//! End-to-end orchestration: simulate, preview, flow, reconstruct, and the
//! tradeoff/sweep experiment runners, each emitting files or CSV. Every
//! command is deterministic given its configuration, so reruns produce
//! byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::flow::{
    build_constraints, consistency_mask, estimate_flow, upsample_bicubic, FlowConstraintSet,
    FlowField,
};
use crate::plan::FramePlan;
use crate::preview::{preview_sequence, PreviewVideo};
use crate::scene::{synthesize_sampled, Scene};
use crate::sensing::{
    acquire, decompose_errors, DssMatrix, MeasurementStream, NoiseModel, SceneSource,
};
use crate::solver::{
    epsilon2_rule, reconstruct, reconstruct_baseline_no_flow, reconstruct_framewise, ReconProblem,
    ReconResult,
};
use crate::volume::{nyquist_binning_baseline, nyquist_split, rsnr, VideoVolume};

/// Reconstruction arms selectable from the pipeline and sweep commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// Flow-constrained 3D TV.
    FlowConstrained,
    /// 3D TV without flow constraints.
    NoFlow,
    /// Independent per-frame 2D TV.
    Framewise,
    /// Non-compressive binning camera at matched compression.
    Nyquist,
}

impl Arm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "muvi" | "flow" => Ok(Self::FlowConstrained),
            "noflow" => Ok(Self::NoFlow),
            "framewise" => Ok(Self::Framewise),
            "nyquist" => Ok(Self::Nyquist),
            other => Err(Error::InvalidParameter(format!(
                "unknown arm '{other}' (expected muvi|noflow|framewise|nyquist)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FlowConstrained => "muvi",
            Self::NoFlow => "noflow",
            Self::Framewise => "framewise",
            Self::Nyquist => "nyquist",
        }
    }
}

pub fn measurement_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("measurements.csms")
}

pub fn ground_truth_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("ground_truth.csmv")
}

pub fn preview_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("preview.csmv")
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(cfg.output_dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Components shared by the pipeline stages.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub matrix: DssMatrix,
    pub plan: FramePlan,
    pub scene: Scene,
}

impl Experiment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let matrix = DssMatrix::build(
            cfg.scene.n,
            cfg.sensing.n_l,
            cfg.cycles(),
            cfg.sensing.scale,
            cfg.sensing.matrix_seed,
        )?;
        let plan = FramePlan::new(
            cfg.scene.duration_measurements,
            cfg.window(),
            cfg.stride,
        )?;
        let scene = Scene::new(cfg.scene.clone())?;
        Ok(Self {
            cfg: cfg.clone(),
            matrix,
            plan,
            scene,
        })
    }

    fn noise(&self) -> NoiseModel {
        if self.cfg.sensing.noise_sigma > 0.0 {
            NoiseModel::Sigma(self.cfg.sensing.noise_sigma)
        } else if self.cfg.sensing.noise_snr_db.is_finite() {
            NoiseModel::TargetSnrDb(self.cfg.sensing.noise_snr_db)
        } else {
            NoiseModel::None
        }
    }

    /// Held source volume when hold mode is configured.
    fn held_volume(&self) -> Result<Option<VideoVolume>> {
        if self.cfg.sensing.hold == 0 {
            Ok(None)
        } else {
            Ok(Some(synthesize_sampled(
                &self.cfg.scene,
                self.cfg.scene.duration_measurements,
                self.cfg.sensing.hold,
            )?))
        }
    }

    pub fn acquire_stream(&self) -> Result<MeasurementStream> {
        let held = self.held_volume()?;
        let source = match &held {
            Some(vol) => SceneSource::Volume {
                volume: vol,
                hold: self.cfg.sensing.hold,
            },
            None => SceneSource::Live(&self.scene),
        };
        acquire(
            &self.matrix,
            source,
            self.cfg.scene.duration_measurements,
            self.noise(),
            self.cfg.sensing.noise_seed,
        )
    }

    /// Ground truth for RSNR: the true frame at each plan window center.
    pub fn ground_truth(&self) -> Result<VideoVolume> {
        let n = self.cfg.scene.n;
        let held = self.held_volume()?;
        let mut vol = VideoVolume::zeros(n, n, self.plan.frames());
        for k in 0..self.plan.frames() {
            let t = self.plan.frame_center(k);
            let frame = match &held {
                Some(v) => v.frame(t / self.cfg.sensing.hold).to_vec(),
                None => self.scene.render_frame(t),
            };
            vol.frame_mut(k).copy_from_slice(&frame);
        }
        vol.frame_period = self.plan.stride() as f64 / self.cfg.sensing.rate;
        Ok(vol)
    }
}

/// Simulates acquisition and writes the measurement and ground-truth files.
/// Returns the achieved measurement SNR in dB when noise was added.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Option<f64>> {
    ensure_output_dir(cfg)?;
    let exp = Experiment::from_config(cfg)?;
    let stream = exp.acquire_stream()?;
    stream.write(&measurement_path(cfg))?;
    let mut truth = exp.ground_truth()?;
    truth.clamp_unit();
    truth.write(&ground_truth_path(cfg))?;
    Ok(stream.achieved_snr_db)
}

fn read_stream_checked(cfg: &ExperimentConfig, exp: &Experiment) -> Result<MeasurementStream> {
    let path = measurement_path(cfg);
    let stream = MeasurementStream::read(&path)?;
    if !stream.matches_matrix(&exp.matrix) {
        return Err(Error::Format {
            path,
            msg: "measurement file does not match the configured sensing matrix".into(),
        });
    }
    Ok(stream)
}

/// Computes the preview sequence from the measurement file and exports it
/// as a raw volume plus a PGM sequence (the offline viewfinder).
pub fn cmd_preview(cfg: &ExperimentConfig) -> Result<PreviewVideo> {
    ensure_output_dir(cfg)?;
    let exp = Experiment::from_config(cfg)?;
    let stream = read_stream_checked(cfg, &exp)?;
    let previews = preview_sequence(&exp.matrix, &stream, &exp.plan)?;
    previews.to_volume().write(&preview_path(cfg))?;
    previews
        .to_volume()
        .write_pgm_sequence(&cfg.output_dir.join("preview_pgm"), "preview")?;
    Ok(previews)
}

/// Bicubic-upsampled preview frames at full resolution.
fn upsampled_previews(cfg: &ExperimentConfig, previews: &PreviewVideo) -> Result<Vec<Vec<f64>>> {
    (0..previews.frames())
        .map(|k| upsample_bicubic(previews.frame(k), previews.n_l(), cfg.scene.n))
        .collect()
}

/// Forward/backward flow between consecutive upsampled previews, with the
/// consistency masks applied.
pub fn flow_pairs(
    cfg: &ExperimentConfig,
    upsampled: &[Vec<f64>],
) -> Result<Vec<(FlowField, FlowField)>> {
    let n = cfg.scene.n;
    (0..upsampled.len().saturating_sub(1))
        .into_par_iter()
        .map(|k| {
            let fwd = estimate_flow(&upsampled[k], &upsampled[k + 1], n, n, &cfg.flow)?;
            let bwd = estimate_flow(&upsampled[k + 1], &upsampled[k], n, n, &cfg.flow)?;
            let fwd_masked = consistency_mask(&fwd, &bwd)?;
            let bwd_masked = consistency_mask(&bwd, &fwd)?;
            Ok((fwd_masked, bwd_masked))
        })
        .collect()
}

/// Estimates flows from the preview file and writes one CSFL file per
/// consecutive frame pair. Returns the constraint count.
pub fn cmd_flow(cfg: &ExperimentConfig) -> Result<usize> {
    ensure_output_dir(cfg)?;
    let exp = Experiment::from_config(cfg)?;
    let previews_vol = VideoVolume::read(&preview_path(cfg))?;
    if previews_vol.width() != cfg.sensing.n_l || previews_vol.frames() != exp.plan.frames() {
        return Err(Error::Format {
            path: preview_path(cfg),
            msg: "preview file does not match the configured plan".into(),
        });
    }
    let upsampled: Vec<Vec<f64>> = (0..previews_vol.frames())
        .map(|k| upsample_bicubic(previews_vol.frame(k), cfg.sensing.n_l, cfg.scene.n))
        .collect::<Result<_>>()?;
    let pairs = flow_pairs(cfg, &upsampled)?;
    for (k, (fwd, _)) in pairs.iter().enumerate() {
        fwd.write(&cfg.output_dir.join(format!("flow_{k:04}.csfl")))?;
    }
    let constraints = build_constraints(&pairs, &exp.plan)?;
    Ok(constraints.len())
}

/// Full pipeline state ready for reconstruction.
struct Prepared {
    stream: MeasurementStream,
    constraints: FlowConstraintSet,
    init: VideoVolume,
}

fn prepare(cfg: &ExperimentConfig, exp: &Experiment, stream: MeasurementStream) -> Result<Prepared> {
    let previews = preview_sequence(&exp.matrix, &stream, &exp.plan)?;
    let upsampled = upsampled_previews(cfg, &previews)?;
    let pairs = flow_pairs(cfg, &upsampled)?;
    let constraints = build_constraints(&pairs, &exp.plan)?;
    let n = cfg.scene.n;
    let mut init = VideoVolume::zeros(n, n, exp.plan.frames());
    for (k, up) in upsampled.iter().enumerate() {
        init.frame_mut(k).copy_from_slice(up);
    }
    Ok(Prepared {
        stream,
        constraints,
        init,
    })
}

fn run_arm(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    prepared: &Prepared,
    arm: Arm,
    truth: &VideoVolume,
) -> Result<(ReconResult, f64)> {
    let eps1 = if cfg.eps1 >= 0.0 { Some(cfg.eps1) } else { None };
    let problem = ReconProblem {
        matrix: &exp.matrix,
        stream: &prepared.stream,
        plan: exp.plan,
        constraints: prepared.constraints.clone(),
        eps_measurement: eps1,
        eps_flow: Some(epsilon2_rule(prepared.constraints.len(), cfg.eps2_scale)),
        params: cfg.solver,
        init: Some(prepared.init.clone()),
    };
    let result = match arm {
        Arm::FlowConstrained => reconstruct(&problem)?,
        Arm::NoFlow => reconstruct_baseline_no_flow(&problem)?,
        Arm::Framewise => reconstruct_framewise(&problem)?,
        Arm::Nyquist => {
            // Matched compression: pixels per frame over measurements per
            // recovered frame.
            let compression =
                (exp.matrix.pixels() as f64 / exp.plan.stride() as f64).round() as usize;
            let (ratio, split) = nyquist_split(compression.max(1));
            let volume = nyquist_binning_baseline(truth, ratio, split)?;
            ReconResult {
                volume,
                log: Default::default(),
                converged: true,
                cg_stalled: false,
            }
        }
    };
    let snr = rsnr(truth, &result.volume)?;
    Ok((result, snr))
}

fn iterate_log_csv(result: &ReconResult) -> String {
    let mut csv = String::from("# schema: spcvideo.iterates v1\n");
    csv.push_str("iteration,tv,meas_residual,flow_residual\n");
    for i in 0..result.log.tv.len() {
        let _ = writeln!(
            csv,
            "{i},{:.9e},{:.9e},{:.9e}",
            result.log.tv[i], result.log.measurement_residual[i], result.log.flow_residual[i]
        );
    }
    csv
}

/// Runs preview, flow and the requested reconstruction arms end to end;
/// writes recovered volumes, per-arm iterate logs, and a metrics CSV with
/// the RSNR of each arm against the ground truth. Returns (arm, RSNR)
/// pairs in the requested order.
pub fn cmd_pipeline(cfg: &ExperimentConfig, arms: &[Arm]) -> Result<Vec<(Arm, f64)>> {
    ensure_output_dir(cfg)?;
    let exp = Experiment::from_config(cfg)?;
    let stream = read_stream_checked(cfg, &exp)?;
    let truth = VideoVolume::read(&ground_truth_path(cfg))?;
    if truth.frames() != exp.plan.frames() || truth.width() != cfg.scene.n {
        return Err(Error::Format {
            path: ground_truth_path(cfg),
            msg: "ground-truth file does not match the configured plan".into(),
        });
    }
    let prepared = prepare(cfg, &exp, stream)?;

    let mut metrics = String::from("# schema: spcvideo.metrics v1\narm,rsnr_db,constraints\n");
    let mut out = Vec::new();
    for &arm in arms {
        let (result, snr) = run_arm(cfg, &exp, &prepared, arm, &truth)?;
        let mut vol = result.volume.clone();
        vol.clamp_unit();
        vol.write(&cfg.output_dir.join(format!("recon_{}.csmv", arm.name())))?;
        if arm != Arm::Nyquist {
            write_text(
                &cfg.output_dir.join(format!("iterates_{}.csv", arm.name())),
                &iterate_log_csv(&result),
            )?;
        }
        let _ = writeln!(
            metrics,
            "{},{:.6},{}",
            arm.name(),
            snr,
            prepared.constraints.len()
        );
        out.push((arm, snr));
    }
    write_text(&cfg.output_dir.join("metrics.csv"), &metrics)?;
    Ok(out)
}

/// Reconstructs a single arm from the measurement file.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, arm: Arm) -> Result<f64> {
    Ok(cmd_pipeline(cfg, &[arm])?[0].1)
}

/// One cell of the window/speed tradeoff grid.
#[derive(Debug, Clone, Copy)]
pub struct TradeoffCell {
    pub window: usize,
    pub n_l: usize,
    pub speed: f64,
    pub preview_rsnr_db: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub measurement: f64,
}

/// Acquires one window per (W, speed) cell on the configured scene and
/// reports the preview RSNR plus the error decomposition. Windows must be
/// powers of four.
pub fn cmd_tradeoff(
    cfg: &ExperimentConfig,
    windows: &[usize],
    speeds: &[f64],
) -> Result<Vec<TradeoffCell>> {
    if windows.is_empty() || speeds.is_empty() {
        return Err(Error::InvalidParameter(
            "tradeoff needs at least one window and one speed".into(),
        ));
    }
    for &w in windows {
        if !crate::plan::is_power_of_four(w) {
            return Err(Error::InvalidParameter(format!(
                "window {w} is not a power of four"
            )));
        }
        let n_l = (w as f64).sqrt() as usize;
        if n_l > cfg.scene.n {
            return Err(Error::InvalidParameter(format!(
                "window {w} exceeds the scene resolution"
            )));
        }
    }
    ensure_output_dir(cfg)?;

    let cells: Vec<TradeoffCell> = speeds
        .iter()
        .flat_map(|&speed| windows.iter().map(move |&w| (w, speed)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(w, speed)| -> Result<TradeoffCell> {
            let n_l = (w as f64).sqrt() as usize;
            let spec = crate::scene::SceneSpec {
                speed,
                ..cfg.scene.clone()
            };
            let scene = Scene::new(spec)?;
            let matrix = DssMatrix::build(
                cfg.scene.n,
                n_l,
                1,
                cfg.sensing.scale.min((cfg.scene.n / n_l) * (cfg.scene.n / n_l)),
                cfg.sensing.matrix_seed,
            )?;
            let noise = if cfg.sensing.noise_sigma > 0.0 {
                NoiseModel::Sigma(cfg.sensing.noise_sigma)
            } else if cfg.sensing.noise_snr_db.is_finite() {
                NoiseModel::TargetSnrDb(cfg.sensing.noise_snr_db)
            } else {
                NoiseModel::None
            };
            let stream = acquire(
                &matrix,
                SceneSource::Live(&scene),
                w,
                noise,
                cfg.sensing.noise_seed,
            )?;
            let d = decompose_errors(&matrix, &stream, SceneSource::Live(&scene), 0)?;
            Ok(TradeoffCell {
                window: w,
                n_l,
                speed,
                preview_rsnr_db: d.preview_snr_db,
                spatial: d.spatial,
                temporal: d.temporal,
                measurement: d.measurement,
            })
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from(
        "# schema: spcvideo.tradeoff v1\nw,n_l,speed,preview_rsnr_db,spatial_err,temporal_err,measurement_err\n",
    );
    for c in &cells {
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.9e},{:.9e},{:.9e}",
            c.window, c.n_l, c.speed, c.preview_rsnr_db, c.spatial, c.temporal, c.measurement
        );
    }
    write_text(&cfg.output_dir.join("tradeoff.csv"), &csv)?;
    Ok(cells)
}

/// Sweep axis for [`cmd_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Values are measurement SNRs in dB; infinity means noiseless.
    Noise,
    /// Values are compression ratios `N / stride`.
    Compression,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Self::Noise),
            "compression" => Ok(Self::Compression),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep axis '{other}' (expected noise|compression)"
            ))),
        }
    }
}

/// One sweep result row.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub arm: Arm,
    pub rsnr_db: f64,
}

/// Runs the four arms across the axis values, reusing one scene. Rows are
/// emitted sorted by (value order given, arm order fixed) so output is
/// deterministic.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    ensure_output_dir(cfg)?;
    let arms = [
        Arm::FlowConstrained,
        Arm::NoFlow,
        Arm::Framewise,
        Arm::Nyquist,
    ];
    let mut rows = Vec::new();
    for &value in values {
        let mut case = cfg.clone();
        match axis {
            SweepAxis::Noise => {
                case.sensing.noise_sigma = 0.0;
                case.sensing.noise_snr_db = value;
            }
            SweepAxis::Compression => {
                if value <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "compression values must be positive".into(),
                    ));
                }
                let stride = ((cfg.scene.n * cfg.scene.n) as f64 / value).round() as usize;
                if stride == 0 || stride > case.window() {
                    return Err(Error::InvalidParameter(format!(
                        "compression {value} maps to stride {stride}, outside [1, W]"
                    )));
                }
                case.stride = stride;
            }
        }
        let exp = Experiment::from_config(&case)?;
        let stream = exp.acquire_stream()?;
        let truth = exp.ground_truth()?;
        let prepared = prepare(&case, &exp, stream)?;
        for &arm in &arms {
            let (_, snr) = run_arm(&case, &exp, &prepared, arm, &truth)?;
            rows.push(SweepRow {
                value,
                arm,
                rsnr_db: snr,
            });
        }
    }

    let axis_name = match axis {
        SweepAxis::Noise => "noise_snr_db",
        SweepAxis::Compression => "compression",
    };
    let mut csv = format!("# schema: spcvideo.sweep v1\n{axis_name},arm,rsnr_db\n");
    for row in &rows {
        let _ = writeln!(csv, "{},{},{:.6}", row.value, row.arm.name(), row.rsnr_db);
    }
    write_text(&cfg.output_dir.join("sweep.csv"), &csv)?;
    Ok(rows)
}

/// Header summary of any of the toolkit's binary files, keyed by magic.
pub fn describe_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 4 {
        return Err(Error::format(path, "file too short for a magic number"));
    }
    match &bytes[..4] {
        b"CSMV" => {
            let vol = VideoVolume::read(path)?;
            Ok(format!(
                "raw volume: {}x{} pixels, {} frames",
                vol.width(),
                vol.height(),
                vol.frames()
            ))
        }
        b"CSMS" => {
            let s = MeasurementStream::read(path)?;
            Ok(format!(
                "measurement stream: {} samples, n={}, n_l={}, W={}, s={}, cycles={}, sigma={:.6e}, matrix_seed={}, noise_seed={}, scene_hash={:016x}",
                s.len(),
                s.n,
                s.n_l,
                s.w,
                s.scale,
                s.cycles,
                s.sigma,
                s.matrix_seed,
                s.noise_seed,
                s.scene_hash
            ))
        }
        b"CSFL" => {
            let f = FlowField::read(path)?;
            let valid = f.valid.iter().filter(|&&m| m).count();
            Ok(format!(
                "flow field: {}x{}, {} of {} pixels valid",
                f.width,
                f.height,
                valid,
                f.len()
            ))
        }
        _ => Err(Error::format(path, "unrecognized magic number")),
    }
}

use spcvideo::config::ExperimentConfig;
use spcvideo::flow::{build_constraints, upsample_bicubic, FlowConstraint, FlowConstraintSet};
use spcvideo::pipeline::{flow_pairs, Experiment};
use spcvideo::preview::preview_sequence;
use spcvideo::solver::{epsilon2_rule, reconstruct, reconstruct_baseline_no_flow, ReconProblem};
use spcvideo::volume::{rsnr, VideoVolume};

fn main() {
    let speed = 16.0;
    let mut cfg = ExperimentConfig::default();
    cfg.scene.n = 128;
    cfg.scene.duration_measurements = 65536;
    cfg.scene.speed = speed;
    cfg.scene.speed_window = 4096;
    cfg.scene.foreground_size = 36;
    cfg.sensing.n_l = 64;
    cfg.sensing.noise_snr_db = 60.0;
    cfg.stride = 1024;
    cfg.solver.cg_iterations = 25;

    let n = cfg.scene.n;
    let exp = Experiment::from_config(&cfg).unwrap();
    let stream = exp.acquire_stream().unwrap();
    let truth = exp.ground_truth().unwrap();
    let previews = preview_sequence(&exp.matrix, &stream, &exp.plan).unwrap();
    let upsampled: Vec<Vec<f64>> = (0..previews.frames())
        .map(|k| upsample_bicubic(previews.frame(k), previews.n_l(), n).unwrap())
        .collect();
    let mut init = VideoVolume::zeros(n, n, exp.plan.frames());
    for (k, up) in upsampled.iter().enumerate() {
        init.frame_mut(k).copy_from_slice(up);
    }
    println!("warm start RSNR: {:.2} dB", rsnr(&truth, &init).unwrap());

    // Flow accuracy vs parameters.
    let bg = exp.scene.background();
    let mid = exp.plan.frames() / 2;
    let frame_mid = truth.frame(mid);
    let _ = (bg, mid, frame_mid);

    // Oracle constraints (exact motion, occlusion-aware).
    let shift_px = (speed / 4.0).round() as i64;
    let mut oracle = FlowConstraintSet::empty();
    for k in 0..exp.plan.frames() - 1 {
        let a = truth.frame(k);
        let b = truth.frame(k + 1);
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                let on_cross = (a[i] - bg[i]).abs() > 0.02;
                let tx = if on_cross { x as i64 + shift_px } else { x as i64 };
                if tx < 0 || tx >= n as i64 {
                    continue;
                }
                let j = y * n + tx as usize;
                if (a[i] - b[j]).abs() > 0.02 {
                    continue;
                }
                oracle.constraints.push(FlowConstraint {
                    src_frame: k as u32,
                    src_pixel: i as u32,
                    dst_frame: k as u32 + 1,
                    dst_pixels: [j as u32; 4],
                    weights: [1.0, 0.0, 0.0, 0.0],
                });
            }
        }
    }

    // Estimated constraints with the sharp flow setting.
    let mut sharp_cfg = cfg.clone();
    sharp_cfg.flow.alpha = 0.04;
    sharp_cfg.flow.iterations = 400;
    sharp_cfg.flow.warps = 8;
    let pairs = flow_pairs(&sharp_cfg, &upsampled).unwrap();
    let est = build_constraints(&pairs, &exp.plan).unwrap();

    // Error anatomy of the no-flow arm.
    {
        let mut params = cfg.solver;
        params.outer_iterations = 60;
        let problem = ReconProblem {
            matrix: &exp.matrix,
            stream: &stream,
            plan: exp.plan,
            constraints: FlowConstraintSet::empty(),
            eps_measurement: Some(0.0),
            eps_flow: None,
            params,
            init: Some(init.clone()),
        };
        let noflow = reconstruct_baseline_no_flow(&problem).unwrap();
        // Block-boundary vs interior, cross vs background error split.
        let block = n / exp.matrix.n_l();
        let mut on_edge = 0.0;
        let mut interior = 0.0;
        let mut cross = 0.0;
        let mut bgsum = 0.0;
        let mid_t = truth.frame(mid);
        for k in 0..truth.frames() {
            let t_f = truth.frame(k);
            let r_f = noflow.volume.frame(k);
            for y in 0..n {
                for x in 0..n {
                    let i = y * n + x;
                    let e = (t_f[i] - r_f[i]).powi(2);
                    if x % block == 0 || y % block == 0 {
                        on_edge += e;
                    } else {
                        interior += e;
                    }
                    if (t_f[i] - bg[i]).abs() > 0.25 {
                        cross += e;
                    } else {
                        bgsum += e;
                    }
                }
            }
        }
        let _ = mid_t;
        println!(
            "noflow eps1=0 error split: block-edge {:.1}% | cross {:.1}% bg {:.1}%",
            100.0 * on_edge / (on_edge + interior),
            100.0 * cross / (cross + bgsum),
            100.0 * bgsum / (cross + bgsum)
        );
    }

    // eps1 / eps2 policy sweep.
    for (eps1, eps2_zero, outer) in [
        (Some(0.0), false, 60usize),
        (Some(0.0), true, 60),
    ] {
        let mut params = cfg.solver;
        params.outer_iterations = outer;
        let problem = ReconProblem {
            matrix: &exp.matrix,
            stream: &stream,
            plan: exp.plan,
            constraints: oracle.clone(),
            eps_measurement: eps1,
            eps_flow: Some(if eps2_zero { 0.0 } else { epsilon2_rule(oracle.len(), 1.0) }),
            params,
            init: Some(init.clone()),
        };
        let muvi_o = reconstruct(&problem).unwrap();
        let est_problem = ReconProblem {
            constraints: est.clone(),
            eps_flow: Some(if eps2_zero { 0.0 } else { epsilon2_rule(est.len(), 1.0) }),
            init: Some(init.clone()),
            ..problem
        };
        let muvi_e = reconstruct(&est_problem).unwrap();
        println!(
            "eps1={eps1:?} eps2_zero={eps2_zero} outer={outer}: muvi(oracle) {:.2} | muvi(est-sharp) {:.2}",
            rsnr(&truth, &muvi_o.volume).unwrap(),
            rsnr(&truth, &muvi_e.volume).unwrap()
        );
    }

    // Static-scene ceiling with the same sensing geometry.
    {
        let mut static_cfg = cfg.clone();
        static_cfg.scene.speed = 0.0;
        let sexp = Experiment::from_config(&static_cfg).unwrap();
        let sstream = sexp.acquire_stream().unwrap();
        let struth = sexp.ground_truth().unwrap();
        let sprev = preview_sequence(&sexp.matrix, &sstream, &sexp.plan).unwrap();
        let mut sinit = VideoVolume::zeros(n, n, sexp.plan.frames());
        for k in 0..sexp.plan.frames() {
            let up = upsample_bicubic(sprev.frame(k), sprev.n_l(), n).unwrap();
            sinit.frame_mut(k).copy_from_slice(&up);
        }
        let mut params = static_cfg.solver;
        params.outer_iterations = 60;
        let sproblem = ReconProblem {
            matrix: &sexp.matrix,
            stream: &sstream,
            plan: sexp.plan,
            constraints: FlowConstraintSet::empty(),
            eps_measurement: Some(0.0),
            eps_flow: None,
            params,
            init: Some(sinit),
        };
        let snoflow = reconstruct_baseline_no_flow(&sproblem).unwrap();
        println!(
            "STATIC scene noflow eps1=0: {:.2} dB",
            rsnr(&struth, &snoflow.volume).unwrap()
        );
    }
}

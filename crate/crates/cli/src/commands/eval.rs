use super::{config_value, load_manifest, load_split_demos, write_pretty_json};
use crate::args::EvalArgs;
use crate::plot::{line_chart, Series};
use crate::report::{aggregate, records_csv, EvalRecord, EvalReport};
use crate::{effective_seed, CliError, TOOL_VERSION};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use skillflow_core::geometry::MotionFlow2D;
use skillflow_core::skillbank::{load_bank, SkillTemplateBank};
use skillflow_core::synth::{derive_seed, Split, SyntheticDemo};
use skillflow_core::transform::{lift_flow, LiftConfig, LiftedTrajectory};

struct NoisyInstance {
    demo_path: String,
    demo: SyntheticDemo,
    noise_px: f64,
    noise_depth: f64,
}

fn perturb(demo: &SyntheticDemo, noise_px: f64, noise_depth: f64, seed: u64) -> SyntheticDemo {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut frames = demo.flow.frames().to_vec();
    if noise_px > 0.0 {
        for frame in &mut frames {
            for p in frame.iter_mut() {
                p[0] += noise_px * rng.sample::<f64, _>(StandardNormal);
                p[1] += noise_px * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let mut depth1 = demo.depth1.clone();
    if noise_depth > 0.0 {
        for d in &mut depth1 {
            *d = (*d + noise_depth * rng.sample::<f64, _>(StandardNormal)).max(1e-6);
        }
    }
    SyntheticDemo {
        flow: MotionFlow2D::new(frames).expect("perturbed flow stays valid"),
        depth1,
        ..demo.clone()
    }
}

fn metrics(lifted: &LiftedTrajectory, demo: &SyntheticDemo) -> (f64, f64, f64, f64) {
    let t_len = demo.truth_transforms.len();
    let mut rot_sum = 0.0;
    let mut trans_sq = 0.0;
    for (est, truth) in lifted.transforms.iter().zip(&demo.truth_transforms) {
        rot_sum += est.compose(&truth.inverse()).rotation_angle();
        trans_sq += (est.translation() - truth.translation()).norm_squared();
    }
    let path = lifted.centroid_path();
    let mut wp_sq = 0.0;
    for (est, truth) in path.iter().zip(&demo.truth_traj) {
        wp_sq += (est - truth).norm_squared();
    }
    let final_err = (path.last().unwrap() - demo.truth_traj.last().unwrap()).norm();
    (
        rot_sum / t_len as f64,
        (trans_sq / t_len as f64).sqrt(),
        (wp_sq / t_len as f64).sqrt(),
        final_err,
    )
}

fn run_instance(
    inst: &NoisyInstance,
    bank: &SkillTemplateBank,
    args: &EvalArgs,
) -> Result<Vec<EvalRecord>, CliError> {
    let base_cfg = LiftConfig {
        cold_start: args.cold_start,
        prior_scale: args.scale,
        ..LiftConfig::default()
    };
    let mut records = Vec::new();
    let record = |prior: bool, lambda: f64, m: (f64, f64, f64, f64)| EvalRecord {
        demo: inst.demo_path.clone(),
        skill: inst.demo.skill.name.clone(),
        skill_index: inst.demo.skill.index,
        noise_px: inst.noise_px,
        noise_depth: inst.noise_depth,
        prior,
        lambda,
        rot_err_rad: m.0,
        trans_rmse_m: m.1,
        waypoint_rmse_m: m.2,
        final_pose_err_m: m.3,
    };

    let off = lift_flow(
        &inst.demo.flow,
        &inst.demo.depth1,
        &inst.demo.cam,
        bank,
        inst.demo.skill.index,
        &LiftConfig {
            use_prior: false,
            ..base_cfg.clone()
        },
    )?;
    records.push(record(false, 0.0, metrics(&off, &inst.demo)));

    for &lambda in &args.lambdas {
        let on = lift_flow(
            &inst.demo.flow,
            &inst.demo.depth1,
            &inst.demo.cam,
            bank,
            inst.demo.skill.index,
            &LiftConfig {
                use_prior: true,
                lambda_prior: lambda,
                ..base_cfg.clone()
            },
        )?;
        records.push(record(true, lambda, metrics(&on, &inst.demo)));
    }
    Ok(records)
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    if args.lambdas.is_empty() || args.noise_grid.is_empty() {
        return Err(CliError::Usage(
            "--lambdas and --noise-grid must be non-empty".into(),
        ));
    }
    let seed = effective_seed(args.seed)?;
    let (manifest, dir) = load_manifest(&args.manifest)?;
    let bank = load_bank(&args.bank)?;
    let demos = load_split_demos(&manifest, &dir, Split::Eval)?;
    if demos.is_empty() {
        return Err(CliError::Usage("manifest has no eval-split demos".into()));
    }
    let paths: Vec<String> = manifest
        .split(Split::Eval)
        .map(|e| e.path.clone())
        .collect();

    let mut instances = Vec::new();
    for (ni, &noise_px) in args.noise_grid.iter().enumerate() {
        for (demo, path) in demos.iter().zip(&paths) {
            instances.push(NoisyInstance {
                demo_path: path.clone(),
                demo: perturb(
                    demo,
                    noise_px,
                    args.depth_noise,
                    derive_seed(seed, demo.seed, ni as u64),
                ),
                noise_px,
                noise_depth: args.depth_noise,
            });
        }
    }

    // Demo order is fixed by construction; the parallel map preserves it.
    let nested: Vec<Result<Vec<EvalRecord>, CliError>> = instances
        .par_iter()
        .map(|inst| run_instance(inst, &bank, args))
        .collect();
    let mut records = Vec::new();
    for r in nested {
        records.extend(r?);
    }

    let aggregates = aggregate(&records);
    std::fs::create_dir_all(&args.out_dir)?;
    let report = EvalReport {
        version: TOOL_VERSION.into(),
        seed,
        config: config_value("eval", args, seed),
        records,
        aggregates,
    };
    write_pretty_json(&report, &args.out_dir.join("eval_report.json"))?;
    std::fs::write(
        args.out_dir.join("eval_records.csv"),
        records_csv(&report.records),
    )?;

    // Error versus lambda at the first noise level, prior on and off.
    let noise0 = args.noise_grid[0];
    let mean_of = |prior: bool, lambda: f64, noise: f64| -> f64 {
        let sel: Vec<f64> = report
            .records
            .iter()
            .filter(|r| {
                r.prior == prior
                    && (!prior || r.lambda == lambda)
                    && r.noise_px == noise
            })
            .map(|r| r.waypoint_rmse_m)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    };
    let lambda_ticks: Vec<(f64, String)> = args
        .lambdas
        .iter()
        .enumerate()
        .map(|(i, l)| (i as f64, format!("{l}")))
        .collect();
    let on_curve: Vec<(f64, f64)> = args
        .lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| (i as f64, mean_of(true, l, noise0)))
        .collect();
    let off_level = mean_of(false, 0.0, noise0);
    let off_curve: Vec<(f64, f64)> = (0..args.lambdas.len())
        .map(|i| (i as f64, off_level))
        .collect();
    line_chart(
        &format!("waypoint RMSE vs lambda (pixel noise {noise0})"),
        "lambda",
        "mean 3D waypoint RMSE [m]",
        &lambda_ticks,
        &[
            Series {
                name: "prior on".into(),
                points: on_curve,
            },
            Series {
                name: "prior off".into(),
                points: off_curve,
            },
        ],
        &args.out_dir.join("error_vs_lambda.svg"),
    )?;

    // Error versus noise at the plot lambda.
    let noise_ticks: Vec<(f64, String)> = args
        .noise_grid
        .iter()
        .map(|n| (*n, format!("{n}")))
        .collect();
    let on_noise: Vec<(f64, f64)> = args
        .noise_grid
        .iter()
        .map(|&n| (n, mean_of(true, args.plot_lambda, n)))
        .collect();
    let off_noise: Vec<(f64, f64)> = args
        .noise_grid
        .iter()
        .map(|&n| (n, mean_of(false, 0.0, n)))
        .collect();
    line_chart(
        &format!("waypoint RMSE vs pixel noise (lambda {})", args.plot_lambda),
        "pixel noise sigma [px]",
        "mean 3D waypoint RMSE [m]",
        &noise_ticks,
        &[
            Series {
                name: format!("prior on (lambda {})", args.plot_lambda),
                points: on_noise,
            },
            Series {
                name: "prior off".into(),
                points: off_noise,
            },
        ],
        &args.out_dir.join("error_vs_noise.svg"),
    )?;

    // Paired summary at the plot lambda and first noise level.
    let mut wins = 0usize;
    let mut pairs = 0usize;
    for (demo, path) in demos.iter().zip(&paths) {
        let on = report.records.iter().find(|r| {
            r.demo == *path && r.prior && r.lambda == args.plot_lambda && r.noise_px == noise0
        });
        let off = report
            .records
            .iter()
            .find(|r| r.demo == *path && !r.prior && r.noise_px == noise0);
        if let (Some(on), Some(off)) = (on, off) {
            pairs += 1;
            wins += (on.waypoint_rmse_m < off.waypoint_rmse_m) as usize;
        }
        let _ = demo;
    }
    println!(
        "eval: {} records over {} demos; prior-on mean RMSE {:.4} m vs prior-off {:.4} m \
         (lambda {}, noise {noise0}), win rate {}/{}",
        report.records.len(),
        demos.len(),
        mean_of(true, args.plot_lambda, noise0),
        off_level,
        args.plot_lambda,
        wins,
        pairs
    );
    println!("report -> {}", args.out_dir.display());
    Ok(())
}

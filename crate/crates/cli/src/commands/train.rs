use super::{config_echo, load_manifest, load_split_demos, skill_names};
use crate::args::TrainArgs;
use crate::{effective_seed, CliError};
use skillflow_core::diffusion::{self, Checkpoint, Model, TrainConfig, TrainSample};
use skillflow_core::encoder::{task_input_from_demo, ModelConfig, VOCABULARY};
use skillflow_core::geometry::CameraModel;
use skillflow_core::skillbank::SkillId;
use skillflow_core::synth::{self, SkillShape, Split};

/// Finite-difference verification on the tiny configuration; independent of
/// the training run's own dimensions.
fn run_grad_check(seed: u64) -> Result<(), CliError> {
    let cfg = ModelConfig::tiny();
    let cam = CameraModel::with_identity_extrinsic(110.0, 110.0, 80.0, 60.0, 160.0, 120.0)
        .expect("stock camera");
    let names = vec![
        "Pouring".to_string(),
        "PickingPlacing".to_string(),
        "Pushing".to_string(),
    ];
    let shapes = [SkillShape::Arc, SkillShape::LiftMoveLower, SkillShape::Line];
    let mut samples = Vec::new();
    for (i, shape) in shapes.iter().enumerate().take(2) {
        let fam = synth::SkillFamily {
            skill: SkillId::new(i, names[i].clone()),
            shape: *shape,
            extent_range: (0.15, 0.35),
            start_min: nalgebra::Vector3::new(-0.2, -0.05, 1.5),
            start_max: nalgebra::Vector3::new(0.05, 0.2, 2.1),
            frames: 4,
        };
        let demo = synth::gen_demo(
            &fam,
            &cam,
            (2, 2),
            1.0,
            0.0,
            synth::NoiseSpec::none(),
            derive(seed, i as u64),
        )?;
        samples.push(TrainSample {
            latent: diffusion::encode_flow(&demo.flow, &cam),
            input: task_input_from_demo(&demo),
            label: i,
        });
    }
    let model = Model::init(cfg, names, seed);
    let tcfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    diffusion::grad_check(&model, &samples, &tcfg, 1e-4).map_err(CliError::Numeric)
}

fn derive(seed: u64, i: u64) -> u64 {
    synth::derive_seed(seed, 99, i)
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    if args.dim % args.heads != 0 {
        return Err(CliError::Usage(format!(
            "--dim {} must be divisible by --heads {}",
            args.dim, args.heads
        )));
    }
    let seed = effective_seed(args.seed)?;

    if args.grad_check {
        println!("running gradient verification on the tiny configuration...");
        run_grad_check(seed)?;
        println!("gradient check passed");
    }

    let (manifest, dir) = load_manifest(&args.manifest)?;
    let names = skill_names(&manifest)?;
    let demos = load_split_demos(&manifest, &dir, Split::Train)?;
    if demos.is_empty() {
        return Err(CliError::Usage("manifest has no train-split demos".into()));
    }
    let dataset: Vec<TrainSample> = demos
        .iter()
        .map(|demo| TrainSample {
            latent: diffusion::encode_flow(&demo.flow, &demo.cam),
            input: task_input_from_demo(demo),
            label: demo.skill.index,
        })
        .collect();

    let cfg = ModelConfig {
        dim: args.dim,
        heads: args.heads,
        num_skills: names.len(),
        vocab_size: VOCABULARY.len(),
        steps: args.steps,
        scaled_attention: !args.unscaled_attention,
        ..ModelConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut model = Model::init(cfg, names, seed);
    let tcfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr: args.lr,
        momentum: args.momentum,
        w1: args.w1,
        w2: args.w2,
        tau: args.tau,
        seed,
        teacher_forcing: !args.no_teacher_forcing,
    };

    let metrics = diffusion::train(&mut model, &dataset, &tcfg)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut checkpoint = Checkpoint::from_model(&model);
    checkpoint.extra = config_echo("train", args, seed);
    super::write_pretty_json(&checkpoint, &args.out_dir.join("checkpoint.json"))?;

    let mut csv = String::from("epoch,l_mse,l_ce,l_con,acc\n");
    for m in &metrics {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.l_mse, m.l_ce, m.l_con, m.accuracy
        ));
    }
    std::fs::write(args.out_dir.join("metrics.csv"), csv)?;

    if let Some(last) = metrics.last() {
        println!(
            "trained {} epochs on {} demos: l_total {:.4}, accuracy {:.3}",
            args.epochs,
            dataset.len(),
            last.l_total,
            last.accuracy
        );
    } else {
        println!("wrote untrained (seeded) checkpoint");
    }
    println!("checkpoint -> {}", args.out_dir.join("checkpoint.json").display());
    Ok(())
}

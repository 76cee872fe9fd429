use super::{config_value, write_pretty_json};
use crate::args::PlanArgs;
use crate::report::{ActionsArtifact, FlowArtifact, LiftedArtifact};
use crate::{effective_seed, CliError, TOOL_VERSION};
use skillflow_core::diffusion::{self, Checkpoint};
use skillflow_core::encoder::{encode_base, fuse_skill, task_input_from_demo};
use skillflow_core::geometry::{RigidTransform, RigidTransformData};
use skillflow_core::skillbank::load_bank;
use skillflow_core::synth::load_demo;
use skillflow_core::transform::{lift_flow, to_actions, LiftConfig};
use std::time::Instant;

pub fn run(args: &PlanArgs) -> Result<(), CliError> {
    let seed = effective_seed(args.seed)?;
    let demo = load_demo(&args.demo)?;
    let bank = load_bank(&args.bank)?;
    let checkpoint_text = std::fs::read_to_string(&args.checkpoint)?;
    let checkpoint: Checkpoint = serde_json::from_str(&checkpoint_text)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.checkpoint.display())))?;
    let model = checkpoint.into_model()?;

    // Encoding phase: featurize and classify the task observation.
    let t_encode = Instant::now();
    let input = task_input_from_demo(&demo);
    let base = encode_base(&input, &model.encoder, &model.cfg);
    let spread = base.logits.max() - base.logits.min();
    if spread < 1e-12 {
        return Err(CliError::Degenerate(
            "skill classification produced all-equal logits; refusing to tie-break in plan mode"
                .into(),
        ));
    }
    let skill = base.predicted;
    let fuse = fuse_skill(&base, skill, &model.encoder, &model.cfg);
    let encode_ms = t_encode.elapsed().as_secs_f64() * 1e3;

    // Generation phase: sample a flow, or bypass with a stored one.
    let t_gen = Instant::now();
    let (flow, source) = match &args.flow_from_file {
        Some(path) => (load_demo(path)?.flow, "file".to_string()),
        None => {
            let flow = diffusion::sample(
                &model.denoiser,
                &fuse.ctx.tokens(),
                &model.schedule(),
                &model.cfg,
                &demo.cam,
                demo.flow.num_frames(),
                demo.flow.num_points(),
                seed,
            )?;
            (flow, "sampled".to_string())
        }
    };
    let generate_ms = t_gen.elapsed().as_secs_f64() * 1e3;

    // Execution phase: lift the flow and map it to actions.
    let t_lift = Instant::now();
    let lift_cfg = LiftConfig {
        lambda_prior: args.lambda,
        use_prior: !args.no_prior,
        cold_start: args.cold_start,
        prior_scale: args.scale,
        ..LiftConfig::default()
    };
    let lifted = lift_flow(&flow, &demo.depth1, &demo.cam, &bank, skill, &lift_cfg)?;
    let actions = to_actions(&lifted, &demo.cam, &RigidTransform::identity());
    let lift_ms = t_lift.elapsed().as_secs_f64() * 1e3;

    std::fs::create_dir_all(&args.out_dir)?;
    let config = config_value("plan", args, seed);
    let skill_id = skillflow_core::skillbank::SkillId::new(skill, model.skill_names[skill].clone());
    write_pretty_json(
        &FlowArtifact {
            version: TOOL_VERSION.into(),
            seed,
            config: config.clone(),
            frames: flow.num_frames(),
            points: flow.num_points(),
            skill: skill_id,
            source,
            flow: flow.frames().to_vec(),
        },
        &args.out_dir.join("flow.json"),
    )?;
    write_pretty_json(
        &LiftedArtifact {
            version: TOOL_VERSION.into(),
            seed,
            config: config.clone(),
            object_center: [
                lifted.object_center.x,
                lifted.object_center.y,
                lifted.object_center.z,
            ],
            transforms: lifted.transforms.iter().map(RigidTransformData::from).collect(),
            per_frame_cost: lifted.per_frame_cost.clone(),
        },
        &args.out_dir.join("lifted.json"),
    )?;
    write_pretty_json(
        &ActionsArtifact {
            version: TOOL_VERSION.into(),
            seed,
            config,
            poses: actions.poses.iter().map(RigidTransformData::from).collect(),
        },
        &args.out_dir.join("actions.json"),
    )?;

    println!(
        "classified skill: {} ({})",
        skill, model.skill_names[skill]
    );
    println!("timing: encode {encode_ms:.1} ms, generate {generate_ms:.1} ms, lift {lift_ms:.1} ms");
    println!("artifacts -> {}", args.out_dir.display());
    Ok(())
}

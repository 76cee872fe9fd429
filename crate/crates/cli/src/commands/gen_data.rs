use super::config_echo;
use crate::args::GenDataArgs;
use crate::{effective_seed, CliError};
use skillflow_core::geometry::CameraModel;
use skillflow_core::synth::{self, DatasetSpec, NoiseSpec};

pub fn run(args: &GenDataArgs) -> Result<(), CliError> {
    if args.per_skill < 1 {
        return Err(CliError::Usage("--per-skill must be at least 1".into()));
    }
    if !(1..=5).contains(&args.skills) {
        return Err(CliError::Usage(
            "--skills must be between 1 and 5 (stock skill families)".into(),
        ));
    }
    if args.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    if args.frames < 2 {
        return Err(CliError::Usage("--T must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&args.eval_fraction) {
        return Err(CliError::Usage(
            "--eval-fraction must lie in [0, 1]".into(),
        ));
    }
    let seed = effective_seed(args.seed)?;
    let cam = CameraModel::with_identity_extrinsic(
        args.cam.fx,
        args.cam.fy,
        args.cam.cx,
        args.cam.cy,
        args.cam.width,
        args.cam.height,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut families = synth::default_families(args.frames);
    families.truncate(args.skills);
    let spec = DatasetSpec {
        families,
        per_skill: args.per_skill,
        grid: (args.grid, args.grid),
        object_ratio: args.object_ratio,
        depth_relief: args.depth_relief,
        noise: NoiseSpec {
            px: args.pixel_noise,
            depth: args.depth_noise,
        },
        eval_fraction: args.eval_fraction,
        seed,
    };

    let manifest = synth::gen_dataset(&spec, &cam, &args.out, config_echo("gen-data", args, seed))?;
    println!(
        "wrote {} demos ({} skills x {}) to {}",
        manifest.demos.len(),
        args.skills,
        args.per_skill,
        args.out.display()
    );
    Ok(())
}

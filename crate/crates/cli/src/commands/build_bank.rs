use super::{config_echo, load_manifest, load_split_demos};
use crate::args::BuildBankArgs;
use crate::{effective_seed, CliError};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use skillflow_core::skillbank;
use skillflow_core::synth::{derive_seed, Split};

pub fn run(args: &BuildBankArgs) -> Result<(), CliError> {
    let seed = effective_seed(args.seed)?;
    let (manifest, dir) = load_manifest(&args.manifest)?;
    let demos = load_split_demos(&manifest, &dir, Split::Train)?;
    if demos.is_empty() {
        return Err(CliError::Usage("manifest has no train-split demos".into()));
    }
    let horizon = demos[0].flow.num_frames();
    if demos.iter().any(|d| d.flow.num_frames() != horizon) {
        return Err(CliError::Usage(
            "train demos disagree on the frame count".into(),
        ));
    }

    let mut lifted = Vec::with_capacity(demos.len());
    for demo in &demos {
        let mut depths = demo.pseudo_depths()?;
        if args.pseudo_depth_noise > 0.0 {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, demo.seed, 1));
            for frame in &mut depths {
                for d in frame {
                    *d = (*d
                        + args.pseudo_depth_noise * rng.sample::<f64, _>(StandardNormal))
                    .max(1e-6);
                }
            }
        }
        let traj = skillbank::lift_demo_to_3d(&demo.flow, &demo.cam, &depths)?;
        lifted.push((demo.skill.clone(), traj));
    }

    let bank = skillbank::build_bank(&lifted, horizon)?;
    skillbank::save_bank(&bank, &args.out, config_echo("build-bank", args, seed))?;
    println!(
        "built bank with {} skills at horizon {} from {} demos -> {}",
        bank.num_skills(),
        bank.horizon(),
        demos.len(),
        args.out.display()
    );
    Ok(())
}

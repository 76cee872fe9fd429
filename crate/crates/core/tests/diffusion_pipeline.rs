//! End-to-end behavior of the trained generator on a small synthetic
//! dataset: training progress, classifier convergence, and the range of
//! sampled flows.

use skillflow_core::diffusion::{self, Model, TrainConfig, TrainSample};
use skillflow_core::encoder::{task_input_from_demo, ModelConfig, SkillSelect};
use skillflow_core::geometry::CameraModel;
use skillflow_core::skillbank::SkillId;
use skillflow_core::synth::{self, SkillShape};

fn cam() -> CameraModel {
    CameraModel::with_identity_extrinsic(110.0, 110.0, 80.0, 60.0, 160.0, 120.0).unwrap()
}

fn families(frames: usize) -> Vec<synth::SkillFamily> {
    let defs = [
        (SkillShape::Arc, "Pouring"),
        (SkillShape::LiftMoveLower, "PickingPlacing"),
        (SkillShape::Line, "Pushing"),
    ];
    defs.iter()
        .enumerate()
        .map(|(i, (shape, name))| synth::SkillFamily {
            skill: SkillId::new(i, *name),
            shape: *shape,
            extent_range: (0.15, 0.35),
            start_min: nalgebra::Vector3::new(-0.2, -0.05, 1.5),
            start_max: nalgebra::Vector3::new(0.05, 0.2, 2.1),
            frames,
        })
        .collect()
}

fn dataset(per_skill: usize, frames: usize) -> Vec<TrainSample> {
    let cam = cam();
    let mut out = Vec::new();
    for fam in families(frames) {
        for k in 0..per_skill {
            let seed = synth::derive_seed(21, fam.skill.index as u64, k as u64);
            let demo = synth::gen_demo(
                &fam,
                &cam,
                (2, 2),
                1.0,
                0.0,
                synth::NoiseSpec::none(),
                seed,
            )
            .unwrap();
            out.push(TrainSample {
                latent: diffusion::encode_flow(&demo.flow, &cam),
                input: task_input_from_demo(&demo),
                label: fam.skill.index,
            });
        }
    }
    out
}

fn small_model() -> Model {
    let cfg = ModelConfig {
        dim: 16,
        heads: 4,
        num_skills: 3,
        steps: 25,
        ..ModelConfig::default()
    };
    let names = vec![
        "Pouring".to_string(),
        "PickingPlacing".to_string(),
        "Pushing".to_string(),
    ];
    Model::init(cfg, names, 9)
}

#[test]
fn training_halves_the_loss_and_classifier_converges() {
    let mut model = small_model();
    let data = dataset(6, 8);
    let tcfg = TrainConfig {
        epochs: 200,
        batch_size: 6,
        seed: 13,
        ..TrainConfig::default()
    };
    let metrics = diffusion::train(&mut model, &data, &tcfg).unwrap();
    let first = metrics.first().unwrap();
    let last = metrics.last().unwrap();
    assert!(
        last.l_total < 0.5 * first.l_total,
        "epoch-200 total {} vs epoch-1 total {}",
        last.l_total,
        first.l_total
    );
    assert_eq!(
        last.accuracy, 1.0,
        "classifier accuracy {} after {} epochs",
        last.accuracy, tcfg.epochs
    );
}

#[test]
fn trained_samples_stay_near_normalized_bounds() {
    let mut model = small_model();
    let data = dataset(6, 8);
    let tcfg = TrainConfig {
        epochs: 120,
        batch_size: 6,
        seed: 17,
        ..TrainConfig::default()
    };
    diffusion::train(&mut model, &data, &tcfg).unwrap();

    let cam = cam();
    let schedule = model.schedule();
    let mut total = 0usize;
    let mut inside = 0usize;
    for (i, sample) in data.iter().cycle().take(100).enumerate() {
        let ctx = skillflow_core::encoder::skill_aware_encode(
            &sample.input,
            &model.encoder,
            &model.cfg,
            SkillSelect::Classifier,
        )
        .unwrap();
        let flow = diffusion::sample(
            &model.denoiser,
            &ctx.tokens(),
            &schedule,
            &model.cfg,
            &cam,
            8,
            4,
            1000 + i as u64,
        )
        .unwrap();
        let latent = diffusion::encode_flow(&flow, &cam);
        for v in latent.z.iter() {
            total += 1;
            if v.abs() <= 1.2 {
                inside += 1;
            }
        }
    }
    let frac = inside as f64 / total as f64;
    assert!(
        frac >= 0.99,
        "only {frac:.4} of sampled coordinates within +/-1.2"
    );
}

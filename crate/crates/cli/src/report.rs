//! Evaluation records, aggregates, and the cli-owned artifact formats.

use serde::{Deserialize, Serialize};
use skillflow_core::geometry::RigidTransformData;

/// One lifting run on one (demo, noise level, condition) triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub demo: String,
    pub skill: String,
    pub skill_index: usize,
    pub noise_px: f64,
    pub noise_depth: f64,
    pub prior: bool,
    pub lambda: f64,
    /// Mean rotation-angle error over frames, radians.
    pub rot_err_rad: f64,
    /// RMSE of the transform translation over frames, meters.
    pub trans_rmse_m: f64,
    /// RMSE of the lifted 3D centroid waypoints, meters.
    pub waypoint_rmse_m: f64,
    /// Final-pose position error, meters.
    pub final_pose_err_m: f64,
}

/// Aggregates of one (skill, condition, noise) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub skill: String,
    pub prior: bool,
    pub lambda: f64,
    pub noise_px: f64,
    pub count: usize,
    pub mean_waypoint_rmse_m: f64,
    pub median_waypoint_rmse_m: f64,
    pub p95_waypoint_rmse_m: f64,
    pub mean_trans_rmse_m: f64,
    pub mean_rot_err_rad: f64,
    pub mean_final_pose_err_m: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn p95(sorted: &[f64]) -> f64 {
    let idx = ((sorted.len() as f64) * 0.95).ceil() as usize;
    sorted[idx.clamp(1, sorted.len()) - 1]
}

/// Groups records by (skill, prior, lambda, noise) in a stable order and
/// recomputes every aggregate from scratch.
pub fn aggregate(records: &[EvalRecord]) -> Vec<EvalAggregate> {
    let mut keys: Vec<(String, bool, u64, u64)> = Vec::new();
    for r in records {
        let key = (
            r.skill.clone(),
            r.prior,
            r.lambda.to_bits(),
            r.noise_px.to_bits(),
        );
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by(|a, b| {
        (a.0.as_str(), a.1, a.2, a.3).cmp(&(b.0.as_str(), b.1, b.2, b.3))
    });

    keys.into_iter()
        .map(|(skill, prior, lambda_bits, noise_bits)| {
            let group: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| {
                    r.skill == skill
                        && r.prior == prior
                        && r.lambda.to_bits() == lambda_bits
                        && r.noise_px.to_bits() == noise_bits
                })
                .collect();
            let mut wps: Vec<f64> = group.iter().map(|r| r.waypoint_rmse_m).collect();
            wps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = group.len() as f64;
            EvalAggregate {
                skill,
                prior,
                lambda: f64::from_bits(lambda_bits),
                noise_px: f64::from_bits(noise_bits),
                count: group.len(),
                mean_waypoint_rmse_m: wps.iter().sum::<f64>() / n,
                median_waypoint_rmse_m: median(&wps),
                p95_waypoint_rmse_m: p95(&wps),
                mean_trans_rmse_m: group.iter().map(|r| r.trans_rmse_m).sum::<f64>() / n,
                mean_rot_err_rad: group.iter().map(|r| r.rot_err_rad).sum::<f64>() / n,
                mean_final_pose_err_m: group.iter().map(|r| r.final_pose_err_m).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Full evaluation report artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub records: Vec<EvalRecord>,
    pub aggregates: Vec<EvalAggregate>,
}

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from(
        "demo,skill,noise_px,noise_depth,prior,lambda,rot_err_rad,trans_rmse_m,waypoint_rmse_m,final_pose_err_m\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.demo,
            r.skill,
            r.noise_px,
            r.noise_depth,
            r.prior,
            r.lambda,
            r.rot_err_rad,
            r.trans_rmse_m,
            r.waypoint_rmse_m,
            r.final_pose_err_m
        ));
    }
    out
}

/// Flow artifact written by `plan`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FlowArtifact {
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "N")]
    pub points: usize,
    pub skill: skillflow_core::skillbank::SkillId,
    /// "sampled" or "file".
    pub source: String,
    pub flow: Vec<Vec<[f64; 2]>>,
}

/// Lifted-trajectory artifact written by `plan`.
#[derive(Debug, Serialize, Deserialize)]
pub struct LiftedArtifact {
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub object_center: [f64; 3],
    pub transforms: Vec<RigidTransformData>,
    pub per_frame_cost: Vec<f64>,
}

/// Action-sequence artifact written by `plan`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ActionsArtifact {
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub poses: Vec<RigidTransformData>,
}

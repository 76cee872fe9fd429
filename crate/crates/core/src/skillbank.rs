//! Per-skill 3D trajectory templates: offline construction from demos,
//! normalization, storage, retrieval, and task-specific alignment.
//!
//! Templates are normalized by centroid removal plus division by the maximum
//! pairwise extent, which makes bank construction invariant to rigid
//! translation and uniform scaling of the input demos. Demos of different
//! lengths are aligned by normalized arc-time (cumulative chord length)
//! before averaging.

use crate::geometry::{back_project, CameraModel, GeometryError, MotionFlow2D};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BANK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SkillBankError {
    #[error("skill {index} ({name}) has no demonstrations")]
    EmptySkill { index: usize, name: String },
    #[error("unknown skill index {0}")]
    UnknownSkill(usize),
    #[error("demo trajectory too short: {0} waypoints")]
    ShortTrajectory(usize),
    #[error("degenerate template: extent {0:.3e} is effectively zero")]
    DegenerateTemplate(f64),
    #[error("alignment scale must be positive, got {0}")]
    BadScale(f64),
    #[error("skill indices must be contiguous from 0; missing index {0}")]
    MissingIndex(usize),
    #[error("inconsistent names for skill {index}: {a:?} vs {b:?}")]
    NameMismatch { index: usize, a: String, b: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("bank file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bank file {path}: {source}")]
    Format {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// A skill category: dense index plus a human label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SkillId {
    pub index: usize,
    pub name: String,
}

impl SkillId {
    pub fn new(index: usize, name: impl Into<String>) -> Self {
        Self {
            index,
            name: name.into(),
        }
    }
}

/// Normalized per-skill trajectory: zero centroid, unit max pairwise extent.
#[derive(Debug, Clone)]
pub struct SkillTemplate {
    pub skill: SkillId,
    pub waypoints: Vec<Vector3<f64>>,
}

/// A template translated and scaled into the task's camera-frame workspace.
#[derive(Debug, Clone)]
pub struct TrajectoryPrior {
    pub skill: SkillId,
    pub waypoints: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone)]
pub struct SkillTemplateBank {
    horizon: usize,
    templates: Vec<SkillTemplate>,
}

impl SkillTemplateBank {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_skills(&self) -> usize {
        self.templates.len()
    }

    pub fn template(&self, index: usize) -> Option<&SkillTemplate> {
        self.templates.get(index)
    }

    pub fn templates(&self) -> &[SkillTemplate] {
        &self.templates
    }
}

/// Back-projects every tracked keypoint with its per-frame pseudo-depth and
/// returns the per-frame centroid of the lifted cloud.
///
/// `pseudo_depth[t][n]` is the depth of point `n` at frame `t`; this is a
/// bank-construction tool only, the lift stage itself never reads depth past
/// frame 1.
pub fn lift_demo_to_3d(
    flow: &MotionFlow2D,
    cam: &CameraModel,
    pseudo_depth: &[Vec<f64>],
) -> Result<Vec<Vector3<f64>>, SkillBankError> {
    let t_len = flow.num_frames();
    let n = flow.num_points();
    if pseudo_depth.len() != t_len || pseudo_depth.iter().any(|d| d.len() != n) {
        return Err(GeometryError::InvalidFlow(format!(
            "pseudo-depth shape mismatch: flow is {t_len}x{n}"
        ))
        .into());
    }
    let mut centroids = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut sum = Vector3::zeros();
        for (p, &d) in flow.frame(t).iter().zip(&pseudo_depth[t]) {
            sum += back_project(cam, *p, d)?;
        }
        centroids.push(sum / n as f64);
    }
    Ok(centroids)
}

/// Resamples a polyline to `t_out` waypoints spaced uniformly in normalized
/// arc-time (cumulative chord length), with linear interpolation.
///
/// A trajectory whose chords are already uniform resamples onto itself; a
/// static trajectory falls back to uniform index spacing.
pub fn resample_arc_time(points: &[Vector3<f64>], t_out: usize) -> Vec<Vector3<f64>> {
    assert!(points.len() >= 2 && t_out >= 2, "need at least two waypoints");
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    if total <= 1e-300 {
        return vec![points[0]; t_out];
    }

    let mut out = Vec::with_capacity(t_out);
    let mut seg = 0usize;
    for j in 0..t_out {
        let target = total * j as f64 / (t_out - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let alpha = if len > 0.0 {
            ((target - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(points[seg] * (1.0 - alpha) + points[seg + 1] * alpha);
    }
    out
}

fn max_pairwise_extent(points: &[Vector3<f64>]) -> f64 {
    let mut extent = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            extent = extent.max((points[i] - points[j]).norm());
        }
    }
    extent
}

/// Builds the bank: per skill, resample each demo trajectory to `t_out` by
/// arc-time, average pointwise, remove the centroid, and scale the result to
/// unit max pairwise extent.
pub fn build_bank(
    demos: &[(SkillId, Vec<Vector3<f64>>)],
    t_out: usize,
) -> Result<SkillTemplateBank, SkillBankError> {
    if demos.is_empty() {
        return Err(SkillBankError::EmptySkill {
            index: 0,
            name: "<none>".into(),
        });
    }
    for (_, traj) in demos {
        if traj.len() < 2 {
            return Err(SkillBankError::ShortTrajectory(traj.len()));
        }
    }

    let num_skills = demos.iter().map(|(s, _)| s.index).max().unwrap() + 1;
    let mut grouped: Vec<(Option<String>, Vec<Vec<Vector3<f64>>>)> =
        (0..num_skills).map(|_| (None, Vec::new())).collect();
    for (skill, traj) in demos {
        let slot = &mut grouped[skill.index];
        match &slot.0 {
            None => slot.0 = Some(skill.name.clone()),
            Some(existing) if *existing != skill.name => {
                return Err(SkillBankError::NameMismatch {
                    index: skill.index,
                    a: existing.clone(),
                    b: skill.name.clone(),
                });
            }
            _ => {}
        }
        slot.1.push(resample_arc_time(traj, t_out));
    }

    let mut templates = Vec::with_capacity(num_skills);
    for (index, (name, trajs)) in grouped.into_iter().enumerate() {
        let name = name.ok_or(SkillBankError::MissingIndex(index))?;
        if trajs.is_empty() {
            return Err(SkillBankError::EmptySkill { index, name });
        }
        let mut mean = vec![Vector3::zeros(); t_out];
        for traj in &trajs {
            for (m, p) in mean.iter_mut().zip(traj) {
                *m += p;
            }
        }
        let count = trajs.len() as f64;
        for m in &mut mean {
            *m /= count;
        }
        let centroid = mean.iter().sum::<Vector3<f64>>() / t_out as f64;
        for m in &mut mean {
            *m -= centroid;
        }
        let extent = max_pairwise_extent(&mean);
        if extent < 1e-12 {
            return Err(SkillBankError::DegenerateTemplate(extent));
        }
        for m in &mut mean {
            *m /= extent;
        }
        templates.push(SkillTemplate {
            skill: SkillId::new(index, name),
            waypoints: mean,
        });
    }

    Ok(SkillTemplateBank {
        horizon: t_out,
        templates,
    })
}

/// Aligns a template into the workspace: `phi_t = anchor + scale * (psi_t - psi_1)`,
/// so the first waypoint lands exactly on the anchor.
pub fn retrieve_and_align(
    bank: &SkillTemplateBank,
    skill_index: usize,
    anchor: &Vector3<f64>,
    scale: f64,
) -> Result<TrajectoryPrior, SkillBankError> {
    if scale <= 0.0 {
        return Err(SkillBankError::BadScale(scale));
    }
    let template = bank
        .template(skill_index)
        .ok_or(SkillBankError::UnknownSkill(skill_index))?;
    let first = template.waypoints[0];
    let waypoints = template
        .waypoints
        .iter()
        .map(|w| anchor + (w - first) * scale)
        .collect();
    Ok(TrajectoryPrior {
        skill: template.skill.clone(),
        waypoints,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TemplateRecord {
    index: usize,
    name: String,
    waypoints: Vec<[f64; 3]>,
}

/// On-disk bank format. `extra` carries the producing tool's config echo.
#[derive(Debug, Serialize, Deserialize)]
pub struct BankFile {
    pub version: u32,
    pub horizon: usize,
    skills: Vec<TemplateRecord>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl BankFile {
    pub fn from_bank(bank: &SkillTemplateBank) -> Self {
        BankFile {
            version: BANK_FORMAT_VERSION,
            horizon: bank.horizon,
            skills: bank
                .templates
                .iter()
                .map(|t| TemplateRecord {
                    index: t.skill.index,
                    name: t.skill.name.clone(),
                    waypoints: t.waypoints.iter().map(|w| [w.x, w.y, w.z]).collect(),
                })
                .collect(),
            extra: serde_json::Map::new(),
        }
    }

    pub fn into_bank(self) -> Result<SkillTemplateBank, SkillBankError> {
        let mut templates: Vec<Option<SkillTemplate>> = vec![None; self.skills.len()];
        for rec in self.skills {
            if rec.index >= templates.len() {
                return Err(SkillBankError::UnknownSkill(rec.index));
            }
            templates[rec.index] = Some(SkillTemplate {
                skill: SkillId::new(rec.index, rec.name),
                waypoints: rec
                    .waypoints
                    .into_iter()
                    .map(|w| Vector3::new(w[0], w[1], w[2]))
                    .collect(),
            });
        }
        let templates = templates
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or(SkillBankError::MissingIndex(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SkillTemplateBank {
            horizon: self.horizon,
            templates,
        })
    }
}

pub fn save_bank(
    bank: &SkillTemplateBank,
    path: &std::path::Path,
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<(), SkillBankError> {
    let mut file = BankFile::from_bank(bank);
    file.extra = extra;
    let json = serde_json::to_string_pretty(&file).expect("bank serialization cannot fail");
    std::fs::write(path, json).map_err(|source| SkillBankError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_bank(path: &std::path::Path) -> Result<SkillTemplateBank, SkillBankError> {
    let text = std::fs::read_to_string(path).map_err(|source| SkillBankError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: BankFile = serde_json::from_str(&text).map_err(|source| SkillBankError::Format {
        path: path.display().to_string(),
        source,
    })?;
    file.into_bank()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel {
        CameraModel::with_identity_extrinsic(100.0, 100.0, 64.0, 48.0, 128.0, 96.0).unwrap()
    }

    fn arc(center: Vector3<f64>, radius: f64, t_len: usize) -> Vec<Vector3<f64>> {
        (0..t_len)
            .map(|t| {
                let th = std::f64::consts::FRAC_PI_2 * t as f64 / (t_len - 1) as f64;
                center + Vector3::new(radius * th.cos(), radius * th.sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn static_flow_lifts_to_identical_centroids() {
        let cam = cam();
        let frame = vec![[30.0, 30.0], [40.0, 35.0], [50.0, 30.0], [40.0, 25.0]];
        let flow = MotionFlow2D::new(vec![frame.clone(); 4]).unwrap();
        let depth = vec![vec![1.5; 4]; 4];
        let centroids = lift_demo_to_3d(&flow, &cam, &depth).unwrap();
        assert_eq!(centroids.len(), 4);
        for c in &centroids[1..] {
            assert_abs_diff_eq!(*c, centroids[0], epsilon = 1e-15);
        }
    }

    #[test]
    fn lift_recovers_generating_trajectory() {
        // Project a known moving cloud with exact depths; the generator is
        // the oracle for the recovered centroids.
        let cam = cam();
        let base = vec![
            Vector3::new(-0.05, -0.05, 1.2),
            Vector3::new(0.05, -0.05, 1.2),
            Vector3::new(0.05, 0.05, 1.3),
            Vector3::new(-0.05, 0.05, 1.3),
        ];
        let shifts = [
            Vector3::zeros(),
            Vector3::new(0.02, 0.01, 0.05),
            Vector3::new(0.05, 0.03, 0.12),
        ];
        let mut frames = Vec::new();
        let mut depths = Vec::new();
        let mut expected = Vec::new();
        for s in &shifts {
            let pts: Vec<Vector3<f64>> = base.iter().map(|p| p + s).collect();
            frames.push(
                pts.iter()
                    .map(|p| crate::geometry::project(&cam, p).unwrap())
                    .collect::<Vec<_>>(),
            );
            depths.push(pts.iter().map(|p| p.z).collect::<Vec<_>>());
            expected.push(pts.iter().sum::<Vector3<f64>>() / pts.len() as f64);
        }
        let flow = MotionFlow2D::new(frames).unwrap();
        let got = lift_demo_to_3d(&flow, &cam, &depths).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).norm() < 1e-9);
        }
    }

    #[test]
    fn lift_centroid_error_shrinks_with_cloud_size() {
        // Monte-Carlo bound: with iid depth noise sigma the centroid error
        // stays within 3 sigma / sqrt(N) on average over many seeds.
        let cam = cam();
        let n = 16usize;
        let sigma = 0.01;
        let depth_true = 1.4;
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let gx = (i % 4) as f64 - 1.5;
                let gy = (i / 4) as f64 - 1.5;
                Vector3::new(0.03 * gx, 0.03 * gy, depth_true)
            })
            .collect();
        let frame: Vec<[f64; 2]> = pts
            .iter()
            .map(|p| crate::geometry::project(&cam, p).unwrap())
            .collect();
        let truth = pts.iter().sum::<Vector3<f64>>() / n as f64;
        let flow = MotionFlow2D::new(vec![frame; 2]).unwrap();

        let mut total_err = 0.0;
        let trials = 200;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let depths: Vec<Vec<f64>> = (0..2)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            depth_true
                                + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
                        })
                        .collect()
                })
                .collect();
            let got = lift_demo_to_3d(&flow, &cam, &depths).unwrap();
            total_err += (got[0] - truth).norm();
        }
        let mean_err = total_err / trials as f64;
        assert!(
            mean_err <= 3.0 * sigma / (n as f64).sqrt(),
            "mean centroid error {mean_err} too large"
        );
    }

    #[test]
    fn single_demo_template_is_normalized_demo() {
        let demo = arc(Vector3::new(0.2, 0.1, 1.0), 0.3, 16);
        let bank = build_bank(&[(SkillId::new(0, "Pouring"), demo.clone())], 16).unwrap();
        let tpl = bank.template(0).unwrap();
        let centroid = demo.iter().sum::<Vector3<f64>>() / demo.len() as f64;
        let centered: Vec<Vector3<f64>> = demo.iter().map(|p| p - centroid).collect();
        let extent = max_pairwise_extent(&centered);
        for (w, c) in tpl.waypoints.iter().zip(&centered) {
            assert!((w - c / extent).norm() < 1e-9);
        }
    }

    #[test]
    fn translation_of_demos_is_removed() {
        let a = arc(Vector3::new(0.0, 0.0, 1.0), 0.25, 12);
        let b: Vec<Vector3<f64>> = a.iter().map(|p| p + Vector3::new(0.4, -0.2, 0.3)).collect();
        let bank_a = build_bank(&[(SkillId::new(0, "Pouring"), a.clone())], 12).unwrap();
        let bank_ab = build_bank(
            &[
                (SkillId::new(0, "Pouring"), a),
                (SkillId::new(0, "Pouring"), b),
            ],
            12,
        )
        .unwrap();
        for (x, y) in bank_a
            .template(0)
            .unwrap()
            .waypoints
            .iter()
            .zip(&bank_ab.template(0).unwrap().waypoints)
        {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn scaled_arcs_normalize_to_unit_extent_arc() {
        // Closed-form oracle: the normalized quarter arc itself.
        let unit = arc(Vector3::zeros(), 1.0, 20);
        let small: Vec<Vector3<f64>> = unit.iter().map(|p| p * 0.5).collect();
        let large: Vec<Vector3<f64>> = unit.iter().map(|p| p * 2.0).collect();
        let bank = build_bank(
            &[
                (SkillId::new(0, "Pouring"), small),
                (SkillId::new(0, "Pouring"), large),
            ],
            20,
        )
        .unwrap();
        let tpl = bank.template(0).unwrap();

        let centroid = unit.iter().sum::<Vector3<f64>>() / unit.len() as f64;
        let centered: Vec<Vector3<f64>> = unit.iter().map(|p| p - centroid).collect();
        let extent = max_pairwise_extent(&centered);
        for (w, e) in tpl.waypoints.iter().zip(&centered) {
            assert!((w - e / extent).norm() < 1e-9);
        }
        assert_abs_diff_eq!(max_pairwise_extent(&tpl.waypoints), 1.0, epsilon = 1e-9);
        let c = tpl.waypoints.iter().sum::<Vector3<f64>>() / tpl.waypoints.len() as f64;
        assert!(c.norm() < 1e-9);
    }

    #[test]
    fn empty_skill_is_rejected() {
        let demo = arc(Vector3::zeros(), 1.0, 8);
        // Index 1 present, index 0 missing.
        let err = build_bank(&[(SkillId::new(1, "Pushing"), demo)], 8).unwrap_err();
        assert!(matches!(err, SkillBankError::MissingIndex(0)));
    }

    #[test]
    fn align_identity_case() {
        let demo = arc(Vector3::zeros(), 1.0, 10);
        let bank = build_bank(&[(SkillId::new(0, "Pouring"), demo)], 10).unwrap();
        let tpl = bank.template(0).unwrap().clone();
        let anchor = tpl.waypoints[0];
        let prior = retrieve_and_align(&bank, 0, &anchor, 1.0).unwrap();
        for (p, w) in prior.waypoints.iter().zip(&tpl.waypoints) {
            assert!((p - w).norm() < 1e-12);
        }
    }

    #[test]
    fn align_pins_first_waypoint_to_anchor() {
        let demo = arc(Vector3::new(0.1, 0.0, 1.1), 0.2, 10);
        let bank = build_bank(&[(SkillId::new(0, "Pouring"), demo)], 10).unwrap();
        let anchor = Vector3::new(-0.3, 0.25, 1.7);
        let prior = retrieve_and_align(&bank, 0, &anchor, 2.3).unwrap();
        assert_eq!(prior.waypoints[0], anchor);
    }

    #[test]
    fn align_is_linear_in_scale() {
        let demo = arc(Vector3::zeros(), 1.0, 10);
        let bank = build_bank(&[(SkillId::new(0, "Pouring"), demo)], 10).unwrap();
        let anchor = Vector3::new(0.0, 0.0, 1.0);
        let p1 = retrieve_and_align(&bank, 0, &anchor, 1.0).unwrap();
        let p2 = retrieve_and_align(&bank, 0, &anchor, 2.0).unwrap();
        for (a, b) in p1.waypoints.iter().zip(&p2.waypoints) {
            let d1 = a - anchor;
            let d2 = b - anchor;
            assert!((d2 - d1 * 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn unknown_skill_is_rejected() {
        let demo = arc(Vector3::zeros(), 1.0, 10);
        let bank = build_bank(&[(SkillId::new(0, "Pouring"), demo)], 10).unwrap();
        assert!(matches!(
            retrieve_and_align(&bank, 3, &Vector3::zeros(), 1.0),
            Err(SkillBankError::UnknownSkill(3))
        ));
    }

    #[test]
    fn uniform_chords_resample_onto_themselves() {
        let line: Vec<Vector3<f64>> = (0..16)
            .map(|i| Vector3::new(0.01 * i as f64, -0.02 * i as f64, 1.0 + 0.005 * i as f64))
            .collect();
        let out = resample_arc_time(&line, 16);
        for (a, b) in line.iter().zip(&out) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn resample_changes_length() {
        let line: Vec<Vector3<f64>> = (0..9)
            .map(|i| Vector3::new(i as f64, 0.0, 0.0))
            .collect();
        let out = resample_arc_time(&line, 5);
        assert_eq!(out.len(), 5);
        assert_abs_diff_eq!(out[0], line[0], epsilon = 1e-12);
        assert_abs_diff_eq!(out[4], line[8], epsilon = 1e-12);
        assert_abs_diff_eq!(out[2], Vector3::new(4.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn bank_file_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let demos: Vec<(SkillId, Vec<Vector3<f64>>)> = (0..3)
            .map(|i| {
                let base = Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.8..1.4),
                );
                (
                    SkillId::new(i, format!("skill{i}")),
                    arc(base, rng.random_range(0.1..0.4), 12),
                )
            })
            .collect();
        let bank = build_bank(&demos, 12).unwrap();

        let dir = std::env::temp_dir().join(format!("bank_rt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bank.json");
        save_bank(&bank, &path, serde_json::Map::new()).unwrap();
        let loaded = load_bank(&path).unwrap();
        assert_eq!(loaded.horizon(), bank.horizon());
        for (a, b) in bank.templates().iter().zip(loaded.templates()) {
            assert_eq!(a.skill, b.skill);
            // f64 JSON round-trips are bit-exact with shortest-repr printing.
            for (x, y) in a.waypoints.iter().zip(&b.waypoints) {
                assert_eq!(x, y);
            }
        }
        // Saving the reloaded bank reproduces the bytes.
        let path2 = dir.join("bank2.json");
        save_bank(&loaded, &path2, serde_json::Map::new()).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn cam_to_base_is_not_read_by_lift() {
        // lift_demo_to_3d works purely in the camera frame.
        let mut cam = cam();
        cam.cam_to_base = RigidTransform::new(
            nalgebra::Matrix3::identity(),
            Vector3::new(9.0, 9.0, 9.0),
        )
        .unwrap();
        let frame = vec![[30.0, 30.0], [40.0, 35.0], [50.0, 30.0]];
        let flow = MotionFlow2D::new(vec![frame; 2]).unwrap();
        let depth = vec![vec![1.0; 3]; 2];
        let centroids = lift_demo_to_3d(&flow, &cam, &depth).unwrap();
        assert!(centroids[0].z > 0.0 && centroids[0].z < 2.0);
    }
}

//! Synthetic demonstration generator with closed-form ground truth.
//!
//! Each skill family is a fixed geometric archetype; individual demos vary
//! only by start position and overall scale. Centroid paths are straight
//! lines or circular arcs sampled at constant arc speed, so demos of one
//! skill are exact translated-and-scaled copies of each other and the
//! averaged template reproduces every demo's shape.
//!
//! The object is a fronto-parallel planar keypoint patch at frame 1 (the
//! depth-ambiguous case for reprojection-only lifting), with an optional
//! depth-relief parameter. Per-demo object size is tied to the trajectory
//! extent so that the default prior alignment scale (four bounding-sphere
//! diameters) matches the true motion scale.

use crate::geometry::{
    apply_transform, project, so3_exp, CameraModel, GeometryError, MotionFlow2D, PointCloud,
    RigidTransform, RigidTransformData,
};
use crate::skillbank::SkillId;
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("object behind camera: frame {frame}, point {point}, depth {depth}")]
    ObjectBehindCamera {
        frame: usize,
        point: usize,
        depth: f64,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("dataset spec: {0}")]
    BadSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// The geometric archetype of a skill's centroid path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkillShape {
    /// Tilt about a horizontal axis near the object (pouring-like).
    Arc,
    /// Semicircular up-over-down translation (pick-and-place-like).
    LiftMoveLower,
    /// Straight push along the canonical oblique direction.
    Line,
    /// Straight slide along the lateral axis (drawer-like).
    AxisSlide,
    /// Swing about a distant vertical axis (door-like).
    HingeArc,
}

/// Parametric family for one skill: archetype plus sampling ranges.
#[derive(Debug, Clone)]
pub struct SkillFamily {
    pub skill: SkillId,
    pub shape: SkillShape,
    /// Range of the trajectory's max pairwise extent, meters.
    pub extent_range: (f64, f64),
    /// Axis-aligned box for the frame-1 object centroid, camera frame.
    pub start_min: Vector3<f64>,
    pub start_max: Vector3<f64>,
    pub frames: usize,
}

/// The five stock families at horizon `t`.
pub fn default_families(t: usize) -> Vec<SkillFamily> {
    let names = [
        (SkillShape::Arc, "Pouring"),
        (SkillShape::LiftMoveLower, "PickingPlacing"),
        (SkillShape::Line, "Pushing"),
        (SkillShape::AxisSlide, "SlideOpening"),
        (SkillShape::HingeArc, "HingeOpening"),
    ];
    names
        .iter()
        .enumerate()
        .map(|(i, (shape, name))| SkillFamily {
            skill: SkillId::new(i, *name),
            shape: *shape,
            extent_range: (0.15, 0.35),
            start_min: Vector3::new(-0.30, -0.05, 1.50),
            start_max: Vector3::new(0.05, 0.20, 2.10),
            frames: t,
        })
        .collect()
}

const POUR_ANGLE: f64 = 1.2;
const HINGE_ANGLE: f64 = 0.9;

/// Rotation of `angle` about `axis` through the fixed point `center`.
fn rotation_about(axis: &Vector3<f64>, center: &Vector3<f64>, angle: f64) -> RigidTransform {
    let r = so3_exp(&(axis * angle));
    let t = center - r * center;
    RigidTransform::new(r, t).expect("rotation_about produces a valid transform")
}

/// Generates a centroid trajectory and the per-frame object transforms for
/// one demo. `transforms[0]` is the identity and `traj[t] =
/// transforms[t] * traj[0]` holds exactly.
pub fn gen_trajectory(
    family: &SkillFamily,
    seed: u64,
) -> (Vec<Vector3<f64>>, Vec<RigidTransform>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let extent = rng.random_range(family.extent_range.0..=family.extent_range.1);
    let p0 = Vector3::new(
        rng.random_range(family.start_min.x..=family.start_max.x),
        rng.random_range(family.start_min.y..=family.start_max.y),
        rng.random_range(family.start_min.z..=family.start_max.z),
    );
    let t_len = family.frames;
    let x = Vector3::x_axis().into_inner();
    let y = Vector3::y_axis().into_inner();

    let transforms: Vec<RigidTransform> = match family.shape {
        SkillShape::Line => {
            let dir = Vector3::new(0.8, 0.0, 0.6).normalize();
            (0..t_len)
                .map(|t| {
                    let s = extent * t as f64 / (t_len - 1) as f64;
                    RigidTransform::new(nalgebra::Matrix3::identity(), dir * s).unwrap()
                })
                .collect()
        }
        SkillShape::AxisSlide => (0..t_len)
            .map(|t| {
                let s = extent * t as f64 / (t_len - 1) as f64;
                RigidTransform::new(nalgebra::Matrix3::identity(), x * s).unwrap()
            })
            .collect(),
        SkillShape::LiftMoveLower => {
            // Semicircle in the x-y plane; -y is up in camera coordinates.
            let radius = extent / 2.0;
            let center = p0 + x * radius;
            (0..t_len)
                .map(|t| {
                    let u = t as f64 / (t_len - 1) as f64;
                    let pos =
                        center - x * (radius * (std::f64::consts::PI * u).cos())
                            - y * (radius * (std::f64::consts::PI * u).sin());
                    RigidTransform::new(nalgebra::Matrix3::identity(), pos - p0).unwrap()
                })
                .collect()
        }
        SkillShape::Arc => {
            // Pivot below the centroid; extent is the chord span of the arc.
            let radius = extent / (2.0 * (POUR_ANGLE / 2.0).sin());
            let center = p0 + y * radius;
            (0..t_len)
                .map(|t| {
                    let angle = POUR_ANGLE * t as f64 / (t_len - 1) as f64;
                    rotation_about(&x, &center, angle)
                })
                .collect()
        }
        SkillShape::HingeArc => {
            let radius = extent / (2.0 * (HINGE_ANGLE / 2.0).sin());
            let center = p0 + x * radius;
            (0..t_len)
                .map(|t| {
                    let angle = HINGE_ANGLE * t as f64 / (t_len - 1) as f64;
                    rotation_about(&y, &center, angle)
                })
                .collect()
        }
    };

    let traj = transforms.iter().map(|tf| tf.apply(&p0)).collect();
    (traj, transforms)
}

/// Pixel and frame-1 depth noise, standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub px: f64,
    pub depth: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { px: 0.0, depth: 0.0 }
    }
}

/// One generated demonstration with full ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticDemo {
    pub seed: u64,
    pub skill: SkillId,
    pub cam: CameraModel,
    pub flow: MotionFlow2D,
    pub depth1: Vec<f64>,
    pub truth_traj: Vec<Vector3<f64>>,
    pub truth_transforms: Vec<RigidTransform>,
    pub noise: NoiseSpec,
}

impl SyntheticDemo {
    /// The exact frame-1 keypoint cloud (noise-free projection inverse holds
    /// only for noiseless demos; this back-projects the stored observations).
    pub fn observed_cloud1(&self) -> Result<PointCloud, GeometryError> {
        let pts = self
            .flow
            .frame(0)
            .iter()
            .zip(&self.depth1)
            .map(|(uv, &d)| crate::geometry::back_project(&self.cam, *uv, d))
            .collect::<Result<Vec<_>, _>>()?;
        PointCloud::new(pts)
    }

    /// True per-frame per-point depths, reconstructed from the stored truth
    /// transforms and the observed frame-1 cloud. Used as pseudo-depth when
    /// building template banks.
    pub fn pseudo_depths(&self) -> Result<Vec<Vec<f64>>, GeometryError> {
        let cloud1 = self.observed_cloud1()?;
        Ok(self
            .truth_transforms
            .iter()
            .map(|tf| {
                apply_transform(tf, &cloud1)
                    .points()
                    .iter()
                    .map(|p| p.z)
                    .collect()
            })
            .collect())
    }

    pub fn goal_position(&self) -> Vector3<f64> {
        *self.truth_traj.last().expect("trajectory is non-empty")
    }
}

/// Renders a demo: samples an `nx` x `ny` keypoint grid on the frame-1
/// object face, projects it through every truth transform, and applies
/// seeded Gaussian pixel and frame-1 depth noise.
#[allow(clippy::too_many_arguments)]
pub fn render_demo(
    skill: &SkillId,
    traj: &[Vector3<f64>],
    transforms: &[RigidTransform],
    cam: &CameraModel,
    grid: (usize, usize),
    object_extent: f64,
    depth_relief: f64,
    noise: NoiseSpec,
    seed: u64,
) -> Result<SyntheticDemo, SynthError> {
    assert!(grid.0 >= 2 && grid.1 >= 2, "grid must be at least 2x2");
    assert!(object_extent > 0.0, "object extent must be positive");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (nx, ny) = grid;
    let p0 = traj[0];

    let mut points = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let u = ix as f64 / (nx - 1) as f64 - 0.5;
            let v = iy as f64 / (ny - 1) as f64 - 0.5;
            let dz = if depth_relief > 0.0 {
                rng.random_range(-0.5..0.5) * depth_relief
            } else {
                0.0
            };
            points.push(p0 + Vector3::new(u * object_extent, v * object_extent, dz));
        }
    }
    let cloud1 = PointCloud::new(points)?;
    let centroid1 = cloud1.centroid();

    // Exact projections first; visibility must hold before noise is added.
    let mut frames: Vec<Vec<[f64; 2]>> = Vec::with_capacity(transforms.len());
    for (t, tf) in transforms.iter().enumerate() {
        let moved = apply_transform(tf, &cloud1);
        let mut frame = Vec::with_capacity(cloud1.len());
        for (n, p) in moved.points().iter().enumerate() {
            if p.z <= 0.0 {
                return Err(SynthError::ObjectBehindCamera {
                    frame: t,
                    point: n,
                    depth: p.z,
                });
            }
            frame.push(project(cam, p)?);
        }
        frames.push(frame);
    }

    if noise.px > 0.0 {
        for frame in &mut frames {
            for p in frame.iter_mut() {
                p[0] += noise.px * rng.sample::<f64, _>(StandardNormal);
                p[1] += noise.px * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    let mut depth1: Vec<f64> = cloud1.points().iter().map(|p| p.z).collect();
    if noise.depth > 0.0 {
        for d in &mut depth1 {
            *d = (*d + noise.depth * rng.sample::<f64, _>(StandardNormal)).max(1e-6);
        }
    }

    let truth_traj = transforms.iter().map(|tf| tf.apply(&centroid1)).collect();

    Ok(SyntheticDemo {
        seed,
        skill: skill.clone(),
        cam: cam.clone(),
        flow: MotionFlow2D::new(frames)?,
        depth1,
        truth_traj,
        truth_transforms: transforms.to_vec(),
        noise,
    })
}

/// Generates one complete demo of a family. The object patch side is tied to
/// the trajectory extent so that four bounding-sphere diameters of the
/// frame-1 grid equal the trajectory extent exactly (times `object_ratio`).
pub fn gen_demo(
    family: &SkillFamily,
    cam: &CameraModel,
    grid: (usize, usize),
    object_ratio: f64,
    depth_relief: f64,
    noise: NoiseSpec,
    seed: u64,
) -> Result<SyntheticDemo, SynthError> {
    let (traj, transforms) = gen_trajectory(family, seed);
    let extent = max_extent(&traj);
    // Planar square grid: bounding-sphere diameter = side * sqrt(2).
    let side = extent / (4.0 * std::f64::consts::SQRT_2) * object_ratio;
    render_demo(
        &family.skill,
        &traj,
        &transforms,
        cam,
        grid,
        side,
        depth_relief,
        noise,
        seed,
    )
}

fn max_extent(points: &[Vector3<f64>]) -> f64 {
    let mut extent = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            extent = extent.max((points[i] - points[j]).norm());
        }
    }
    extent
}

/// Derives a per-demo seed from the dataset master seed (splitmix64 mixing).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CamRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: f64,
    height: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRecord {
    traj: Vec<[f64; 3]>,
    transforms: Vec<RigidTransformData>,
}

/// Demo file layout. Field order is the serialization order.
#[derive(Debug, Serialize, Deserialize)]
struct DemoFile {
    seed: u64,
    skill: SkillId,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "N")]
    n: usize,
    cam: CamRecord,
    flow: Vec<Vec<[f64; 2]>>,
    depth1: Vec<f64>,
    truth: TruthRecord,
    noise: NoiseSpec,
}

pub fn save_demo(demo: &SyntheticDemo, path: &std::path::Path) -> Result<(), SynthError> {
    let file = DemoFile {
        seed: demo.seed,
        skill: demo.skill.clone(),
        t: demo.flow.num_frames(),
        n: demo.flow.num_points(),
        cam: CamRecord {
            fx: demo.cam.fx,
            fy: demo.cam.fy,
            cx: demo.cam.cx,
            cy: demo.cam.cy,
            width: demo.cam.width,
            height: demo.cam.height,
        },
        flow: demo.flow.frames().to_vec(),
        depth1: demo.depth1.clone(),
        truth: TruthRecord {
            traj: demo.truth_traj.iter().map(|p| [p.x, p.y, p.z]).collect(),
            transforms: demo
                .truth_transforms
                .iter()
                .map(RigidTransformData::from)
                .collect(),
        },
        noise: demo.noise,
    };
    let json = serde_json::to_string(&file).expect("demo serialization cannot fail");
    std::fs::write(path, json).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_demo(path: &std::path::Path) -> Result<SyntheticDemo, SynthError> {
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: DemoFile = serde_json::from_str(&text).map_err(|source| SynthError::Format {
        path: path.display().to_string(),
        source,
    })?;
    let cam = CameraModel::with_identity_extrinsic(
        file.cam.fx,
        file.cam.fy,
        file.cam.cx,
        file.cam.cy,
        file.cam.width,
        file.cam.height,
    )?;
    let transforms = file
        .truth
        .transforms
        .iter()
        .map(RigidTransform::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SyntheticDemo {
        seed: file.seed,
        skill: file.skill,
        cam,
        flow: MotionFlow2D::new(file.flow)?,
        depth1: file.depth1,
        truth_traj: file
            .truth
            .traj
            .iter()
            .map(|p| Vector3::new(p[0], p[1], p[2]))
            .collect(),
        truth_transforms: transforms,
        noise: file.noise,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
    pub skill: SkillId,
    pub seed: u64,
}

/// Dataset manifest: demo paths with split tags, plus the producing
/// configuration echoed by the caller.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub demos: Vec<ManifestEntry>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn load(path: &std::path::Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| SynthError::Format {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), SynthError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serialization cannot fail");
        std::fs::write(path, json).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Entries of one split, in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.demos.iter().filter(move |e| e.split == split)
    }
}

/// Dataset generation parameters.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub families: Vec<SkillFamily>,
    pub per_skill: usize,
    pub grid: (usize, usize),
    pub object_ratio: f64,
    pub depth_relief: f64,
    pub noise: NoiseSpec,
    pub eval_fraction: f64,
    pub seed: u64,
}

/// Writes all demos plus a manifest into `out_dir`. Balanced per skill; the
/// trailing `eval_fraction` of each skill's demos form the eval split. Fully
/// reproducible from `spec.seed`.
pub fn gen_dataset(
    spec: &DatasetSpec,
    cam: &CameraModel,
    out_dir: &std::path::Path,
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<Manifest, SynthError> {
    if spec.per_skill == 0 {
        return Err(SynthError::BadSpec("per_skill must be at least 1".into()));
    }
    if spec.families.is_empty() {
        return Err(SynthError::BadSpec("no skill families".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let eval_count = ((spec.per_skill as f64) * spec.eval_fraction).round() as usize;
    let eval_start = spec.per_skill - eval_count.min(spec.per_skill);

    let mut demos = Vec::new();
    for family in &spec.families {
        for k in 0..spec.per_skill {
            let seed = derive_seed(spec.seed, family.skill.index as u64, k as u64);
            let demo = gen_demo(
                family,
                cam,
                spec.grid,
                spec.object_ratio,
                spec.depth_relief,
                spec.noise,
                seed,
            )?;
            let name = format!("demo_{:02}_{:04}.json", family.skill.index, k);
            save_demo(&demo, &out_dir.join(&name))?;
            demos.push(ManifestEntry {
                path: name,
                split: if k >= eval_start {
                    Split::Eval
                } else {
                    Split::Train
                },
                skill: family.skill.clone(),
                seed,
            });
        }
    }

    let manifest = Manifest { demos, extra };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

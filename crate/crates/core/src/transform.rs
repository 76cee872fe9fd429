//! Lifting 2D motion flow to per-frame rigid transforms and end-effector
//! actions.
//!
//! Per frame `t`, the transform is the local minimizer of the reprojection
//! error between the observed flow points and the projected, transformed
//! frame-1 cloud. With a retrieved skill prior enabled, the objective gains a
//! per-point 3D term pulling the transformed points toward the prior waypoint
//! for that frame: the residual vector is the 2N pixel residuals followed by
//! 3N prior residuals scaled by sqrt(lambda). With lambda = 0 the two paths
//! produce identical normal equations.
//!
//! Parameters are a 6-vector twist composed on the left of the
//! initialization: `T(xi) = exp(xi) o init`. The analytic Jacobian uses the
//! SO(3) right Jacobian and is cross-checked against central differences in
//! the tests.

use crate::geometry::{
    apply_transform, back_project, se3_exp, so3_right_jacobian, CameraModel, GeometryError,
    MotionFlow2D, PointCloud, RigidTransform,
};
use crate::nlls::{self, ResidualProblem, SolverConfig, SolverError};
use crate::skillbank::{resample_arc_time, retrieve_and_align, SkillBankError, SkillTemplateBank};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use thiserror::Error;

/// Points are considered collinear when the second singular value of the
/// centered cloud drops below this (meters).
pub const COLLINEARITY_TOL: f64 = 1e-9;

/// Depth clamp keeping trial residuals finite when a step pushes a point
/// behind the camera; such steps get enormous residuals and are rejected.
const MIN_PROJ_DEPTH: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("degenerate geometry: keypoints are collinear (sigma2 = {0:.3e})")]
    DegenerateGeometry(f64),
    #[error("flow frame has {got} points, cloud has {expected}")]
    SizeMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    SkillBank(#[from] SkillBankError),
}

/// Configuration for lifting a whole flow.
#[derive(Debug, Clone)]
pub struct LiftConfig {
    /// Weight of the prior term; ignored when `use_prior` is false.
    pub lambda_prior: f64,
    pub use_prior: bool,
    pub solver: SolverConfig,
    /// Initialize every frame at identity instead of the previous frame's
    /// solution.
    pub cold_start: bool,
    /// Workspace scale for prior alignment; `None` uses four bounding-sphere
    /// diameters of the frame-1 cloud.
    pub prior_scale: Option<f64>,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            lambda_prior: 0.1,
            use_prior: true,
            solver: SolverConfig::default(),
            cold_start: false,
            prior_scale: None,
        }
    }
}

/// Per-frame transforms (frame 1 -> frame t, camera frame) with the final
/// reprojection cost of each frame and the frame-1 object centroid.
#[derive(Debug, Clone)]
pub struct LiftedTrajectory {
    pub transforms: Vec<RigidTransform>,
    pub per_frame_cost: Vec<f64>,
    /// Back-projected frame-1 centroid; anchor for priors and actions.
    pub object_center: Vector3<f64>,
}

impl LiftedTrajectory {
    /// Centroid positions of the transformed cloud per frame.
    pub fn centroid_path(&self) -> Vec<Vector3<f64>> {
        self.transforms
            .iter()
            .map(|t| t.apply(&self.object_center))
            .collect()
    }
}

/// End-effector poses in the robot-base frame.
#[derive(Debug, Clone)]
pub struct ActionSequence {
    pub poses: Vec<RigidTransform>,
}

fn second_singular_value(points: &[Vector3<f64>]) -> f64 {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigenvalues();
    let mut vals: Vec<f64> = eig.iter().map(|v| v.max(0.0).sqrt()).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals[1]
}

fn check_geometry(cloud: &PointCloud, observed: &[[f64; 2]]) -> Result<(), TransformError> {
    if observed.len() != cloud.len() {
        return Err(TransformError::SizeMismatch {
            got: observed.len(),
            expected: cloud.len(),
        });
    }
    let sigma2 = second_singular_value(cloud.points());
    if sigma2 <= COLLINEARITY_TOL {
        return Err(TransformError::DegenerateGeometry(sigma2));
    }
    Ok(())
}

struct PriorTerm {
    waypoint: Vector3<f64>,
    sqrt_lambda: f64,
}

/// Reprojection residuals over a twist composed with a fixed initialization.
struct ReprojectionProblem<'a> {
    /// Frame-1 points pre-transformed by the initialization.
    base_points: Vec<Vector3<f64>>,
    observed: &'a [[f64; 2]],
    cam: &'a CameraModel,
    prior: Option<PriorTerm>,
}

impl ReprojectionProblem<'_> {
    fn transformed(&self, xi: &DVector<f64>) -> (RigidTransform, Vec<Vector3<f64>>) {
        let twist = Vector6::new(xi[0], xi[1], xi[2], xi[3], xi[4], xi[5]);
        let delta = se3_exp(&twist);
        let pts = self.base_points.iter().map(|q| delta.apply(q)).collect();
        (delta, pts)
    }
}

impl ResidualProblem for ReprojectionProblem<'_> {
    fn param_dim(&self) -> usize {
        6
    }

    fn residual_dim(&self) -> usize {
        let n = self.base_points.len();
        if self.prior.is_some() {
            2 * n + 3 * n
        } else {
            2 * n
        }
    }

    fn residuals(&self, xi: &DVector<f64>) -> DVector<f64> {
        let (_, pts) = self.transformed(xi);
        let mut r = DVector::zeros(self.residual_dim());
        for (n, p) in pts.iter().enumerate() {
            let z = p.z.max(MIN_PROJ_DEPTH);
            r[2 * n] = self.cam.fx * p.x / z + self.cam.cx - self.observed[n][0];
            r[2 * n + 1] = self.cam.fy * p.y / z + self.cam.cy - self.observed[n][1];
        }
        if let Some(prior) = &self.prior {
            let off = 2 * pts.len();
            for (n, p) in pts.iter().enumerate() {
                let d = (p - prior.waypoint) * prior.sqrt_lambda;
                r[off + 3 * n] = d.x;
                r[off + 3 * n + 1] = d.y;
                r[off + 3 * n + 2] = d.z;
            }
        }
        r
    }

    fn jacobian(&self, xi: &DVector<f64>) -> Option<DMatrix<f64>> {
        let omega = Vector3::new(xi[3], xi[4], xi[5]);
        let (delta, pts) = self.transformed(xi);
        let rot = *delta.rotation();
        let jr = so3_right_jacobian(&omega);
        let mut jac = DMatrix::zeros(self.residual_dim(), 6);

        for (n, p) in pts.iter().enumerate() {
            // d(R q + v)/d v = I, d(R q + v)/d omega = -R [q]x Jr
            let q = &self.base_points[n];
            let dp_dw = -rot
                * Matrix3::new(0.0, -q.z, q.y, q.z, 0.0, -q.x, -q.y, q.x, 0.0)
                * jr;
            let z = p.z.max(MIN_PROJ_DEPTH);
            let du = Vector3::new(self.cam.fx / z, 0.0, -self.cam.fx * p.x / (z * z));
            let dv = Vector3::new(0.0, self.cam.fy / z, -self.cam.fy * p.y / (z * z));
            for c in 0..3 {
                jac[(2 * n, c)] = du[c];
                jac[(2 * n + 1, c)] = dv[c];
                let dw: Vector3<f64> = dp_dw.column(c).into();
                jac[(2 * n, 3 + c)] = du.dot(&dw);
                jac[(2 * n + 1, 3 + c)] = dv.dot(&dw);
            }
        }
        if let Some(prior) = &self.prior {
            let off = 2 * pts.len();
            for (n, q) in self.base_points.iter().enumerate() {
                let dp_dw = -rot
                    * Matrix3::new(0.0, -q.z, q.y, q.z, 0.0, -q.x, -q.y, q.x, 0.0)
                    * jr;
                for row in 0..3 {
                    jac[(off + 3 * n + row, row)] = prior.sqrt_lambda;
                    for c in 0..3 {
                        jac[(off + 3 * n + row, 3 + c)] = prior.sqrt_lambda * dp_dw[(row, c)];
                    }
                }
            }
        }
        Some(jac)
    }
}

fn solve_frame(
    observed: &[[f64; 2]],
    cloud1: &PointCloud,
    cam: &CameraModel,
    init: &RigidTransform,
    prior: Option<PriorTerm>,
    cfg: &SolverConfig,
) -> Result<(RigidTransform, f64), TransformError> {
    let problem = ReprojectionProblem {
        base_points: cloud1.points().iter().map(|p| init.apply(p)).collect(),
        observed,
        cam,
        prior,
    };
    let report = nlls::solve(&problem, &DVector::zeros(6), cfg)?;
    let twist = Vector6::new(
        report.solution[0],
        report.solution[1],
        report.solution[2],
        report.solution[3],
        report.solution[4],
        report.solution[5],
    );
    Ok((se3_exp(&twist).compose(init), report.final_cost))
}

/// Fits the transform for one frame by minimizing the reprojection error.
/// Returns the transform and the objective value at the solution.
pub fn estimate_transform(
    flow_frame_t: &[[f64; 2]],
    cloud1: &PointCloud,
    cam: &CameraModel,
    init: &RigidTransform,
    cfg: &SolverConfig,
) -> Result<(RigidTransform, f64), TransformError> {
    check_geometry(cloud1, flow_frame_t)?;
    solve_frame(flow_frame_t, cloud1, cam, init, None, cfg)
}

/// Joint objective: reprojection error plus `lambda` times the summed squared
/// distance of every transformed point to the prior waypoint of this frame.
#[allow(clippy::too_many_arguments)]
pub fn estimate_transform_with_prior(
    flow_frame_t: &[[f64; 2]],
    cloud1: &PointCloud,
    cam: &CameraModel,
    prior_waypoint: &Vector3<f64>,
    lambda: f64,
    init: &RigidTransform,
    cfg: &SolverConfig,
) -> Result<(RigidTransform, f64), TransformError> {
    check_geometry(cloud1, flow_frame_t)?;
    let prior = PriorTerm {
        waypoint: *prior_waypoint,
        sqrt_lambda: lambda.max(0.0).sqrt(),
    };
    solve_frame(flow_frame_t, cloud1, cam, init, Some(prior), cfg)
}

/// Reprojection-only cost of a candidate transform (no prior term).
pub fn reprojection_cost(
    observed: &[[f64; 2]],
    cloud1: &PointCloud,
    cam: &CameraModel,
    transform: &RigidTransform,
) -> f64 {
    let mut cost = 0.0;
    for (p, uv) in apply_transform(transform, cloud1)
        .points()
        .iter()
        .zip(observed)
    {
        let z = p.z.max(MIN_PROJ_DEPTH);
        let du = cam.fx * p.x / z + cam.cx - uv[0];
        let dv = cam.fy * p.y / z + cam.cy - uv[1];
        cost += du * du + dv * dv;
    }
    cost
}

/// Lifts a full flow: back-projects frame 1 with the given depths, retrieves
/// and aligns the skill prior, then solves frames 2..T sequentially. Frame 1
/// is the identity by construction. Default initialization is the previous
/// frame's solution; `cold_start` initializes every frame at identity.
pub fn lift_flow(
    flow: &MotionFlow2D,
    depth1: &[f64],
    cam: &CameraModel,
    bank: &SkillTemplateBank,
    skill_index: usize,
    cfg: &LiftConfig,
) -> Result<LiftedTrajectory, TransformError> {
    let n = flow.num_points();
    if depth1.len() != n {
        return Err(TransformError::SizeMismatch {
            got: depth1.len(),
            expected: n,
        });
    }
    let points = flow
        .frame(0)
        .iter()
        .zip(depth1)
        .map(|(uv, &d)| back_project(cam, *uv, d))
        .collect::<Result<Vec<_>, _>>()?;
    let cloud1 = PointCloud::new(points)?;
    check_geometry(&cloud1, flow.frame(0))?;
    let anchor = cloud1.centroid();

    let prior_waypoints = if cfg.use_prior {
        let scale = cfg
            .prior_scale
            .unwrap_or_else(|| 4.0 * cloud1.bounding_sphere_diameter());
        let prior = retrieve_and_align(bank, skill_index, &anchor, scale)?;
        Some(resample_arc_time(&prior.waypoints, flow.num_frames()))
    } else {
        None
    };

    let t_len = flow.num_frames();
    let mut transforms = Vec::with_capacity(t_len);
    let mut costs = Vec::with_capacity(t_len);
    transforms.push(RigidTransform::identity());
    costs.push(reprojection_cost(
        flow.frame(0),
        &cloud1,
        cam,
        &RigidTransform::identity(),
    ));

    let mut current = RigidTransform::identity();
    for t in 1..t_len {
        let init = if cfg.cold_start {
            RigidTransform::identity()
        } else {
            current.clone()
        };
        let (tf, _) = match &prior_waypoints {
            Some(wps) => estimate_transform_with_prior(
                flow.frame(t),
                &cloud1,
                cam,
                &wps[t],
                cfg.lambda_prior,
                &init,
                &cfg.solver,
            )?,
            None => estimate_transform(flow.frame(t), &cloud1, cam, &init, &cfg.solver)?,
        };
        costs.push(reprojection_cost(flow.frame(t), &cloud1, cam, &tf));
        current = tf.clone();
        transforms.push(tf);
    }

    Ok(LiftedTrajectory {
        transforms,
        per_frame_cost: costs,
        object_center: anchor,
    })
}

/// Maps a lifted trajectory to base-frame end-effector poses:
/// `a_t = cam_to_base o T_t o object_pose1 o grasp_offset`, with the frame-1
/// object pose taken as identity rotation at the back-projected centroid.
pub fn to_actions(
    lifted: &LiftedTrajectory,
    cam: &CameraModel,
    grasp_offset: &RigidTransform,
) -> ActionSequence {
    let object_pose1 =
        RigidTransform::new(Matrix3::identity(), lifted.object_center).expect("valid pose");
    let poses = lifted
        .transforms
        .iter()
        .map(|t| {
            cam.cam_to_base
                .compose(t)
                .compose(&object_pose1)
                .compose(grasp_offset)
        })
        .collect();
    ActionSequence { poses }
}

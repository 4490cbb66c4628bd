//! Per-frame data and prior terms: the bounded Geman-McClure penalty, the
//! multi-view robust joint reprojection term, quadratic pose/shape priors and
//! their weighted sum.
//!
//! Every term exists in two forms that share one formula: a scalar evaluator
//! (the reported energy) and a residual emitter feeding the least-squares
//! solver through the square-root trick, where each robust term contributes
//! the residual sqrt(term + EPS).

use serde::{Deserialize, Serialize};

use crate::body::BodyModel;
use crate::camera::{project, Camera};
use crate::error::{Error, Result};
use crate::linalg::{Vec2, Vec3};
use crate::scalar::Real;
use crate::solver::SolveOptions;

/// Stabilizer inside sqrt for robust residuals, so the derivative of
/// sqrt(rho) stays finite at rho = 0.
pub const ROBUST_EPS: f64 = 1e-12;

/// 2D joint detections for one view of one frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointDetections {
    pub points: Vec<Vec2<f64>>,
    /// Detection confidence per joint in [0,1]; 0 marks a missing joint.
    pub confidences: Vec<f64>,
}

impl JointDetections {
    pub fn joint_count(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.confidences.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} detection points vs {} confidences",
                self.points.len(),
                self.confidences.len()
            )));
        }
        for (i, (&w, p)) in self.confidences.iter().zip(&self.points).enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Validation(format!(
                    "confidence {w} of joint {i} outside [0,1]"
                )));
            }
            if w > 0.0 && (!p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::Validation(format!(
                    "joint {i} has confidence {w} but non-finite position"
                )));
            }
        }
        Ok(())
    }
}

/// Remap detector joints onto model joints through a fixed correspondence;
/// model joints without a detector counterpart get confidence 0.
pub fn remap_detections(
    dets: &JointDetections,
    model_to_detector: &[Option<usize>],
) -> JointDetections {
    let mut points = Vec::with_capacity(model_to_detector.len());
    let mut confidences = Vec::with_capacity(model_to_detector.len());
    for entry in model_to_detector {
        match entry {
            Some(d) if *d < dets.points.len() => {
                points.push(dets.points[*d]);
                confidences.push(dets.confidences[*d]);
            }
            _ => {
                points.push(Vec2::new(0.0, 0.0));
                confidences.push(0.0);
            }
        }
    }
    JointDetections {
        points,
        confidences,
    }
}

/// Diagonal Gaussian pose prior over the rotation block: per-coordinate mean
/// and nonnegative precision.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosePrior {
    pub mean: Vec<f64>,
    pub precision: Vec<f64>,
}

impl PosePrior {
    /// Rest-pose-centered prior, stiffer on the torso than on the limbs, and
    /// leaving the global root orientation free. Precisions are kept small
    /// against the joint data term so the prior resolves ambiguity without
    /// biasing well-observed poses.
    pub fn default_for(model: &BodyModel) -> PosePrior {
        let j = model.joint_count();
        let mut precision = vec![0.003; 3 * j];
        for (idx, name) in model.joint_names.iter().enumerate() {
            let p = match name.as_str() {
                "pelvis" => 0.0,
                "spine1" | "spine2" | "spine3" | "l_hip" | "r_hip" | "l_collar" | "r_collar" => {
                    0.02
                }
                "neck" | "l_shoulder" | "r_shoulder" | "l_knee" | "r_knee" | "l_elbow"
                | "r_elbow" => 0.005,
                _ => 0.003,
            };
            for c in 0..3 {
                precision[3 * idx + c] = p;
            }
        }
        PosePrior {
            mean: vec![0.0; 3 * j],
            precision,
        }
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.mean.len() != 3 * joint_count || self.precision.len() != 3 * joint_count {
            return Err(Error::DimensionMismatch(format!(
                "prior dimension {} vs rotation block {}",
                self.mean.len(),
                3 * joint_count
            )));
        }
        if self.precision.iter().any(|&p| p < 0.0) {
            return Err(Error::Validation("prior precisions must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Weights, robustness constants and schedule for the whole fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    /// Final pose-prior weight (the last schedule entry).
    pub lambda_theta: f64,
    pub lambda_beta: f64,
    /// Temporal-term weight.
    pub lambda_t: f64,
    /// Per-axis multiplier on the temporal term (x, y, z).
    pub lambda_t_axes: [f64; 3],
    /// Robustness constant for the joint term (pixels).
    pub sigma1: f64,
    /// Robustness constant for the temporal term (meters).
    pub sigma2: f64,
    /// Stage-one annealing schedule: (lambda_theta, lambda_beta) per pass.
    pub schedule: Vec<(f64, f64)>,
    pub silhouette_weight: f64,
    pub silhouette_stride: usize,
    /// Distance-field clamp in pixels.
    pub distance_clamp: f64,
    /// Temporal window length in frames.
    pub window: usize,
    /// Number of basis components per window.
    pub dct_k: usize,
    pub use_silhouette: bool,
    pub stage2_silhouette: bool,
    pub solver: SolverSettings,
}

/// Serializable subset of the solver options plus pipeline iteration budgets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSettings {
    pub gtol: f64,
    pub xtol: f64,
    pub max_iterations: usize,
    /// Freeze-and-solve rounds for the silhouette pass.
    pub silhouette_rounds: usize,
    pub silhouette_iters_per_round: usize,
    /// Outer rounds for a temporal window (coefficient refresh + frame solves).
    pub window_rounds: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            gtol: 1e-8,
            xtol: 1e-10,
            max_iterations: 100,
            silhouette_rounds: 40,
            silhouette_iters_per_round: 3,
            window_rounds: 10,
        }
    }
}

impl SolverSettings {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            gtol: self.gtol,
            xtol: self.xtol,
            max_iterations: self.max_iterations,
            ..SolveOptions::default()
        }
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_theta: 1.0,
            lambda_beta: 1.0,
            lambda_t: 1.0,
            lambda_t_axes: [1.0, 1.0, 1.0],
            sigma1: 100.0,
            sigma2: 0.05,
            schedule: vec![(10.0, 1.0), (5.0, 1.0), (1.0, 1.0)],
            silhouette_weight: 0.02,
            silhouette_stride: 2,
            distance_clamp: 64.0,
            window: 30,
            dct_k: 10,
            use_silhouette: true,
            stage2_silhouette: false,
            solver: SolverSettings::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.lambda_theta,
            self.lambda_beta,
            self.lambda_t,
            self.silhouette_weight,
            self.lambda_t_axes[0],
            self.lambda_t_axes[1],
            self.lambda_t_axes[2],
        ];
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        if self.sigma1 <= 0.0 || self.sigma2 <= 0.0 {
            return Err(Error::InvalidArgument("sigma constants must be positive".into()));
        }
        if self.silhouette_stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        if self.window == 0 || self.dct_k == 0 {
            return Err(Error::InvalidArgument("window and dct_k must be positive".into()));
        }
        for (lt, lb) in &self.schedule {
            if *lt < 0.0 || *lb < 0.0 {
                return Err(Error::InvalidArgument("schedule weights must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// The bounded robust penalty e² / (σ² + e²): even, monotone in |e|,
/// strictly below 1.
#[inline]
pub fn robust<S: Real>(e: S, sigma: S) -> S {
    let e2 = e * e;
    e2 / (sigma * sigma + e2)
}

/// Checked entry point for the robust penalty.
pub fn geman_mcclure<S: Real>(e: S, sigma: S) -> Result<S> {
    if sigma.primal() <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "robustness constant must be positive, got {}",
            sigma.primal()
        )));
    }
    Ok(robust(e, sigma))
}

/// Per-view robust joint residuals, from already-posed joints.
///
/// Each positive-confidence joint contributes the 2D pixel residual scaled
/// by sqrt(w_i / (σ² + ‖e‖²)), whose squared norm is exactly
/// w_i·rho_σ(‖e‖). This factorization is smooth everywhere (including at a
/// perfect fit), unlike a scalar sqrt(rho) of the residual norm. A joint
/// behind the camera contributes the loss supremum w_i·1 as a constant pair.
pub fn joint_residuals_from_joints<S: Real>(
    joints: &[Vec3<S>],
    cam: &Camera,
    dets: &JointDetections,
    sigma1: f64,
    joint_filter: Option<&[bool]>,
    out: &mut Vec<S>,
) {
    let sigma_sq = S::constant(sigma1 * sigma1);
    for (i, (&joint, det)) in joints.iter().zip(&dets.points).enumerate() {
        let w = dets.confidences[i];
        if w <= 0.0 {
            continue;
        }
        if let Some(filter) = joint_filter {
            if !filter[i] {
                continue;
            }
        }
        match project(cam, joint) {
            Ok(px) => {
                let diff = px - Vec2::lift(*det);
                let scale = (S::constant(w) / (sigma_sq + diff.dot(diff))).sqrt();
                out.push(diff.x * scale);
                out.push(diff.y * scale);
            }
            Err(_) => {
                out.push(S::constant(w.sqrt()));
                out.push(S::zero());
            }
        }
    }
}

/// Number of residuals [`joint_residuals_from_joints`] emits.
pub fn joint_residual_count(dets: &JointDetections, joint_filter: Option<&[bool]>) -> usize {
    dets.confidences
        .iter()
        .enumerate()
        .filter(|(i, &w)| w > 0.0 && joint_filter.map_or(true, |f| f[*i]))
        .count()
        * 2
}

/// Scalar joint term E_J for one view: Σ_i w_i rho(‖Π(X_i) − det_i‖).
pub fn joint_term(
    model: &BodyModel,
    shape: &crate::body::ShapeParams,
    pose: &crate::body::PoseParams,
    cam: &Camera,
    dets: &JointDetections,
    sigma1: f64,
) -> Result<f64> {
    if dets.joint_count() != model.joint_count() {
        return Err(Error::InvalidArgument(format!(
            "{} detections vs {} model joints",
            dets.joint_count(),
            model.joint_count()
        )));
    }
    if sigma1 <= 0.0 {
        return Err(Error::InvalidArgument("sigma1 must be positive".into()));
    }
    let joints = model.pose_joints(&shape.beta, pose.root_translation, &pose.joint_rotations)?;
    Ok(joint_term_from_joints(&joints, cam, dets, sigma1))
}

pub fn joint_term_from_joints(
    joints: &[Vec3<f64>],
    cam: &Camera,
    dets: &JointDetections,
    sigma1: f64,
) -> f64 {
    let mut total = 0.0;
    for (i, (&joint, det)) in joints.iter().zip(&dets.points).enumerate() {
        let w = dets.confidences[i];
        if w <= 0.0 {
            continue;
        }
        total += match project(cam, joint) {
            Ok(px) => w * robust((px - *det).norm(), sigma1),
            Err(_) => w,
        };
    }
    total
}

/// Quadratic residuals of the priors: sqrt(λθ·prec_k)(θ_k − mean_k) over the
/// rotation block and sqrt(λβ)·β_s over the shape block.
pub fn prior_residuals<S: Real>(
    beta: Option<&[S]>,
    rots: &[Vec3<S>],
    prior: &PosePrior,
    lambda_theta: f64,
    lambda_beta: f64,
    out: &mut Vec<S>,
) {
    if lambda_theta > 0.0 {
        for (j, r) in rots.iter().enumerate() {
            for (c, v) in [r.x, r.y, r.z].into_iter().enumerate() {
                let k = 3 * j + c;
                let w = lambda_theta * prior.precision[k];
                if w > 0.0 {
                    out.push(S::constant(w.sqrt()) * (v - S::constant(prior.mean[k])));
                }
            }
        }
    }
    if let Some(beta) = beta {
        if lambda_beta > 0.0 {
            let w = S::constant(lambda_beta.sqrt());
            for b in beta {
                out.push(w * *b);
            }
        }
    }
}

/// Scalar pose prior E_θ = Σ_k precision_k (θ_k − mean_k)².
pub fn pose_prior_term(pose: &crate::body::PoseParams, prior: &PosePrior) -> Result<f64> {
    let dim = 3 * pose.joint_rotations.len();
    if prior.mean.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "prior dimension {} vs pose rotation block {dim}",
            prior.mean.len()
        )));
    }
    let mut total = 0.0;
    for (j, r) in pose.joint_rotations.iter().enumerate() {
        for (c, v) in [r.x, r.y, r.z].into_iter().enumerate() {
            let k = 3 * j + c;
            let d = v - prior.mean[k];
            total += prior.precision[k] * d * d;
        }
    }
    Ok(total)
}

/// Scalar shape prior E_β = ‖β‖².
pub fn shape_prior_term(shape: &crate::body::ShapeParams) -> f64 {
    shape.beta.iter().map(|b| b * b).sum()
}

/// The per-frame multi-view energy E_M = λθ Eθ + λβ Eβ + Σ_v E_J.
pub fn multiview_term(
    model: &BodyModel,
    shape: &crate::body::ShapeParams,
    pose: &crate::body::PoseParams,
    cameras: &[Camera],
    detections: &[JointDetections],
    prior: &PosePrior,
    config: &FitConfig,
) -> Result<f64> {
    if cameras.len() != detections.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} cameras vs {} detection views",
            cameras.len(),
            detections.len()
        )));
    }
    let joints = model.pose_joints(&shape.beta, pose.root_translation, &pose.joint_rotations)?;
    let mut total = config.lambda_theta * pose_prior_term(pose, prior)?
        + config.lambda_beta * shape_prior_term(shape);
    for (cam, dets) in cameras.iter().zip(detections) {
        if dets.joint_count() != model.joint_count() {
            return Err(Error::InvalidArgument(format!(
                "{} detections vs {} model joints",
                dets.joint_count(),
                model.joint_count()
            )));
        }
        total += joint_term_from_joints(&joints, cam, dets, config.sigma1);
    }
    Ok(total)
}

//! End-to-end fitting: per-frame multi-view estimation with a hierarchical
//! pass schedule (root placement on torso joints, full shape-and-pose on all
//! joints, silhouette refinement), median-shape aggregation, and windowed
//! temporal refinement where trajectory coefficients are eliminated in
//! closed form between pose rounds.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, PoseParams, ShapeParams, SHAPE_DIM};
use crate::camera::Camera;
use crate::energy::{
    self, FitConfig, JointDetections, PosePrior,
};
use crate::error::{Error, Result};
use crate::linalg::{slerp_axis_angle, Vec2, Vec3};
use crate::scalar::Real;
use crate::silhouette::{FrozenSilhouette, ObservedSilhouette, SilhouetteMask};
use crate::solver::{minimize, MaskedObjective, Objective, SolveOptions, SolveReport};
use crate::temporal::{
    assemble_trajectories, dct_basis, stage_two_objective, trimmed_coefficients, DctCoefficients,
};

/// All observations for one frame: per-view detections and optional masks.
#[derive(Clone, Debug)]
pub struct FrameObservations {
    pub detections: Vec<JointDetections>,
    pub masks: Vec<Option<Arc<SilhouetteMask>>>,
}

impl FrameObservations {
    pub fn without_masks(detections: Vec<JointDetections>) -> Self {
        let views = detections.len();
        FrameObservations {
            detections,
            masks: vec![None; views],
        }
    }

    fn has_usable_detection(&self) -> bool {
        self.detections
            .iter()
            .any(|d| d.confidences.iter().any(|&w| w > 0.0))
    }
}

/// Per-frame output of the full pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameRecord {
    /// False when the frame was unfittable and its stage-one pose was
    /// interpolated from neighbors.
    pub fitted: bool,
    pub stage_one_shape: ShapeParams,
    pub stage_one_pose: PoseParams,
    pub stage_one_objective: f64,
    pub final_pose: PoseParams,
    pub stage_one_joints: Vec<Vec3<f64>>,
    pub final_joints: Vec<Vec3<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowReport {
    pub start_frame: usize,
    pub frames: usize,
    pub dct_components: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub rounds: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub config: FitConfig,
    pub monocular: bool,
    pub camera_synthesized: bool,
    pub model_seed: Option<u64>,
    pub warnings: Vec<String>,
}

/// Whole-sequence fit: stage-one per-frame results, the median shape, and
/// the temporally refined poses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequenceFit {
    pub shape: ShapeParams,
    pub frames: Vec<FrameRecord>,
    pub windows: Vec<WindowReport>,
    pub provenance: Provenance,
}

/// Which block of the flat parameter vector an objective optimizes.
#[derive(Clone, Copy)]
enum ParamLayout {
    /// [translation(3), rotations(3J)]
    PoseOnly,
    /// [beta(10), translation(3), rotations(3J)]
    ShapeAndPose,
}

/// Temporal anchor targets for one frame of a window.
struct TemporalAnchors<'a> {
    /// Reconstructed trajectory values (B c) for this frame, indexed
    /// [joint * 3 + axis].
    targets: &'a [f64],
    lambda_t: f64,
    lambda_t_axes: [f64; 3],
    sigma2: f64,
}

/// The assembled least-squares objective for one frame.
struct FrameObjective<'a> {
    model: &'a BodyModel,
    cameras: &'a [Camera],
    detections: &'a [JointDetections],
    prior: &'a PosePrior,
    layout: ParamLayout,
    fixed_shape: &'a [f64],
    lambda_theta: f64,
    lambda_beta: f64,
    sigma1: f64,
    joint_filter: Option<&'a [bool]>,
    frozen_silhouette: Option<&'a FrozenSilhouette>,
    temporal: Option<TemporalAnchors<'a>>,
}

impl<'a> FrameObjective<'a> {
    fn unpack<S: Real>(&self, x: &[S]) -> (Vec<S>, Vec3<S>, Vec<Vec3<S>>) {
        let j = self.model.joint_count();
        let (beta, pose_block): (Vec<S>, &[S]) = match self.layout {
            ParamLayout::PoseOnly => (
                self.fixed_shape.iter().map(|&b| S::constant(b)).collect(),
                x,
            ),
            ParamLayout::ShapeAndPose => (x[..SHAPE_DIM].to_vec(), &x[SHAPE_DIM..]),
        };
        let trans = Vec3::new(pose_block[0], pose_block[1], pose_block[2]);
        let rots: Vec<Vec3<S>> = (0..j)
            .map(|k| {
                Vec3::new(
                    pose_block[3 + 3 * k],
                    pose_block[4 + 3 * k],
                    pose_block[5 + 3 * k],
                )
            })
            .collect();
        (beta, trans, rots)
    }
}

impl Objective for FrameObjective<'_> {
    fn param_count(&self) -> usize {
        let pose = 3 + 3 * self.model.joint_count();
        match self.layout {
            ParamLayout::PoseOnly => pose,
            ParamLayout::ShapeAndPose => SHAPE_DIM + pose,
        }
    }

    fn residual_count(&self) -> usize {
        let mut count = 0;
        for dets in self.detections {
            count += energy::joint_residual_count(dets, self.joint_filter);
        }
        if self.lambda_theta > 0.0 {
            count += self.prior.precision.iter().filter(|&&p| p > 0.0).count();
        }
        if matches!(self.layout, ParamLayout::ShapeAndPose) && self.lambda_beta > 0.0 {
            count += SHAPE_DIM;
        }
        if let Some(t) = &self.temporal {
            if t.lambda_t > 0.0 {
                let axes = t.lambda_t_axes.iter().filter(|&&a| a > 0.0).count();
                count += self.model.joint_count() * axes;
            }
        }
        if let Some(f) = self.frozen_silhouette {
            count += f.residual_count();
        }
        count
    }

    fn residuals<S: Real>(&self, x: &[S], out: &mut Vec<S>) {
        let (beta, trans, rots) = self.unpack(x);
        let joints = self
            .model
            .pose_joints(&beta, trans, &rots)
            .expect("dimensions fixed by construction");
        for (cam, dets) in self.cameras.iter().zip(self.detections) {
            energy::joint_residuals_from_joints(
                &joints,
                cam,
                dets,
                self.sigma1,
                self.joint_filter,
                out,
            );
        }
        let beta_for_prior = match self.layout {
            ParamLayout::ShapeAndPose => Some(&beta[..]),
            ParamLayout::PoseOnly => None,
        };
        energy::prior_residuals(
            beta_for_prior,
            &rots,
            self.prior,
            self.lambda_theta,
            self.lambda_beta,
            out,
        );
        if let Some(t) = &self.temporal {
            if t.lambda_t > 0.0 {
                let s2 = S::constant(t.sigma2 * t.sigma2);
                for (e, q) in joints.iter().enumerate() {
                    for (axis, v) in [q.x, q.y, q.z].into_iter().enumerate() {
                        let w = t.lambda_t * t.lambda_t_axes[axis];
                        if w <= 0.0 {
                            continue;
                        }
                        // err * sqrt(w / (σ² + err²)) squares to w·rho(err).
                        let err = v - S::constant(t.targets[e * 3 + axis]);
                        let scale = (S::constant(w) / (s2 + err * err)).sqrt();
                        out.push(err * scale);
                    }
                }
            }
        }
        if let Some(f) = self.frozen_silhouette {
            f.residuals(self.model, &beta, trans, &rots, out);
        }
    }
}

/// Torso joints used by the first (root placement) pass.
fn torso_filter(model: &BodyModel) -> Vec<bool> {
    const TORSO: [&str; 10] = [
        "pelvis", "l_hip", "r_hip", "spine1", "spine2", "spine3", "neck", "l_collar", "r_collar",
        "head",
    ];
    model
        .joint_names
        .iter()
        .map(|n| TORSO.contains(&n.as_str()))
        .collect()
}

/// Midpoint of the shortest segment between two rays.
fn ray_midpoint(c1: Vec3<f64>, d1: Vec3<f64>, c2: Vec3<f64>, d2: Vec3<f64>) -> Option<Vec3<f64>> {
    let r = c1 - c2;
    let a = d1.dot(d1);
    let b = d1.dot(d2);
    let c = d2.dot(d2);
    let d = d1.dot(r);
    let e = d2.dot(r);
    let denom = a * c - b * b;
    if denom.abs() < 1e-12 {
        return None;
    }
    let t1 = (b * e - c * d) / denom;
    let t2 = (a * e - b * d) / denom;
    let p1 = c1 + d1 * t1;
    let p2 = c2 + d2 * t2;
    Some((p1 + p2) * 0.5)
}

/// Place the root by triangulating torso detections from the two most
/// confident views; with one view, use a size-from-focal depth heuristic.
fn initial_translation(
    model: &BodyModel,
    cameras: &[Camera],
    detections: &[JointDetections],
) -> Option<Vec3<f64>> {
    let torso = torso_filter(model);
    let mean_conf = |dets: &JointDetections| -> f64 {
        let mut sum = 0.0;
        let mut n = 0.0;
        for (i, &w) in dets.confidences.iter().enumerate() {
            if torso[i] {
                sum += w;
                n += 1.0;
            }
        }
        if n > 0.0 {
            sum / n
        } else {
            0.0
        }
    };
    let rest = model.rest_joints(&vec![0.0; model.shape_dim()]).ok()?;

    if cameras.len() >= 2 {
        let mut order: Vec<usize> = (0..cameras.len()).collect();
        order.sort_by(|&a, &b| {
            mean_conf(&detections[b])
                .partial_cmp(&mean_conf(&detections[a]))
                .unwrap()
        });
        let (va, vb) = (order[0], order[1]);
        let mut acc = Vec3::zero();
        let mut n = 0.0;
        for (i, _) in model.joint_names.iter().enumerate() {
            if !torso[i] {
                continue;
            }
            let (wa, wb) = (detections[va].confidences[i], detections[vb].confidences[i]);
            if wa <= 0.0 || wb <= 0.0 {
                continue;
            }
            let ca = cameras[va].center();
            let cb = cameras[vb].center();
            let da = cameras[va].pixel_ray(detections[va].points[i]);
            let db = cameras[vb].pixel_ray(detections[vb].points[i]);
            if let Some(p) = ray_midpoint(ca, da, cb, db) {
                acc += p - rest[i];
                n += 1.0;
            }
        }
        if n > 0.0 {
            return Some(acc * (1.0 / n));
        }
    }

    // Monocular: depth from apparent vertical extent.
    let cam = &cameras[0];
    let dets = &detections[0];
    let mut min_px = f64::INFINITY;
    let mut max_px = f64::NEG_INFINITY;
    let mut min_m = f64::INFINITY;
    let mut max_m = f64::NEG_INFINITY;
    let mut anchor_px: Option<Vec2<f64>> = None;
    let mut best_conf = 0.0;
    for (i, &w) in dets.confidences.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        min_px = min_px.min(dets.points[i].y);
        max_px = max_px.max(dets.points[i].y);
        min_m = min_m.min(rest[i].y);
        max_m = max_m.max(rest[i].y);
        if torso[i] && w > best_conf {
            best_conf = w;
            anchor_px = Some(dets.points[i]);
        }
    }
    let extent_px = max_px - min_px;
    let extent_m = max_m - min_m;
    if extent_px < 1.0 || extent_m <= 0.0 {
        return None;
    }
    let depth = cam.focal.y * extent_m / extent_px;
    let px = anchor_px?;
    let dir = cam.pixel_ray(px);
    let dir_depth = cam.rotation.mul_vec(dir).z;
    if dir_depth.abs() < 1e-9 {
        return None;
    }
    Some(cam.center() + dir * (depth / dir_depth))
}

fn pack_params(shape: &ShapeParams, pose: &PoseParams) -> Vec<f64> {
    let mut x = shape.beta.clone();
    x.extend(pose.to_flat());
    x
}

fn unpack_params(x: &[f64]) -> (ShapeParams, PoseParams) {
    (
        ShapeParams::new(x[..SHAPE_DIM].to_vec()),
        PoseParams::from_flat(&x[SHAPE_DIM..]),
    )
}

/// Result of one per-frame fit.
#[derive(Clone, Debug)]
pub struct FrameFit {
    pub shape: ShapeParams,
    pub pose: PoseParams,
    /// Stage-one scalar objective at the solution (with silhouette terms
    /// when they were used).
    pub objective: f64,
    pub pass_reports: Vec<SolveReport>,
}

fn solve_options(config: &FitConfig, max_iterations: usize) -> SolveOptions {
    SolveOptions {
        max_iterations,
        ..config.solver.options()
    }
}

/// Fit one frame with the hierarchical schedule: root placement on torso
/// joints, then annealed full shape-and-pose passes, then silhouette
/// refinement on a frozen surrogate rebuilt every round.
pub fn fit_frame(
    model: &BodyModel,
    obs: &FrameObservations,
    cameras: &[Camera],
    config: &FitConfig,
    prior: &PosePrior,
    init: Option<&(ShapeParams, PoseParams)>,
) -> Result<FrameFit> {
    if obs.detections.len() != cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} detection views vs {} cameras",
            obs.detections.len(),
            cameras.len()
        )));
    }
    if !obs.has_usable_detection() {
        return Err(Error::UnfittableFrame);
    }
    let mut reports = Vec::new();
    let (mut shape, mut pose) = match init {
        Some((s, p)) => (s.clone(), p.clone()),
        None => {
            let mut pose = PoseParams::rest(model.joint_count());
            pose.root_translation =
                initial_translation(model, cameras, &obs.detections).unwrap_or(Vec3::zero());
            (ShapeParams::zeros(), pose)
        }
    };

    let torso = torso_filter(model);
    let (final_lt, final_lb) = *config.schedule.last().unwrap_or(&(1.0, 1.0));

    // Pass 1: translation and root orientation against torso joints.
    {
        let objective = FrameObjective {
            model,
            cameras,
            detections: &obs.detections,
            prior,
            layout: ParamLayout::PoseOnly,
            fixed_shape: &shape.beta,
            lambda_theta: 0.0,
            lambda_beta: 0.0,
            sigma1: config.sigma1,
            joint_filter: Some(&torso),
            frozen_silhouette: None,
            temporal: None,
        };
        let masked = MaskedObjective::new(&objective, (0..6).collect(), pose.to_flat());
        let report = minimize(&masked, &masked.project(), &solve_options(config, 30))?;
        pose = PoseParams::from_flat(&masked.expand(&report.params));
        reports.push(report);
    }

    // Pass 2: full shape and pose on joints, annealing the priors.
    for &(lt, lb) in &config.schedule {
        let objective = FrameObjective {
            model,
            cameras,
            detections: &obs.detections,
            prior,
            layout: ParamLayout::ShapeAndPose,
            fixed_shape: &[],
            lambda_theta: lt,
            lambda_beta: lb,
            sigma1: config.sigma1,
            joint_filter: None,
            frozen_silhouette: None,
            temporal: None,
        };
        let x0 = pack_params(&shape, &pose);
        let report = minimize(&objective, &x0, &solve_options(config, 40))?;
        let (s, p) = unpack_params(&report.params);
        shape = s;
        pose = p;
        reports.push(report);
    }

    // Pass 3: add the silhouette surrogate, refreezing correspondences
    // between short solves.
    let usable_masks: Vec<(usize, Arc<SilhouetteMask>)> = obs
        .masks
        .iter()
        .enumerate()
        .filter_map(|(v, m)| m.clone().map(|m| (v, m)))
        .filter(|(_, m)| m.foreground_count() > 0)
        .collect();
    if config.use_silhouette && config.silhouette_weight > 0.0 && !usable_masks.is_empty() {
        let sil_cams: Vec<Camera> = usable_masks
            .iter()
            .map(|(v, _)| cameras[*v].clone())
            .collect();
        let observed: Vec<ObservedSilhouette> = usable_masks
            .iter()
            .map(|(_, m)| ObservedSilhouette::prepare(m.clone()))
            .collect::<Result<_>>()?;
        // Freeze-and-solve rounds. Each refreeze redefines the surrogate, so
        // the iterate is scored by the value at its own freeze point and the
        // best-scoring iterate wins; the loop stops once that value stops
        // improving.
        let mut best: Option<(f64, ShapeParams, PoseParams)> = None;
        let mut stale_rounds = 0;
        for _round in 0..config.solver.silhouette_rounds {
            let frozen = FrozenSilhouette::build(
                model,
                &shape,
                &pose,
                &sil_cams,
                &observed,
                config.silhouette_stride,
                config.silhouette_weight,
                config.distance_clamp,
            )?;
            if frozen.residual_count() == 0 {
                break;
            }
            let objective = FrameObjective {
                model,
                cameras,
                detections: &obs.detections,
                prior,
                layout: ParamLayout::ShapeAndPose,
                fixed_shape: &[],
                lambda_theta: final_lt,
                lambda_beta: final_lb,
                sigma1: config.sigma1,
                joint_filter: None,
                frozen_silhouette: Some(&frozen),
                temporal: None,
            };
            let x0 = pack_params(&shape, &pose);
            // Damped trust region: the frozen correspondences are only valid
            // near the freeze point, so steps stay short and rounds refreeze.
            let opts = SolveOptions {
                max_iterations: config.solver.silhouette_iters_per_round,
                trust_init: 0.05,
                trust_max: 0.2,
                ..config.solver.options()
            };
            let report = minimize(&objective, &x0, &opts)?;
            // The starting value of this round is the self-consistent score
            // of the current iterate.
            let self_consistent = report.initial_objective;
            match best.as_ref() {
                Some((b, _, _)) if self_consistent >= b - 1e-4 * (1.0 + b) => {
                    if self_consistent < *b {
                        best = Some((self_consistent, shape.clone(), pose.clone()));
                    }
                    stale_rounds += 1;
                }
                _ => {
                    best = Some((self_consistent, shape.clone(), pose.clone()));
                    stale_rounds = 0;
                }
            }
            let step: f64 = report
                .params
                .iter()
                .zip(&x0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let (s, p) = unpack_params(&report.params);
            shape = s;
            pose = p;
            reports.push(report);
            if step.sqrt() < 1e-8 || stale_rounds >= 3 {
                break;
            }
        }
        if let Some((_, s, p)) = best {
            shape = s;
            pose = p;
        }

        // Final polish: the silhouette rounds settle the shape but leave
        // correspondence noise in the pose; refit the pose against joints
        // and prior at the frozen shape.
        let objective = FrameObjective {
            model,
            cameras,
            detections: &obs.detections,
            prior,
            layout: ParamLayout::PoseOnly,
            fixed_shape: &shape.beta,
            lambda_theta: final_lt,
            lambda_beta: 0.0,
            sigma1: config.sigma1,
            joint_filter: None,
            frozen_silhouette: None,
            temporal: None,
        };
        let report = minimize(&objective, &pose.to_flat(), &solve_options(config, 40))?;
        pose = PoseParams::from_flat(&report.params);
        reports.push(report);
    }

    // Report the stage-one scalar objective at the solution.
    let masks_for_score: Vec<SilhouetteMask> = obs
        .masks
        .iter()
        .map(|m| match m {
            Some(m) => (**m).clone(),
            None => SilhouetteMask::new(0, 0),
        })
        .collect();
    let objective = if config.use_silhouette
        && config.silhouette_weight > 0.0
        && !usable_masks.is_empty()
    {
        let mut cfg = config.clone();
        cfg.lambda_theta = final_lt;
        cfg.lambda_beta = final_lb;
        crate::silhouette::stage_one_objective(
            model,
            &shape,
            &pose,
            cameras,
            &obs.detections,
            &masks_for_score,
            prior,
            &cfg,
        )?
    } else {
        let mut cfg = config.clone();
        cfg.lambda_theta = final_lt;
        cfg.lambda_beta = final_lb;
        energy::multiview_term(model, &shape, &pose, cameras, &obs.detections, prior, &cfg)?
    };

    Ok(FrameFit {
        shape,
        pose,
        objective,
        pass_reports: reports,
    })
}

/// Componentwise median; even counts average the two middle values.
pub fn median_shape(shapes: &[ShapeParams]) -> Result<ShapeParams> {
    if shapes.is_empty() {
        return Err(Error::InvalidArgument("median of zero shapes".into()));
    }
    let dim = shapes[0].beta.len();
    let mut beta = vec![0.0; dim];
    for (k, slot) in beta.iter_mut().enumerate() {
        let mut vals: Vec<f64> = shapes.iter().map(|s| s.beta[k]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len();
        *slot = if n % 2 == 1 {
            vals[n / 2]
        } else {
            0.5 * (vals[n / 2 - 1] + vals[n / 2])
        };
    }
    Ok(ShapeParams::new(beta))
}

/// Refine one window of poses under the trajectory prior.
///
/// Coefficients are eliminated before every pose round by robust projection
/// with hard outlier trimming, then every frame is refit against its
/// reconstructed anchors. Frames the trim consensus marks as outliers
/// (typically left/right-confused fits) additionally try a start
/// interpolated from their neighbors, which moves them into the basin the
/// trajectory prior prefers. A final release pass refits the clean
/// neighbors of any outlier on data alone, since the low-rank
/// reconstruction wiggles around corrupted frames and would otherwise drag
/// them.
#[allow(clippy::too_many_arguments)]
pub fn fit_window(
    model: &BodyModel,
    shape_hat: &ShapeParams,
    window_obs: &[FrameObservations],
    cameras: &[Camera],
    init: &[PoseParams],
    config: &FitConfig,
    prior: &PosePrior,
    start_frame: usize,
    suspect: Option<&[bool]>,
) -> Result<(Vec<PoseParams>, WindowReport)> {
    let n = window_obs.len();
    if n == 0 || init.len() != n {
        return Err(Error::InvalidArgument(
            "window must contain at least one frame with matching initialization".into(),
        ));
    }
    let k = config.dct_k.min(n);
    let basis = dct_basis(n, k)?;
    let (final_lt, final_lb) = *config.schedule.last().unwrap_or(&(1.0, 1.0));
    let mut cfg = config.clone();
    cfg.lambda_theta = final_lt;
    cfg.lambda_beta = final_lb;
    const TRIM_K: f64 = 3.0;

    let mut poses: Vec<PoseParams> = init.to_vec();
    let detections: Vec<Vec<JointDetections>> =
        window_obs.iter().map(|o| o.detections.clone()).collect();

    let score = |poses: &[PoseParams], coeffs: &DctCoefficients| -> Result<f64> {
        stage_two_objective(
            model, shape_hat, poses, coeffs, cameras, &detections, &basis, prior, &cfg,
        )
    };

    // One per-frame solve against fixed anchors, optionally trying an
    // alternative start and keeping the better result.
    let solve_frame = |f: usize,
                       start: &PoseParams,
                       alt: Option<&PoseParams>,
                       targets: &[f64],
                       with_temporal: bool,
                       iterations: usize|
     -> Result<PoseParams> {
        let frozen = if cfg.stage2_silhouette {
            let usable: Vec<ObservedSilhouette> = window_obs[f]
                .masks
                .iter()
                .flatten()
                .filter(|m| m.foreground_count() > 0)
                .map(|m| ObservedSilhouette::prepare(m.clone()))
                .collect::<Result<_>>()?;
            if usable.is_empty() {
                None
            } else {
                Some(FrozenSilhouette::build(
                    model,
                    shape_hat,
                    start,
                    cameras,
                    &usable,
                    cfg.silhouette_stride,
                    cfg.silhouette_weight,
                    cfg.distance_clamp,
                )?)
            }
        } else {
            None
        };
        let objective = FrameObjective {
            model,
            cameras,
            detections: &detections[f],
            prior,
            layout: ParamLayout::PoseOnly,
            fixed_shape: &shape_hat.beta,
            lambda_theta: final_lt,
            lambda_beta: final_lb,
            sigma1: cfg.sigma1,
            joint_filter: None,
            frozen_silhouette: frozen.as_ref(),
            temporal: with_temporal.then_some(TemporalAnchors {
                targets,
                lambda_t: cfg.lambda_t,
                lambda_t_axes: cfg.lambda_t_axes,
                sigma2: cfg.sigma2,
            }),
        };
        let report = minimize(&objective, &start.to_flat(), &solve_options(&cfg, iterations))?;
        match alt {
            None => Ok(PoseParams::from_flat(&report.params)),
            Some(alt) => {
                let alt_report =
                    minimize(&objective, &alt.to_flat(), &solve_options(&cfg, iterations))?;
                if alt_report.final_objective < report.final_objective {
                    Ok(PoseParams::from_flat(&alt_report.params))
                } else {
                    Ok(PoseParams::from_flat(&report.params))
                }
            }
        }
    };

    // Frames whose stage-one objective marked them suspect (inconsistent
    // detections) never shape the trajectory coefficients.
    let suspect: Vec<bool> = match suspect {
        Some(s) if s.len() == n => s.to_vec(),
        _ => vec![false; n],
    };
    let traj = assemble_trajectories(model, shape_hat, &poses)?;
    let (mut coeffs, trim0) =
        trimmed_coefficients(&traj, &basis, cfg.sigma2, TRIM_K, None, Some(&suspect));
    let initial_objective = score(&poses, &coeffs)?;
    let mut best = initial_objective;
    let mut rounds = 0;
    let mut stale = 0;
    let mut outlier: Vec<bool> = trim0
        .iter()
        .zip(&suspect)
        .map(|(&frac, &sus)| sus || frac > 0.25)
        .collect();
    let mut ever_flagged = outlier.clone();

    for _round in 0..config.solver.window_rounds {
        rounds += 1;
        let recon: Vec<Vec<f64>> = coeffs
            .coeffs
            .iter()
            .map(|c| basis.reconstruct(c))
            .collect();
        // Outlier frames get an alternative start interpolated from their
        // inlier neighbors.
        let alt_init: Vec<Option<PoseParams>> = if outlier.iter().any(|&o| o) && n > 1 {
            let mut masked: Vec<Option<PoseParams>> = poses
                .iter()
                .zip(&outlier)
                .map(|(p, &o)| (!o).then(|| p.clone()))
                .collect();
            interpolate_gaps(&mut masked);
            masked
                .into_iter()
                .zip(&outlier)
                .map(|(p, &o)| if o { p } else { None })
                .collect()
        } else {
            vec![None; n]
        };
        let new_poses: Vec<PoseParams> = (0..n)
            .into_par_iter()
            .map(|f| -> Result<PoseParams> {
                let targets: Vec<f64> = recon.iter().map(|series| series[f]).collect();
                solve_frame(f, &poses[f], alt_init[f].as_ref(), &targets, true, 12)
            })
            .collect::<Result<Vec<_>>>()?;

        let traj = assemble_trajectories(model, shape_hat, &new_poses)?;
        let (new_coeffs, trim) = trimmed_coefficients(
            &traj,
            &basis,
            cfg.sigma2,
            TRIM_K,
            Some(&coeffs),
            Some(&ever_flagged),
        );
        outlier = trim
            .iter()
            .zip(&suspect)
            .map(|(&frac, &sus)| sus || frac > 0.25)
            .collect();
        for (flag, &o) in ever_flagged.iter_mut().zip(&outlier) {
            *flag |= o;
        }
        let objective = score(&new_poses, &new_coeffs)?;
        // Basin hops can briefly raise the windowed objective before the
        // coefficients resettle; tolerate a couple of non-improving rounds
        // and keep the best-scoring poses.
        if objective <= best {
            let improved = best - objective;
            poses = new_poses;
            coeffs = new_coeffs;
            best = objective;
            stale = 0;
            if improved < 1e-9 * best.max(1.0) {
                break;
            }
        } else {
            stale += 1;
            if stale >= 2 {
                break;
            }
        }
    }

    // Release pass: the reconstruction wiggles around corrupted frames and
    // drags their clean neighbors, so neighbors of any flagged frame are
    // refit on data and prior alone. A released pose is kept only when it
    // lands near the trimmed trajectories (frames whose data genuinely
    // disagrees keep their temporal hold). The release is dropped entirely
    // if the windowed objective regresses past its initialization.
    if ever_flagged.iter().any(|&f| f) {
        let halo = 3usize;
        let release_candidates: Vec<bool> = (0..n)
            .map(|f| {
                !ever_flagged[f]
                    && (f.saturating_sub(halo)..=(f + halo).min(n - 1))
                        .any(|g| ever_flagged[g])
            })
            .collect();
        let recon: Vec<Vec<f64>> = coeffs
            .coeffs
            .iter()
            .map(|c| basis.reconstruct(c))
            .collect();
        let released: Vec<PoseParams> = (0..n)
            .into_par_iter()
            .map(|f| -> Result<PoseParams> {
                if !release_candidates[f] {
                    return Ok(poses[f].clone());
                }
                let candidate = solve_frame(f, &poses[f], None, &[], false, 25)?;
                let joints = model.pose_joints(
                    &shape_hat.beta,
                    candidate.root_translation,
                    &candidate.joint_rotations,
                )?;
                let mut dev = 0.0;
                for (e, q) in joints.iter().enumerate() {
                    let d = Vec3::new(
                        q.x - recon[e * 3][f],
                        q.y - recon[e * 3 + 1][f],
                        q.z - recon[e * 3 + 2][f],
                    );
                    dev += d.norm();
                }
                if dev / joints.len() as f64 <= 0.6 * cfg.sigma2 {
                    Ok(candidate)
                } else {
                    Ok(poses[f].clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let traj = assemble_trajectories(model, shape_hat, &released)?;
        let (rel_coeffs, _) = trimmed_coefficients(
            &traj,
            &basis,
            cfg.sigma2,
            TRIM_K,
            Some(&coeffs),
            Some(&ever_flagged),
        );
        let rel_score = score(&released, &rel_coeffs)?;
        if rel_score <= initial_objective {
            poses = released;
            best = rel_score;
        }
    }

    Ok((
        poses,
        WindowReport {
            start_frame,
            frames: n,
            dct_components: k,
            initial_objective,
            final_objective: best,
            rounds,
        },
    ))
}
/// Linear interpolation of unfittable frames: translation lerped, rotations
/// slerped between the nearest fitted neighbors.
fn interpolate_gaps(poses: &mut [Option<PoseParams>]) {
    let n = poses.len();
    let fitted: Vec<usize> = (0..n).filter(|&i| poses[i].is_some()).collect();
    if fitted.is_empty() {
        return;
    }
    for i in 0..n {
        if poses[i].is_some() {
            continue;
        }
        let prev = fitted.iter().rev().find(|&&f| f < i).copied();
        let next = fitted.iter().find(|&&f| f > i).copied();
        let filled = match (prev, next) {
            (Some(a), Some(b)) => {
                let u = (i - a) as f64 / (b - a) as f64;
                let pa = poses[a].as_ref().unwrap();
                let pb = poses[b].as_ref().unwrap();
                let mut p = pa.clone();
                p.root_translation =
                    pa.root_translation + (pb.root_translation - pa.root_translation) * u;
                for (k, r) in p.joint_rotations.iter_mut().enumerate() {
                    *r = slerp_axis_angle(pa.joint_rotations[k], pb.joint_rotations[k], u);
                }
                p
            }
            (Some(a), None) => poses[a].as_ref().unwrap().clone(),
            (None, Some(b)) => poses[b].as_ref().unwrap().clone(),
            (None, None) => unreachable!(),
        };
        poses[i] = Some(filled);
    }
}

/// Run the full two-stage pipeline over a sequence.
pub fn fit_sequence(
    model: &BodyModel,
    observations: &[FrameObservations],
    cameras: &[Camera],
    config: &FitConfig,
    prior: &PosePrior,
) -> Result<SequenceFit> {
    if observations.is_empty() {
        return Err(Error::InvalidArgument("sequence has no frames".into()));
    }
    config.validate()?;
    prior.validate(model.joint_count())?;
    let mut warnings: Vec<String> = Vec::new();

    // Stage one: sequential frames, warm-started from the previous solution.
    let mut stage_one: Vec<Option<FrameFit>> = Vec::with_capacity(observations.len());
    let mut prev: Option<(ShapeParams, PoseParams)> = None;
    for (t, obs) in observations.iter().enumerate() {
        match fit_frame(model, obs, cameras, config, prior, prev.as_ref()) {
            Ok(fit) => {
                prev = Some((fit.shape.clone(), fit.pose.clone()));
                stage_one.push(Some(fit));
            }
            Err(Error::UnfittableFrame) => {
                warnings.push(format!("frame {t} unfittable; pose interpolated"));
                stage_one.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    if stage_one.iter().all(|f| f.is_none()) {
        return Err(Error::NoFittableFrames);
    }

    // Median shape over fitted frames, then gap interpolation.
    let fitted_shapes: Vec<ShapeParams> = stage_one
        .iter()
        .flatten()
        .map(|f| f.shape.clone())
        .collect();
    let shape_hat = median_shape(&fitted_shapes)?;
    let mut stage_one_poses: Vec<Option<PoseParams>> = stage_one
        .iter()
        .map(|f| f.as_ref().map(|f| f.pose.clone()))
        .collect();
    interpolate_gaps(&mut stage_one_poses);
    let stage_one_poses: Vec<PoseParams> =
        stage_one_poses.into_iter().map(|p| p.unwrap()).collect();

    // Stage two: independent windows, in parallel.
    let window_len = config.window;
    let ranges: Vec<(usize, usize)> = {
        let mut out = Vec::new();
        let mut start = 0;
        while start < observations.len() {
            let end = (start + window_len).min(observations.len());
            out.push((start, end));
            start = end;
        }
        out
    };
    // Frames with an outlying stage-one objective carry inconsistent
    // detections (left/right confusion between views); the temporal stage
    // must not let them shape the trajectory coefficients. Unfittable
    // frames are suspect by construction.
    let suspect: Vec<bool> = {
        let mut objs: Vec<f64> = stage_one
            .iter()
            .flatten()
            .map(|f| f.objective)
            .collect();
        objs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = objs[objs.len() / 2];
        stage_one
            .iter()
            .map(|f| match f {
                None => true,
                Some(f) => f.objective > 4.0 * med && f.objective > med + 0.5,
            })
            .collect()
    };
    let window_results: Vec<(Vec<PoseParams>, WindowReport)> = ranges
        .par_iter()
        .map(|&(start, end)| {
            fit_window(
                model,
                &shape_hat,
                &observations[start..end],
                cameras,
                &stage_one_poses[start..end],
                config,
                prior,
                start,
                Some(&suspect[start..end]),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut final_poses: Vec<PoseParams> = Vec::with_capacity(observations.len());
    let mut windows = Vec::new();
    for (poses, report) in window_results {
        final_poses.extend(poses);
        windows.push(report);
    }

    let frames: Vec<FrameRecord> = (0..observations.len())
        .map(|t| -> Result<FrameRecord> {
            let (s1_shape, s1_obj, fitted) = match &stage_one[t] {
                Some(f) => (f.shape.clone(), f.objective, true),
                None => (shape_hat.clone(), f64::NAN, false),
            };
            let stage_one_joints = model
                .pose_joints(
                    &s1_shape.beta,
                    stage_one_poses[t].root_translation,
                    &stage_one_poses[t].joint_rotations,
                )?;
            let final_joints = model.pose_joints(
                &shape_hat.beta,
                final_poses[t].root_translation,
                &final_poses[t].joint_rotations,
            )?;
            Ok(FrameRecord {
                fitted,
                stage_one_shape: s1_shape,
                stage_one_pose: stage_one_poses[t].clone(),
                stage_one_objective: s1_obj,
                final_pose: final_poses[t].clone(),
                stage_one_joints,
                final_joints,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SequenceFit {
        shape: shape_hat,
        frames,
        windows,
        provenance: Provenance {
            config: config.clone(),
            monocular: cameras.len() == 1,
            camera_synthesized: false,
            model_seed: None,
            warnings,
        },
    })
}

/// Monocular entry point: the identical pipeline with a single view.
pub fn fit_monocular(
    model: &BodyModel,
    observations: &[FrameObservations],
    camera: &Camera,
    config: &FitConfig,
    prior: &PosePrior,
) -> Result<SequenceFit> {
    for obs in observations {
        if obs.detections.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "monocular fit expects exactly one view, got {}",
                obs.detections.len()
            )));
        }
    }
    fit_sequence(
        model,
        observations,
        std::slice::from_ref(camera),
        config,
        prior,
    )
}

/// Default camera when none is calibrated: focal equal to the larger image
/// dimension, principal point at the image center, identity orientation.
pub fn default_camera(width: u32, height: u32) -> Camera {
    Camera {
        rotation: crate::linalg::Mat3::identity(),
        translation: Vec3::zero(),
        focal: Vec2::new(width.max(height) as f64, width.max(height) as f64),
        principal_point: Vec2::new(width as f64 / 2.0, height as f64 / 2.0),
        image_size: (width, height),
    }
}

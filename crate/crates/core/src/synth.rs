//! Synthetic sequence generation: a random body, a smooth pose trajectory
//! built from low-order cosine components, cameras on a ring, rendered
//! ground-truth masks and detections with optional pixel noise and
//! left/right swap corruption.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::body::{make_default_model, BodyModel, PoseParams, ShapeParams};
use crate::camera::{project, Camera};
use crate::energy::JointDetections;
use crate::error::Result;
use crate::io::{GroundTruth, TruthFrame};
use crate::linalg::{Mat3, Vec2, Vec3};
use crate::silhouette::{rasterize, SilhouetteMask};
use crate::temporal::dct_basis;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub seed: u64,
    pub views: usize,
    pub frames: usize,
    /// Isotropic Gaussian pixel noise added to detections.
    pub noise_px: f64,
    /// Fraction of (frame, view) cells whose left/right pairs are swapped.
    pub swap_rate: f64,
    /// Restrict swap injection to one view.
    pub swap_view: Option<usize>,
    /// Dilate/erode masks by up to this many pixels (random sign per cell).
    pub mask_noise: f64,
    pub image_size: u32,
    pub focal: f64,
    pub ring_radius: f64,
    /// Scale on root motion along the first camera's optical axis; small
    /// values keep the subject at near-constant depth for monocular runs.
    pub depth_motion: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            views: 4,
            frames: 30,
            noise_px: 0.0,
            swap_rate: 0.0,
            swap_view: None,
            mask_noise: 0.0,
            image_size: 768,
            focal: 1000.0,
            ring_radius: 2.8,
            depth_motion: 1.0,
        }
    }
}

/// Everything the synthesizer produces: observations plus ground truth.
pub struct SynthOutput {
    pub model: BodyModel,
    pub cameras: Vec<Camera>,
    /// Indexed [frame][view].
    pub detections: Vec<Vec<JointDetections>>,
    /// Indexed [frame][view].
    pub masks: Vec<Vec<SilhouetteMask>>,
    pub truth: GroundTruth,
}

/// Camera on a horizontal ring looking at a point slightly above the origin.
pub fn ring_camera(angle: f64, radius: f64, size: u32, focal: f64) -> Camera {
    let center = Vec3::new(radius * angle.sin(), 0.15, -radius * angle.cos());
    let target = Vec3::new(0.0, -0.05, 0.0);
    let fwd = (target - center).normalized();
    let up = Vec3::new(0.0, -1.0, 0.0);
    let right = up.cross(fwd).normalized();
    let down = fwd.cross(right).normalized();
    let rotation = Mat3::from_rows(right.to_array(), down.to_array(), fwd.to_array());
    Camera {
        translation: -rotation.mul_vec(center),
        rotation,
        focal: Vec2::new(focal, focal),
        principal_point: Vec2::new(size as f64 / 2.0, size as f64 / 2.0),
        image_size: (size, size),
    }
}

/// Per-joint swing amplitude (radians) for the synthetic motion.
fn joint_amplitude(name: &str) -> f64 {
    match name {
        "pelvis" => 0.25,
        "l_hip" | "r_hip" | "l_shoulder" | "r_shoulder" => 0.35,
        "l_knee" | "r_knee" | "l_elbow" | "r_elbow" => 0.4,
        "l_ankle" | "r_ankle" | "l_wrist" | "r_wrist" => 0.2,
        "spine1" | "spine2" | "spine3" => 0.08,
        "neck" | "head" => 0.1,
        "l_collar" | "r_collar" => 0.05,
        _ => 0.15,
    }
}

/// Generate a synthetic sequence. Deterministic per config; the body model
/// comes from `make_default_model(seed)`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    assert!(cfg.views >= 1 && cfg.frames >= 1);
    let model = make_default_model(cfg.seed);
    let mut rng = StdRng::seed_from_u64(cfg.seed.wrapping_mul(0x517cc1b727220a95).wrapping_add(7));

    // Shape.
    let shape_dist = Normal::new(0.0, 0.6).unwrap();
    let beta: Vec<f64> = (0..model.shape_dim())
        .map(|_| f64::clamp(shape_dist.sample(&mut rng), -1.5, 1.5))
        .collect();
    let shape = ShapeParams::new(beta.clone());

    // Smooth trajectories: low-order cosine components over the sequence.
    let n = cfg.frames;
    let order = 4.min(n);
    let basis = dct_basis(n, order)?;
    let smooth = |amp: f64, rng: &mut StdRng| -> Vec<f64> {
        // Random coefficients with decaying magnitude per order; column 0 is
        // the constant offset.
        let coeffs: Vec<f64> = (0..order)
            .map(|k| {
                let scale = amp / (1.0 + k as f64);
                rng.gen_range(-scale..scale) * (n as f64).sqrt() / 2.0
            })
            .collect();
        basis.reconstruct(&coeffs)
    };

    let j = model.joint_count();
    let mut angle_tracks: Vec<Vec<f64>> = Vec::with_capacity(j * 3);
    for joint in 0..j {
        let amp = joint_amplitude(&model.joint_names[joint]);
        for _axis in 0..3 {
            angle_tracks.push(smooth(amp, &mut rng));
        }
    }
    let tx = smooth(0.2, &mut rng);
    let ty = smooth(0.04, &mut rng);
    let tz: Vec<f64> = smooth(0.2, &mut rng)
        .into_iter()
        .map(|v| v * cfg.depth_motion)
        .collect();

    let poses: Vec<PoseParams> = (0..n)
        .map(|f| {
            let mut pose = PoseParams::rest(j);
            pose.root_translation = Vec3::new(tx[f], ty[f], tz[f]);
            for joint in 0..j {
                pose.joint_rotations[joint] = Vec3::new(
                    angle_tracks[joint * 3][f],
                    angle_tracks[joint * 3 + 1][f],
                    angle_tracks[joint * 3 + 2][f],
                );
            }
            pose
        })
        .collect();

    // Cameras.
    let cameras: Vec<Camera> = (0..cfg.views)
        .map(|v| {
            ring_camera(
                2.0 * std::f64::consts::PI * v as f64 / cfg.views.max(2) as f64,
                cfg.ring_radius,
                cfg.image_size,
                cfg.focal,
            )
        })
        .collect();

    // Ground-truth joints and projections.
    let truth_joints: Vec<Vec<Vec3<f64>>> = poses
        .iter()
        .map(|p| {
            model
                .pose_joints(&shape.beta, p.root_translation, &p.joint_rotations)
                .unwrap()
        })
        .collect();

    let noise = Normal::new(0.0, cfg.noise_px.max(1e-12)).unwrap();
    let pairs = model.left_right_pairs();
    let mut detections: Vec<Vec<JointDetections>> = Vec::with_capacity(n);
    let mut swapped_cells = Vec::new();
    for (f, joints) in truth_joints.iter().enumerate() {
        let mut per_view = Vec::with_capacity(cfg.views);
        for (v, cam) in cameras.iter().enumerate() {
            let mut points = Vec::with_capacity(j);
            let mut confidences = Vec::with_capacity(j);
            for &q in joints {
                match project(cam, q) {
                    Ok(mut px) => {
                        if cfg.noise_px > 0.0 {
                            px.x += noise.sample(&mut rng);
                            px.y += noise.sample(&mut rng);
                        }
                        points.push(px);
                        confidences.push(1.0);
                    }
                    Err(_) => {
                        points.push(Vec2::new(0.0, 0.0));
                        confidences.push(0.0);
                    }
                }
            }
            let swap_allowed = cfg.swap_view.map_or(true, |sv| sv == v);
            if cfg.swap_rate > 0.0 && swap_allowed && rng.gen_bool(cfg.swap_rate.clamp(0.0, 1.0)) {
                for &(a, b) in &pairs {
                    points.swap(a, b);
                    confidences.swap(a, b);
                }
                swapped_cells.push((f, v));
            }
            per_view.push(JointDetections {
                points,
                confidences,
            });
        }
        detections.push(per_view);
    }

    // Mask noise decisions must be drawn in deterministic order before the
    // parallel render.
    let mask_radius = cfg.mask_noise.round() as i32;
    let mask_ops: Vec<Vec<i32>> = (0..n)
        .map(|_| {
            (0..cfg.views)
                .map(|_| {
                    if mask_radius == 0 {
                        0
                    } else if rng.gen_bool(0.5) {
                        mask_radius
                    } else {
                        -mask_radius
                    }
                })
                .collect()
        })
        .collect();

    let masks: Vec<Vec<SilhouetteMask>> = poses
        .par_iter()
        .enumerate()
        .map(|(f, pose)| {
            cameras
                .iter()
                .enumerate()
                .map(|(v, cam)| {
                    let rendered = rasterize(&model, &shape, pose, cam)?;
                    Ok(rendered.mask.morph(mask_ops[f][v]))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let rest = model.forward(&shape, &PoseParams::rest(j))?;
    let truth = GroundTruth {
        model_seed: cfg.seed,
        beta,
        frames: poses
            .iter()
            .zip(&truth_joints)
            .map(|(pose, joints)| TruthFrame {
                pose: pose.clone(),
                joints: joints.clone(),
            })
            .collect(),
        rest_vertices: rest.vertices,
        swapped_cells,
    };

    Ok(SynthOutput {
        model,
        cameras,
        detections,
        masks,
        truth,
    })
}

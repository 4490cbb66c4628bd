//! Parametric articulated body: shape blendshapes over a template mesh,
//! forward kinematics over a 24-joint tree, linear blend skinning, and a
//! sparse joint regressor.
//!
//! The default model is generated procedurally: capsule-shaped limbs
//! triangulated into closed per-bone tubes, a joint ring centered exactly on
//! every joint (so the regressor is a uniform average over that ring), and
//! smooth falloff skinning weights along each bone.

use std::collections::HashMap;
use std::io::Write;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg::{rodrigues, Rigid, Vec3};
use crate::scalar::Real;

/// Number of shape coefficients.
pub const SHAPE_DIM: usize = 10;
/// Number of joints in the default kinematic tree.
pub const JOINT_COUNT: usize = 24;

/// Shape coefficients β (dimensionless).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapeParams {
    pub beta: Vec<f64>,
}

impl ShapeParams {
    pub fn zeros() -> Self {
        ShapeParams {
            beta: vec![0.0; SHAPE_DIM],
        }
    }
    pub fn new(beta: Vec<f64>) -> Self {
        ShapeParams { beta }
    }
}

/// Pose: root translation plus per-joint axis-angle rotations (raw
/// exponential-map coordinates, root orientation included).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseParams {
    pub root_translation: Vec3<f64>,
    pub joint_rotations: Vec<Vec3<f64>>,
}

impl PoseParams {
    pub fn rest(joint_count: usize) -> Self {
        PoseParams {
            root_translation: Vec3::zero(),
            joint_rotations: vec![Vec3::zero(); joint_count],
        }
    }

    /// Flat layout: [tx, ty, tz, r0x, r0y, r0z, r1x, ...].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 + 3 * self.joint_rotations.len());
        out.extend_from_slice(&[
            self.root_translation.x,
            self.root_translation.y,
            self.root_translation.z,
        ]);
        for r in &self.joint_rotations {
            out.extend_from_slice(&[r.x, r.y, r.z]);
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert!(flat.len() >= 3 && (flat.len() - 3) % 3 == 0);
        let joints = (flat.len() - 3) / 3;
        PoseParams {
            root_translation: Vec3::new(flat[0], flat[1], flat[2]),
            joint_rotations: (0..joints)
                .map(|j| Vec3::new(flat[3 + 3 * j], flat[4 + 3 * j], flat[5 + 3 * j]))
                .collect(),
        }
    }
}

/// Posed surface and skeleton.
#[derive(Clone, Debug)]
pub struct PosedBody {
    pub vertices: Vec<Vec3<f64>>,
    pub joints: Vec<Vec3<f64>>,
}

/// Fixed model parameters: template, blendshapes, tree, regressor, skinning.
#[derive(Clone, Debug)]
pub struct BodyModel {
    pub template_vertices: Vec<Vec3<f64>>,
    pub faces: Vec<[u32; 3]>,
    /// One displacement field per shape channel: `[channel][vertex]`.
    pub shape_blendshapes: Vec<Vec<Vec3<f64>>>,
    /// Parent per joint; `None` exactly once, at the root.
    pub kinematic_tree: Vec<Option<usize>>,
    /// Sparse rows: per joint, (vertex index, weight) with weights summing to 1.
    pub joint_regressor: Vec<Vec<(usize, f64)>>,
    /// Sparse rows: per vertex, (joint index, weight) with weights summing to 1.
    pub skinning_weights: Vec<Vec<(usize, f64)>>,
    pub joint_names: Vec<String>,

    // Derived quantities, rebuilt by `finalize`.
    regressed_template: Vec<Vec3<f64>>,
    regressed_blend: Vec<Vec<Vec3<f64>>>,
    /// Mesh edges as (v0, v1, face_a, face_b); boundary edges use face_b = u32::MAX.
    edges: Vec<(u32, u32, u32, u32)>,
}

impl BodyModel {
    pub fn new(
        template_vertices: Vec<Vec3<f64>>,
        faces: Vec<[u32; 3]>,
        shape_blendshapes: Vec<Vec<Vec3<f64>>>,
        kinematic_tree: Vec<Option<usize>>,
        joint_regressor: Vec<Vec<(usize, f64)>>,
        skinning_weights: Vec<Vec<(usize, f64)>>,
        joint_names: Vec<String>,
    ) -> Result<BodyModel> {
        let mut model = BodyModel {
            template_vertices,
            faces,
            shape_blendshapes,
            kinematic_tree,
            joint_regressor,
            skinning_weights,
            joint_names,
            regressed_template: Vec::new(),
            regressed_blend: Vec::new(),
            edges: Vec::new(),
        };
        model.validate()?;
        model.finalize();
        Ok(model)
    }

    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.kinematic_tree.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_blendshapes.len()
    }

    /// Mesh edges with adjacent faces, for silhouette-rim detection.
    pub fn edges(&self) -> &[(u32, u32, u32, u32)] {
        &self.edges
    }

    /// Indices of (left, right) joint pairs derived from the `l_`/`r_` name
    /// convention; the swap-injection pair list.
    pub fn left_right_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (i, name) in self.joint_names.iter().enumerate() {
            if let Some(stem) = name.strip_prefix("l_") {
                if let Some(j) = self
                    .joint_names
                    .iter()
                    .position(|n| n.strip_prefix("r_") == Some(stem))
                {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.template_vertices.len();
        let j = self.kinematic_tree.len();
        if self.joint_names.len() != j {
            return Err(Error::Validation("joint name count != joint count".into()));
        }
        let roots = self.kinematic_tree.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::Validation(format!(
                "kinematic tree must have exactly one root, found {roots}"
            )));
        }
        // Acyclic: every parent index must be smaller than its child.
        for (child, parent) in self.kinematic_tree.iter().enumerate() {
            if let Some(p) = parent {
                if *p >= child {
                    return Err(Error::Validation(format!(
                        "joint {child} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        if self.joint_regressor.len() != j {
            return Err(Error::Validation("regressor row count != joint count".into()));
        }
        for (row_idx, row) in self.joint_regressor.iter().enumerate() {
            let mut sum = 0.0;
            for &(vi, w) in row {
                if vi >= v {
                    return Err(Error::Validation(format!(
                        "regressor row {row_idx} references vertex {vi} out of {v}"
                    )));
                }
                if w < 0.0 {
                    return Err(Error::Validation("regressor weights must be nonnegative".into()));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "regressor row {row_idx} sums to {sum}, expected 1"
                )));
            }
        }
        if self.skinning_weights.len() != v {
            return Err(Error::Validation("skinning row count != vertex count".into()));
        }
        for (row_idx, row) in self.skinning_weights.iter().enumerate() {
            let mut sum = 0.0;
            for &(ji, w) in row {
                if ji >= j {
                    return Err(Error::Validation(format!(
                        "skinning row {row_idx} references joint {ji} out of {j}"
                    )));
                }
                if w < 0.0 {
                    return Err(Error::Validation("skinning weights must be nonnegative".into()));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "skinning row {row_idx} sums to {sum}, expected 1"
                )));
            }
        }
        for ch in &self.shape_blendshapes {
            if ch.len() != v {
                return Err(Error::Validation("blendshape channel size != vertex count".into()));
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i as usize >= v) {
                return Err(Error::Validation("face references out-of-range vertex".into()));
            }
        }
        Ok(())
    }

    fn finalize(&mut self) {
        self.regressed_template = self
            .joint_regressor
            .iter()
            .map(|row| {
                row.iter().fold(Vec3::zero(), |acc, &(vi, w)| {
                    acc + self.template_vertices[vi] * w
                })
            })
            .collect();
        self.regressed_blend = self
            .shape_blendshapes
            .iter()
            .map(|channel| {
                self.joint_regressor
                    .iter()
                    .map(|row| {
                        row.iter()
                            .fold(Vec3::zero(), |acc, &(vi, w)| acc + channel[vi] * w)
                    })
                    .collect()
            })
            .collect();

        let mut edge_faces: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                edge_faces.entry(key).or_default().push(fi as u32);
            }
        }
        let mut edges: Vec<(u32, u32, u32, u32)> = edge_faces
            .into_iter()
            .map(|((a, b), faces)| {
                let fa = faces[0];
                let fb = faces.get(1).copied().unwrap_or(u32::MAX);
                (a, b, fa, fb)
            })
            .collect();
        edges.sort_unstable();
        self.edges = edges;
    }

    fn check_shape_dim(&self, beta_len: usize) -> Result<()> {
        if beta_len != self.shape_dim() {
            return Err(Error::InvalidArgument(format!(
                "shape has {beta_len} coefficients, model expects {}",
                self.shape_dim()
            )));
        }
        Ok(())
    }

    /// Rest joints only: regressor applied to the shaped template, without
    /// touching the full vertex set.
    pub fn rest_joints<S: Real>(&self, beta: &[S]) -> Result<Vec<Vec3<S>>> {
        self.check_shape_dim(beta.len())?;
        let mut joints: Vec<Vec3<S>> = self
            .regressed_template
            .iter()
            .map(|&p| Vec3::lift(p))
            .collect();
        for (s, b) in beta.iter().enumerate() {
            for (j, joint) in joints.iter_mut().enumerate() {
                *joint += Vec3::lift(self.regressed_blend[s][j]) * *b;
            }
        }
        Ok(joints)
    }

    /// Shaped template vertices: template + Σ β_s · blendshape_s.
    pub fn shaped_vertices<S: Real>(&self, beta: &[S]) -> Result<Vec<Vec3<S>>> {
        self.check_shape_dim(beta.len())?;
        let mut verts: Vec<Vec3<S>> = self
            .template_vertices
            .iter()
            .map(|&p| Vec3::lift(p))
            .collect();
        for (s, b) in beta.iter().enumerate() {
            for (v, vert) in verts.iter_mut().enumerate() {
                *vert += Vec3::lift(self.shape_blendshapes[s][v]) * *b;
            }
        }
        Ok(verts)
    }

    /// Shaped vertices plus regressed rest joints (the shape stage).
    pub fn shape_template(
        &self,
        shape: &ShapeParams,
    ) -> Result<(Vec<Vec3<f64>>, Vec<Vec3<f64>>)> {
        let verts = self.shaped_vertices(&shape.beta)?;
        let joints = self.rest_joints(&shape.beta)?;
        Ok((verts, joints))
    }

    /// World transform of every joint: axis-angle rotations composed down the
    /// tree from the rest joints, with the root translation applied.
    pub fn joint_transforms<S: Real>(
        &self,
        rest_joints: &[Vec3<S>],
        trans: Vec3<S>,
        rots: &[Vec3<S>],
    ) -> Vec<Rigid<S>> {
        let j = self.joint_count();
        debug_assert_eq!(rest_joints.len(), j);
        debug_assert_eq!(rots.len(), j);
        let mut world: Vec<Rigid<S>> = Vec::with_capacity(j);
        for idx in 0..j {
            let rot = rodrigues(rots[idx]);
            let local = match self.kinematic_tree[idx] {
                None => Rigid {
                    rot,
                    t: rest_joints[idx] + trans,
                },
                Some(p) => {
                    let local = Rigid {
                        rot,
                        t: rest_joints[idx] - rest_joints[p],
                    };
                    world[p].compose(&local)
                }
            };
            world.push(local);
        }
        world
    }

    /// Skinning transforms: map a rest-space point bound to joint j into the
    /// posed space (`x -> W_j (x - rest_j)`).
    pub fn skinning_transforms<S: Real>(
        &self,
        rest_joints: &[Vec3<S>],
        world: &[Rigid<S>],
    ) -> Vec<Rigid<S>> {
        world
            .iter()
            .zip(rest_joints)
            .map(|(w, &r)| Rigid {
                rot: w.rot,
                t: w.t - w.rot.mul_vec(r),
            })
            .collect()
    }

    /// Posed joints only (generic scalar).
    pub fn pose_joints<S: Real>(
        &self,
        beta: &[S],
        trans: Vec3<S>,
        rots: &[Vec3<S>],
    ) -> Result<Vec<Vec3<S>>> {
        let rest = self.rest_joints(beta)?;
        let world = self.joint_transforms(&rest, trans, rots);
        Ok(world.into_iter().map(|w| w.t).collect())
    }

    /// Linear blend skinning of an arbitrary subset of vertices.
    pub fn skin_vertices<S: Real>(
        &self,
        shaped: &[Vec3<S>],
        skin: &[Rigid<S>],
        indices: &[usize],
        out: &mut Vec<Vec3<S>>,
    ) {
        out.clear();
        out.reserve(indices.len());
        for &vi in indices {
            let rest = shaped[vi];
            let mut posed = Vec3::zero();
            for &(ji, w) in &self.skinning_weights[vi] {
                posed += skin[ji].apply(rest) * S::constant(w);
            }
            out.push(posed);
        }
    }

    /// Pose only the listed vertices: shape, kinematics and skinning fused in
    /// one pass. Used by the silhouette surrogate, which touches a small
    /// vertex subset per view.
    pub fn pose_vertex_subset<S: Real>(
        &self,
        beta: &[S],
        trans: Vec3<S>,
        rots: &[Vec3<S>],
        indices: &[usize],
    ) -> Result<Vec<Vec3<S>>> {
        self.check_shape_dim(beta.len())?;
        let rest = self.rest_joints(beta)?;
        let world = self.joint_transforms(&rest, trans, rots);
        let skin = self.skinning_transforms(&rest, &world);
        let mut out = Vec::with_capacity(indices.len());
        for &vi in indices {
            let mut shaped = Vec3::lift(self.template_vertices[vi]);
            for (s, b) in beta.iter().enumerate() {
                shaped += Vec3::lift(self.shape_blendshapes[s][vi]) * *b;
            }
            let mut posed = Vec3::zero();
            for &(ji, w) in &self.skinning_weights[vi] {
                posed += skin[ji].apply(shaped) * S::constant(w);
            }
            out.push(posed);
        }
        Ok(out)
    }

    /// Full forward pass, generic scalar: posed joints and vertices.
    pub fn forward_generic<S: Real>(
        &self,
        beta: &[S],
        trans: Vec3<S>,
        rots: &[Vec3<S>],
    ) -> Result<(Vec<Vec3<S>>, Vec<Vec3<S>>)> {
        let shaped = self.shaped_vertices(beta)?;
        let rest = self.rest_joints(beta)?;
        let world = self.joint_transforms(&rest, trans, rots);
        let skin = self.skinning_transforms(&rest, &world);
        let joints: Vec<Vec3<S>> = world.iter().map(|w| w.t).collect();
        let mut verts = Vec::new();
        let all: Vec<usize> = (0..self.vertex_count()).collect();
        self.skin_vertices(&shaped, &skin, &all, &mut verts);
        Ok((joints, verts))
    }

    /// The body function M(β, θ; Φ).
    pub fn forward(&self, shape: &ShapeParams, pose: &PoseParams) -> Result<PosedBody> {
        if pose.joint_rotations.len() != self.joint_count() {
            return Err(Error::InvalidArgument(format!(
                "pose has {} joint rotations, model expects {}",
                pose.joint_rotations.len(),
                self.joint_count()
            )));
        }
        let (joints, vertices) = self.forward_generic(
            &shape.beta,
            pose.root_translation,
            &pose.joint_rotations,
        )?;
        Ok(PosedBody { vertices, joints })
    }
}

/// Write a mesh as Wavefront OBJ (1-based face indices).
pub fn export_obj(
    vertices: &[Vec3<f64>],
    faces: &[[u32; 3]],
    w: &mut impl Write,
) -> std::io::Result<()> {
    for v in vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

// --------------------------------------------------------------------------
// Procedural default model
// --------------------------------------------------------------------------

const JOINT_TABLE: [(&str, Option<usize>, [f64; 3]); JOINT_COUNT] = [
    ("pelvis", None, [0.0, 0.0, 0.0]),
    ("l_hip", Some(0), [0.09, -0.06, 0.0]),
    ("r_hip", Some(0), [-0.09, -0.06, 0.0]),
    ("spine1", Some(0), [0.0, 0.11, 0.0]),
    ("l_knee", Some(1), [0.10, -0.48, 0.0]),
    ("r_knee", Some(2), [-0.10, -0.48, 0.0]),
    ("spine2", Some(3), [0.0, 0.24, 0.0]),
    ("l_ankle", Some(4), [0.105, -0.87, 0.0]),
    ("r_ankle", Some(5), [-0.105, -0.87, 0.0]),
    ("spine3", Some(6), [0.0, 0.35, 0.0]),
    ("l_foot", Some(7), [0.11, -0.95, 0.13]),
    ("r_foot", Some(8), [-0.11, -0.95, 0.13]),
    ("neck", Some(9), [0.0, 0.47, 0.0]),
    ("l_collar", Some(9), [0.07, 0.42, 0.0]),
    ("r_collar", Some(9), [-0.07, 0.42, 0.0]),
    ("head", Some(12), [0.0, 0.57, 0.0]),
    ("l_shoulder", Some(13), [0.18, 0.44, 0.0]),
    ("r_shoulder", Some(14), [-0.18, 0.44, 0.0]),
    ("l_elbow", Some(16), [0.45, 0.43, 0.0]),
    ("r_elbow", Some(17), [-0.45, 0.43, 0.0]),
    ("l_wrist", Some(18), [0.69, 0.42, 0.0]),
    ("r_wrist", Some(19), [-0.69, 0.42, 0.0]),
    ("l_hand", Some(20), [0.78, 0.415, 0.0]),
    ("r_hand", Some(21), [-0.78, 0.415, 0.0]),
];

fn bone_radius(child: usize, bulk: f64, head: f64) -> f64 {
    let base = match JOINT_TABLE[child].0 {
        "l_hip" | "r_hip" => 0.080,
        "spine1" => 0.110,
        "spine2" => 0.120,
        "spine3" => 0.115,
        "l_knee" | "r_knee" => 0.072,
        "l_ankle" | "r_ankle" => 0.052,
        "l_foot" | "r_foot" => 0.038,
        "neck" => 0.055,
        "l_collar" | "r_collar" => 0.055,
        "head" => 0.090,
        "l_shoulder" | "r_shoulder" => 0.050,
        "l_elbow" | "r_elbow" => 0.044,
        "l_wrist" | "r_wrist" => 0.038,
        "l_hand" | "r_hand" => 0.034,
        other => unreachable!("unknown joint {other}"),
    };
    if JOINT_TABLE[child].0 == "head" {
        base * head
    } else {
        base * bulk
    }
}

const RING_SEGMENTS: usize = 12;
const RING_PARAMS: [f64; 4] = [0.0, 0.35, 0.7, 1.0];

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Blend toward the bone's end joint, reaching 1 at the far end.
fn child_weight(t: f64) -> f64 {
    smoothstep((t - 0.55) / 0.45)
}

struct MeshBuilder {
    vertices: Vec<Vec3<f64>>,
    faces: Vec<[u32; 3]>,
    skinning: Vec<Vec<(usize, f64)>>,
    /// Joint ring vertex indices for the regressor, per joint.
    joint_rings: Vec<Vec<usize>>,
    /// For blendshape baking: per vertex, the bone's child joint.
    vertex_bone: Vec<usize>,
    /// Radial offset from the bone axis at rest (zero for pole vertices).
    vertex_radial: Vec<Vec3<f64>>,
}

fn orthobasis(axis: Vec3<f64>) -> (Vec3<f64>, Vec3<f64>) {
    let reference = if axis.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let u = axis.cross(reference).normalized();
    let w = axis.cross(u).normalized();
    (u, w)
}

fn build_bone(
    builder: &mut MeshBuilder,
    parent: usize,
    child: usize,
    p0: Vec3<f64>,
    p1: Vec3<f64>,
    radius: f64,
) {
    let axis = (p1 - p0).normalized();
    let (u, w) = orthobasis(axis);
    let mut rings: Vec<Vec<u32>> = Vec::new();

    for (ri, &t) in RING_PARAMS.iter().enumerate() {
        let center = p0 + (p1 - p0) * t;
        let wc = child_weight(t);
        let mut ring = Vec::with_capacity(RING_SEGMENTS);
        for k in 0..RING_SEGMENTS {
            let phi = 2.0 * std::f64::consts::PI * (k as f64) / (RING_SEGMENTS as f64);
            let radial = (u * phi.cos() + w * phi.sin()) * radius;
            let idx = builder.vertices.len() as u32;
            builder.vertices.push(center + radial);
            builder.skinning.push(weights_for(parent, child, wc));
            builder.vertex_bone.push(child);
            builder.vertex_radial.push(radial);
            ring.push(idx);
        }
        if ri == 0 {
            builder.joint_rings[parent].extend(ring.iter().map(|&i| i as usize));
        }
        if ri == RING_PARAMS.len() - 1 {
            builder.joint_rings[child].extend(ring.iter().map(|&i| i as usize));
        }
        rings.push(ring);
    }

    // End-cap poles slightly past the joints.
    let pole0 = builder.vertices.len() as u32;
    builder.vertices.push(p0 - axis * (radius * 0.8));
    builder.skinning.push(weights_for(parent, child, child_weight(0.0)));
    builder.vertex_bone.push(child);
    builder.vertex_radial.push(Vec3::zero());
    let pole1 = builder.vertices.len() as u32;
    builder.vertices.push(p1 + axis * (radius * 0.8));
    builder.skinning.push(weights_for(parent, child, child_weight(1.0)));
    builder.vertex_bone.push(child);
    builder.vertex_radial.push(Vec3::zero());

    for band in rings.windows(2) {
        let (a, b) = (&band[0], &band[1]);
        for k in 0..RING_SEGMENTS {
            let k2 = (k + 1) % RING_SEGMENTS;
            builder.faces.push([a[k], b[k], a[k2]]);
            builder.faces.push([a[k2], b[k], b[k2]]);
        }
    }
    let first = &rings[0];
    let last = &rings[rings.len() - 1];
    for k in 0..RING_SEGMENTS {
        let k2 = (k + 1) % RING_SEGMENTS;
        builder.faces.push([pole0, first[k2], first[k]]);
        builder.faces.push([pole1, last[k], last[k2]]);
    }
}

fn weights_for(parent: usize, child: usize, wc: f64) -> Vec<(usize, f64)> {
    if wc <= 0.0 {
        vec![(parent, 1.0)]
    } else if wc >= 1.0 {
        vec![(child, 1.0)]
    } else {
        vec![(parent, 1.0 - wc), (child, wc)]
    }
}

/// Procedurally generate the default humanoid. Deterministic per seed: the
/// seed jitters limb proportions and girth so different seeds give different
/// bodies with identical topology.
pub fn make_default_model(seed: u64) -> BodyModel {
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(seed));
    let mut jitter = || 1.0 + rng.gen_range(-0.08..0.08);
    let f_leg = jitter();
    let f_arm = jitter();
    let f_torso = jitter();
    let f_width = jitter();
    let f_bulk = jitter();
    let f_head = jitter();

    let mut joints: Vec<Vec3<f64>> = JOINT_TABLE
        .iter()
        .map(|&(_, _, p)| Vec3::new(p[0], p[1], p[2]))
        .collect();
    let hip_y = JOINT_TABLE[1].2[1];
    let shoulder_x = JOINT_TABLE[16].2[0];
    for (i, &(name, _, _)) in JOINT_TABLE.iter().enumerate() {
        let p = &mut joints[i];
        match name {
            "l_knee" | "r_knee" | "l_ankle" | "r_ankle" | "l_foot" | "r_foot" => {
                p.y = hip_y + (p.y - hip_y) * f_leg;
            }
            "spine1" | "spine2" | "spine3" | "neck" | "head" => {
                p.y *= f_torso;
            }
            _ => {}
        }
        match name {
            "l_collar" | "r_collar" | "l_shoulder" | "r_shoulder" => {
                p.x *= f_width;
                p.y *= f_torso;
            }
            "l_hip" | "r_hip" => {
                p.x *= f_width;
            }
            "l_elbow" | "r_elbow" | "l_wrist" | "r_wrist" | "l_hand" | "r_hand" => {
                let sign = p.x.signum();
                p.x = sign * (shoulder_x * f_width + (p.x.abs() - shoulder_x) * f_arm);
                p.y *= f_torso;
            }
            _ => {}
        }
    }

    let joint_count = JOINT_TABLE.len();
    let mut builder = MeshBuilder {
        vertices: Vec::new(),
        faces: Vec::new(),
        skinning: Vec::new(),
        joint_rings: vec![Vec::new(); joint_count],
        vertex_bone: Vec::new(),
        vertex_radial: Vec::new(),
    };
    for (child, &(_, parent, _)) in JOINT_TABLE.iter().enumerate() {
        if let Some(parent) = parent {
            let radius = bone_radius(child, f_bulk, f_head);
            build_bone(
                &mut builder,
                parent,
                child,
                joints[parent],
                joints[child],
                radius,
            );
        }
    }

    // Regressor: uniform average over one ring centered on each joint. A
    // joint may have collected rings from several bones; the first ring is
    // enough and keeps rows short.
    let joint_regressor: Vec<Vec<(usize, f64)>> = builder
        .joint_rings
        .iter()
        .map(|ring| {
            let take = &ring[..RING_SEGMENTS.min(ring.len())];
            let w = 1.0 / take.len() as f64;
            take.iter().map(|&vi| (vi, w)).collect()
        })
        .collect();

    let blendshapes = bake_blendshapes(&builder, &joints);

    BodyModel::new(
        builder.vertices,
        builder.faces,
        blendshapes,
        JOINT_TABLE.iter().map(|&(_, p, _)| p).collect(),
        joint_regressor,
        builder.skinning,
        JOINT_TABLE.iter().map(|&(n, _, _)| n.to_string()).collect(),
    )
    .expect("procedural model must satisfy its own invariants")
}

fn is_leg(bone: usize) -> bool {
    matches!(
        JOINT_TABLE[bone].0,
        "l_knee" | "r_knee" | "l_ankle" | "r_ankle" | "l_foot" | "r_foot"
    )
}

fn is_arm(bone: usize) -> bool {
    matches!(
        JOINT_TABLE[bone].0,
        "l_shoulder" | "r_shoulder" | "l_elbow" | "r_elbow" | "l_wrist" | "r_wrist" | "l_hand"
            | "r_hand"
    )
}

fn is_torso(bone: usize) -> bool {
    matches!(
        JOINT_TABLE[bone].0,
        "l_hip" | "r_hip" | "spine1" | "spine2" | "spine3" | "neck" | "l_collar" | "r_collar"
    )
}

/// Bake the ten shape channels as per-vertex displacement fields.
///
/// Channel 0 scales overall height, channel 1 overall girth; the rest move
/// regional proportions. Radial channels displace ring vertices away from
/// the bone axis so ring centroids (hence joints) stay put.
fn bake_blendshapes(builder: &MeshBuilder, joints: &[Vec3<f64>]) -> Vec<Vec<Vec3<f64>>> {
    let v = builder.vertices.len();
    let mut channels = vec![vec![Vec3::zero(); v]; SHAPE_DIM];
    let hip_y = joints[1].y;
    let collar_x = joints[13].x.abs();
    let neck_y = joints[12].y;
    let head_center = joints[15];

    for vi in 0..v {
        let p = builder.vertices[vi];
        let bone = builder.vertex_bone[vi];
        let radial = builder.vertex_radial[vi];

        // 0: overall height (proportional vertical stretch about the pelvis).
        channels[0][vi] = Vec3::new(0.0, p.y * 0.06, 0.0);
        // 1: overall girth.
        channels[1][vi] = radial * 0.30;
        // 2: torso volume.
        if is_torso(bone) {
            channels[2][vi] = radial * 0.35;
        }
        // 3: limb length.
        if is_leg(bone) {
            channels[3][vi] = Vec3::new(0.0, (p.y - hip_y) * 0.07, 0.0);
        } else if is_arm(bone) {
            let sign = p.x.signum();
            let beyond = (p.x.abs() - collar_x).max(0.0);
            channels[3][vi] = Vec3::new(sign * beyond * 0.07, 0.0, 0.0);
        }
        // 4: shoulder width.
        if is_arm(bone) || matches!(JOINT_TABLE[bone].0, "l_collar" | "r_collar") {
            channels[4][vi] = Vec3::new(p.x.signum() * 0.02, 0.0, 0.0);
        }
        // 5: head size.
        if JOINT_TABLE[bone].0 == "head" {
            channels[5][vi] = (p - head_center) * 0.25;
        }
        // 6: leg girth.
        if is_leg(bone) {
            channels[6][vi] = radial * 0.25;
        }
        // 7: arm girth.
        if is_arm(bone) {
            channels[7][vi] = radial * 0.25;
        }
        // 8: torso length (stretch between pelvis and neck, shift above).
        let ramp = (p.y / neck_y).clamp(0.0, 1.0);
        if p.y > 0.0 {
            channels[8][vi] = Vec3::new(0.0, ramp * neck_y * 0.05, 0.0);
        }
        // 9: hip width.
        if is_leg(bone) || matches!(JOINT_TABLE[bone].0, "l_hip" | "r_hip") {
            channels[9][vi] = Vec3::new(p.x.signum() * 0.018, 0.0, 0.0);
        }
    }

    // Re-center each channel on the pelvis regressor ring so the root rest
    // position stays at the origin for every shape (this is what makes the
    // forward pass exactly equivariant to rigid moves of the root).
    let pelvis_ring = &builder.joint_rings[0][..RING_SEGMENTS.min(builder.joint_rings[0].len())];
    for channel in &mut channels {
        let mean = pelvis_ring
            .iter()
            .fold(Vec3::zero(), |acc, &vi| acc + channel[vi])
            * (1.0 / pelvis_ring.len() as f64);
        for d in channel.iter_mut() {
            *d = *d - mean;
        }
    }
    channels
}

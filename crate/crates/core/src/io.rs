//! File formats: the detections document, the cameras document, mask
//! directories, the fitted-sequence document and the synthetic ground truth.
//! All structured documents are JSON with stable field order; masks are
//! binary PGM.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, PoseParams};
use crate::camera::Camera;
use crate::energy::JointDetections;
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec2, Vec3};
use crate::pipeline::{FrameObservations, SequenceFit};
use crate::silhouette::{read_mask_bytes, write_pgm, SilhouetteMask};

/// Detections for a whole sequence: explicit dimensions plus a flat numeric
/// array in (view, frame, joint, [x, y, w]) order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionsDoc {
    pub views: usize,
    pub frames: usize,
    pub joints: usize,
    pub data: Vec<f64>,
}

impl DetectionsDoc {
    pub fn from_detections(dets: &[Vec<JointDetections>]) -> DetectionsDoc {
        let frames = dets.len();
        let views = dets.first().map_or(0, |f| f.len());
        let joints = dets
            .first()
            .and_then(|f| f.first())
            .map_or(0, |d| d.joint_count());
        let mut data = Vec::with_capacity(views * frames * joints * 3);
        for v in 0..views {
            for frame in dets {
                let d = &frame[v];
                for j in 0..joints {
                    data.push(d.points[j].x);
                    data.push(d.points[j].y);
                    data.push(d.confidences[j]);
                }
            }
        }
        DetectionsDoc {
            views,
            frames,
            joints,
            data,
        }
    }

    /// Expand into per-frame, per-view detections, clamping confidences into
    /// [0,1] (with a warning) and flagging non-finite positions as missing.
    pub fn into_detections(
        &self,
        warnings: &mut Vec<String>,
    ) -> Result<Vec<Vec<JointDetections>>> {
        let expected = self.views * self.frames * self.joints * 3;
        if self.data.len() != expected {
            return Err(Error::Validation(format!(
                "detections data has {} values, expected {} ({} views x {} frames x {} joints x 3)",
                self.data.len(),
                expected,
                self.views,
                self.frames,
                self.joints
            )));
        }
        let mut out =
            vec![Vec::with_capacity(self.views); self.frames];
        for v in 0..self.views {
            for f in 0..self.frames {
                let mut points = Vec::with_capacity(self.joints);
                let mut confidences = Vec::with_capacity(self.joints);
                for j in 0..self.joints {
                    let base = ((v * self.frames + f) * self.joints + j) * 3;
                    let (x, y, mut w) = (self.data[base], self.data[base + 1], self.data[base + 2]);
                    if !(0.0..=1.0).contains(&w) {
                        warnings.push(format!(
                            "view {v} frame {f} joint {j}: confidence {w} clamped to [0,1]"
                        ));
                        w = w.clamp(0.0, 1.0);
                    }
                    if w > 0.0 && (!x.is_finite() || !y.is_finite()) {
                        warnings.push(format!(
                            "view {v} frame {f} joint {j}: non-finite position, marked missing"
                        ));
                        w = 0.0;
                    }
                    points.push(Vec2::new(x, y));
                    confidences.push(w);
                }
                out[f].push(JointDetections {
                    points,
                    confidences,
                });
            }
        }
        Ok(out)
    }
}

/// One view's calibration: rotation row-major, then translation, focal,
/// principal point and image size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
    pub image_size: [u32; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CamerasDoc {
    pub views: Vec<CameraRecord>,
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera) -> CameraRecord {
        let m = &cam.rotation.m;
        CameraRecord {
            rotation: [
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ],
            translation: [cam.translation.x, cam.translation.y, cam.translation.z],
            focal: [cam.focal.x, cam.focal.y],
            principal_point: [cam.principal_point.x, cam.principal_point.y],
            image_size: [cam.image_size.0, cam.image_size.1],
        }
    }

    pub fn into_camera(&self) -> Result<Camera> {
        let r = &self.rotation;
        let cam = Camera {
            rotation: Mat3::from_rows(
                [r[0], r[1], r[2]],
                [r[3], r[4], r[5]],
                [r[6], r[7], r[8]],
            ),
            translation: Vec3::new(self.translation[0], self.translation[1], self.translation[2]),
            focal: Vec2::new(self.focal[0], self.focal[1]),
            principal_point: Vec2::new(self.principal_point[0], self.principal_point[1]),
            image_size: (self.image_size[0], self.image_size[1]),
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// A loaded sequence: detections, cameras, optional masks.
#[derive(Debug)]
pub struct SequenceBundle {
    /// Indexed [frame][view].
    pub detections: Vec<Vec<JointDetections>>,
    pub cameras: Vec<Camera>,
    /// Indexed [frame][view]; None when no masks directory was given.
    pub masks: Option<Vec<Vec<Arc<SilhouetteMask>>>>,
    pub warnings: Vec<String>,
}

impl SequenceBundle {
    pub fn frames(&self) -> usize {
        self.detections.len()
    }

    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    /// Per-frame observations for the pipeline.
    pub fn observations(&self) -> Vec<FrameObservations> {
        (0..self.frames())
            .map(|f| FrameObservations {
                detections: self.detections[f].clone(),
                masks: match &self.masks {
                    Some(m) => m[f].iter().map(|m| Some(m.clone())).collect(),
                    None => vec![None; self.views()],
                },
            })
            .collect()
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: format!("{e} (line {}, column {})", e.line(), e.column()),
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    buf.push(b'\n');
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Mask filename convention under the masks directory.
pub fn mask_filename(view: usize, frame: usize) -> String {
    format!("view{view}_frame{frame}.pgm")
}

/// Load and validate a sequence bundle. The masks directory must contain one
/// file per (view, frame); confidences are clamped with warnings.
pub fn load_bundle(
    detections_path: &Path,
    cameras_path: &Path,
    masks_dir: Option<&Path>,
) -> Result<SequenceBundle> {
    let mut warnings = Vec::new();
    let doc: DetectionsDoc = read_json(detections_path)?;
    let cams_doc: CamerasDoc = read_json(cameras_path)?;
    let cameras: Vec<Camera> = cams_doc
        .views
        .iter()
        .map(|c| c.into_camera())
        .collect::<Result<_>>()?;
    if cameras.len() != doc.views {
        return Err(Error::Validation(format!(
            "{} cameras but detections declare {} views",
            cameras.len(),
            doc.views
        )));
    }
    let detections = doc.into_detections(&mut warnings)?;

    let masks = match masks_dir {
        None => None,
        Some(dir) => {
            let mut per_frame = Vec::with_capacity(doc.frames);
            for f in 0..doc.frames {
                let mut per_view = Vec::with_capacity(doc.views);
                for v in 0..doc.views {
                    let path = dir.join(mask_filename(v, f));
                    let bytes = fs::read(&path).map_err(|_| {
                        Error::Validation(format!(
                            "masks directory is missing {}",
                            path.display()
                        ))
                    })?;
                    let mask = read_mask_bytes(&bytes, &path.display().to_string())?;
                    let cam = &cameras[v];
                    if mask.width != cam.image_size.0 as usize
                        || mask.height != cam.image_size.1 as usize
                    {
                        return Err(Error::Validation(format!(
                            "{}: mask is {}x{} but view {v} images are {}x{}",
                            path.display(),
                            mask.width,
                            mask.height,
                            cam.image_size.0,
                            cam.image_size.1
                        )));
                    }
                    per_view.push(Arc::new(mask));
                }
                per_frame.push(per_view);
            }
            Some(per_frame)
        }
    };

    Ok(SequenceBundle {
        detections,
        cameras,
        masks,
        warnings,
    })
}

/// Load a bundle with cameras supplied directly (the monocular path where a
/// default camera is synthesized instead of read from a file). Mask
/// dimension checks are skipped against the synthesized camera only when
/// they match its image size.
pub fn load_bundle_with_cameras(
    detections_path: &Path,
    cameras: Vec<Camera>,
    masks_dir: Option<&Path>,
) -> Result<SequenceBundle> {
    let mut warnings = Vec::new();
    let doc: DetectionsDoc = read_json(detections_path)?;
    if cameras.len() != doc.views {
        return Err(Error::Validation(format!(
            "{} cameras but detections declare {} views",
            cameras.len(),
            doc.views
        )));
    }
    let detections = doc.into_detections(&mut warnings)?;
    let masks = match masks_dir {
        None => None,
        Some(dir) => {
            let mut per_frame = Vec::with_capacity(doc.frames);
            for f in 0..doc.frames {
                let mut per_view = Vec::with_capacity(doc.views);
                for v in 0..doc.views {
                    let path = dir.join(mask_filename(v, f));
                    let bytes = fs::read(&path).map_err(|_| {
                        Error::Validation(format!(
                            "masks directory is missing {}",
                            path.display()
                        ))
                    })?;
                    per_view.push(Arc::new(read_mask_bytes(&bytes, &path.display().to_string())?));
                }
                per_frame.push(per_view);
            }
            Some(per_frame)
        }
    };
    Ok(SequenceBundle {
        detections,
        cameras,
        masks,
        warnings,
    })
}

/// Write the bundle files produced by the synthesizer.
pub fn write_bundle(
    dir: &Path,
    detections: &[Vec<JointDetections>],
    cameras: &[Camera],
    masks: &[Vec<SilhouetteMask>],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_json(
        &DetectionsDoc::from_detections(detections),
        &dir.join("detections.json"),
    )?;
    write_json(
        &CamerasDoc {
            views: cameras.iter().map(CameraRecord::from_camera).collect(),
        },
        &dir.join("cameras.json"),
    )?;
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(masks_dir.display().to_string(), e))?;
    for (f, per_view) in masks.iter().enumerate() {
        for (v, mask) in per_view.iter().enumerate() {
            let path = masks_dir.join(mask_filename(v, f));
            let mut file =
                fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            write_pgm(mask, &mut file).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    Ok(())
}

/// Synthetic ground truth emitted next to a generated bundle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model_seed: u64,
    pub beta: Vec<f64>,
    pub frames: Vec<TruthFrame>,
    /// Rest-pose vertices at the true shape.
    pub rest_vertices: Vec<Vec3<f64>>,
    /// (frame, view) cells whose left/right detections were swapped.
    pub swapped_cells: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthFrame {
    pub pose: PoseParams,
    pub joints: Vec<Vec3<f64>>,
}

pub fn write_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    write_json(truth, path)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    read_json(path)
}

/// Write the fitted sequence: `poses.json` plus optional per-frame OBJ
/// meshes at the median shape. Returns the paths written.
pub fn write_results(
    fit: &SequenceFit,
    model: &BodyModel,
    dir: &Path,
    with_obj: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut written = Vec::new();
    let poses_path = dir.join("poses.json");
    write_json(fit, &poses_path)?;
    written.push(poses_path);
    if with_obj {
        for (t, frame) in fit.frames.iter().enumerate() {
            let posed = model.forward(&fit.shape, &frame.final_pose)?;
            let path = dir.join(format!("frame{t}.obj"));
            let mut file =
                fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let mut buf = std::io::BufWriter::new(&mut file);
            crate::body::export_obj(&posed.vertices, &model.faces, &mut buf)
                .and_then(|_| buf.flush())
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn read_results(path: &Path) -> Result<SequenceFit> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Model file: self-describing JSON with explicit dimensions and row-major
// dense arrays.
// ---------------------------------------------------------------------------

/// On-disk model layout: explicit (V, J, S) dimensions; `template` is V x 3
/// row-major, `blendshapes` is S x V x 3, `joint_regressor` J x V and
/// `skinning_weights` V x J, both dense row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDoc {
    pub vertices: usize,
    pub joints: usize,
    pub shape_dim: usize,
    pub joint_names: Vec<String>,
    /// Parent index per joint; -1 at the root.
    pub parents: Vec<i64>,
    pub template: Vec<f64>,
    pub faces: Vec<u32>,
    pub blendshapes: Vec<f64>,
    pub joint_regressor: Vec<f64>,
    pub skinning_weights: Vec<f64>,
}

impl ModelDoc {
    pub fn from_model(model: &BodyModel) -> ModelDoc {
        let v = model.vertex_count();
        let j = model.joint_count();
        let s = model.shape_dim();
        let mut template = Vec::with_capacity(v * 3);
        for p in &model.template_vertices {
            template.extend_from_slice(&[p.x, p.y, p.z]);
        }
        let mut blendshapes = Vec::with_capacity(s * v * 3);
        for channel in &model.shape_blendshapes {
            for d in channel {
                blendshapes.extend_from_slice(&[d.x, d.y, d.z]);
            }
        }
        let mut joint_regressor = vec![0.0; j * v];
        for (ji, row) in model.joint_regressor.iter().enumerate() {
            for &(vi, w) in row {
                joint_regressor[ji * v + vi] = w;
            }
        }
        let mut skinning_weights = vec![0.0; v * j];
        for (vi, row) in model.skinning_weights.iter().enumerate() {
            for &(ji, w) in row {
                skinning_weights[vi * j + ji] = w;
            }
        }
        ModelDoc {
            vertices: v,
            joints: j,
            shape_dim: s,
            joint_names: model.joint_names.clone(),
            parents: model
                .kinematic_tree
                .iter()
                .map(|p| p.map_or(-1, |i| i as i64))
                .collect(),
            template,
            faces: model.faces.iter().flatten().copied().collect(),
            blendshapes,
            joint_regressor,
            skinning_weights,
        }
    }

    pub fn into_model(&self) -> Result<BodyModel> {
        let (v, j, s) = (self.vertices, self.joints, self.shape_dim);
        if self.template.len() != v * 3
            || self.blendshapes.len() != s * v * 3
            || self.joint_regressor.len() != j * v
            || self.skinning_weights.len() != v * j
            || self.faces.len() % 3 != 0
            || self.parents.len() != j
        {
            return Err(Error::Validation("model arrays do not match dimensions".into()));
        }
        let template: Vec<Vec3<f64>> = self
            .template
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        let blendshapes: Vec<Vec<Vec3<f64>>> = (0..s)
            .map(|ch| {
                self.blendshapes[ch * v * 3..(ch + 1) * v * 3]
                    .chunks_exact(3)
                    .map(|c| Vec3::new(c[0], c[1], c[2]))
                    .collect()
            })
            .collect();
        let joint_regressor: Vec<Vec<(usize, f64)>> = (0..j)
            .map(|ji| {
                (0..v)
                    .filter_map(|vi| {
                        let w = self.joint_regressor[ji * v + vi];
                        (w != 0.0).then_some((vi, w))
                    })
                    .collect()
            })
            .collect();
        let skinning_weights: Vec<Vec<(usize, f64)>> = (0..v)
            .map(|vi| {
                (0..j)
                    .filter_map(|ji| {
                        let w = self.skinning_weights[vi * j + ji];
                        (w != 0.0).then_some((ji, w))
                    })
                    .collect()
            })
            .collect();
        BodyModel::new(
            template,
            self.faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            blendshapes,
            self.parents
                .iter()
                .map(|&p| if p < 0 { None } else { Some(p as usize) })
                .collect(),
            joint_regressor,
            skinning_weights,
            self.joint_names.clone(),
        )
    }
}

pub fn write_model(model: &BodyModel, path: &Path) -> Result<()> {
    write_json(&ModelDoc::from_model(model), path)
}

pub fn read_model(path: &Path) -> Result<BodyModel> {
    read_json::<ModelDoc>(path)?.into_model()
}

/// Pose-prior sidecar document.
pub fn write_prior(prior: &crate::energy::PosePrior, path: &Path) -> Result<()> {
    write_json(prior, path)
}

pub fn read_prior(path: &Path) -> Result<crate::energy::PosePrior> {
    read_json(path)
}

//! Evaluation against ground truth: per-frame 3D joint error,
//! Procrustes-aligned error (closed-form similarity alignment per frame),
//! and the rest-pose vertex-to-vertex shape error. Errors are reported in
//! millimeters.

use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, PoseParams};
use crate::error::{Error, Result};
use crate::io::GroundTruth;
use crate::linalg::{Mat3, Vec3};
use crate::pipeline::SequenceFit;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalStage {
    /// Poses after the temporal stage.
    Final,
    /// Per-frame results before the temporal stage.
    StageOne,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub procrustes: bool,
    pub vertex_error: bool,
    pub stage: EvalStage,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            procrustes: false,
            vertex_error: false,
            stage: EvalStage::Final,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean joint error per frame (mm).
    pub frame_errors_mm: Vec<f64>,
    pub mean_mm: f64,
    pub median_mm: f64,
    pub procrustes_frame_errors_mm: Option<Vec<f64>>,
    pub procrustes_mean_mm: Option<f64>,
    /// Mean rest-pose vertex-to-vertex distance (mm).
    pub vertex_error_mm: Option<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Similarity transform (s, R, t) minimizing Σ ‖s·R·x + t − y‖².
pub fn procrustes_align(src: &[Vec3<f64>], dst: &[Vec3<f64>]) -> (f64, Mat3<f64>, Vec3<f64>) {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let cx = src.iter().fold(Vec3::zero(), |a, &p| a + p) * (1.0 / n);
    let cy = dst.iter().fold(Vec3::zero(), |a, &p| a + p) * (1.0 / n);
    // Cross-covariance M = Σ x̃ ỹᵀ and source variance.
    let mut m = [[0.0f64; 3]; 3];
    let mut var_x = 0.0;
    for (&x, &y) in src.iter().zip(dst) {
        let xt = x - cx;
        let yt = y - cy;
        let xa = xt.to_array();
        let ya = yt.to_array();
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += xa[r] * ya[c];
            }
        }
        var_x += xt.norm_sq();
    }
    // SVD of M via the eigendecomposition of MᵀM.
    let mut mtm = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            mtm[r][c] = (0..3).map(|k| m[k][r] * m[k][c]).sum();
        }
    }
    let (evals, v) = jacobi_eigen_3x3(mtm);
    // Singular values, descending with the eigenvectors.
    let sigma: Vec<f64> = evals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    // U columns = M v / sigma; regularize tiny singular values.
    let mv = |col: usize| -> Vec3<f64> {
        Vec3::new(
            m[0][0] * v.m[0][col] + m[0][1] * v.m[1][col] + m[0][2] * v.m[2][col],
            m[1][0] * v.m[0][col] + m[1][1] * v.m[1][col] + m[1][2] * v.m[2][col],
            m[2][0] * v.m[0][col] + m[2][1] * v.m[1][col] + m[2][2] * v.m[2][col],
        )
    };
    let mut u_cols: Vec<Vec3<f64>> = Vec::with_capacity(3);
    for col in 0..3 {
        let col_v = mv(col);
        if sigma[col] > 1e-12 {
            u_cols.push(col_v * (1.0 / sigma[col]));
        } else {
            // Complete with a vector orthogonal to the others.
            let fallback = if col == 2 {
                u_cols[0].cross(u_cols[1])
            } else {
                Vec3::new(1.0, 0.0, 0.0)
            };
            u_cols.push(fallback.normalized());
        }
    }
    // R = V D Uᵀ with D fixing a possible reflection. In row terms:
    // R[r][c] = Σ_k V[r][k] d_k U[c][k].
    let u = Mat3::from_rows(
        [u_cols[0].x, u_cols[1].x, u_cols[2].x],
        [u_cols[0].y, u_cols[1].y, u_cols[2].y],
        [u_cols[0].z, u_cols[1].z, u_cols[2].z],
    );
    let det_vu = v.mul_mat(&u.transpose()).determinant();
    let d = [1.0, 1.0, if det_vu < 0.0 { -1.0 } else { 1.0 }];
    let mut rot = Mat3::identity();
    for r in 0..3 {
        for c in 0..3 {
            rot.m[r][c] = (0..3).map(|k| v.m[r][k] * d[k] * u.m[c][k]).sum();
        }
    }
    // Optimal scale: tr(D Σ) / var_x. The transform maps src toward dst,
    // note R here maps src-space into dst-space as y ≈ s·Rᵀ?… keep the
    // convention y ≈ s·R_out·x + t with R_out derived below.
    let trace_ds: f64 = (0..3).map(|k| d[k] * sigma[k]).sum();
    let scale = if var_x > 0.0 { trace_ds / var_x } else { 1.0 };
    // rot maps x̃ into ỹ: verify orientation by construction (V D Uᵀ maps
    // the row space correctly for M = Σ x̃ ỹᵀ when applied as R x̃).
    let t = cy - rot.mul_vec(cx) * scale;
    (scale, rot, t)
}

/// Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix; returns
/// eigenvalues (descending) and the matrix of eigenvectors as columns.
fn jacobi_eigen_3x3(mut a: [[f64; 3]; 3]) -> ([f64; 3], Mat3<f64>) {
    let mut v = Mat3::identity();
    for _sweep in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-24 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-18 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // Rotate rows/columns p and q of A, accumulate into V.
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for k in 0..3 {
                let vkp = v.m[k][p];
                let vkq = v.m[k][q];
                v.m[k][p] = c * vkp - s * vkq;
                v.m[k][q] = s * vkp + c * vkq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let evals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut sorted = Mat3::identity();
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..3 {
            sorted.m[r][new_c] = v.m[r][old_c];
        }
    }
    (evals, sorted)
}

fn frame_joint_error_mm(fit_joints: &[Vec3<f64>], truth_joints: &[Vec3<f64>]) -> f64 {
    1e3 * mean(
        &fit_joints
            .iter()
            .zip(truth_joints)
            .map(|(a, b)| (*a - *b).norm())
            .collect::<Vec<_>>(),
    )
}

/// Evaluate a fitted sequence against ground truth.
pub fn evaluate(
    model: &BodyModel,
    fit: &SequenceFit,
    truth: &GroundTruth,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if fit.frames.len() != truth.frames.len() {
        return Err(Error::InvalidArgument(format!(
            "fit has {} frames, truth has {}",
            fit.frames.len(),
            truth.frames.len()
        )));
    }
    let joints_of = |t: usize| -> &Vec<Vec3<f64>> {
        match options.stage {
            EvalStage::Final => &fit.frames[t].final_joints,
            EvalStage::StageOne => &fit.frames[t].stage_one_joints,
        }
    };

    let frame_errors_mm: Vec<f64> = (0..fit.frames.len())
        .map(|t| frame_joint_error_mm(joints_of(t), &truth.frames[t].joints))
        .collect();

    let (procrustes_frame_errors_mm, procrustes_mean_mm) = if options.procrustes {
        let errs: Vec<f64> = (0..fit.frames.len())
            .map(|t| {
                let src = joints_of(t);
                let dst = &truth.frames[t].joints;
                let (s, r, tr) = procrustes_align(src, dst);
                let aligned: Vec<Vec3<f64>> =
                    src.iter().map(|&p| r.mul_vec(p) * s + tr).collect();
                frame_joint_error_mm(&aligned, dst)
            })
            .collect();
        let m = mean(&errs);
        (Some(errs), Some(m))
    } else {
        (None, None)
    };

    let vertex_error_mm = if options.vertex_error {
        let rest = model.forward(
            &fit.shape,
            &PoseParams::rest(model.joint_count()),
        )?;
        if rest.vertices.len() != truth.rest_vertices.len() {
            return Err(Error::DimensionMismatch(
                "fit and truth vertex counts differ".into(),
            ));
        }
        Some(
            1e3 * mean(
                &rest
                    .vertices
                    .iter()
                    .zip(&truth.rest_vertices)
                    .map(|(a, b)| (*a - *b).norm())
                    .collect::<Vec<_>>(),
            ),
        )
    } else {
        None
    };

    Ok(EvalReport {
        mean_mm: mean(&frame_errors_mm),
        median_mm: median(&frame_errors_mm),
        frame_errors_mm,
        procrustes_frame_errors_mm,
        procrustes_mean_mm,
        vertex_error_mm,
    })
}

/// Sum of squared joint distances, used by the alignment-reduces-error
/// property test.
pub fn summed_squared_error(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x - *y).norm_sq()).sum()
}

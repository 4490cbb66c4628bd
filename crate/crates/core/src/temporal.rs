//! Temporal machinery: orthonormal DCT-II basis over a frame window, 3D
//! joint trajectory assembly, the robust low-rank reconstruction term, and
//! the windowed objective that couples per-frame data terms with the
//! trajectory prior.

use crate::body::{BodyModel, PoseParams, ShapeParams};
use crate::camera::Camera;
use crate::energy::{self, FitConfig, JointDetections, PosePrior};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, MatD};

/// Orthonormal DCT-II basis: N×K with B^T B = I_K and a constant first
/// column.
#[derive(Clone, Debug)]
pub struct DctBasis {
    pub n: usize,
    pub k: usize,
    /// Row-major N×K.
    pub data: Vec<f64>,
}

impl DctBasis {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.k + col]
    }

    /// B^T d — least-squares coefficients thanks to orthonormal columns.
    pub fn project(&self, d: &[f64]) -> Vec<f64> {
        debug_assert_eq!(d.len(), self.n);
        (0..self.k)
            .map(|c| (0..self.n).map(|r| self.at(r, c) * d[r]).sum())
            .collect()
    }

    /// B c.
    pub fn reconstruct(&self, c: &[f64]) -> Vec<f64> {
        debug_assert_eq!(c.len(), self.k);
        (0..self.n)
            .map(|r| (0..self.k).map(|col| self.at(r, col) * c[col]).sum())
            .collect()
    }
}

/// Build the orthonormal DCT-II basis: column k has entries
/// s_k cos(pi k (2n + 1) / (2N)) with s_0 = sqrt(1/N) and s_k = sqrt(2/N).
pub fn dct_basis(n: usize, k: usize) -> Result<DctBasis> {
    if n == 0 || k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "component count {k} must lie in 1..={n}"
        )));
    }
    let mut data = vec![0.0; n * k];
    for col in 0..k {
        let scale = if col == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for row in 0..n {
            let angle = std::f64::consts::PI * col as f64 * (2.0 * row as f64 + 1.0)
                / (2.0 * n as f64);
            data[row * k + col] = scale * angle.cos();
        }
    }
    Ok(DctBasis { n, k, data })
}

/// Per-joint, per-axis trajectories of 3D joint coordinates across a window.
#[derive(Clone, Debug)]
pub struct TrajectoryMatrix {
    pub joint_count: usize,
    pub frames: usize,
    /// Indexed [joint * 3 + axis][frame].
    pub series: Vec<Vec<f64>>,
}

impl TrajectoryMatrix {
    #[inline]
    pub fn series_of(&self, joint: usize, axis: usize) -> &[f64] {
        &self.series[joint * 3 + axis]
    }
}

/// Forward-kinematics trajectories: series[e][d][j] is the d-coordinate of
/// joint e at frame j under the fixed shape.
pub fn assemble_trajectories(
    model: &BodyModel,
    shape: &ShapeParams,
    poses: &[PoseParams],
) -> Result<TrajectoryMatrix> {
    if poses.is_empty() {
        return Err(Error::InvalidArgument("window must contain at least one frame".into()));
    }
    let j = model.joint_count();
    let mut series = vec![vec![0.0; poses.len()]; j * 3];
    for (frame, pose) in poses.iter().enumerate() {
        let joints = model.pose_joints(&shape.beta, pose.root_translation, &pose.joint_rotations)?;
        for (e, q) in joints.iter().enumerate() {
            series[e * 3][frame] = q.x;
            series[e * 3 + 1][frame] = q.y;
            series[e * 3 + 2][frame] = q.z;
        }
    }
    Ok(TrajectoryMatrix {
        joint_count: j,
        frames: poses.len(),
        series,
    })
}

/// One IRLS refinement of the robust reconstruction from a starting
/// coefficient vector. Monotone in the robust objective; returns the best
/// coefficients seen and their energy.
pub fn refine_coefficients(
    traj: &[f64],
    basis: &DctBasis,
    sigma2: f64,
    init: &[f64],
) -> (f64, Vec<f64>) {
    let n = basis.n;
    let k = basis.k;
    let s2 = sigma2 * sigma2;
    let energy = |c: &[f64]| -> f64 {
        let recon = basis.reconstruct(c);
        traj.iter()
            .zip(&recon)
            .map(|(d, r)| {
                let e = d - r;
                let e2 = e * e;
                e2 / (s2 + e2)
            })
            .sum()
    };
    let mut best_c = init.to_vec();
    let mut best_e = energy(&best_c);
    for _ in 0..50 {
        let recon = basis.reconstruct(&best_c);
        // Majorizer weights: derivative of rho with respect to the squared
        // residual, evaluated at the current residuals.
        let weights: Vec<f64> = traj
            .iter()
            .zip(&recon)
            .map(|(d, r)| {
                let e = d - r;
                let denom = s2 + e * e;
                s2 / (denom * denom)
            })
            .collect();
        // Weighted projection: (B^T W B) c = B^T W d.
        let mut a = MatD::zeros(k, k);
        let mut rhs = vec![0.0; k];
        for row in 0..n {
            let w = weights[row];
            for i in 0..k {
                let bi = basis.at(row, i);
                rhs[i] += w * bi * traj[row];
                for j in i..k {
                    *a.at_mut(i, j) += w * bi * basis.at(row, j);
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                *a.at_mut(i, j) = a.at(j, i);
            }
        }
        let Some(c_new) = cholesky_solve(&a, &rhs) else {
            break;
        };
        let e_new = energy(&c_new);
        if e_new >= best_e - 1e-14 {
            if e_new < best_e {
                best_e = e_new;
                best_c = c_new;
            }
            break;
        }
        best_e = e_new;
        best_c = c_new;
    }
    (best_e, best_c)
}

/// Robust reconstruction of one trajectory: closed-form projection onto the
/// basis, refined by iteratively reweighted least squares. Returns the
/// robust energy Σ_j rho(d_j − (Bc)_j) and the coefficients.
pub fn temporal_term(traj: &[f64], basis: &DctBasis, sigma2: f64) -> Result<(f64, Vec<f64>)> {
    if traj.len() != basis.n {
        return Err(Error::DimensionMismatch(format!(
            "trajectory length {} vs basis rows {}",
            traj.len(),
            basis.n
        )));
    }
    if sigma2 <= 0.0 {
        return Err(Error::InvalidArgument("sigma2 must be positive".into()));
    }
    let init = basis.project(traj);
    Ok(refine_coefficients(traj, basis, sigma2, &init))
}

/// Coefficients for every (joint, axis) trajectory in a window.
#[derive(Clone, Debug)]
pub struct DctCoefficients {
    pub joint_count: usize,
    pub k: usize,
    /// Indexed [joint * 3 + axis] -> K coefficients.
    pub coeffs: Vec<Vec<f64>>,
}

impl DctCoefficients {
    #[inline]
    pub fn of(&self, joint: usize, axis: usize) -> &[f64] {
        &self.coeffs[joint * 3 + axis]
    }
}

/// Optimal coefficients for all trajectories, optionally warm-started from a
/// previous estimate (keeps the elimination monotone across outer rounds).
pub fn optimal_coefficients(
    traj: &TrajectoryMatrix,
    basis: &DctBasis,
    sigma2: f64,
    warm: Option<&DctCoefficients>,
) -> (DctCoefficients, f64) {
    let mut coeffs = Vec::with_capacity(traj.series.len());
    let mut total = 0.0;
    for (idx, series) in traj.series.iter().enumerate() {
        let init = match warm {
            Some(w) => w.coeffs[idx].clone(),
            None => basis.project(series),
        };
        let (e, c) = refine_coefficients(series, basis, sigma2, &init);
        total += e;
        coeffs.push(c);
    }
    (
        DctCoefficients {
            joint_count: traj.joint_count,
            k: basis.k,
            coeffs,
        },
        total,
    )
}

/// Robust coefficients with hard outlier rejection, for the pipeline's
/// coefficient elimination: after IRLS converges, trajectory entries whose
/// residual exceeds `trim_k`·sigma2 are excluded outright and the projection
/// re-solved from the inliers. Returns the per-frame fraction of series that
/// trimmed that frame; corrupted frames approach 1.
pub fn trimmed_coefficients(
    traj: &TrajectoryMatrix,
    basis: &DctBasis,
    sigma2: f64,
    trim_k: f64,
    warm: Option<&DctCoefficients>,
    excluded: Option<&[bool]>,
) -> (DctCoefficients, Vec<f64>) {
    let n = basis.n;
    let k = basis.k;
    let threshold = trim_k * sigma2;
    let mut coeffs = Vec::with_capacity(traj.series.len());
    let mut trim_counts = vec![0.0; n];
    for (idx, series) in traj.series.iter().enumerate() {
        let init = match warm {
            Some(w) => w.coeffs[idx].clone(),
            None => basis.project(series),
        };
        let (_, mut c) = refine_coefficients(series, basis, sigma2, &init);
        // Up to two trim-and-resolve passes. Frames marked excluded never
        // participate in the fit regardless of their current residual.
        for _ in 0..2 {
            let recon = basis.reconstruct(&c);
            let inlier: Vec<bool> = series
                .iter()
                .zip(&recon)
                .enumerate()
                .map(|(row, (d, r))| {
                    (d - r).abs() <= threshold && excluded.map_or(true, |e| !e[row])
                })
                .collect();
            let inliers = inlier.iter().filter(|&&b| b).count();
            if inliers == n {
                break;
            }
            if inliers < k + 1 {
                // Too few inliers to trim safely; keep the robust fit.
                break;
            }
            let mut a = MatD::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for row in 0..n {
                if !inlier[row] {
                    continue;
                }
                for i in 0..k {
                    let bi = basis.at(row, i);
                    rhs[i] += bi * series[row];
                    for j in i..k {
                        *a.at_mut(i, j) += bi * basis.at(row, j);
                    }
                }
            }
            for i in 0..k {
                for j in 0..i {
                    *a.at_mut(i, j) = a.at(j, i);
                }
            }
            match cholesky_solve(&a, &rhs) {
                Some(c_new) => c = c_new,
                None => break,
            }
        }
        let recon = basis.reconstruct(&c);
        for (row, (d, r)) in series.iter().zip(&recon).enumerate() {
            if (d - r).abs() > threshold {
                trim_counts[row] += 1.0;
            }
        }
        coeffs.push(c);
    }
    let total = traj.series.len() as f64;
    (
        DctCoefficients {
            joint_count: traj.joint_count,
            k,
            coeffs,
        },
        trim_counts.into_iter().map(|c| c / total).collect(),
    )
}

/// The windowed objective: per-frame multi-view energies at the fixed shape
/// plus the weighted robust reconstruction error of every joint trajectory
/// against the given coefficients.
#[allow(clippy::too_many_arguments)]
pub fn stage_two_objective(
    model: &BodyModel,
    shape_hat: &ShapeParams,
    poses: &[PoseParams],
    coeffs: &DctCoefficients,
    cameras: &[Camera],
    detections: &[Vec<JointDetections>],
    basis: &DctBasis,
    prior: &PosePrior,
    config: &FitConfig,
) -> Result<f64> {
    if poses.len() != basis.n || detections.len() != poses.len() {
        return Err(Error::DimensionMismatch(format!(
            "window of {} poses vs basis rows {} vs {} detection frames",
            poses.len(),
            basis.n,
            detections.len()
        )));
    }
    let mut total = 0.0;
    for (pose, dets) in poses.iter().zip(detections) {
        total += energy::multiview_term(model, shape_hat, pose, cameras, dets, prior, config)?;
    }
    if config.lambda_t > 0.0 {
        let traj = assemble_trajectories(model, shape_hat, poses)?;
        let s2 = config.sigma2 * config.sigma2;
        for e in 0..traj.joint_count {
            for d in 0..3 {
                let axis_w = config.lambda_t * config.lambda_t_axes[d];
                if axis_w == 0.0 {
                    continue;
                }
                let recon = basis.reconstruct(coeffs.of(e, d));
                let et: f64 = traj
                    .series_of(e, d)
                    .iter()
                    .zip(&recon)
                    .map(|(v, r)| {
                        let err = v - r;
                        let e2 = err * err;
                        e2 / (s2 + e2)
                    })
                    .sum();
                total += axis_w * et;
            }
        }
    }
    Ok(total)
}

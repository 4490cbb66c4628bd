//! Small fixed-size vectors, matrices and rotation helpers, generic over the
//! scalar type, plus a dense matrix with the factorizations the solver needs.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::scalar::Real;

/// 2-vector (pixels or image-plane quantities).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec2<S> {
    pub x: S,
    pub y: S,
}

/// 3-vector (points and directions in meters, axis-angle rotations).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Real> Vec2<S> {
    #[inline]
    pub fn new(x: S, y: S) -> Self {
        Vec2 { x, y }
    }
    #[inline]
    pub fn zero() -> Self {
        Vec2::new(S::zero(), S::zero())
    }
    #[inline]
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y
    }
    #[inline]
    pub fn norm(self) -> S {
        self.dot(self).sqrt()
    }
    pub fn lift(v: Vec2<f64>) -> Self {
        Vec2::new(S::constant(v.x), S::constant(v.y))
    }
    pub fn primal(self) -> Vec2<f64> {
        Vec2::new(self.x.primal(), self.y.primal())
    }
}

impl<S: Real> Vec3<S> {
    #[inline]
    pub fn new(x: S, y: S, z: S) -> Self {
        Vec3 { x, y, z }
    }
    #[inline]
    pub fn zero() -> Self {
        Vec3::new(S::zero(), S::zero(), S::zero())
    }
    #[inline]
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    #[inline]
    pub fn norm_sq(self) -> S {
        self.dot(self)
    }
    #[inline]
    pub fn norm(self) -> S {
        self.dot(self).sqrt()
    }
    #[inline]
    pub fn scale(self, s: S) -> Self {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
    pub fn normalized(self) -> Self {
        self.scale(S::one() / self.norm())
    }
    pub fn lift(v: Vec3<f64>) -> Self {
        Vec3::new(S::constant(v.x), S::constant(v.y), S::constant(v.z))
    }
    pub fn primal(self) -> Vec3<f64> {
        Vec3::new(self.x.primal(), self.y.primal(), self.z.primal())
    }
    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }
    pub fn from_array(a: [S; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl<S: Real> Add for Vec2<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}
impl<S: Real> Sub for Vec2<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}
impl<S: Real> Mul<S> for Vec2<S> {
    type Output = Self;
    #[inline]
    fn mul(self, s: S) -> Self {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl<S: Real> Add for Vec3<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}
impl<S: Real> AddAssign for Vec3<S> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<S: Real> Sub for Vec3<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}
impl<S: Real> Mul<S> for Vec3<S> {
    type Output = Self;
    #[inline]
    fn mul(self, s: S) -> Self {
        self.scale(s)
    }
}
impl<S: Real> Div<S> for Vec3<S> {
    type Output = Self;
    #[inline]
    fn div(self, s: S) -> Self {
        self.scale(S::one() / s)
    }
}
impl<S: Real> Neg for Vec3<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mat3<S> {
    pub m: [[S; 3]; 3],
}

impl<S: Real> Mat3<S> {
    pub fn identity() -> Self {
        let o = S::one();
        let z = S::zero();
        Mat3 {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn from_rows(r0: [S; 3], r1: [S; 3], r2: [S; 3]) -> Self {
        Mat3 { m: [r0, r1, r2] }
    }

    pub fn lift(m: &Mat3<f64>) -> Self {
        let mut out = Mat3::identity();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = S::constant(m.m[i][j]);
            }
        }
        out
    }

    pub fn primal(&self) -> Mat3<f64> {
        let mut out = Mat3::<f64>::identity();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[i][j].primal();
            }
        }
        out
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3<S>) -> Mat3<S> {
        let mut r = Mat3::identity();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = S::zero();
                for k in 0..3 {
                    acc = acc + self.m[i][k] * o.m[k][j];
                }
                r.m[i][j] = acc;
            }
        }
        r
    }

    pub fn transpose(&self) -> Mat3<S> {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = self.m[j][i];
            }
        }
        r
    }

    pub fn determinant(&self) -> S {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug)]
pub struct Rigid<S> {
    pub rot: Mat3<S>,
    pub t: Vec3<S>,
}

impl<S: Real> Rigid<S> {
    pub fn identity() -> Self {
        Rigid {
            rot: Mat3::identity(),
            t: Vec3::zero(),
        }
    }

    #[inline]
    pub fn apply(&self, p: Vec3<S>) -> Vec3<S> {
        self.rot.mul_vec(p) + self.t
    }

    /// self ∘ o: applies `o` first, then `self`.
    pub fn compose(&self, o: &Rigid<S>) -> Rigid<S> {
        Rigid {
            rot: self.rot.mul_mat(&o.rot),
            t: self.rot.mul_vec(o.t) + self.t,
        }
    }
}

/// Rodrigues' formula: axis-angle (exponential map) to rotation matrix.
///
/// The trig coefficients are expressed in the squared angle with a Taylor
/// branch near zero, so the map stays smooth for dual numbers at the rest
/// pose where the axis direction is undefined.
pub fn rodrigues<S: Real>(aa: Vec3<S>) -> Mat3<S> {
    let t2 = aa.norm_sq();
    let (a, b, c); // R = a*I + b*[w]x + c*w w^T with w the *unnormalized* axis
    if t2.primal() < 1e-12 {
        // sin(t)/t       = 1 - t2/6 + t2^2/120
        // (1-cos(t))/t2  = 1/2 - t2/24 + t2^2/720
        let half = S::constant(0.5);
        a = S::one() - t2 * S::constant(0.5) + t2 * t2 * S::constant(1.0 / 24.0);
        b = S::one() - t2 * S::constant(1.0 / 6.0) + t2 * t2 * S::constant(1.0 / 120.0);
        c = half - t2 * S::constant(1.0 / 24.0) + t2 * t2 * S::constant(1.0 / 720.0);
        // a here is cos(t) expanded; keep naming consistent with the exact branch below.
    } else {
        let t = t2.sqrt();
        a = t.cos();
        b = t.sin() / t;
        c = (S::one() - a) / t2;
    }
    let (wx, wy, wz) = (aa.x, aa.y, aa.z);
    Mat3::from_rows(
        [a + c * wx * wx, c * wx * wy - b * wz, c * wx * wz + b * wy],
        [c * wy * wx + b * wz, a + c * wy * wy, c * wy * wz - b * wx],
        [c * wz * wx - b * wy, c * wz * wy + b * wx, a + c * wz * wz],
    )
}

/// Inverse of [`rodrigues`]: rotation matrix to axis-angle, f64 only.
pub fn rotation_log(r: &Mat3<f64>) -> Vec3<f64> {
    let trace = r.m[0][0] + r.m[1][1] + r.m[2][2];
    let cos_t = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let t = cos_t.acos();
    if t < 1e-9 {
        // First-order: skew part directly.
        return Vec3::new(
            (r.m[2][1] - r.m[1][2]) * 0.5,
            (r.m[0][2] - r.m[2][0]) * 0.5,
            (r.m[1][0] - r.m[0][1]) * 0.5,
        );
    }
    if (std::f64::consts::PI - t) < 1e-6 {
        // Near pi the skew part degenerates; recover the axis from R + I.
        let mut axis = Vec3::new(
            (r.m[0][0] + 1.0).max(0.0).sqrt(),
            (r.m[1][1] + 1.0).max(0.0).sqrt(),
            (r.m[2][2] + 1.0).max(0.0).sqrt(),
        );
        // Fix signs using the off-diagonal sums.
        if r.m[0][1] + r.m[1][0] < 0.0 {
            axis.y = -axis.y;
        }
        if r.m[0][2] + r.m[2][0] < 0.0 {
            axis.z = -axis.z;
        }
        let n = axis.norm();
        if n > 0.0 {
            return axis.scale(t / n);
        }
        return Vec3::new(t, 0.0, 0.0);
    }
    let factor = t / (2.0 * t.sin());
    Vec3::new(
        (r.m[2][1] - r.m[1][2]) * factor,
        (r.m[0][2] - r.m[2][0]) * factor,
        (r.m[1][0] - r.m[0][1]) * factor,
    )
}

/// Unit quaternion (w, x, y, z), used only for pose interpolation.
#[derive(Clone, Copy, Debug)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub fn from_axis_angle(aa: Vec3<f64>) -> Quat {
        let t = aa.norm();
        if t < 1e-12 {
            return Quat {
                w: 1.0,
                x: aa.x * 0.5,
                y: aa.y * 0.5,
                z: aa.z * 0.5,
            };
        }
        let (s, c) = ((t * 0.5).sin(), (t * 0.5).cos());
        let k = s / t;
        Quat {
            w: c,
            x: aa.x * k,
            y: aa.y * k,
            z: aa.z * k,
        }
    }

    pub fn to_axis_angle(self) -> Vec3<f64> {
        let n = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        if n < 1e-12 {
            return Vec3::new(2.0 * self.x, 2.0 * self.y, 2.0 * self.z);
        }
        let t = 2.0 * n.atan2(self.w);
        Vec3::new(self.x, self.y, self.z).scale(t / n)
    }

    pub fn slerp(self, mut other: Quat, u: f64) -> Quat {
        let mut dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        if dot < 0.0 {
            other = Quat {
                w: -other.w,
                x: -other.x,
                y: -other.y,
                z: -other.z,
            };
            dot = -dot;
        }
        let (ka, kb) = if dot > 0.9995 {
            (1.0 - u, u)
        } else {
            let theta = dot.clamp(-1.0, 1.0).acos();
            let s = theta.sin();
            (((1.0 - u) * theta).sin() / s, (u * theta).sin() / s)
        };
        let q = Quat {
            w: ka * self.w + kb * other.w,
            x: ka * self.x + kb * other.x,
            y: ka * self.y + kb * other.y,
            z: ka * self.z + kb * other.z,
        };
        let n = (q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        Quat {
            w: q.w / n,
            x: q.x / n,
            y: q.y / n,
            z: q.z / n,
        }
    }
}

/// Spherical interpolation between two axis-angle rotations.
pub fn slerp_axis_angle(a: Vec3<f64>, b: Vec3<f64>, u: f64) -> Vec3<f64> {
    Quat::from_axis_angle(a)
        .slerp(Quat::from_axis_angle(b), u)
        .to_axis_angle()
}

/// Dense row-major matrix of f64, sized for the solver's normal equations.
#[derive(Clone, Debug, PartialEq)]
pub struct MatD {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatD {
    pub fn zeros(rows: usize, cols: usize) -> MatD {
        MatD {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// J^T J (Gram matrix of the columns).
    pub fn gram(&self) -> MatD {
        let n = self.cols;
        let mut g = MatD::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..n {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..n {
                    g.data[i * n + j] += ri * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g.data[i * n + j] = g.data[j * n + i];
            }
        }
        g
    }

    /// J^T v.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let vr = v[r];
            if vr == 0.0 {
                continue;
            }
            for (o, &j) in out.iter_mut().zip(row.iter()) {
                *o += j * vr;
            }
        }
        out
    }

    /// J v.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Cholesky solve of the SPD system `a x = b`. Returns None when the
/// factorization breaks down (non-positive pivot).
pub fn cholesky_solve(a: &MatD, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    debug_assert_eq!(a.cols, n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

//! Small fixed-size linear algebra, pinhole cameras and the planar splat
//! parameterization.
//!
//! Cameras follow the OpenGL / NeRF convention: the camera looks along its
//! local −z axis, +x points right and +y points up. Pixel centers sit at
//! integer + 0.5.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel support radius in local splat units.
pub const KERNEL_CUTOFF: f64 = 3.0;
/// Intersections with a ray parameter at or below this are rejected.
pub const NEAR_CLIP: f64 = 0.01;
/// Rays with `|d · n|` below this are treated as parallel to the splat.
pub const PARALLEL_EPS: f64 = 1e-9;
/// Smallest admissible splat scale.
pub const MIN_SCALE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction. Returns the zero vector for a zero input.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec3::ZERO
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 {
            m: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
        }
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.m;
        Mat3 {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `selfᵀ · v` without materializing the transpose.
    pub fn tmul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        Mat3 { m: r }
    }
}

/// Rotation quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion from raw components and normalizes it.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        UnitQuaternion { w, x, y, z }.normalized()
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Normalized copy; a zero quaternion maps to the identity.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            UnitQuaternion {
                w: self.w / n,
                x: self.x / n,
                y: self.y / n,
                z: self.z / n,
            }
        } else {
            Self::IDENTITY
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_matrix(&self) -> Mat3 {
        let q = self.normalized();
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Mat3 {
            m: [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ],
        }
    }

    /// Inverse of [`to_matrix`](Self::to_matrix) for a proper rotation (Shepperd's method).
    pub fn from_matrix(r: &Mat3) -> Self {
        let m = &r.m;
        let trace = m[0][0] + m[1][1] + m[2][2];
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Self::new(
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Self::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Self::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            )
        }
    }
}

/// Pulls a gradient with respect to the rotation matrix back onto the raw
/// (unnormalized) quaternion components `(w, x, y, z)`.
pub fn quat_matrix_vjp(raw: [f64; 4], grad_r: &Mat3) -> [f64; 4] {
    let n = (raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if n == 0.0 || !n.is_finite() {
        return [0.0; 4];
    }
    let [w, x, y, z] = raw.map(|v| v / n);
    let g = &grad_r.m;
    let gw = 2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let gx = 2.0
        * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0]
            + w * g[2][1]
            - 2.0 * x * g[2][2]);
    let gy = 2.0
        * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0]
            + z * g[2][1]
            - 2.0 * y * g[2][2]);
    let gz = 2.0
        * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    // project out the radial component of the normalization
    let gq = [gw, gx, gy, gz];
    let q = [w, x, y, z];
    let radial: f64 = gq.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (gq[i] - q[i] * radial) / n;
    }
    out
}

/// Pinhole camera. `rotation` maps camera-frame vectors to world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub rotation: UnitQuaternion,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        position: Vec3,
        rotation: UnitQuaternion,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Camera {
            position,
            rotation: rotation.normalized(),
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target` with the given world up vector.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let back = (eye - target).normalized();
        let right = up.cross(back).normalized();
        if right.norm_sq() == 0.0 {
            return Err(Error::InvalidCamera("look_at: up vector parallel to view direction".into()));
        }
        let true_up = back.cross(right);
        let r = Mat3::from_cols(right, true_up, back);
        Camera::new(
            eye,
            UnitQuaternion::from_matrix(&r),
            fx,
            fy,
            width as f64 * 0.5,
            height as f64 * 0.5,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.position.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCamera(format!("{self:?}")))
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_matrix()
    }

    /// Camera-frame coordinates of a world point.
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation_matrix().tmul_vec(p - self.position)
    }

    /// Distance in front of the camera along its optical axis.
    pub fn view_depth(&self, p: Vec3) -> f64 {
        -self.world_to_camera(p).z
    }

    /// Pixel coordinates of a camera-frame point in front of the camera.
    pub fn project_camera_point(&self, pc: Vec3) -> Vec2 {
        let z = -pc.z;
        Vec2::new(self.cx + self.fx * pc.x / z, self.cy - self.fy * pc.y / z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

/// World-space ray through pixel coordinates `(px, py)`.
pub fn make_ray(camera: &Camera, px: f64, py: f64) -> Ray {
    make_ray_with(camera, &camera.rotation_matrix(), px, py)
}

/// [`make_ray`] with a precomputed camera rotation matrix.
pub fn make_ray_with(camera: &Camera, rot: &Mat3, px: f64, py: f64) -> Ray {
    let dc = Vec3::new((px - camera.cx) / camera.fx, -(py - camera.cy) / camera.fy, -1.0);
    Ray {
        origin: camera.position,
        direction: rot.mul_vec(dc).normalized(),
    }
}

/// Splat plane: center plus the two scaled tangent axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatFrame {
    pub mu: Vec3,
    pub s_u: Vec3,
    pub s_v: Vec3,
    pub normal: Vec3,
}

pub fn splat_frame(mu: Vec3, rot: UnitQuaternion, scale: Vec2) -> Result<SplatFrame> {
    if !(scale.x > MIN_SCALE && scale.y > MIN_SCALE) {
        return Err(Error::DegenerateScale(scale.x.min(scale.y)));
    }
    let r = rot.to_matrix();
    let s_u = r.col(0) * scale.x;
    let s_v = r.col(1) * scale.y;
    Ok(SplatFrame {
        mu,
        s_u,
        s_v,
        normal: r.col(2),
    })
}

/// Local coordinates and ray depth of a ray/splat-plane intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatHit {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Solves `mu + u·s_u + v·s_v = origin + t·direction`.
pub fn intersect_splat(ray: &Ray, frame: &SplatFrame) -> Result<SplatHit> {
    let n = frame.s_u.cross(frame.s_v);
    let nn = n.norm();
    if nn <= MIN_SCALE {
        return Err(Error::DegenerateScale(nn));
    }
    let n = n * (1.0 / nn);
    let denom = ray.direction.dot(n);
    if denom.abs() < PARALLEL_EPS {
        return Err(Error::NoIntersection);
    }
    let t = (frame.mu - ray.origin).dot(n) / denom;
    if !(t > NEAR_CLIP) {
        return Err(Error::NoIntersection);
    }
    let rel = ray.origin + ray.direction * t - frame.mu;
    // 2×2 Gram system; the frame tangents need not be orthogonal
    let a11 = frame.s_u.norm_sq();
    let a12 = frame.s_u.dot(frame.s_v);
    let a22 = frame.s_v.norm_sq();
    let b1 = rel.dot(frame.s_u);
    let b2 = rel.dot(frame.s_v);
    let det = a11 * a22 - a12 * a12;
    Ok(SplatHit {
        u: (b1 * a22 - b2 * a12) / det,
        v: (a11 * b2 - a12 * b1) / det,
        depth: t,
    })
}

/// Unit-peak Gaussian `exp(−(u² + v²)/2)`, truncated to zero outside radius 3.
pub fn gaussian_kernel(u: f64, v: f64) -> f64 {
    let r2 = u * u + v * v;
    if r2 > KERNEL_CUTOFF * KERNEL_CUTOFF {
        0.0
    } else {
        (-0.5 * r2).exp()
    }
}

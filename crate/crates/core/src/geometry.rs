//! Pinhole camera model, rigid transforms, pixel reprojection and
//! disparity/depth conversion.
//!
//! Pixel coordinates have their origin at the center of the top-left pixel,
//! with x pointing right and y pointing down. Camera coordinates follow the
//! same convention with z pointing forward.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{lit, Real};

/// Pinhole intrinsics: focal lengths and principal point, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fx.is_finite()) || !(self.fy > T::zero() && self.fy.is_finite()) {
            return Err(invalid(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(invalid("principal point must be finite"));
        }
        Ok(())
    }

    /// Intrinsics of an image downsampled by 2x2 box averaging.
    ///
    /// Output pixel `i` covers input pixels `2i` and `2i+1`, so its center
    /// sits at input coordinate `2i + 0.5`.
    pub fn halved(&self) -> Self {
        let half = lit::<T>(0.5);
        Self {
            fx: self.fx * half,
            fy: self.fy * half,
            cx: (self.cx - half) * half,
            cy: (self.cy - half) * half,
        }
    }

    /// Pixel → normalized camera ray with unit z.
    #[inline]
    pub fn backproject(&self, u: T, v: T) -> [T; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, T::one()]
    }

    /// Camera point → pixel. The caller is responsible for `p[2] != 0`.
    #[inline]
    pub fn project(&self, p: [T; 3]) -> (T, T) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        let c = |v: T| U::lit(v.as_f64());
        CameraIntrinsics {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
        }
    }
}

/// Six-parameter camera motion: three rotation angles (radians) and a
/// translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6DoF<T> {
    pub theta_x: T,
    pub theta_y: T,
    pub theta_z: T,
    pub t_x: T,
    pub t_y: T,
    pub t_z: T,
}

impl<T: Real> Pose6DoF<T> {
    pub fn zero() -> Self {
        Self::from_array([T::zero(); 6])
    }

    pub fn from_array(a: [T; 6]) -> Self {
        Self {
            theta_x: a[0],
            theta_y: a[1],
            theta_z: a[2],
            t_x: a[3],
            t_y: a[4],
            t_z: a[5],
        }
    }

    pub fn to_array(&self) -> [T; 6] {
        [self.theta_x, self.theta_y, self.theta_z, self.t_x, self.t_y, self.t_z]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn translation_norm(&self) -> T {
        (self.t_x * self.t_x + self.t_y * self.t_y + self.t_z * self.t_z).sqrt()
    }

    pub fn cast<U: Real>(&self) -> Pose6DoF<U> {
        Pose6DoF::from_array(self.to_array().map(|v| U::lit(v.as_f64())))
    }
}

pub type Mat3<T> = [[T; 3]; 3];

/// Rotation plus translation acting as `x' = r·x + tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    pub r: Mat3<T>,
    pub tau: [T; 3],
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            r: [[o, z, z], [z, o, z], [z, z, o]],
            tau: [z; 3],
        }
    }

    pub fn from_translation(tau: [T; 3]) -> Self {
        Self {
            tau,
            ..Self::identity()
        }
    }

    #[inline]
    pub fn apply(&self, p: [T; 3]) -> [T; 3] {
        let mut out = self.rotate(p);
        for (o, t) in out.iter_mut().zip(self.tau) {
            *o += t;
        }
        out
    }

    #[inline]
    pub fn rotate(&self, p: [T; 3]) -> [T; 3] {
        mat_vec(&self.r, p)
    }

    pub fn inverse(&self) -> Self {
        let rt = transpose(&self.r);
        let t = mat_vec(&rt, self.tau);
        Self {
            r: rt,
            tau: [-t[0], -t[1], -t[2]],
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            r: mat_mul(&self.r, &other.r),
            tau: self.apply(other.tau),
        }
    }

    /// Rotation angle of `r` in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> T {
        let tr = self.r[0][0] + self.r[1][1] + self.r[2][2];
        let c = (tr - T::one()) * lit(0.5);
        c.max(-T::one()).min(T::one()).acos()
    }
}

#[inline]
pub(crate) fn mat_vec<T: Real>(m: &Mat3<T>, p: [T; 3]) -> [T; 3] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    ]
}

pub(crate) fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub(crate) fn transpose<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = *m;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = m[j][i];
        }
    }
    out
}

/// Builds `r = Rz(θz)·Ry(θy)·Rx(θx)` and `tau = (t_x, t_y, t_z)`.
pub fn pose_to_transform<T: Real>(p: &Pose6DoF<T>) -> Result<RigidTransform<T>> {
    if !p.is_finite() {
        return Err(invalid(format!("pose components must be finite: {p:?}")));
    }
    let (sx, cx) = p.theta_x.sin_cos();
    let (sy, cy) = p.theta_y.sin_cos();
    let (sz, cz) = p.theta_z.sin_cos();
    // Expanded product of the three elementary rotations.
    let r = [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ];
    Ok(RigidTransform {
        r,
        tau: [p.t_x, p.t_y, p.t_z],
    })
}

/// Result of moving one pixel into another view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reprojection<T> {
    pub u: T,
    pub v: T,
    /// Camera-frame z in the destination view; `<= 0` means behind the camera.
    pub depth: T,
}

impl<T: Real> Reprojection<T> {
    pub fn in_front(&self) -> bool {
        self.depth > T::zero()
    }
}

/// Backprojects `(u, v)` at metric `depth`, applies `t`, and projects again.
pub fn reproject_point<T: Real>(
    u: T,
    v: T,
    depth: T,
    k: &CameraIntrinsics<T>,
    t: &RigidTransform<T>,
) -> Result<Reprojection<T>> {
    if !(depth > T::zero()) {
        return Err(invalid(format!("depth must be positive, got {depth}")));
    }
    Ok(reproject_unchecked(u, v, depth, k, t))
}

#[inline]
pub(crate) fn reproject_unchecked<T: Real>(
    u: T,
    v: T,
    depth: T,
    k: &CameraIntrinsics<T>,
    t: &RigidTransform<T>,
) -> Reprojection<T> {
    let ray = k.backproject(u, v);
    let moved = t.apply([ray[0] * depth, ray[1] * depth, depth]);
    let (u2, v2) = k.project(moved);
    Reprojection {
        u: u2,
        v: v2,
        depth: moved[2],
    }
}

/// Metric depth bounds used to interpret disparity maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange<T> {
    pub d_min: T,
    pub d_max: T,
}

impl<T: Real> Default for DepthRange<T> {
    fn default() -> Self {
        Self {
            d_min: lit(0.1),
            d_max: lit(100.0),
        }
    }
}

impl<T: Real> DepthRange<T> {
    pub fn new(d_min: T, d_max: T) -> Result<Self> {
        let r = Self { d_min, d_max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > T::zero() && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(invalid(format!(
                "depth range requires 0 < d_min < d_max (got {}, {})",
                self.d_min, self.d_max
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> DepthRange<U> {
        DepthRange {
            d_min: U::lit(self.d_min.as_f64()),
            d_max: U::lit(self.d_max.as_f64()),
        }
    }

    /// Unchecked conversion for hot loops; `d` is assumed to lie in `[0, 1]`.
    #[inline]
    pub fn to_depth(&self, d: T) -> T {
        let inv_max = self.d_max.recip();
        T::one() / (inv_max + (self.d_min.recip() - inv_max) * d)
    }

    /// Inverse of [`DepthRange::to_depth`], clamped into `[0, 1]`.
    #[inline]
    pub fn to_disparity(&self, depth: T) -> T {
        let inv_max = self.d_max.recip();
        let d = (depth.recip() - inv_max) / (self.d_min.recip() - inv_max);
        d.max(T::zero()).min(T::one())
    }
}

/// `1 / (1/d_max + (1/d_min − 1/d_max)·d)`.
pub fn disparity_to_depth<T: Real>(d: T, d_min: T, d_max: T) -> Result<T> {
    if !(d >= T::zero() && d <= T::one()) {
        return Err(invalid(format!("disparity must lie in [0, 1], got {d}")));
    }
    let range = DepthRange::new(d_min, d_max)?;
    // Exact endpoints: the general formula rounds at d = 1.
    if d == T::zero() {
        return Ok(d_max);
    }
    if d == T::one() {
        return Ok(d_min);
    }
    Ok(range.to_depth(d))
}

/// Metric depth → disparity, the inverse of [`disparity_to_depth`].
pub fn depth_to_disparity<T: Real>(depth: T, d_min: T, d_max: T) -> Result<T> {
    let range = DepthRange::new(d_min, d_max)?;
    if !(depth >= d_min && depth <= d_max) {
        return Err(invalid(format!(
            "depth {depth} outside [{d_min}, {d_max}]"
        )));
    }
    Ok(range.to_disparity(depth))
}

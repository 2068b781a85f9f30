//! Constant-velocity Kalman filtering of boxes and camera-motion
//! compensation of predicted boxes.
//!
//! State is `(cx, cy, aspect, h)` plus velocities, with noise proportional to
//! box height.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{reproject_point, CameraIntrinsics, RigidTransform};
use crate::scalar::{lit, Real};

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

/// Axis-aligned box, top-left/bottom-right corners in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x0: T,
    pub y0: T,
    pub x1: T,
    pub y1: T,
}

impl<T: Real> BBox<T> {
    pub fn new(x0: T, y0: T, x1: T, y1: T) -> Result<Self> {
        if !(x0 <= x1 && y0 <= y1) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(invalid(format!("malformed box ({x0}, {y0}, {x1}, {y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// From top-left corner plus width and height.
    pub fn from_tlwh(x: T, y: T, w: T, h: T) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> T {
        self.x1 - self.x0
    }

    pub fn height(&self) -> T {
        self.y1 - self.y0
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let half = lit::<T>(0.5);
        ((self.x0 + self.x1) * half, (self.y0 + self.y1) * half)
    }

    /// `(cx, cy, aspect = w/h, h)`.
    pub fn to_xyah(&self) -> [T; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.width() / self.height(), self.height()]
    }

    pub fn from_xyah(m: &[T]) -> Self {
        let half = lit::<T>(0.5);
        let w = m[2] * m[3];
        Self {
            x0: m[0] - w * half,
            y0: m[1] - m[3] * half,
            x1: m[0] + w * half,
            y1: m[1] + m[3] * half,
        }
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    pub fn cast<U: Real>(&self) -> BBox<U> {
        BBox {
            x0: U::lit(self.x0.as_f64()),
            y0: U::lit(self.y0.as_f64()),
            x1: U::lit(self.x1.as_f64()),
            y1: U::lit(self.y1.as_f64()),
        }
    }
}

pub type Mat8<T> = [[T; 8]; 8];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState<T> {
    pub mean: [T; 8],
    pub covariance: Mat8<T>,
}

impl<T: Real> KalmanState<T> {
    pub fn bbox(&self) -> BBox<T> {
        BBox::from_xyah(&self.mean[..4])
    }

    pub fn trace(&self) -> T {
        (0..8).map(|i| self.covariance[i][i]).sum()
    }

    /// Replaces the positional part of the mean, keeping velocities and covariance.
    pub fn set_box(&mut self, b: &BBox<T>) {
        let m = b.to_xyah();
        self.mean[..4].copy_from_slice(&m);
    }
}

fn diag<T: Real>(std: [T; 8]) -> Mat8<T> {
    let mut m = [[T::zero(); 8]; 8];
    for i in 0..8 {
        m[i][i] = std[i] * std[i];
    }
    m
}

fn check_box<T: Real>(b: &BBox<T>) -> Result<()> {
    if !(b.width() > T::zero() && b.height() > T::zero()) {
        return Err(invalid(format!("box has zero area: {b:?}")));
    }
    Ok(())
}

/// New state at the box, zero velocity, height-scaled diagonal covariance.
pub fn kf_initiate<T: Real>(b: &BBox<T>) -> Result<KalmanState<T>> {
    check_box(b)?;
    let m = b.to_xyah();
    let h = m[3];
    let sp = lit::<T>(STD_WEIGHT_POSITION) * h;
    let sv = lit::<T>(STD_WEIGHT_VELOCITY) * h;
    let two = lit::<T>(2.0);
    let ten = lit::<T>(10.0);
    let std = [
        two * sp,
        two * sp,
        lit(1e-2),
        two * sp,
        ten * sv,
        ten * sv,
        lit(1e-5),
        ten * sv,
    ];
    let mut mean = [T::zero(); 8];
    mean[..4].copy_from_slice(&m);
    Ok(KalmanState {
        mean,
        covariance: diag(std),
    })
}

/// Constant-velocity step: `x ← F x`, `P ← F P Fᵀ + Q`.
pub fn kf_predict<T: Real>(s: &KalmanState<T>) -> KalmanState<T> {
    let h = s.mean[3];
    let sp = lit::<T>(STD_WEIGHT_POSITION) * h;
    let sv = lit::<T>(STD_WEIGHT_VELOCITY) * h;
    let q = diag([sp, sp, lit(1e-2), sp, sv, sv, lit(1e-5), sv]);

    let mut mean = s.mean;
    for i in 0..4 {
        mean[i] += s.mean[i + 4];
    }
    // F = [[I, I], [0, I]]; write F P Fᵀ blockwise.
    let p = &s.covariance;
    let mut fp = [[T::zero(); 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            fp[i][j] = if i < 4 { p[i][j] + p[i + 4][j] } else { p[i][j] };
        }
    }
    let mut cov = [[T::zero(); 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            cov[i][j] = if j < 4 { fp[i][j] + fp[i][j + 4] } else { fp[i][j] } + q[i][j];
        }
    }
    symmetrize(&mut cov);
    KalmanState { mean, covariance: cov }
}

fn symmetrize<T: Real>(m: &mut Mat8<T>) {
    let half = lit::<T>(0.5);
    for i in 0..8 {
        for j in (i + 1)..8 {
            let v = (m[i][j] + m[j][i]) * half;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
}

/// Cholesky factor of a symmetric positive-definite 4x4 matrix.
fn cholesky4<T: Real>(a: &[[T; 4]; 4]) -> Result<[[T; 4]; 4]> {
    let mut l = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return Err(invalid("innovation covariance is not positive definite"));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b`.
fn cho_solve4<T: Real>(l: &[[T; 4]; 4], b: [T; 4]) -> [T; 4] {
    let mut y = [T::zero(); 4];
    for i in 0..4 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [T::zero(); 4];
    for i in (0..4).rev() {
        let mut s = y[i];
        for k in (i + 1)..4 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Kalman correction with measurement `(cx, cy, aspect, h)` of `b`.
pub fn kf_update<T: Real>(s: &KalmanState<T>, b: &BBox<T>) -> Result<KalmanState<T>> {
    check_box(b)?;
    let z = b.to_xyah();
    let h = s.mean[3];
    let sp = lit::<T>(STD_WEIGHT_POSITION) * h;
    let r = [sp, sp, lit(1e-1), sp];
    let p = &s.covariance;

    // H selects the first four components, so S = P[:4,:4] + R and P Hᵀ = P[:, :4].
    let mut innov_cov = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            innov_cov[i][j] = p[i][j];
        }
        innov_cov[i][i] += r[i] * r[i];
    }
    let l = cholesky4(&innov_cov)?;

    // Kalman gain K = P Hᵀ S⁻¹, one row at a time (S symmetric).
    let mut gain = [[T::zero(); 4]; 8];
    for (i, row) in gain.iter_mut().enumerate() {
        *row = cho_solve4(&l, [p[i][0], p[i][1], p[i][2], p[i][3]]);
    }
    let innov: [T; 4] = std::array::from_fn(|i| z[i] - s.mean[i]);

    let mut mean = s.mean;
    for i in 0..8 {
        mean[i] += (0..4).map(|j| gain[i][j] * innov[j]).sum::<T>();
    }
    // P ← P − K S Kᵀ = P − K (H P).
    let mut cov = *p;
    for i in 0..8 {
        for j in 0..8 {
            let ksk: T = (0..4).map(|m| gain[i][m] * p[m][j]).sum();
            cov[i][j] -= ksk;
        }
    }
    symmetrize(&mut cov);
    Ok(KalmanState { mean, covariance: cov })
}

/// Moves a predicted box into the current camera after the camera moved by `t`.
///
/// Only the bottom corners `(x0, y1)` and `(x1, y1)` are reprojected at the
/// object's metric `depth`; the box keeps its height.
pub fn compensate_box<T: Real>(
    b: &BBox<T>,
    depth: T,
    k: &CameraIntrinsics<T>,
    t: &RigidTransform<T>,
) -> Result<BBox<T>> {
    if !(depth > T::zero()) {
        return Err(invalid(format!("object depth must be positive, got {depth}")));
    }
    if *t == RigidTransform::identity() {
        return Ok(*b);
    }
    let left = reproject_point(b.x0, b.y1, depth, k, t)?;
    let right = reproject_point(b.x1, b.y1, depth, k, t)?;
    if !left.in_front() || !right.in_front() {
        return Err(invalid("compensated box corner falls behind the camera"));
    }
    let half = lit::<T>(0.5);
    let x0 = left.u.min(right.u);
    let x1 = left.u.max(right.u);
    let y1 = (left.v + right.v) * half;
    let height = b.height();
    Ok(BBox {
        x0,
        y0: y1 - height,
        x1,
        y1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
    Removed,
}

impl TrackStatus {
    pub fn can_transition_to(self, next: TrackStatus) -> bool {
        use TrackStatus::*;
        matches!(
            (self, next),
            (Tentative, Active) | (Active, Lost) | (Lost, Active) | (Tentative, Removed) | (Lost, Removed)
        ) || self == next
    }
}

/// Lifecycle thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifecycle {
    /// Consecutive hits needed to confirm a tentative track.
    pub min_hits: u32,
    /// Consecutive misses after which a lost track is removed.
    pub max_age: u32,
}

impl Default for Lifecycle {
    fn default() -> Self {
        Self {
            min_hits: 2,
            max_age: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub id: u64,
    pub state: KalmanState<T>,
    status: TrackStatus,
    pub hits: u32,
    pub misses: u32,
    /// Last object disparity.
    pub depth: T,
}

impl<T: Real> Track<T> {
    /// A track born from one detection; it starts `Active` when a single hit
    /// already meets `life.min_hits`.
    pub fn new(id: u64, b: &BBox<T>, depth: T, life: &Lifecycle) -> Result<Self> {
        let status = if life.min_hits <= 1 {
            TrackStatus::Active
        } else {
            TrackStatus::Tentative
        };
        Ok(Self {
            id,
            state: kf_initiate(b)?,
            status,
            hits: 1,
            misses: 0,
            depth,
        })
    }

    pub fn status(&self) -> TrackStatus {
        self.status
    }

    pub fn is_confirmed(&self) -> bool {
        matches!(self.status, TrackStatus::Active | TrackStatus::Lost)
    }

    fn transition(&mut self, next: TrackStatus) {
        debug_assert!(self.status.can_transition_to(next), "{:?} -> {:?}", self.status, next);
        self.status = next;
    }

    pub fn mark_hit(&mut self, life: &Lifecycle) {
        self.hits += 1;
        self.misses = 0;
        match self.status {
            TrackStatus::Tentative if self.hits >= life.min_hits => self.transition(TrackStatus::Active),
            TrackStatus::Lost => self.transition(TrackStatus::Active),
            _ => {}
        }
    }

    pub fn mark_miss(&mut self, life: &Lifecycle) {
        self.hits = 0;
        self.misses += 1;
        match self.status {
            TrackStatus::Tentative => self.transition(TrackStatus::Removed),
            TrackStatus::Active => self.transition(TrackStatus::Lost),
            TrackStatus::Lost if self.misses >= life.max_age => self.transition(TrackStatus::Removed),
            _ => {}
        }
    }
}

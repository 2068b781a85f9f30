//! Inter-frame camera motion from photometric alignment.
//!
//! The pose is found by warping the source image into the target view with
//! the target's depth and minimizing the mean photometric error, coarse to
//! fine over an image pyramid, with simplex descent at each level.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{pose_to_transform, CameraIntrinsics, DepthRange, Pose6DoF};
use crate::imaging::{photometric_error_masked, synthesize_view, DepthGrid, ImageGrid, DEFAULT_ALPHA};
use crate::optim::{minimize, SimplexOptions};
use crate::scalar::{lit, Real};

/// Below this fraction of valid pixels a warp is not trusted.
pub const MIN_VALID_FRACTION: f64 = 0.25;
/// Intensity variance below which an image is considered textureless.
pub const MIN_TEXTURE_VARIANCE: f64 = 1e-8;
/// Initial simplex edge per parameter: three angles (rad), three translations.
pub const SIMPLEX_STEP: [f64; 6] = [0.01, 0.01, 0.01, 0.05, 0.05, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig<T> {
    pub pyramid_levels: usize,
    pub max_evals_per_level: usize,
    pub converge_tol: T,
    pub alpha: T,
    pub range: DepthRange<T>,
}

impl<T: Real> Default for AlignConfig<T> {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            max_evals_per_level: 200,
            converge_tol: lit(1e-6),
            alpha: lit(DEFAULT_ALPHA),
            range: DepthRange::default(),
        }
    }
}

impl<T: Real> AlignConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(invalid("pyramid_levels must be at least 1"));
        }
        if self.max_evals_per_level < 10 {
            return Err(invalid("max_evals_per_level must be at least 10"));
        }
        if !(self.converge_tol > T::zero()) {
            return Err(invalid("converge_tol must be positive"));
        }
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return Err(invalid("alpha must lie in [0, 1]"));
        }
        self.range.validate()
    }
}

/// Per-level record of the coarse-to-fine search.
#[derive(Debug, Clone)]
pub struct LevelTrace<T> {
    pub width: usize,
    pub height: usize,
    pub evals: usize,
    /// Best objective after each evaluation at this level.
    pub best_so_far: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct PoseEstimate<T> {
    pub pose: Pose6DoF<T>,
    /// Mean photometric error at the optimum, full resolution.
    pub residual: T,
    pub valid_fraction: f64,
    /// Coarsest level first.
    pub levels: Vec<LevelTrace<T>>,
}

fn check_dims<T: Real>(source: &ImageGrid<T>, target: &ImageGrid<T>, depth: &DepthGrid<T>) -> Result<()> {
    let (w, h) = (target.width(), target.height());
    if source.width() != w || source.height() != h || depth.width() != w || depth.height() != h {
        return Err(invalid(format!(
            "source {}x{}, target {}x{} and depth {}x{} must match",
            source.width(),
            source.height(),
            w,
            h,
            depth.width(),
            depth.height()
        )));
    }
    Ok(())
}

/// Mean photometric error of the warp and the fraction of valid pixels.
pub fn evaluate_pose<T: Real>(
    pose: &Pose6DoF<T>,
    source: &ImageGrid<T>,
    target: &ImageGrid<T>,
    target_depth: &DepthGrid<T>,
    k: &CameraIntrinsics<T>,
    cfg: &AlignConfig<T>,
) -> Result<(T, f64)> {
    check_dims(source, target, target_depth)?;
    let t = pose_to_transform(pose)?;
    let warped = synthesize_view(source, target_depth, k, &t, &cfg.range)?;
    let frac = warped.valid_fraction();
    if frac < MIN_VALID_FRACTION {
        return Ok((T::infinity(), frac));
    }
    // Invalid pixels take the target's value so they do not leak into the
    // SSIM windows of their valid neighbours; they are masked out anyway.
    let filled: Vec<T> = warped
        .image
        .data()
        .iter()
        .zip(target.data())
        .zip(&warped.valid)
        .map(|((w, t), ok)| if *ok { *w } else { *t })
        .collect();
    let filled = ImageGrid::new(target.width(), target.height(), filled)?;
    let pe = photometric_error_masked(target, &filled, &warped.valid, cfg.alpha)?;
    Ok((pe.mean_valid().unwrap_or_else(T::infinity), frac))
}

/// Mean photometric error of the warp under `pose`; `+∞` when fewer than a
/// quarter of the pixels survive the warp.
pub fn photometric_objective<T: Real>(
    pose: &Pose6DoF<T>,
    source: &ImageGrid<T>,
    target: &ImageGrid<T>,
    target_depth: &DepthGrid<T>,
    k: &CameraIntrinsics<T>,
    cfg: &AlignConfig<T>,
) -> Result<T> {
    evaluate_pose(pose, source, target, target_depth, k, cfg).map(|(v, _)| v)
}

struct Level<T> {
    source: ImageGrid<T>,
    target: ImageGrid<T>,
    depth: DepthGrid<T>,
    k: CameraIntrinsics<T>,
}

fn build_pyramid<T: Real>(
    source: &ImageGrid<T>,
    target: &ImageGrid<T>,
    depth: &DepthGrid<T>,
    k: &CameraIntrinsics<T>,
    levels: usize,
) -> Vec<Level<T>> {
    let mut out = vec![Level {
        source: source.clone(),
        target: target.clone(),
        depth: depth.clone(),
        k: *k,
    }];
    while out.len() < levels {
        let prev = out.last().expect("non-empty");
        if prev.target.width() < 8 || prev.target.height() < 8 {
            break;
        }
        let next = Level {
            source: prev.source.downsample(),
            target: prev.target.downsample(),
            depth: prev.depth.downsample(),
            k: prev.k.halved(),
        };
        out.push(next);
    }
    out.reverse();
    out
}

/// Recovers the 6-DoF motion mapping target-camera coordinates into the
/// source camera.
///
/// With `source` = frame t and `target` = frame t−1 (and the depth of t−1),
/// the result is the camera motion from t−1 to t.
pub fn estimate_pose<T: Real>(
    source: &ImageGrid<T>,
    target: &ImageGrid<T>,
    target_depth: &DepthGrid<T>,
    k: &CameraIntrinsics<T>,
    cfg: &AlignConfig<T>,
) -> Result<PoseEstimate<T>> {
    cfg.validate()?;
    k.validate()?;
    check_dims(source, target, target_depth)?;
    let floor = lit::<T>(MIN_TEXTURE_VARIANCE);
    if source.variance() < floor || target.variance() < floor {
        return Err(Error::DegenerateInput("image pair is textureless".into()));
    }

    let pyramid = build_pyramid(source, target, target_depth, k, cfg.pyramid_levels);
    let scale: [T; 6] = SIMPLEX_STEP.map(lit);
    let to_pose = |z: &[T; 6]| {
        let mut a = [T::zero(); 6];
        for i in 0..6 {
            a[i] = z[i] * scale[i];
        }
        Pose6DoF::from_array(a)
    };
    let objective = |lvl: &Level<T>, z: &[T; 6]| -> T {
        evaluate_pose(&to_pose(z), &lvl.source, &lvl.target, &lvl.depth, &lvl.k, cfg)
            .map(|(v, _)| v)
            .unwrap_or_else(|_| T::infinity())
    };

    let mut z = [T::zero(); 6];
    let mut traces = Vec::with_capacity(pyramid.len());
    for lvl in &pyramid {
        // Start from the better of the carried estimate and no motion.
        let mut start = z;
        let mut extra = 0;
        if z.iter().any(|v| *v != T::zero()) {
            let zero = [T::zero(); 6];
            extra = 2;
            if objective(lvl, &zero) < objective(lvl, &z) {
                start = zero;
            }
        }
        let opts = SimplexOptions {
            max_evals: cfg.max_evals_per_level.saturating_sub(extra),
            f_tol: cfg.converge_tol,
            restarts: 3,
        };
        let res = minimize(|x| objective(lvl, x), start, [T::one(); 6], &opts);
        z = res.x;
        traces.push(LevelTrace {
            width: lvl.target.width(),
            height: lvl.target.height(),
            evals: res.evals + extra,
            best_so_far: res.history,
        });
    }

    let pose = to_pose(&z);
    let (residual, valid_fraction) = evaluate_pose(&pose, source, target, target_depth, k, cfg)?;
    if valid_fraction < MIN_VALID_FRACTION || !residual.is_finite() {
        return Err(Error::UnreliablePose { valid_fraction });
    }
    Ok(PoseEstimate {
        pose,
        residual,
        valid_fraction,
        levels: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> ImageGrid<f64> {
        ImageGrid::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.2 * (x * 0.31).sin() * (y * 0.17).cos() + 0.15 * ((x + 2.0 * y) * 0.11).sin()
        })
        .unwrap()
    }

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5).unwrap()
    }

    #[test]
    fn identical_pair_has_zero_objective() {
        let img = textured(64, 48);
        let depth = DepthGrid::filled(64, 48, 0.05).unwrap();
        let cfg = AlignConfig::default();
        let v = photometric_objective(&Pose6DoF::zero(), &img, &img, &depth, &k(), &cfg).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn constant_images_give_zero_objective() {
        let img = ImageGrid::filled(32, 24, 0.6).unwrap();
        let depth = DepthGrid::filled(32, 24, 0.05).unwrap();
        let cfg = AlignConfig::default();
        let p = Pose6DoF::from_array([0.0, 0.01, 0.0, 0.05, 0.0, 0.0]);
        let v = photometric_objective(&p, &img, &img, &depth, &k(), &cfg).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn far_out_pose_is_infinite() {
        let img = textured(32, 24);
        let depth = DepthGrid::filled(32, 24, 0.05).unwrap();
        let p = Pose6DoF::from_array([0.0, 1.2, 0.0, 0.0, 0.0, 0.0]);
        let v = photometric_objective(&p, &img, &img, &depth, &k(), &AlignConfig::default()).unwrap();
        assert!(v.is_infinite());
    }

    #[test]
    fn textureless_rejected() {
        let img = ImageGrid::filled(32, 24, 0.6).unwrap();
        let depth = DepthGrid::filled(32, 24, 0.05).unwrap();
        let err = estimate_pose(&img, &img, &depth, &k(), &AlignConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let img = textured(32, 24);
        let other = textured(32, 20);
        let depth = DepthGrid::filled(32, 24, 0.05).unwrap();
        assert!(estimate_pose(&img, &other, &depth, &k(), &AlignConfig::default()).is_err());
        assert!(photometric_objective(&Pose6DoF::zero(), &img, &other, &depth, &k(), &AlignConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = AlignConfig::<f64> {
            max_evals_per_level: 5,
            ..AlignConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = AlignConfig::default();
        cfg.pyramid_levels = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identity_pair_recovers_zero_motion() {
        let img = textured(64, 48);
        let depth = DepthGrid::from_fn(64, 48, |_, y| 0.02 + 0.002 * y as f64).unwrap();
        let cfg = AlignConfig::default();
        let est = estimate_pose(&img, &img, &depth, &k(), &cfg).unwrap();
        let zero = photometric_objective(&Pose6DoF::zero(), &img, &img, &depth, &k(), &cfg).unwrap();
        assert!(est.residual <= zero + 1e-15);
        assert!(est.residual < 1e-4);
        for a in &est.pose.to_array()[..3] {
            assert!(a.abs() < 1e-3);
        }
        assert!(est.pose.translation_norm() < 1e-3);
        for lvl in &est.levels {
            assert!(lvl.best_so_far.windows(2).all(|w| w[1] <= w[0]));
            assert!(lvl.evals <= cfg.max_evals_per_level);
        }
    }
}

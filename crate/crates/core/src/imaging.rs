//! Image buffers and the photometric machinery built on them: bilinear
//! sampling, dense view synthesis, SSIM, photometric error, per-pixel
//! minimum reprojection and edge-aware depth smoothness.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{reproject_unchecked, CameraIntrinsics, DepthRange, RigidTransform};
use crate::scalar::{lit, Real};

/// SSIM luminance stabilizer, `(0.01·L)²` with `L = 1`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
/// SSIM contrast stabilizer, `(0.03·L)²`.
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Default SSIM/L1 blend weight.
pub const DEFAULT_ALPHA: f64 = 0.85;

macro_rules! unit_grid {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T> {
            width: usize,
            height: usize,
            data: Vec<T>,
        }

        impl<T: Real> $name<T> {
            /// Row-major constructor; every value must lie in `[0, 1]`.
            pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
                if width == 0 || height == 0 {
                    return Err(invalid(concat!($what, " dimensions must be non-zero")));
                }
                if data.len() != width * height {
                    return Err(invalid(format!(
                        concat!($what, " data length {} does not match {}x{}"),
                        data.len(),
                        width,
                        height
                    )));
                }
                if let Some(i) = data.iter().position(|v| !(*v >= T::zero() && *v <= T::one())) {
                    return Err(invalid(format!(
                        concat!($what, " value {} at index {} outside [0, 1]"),
                        data[i], i
                    )));
                }
                Ok(Self { width, height, data })
            }

            pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
                Self::new(width, height, vec![value; width * height])
            }

            /// Builds a grid from `f(x, y)`, clamping results into `[0, 1]`.
            pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
                let data = (0..height)
                    .flat_map(|y| (0..width).map(move |x| (x, y)))
                    .map(|(x, y)| f(x, y).max(T::zero()).min(T::one()))
                    .collect();
                Self::new(width, height, data)
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn data(&self) -> &[T] {
                &self.data
            }

            pub fn into_data(self) -> Vec<T> {
                self.data
            }

            #[inline]
            pub fn get(&self, x: usize, y: usize) -> T {
                self.data[y * self.width + x]
            }

            /// 2x2 box-filter downsample (odd trailing rows/columns dropped).
            pub fn downsample(&self) -> Self {
                let w = (self.width / 2).max(1);
                let h = (self.height / 2).max(1);
                let quarter = lit::<T>(0.25);
                let data = (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .map(|(x, y)| {
                        let x0 = (2 * x).min(self.width - 1);
                        let x1 = (2 * x + 1).min(self.width - 1);
                        let y0 = (2 * y).min(self.height - 1);
                        let y1 = (2 * y + 1).min(self.height - 1);
                        (self.get(x0, y0) + self.get(x1, y0) + self.get(x0, y1) + self.get(x1, y1)) * quarter
                    })
                    .collect();
                Self { width: w, height: h, data }
            }

            pub fn mean(&self) -> T {
                self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
            }

            pub fn variance(&self) -> T {
                let m = self.mean();
                self.data.iter().map(|&v| (v - m) * (v - m)).sum::<T>()
                    / T::from_usize_lossy(self.data.len())
            }

            pub fn cast<U: Real>(&self) -> $name<U> {
                $name {
                    width: self.width,
                    height: self.height,
                    data: self.data.iter().map(|v| U::lit(v.as_f64()).max(U::zero()).min(U::one())).collect(),
                }
            }
        }
    };
}

unit_grid!(
    /// Grayscale intensities in `[0, 1]`, row-major.
    ImageGrid,
    "image"
);
unit_grid!(
    /// Disparity values in `[0, 1]`, row-major. Convert to metric depth with
    /// a [`DepthRange`].
    DepthGrid,
    "depth grid"
);

impl<T: Real> ImageGrid<T> {
    /// Multiplies every intensity by `factor`, clamping into `[0, 1]`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v * factor).min(T::one())).collect(),
        }
    }
}

/// Rec. 601 luma, written relative to `r` so equal channels map to
/// themselves exactly.
pub fn luma<T: Real>(r: T, g: T, b: T) -> T {
    r + lit::<T>(0.587) * (g - r) + lit::<T>(0.114) * (b - r)
}

/// Unconstrained per-pixel values, e.g. an SSIM map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }
}

/// Non-negative per-pixel error with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Real> ErrorMap<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || valid.len() != data.len() {
            return Err(invalid("error map buffers do not match dimensions"));
        }
        if data.iter().zip(&valid).any(|(v, ok)| *ok && !(*v >= T::zero())) {
            return Err(invalid("error map holds a negative or NaN value at a valid pixel"));
        }
        Ok(Self {
            width,
            height,
            data,
            valid,
        })
    }

    pub fn all_valid(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(width, height, data, vec![true; n])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<T> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.data[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.valid.len().max(1) as f64
    }

    /// Mean over valid pixels in row-major order; `None` when nothing is valid.
    pub fn mean_valid(&self) -> Option<T> {
        let n = self.valid_count();
        if n == 0 {
            return None;
        }
        let sum: T = self
            .data
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| *v)
            .sum();
        Some(sum / T::from_usize_lossy(n))
    }
}

/// Bilinear lookup at continuous coordinates. `None` outside `[0, w−1] × [0, h−1]`.
#[inline]
pub fn bilinear_sample<T: Real>(img: &ImageGrid<T>, x: T, y: T) -> Option<T> {
    let max_x = T::from_usize_lossy(img.width - 1);
    let max_y = T::from_usize_lossy(img.height - 1);
    if !(x >= T::zero() && y >= T::zero() && x <= max_x && y <= max_y) {
        return None;
    }
    let fx = x.floor();
    let fy = y.floor();
    let x0 = fx.to_usize()?;
    let y0 = fy.to_usize()?;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let ax = x - fx;
    let ay = y - fy;
    let top = img.get(x0, y0) + (img.get(x1, y0) - img.get(x0, y0)) * ax;
    let bottom = img.get(x0, y1) + (img.get(x1, y1) - img.get(x0, y1)) * ax;
    Some(top + (bottom - top) * ay)
}

/// A target view reconstructed from a source image.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped<T> {
    /// Reconstructed intensities; invalid pixels hold 0.
    pub image: ImageGrid<T>,
    pub valid: Vec<bool>,
}

impl<T: Real> Warped<T> {
    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len().max(1) as f64
    }
}

/// Reconstructs the target view by sampling `source`.
///
/// `t` maps target-camera coordinates into source-camera coordinates. Each
/// target pixel is lifted with its own depth, moved by `t`, projected into the
/// source and sampled bilinearly. Pixels that leave the source frame or land
/// behind the source camera are invalid.
pub fn synthesize_view<T: Real>(
    source: &ImageGrid<T>,
    target_depth: &DepthGrid<T>,
    k: &CameraIntrinsics<T>,
    t: &RigidTransform<T>,
    range: &DepthRange<T>,
) -> Result<Warped<T>> {
    let (w, h) = (source.width(), source.height());
    if target_depth.width() != w || target_depth.height() != h {
        return Err(invalid(format!(
            "source is {}x{} but target depth is {}x{}",
            w,
            h,
            target_depth.width(),
            target_depth.height()
        )));
    }
    range.validate()?;
    let mut data = vec![T::zero(); w * h];
    let mut valid = vec![false; w * h];
    data.par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, mask))| {
            let v = T::from_usize_lossy(y);
            for x in 0..w {
                let z = range.to_depth(target_depth.get(x, y));
                let r = reproject_unchecked(T::from_usize_lossy(x), v, z, k, t);
                if !r.in_front() {
                    continue;
                }
                if let Some(s) = bilinear_sample(source, r.u, r.v) {
                    row[x] = s;
                    mask[x] = true;
                }
            }
        });
    Ok(Warped {
        image: ImageGrid {
            width: w,
            height: h,
            data,
        },
        valid,
    })
}

fn check_same<T: Real>(a: &ImageGrid<T>, b: &ImageGrid<T>) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(invalid(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Per-pixel SSIM over a 3x3 box window with edge replication.
pub fn ssim_map<T: Real>(a: &ImageGrid<T>, b: &ImageGrid<T>) -> Result<ScalarField<T>> {
    check_same(a, b)?;
    let (w, h) = (a.width(), a.height());
    let c1 = lit::<T>(SSIM_C1);
    let c2 = lit::<T>(SSIM_C2);
    let two = lit::<T>(2.0);
    let ninth = lit::<T>(1.0 / 9.0);
    let mut data = vec![T::zero(); w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let rows = [y.saturating_sub(1), y, (y + 1).min(h - 1)];
        for (x, out) in row.iter_mut().enumerate() {
            let cols = [x.saturating_sub(1), x, (x + 1).min(w - 1)];
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) =
                (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            for &yy in &rows {
                for &xx in &cols {
                    let p = a.get(xx, yy);
                    let q = b.get(xx, yy);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let mu_a = sa * ninth;
            let mu_b = sb * ninth;
            let var_a = saa * ninth - mu_a * mu_a;
            let var_b = sbb * ninth - mu_b * mu_b;
            let cov = sab * ninth - mu_a * mu_b;
            let num = (two * mu_a * mu_b + c1) * (two * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            *out = (num / den).max(-T::one()).min(T::one());
        }
    });
    Ok(ScalarField {
        width: w,
        height: h,
        data,
    })
}

/// `(alpha/2)·(1 − SSIM) + (1 − alpha)·|a − b|` per pixel, all pixels valid.
pub fn photometric_error<T: Real>(a: &ImageGrid<T>, b: &ImageGrid<T>, alpha: T) -> Result<ErrorMap<T>> {
    let valid = vec![true; a.data().len()];
    photometric_error_masked(a, b, &valid, alpha)
}

/// As [`photometric_error`], carrying an externally supplied validity mask.
pub fn photometric_error_masked<T: Real>(
    a: &ImageGrid<T>,
    b: &ImageGrid<T>,
    valid: &[bool],
    alpha: T,
) -> Result<ErrorMap<T>> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    check_same(a, b)?;
    if valid.len() != a.data().len() {
        return Err(invalid("validity mask length does not match image"));
    }
    let ssim = ssim_map(a, b)?;
    let half_alpha = alpha * lit(0.5);
    let l1_weight = T::one() - alpha;
    let data = ssim
        .data
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&s, (&p, &q))| (half_alpha * (T::one() - s) + l1_weight * (p - q).abs()).max(T::zero()))
        .collect();
    ErrorMap::new(a.width(), a.height(), data, valid.to_vec())
}

/// Per-pixel minimum over maps, considering only valid entries.
pub fn min_reprojection<T: Real>(maps: &[ErrorMap<T>]) -> Result<ErrorMap<T>> {
    let first = maps
        .first()
        .ok_or_else(|| invalid("min_reprojection needs at least one map"))?;
    let (w, h) = (first.width, first.height);
    if maps.iter().any(|m| m.width != w || m.height != h) {
        return Err(invalid("error maps have differing dimensions"));
    }
    let mut data = vec![T::zero(); w * h];
    let mut valid = vec![false; w * h];
    for m in maps {
        for i in 0..w * h {
            if !m.valid[i] {
                continue;
            }
            if !valid[i] || m.data[i] < data[i] {
                data[i] = m.data[i];
                valid[i] = true;
            }
        }
    }
    ErrorMap::new(w, h, data, valid)
}

/// Edge-aware first-order smoothness of a disparity grid.
///
/// Mean over pixels of `|∂x d|·exp(−|∂x i|) + |∂y d|·exp(−|∂y i|)` using
/// forward differences; the last column/row contributes zero gradient.
pub fn smoothness_loss<T: Real>(d: &DepthGrid<T>, img: &ImageGrid<T>) -> Result<T> {
    let (w, h) = (d.width(), d.height());
    if img.width() != w || img.height() != h {
        return Err(invalid("depth grid and image dimensions differ"));
    }
    let mut sum = T::zero();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let gd = (d.get(x + 1, y) - d.get(x, y)).abs();
                let gi = (img.get(x + 1, y) - img.get(x, y)).abs();
                sum += gd * (-gi).exp();
            }
            if y + 1 < h {
                let gd = (d.get(x, y + 1) - d.get(x, y)).abs();
                let gi = (img.get(x, y + 1) - img.get(x, y)).abs();
                sum += gd * (-gi).exp();
            }
        }
    }
    Ok(sum / T::from_usize_lossy(w * h))
}

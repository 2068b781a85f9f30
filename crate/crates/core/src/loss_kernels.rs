//! Forward kernels for the detection, depth and weighting losses.

use crate::error::{invalid, Result};
use crate::scalar::{lit, Real};

/// Row-major grid of values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> HeatmapGrid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(invalid(format!("heatmap {width}x{height} needs {} values, got {}", width * height, data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(invalid(format!("heatmap value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
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

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub alpha_focal: T,
    pub beta_focal: T,
    pub sigma: T,
    pub lambda: T,
    pub gamma: T,
    pub w1: T,
    pub w2: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            alpha_focal: lit(2.0),
            beta_focal: lit(4.0),
            sigma: lit(2.0),
            lambda: lit(0.001),
            gamma: lit(50.0),
            w1: T::zero(),
            w2: T::zero(),
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_focal >= T::zero() && self.beta_focal >= T::zero()) {
            return Err(invalid("focal exponents must be non-negative"));
        }
        if !(self.sigma > T::zero()) {
            return Err(invalid("sigma must be positive"));
        }
        if !(self.lambda >= T::zero() && self.gamma >= T::zero()) {
            return Err(invalid("lambda and gamma must be non-negative"));
        }
        if !(self.w1.is_finite() && self.w2.is_finite()) {
            return Err(invalid("log-variances must be finite"));
        }
        Ok(())
    }
}

/// Sum of unit Gaussians centred on `centers`, clamped to 1.
pub fn gaussian_heatmap<T: Real>(centers: &[(T, T)], sigma: T, width: usize, height: usize) -> Result<HeatmapGrid<T>> {
    if !(sigma > T::zero()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    let denom = lit::<T>(2.0) * sigma * sigma;
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (T::from_usize_lossy(x), T::from_usize_lossy(y));
            let v: T = centers
                .iter()
                .map(|&(cx, cy)| (-((px - cx) * (px - cx) + (py - cy) * (py - cy)) / denom).exp())
                .sum();
            data.push(v.min(T::one()));
        }
    }
    Ok(HeatmapGrid { width, height, data })
}

pub const PROB_EPS: f64 = 1e-7;

/// Pixel-wise focal loss. Pixels with `gt == 1` are peaks; every other pixel
/// is down-weighted by `(1 − gt)^β` and penalised through `log(1 − p)`.
pub fn focal_heatmap_loss<T: Real>(pred: &HeatmapGrid<T>, gt: &HeatmapGrid<T>, n_objects: usize, w: &LossWeights<T>) -> Result<T> {
    if n_objects < 1 {
        return Err(invalid("n_objects must be at least 1"));
    }
    if pred.width != gt.width || pred.height != gt.height {
        return Err(invalid(format!(
            "heatmap sizes differ: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    w.validate()?;
    let eps = lit::<T>(PROB_EPS);
    let mut total = T::zero();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let p = p.max(eps).min(T::one() - eps);
        let term = if g == T::one() {
            (T::one() - p).powf(w.alpha_focal) * p.ln()
        } else {
            (T::one() - g).powf(w.beta_focal) * p.powf(w.alpha_focal) * (T::one() - p).ln()
        };
        total -= term;
    }
    Ok(total / T::from_usize_lossy(n_objects))
}

/// `Σ ‖Δcentre‖₁ + 0.1·‖Δsize‖₁` over boxes given as `[cx, cy, w, h]`.
pub fn box_size_loss<T: Real>(pred: &[[T; 4]], gt: &[[T; 4]]) -> Result<T> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(invalid(format!("box lists must be equal and non-empty, got {} and {}", pred.len(), gt.len())));
    }
    let size_weight = lit::<T>(0.1);
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let centre = (p[0] - g[0]).abs() + (p[1] - g[1]).abs();
            let size = (p[2] - g[2]).abs() + (p[3] - g[3]).abs();
            centre + size_weight * size
        })
        .sum())
}

fn non_negative<T: Real>(name: &str, v: T) -> Result<()> {
    if v >= T::zero() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be non-negative, got {v}")))
    }
}

pub fn detection_loss<T: Real>(l_heat: T, l_box: T) -> Result<T> {
    non_negative("heatmap loss", l_heat)?;
    non_negative("box loss", l_box)?;
    Ok(l_heat + l_box)
}

/// `Σᵢ reprojᵢ + λ·smoothᵢ` over the pyramid scales.
pub fn depth_loss<T: Real>(reproj: &[T], smooth: &[T], lambda: T) -> Result<T> {
    if reproj.is_empty() || reproj.len() != smooth.len() {
        return Err(invalid(format!(
            "scale lists must be equal and non-empty, got {} and {}",
            reproj.len(),
            smooth.len()
        )));
    }
    Ok(reproj.iter().zip(smooth).map(|(r, s)| *r + lambda * *s).sum())
}

/// Homoscedastic weighting of the two task losses by learned log-variances.
pub fn uncertainty_total<T: Real>(l_det: T, l_depth: T, w: &LossWeights<T>) -> Result<T> {
    non_negative("detection loss", l_det)?;
    non_negative("depth loss", l_depth)?;
    let half = lit::<T>(0.5);
    Ok(half * ((-w.w1).exp() * l_det + (-w.w2).exp() * w.gamma * l_depth + w.w1 + w.w2))
}

/// Partial derivatives of [`uncertainty_total`] with respect to `w1` and `w2`.
pub fn uncertainty_gradient<T: Real>(l_det: T, l_depth: T, w: &LossWeights<T>) -> Result<(T, T)> {
    non_negative("detection loss", l_det)?;
    non_negative("depth loss", l_depth)?;
    let half = lit::<T>(0.5);
    Ok((
        half * (T::one() - (-w.w1).exp() * l_det),
        half * (T::one() - (-w.w2).exp() * w.gamma * l_depth),
    ))
}

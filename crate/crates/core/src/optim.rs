//! Derivative-free simplex descent (Nelder-Mead).

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions<T> {
    /// Hard cap on objective evaluations, including the initial simplex.
    pub max_evals: usize,
    /// Stop once `f(worst) − f(best)` drops below this.
    pub f_tol: T,
    /// Restart around the incumbent after convergence while budget remains.
    pub restarts: usize,
}

#[derive(Debug, Clone)]
pub struct SimplexResult<T, const N: usize> {
    pub x: [T; N],
    pub f: T,
    pub evals: usize,
    /// Best objective value after every evaluation; non-increasing.
    pub history: Vec<T>,
}

/// Minimizes `f` starting at `x0` with initial simplex edge `step[i]` along
/// axis `i`.
///
/// Standard coefficients: reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5. Ties between vertices are broken by insertion order, so the
/// search is fully deterministic.
pub fn minimize<T, const N: usize, F>(mut f: F, x0: [T; N], step: [T; N], opts: &SimplexOptions<T>) -> SimplexResult<T, N>
where
    T: Real,
    F: FnMut(&[T; N]) -> T,
{
    let mut evals = 0usize;
    let mut history = Vec::new();
    let mut best_x = x0;
    let mut best_f = T::infinity();

    let mut eval = |x: &[T; N], evals: &mut usize, history: &mut Vec<T>, best_x: &mut [T; N], best_f: &mut T| {
        let v = f(x);
        *evals += 1;
        let v = if v.is_nan() { T::infinity() } else { v };
        if v < *best_f {
            *best_f = v;
            *best_x = *x;
        }
        history.push(*best_f);
        v
    };

    let mut start = x0;
    let mut scale = T::one();
    for _round in 0..=opts.restarts {
        if evals + N + 1 > opts.max_evals {
            break;
        }
        let mut verts: Vec<([T; N], T)> = Vec::with_capacity(N + 1);
        let f0 = eval(&start, &mut evals, &mut history, &mut best_x, &mut best_f);
        verts.push((start, f0));
        for i in 0..N {
            let mut x = start;
            x[i] += step[i] * scale;
            let fx = eval(&x, &mut evals, &mut history, &mut best_x, &mut best_f);
            verts.push((x, fx));
        }

        loop {
            // Stable sort keeps earlier vertices first among equal values.
            verts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            let spread = verts[N].1 - verts[0].1;
            if (verts[0].1.is_finite() && spread.abs() < opts.f_tol) || evals >= opts.max_evals {
                break;
            }
            let mut centroid = [T::zero(); N];
            for (x, _) in &verts[..N] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += *xi;
                }
            }
            let inv_n = T::one() / T::from_usize_lossy(N);
            for c in centroid.iter_mut() {
                *c *= inv_n;
            }
            let worst = verts[N].0;
            let along = |t: T| -> [T; N] {
                let mut out = [T::zero(); N];
                for i in 0..N {
                    out[i] = centroid[i] + (centroid[i] - worst[i]) * t;
                }
                out
            };

            let xr = along(T::one());
            let fr = eval(&xr, &mut evals, &mut history, &mut best_x, &mut best_f);
            if fr < verts[0].1 {
                if evals >= opts.max_evals {
                    verts[N] = (xr, fr);
                    continue;
                }
                let xe = along(lit(2.0));
                let fe = eval(&xe, &mut evals, &mut history, &mut best_x, &mut best_f);
                verts[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < verts[N - 1].1 {
                verts[N] = (xr, fr);
                continue;
            }
            if evals >= opts.max_evals {
                break;
            }
            // Outside contraction when the reflection beat the worst point,
            // inside contraction otherwise.
            let (xc, fc) = if fr < verts[N].1 {
                let xc = along(lit(0.5));
                let fc = eval(&xc, &mut evals, &mut history, &mut best_x, &mut best_f);
                (xc, fc)
            } else {
                let xc = along(lit(-0.5));
                let fc = eval(&xc, &mut evals, &mut history, &mut best_x, &mut best_f);
                (xc, fc)
            };
            if fc < verts[N].1.min(fr) {
                verts[N] = (xc, fc);
                continue;
            }
            let anchor = verts[0].0;
            for v in verts.iter_mut().skip(1) {
                if evals >= opts.max_evals {
                    break;
                }
                for i in 0..N {
                    v.0[i] = anchor[i] + (v.0[i] - anchor[i]) * lit(0.5);
                }
                v.1 = eval(&v.0, &mut evals, &mut history, &mut best_x, &mut best_f);
            }
        }
        start = best_x;
        scale *= lit(0.5);
    }

    SimplexResult {
        x: best_x,
        f: best_f,
        evals,
        history,
    }
}

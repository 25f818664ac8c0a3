#![allow(dead_code)]

use std::f64::consts::PI;

/// Integrals past this many standard deviations are dropped.
pub const TAIL_SIGMAS: f64 = 14.0;

pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }

    if lo >= hi {
        return 0.0;
    }
    let (fa, fb) = (f(lo), f(hi));
    let (m, fm, whole) = simpson(f, lo, fa, hi, fb);
    recurse(f, lo, fa, hi, fb, m, fm, whole, tol, 50)
}

pub fn normal_pdf(x: f64, sigma2: f64) -> f64 {
    (-0.5 * x * x / sigma2).exp() / (2.0 * PI * sigma2).sqrt()
}

/// `min_c E[(X - c)^2; X in region]` for `X ~ N(0, sigma2)` and a union of intervals.
pub fn region_residual(sigma2: f64, region: &[(f64, f64)]) -> f64 {
    let s = sigma2.sqrt();
    let clip = |(lo, hi): (f64, f64)| (lo.max(-TAIL_SIGMAS * s), hi.min(TAIL_SIGMAS * s));
    let parts: Vec<(f64, f64)> = region.iter().copied().map(clip).filter(|(lo, hi)| lo < hi).collect();
    let tol = 1e-15 * sigma2;
    let moment = |k: i32| -> f64 {
        parts
            .iter()
            .map(|&(lo, hi)| adaptive_simpson(&|x| x.powi(k) * normal_pdf(x, sigma2), lo, hi, tol))
            .sum()
    };
    let mass = moment(0);
    if mass <= 0.0 {
        return 0.0;
    }
    let mean = moment(1) / mass;
    parts
        .iter()
        .map(|&(lo, hi)| adaptive_simpson(&|x| (x - mean).powi(2) * normal_pdf(x, sigma2), lo, hi, tol))
        .sum()
}

/// Stage cost of silence on `[lo, hi]` and an attempt dropped with
/// probability `p` elsewhere.
pub fn stage_cost_oracle(sigma2: f64, p: f64, lo: f64, hi: f64) -> f64 {
    region_residual(sigma2, &[(lo, hi)])
        + p * region_residual(sigma2, &[(f64::NEG_INFINITY, lo), (hi, f64::INFINITY)])
}

/// Expected total squared error when nothing is ever delivered: the error
/// before stage `n + 1` is a sum of `n` noise terms scaled by powers of `a`.
pub fn open_loop_cost(a: f64, sigma2: f64, horizon: usize) -> f64 {
    (1..=horizon)
        .map(|n| (0..n).map(|j| a.powi(2 * j as i32)).sum::<f64>())
        .sum::<f64>()
        * sigma2
}

/// Per-stage bound on the difference quotients of the expected next value.
pub fn curvature_bound(a: f64, horizon: usize, n: usize) -> f64 {
    2.0 * a * a * (horizon + 1 - n) as f64 + a * a
}

/// Drop-probability level below which threshold policies are optimal.
pub fn small_drop_level(a: f64, horizon: usize) -> f64 {
    1.0 / (1.0 + curvature_bound(a, horizon, 1))
}

/// Symmetric, non-decreasing outward from `center`, minimum at `center`,
/// all up to `tol`.
pub fn slice_is_bowl(values: &[f64], center: usize, tol: f64) -> bool {
    let n = values.len();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values[center] > min + tol {
        return false;
    }
    (1..=center.min(n - 1 - center)).all(|k| {
        (values[center - k] - values[center + k]).abs() <= tol
            && values[center + k] >= values[center + k - 1] - tol
            && values[center - k] >= values[center - k + 1] - tol
    })
}

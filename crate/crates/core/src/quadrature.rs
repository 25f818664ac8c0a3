//! Gaussian integration kernels on a symmetric error grid.
//!
//! Value functions are sampled on a uniform grid centred at zero. The
//! expectation operator `h(e) = E[f(a e + W)]`, `W ~ N(0, sigma2)`, is
//! evaluated by a discrete convolution of `f` with a sampled Gaussian kernel on
//! the grid lattice, followed by linear interpolation at `a e`. Both steps
//! preserve symmetry and monotonicity in `|e|`, so structural properties of
//! `f` carry over exactly (up to rounding) to the computed `h`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::process::PlantModel;

/// Kernel support and auto-sized grid half-width, in standard deviations.
pub const KERNEL_SIGMAS: f64 = 8.0;

/// Uniform grid on `[-half_width, half_width]` with an odd number of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorGrid {
    half_width: f64,
    num_points: usize,
}

impl ErrorGrid {
    pub fn new(half_width: f64, num_points: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if num_points < 3 || num_points.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "grid needs an odd number of points >= 3, got {num_points}"
            )));
        }
        Ok(Self { half_width, num_points })
    }

    /// `8 sigma max(1, |a|)^N`, capped at `cap`.
    pub fn auto_half_width(plant: &PlantModel, cap: f64) -> f64 {
        let growth = plant.a.abs().max(1.0).powi(plant.horizon as i32);
        (KERNEL_SIGMAS * plant.sigma() * growth).min(cap)
    }

    pub fn auto(plant: &PlantModel, num_points: usize, cap: f64) -> Result<Self> {
        Self::new(Self::auto_half_width(plant, cap), num_points)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    /// Index of the grid point at zero.
    pub fn center(&self) -> usize {
        self.num_points / 2
    }

    pub fn spacing(&self) -> f64 {
        self.half_width / self.center() as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        (i as f64 - self.center() as f64) * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.num_points).map(|i| self.point(i)).collect()
    }

    /// Nearest grid index, clamped to the grid.
    pub fn nearest(&self, e: f64) -> usize {
        let t = (e / self.spacing()).round() + self.center() as f64;
        t.clamp(0.0, (self.num_points - 1) as f64) as usize
    }
}

/// Outward quadratic extension `f(edge) + gamma (x^2 - edge^2)` on each side.
///
/// `gamma` is the least-squares slope of `f(x) - f(edge)` against
/// `x^2 - edge^2` over the outer band of the grid. It is linear in the data,
/// exact for `alpha x^2 + beta`, and non-negative whenever `f` is
/// non-decreasing towards the edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub left: f64,
    pub right: f64,
}

impl TailModel {
    fn fit(grid: &ErrorGrid, values: &[f64]) -> Self {
        let n = grid.num_points();
        let band = (n / 20).max(2).min(grid.center());
        let edge = grid.half_width();
        let fit_side = |index: &dyn Fn(usize) -> usize| {
            let fe = values[index(0)];
            let (mut num, mut den) = (0.0, 0.0);
            for k in 1..=band {
                let x = grid.point(index(k)).abs();
                let dx = x * x - edge * edge;
                num += (values[index(k)] - fe) * dx;
                den += dx * dx;
            }
            num / den
        };
        Self {
            left: fit_side(&|k| k),
            right: fit_side(&|k| n - 1 - k),
        }
    }
}

/// A function sampled on an [`ErrorGrid`] with a quadratic tail model.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: ErrorGrid,
    values: Vec<f64>,
    tail: TailModel,
}

impl GridFunction {
    pub fn new(grid: ErrorGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_points() {
            return Err(Error::InvalidArgument(format!(
                "grid function has {} values for {} grid points",
                values.len(),
                grid.num_points()
            )));
        }
        let tail = TailModel::fit(&grid, &values);
        Ok(Self { grid, values, tail })
    }

    pub fn from_fn(grid: ErrorGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().into_iter().map(f).collect();
        Self::new(grid, values).expect("length matches by construction")
    }

    pub fn grid(&self) -> &ErrorGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail(&self) -> TailModel {
        self.tail
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at lattice index `j` counted from the centre; uses the tail model
    /// off the grid.
    fn lattice(&self, j: i64) -> f64 {
        let c = self.grid.center() as i64;
        if j.abs() <= c {
            self.values[(j + c) as usize]
        } else {
            let x = j as f64 * self.grid.spacing();
            let e = self.grid.half_width();
            let (edge, gamma) = if j < 0 {
                (self.values[0], self.tail.left)
            } else {
                (self.values[self.values.len() - 1], self.tail.right)
            };
            edge + gamma * (x * x - e * e)
        }
    }

    /// Piecewise-linear interpolation on the grid, tail model outside it.
    pub fn value_at(&self, x: f64) -> f64 {
        let t = x / self.grid.spacing();
        let c = self.grid.center() as f64;
        if t.abs() > c {
            let e = self.grid.half_width();
            return if t < 0.0 {
                self.values[0] + self.tail.left * (x * x - e * e)
            } else {
                self.values[self.values.len() - 1] + self.tail.right * (x * x - e * e)
            };
        }
        interpolate(|j| self.lattice(j), t)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid functions live on different grids");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Self::new(self.grid, values).expect("same grid")
    }

    pub fn pointwise_min(&self, other: &Self) -> Self {
        self.zip_with(other, f64::min)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

fn interpolate(lattice: impl Fn(i64) -> f64, t: f64) -> f64 {
    let j = t.floor();
    let theta = t - j;
    let j = j as i64;
    if theta == 0.0 {
        lattice(j)
    } else {
        (1.0 - theta) * lattice(j) + theta * lattice(j + 1)
    }
}

/// Normalised Gaussian kernel weights `w[0..=K]` on the grid spacing.
fn kernel(spacing: f64, sigma2: f64) -> Vec<f64> {
    let sigma = sigma2.sqrt();
    let half = (KERNEL_SIGMAS * sigma / spacing).ceil() as usize;
    let mut w: Vec<f64> = (0..=half)
        .map(|k| {
            let x = k as f64 * spacing;
            (-x * x / (2.0 * sigma2)).exp()
        })
        .collect();
    let total = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Lattice convolution `H(j) = sum_k w_k F(j + k)` for `j` in `[-reach, reach]`.
struct Convolved {
    reach: i64,
    values: Vec<f64>,
}

impl Convolved {
    fn new(f: &GridFunction, sigma2: f64, reach: i64) -> Self {
        let w = kernel(f.grid.spacing(), sigma2);
        let half = (w.len() - 1) as i64;
        let ext_reach = reach + half;
        let ext: Vec<f64> = (-ext_reach..=ext_reach).map(|j| f.lattice(j)).collect();
        let at = |j: i64| ext[(j + ext_reach) as usize];
        let values = (-reach..=reach)
            .map(|j| {
                let mut acc = w[0] * at(j);
                for (k, &wk) in w.iter().enumerate().skip(1) {
                    let k = k as i64;
                    acc += wk * (at(j + k) + at(j - k));
                }
                acc
            })
            .collect();
        Self { reach, values }
    }

    fn at(&self, j: i64) -> f64 {
        self.values[(j + self.reach) as usize]
    }
}

/// `h(e) = E[f(a e + W)]` with `W ~ N(0, sigma2)`, on the grid of `f`.
pub fn gaussian_expectation(f: &GridFunction, a: f64, sigma2: f64) -> GridFunction {
    let grid = f.grid;
    let c = grid.center() as f64;
    let reach = (a.abs() * c).ceil() as i64 + 1;
    let conv = Convolved::new(f, sigma2, reach);
    let values = (0..grid.num_points())
        .map(|i| interpolate(|j| conv.at(j), a * (i as f64 - c)))
        .collect();
    GridFunction::new(grid, values).expect("same grid")
}

/// `E[f(W)]` with `W ~ N(0, sigma2)`: the expectation operator at `a e = 0`.
pub fn gaussian_mean(f: &GridFunction, sigma2: f64) -> f64 {
    Convolved::new(f, sigma2, 0).at(0)
}

/// Where a function first fails to be symmetric and non-decreasing in `|e|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeViolation {
    Asymmetric { e: f64, left: f64, right: f64 },
    Decreasing { e: f64, inner: f64, outer: f64 },
}

impl ShapeViolation {
    pub fn location(&self) -> f64 {
        match *self {
            Self::Asymmetric { e, .. } | Self::Decreasing { e, .. } => e,
        }
    }
}

/// Checks `|f(e) - f(-e)| <= tol` and monotonicity in `|e|` up to `tol`,
/// scanning outward from zero. Returns the first violation.
pub fn is_symmetric_nondecreasing(f: &GridFunction, tol: f64) -> (bool, Option<ShapeViolation>) {
    let c = f.grid.center();
    let v = &f.values;
    for k in 1..=c {
        let (l, r) = (v[c - k], v[c + k]);
        let e = f.grid.point(c + k);
        if (l - r).abs() > tol {
            return (false, Some(ShapeViolation::Asymmetric { e, left: l, right: r }));
        }
        if r < v[c + k - 1] - tol {
            return (false, Some(ShapeViolation::Decreasing { e, inner: v[c + k - 1], outer: r }));
        }
        if l < v[c - k + 1] - tol {
            return (false, Some(ShapeViolation::Decreasing { e: -e, inner: v[c - k + 1], outer: l }));
        }
    }
    (true, None)
}

/// Grid indices `i < j < k` with `f(j) > max(f(i), f(k)) + tol`, if any exist.
///
/// Exhaustive over all grid triples, in linear time via prefix and suffix minima.
pub fn quasi_convexity_violation(f: &GridFunction, tol: f64) -> Option<(usize, usize, usize)> {
    let v = &f.values;
    let n = v.len();
    let mut suffix_min = vec![(f64::INFINITY, n); n + 1];
    for i in (0..n).rev() {
        suffix_min[i] = if v[i] < suffix_min[i + 1].0 { (v[i], i) } else { suffix_min[i + 1] };
    }
    let mut prefix = (f64::INFINITY, n);
    for j in 0..n {
        let (right, k) = suffix_min[j + 1];
        if prefix.1 < n && k < n && v[j] > prefix.0.max(right) + tol {
            return Some((prefix.1, j, k));
        }
        if v[j] < prefix.0 {
            prefix = (v[j], j);
        }
    }
    None
}

/// Forward difference quotient of `f` with respect to `e^2` over one grid
/// spacing: `(f(e + d) - f(e)) / ((e + d)^2 - e^2)`.
pub fn directional_difference_quotient(f: &GridFunction, e: f64) -> Result<f64> {
    if e < 0.0 || e.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "difference quotient needs e >= 0, got {e}"
        )));
    }
    let g = &f.grid;
    let d = g.spacing();
    let i = g.nearest(e);
    if e + d > g.half_width() * (1.0 + 1e-12) || i + 1 >= g.num_points() {
        return Err(Error::OutOfGrid { e, half_width: g.half_width() });
    }
    let (x0, x1, f0, f1) = if (g.point(i) - e).abs() <= 1e-9 * d {
        (g.point(i), g.point(i + 1), f.values[i], f.values[i + 1])
    } else {
        (e, e + d, f.value_at(e), f.value_at(e + d))
    };
    Ok((f1 - f0) / (x1 * x1 - x0 * x0))
}

fn std_density(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    }
}

fn z_density(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        z * std_density(z)
    }
}

/// Upper tail `P(Z > z)` of the standard normal.
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// `P(a <= Z <= b)` for standard normal `Z`, computed from the tails to avoid
/// cancellation.
fn std_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - upper_tail(-a) - upper_tail(b)
    }
}

/// Unnormalised moments `E[X^k; lo <= X <= hi]`, `k = 0, 1, 2`, of `X ~ N(0, sigma2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PartialMoments {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

impl PartialMoments {
    pub fn on(sigma2: f64, lo: f64, hi: f64) -> Self {
        if !(lo < hi) {
            return Self::default();
        }
        let sigma = sigma2.sqrt();
        let (a, b) = (lo / sigma, hi / sigma);
        let m0 = std_mass(a, b).max(0.0);
        let m1 = sigma * (std_density(a) - std_density(b));
        let m2 = (sigma2 * (m0 + z_density(a) - z_density(b))).max(0.0);
        Self { m0, m1, m2 }
    }

    /// Moments over the complement of `[lo, hi]`.
    pub fn outside(sigma2: f64, lo: f64, hi: f64) -> Self {
        if !(lo <= hi) {
            return Self::on(sigma2, f64::NEG_INFINITY, f64::INFINITY);
        }
        Self::on(sigma2, f64::NEG_INFINITY, lo) + Self::on(sigma2, hi, f64::INFINITY)
    }

    /// `E[(X - c)^2; region]` minimised over `c`, i.e. mass times conditional variance.
    pub fn residual(&self) -> f64 {
        if self.m0 <= 0.0 {
            0.0
        } else {
            (self.m2 - self.m1 * self.m1 / self.m0).max(0.0)
        }
    }
}

impl std::ops::Add for PartialMoments {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            m0: self.m0 + rhs.m0,
            m1: self.m1 + rhs.m1,
            m2: self.m2 + rhs.m2,
        }
    }
}

/// Mass, conditional mean and conditional second moment of `N(0, sigma2)` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub mass: f64,
    pub mean: f64,
    pub second_moment: f64,
}

impl TruncatedMoments {
    pub fn variance(&self) -> f64 {
        (self.second_moment - self.mean * self.mean).max(0.0)
    }
}

pub const MASS_UNDERFLOW: f64 = 1e-300;

pub fn truncated_moments(sigma2: f64, lo: f64, hi: f64) -> Result<TruncatedMoments> {
    if !(sigma2 > 0.0) || !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "truncated moments need sigma2 > 0 and lo < hi, got sigma2 = {sigma2}, [{lo}, {hi}]"
        )));
    }
    normalise(PartialMoments::on(sigma2, lo, hi), lo, hi)
}

pub(crate) fn normalise(p: PartialMoments, lo: f64, hi: f64) -> Result<TruncatedMoments> {
    if p.m0 < MASS_UNDERFLOW {
        return Err(Error::DegenerateInterval { lo, hi, mass: p.m0 });
    }
    Ok(TruncatedMoments {
        mass: p.m0,
        mean: p.m1 / p.m0,
        second_moment: p.m2 / p.m0,
    })
}

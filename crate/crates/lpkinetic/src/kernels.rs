//! Gaussian and kinetic alpha-stable kernels, the shear `Γ` that intertwines
//! free transport with convolution, and a quadrature for the nonlocal
//! velocity operator `∫ (f(v+w)+f(v-w)-2f(v)) κ dw/|w|^{1+α}`.
//!
//! Kinetic objects are one-dimensional per group: fields are `(x, v)` grids
//! with `x` on axis 0.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::lp_core::{fft_axis, Field, GridSpec};
use crate::quad::{gl, integrate_panels, uniform_breaks};
use crate::{Error, Result};

fn piece_index(breaks: &[f64], t: f64) -> usize {
    breaks.partition_point(|&b| b <= t).saturating_sub(1)
}

fn check_breaks(breaks: &[f64], n_values: usize) -> Result<()> {
    if breaks.is_empty() || breaks.len() != n_values {
        return Err(Error::param("breaks", "one break per tabulated value, at least one"));
    }
    if breaks.windows(2).any(|w| !(w[1] > w[0])) || breaks.iter().any(|b| !b.is_finite()) {
        return Err(Error::param("breaks", "must be finite and strictly increasing"));
    }
    Ok(())
}

/// Sub-intervals of `[a, b]` on which a table with these breaks is constant,
/// as `(lo, hi, piece)`.
fn overlaps(breaks: &[f64], a: f64, b: f64) -> Vec<(f64, f64, usize)> {
    let mut out = Vec::new();
    let mut lo = a;
    while lo < b {
        let i = piece_index(breaks, lo);
        let hi = if i + 1 < breaks.len() { breaks[i + 1].min(b) } else { b };
        out.push((lo, hi, i));
        lo = hi;
    }
    out
}

/// Piecewise-constant scalar path: `values[i]` on `[breaks[i], breaks[i+1])`.
/// The first value also holds to the left, the last to the right.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepPath {
    pub fn constant(c: f64) -> Self {
        Self { breaks: vec![0.0], values: vec![c] }
    }

    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_breaks(&breaks, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("values", "must be finite"));
        }
        Ok(Self { breaks, values })
    }

    pub fn value(&self, t: f64) -> f64 {
        self.values[piece_index(&self.breaks, t)]
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        overlaps(&self.breaks, a, b).iter().map(|&(lo, hi, i)| (hi - lo) * self.values[i]).sum()
    }

    /// `(min, max)` of the path over `[a, b]`.
    pub fn range(&self, a: f64, b: f64) -> (f64, f64) {
        overlaps(&self.breaks, a, b)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, _, i)| {
                (lo.min(self.values[i]), hi.max(self.values[i]))
            })
    }
}

/// Centered Gaussian law with covariance `A_{s,t} = ∫_s^t a(r) dr` for a
/// piecewise-constant coefficient table.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub breaks: Vec<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
    pub s: f64,
    pub t: f64,
}

impl GaussianSpec {
    pub fn new(breaks: Vec<f64>, coeffs: Vec<DMatrix<f64>>, s: f64, t: f64) -> Result<Self> {
        check_breaks(&breaks, coeffs.len())?;
        let d = coeffs[0].nrows();
        for c in &coeffs {
            if c.nrows() != d || c.ncols() != d {
                return Err(Error::Dimension { expected: d, got: c.nrows().max(c.ncols()) });
            }
            if (c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
                return Err(Error::param("coeffs", "diffusion matrices must be symmetric"));
            }
        }
        if !(t > s) {
            return Err(Error::param("t", "need t > s"));
        }
        Ok(Self { breaks, coeffs, s, t })
    }

    pub fn constant(a: DMatrix<f64>, s: f64, t: f64) -> Result<Self> {
        Self::new(vec![s], vec![a], s, t)
    }

    /// `a = I` in `d` dimensions.
    pub fn identity(d: usize, s: f64, t: f64) -> Result<Self> {
        Self::constant(DMatrix::identity(d, d), s, t)
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn with_times(&self, s: f64, t: f64) -> Result<Self> {
        Self::new(self.breaks.clone(), self.coeffs.clone(), s, t)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        overlaps(&self.breaks, self.s, self.t)
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, &(lo, hi, i)| acc + &self.coeffs[i] * (hi - lo))
    }

    /// Smallest `c0` with `|ξ|²/c0 <= <a ξ, ξ> <= c0 |ξ|²` over the table.
    pub fn ellipticity(&self) -> f64 {
        self.coeffs.iter().fold(1.0f64, |c0, a| {
            let ev = a.clone().symmetric_eigenvalues();
            let lo = ev.min();
            let hi = ev.max();
            if lo <= 0.0 {
                f64::INFINITY
            } else {
                c0.max(hi).max(1.0 / lo)
            }
        })
    }
}

/// Density of `N(0, A_{s,t})` at `x`, normalized by `(2π)^{d/2} (det A)^{1/2}`.
pub fn gaussian_kernel(spec: &GaussianSpec, x: &[f64]) -> Result<f64> {
    let d = spec.dim();
    if x.len() != d {
        return Err(Error::Dimension { expected: d, got: x.len() });
    }
    let cov = spec.covariance();
    let chol = cov.clone().cholesky().ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let xv = nalgebra::DVector::from_column_slice(x);
    let y = chol.solve(&xv);
    let q = xv.dot(&y);
    let det = chol.determinant();
    Ok((-0.5 * q).exp() / ((2.0 * PI).powf(d as f64 / 2.0) * det.sqrt()))
}

/// Constant `c` such that `∫ (f(v+w)+f(v-w)-2f(v)) dw/|w|^{d+α}` acts on
/// `e^{iη·v}` as multiplication by `-c |η|^α`. Zero at `α = 2`.
pub fn c_alpha(d: usize, alpha: f64) -> f64 {
    let d = d as f64;
    let norm = alpha * 2f64.powf(alpha - 1.0) * gamma((d + alpha) / 2.0)
        / (PI.powf(d / 2.0) * gamma(1.0 - alpha / 2.0));
    2.0 / norm
}

/// Symbol constant used by the kinetic kernels: `c_alpha(1, α)` for `α < 2`
/// and 1 at `α = 2`, where the operator is `κ0 ∂_v²`.
pub fn symbol_constant(alpha: f64) -> f64 {
    if alpha >= 2.0 {
        1.0
    } else {
        c_alpha(1, alpha)
    }
}

/// `(1 - cos y) / y²`, stable near zero.
fn versine_ratio(y: f64) -> f64 {
    if y.abs() < 1e-4 {
        0.5 - y * y / 24.0
    } else {
        let s = (0.5 * y).sin();
        2.0 * s * s / (y * y)
    }
}

/// Rule for `∫_0^r g(w) w^{1-α} dw` after `w = r u^{1/(2-α)}`, which turns
/// the weight into a constant.
pub fn singular_weight_rule(alpha: f64, r: f64, n: usize) -> Vec<(f64, f64)> {
    let p = 1.0 / (2.0 - alpha);
    let scale = r.powf(2.0 - alpha) / (2.0 - alpha);
    gl(n).mapped(0.0, 1.0).map(|(u, w)| (r * u.powf(p), scale * w)).collect()
}

/// `∫_0^a (1 - cos y) y^{-1-α} dy`.
fn one_minus_cos_integral(alpha: f64, a: f64) -> f64 {
    let first = a.min(1.0);
    let mut s: f64 = singular_weight_rule(alpha, first, 32).iter().map(|&(y, w)| w * versine_ratio(y)).sum();
    if a > 1.0 {
        s += integrate_panels(&uniform_breaks(1.0, a, 1.0), 10, |y| (1.0 - y.cos()) * y.powf(-1.0 - alpha));
    }
    s
}

/// Numerical value of `c_alpha(1, α)` from the defining integral
/// `4 ∫_0^∞ (1 - cos y) y^{-1-α} dy`, cut where `sin = 0` with the
/// asymptotic remainder added.
pub fn calibrate_c_alpha(alpha: f64) -> f64 {
    let cut = 2.0 * PI * 2000.0;
    let head = one_minus_cos_integral(alpha, cut);
    let tail = cut.powf(-alpha) / alpha - (1.0 + alpha) * cut.powf(-2.0 - alpha);
    4.0 * (head + tail)
}

/// `∫_0^τ |y0 + m u|^α du`.
fn power_segment_integral(y0: f64, slope: f64, tau: f64, alpha: f64) -> f64 {
    let d = slope * tau;
    if d == 0.0 && y0 == 0.0 {
        return 0.0;
    }
    if d.abs() < 1e-3 * y0.abs() {
        let e = d / y0;
        let a = alpha;
        return tau
            * y0.abs().powf(a)
            * (1.0 + a * e / 2.0 + a * (a - 1.0) * e * e / 6.0 + a * (a - 1.0) * (a - 2.0) * e * e * e / 24.0);
    }
    let prim = |y: f64| y.abs().powf(alpha) * y / (alpha + 1.0);
    (prim(y0 + d) - prim(y0)) / slope
}

/// Frozen-coefficient kinetic semigroup for
/// `∂_t u = κ0(t) L_v u + U(t) v ∂_x u - λ u` in one dimension per group,
/// with `L_v` the unit-kernel operator whose symbol is `-c |η|^α`.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticKernelSpec {
    pub alpha: f64,
    pub kappa: StepPath,
    pub u: StepPath,
    pub lambda: f64,
    pub s: f64,
    pub t: f64,
}

impl KineticKernelSpec {
    pub fn constant(alpha: f64, kappa: f64, u: f64, s: f64, t: f64) -> Result<Self> {
        let spec = Self { alpha, kappa: StepPath::constant(kappa), u: StepPath::constant(u), lambda: 0.0, s, t };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::param("alpha", "must lie in (0, 2]"));
        }
        if !(self.t > self.s) {
            return Err(Error::param("t", "need t > s"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::param("lambda", "must be >= 0"));
        }
        let (lo, _) = self.kappa.range(self.s, self.t);
        if !(lo > 0.0) {
            return Err(Error::param("kappa", "must be positive"));
        }
        Ok(())
    }

    pub fn with_times(&self, s: f64, t: f64) -> Self {
        Self { s, t, ..self.clone() }
    }

    pub fn tau(&self) -> f64 {
        self.t - self.s
    }

    pub fn symbol_constant(&self) -> f64 {
        symbol_constant(self.alpha)
    }

    /// `Π_{s,t} = ∫_s^t U(r) dr`.
    pub fn transport(&self) -> f64 {
        self.u.integral(self.s, self.t)
    }

    /// `c1 = sup|U| + (t-s)/|Π_{s,t}|` on the current interval.
    pub fn c1(&self) -> f64 {
        let (lo, hi) = self.u.range(self.s, self.t);
        lo.abs().max(hi.abs()) + self.tau() / self.transport().abs()
    }

    /// `∫_s^t κ0(r) |η + Π_{s,r} ξ|^α dr`, exact on every constant piece.
    pub fn symbol_integral(&self, xi: f64, eta: f64) -> f64 {
        let mut cuts: Vec<f64> = self
            .kappa
            .breaks
            .iter()
            .chain(&self.u.breaks)
            .copied()
            .filter(|&b| b > self.s && b < self.t)
            .collect();
        cuts.push(self.s);
        cuts.push(self.t);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut pi = 0.0;
        let mut acc = 0.0;
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let (k, u) = (self.kappa.value(mid), self.u.value(mid));
            acc += k * power_segment_integral(eta + pi * xi, u * xi, w[1] - w[0], self.alpha);
            pi += u * (w[1] - w[0]);
        }
        acc
    }
}

/// Fourier transform of the kinetic kernel `p_{s,t}` (real since the law is
/// symmetric); the solution operator is `f ↦ Γ_{s,t}(p_{s,t} * f)`.
pub fn kinetic_cf(spec: &KineticKernelSpec, xi: f64, eta: f64) -> f64 {
    (-spec.symbol_constant() * spec.symbol_integral(xi, eta)).exp()
}

/// Fourier transform of `Γ_{s,t} p_{s,t}`: `p̂(ξ, η - Π ξ)`.
pub fn sheared_cf(spec: &KineticKernelSpec, xi: f64, eta: f64) -> f64 {
    kinetic_cf(spec, xi, eta - spec.transport() * xi)
}

/// Sample a function from its continuous Fourier transform
/// `ĝ(ξ) = ∫ g(x) e^{-iξ·x} dx`, assuming `g` is negligible outside the box.
pub fn field_from_transform<F>(grid: &GridSpec, ft: F) -> Field
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let d = grid.dim();
    let inv_cell = 1.0 / grid.cell_volume();
    let spec: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; d], vec![0usize; d]),
            |(xi, idx), k| {
                grid.unravel(k, idx);
                grid.freq_of(k, xi);
                // the grid starts at -L, which puts a (-1)^i phase on every slot
                let parity: usize = idx.iter().sum();
                let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
                ft(xi) * (sign * inv_cell)
            },
        )
        .collect();
    Field::from_spectrum(grid, spec)
}

/// Reject grids on which `|ĝ|` has not decayed below `tol` at the edge of the
/// frequency box; the error carries a power-of-two size that would suffice.
pub fn check_spectral_decay<F>(grid: &GridSpec, tol: f64, ft: F) -> Result<()>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = grid.dim();
    for axis in 0..d {
        let n = grid.points[axis];
        let worst = (0..grid.len())
            .into_par_iter()
            .map_init(
                || (vec![0.0; d], vec![0usize; d]),
                |(xi, idx), k| {
                    grid.unravel(k, idx);
                    if idx[axis] != n / 2 - 1 && idx[axis] != n / 2 + 1 {
                        return 0.0;
                    }
                    grid.freq_of(k, xi);
                    ft(xi).abs()
                },
            )
            .reduce(|| 0.0, f64::max);
        if worst > tol {
            let mut probe = vec![0.0; d];
            let mut mult = 2usize;
            while mult < 1 << 20 {
                probe[axis] = grid.max_wavenumber(axis) * mult as f64;
                if ft(&probe).abs() <= tol {
                    break;
                }
                mult *= 2;
            }
            return Err(Error::Unresolved { axis, needed: n * mult });
        }
    }
    Ok(())
}

fn check_kinetic_grid(grid: &GridSpec) -> Result<()> {
    if grid.dim() != 2 {
        return Err(Error::Dimension { expected: 2, got: grid.dim() });
    }
    Ok(())
}

/// `e^{λ(s-t)} p_{s,t}` sampled on an `(x, v)` grid by inverse FFT of the
/// characteristic function. Heavy tails are periodized, the mass is exact.
pub fn kernel_from_cf(spec: &KineticKernelSpec, grid: &GridSpec) -> Result<Field> {
    spec.validate()?;
    check_kinetic_grid(grid)?;
    check_spectral_decay(grid, 1e-8, |f| kinetic_cf(spec, f[0], f[1]))?;
    let damp = (spec.lambda * (spec.s - spec.t)).exp();
    Ok(field_from_transform(grid, |f| Complex64::new(damp * kinetic_cf(spec, f[0], f[1]), 0.0)))
}

/// `Γ f(x, v) = f(x + Π v, v)`, applied per velocity row as an exact
/// modulation of the x-spectrum.
pub fn gamma_shift(f: &Field, pi: f64) -> Result<Field> {
    check_kinetic_grid(&f.grid)?;
    let g = &f.grid;
    let shape = g.points.clone();
    let nv = shape[1];
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_axis(&mut data, &shape, 0, false);
    for (k, c) in data.iter_mut().enumerate() {
        let xi = g.wavenumber(0, k / nv);
        let v = g.coord(1, k % nv);
        *c *= Complex64::from_polar(1.0, xi * pi * v);
    }
    fft_axis(&mut data, &shape, 0, true);
    Field::new(g.clone(), data.iter().map(|c| c.re).collect())
}

/// `Σ |x|^β |v|^γ |∂_x^n ∂_v^m p| dx dv` with the box given in units of the
/// natural scales `τ^{1+1/α}` and `τ^{1/α}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentGrid {
    pub box_x: f64,
    pub box_v: f64,
    pub nx: usize,
    pub nv: usize,
}

impl Default for MomentGrid {
    fn default() -> Self {
        Self { box_x: 40.0, box_v: 40.0, nx: 512, nv: 512 }
    }
}

/// `∫ |x|^β |v|^γ |∇_x^n ∇_v^m p_{s,t}| dx dv` by grid quadrature, with
/// derivatives taken spectrally.
pub fn moment_integral(
    spec: &KineticKernelSpec,
    beta: f64,
    gamma_: f64,
    n: u32,
    m: u32,
    mg: &MomentGrid,
) -> Result<f64> {
    spec.validate()?;
    if !(beta >= 0.0 && gamma_ >= 0.0) {
        return Err(Error::param("beta", "moment exponents must be >= 0"));
    }
    if beta + gamma_ >= spec.alpha {
        return Err(Error::param("beta", "need beta + gamma < alpha for a finite moment"));
    }
    if n > 2 || m > 2 {
        return Err(Error::param("n", "derivative orders above 2 are not supported"));
    }
    let tau = spec.tau();
    let sx = tau.powf(1.0 + 1.0 / spec.alpha);
    let sv = tau.powf(1.0 / spec.alpha);
    let grid = GridSpec::new(vec![mg.box_x * sx, mg.box_v * sv], vec![mg.nx, mg.nv])?;
    check_spectral_decay(&grid, 1e-10, |f| kinetic_cf(spec, f[0], f[1]))?;
    let damp = (spec.lambda * (spec.s - spec.t)).exp();
    let field = field_from_transform(&grid, |f| {
        let d = Complex64::new(0.0, f[0]).powu(n) * Complex64::new(0.0, f[1]).powu(m);
        d * (damp * kinetic_cf(spec, f[0], f[1]))
    });
    let (nx, nv) = (mg.nx, mg.nv);
    let (hx, hv) = (grid.spacing(0), grid.spacing(1));
    let mut sum = 0.0;
    let mut on_x_axis = 0.0;
    let mut on_v_axis = 0.0;
    for (k, p) in field.values.iter().enumerate() {
        let (ix, iv) = (k / nv, k % nv);
        let x = grid.coord(0, ix).abs();
        let v = grid.coord(1, iv).abs();
        sum += x.powf(beta) * v.powf(gamma_) * p.abs();
        if ix == nx / 2 {
            on_x_axis += v.powf(gamma_) * p.abs();
        }
        if iv == nv / 2 {
            on_v_axis += x.powf(beta) * p.abs();
        }
    }
    let center = field.values[(nx / 2) * nv + nv / 2].abs();
    // the grid sum of |x|^β g(x) carries an error 2ζ(-β) h^{1+β} g(0)
    let cx = if beta > 0.0 { 2.0 * zeta_negative(beta) * hx.powf(1.0 + beta) } else { 0.0 };
    let cv = if gamma_ > 0.0 { 2.0 * zeta_negative(gamma_) * hv.powf(1.0 + gamma_) } else { 0.0 };
    let correction = cx * hv * on_x_axis + cv * hx * on_v_axis - cx * cv * center;
    Ok(sum * hx * hv - correction)
}

/// `ζ(-b)` for `b ∈ (0, 2)` through the reflection formula.
fn zeta_negative(b: f64) -> f64 {
    let s = 1.0 + b;
    let n = 32.0f64;
    let head: f64 = (1..32).map(|k| (k as f64).powf(-s)).sum();
    let zeta_s = head + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0;
    2f64.powf(-b) * PI.powf(-b - 1.0) * (-PI * b / 2.0).sin() * gamma(1.0 + b) * zeta_s
}

/// Jump intensity `κ(state, w)`; `state` is the grid point `(x, v)` (or `v`).
pub type KappaFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Quadrature setup for the nonlocal velocity operator.
#[derive(Clone)]
pub struct LevyOpSpec {
    pub alpha: f64,
    pub kappa: KappaFn,
    /// Upper bound of `κ`, used by the error estimate.
    pub kappa_max: f64,
    /// Taylor radius; `None` picks `0.1 / k_max` from the grid.
    pub r_inner: Option<f64>,
    /// Beyond this radius `κ` is frozen at `w = r_outer` and the integral is exact.
    pub r_outer: f64,
    pub gl_nodes: usize,
    pub tol: f64,
}

impl std::fmt::Debug for LevyOpSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LevyOpSpec")
            .field("alpha", &self.alpha)
            .field("kappa_max", &self.kappa_max)
            .field("r_inner", &self.r_inner)
            .field("r_outer", &self.r_outer)
            .field("gl_nodes", &self.gl_nodes)
            .field("tol", &self.tol)
            .finish()
    }
}

impl LevyOpSpec {
    pub fn constant(alpha: f64, kappa: f64) -> Self {
        Self {
            alpha,
            kappa: Arc::new(move |_, _| kappa),
            kappa_max: kappa,
            r_inner: None,
            r_outer: 1.0,
            gl_nodes: 10,
            tol: 1e-6,
        }
    }
}

/// Nodes of the three-region quadrature in `w > 0`.
#[derive(Debug, Clone)]
pub struct LevyNodes {
    pub alpha: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    /// `∫_0^{r_inner} g(w) w^{1-α} dw ≈ Σ weight g(w)`.
    pub inner: Vec<(f64, f64)>,
    /// `∫_{r_inner}^{r_outer} g(w) w^{-1-α} dw ≈ Σ weight g(w)`.
    pub middle: Vec<(f64, f64)>,
    /// `∫_0^∞ (1 - cos y) y^{-1-α} dy`.
    total: f64,
}

impl LevyNodes {
    /// `k_max` is the largest velocity frequency the rule must resolve.
    pub fn new(alpha: f64, r_inner: f64, r_outer: f64, k_max: f64, gl_nodes: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::param("alpha", "quadrature needs alpha in (0, 2)"));
        }
        if !(r_inner > 0.0 && r_outer > r_inner) {
            return Err(Error::param("r_inner", "need 0 < r_inner < r_outer"));
        }
        let width = PI / k_max.max(1e-12);
        let mut breaks = vec![r_inner];
        let mut w = r_inner;
        while w < r_outer {
            w = (w * 2f64.sqrt()).min(w + width).min(r_outer);
            breaks.push(w);
        }
        let rule = gl(gl_nodes);
        let middle = breaks
            .windows(2)
            .flat_map(|p| rule.mapped(p[0], p[1]).map(|(x, wt)| (x, wt * x.powf(-1.0 - alpha))).collect::<Vec<_>>())
            .collect();
        Ok(Self {
            alpha,
            r_inner,
            r_outer,
            inner: singular_weight_rule(alpha, r_inner, 32),
            middle,
            total: c_alpha(1, alpha) / 4.0,
        })
    }

    /// Exact tail `2 ∫_{r_outer}^∞ (2cos(ηw) - 2) w^{-1-α} dw`.
    pub fn tail_multiplier(&self, eta: f64) -> f64 {
        let a = eta.abs() * self.r_outer;
        if a == 0.0 {
            return 0.0;
        }
        -4.0 * eta.abs().powf(self.alpha) * (self.total - one_minus_cos_integral(self.alpha, a))
    }

    /// Quadrature value of `m(η)` with `L e^{iηv} = m(η) e^{iηv}` for a
    /// state-independent kernel `κ(w)`.
    pub fn symbol(&self, eta: f64, kappa: &dyn Fn(f64) -> f64) -> f64 {
        let e2 = eta * eta;
        let inner: f64 = self.inner.iter().map(|&(w, wt)| wt * kappa(w) * (-e2 + e2 * e2 * w * w / 12.0)).sum();
        let middle: f64 = self.middle.iter().map(|&(w, wt)| wt * kappa(w) * (2.0 * (eta * w).cos() - 2.0)).sum();
        2.0 * (inner + middle) + kappa(self.r_outer) * self.tail_multiplier(eta)
    }

    /// `2 ∫_0^{r_inner} κ w^{1-α} dw` for constant `κ = 1`, the inner weight
    /// multiplying `f''`.
    pub fn inner_weight(&self) -> f64 {
        2.0 * self.inner.iter().map(|&(_, w)| w).sum::<f64>()
    }
}

/// Result of [`apply_levy_op`].
#[derive(Debug, Clone)]
pub struct LevyApplied {
    pub field: Field,
    /// Bound on the quadrature error from the symbol mismatch at `κ = kappa_max`.
    pub error_estimate: f64,
    /// Set when `error_estimate` exceeds the requested tolerance.
    pub flagged: bool,
}

/// `∫ (f(v+w)+f(v-w)-2f(v)) κ(state, w) dw/|w|^{1+α}` along the last axis.
pub fn apply_levy_op(f: &Field, spec: &LevyOpSpec) -> Result<LevyApplied> {
    let g = &f.grid;
    let d = g.dim();
    let axis = d - 1;
    let k_max = g.max_wavenumber(axis) + PI / g.half_width[axis];
    let r_inner = spec.r_inner.unwrap_or((0.1 / k_max).min(0.5 * spec.r_outer));
    let nodes = LevyNodes::new(spec.alpha, r_inner, spec.r_outer, k_max, spec.gl_nodes)?;

    let etas = g.slot_wavenumbers(axis);
    let shape = g.points.clone();
    let mut spec_v: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_axis(&mut spec_v, &shape, axis, false);
    let filtered = |m: &dyn Fn(f64) -> f64| -> Vec<f64> {
        let mut data: Vec<Complex64> = spec_v.iter().zip(&etas).map(|(c, &e)| c * m(e)).collect();
        fft_axis(&mut data, &shape, axis, true);
        data.iter().map(|c| c.re).collect()
    };

    let states: Vec<Vec<f64>> = (0..g.len())
        .map(|k| {
            let mut x = vec![0.0; d];
            g.coords_of(k, &mut x);
            x
        })
        .collect();

    let d2 = filtered(&|e| -e * e);
    let d4 = filtered(&|e| e * e * e * e);
    let mut out: Vec<f64> = states
        .par_iter()
        .enumerate()
        .map(|(k, st)| {
            let inner: f64 = nodes
                .inner
                .iter()
                .map(|&(w, wt)| wt * (spec.kappa)(st, w) * (d2[k] + d4[k] * w * w / 12.0))
                .sum();
            2.0 * inner
        })
        .collect();

    let tail = filtered(&|e| nodes.tail_multiplier(e));
    out.par_iter_mut().enumerate().for_each(|(k, o)| *o += (spec.kappa)(&states[k], spec.r_outer) * tail[k]);

    // middle nodes in fixed-size batches so the summation order is fixed
    for batch in nodes.middle.chunks(32) {
        let shifted: Vec<Vec<f64>> = batch.par_iter().map(|&(w, _)| filtered(&|e| 2.0 * (e * w).cos())).collect();
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let mut acc = 0.0;
            for (sh, &(w, wt)) in shifted.iter().zip(batch) {
                acc += wt * (spec.kappa)(&states[k], w) * (sh[k] - 2.0 * f.values[k]);
            }
            *o += 2.0 * acc;
        });
    }

    let c = c_alpha(1, spec.alpha);
    let one = |_: f64| 1.0;
    let lines = g.len() / g.points[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let n = g.points[axis];
    let mut err = 0.0f64;
    for line in 0..lines {
        let base = (line / stride) * n * stride + line % stride;
        let mut acc = 0.0;
        for i in 0..n {
            let k = base + i * stride;
            let e = etas[k];
            let miss = (nodes.symbol(e, &one) + c * e.abs().powf(spec.alpha)).abs();
            acc += miss * spec_v[k].norm() / n as f64;
        }
        err = err.max(acc);
    }
    let error_estimate = spec.kappa_max * err;
    Ok(LevyApplied {
        field: Field::new(g.clone(), out)?,
        error_estimate,
        flagged: error_estimate > spec.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson;

    #[test]
    fn c_alpha_closed_form_and_calibration_agree() {
        assert!((c_alpha(1, 1.0) - 2.0 * PI).abs() < 1e-12);
        for &a in &[0.5, 1.0, 1.3, 1.5, 1.7, 1.9] {
            let cal = calibrate_c_alpha(a);
            assert!((cal / c_alpha(1, a) - 1.0).abs() < 1e-8, "alpha {a}: {cal} vs {}", c_alpha(1, a));
        }
    }

    #[test]
    fn gaussian_peak_mass_and_2d_oracle() {
        let g = GaussianSpec::identity(1, 0.0, 1.0).unwrap();
        assert!((gaussian_kernel(&g, &[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-12);
        let mass = integrate_panels(&uniform_breaks(-12.0, 12.0, 1.0), 16, |x| gaussian_kernel(&g, &[x]).unwrap());
        assert!((mass - 1.0).abs() < 1e-8);

        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let g2 = GaussianSpec::constant(a, 0.25, 0.75).unwrap();
        let cov = [[1.0, 0.0], [0.0, 1.0]];
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
        for k in 0..10 {
            let x = [0.3 * k as f64 - 1.1, 0.7 - 0.2 * k as f64];
            let q = x[0] * (inv[0][0] * x[0] + inv[0][1] * x[1]) + x[1] * (inv[1][0] * x[0] + inv[1][1] * x[1]);
            let want = (-0.5 * q).exp() / (2.0 * PI * det.sqrt());
            let got = gaussian_kernel(&g2, &x).unwrap();
            assert!((got / want - 1.0).abs() < 1e-10);
        }
        let singular = GaussianSpec::constant(DMatrix::zeros(2, 2), 0.0, 1.0).unwrap();
        assert!(gaussian_kernel(&singular, &[0.0, 0.0]).is_err());
    }

    fn simpson_symbol(spec: &KineticKernelSpec, xi: f64, eta: f64) -> f64 {
        let f = |r: f64| {
            let pi = spec.u.integral(spec.s, r);
            spec.kappa.value(r) * (eta + pi * xi).abs().powf(spec.alpha)
        };
        let mut cuts: Vec<f64> = spec.kappa.breaks.iter().chain(&spec.u.breaks).copied().filter(|&b| b > spec.s && b < spec.t).collect();
        cuts.push(spec.s);
        cuts.push(spec.t);
        cuts.sort_by(f64::total_cmp);
        cuts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], 1e-13, 40)).sum()
    }

    #[test]
    fn symbol_integral_matches_simpson_oracle() {
        let spec = KineticKernelSpec {
            alpha: 1.4,
            kappa: StepPath::new(vec![0.0, 0.3, 0.8], vec![1.0, 0.6, 1.7]).unwrap(),
            u: StepPath::new(vec![0.0, 0.5], vec![1.0, -0.4]).unwrap(),
            lambda: 0.0,
            s: 0.1,
            t: 1.2,
        };
        for &(xi, eta) in &[(0.0, 1.0), (2.0, -1.0), (-3.0, 0.5), (1e-5, 2.0), (5.0, 0.0)] {
            let a = spec.symbol_integral(xi, eta);
            let b = simpson_symbol(&spec, xi, eta);
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{xi} {eta}: {a} vs {b}");
        }
    }

    #[test]
    fn gaussian_limit_of_kinetic_cf() {
        let t = 0.7;
        let spec = KineticKernelSpec::constant(2.0, 1.0, 1.0, 0.0, t).unwrap();
        assert_eq!(kinetic_cf(&spec, 0.0, 0.0), 1.0);
        let q = [2.0 * t.powi(3) / 3.0, t * t, 2.0 * t];
        for &(xi, eta) in &[(0.5, 1.0), (-2.0, 0.3), (1.0, -1.0)] {
            let want = (-0.5 * (q[0] * xi * xi + 2.0 * q[1] * xi * eta + q[2] * eta * eta)).exp();
            assert!((kinetic_cf(&spec, xi, eta) / want - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn scaling_identity_in_fourier_form() {
        let a = 1.5;
        let t = 0.37;
        let spec = KineticKernelSpec::constant(a, 1.3, 1.0, 0.0, t).unwrap();
        let unit = spec.with_times(0.0, 1.0);
        for &(xi, eta) in &[(1.0, 2.0), (-4.0, 0.7), (0.2, -3.0)] {
            let lhs = kinetic_cf(&spec, xi, eta);
            let rhs = kinetic_cf(&unit, t.powf(1.0 + 1.0 / a) * xi, t.powf(1.0 / a) * eta);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_grid_matches_gaussian_covariance() {
        let t = 1.0;
        let spec = KineticKernelSpec::constant(2.0, 1.0, 1.0, 0.0, t).unwrap();
        let grid = GridSpec::new(vec![12.0, 16.0], vec![128, 128]).unwrap();
        let p = kernel_from_cf(&spec, &grid).unwrap();
        let mass: f64 = p.values.iter().sum::<f64>() * grid.cell_volume();
        assert!((mass - 1.0).abs() < 1e-6);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0 * t * t * t / 3.0, t * t, t * t, 2.0 * t]);
        let g = GaussianSpec::constant(cov, 0.0, 1.0).unwrap();
        for k in 0..20 {
            let (ix, iv) = (56 + (k * 7) % 16, 58 + (k * 5) % 12);
            let x = [grid.coord(0, ix), grid.coord(1, iv)];
            let want = gaussian_kernel(&g, &x).unwrap();
            let got = p.values[ix * 128 + iv];
            assert!((got / want - 1.0).abs() < 1e-6, "{x:?}: {got} vs {want}");
        }
    }

    #[test]
    fn unresolved_kernel_is_rejected() {
        let spec = KineticKernelSpec::constant(1.5, 1.0, 1.0, 0.0, 1e-3).unwrap();
        let grid = GridSpec::new(vec![1.0, 1.0], vec![32, 32]).unwrap();
        assert!(matches!(kernel_from_cf(&spec, &grid), Err(Error::Unresolved { .. })));
    }

    #[test]
    fn stable_kernel_is_even() {
        let spec = KineticKernelSpec::constant(1.3, 1.0, 1.0, 0.0, 1.0).unwrap();
        let grid = GridSpec::new(vec![20.0, 20.0], vec![128, 128]).unwrap();
        let p = kernel_from_cf(&spec, &grid).unwrap();
        for ix in 1..128 {
            for iv in 1..128 {
                let a = p.values[ix * 128 + iv];
                let b = p.values[(128 - ix) * 128 + (128 - iv)];
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shear_phase_law_and_inverse() {
        let grid = GridSpec::new(vec![PI, PI], vec![64, 64]).unwrap();
        let (xi, eta, pi) = (3.0, 2.0, 0.75);
        let f = Field::from_fn(&grid, |z| (xi * z[0] + eta * z[1]).cos());
        let gf = gamma_shift(&f, pi).unwrap();
        let want = Field::from_fn(&grid, |z| (xi * z[0] + (eta + pi * xi) * z[1]).cos());
        assert!(gf.sub(&want).sup_norm() < 1e-10);
        assert!(gamma_shift(&f, 0.0).unwrap().sub(&f).sup_norm() < 1e-12);
        let back = gamma_shift(&gf, -pi).unwrap();
        assert!(back.sub(&f).sup_norm() < 1e-10);
    }

    #[test]
    fn levy_op_on_plane_waves_and_constants() {
        for &alpha in &[1.2, 1.5, 1.8] {
            let grid = GridSpec::new(vec![PI], vec![256]).unwrap();
            let spec = LevyOpSpec::constant(alpha, 0.8);
            let c = Field::from_fn(&grid, |_| 2.0);
            assert!(apply_levy_op(&c, &spec).unwrap().field.sup_norm() < 1e-9);
            for &eta in &[2.0, 9.0, 40.0] {
                let f = Field::from_fn(&grid, |v| (eta * v[0]).cos());
                let out = apply_levy_op(&f, &spec).unwrap();
                let want = f.scale(-0.8 * c_alpha(1, alpha) * eta.powf(alpha));
                let rel = out.field.sub(&want).sup_norm() / want.sup_norm();
                assert!(rel < 1e-6, "alpha {alpha} eta {eta}: {rel}");
                assert!(!out.flagged);
            }
        }
    }

    #[test]
    fn inner_region_of_quadratic() {
        let alpha = 1.5;
        let nodes = LevyNodes::new(alpha, 0.05, 1.0, 10.0, 10).unwrap();
        let want = 2.0 * 0.05f64.powf(2.0 - alpha) / (2.0 - alpha);
        assert!((nodes.inner_weight() / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_values() {
        assert!((zeta_negative(0.5) + 0.207_886_224_977_354_6).abs() < 1e-10);
        assert!((zeta_negative(1.0) + 1.0 / 12.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_moments_at_alpha_two() {
        let t = 0.5;
        let spec = KineticKernelSpec::constant(2.0, 1.0, 1.0, 0.0, t).unwrap();
        let mg = MomentGrid { box_x: 12.0, box_v: 12.0, nx: 256, nv: 256 };
        let m0 = moment_integral(&spec, 0.0, 0.0, 0, 0, &mg).unwrap();
        assert!((m0 - 1.0).abs() < 1e-8);
        let beta = 0.5;
        let sx = (2.0 * t.powi(3) / 3.0).sqrt();
        let want = sx.powf(beta) * 2f64.powf(beta / 2.0) * gamma((beta + 1.0) / 2.0) / PI.sqrt();
        let got = moment_integral(&spec, beta, 0.0, 0, 0, &mg).unwrap();
        assert!((got / want - 1.0).abs() < 1e-4);
        let sv = (2.0 * t).sqrt();
        let got_v = moment_integral(&spec, 0.0, 1.0, 0, 0, &mg).unwrap();
        assert!((got_v / (sv * (2.0 / PI).sqrt()) - 1.0).abs() < 1e-4);
        assert!(moment_integral(&spec, 1.5, 0.6, 0, 0, &mg).is_err());
    }
}

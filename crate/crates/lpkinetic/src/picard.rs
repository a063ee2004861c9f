//! Constructive solver for the kinetic equation with a variable jump
//! kernel: the jump map that turns the reference stable measure on the unit
//! ball into `κ(z, w) dw/|w|^{1+α}`, the small-jump SDE it drives, the
//! Feynman-Kac representation, and the Picard iteration over large jumps.

use rand::RngExt;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::kernels::c_alpha;
use crate::quad::{gl, UniformBicubic};
use crate::stable_sim::stream_rng;
use crate::{Error, Result};

/// `κ(z, w) = scale (1 + state_amp sin x)(1 + jump_amp cos w)`: positive,
/// smooth and even in `w` for amplitudes below one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductKernel {
    pub scale: f64,
    pub state_amp: f64,
    pub jump_amp: f64,
}

impl ProductKernel {
    pub fn constant(c: f64) -> Self {
        Self { scale: c, state_amp: 0.0, jump_amp: 0.0 }
    }

    /// Kernel scale making `κ ≡ scale` generate `-(-∂_v²)^{α/2}`.
    pub fn laplacian_scale(alpha: f64) -> f64 {
        2.0 / c_alpha(1, alpha)
    }

    pub fn state_factor(&self, x: f64) -> f64 {
        self.scale * (1.0 + self.state_amp * x.sin())
    }

    pub fn jump_factor(&self, w: f64) -> f64 {
        1.0 + self.jump_amp * w.cos()
    }

    pub fn eval(&self, x: f64, w: f64) -> f64 {
        self.state_factor(x) * self.jump_factor(w)
    }

    fn validate(&self) -> Result<()> {
        if self.scale > 0.0 && self.state_amp.abs() < 1.0 && self.jump_amp.abs() < 1.0 {
            Ok(())
        } else {
            Err(Error::param("kernel", "needs scale > 0 and amplitudes in (-1, 1)"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpMapSpec {
    pub alpha: f64,
    pub kernel: ProductKernel,
}

impl JumpMapSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::param("alpha", "must lie in (0, 2)"));
        }
        self.kernel.validate()
    }
}

/// Reference tail mass `∫_z^1 r^{-1-α} dr`.
pub fn reference_tail(alpha: f64, z: f64) -> f64 {
    (z.powf(-alpha) - 1.0) / alpha
}

const TAIL_NODES: usize = 16;

/// `∫_y^1 k(r) r^{-1-α} dr` for `y ∈ (0, 1]` after `r = y e^u`; panels
/// beyond `e^{-αu} < 1e-17` are dropped.
pub fn weighted_tail<K: Fn(f64) -> f64>(alpha: f64, y: f64, k: K) -> f64 {
    let top = (-y.ln()).max(0.0);
    let cut = top.min(40.0 / alpha);
    let rule = gl(TAIL_NODES);
    let mut acc = 0.0;
    let mut a = 0.0;
    while a < cut {
        let b = (a + 1.0).min(cut);
        acc += rule.integrate(a, b, |u| k(y * u.exp()) * (-alpha * u).exp());
        a = b;
    }
    acc * y.powf(-alpha)
}

/// `Φ(x, z)`: the increasing odd map with `∫_z^1 r^{-1-α} dr =
/// ∫_{Φ(x,z)}^1 κ(x, r) r^{-1-α} dr` on `(0, 1]`, so that
/// `∫_{B_1} f(Φ(x,z)) dz/|z|^{1+α} = ∫_{B_1} f(z) κ(x,z) dz/|z|^{1+α}`.
/// Solved by safeguarded Newton in `log z` to `1e-13`.
pub fn jump_map_phi(spec: &JumpMapSpec, x: f64, z: f64) -> Result<f64> {
    spec.validate()?;
    if !(z.abs() <= 1.0 && z != 0.0) {
        return Err(Error::param("z", "must lie in [-1, 1] without 0"));
    }
    let g = spec.kernel.state_factor(x);
    let target = reference_tail(spec.alpha, z.abs()) / g;
    let s = invert_tail(spec.alpha, target, |r| spec.kernel.jump_factor(r))?;
    Ok(z.signum() * (-s).exp())
}

/// `s ≥ 0` with `∫_{e^{-s}}^1 k(r) r^{-1-α} dr = target`.
fn invert_tail<K: Fn(f64) -> f64>(alpha: f64, target: f64, k: K) -> Result<f64> {
    if target == 0.0 {
        return Ok(0.0);
    }
    let g = |s: f64| weighted_tail(alpha, (-s).exp(), &k) - target;
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::Numerical("tail matching did not bracket".into()));
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let val = g(s);
        if val > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let slope = k((-s).exp()) * (alpha * s).exp();
        let mut next = s - val / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() < 1e-13 * s.max(1.0) || hi - lo < 1e-14 {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::Numerical("tail matching did not converge".into()))
}

/// Closed form for constant `κ ≡ c`: `Φ(z) = (z^{-α}/c + 1 - 1/c)^{-1/α}`.
pub fn constant_kernel_phi(alpha: f64, c: f64, z: f64) -> f64 {
    z.signum() * (z.abs().powf(-alpha) / c + 1.0 - 1.0 / c).powf(-1.0 / alpha)
}

/// Tabulated inverse of the jump-factor tail on `s = -log y ∈ [0, S]` with
/// cubic Hermite pieces; `Φ(x, z)` then costs one bisection and a few Newton
/// steps on the cubic.
#[derive(Debug, Clone)]
pub struct JumpMapTable {
    spec: JumpMapSpec,
    step: f64,
    tails: Vec<f64>,
    slopes: Vec<f64>,
}

impl JumpMapTable {
    pub fn new(spec: JumpMapSpec, s_max: f64, step: f64) -> Result<Self> {
        spec.validate()?;
        let n = (s_max / step).ceil() as usize;
        let k = |r: f64| spec.kernel.jump_factor(r);
        let mut tails = vec![0.0];
        let rule = gl(TAIL_NODES);
        // H(e^{-s}) = ∫_0^s k(e^{-σ}) e^{ασ} dσ, accumulated piecewise
        for i in 0..n {
            let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
            let piece = rule.integrate(a, b, |sg| k((-sg).exp()) * (spec.alpha * sg).exp());
            tails.push(tails[i] + piece);
        }
        let slopes = (0..=n).map(|i| {
            let s = i as f64 * step;
            k((-s).exp()) * (spec.alpha * s).exp()
        });
        Ok(Self { spec, step, tails, slopes: slopes.collect() })
    }

    pub fn spec(&self) -> &JumpMapSpec {
        &self.spec
    }

    pub fn phi(&self, x: f64, z: f64) -> f64 {
        let target = reference_tail(self.spec.alpha, z.abs()) / self.spec.kernel.state_factor(x);
        if target <= 0.0 {
            return z.signum();
        }
        if target >= *self.tails.last().unwrap() {
            let s = invert_tail(self.spec.alpha, target, |r| self.spec.kernel.jump_factor(r))
                .expect("kernel validated at construction");
            return z.signum() * (-s).exp();
        }
        let i = self.tails.partition_point(|t| *t <= target) - 1;
        let h = self.step;
        let (y0, y1, m0, m1) = (self.tails[i], self.tails[i + 1], self.slopes[i] * h, self.slopes[i + 1] * h);
        let cubic = |t: f64| {
            let (t2, t3) = (t * t, t * t * t);
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1
        };
        let deriv = |t: f64| {
            let t2 = t * t;
            (6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * m1
        };
        let mut t = (target - y0) / (y1 - y0);
        for _ in 0..4 {
            t = (t - (cubic(t) - target) / deriv(t)).clamp(0.0, 1.0);
        }
        z.signum() * (-(i as f64 + t) * h).exp()
    }

    /// `∂_z Φ(x, 0) = κ(x, 0)^{1/α}`.
    pub fn slope_at_origin(&self, x: f64) -> f64 {
        self.spec.kernel.eval(x, 0.0).powf(1.0 / self.spec.alpha)
    }
}

/// One row of the change-of-variables battery.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityCase {
    pub name: String,
    /// `∫_{B_1} f(Φ(x,z)) dz/|z|^{1+α}`.
    pub mapped: f64,
    /// `∫_{B_1} f(z) κ(x,z) dz/|z|^{1+α}`.
    pub weighted: f64,
    pub rel_err: f64,
}

/// `2 ∫_0^1 g(z) z^{-1-α} dz` for even `g` over `z = e^{-u}`, `u ∈ [0, 120]`,
/// on unit panels plus the extra `breaks` (in `z`).
fn even_singular_integral<G: Fn(f64) -> f64>(alpha: f64, g: G, breaks: &[f64]) -> f64 {
    let mut us: Vec<f64> = (0..=120).map(f64::from).collect();
    us.extend(breaks.iter().filter(|z| **z > 0.0 && **z < 1.0).map(|z| -z.ln()));
    us.sort_by(f64::total_cmp);
    us.dedup();
    let rule = gl(20);
    2.0 * us.windows(2).map(|w| rule.integrate(w[0], w[1], |u| g((-u).exp()) * (alpha * u).exp())).sum::<f64>()
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// `z` with `|Φ(x, z)| = y`.
fn phi_preimage(spec: &JumpMapSpec, x: f64, y: f64) -> f64 {
    let tail = spec.kernel.state_factor(x) * weighted_tail(spec.alpha, y, |r| spec.kernel.jump_factor(r));
    (1.0 + spec.alpha * tail).powf(-1.0 / spec.alpha)
}

/// Both sides of the jump-map identity for `z²`, `|z|³`, `2 sin² z` and a
/// smoothed indicator of `|z| > 0.45` under `spec`, and for `z²` under the
/// closed-form map of the constant kernel `constant`.
pub fn change_of_variables_battery(spec: &JumpMapSpec, x: f64, constant: f64) -> Result<Vec<IdentityCase>> {
    spec.validate()?;
    let a = spec.alpha;
    let step_lo = 0.3;
    let step_hi = 0.6;
    let tests: [(&str, fn(f64) -> f64); 4] = [
        ("square", |z| z * z),
        ("cube", |z| z.abs().powi(3)),
        ("sine_squared", |z| 2.0 * z.sin().powi(2)),
        ("smooth_indicator", |z| smoothstep((z.abs() - 0.3) / 0.3)),
    ];
    let mapped_breaks = [phi_preimage(spec, x, step_lo), phi_preimage(spec, x, step_hi)];
    let mut out = Vec::new();
    for (name, f) in tests {
        let failure = std::cell::Cell::new(None);
        let mapped = even_singular_integral(
            a,
            |z| match jump_map_phi(spec, x, z) {
                Ok(y) => f(y),
                Err(e) => {
                    failure.set(Some(e));
                    0.0
                }
            },
            &mapped_breaks,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let weighted = even_singular_integral(a, |z| f(z) * spec.kernel.eval(x, z), &[step_lo, step_hi]);
        out.push(IdentityCase { name: name.into(), mapped, weighted, rel_err: ((mapped - weighted) / weighted).abs() });
    }
    let mapped = even_singular_integral(a, |z| constant_kernel_phi(a, constant, z).powi(2), &[]);
    let weighted = even_singular_integral(a, |z| constant * z * z, &[]);
    out.push(IdentityCase {
        name: "square_constant_kernel".into(),
        mapped,
        weighted,
        rel_err: ((mapped - weighted) / weighted).abs(),
    });
    Ok(out)
}

/// Largest relative gap between the closed-form constant-kernel map and the
/// numerical solver over `z ∈ {10^{-k/2}}`, `k = 0..12`.
pub fn closed_form_gap(alpha: f64, c: f64) -> Result<f64> {
    let spec = JumpMapSpec { alpha, kernel: ProductKernel::constant(c) };
    let mut worst: f64 = 0.0;
    for k in 0..=12 {
        let z = 10f64.powf(-0.5 * k as f64);
        let exact = constant_kernel_phi(alpha, c, z);
        worst = worst.max(((jump_map_phi(&spec, 0.0, z)? - exact) / exact).abs());
    }
    Ok(worst)
}

/// Drift of the small-jump SDE in the state `(x, v)`; jumps act on `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhiDrift {
    Zero,
    Constant { bx: f64, bv: f64 },
    /// `(v, -x - v)`.
    DampedKinetic,
}

impl PhiDrift {
    pub fn eval(&self, z: [f64; 2]) -> [f64; 2] {
        match *self {
            PhiDrift::Zero => [0.0, 0.0],
            PhiDrift::Constant { bx, bv } => [bx, bv],
            PhiDrift::DampedKinetic => [z[1], -z[0] - z[1]],
        }
    }
}

/// Source term `f(z)` of the equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Source {
    Zero,
    Constant { value: f64 },
    /// `cos(x + v/2) exp(-(x² + v²)/8)`.
    Wave,
}

impl Source {
    pub fn eval(&self, z: [f64; 2]) -> f64 {
        match *self {
            Source::Zero => 0.0,
            Source::Constant { value } => value,
            Source::Wave => (z[0] + 0.5 * z[1]).cos() * (-(z[0] * z[0] + z[1] * z[1]) / 8.0).exp(),
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            Source::Zero => 0.0,
            Source::Constant { value } => value.abs(),
            Source::Wave => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardConfig {
    pub spec: JumpMapSpec,
    pub drift: PhiDrift,
    pub lambda: f64,
    pub horizon: f64,
    /// Nodes per axis of the grid on `[-half_width, half_width]²`.
    pub grid_n: usize,
    pub half_width: f64,
    /// Number of time slabs; `u` is stored at `horizon · m / time_levels`.
    pub time_levels: usize,
    pub dt: f64,
    pub paths: usize,
    pub max_iter: usize,
    /// Stop once `‖u_n - u_{n-1}‖∞` drops below this.
    pub tolerance: f64,
    /// Caps the rate of explicit jumps; smaller ones become Gaussian.
    pub jump_rate: f64,
    /// Drop the jumps outside the unit ball from the equation.
    pub large_jumps: bool,
    pub seed: u64,
}

impl PicardConfig {
    /// `α = 1.5`, kernel `(2/c_α)(1 + 0.3 sin x)(1 + 0.3 cos w)`, `T = 0.5`,
    /// `λ = 2`, 11 × 11 nodes on `[-4, 4]²`.
    pub fn standard(paths: usize, seed: u64) -> Self {
        let alpha = 1.5;
        Self {
            spec: JumpMapSpec {
                alpha,
                kernel: ProductKernel { scale: ProductKernel::laplacian_scale(alpha), state_amp: 0.3, jump_amp: 0.3 },
            },
            drift: PhiDrift::DampedKinetic,
            lambda: 2.0,
            horizon: 0.5,
            grid_n: 11,
            half_width: 4.0,
            time_levels: 5,
            dt: 0.01,
            paths,
            max_iter: 6,
            tolerance: 1e-10,
            jump_rate: 200.0,
            large_jumps: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.spec.alpha <= 1.0 {
            return Err(Error::param("alpha", "the small-jump scheme needs alpha in (1, 2)"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::param("lambda", "must be positive"));
        }
        if !(self.horizon > 0.0 && self.dt > 0.0) {
            return Err(Error::param("horizon", "horizon and dt must be positive"));
        }
        if self.grid_n < 4 || !(self.half_width > 0.0) {
            return Err(Error::param("grid_n", "need at least 4 nodes on a non-empty box"));
        }
        if self.time_levels == 0 {
            return Err(Error::param("time_levels", "must be >= 1"));
        }
        let per = self.horizon / self.time_levels as f64 / self.dt;
        if (per - per.round()).abs() > 1e-9 || per.round() < 1.0 {
            return Err(Error::param("dt", "must divide each time slab"));
        }
        if self.paths < 2 {
            return Err(Error::param("paths", "must be >= 2"));
        }
        if !(self.jump_rate > 0.0) {
            return Err(Error::param("jump_rate", "must be positive"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn steps_per_level(&self) -> usize {
        self.steps() / self.time_levels
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.half_width + 2.0 * self.half_width * i as f64 / (self.grid_n - 1) as f64
    }

    fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.grid_n - 1) as f64
    }

    /// Explicit jumps have `|w| ∈ (ε, 1)` with `2(ε^{-α} - 1)/α` at the rate cap.
    pub fn jump_cutoff(&self) -> f64 {
        let a = self.spec.alpha;
        (1.0 + 0.5 * a * self.jump_rate).powf(-1.0 / a)
    }

    pub fn level_time(&self, m: usize) -> f64 {
        self.horizon * m as f64 / self.time_levels as f64
    }
}

/// State-independent noise of one path: a standard normal per step and the
/// reference jumps `(time, w)` with `ε < |w| < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiNoise {
    pub normals: Vec<f64>,
    pub jumps: Vec<(f64, f64)>,
}

impl PhiNoise {
    pub fn draw(cfg: &PicardConfig, stream: u64) -> Self {
        let mut rng = stream_rng(cfg.seed, stream);
        let a = cfg.spec.alpha;
        let eps = cfg.jump_cutoff();
        let lo = eps.powf(-a);
        let rate = 2.0 * (lo - 1.0) / a;
        let n = cfg.steps();
        let normals: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let count = Poisson::new(rate * cfg.horizon).map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
        let mut jumps: Vec<(f64, f64)> = (0..count)
            .map(|_| {
                let t = rng.random::<f64>() * cfg.horizon;
                let u: f64 = rng.random();
                let r = (lo - u * (lo - 1.0)).powf(-1.0 / a);
                (t, if rng.random::<bool>() { r } else { -r })
            })
            .collect();
        jumps.sort_by(|p, q| p.0.total_cmp(&q.0));
        Self { normals, jumps }
    }
}

/// Small-jump SDE `dZ = b(Z) dt + (0, ∫_{B_1} Φ(Z_-, w) Ñ(dt, dw))`: explicit
/// jumps above the cutoff, transformed by `Φ`, and a Gaussian for the rest
/// with variance `Φ'(0)² · 2ε^{2-α}/(2-α)` per unit time. The compensator
/// vanishes because `Φ` is odd. Returns the state after every step.
pub fn simulate_phi_sde(cfg: &PicardConfig, table: &JumpMapTable, noise: &PhiNoise, start: [f64; 2]) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(cfg.steps() + 1);
    out.push(start);
    let mut sink = |z: [f64; 2]| out.push(z);
    run_phi_path(cfg, table, noise, start, &mut sink)?;
    Ok(out)
}

fn run_phi_path<S: FnMut([f64; 2])>(cfg: &PicardConfig, table: &JumpMapTable, noise: &PhiNoise, start: [f64; 2], sink: &mut S) -> Result<()> {
    let a = cfg.spec.alpha;
    let eps = cfg.jump_cutoff();
    let small_var = 2.0 * eps.powf(2.0 - a) / (2.0 - a);
    let mut z = start;
    let mut j = 0;
    let euler = |z: [f64; 2], h: f64| {
        let b = cfg.drift.eval(z);
        [z[0] + h * b[0], z[1] + h * b[1]]
    };
    for k in 0..cfg.steps() {
        let mut t = k as f64 * cfg.dt;
        let t_end = (k + 1) as f64 * cfg.dt;
        let sd = table.slope_at_origin(z[0]) * (small_var * cfg.dt).sqrt();
        let gauss = sd * noise.normals[k];
        while j < noise.jumps.len() && noise.jumps[j].0 < t_end {
            let (tj, w) = noise.jumps[j];
            z = euler(z, tj - t);
            z[1] += table.phi(z[0], w);
            t = tj;
            j += 1;
        }
        z = euler(z, t_end - t);
        z[1] += gauss;
        if !(z[0].abs() < 1e9 && z[1].abs() < 1e9) {
            return Err(Error::Numerical(format!("path left |z| < 1e9 at t = {t_end}")));
        }
        sink(z);
    }
    Ok(())
}

/// `∫_0^L e^{-λt} F(t) dt` for `F` linear between the nodes `k dt`,
/// `k = 0..=n`.
pub fn exponential_hat_weights(lambda: f64, dt: f64, n: usize) -> Vec<f64> {
    let mu = lambda * dt;
    let i0 = -(-mu).exp_m1() / lambda;
    let i1 = if mu < 1e-6 { dt / 2.0 } else { (1.0 - (-mu).exp() * (1.0 + mu)) / (lambda * mu) };
    let mut w = vec![0.0; n + 1];
    for k in 0..n {
        let decay = (-lambda * k as f64 * dt).exp();
        w[k] += decay * (i0 - i1);
        w[k + 1] += decay * i1;
    }
    w
}

/// Values at `(level, i, j)`: time level `m`, node `(x_i, v_j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridField {
    pub levels: usize,
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(levels: usize, n: usize) -> Self {
        Self { levels, n, values: vec![0.0; levels * n * n] }
    }

    pub fn get(&self, m: usize, i: usize, j: usize) -> f64 {
        self.values[(m * self.n + i) * self.n + j]
    }

    fn level(&self, m: usize) -> &[f64] {
        &self.values[m * self.n * self.n..(m + 1) * self.n * self.n]
    }

    pub fn sup_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Monte Carlo estimate with its largest per-node standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FkEstimate {
    pub field: GridField,
    pub max_stderr: f64,
}

/// Pre-drawn noise shared by every node and iteration.
pub fn draw_noise(cfg: &PicardConfig) -> Vec<PhiNoise> {
    (0..cfg.paths as u64).into_par_iter().map(|p| PhiNoise::draw(cfg, p)).collect()
}

/// `u(s_m, z) = ∫_{s_m}^T e^{λ(s_m - t)} E F(t, Z_{s_m,t}(z)) dt` at every node
/// and level `m < time_levels` (the last level is `u(T) = 0`). Time
/// homogeneity lets all levels reuse paths started at time 0.
pub fn feynman_kac_solve<F>(cfg: &PicardConfig, table: &JumpMapTable, noise: &[PhiNoise], source: F) -> Result<FkEstimate>
where
    F: Fn(f64, [f64; 2]) -> f64 + Sync,
{
    cfg.validate()?;
    let n = cfg.grid_n;
    let levels = cfg.time_levels + 1;
    let per = cfg.steps_per_level();
    let weights: Vec<Vec<f64>> =
        (0..cfg.time_levels).map(|m| exponential_hat_weights(cfg.lambda, cfg.dt, (cfg.time_levels - m) * per)).collect();
    let nodes: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let per_node: Vec<(Vec<f64>, f64)> = nodes
        .par_iter()
        .map(|&(i, j)| -> Result<(Vec<f64>, f64)> {
            let start = [cfg.node(i), cfg.node(j)];
            let mut means = vec![0.0; cfg.time_levels];
            let mut spread = vec![0.0; cfg.time_levels];
            let mut acc = vec![0.0; cfg.time_levels];
            for (count, path) in noise.iter().enumerate() {
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut k = 0usize;
                let mut visit = |z: [f64; 2]| {
                    let t = k as f64 * cfg.dt;
                    for (m, w) in weights.iter().enumerate() {
                        if k < w.len() {
                            acc[m] += w[k] * source(cfg.level_time(m) + t, z);
                        }
                    }
                    k += 1;
                };
                visit(start);
                run_phi_path(cfg, table, path, start, &mut visit)?;
                for m in 0..cfg.time_levels {
                    let delta = acc[m] - means[m];
                    means[m] += delta / (count + 1) as f64;
                    spread[m] += delta * (acc[m] - means[m]);
                }
            }
            let p = noise.len() as f64;
            let se = spread.iter().map(|s| (s / (p - 1.0) / p).sqrt()).fold(0.0, f64::max);
            Ok((means, se))
        })
        .collect::<Result<_>>()?;
    let mut field = GridField::zeros(levels, n);
    let mut max_stderr: f64 = 0.0;
    for (idx, (means, se)) in per_node.into_iter().enumerate() {
        let (i, j) = nodes[idx];
        for (m, v) in means.into_iter().enumerate() {
            field.values[(m * n + i) * n + j] = v;
        }
        max_stderr = max_stderr.max(se);
    }
    Ok(FkEstimate { field, max_stderr })
}

/// `∫_{|w|≥1} κ(z, w) dw/|w|^{1+α}` without the state factor.
pub fn large_jump_mass(spec: &JumpMapSpec) -> f64 {
    let a = spec.alpha;
    let rule = gl(12);
    let top = 4000.0;
    let mut acc = 0.0;
    let mut lo = 1.0;
    while lo < top {
        let hi = lo + 0.5;
        acc += rule.integrate(lo, hi, |w| spec.kernel.jump_factor(w) * w.powf(-1.0 - a));
        lo = hi;
    }
    // the remaining tail is within 1e-6 of the pure power
    acc += top.powf(-a) / a;
    2.0 * acc
}

/// Large-jump operator `L̄u(z) = ∫_{|w|≥1} (u(x, v+w) - u(z)) κ(z, w) dw/|w|^{1+α}`
/// on the grid, with `u` interpolated bicubically and taken as zero off the box.
pub fn large_jump_operator(cfg: &PicardConfig, u: &GridField) -> GridField {
    let n = cfg.grid_n;
    let mut out = GridField::zeros(u.levels, n);
    if !cfg.large_jumps {
        return out;
    }
    let a = cfg.spec.alpha;
    let mass = large_jump_mass(&cfg.spec);
    let h = cfg.spacing();
    let rule = gl(8);
    for m in 0..u.levels {
        let interp = UniformBicubic::new([-cfg.half_width; 2], [h; 2], [n, n], u.level(m).to_vec());
        for i in 0..n {
            let x = cfg.node(i);
            let g = cfg.spec.kernel.state_factor(x);
            for j in 0..n {
                let v = cfg.node(j);
                let integrand = |w: f64| interp.eval(x, v + w) * cfg.spec.kernel.jump_factor(w) * w.abs().powf(-1.0 - a);
                let mut gain = 0.0;
                for (lo, hi) in [(-cfg.half_width - v, -1.0), (1.0, cfg.half_width - v)] {
                    if hi > lo {
                        let panels = ((hi - lo) / 0.1).ceil() as usize;
                        let step = (hi - lo) / panels as f64;
                        for p in 0..panels {
                            let s = lo + p as f64 * step;
                            gain += rule.integrate(s, s + step, integrand);
                        }
                    }
                }
                out.values[(m * n + i) * n + j] = g * (gain - mass * u.get(m, i, j));
            }
        }
    }
    out
}

fn level_interpolant(cfg: &PicardConfig, field: &GridField) -> Vec<UniformBicubic> {
    let h = cfg.spacing();
    (0..field.levels)
        .map(|m| UniformBicubic::new([-cfg.half_width; 2], [h; 2], [cfg.grid_n; 2], field.level(m).to_vec()))
        .collect()
}

/// Linear in time between levels, bicubic in space.
fn eval_in_time(cfg: &PicardConfig, interp: &[UniformBicubic], t: f64, z: [f64; 2]) -> f64 {
    let pos = (t / cfg.horizon * cfg.time_levels as f64).clamp(0.0, cfg.time_levels as f64);
    let m = (pos.floor() as usize).min(cfg.time_levels - 1);
    let theta = pos - m as f64;
    let a = interp[m].eval(z[0], z[1]);
    if theta == 0.0 {
        return a;
    }
    (1.0 - theta) * a + theta * interp[m + 1].eval(z[0], z[1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardStep {
    pub iteration: usize,
    pub sup_diff: f64,
    /// `sup_diff / previous sup_diff`.
    pub ratio: Option<f64>,
    pub max_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardResult {
    pub history: Vec<PicardStep>,
    pub solution: GridField,
}

impl PicardResult {
    /// Largest ratio from iteration `from` on.
    pub fn worst_ratio_after(&self, from: usize) -> Option<f64> {
        self.history.iter().filter(|s| s.iteration > from).filter_map(|s| s.ratio).reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,sup_diff,ratio,max_stderr\n");
        for h in &self.history {
            let r = h.ratio.map(|r| format!("{r:.9e}")).unwrap_or_default();
            s.push_str(&format!("{},{:.9e},{},{:.9e}\n", h.iteration, h.sup_diff, r, h.max_stderr));
        }
        s
    }
}

/// `u_0 = 0`, `u_n = FK(f + L̄ u_{n-1})` with the same noise throughout, so
/// the differences `u_n - u_{n-1}` carry no fresh sampling error.
pub fn picard_solve(cfg: &PicardConfig, source: Source) -> Result<PicardResult> {
    cfg.validate()?;
    let table = JumpMapTable::new(cfg.spec, 24.0, 0.01)?;
    let noise = draw_noise(cfg);
    let mut u = GridField::zeros(cfg.time_levels + 1, cfg.grid_n);
    let mut history: Vec<PicardStep> = Vec::new();
    for it in 1..=cfg.max_iter {
        let correction = large_jump_operator(cfg, &u);
        let interp = level_interpolant(cfg, &correction);
        let est = feynman_kac_solve(cfg, &table, &noise, |t, z| source.eval(z) + eval_in_time(cfg, &interp, t, z))?;
        let sup_diff = est.field.sup_diff(&u);
        let ratio = history.last().and_then(|p: &PicardStep| (p.sup_diff > 0.0).then(|| sup_diff / p.sup_diff));
        history.push(PicardStep { iteration: it, sup_diff, ratio, max_stderr: est.max_stderr });
        u = est.field;
        if sup_diff < cfg.tolerance {
            break;
        }
    }
    Ok(PicardResult { history, solution: u })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: f64) -> JumpMapSpec {
        JumpMapSpec { alpha: 1.5, kernel: ProductKernel::constant(c) }
    }

    #[test]
    fn unit_kernel_is_the_identity() {
        for z in [1e-6, 0.01, 0.3, 0.999, 1.0] {
            assert!((jump_map_phi(&spec(1.0), 0.2, z).unwrap() - z).abs() < 1e-12 * z);
            assert!((jump_map_phi(&spec(1.0), 0.2, -z).unwrap() + z).abs() < 1e-12 * z);
        }
    }

    #[test]
    fn constant_kernel_closed_form() {
        for c in [0.3, 2.5] {
            for z in [1e-4, 0.05, 0.5, 0.9] {
                let exact = constant_kernel_phi(1.5, c, z);
                let solved = jump_map_phi(&spec(c), 0.0, z).unwrap();
                assert!((solved - exact).abs() <= 1e-10 * exact, "{c} {z} {solved} {exact}");
            }
        }
    }

    #[test]
    fn table_matches_the_solver() {
        let s = JumpMapSpec { alpha: 1.5, kernel: ProductKernel { scale: 0.3, state_amp: 0.3, jump_amp: 0.3 } };
        let t = JumpMapTable::new(s, 24.0, 0.01).unwrap();
        for x in [-2.0, 0.0, 1.0] {
            for z in [-0.7, -1e-3, 0.02, 0.4, 1.0] {
                let exact = jump_map_phi(&s, x, z).unwrap();
                assert!((t.phi(x, z) - exact).abs() <= 1e-9 * exact.abs(), "{x} {z}");
            }
            let z = 1e-7;
            assert!((jump_map_phi(&s, x, z).unwrap() / z - t.slope_at_origin(x)).abs() < 1e-4);
        }
    }

    #[test]
    fn change_of_variables_battery_balances() {
        let s = JumpMapSpec { alpha: 1.5, kernel: ProductKernel { scale: 1.0, state_amp: 0.0, jump_amp: 0.3 } };
        for case in change_of_variables_battery(&s, 0.0, 2.0).unwrap() {
            assert!(case.rel_err <= 1e-6, "{case:?}");
        }
        assert!(closed_form_gap(1.5, 2.0).unwrap() <= 1e-10);
    }

    #[test]
    fn hat_weights_integrate_exponentials() {
        let w = exponential_hat_weights(2.0, 0.01, 30);
        assert!((w.iter().sum::<f64>() - (1.0 - (-0.6f64).exp()) / 2.0).abs() < 1e-14);
        let lin: f64 = w.iter().enumerate().map(|(k, w)| w * k as f64 * 0.01).sum();
        // ∫_0^L t e^{-2t} dt
        let l = 0.3f64;
        let exact = (1.0 - (-2.0 * l).exp() * (1.0 + 2.0 * l)) / 4.0;
        assert!((lin - exact).abs() < 1e-14);
    }

    fn small(paths: usize) -> PicardConfig {
        PicardConfig { grid_n: 5, paths, max_iter: 3, ..PicardConfig::standard(paths, 9) }
    }

    #[test]
    fn constant_source_is_exact() {
        let cfg = small(20);
        let table = JumpMapTable::new(cfg.spec, 24.0, 0.01).unwrap();
        let noise = draw_noise(&cfg);
        let est = feynman_kac_solve(&cfg, &table, &noise, |_, _| 3.0).unwrap();
        for m in 0..cfg.time_levels {
            let want = 3.0 * (1.0 - (-cfg.lambda * (cfg.horizon - cfg.level_time(m))).exp()) / cfg.lambda;
            for i in 0..cfg.grid_n {
                for j in 0..cfg.grid_n {
                    assert!((est.field.get(m, i, j) - want).abs() < 1e-13);
                }
            }
        }
        assert!(est.max_stderr < 1e-13);
    }

    #[test]
    fn trivial_picard_runs() {
        let cfg = small(10);
        let r = picard_solve(&cfg, Source::Zero).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.solution.sup(), 0.0);
        let no_large = PicardConfig { large_jumps: false, ..small(10) };
        let r = picard_solve(&no_large, Source::Wave).unwrap();
        assert_eq!(r.history.len(), 2);
        assert_eq!(r.history[1].sup_diff, 0.0);
    }

    #[test]
    fn unit_kernel_small_jumps_have_the_reference_variance() {
        let cfg = PicardConfig {
            spec: JumpMapSpec { alpha: 1.5, kernel: ProductKernel::constant(1.0) },
            drift: PhiDrift::Constant { bx: 0.0, bv: 0.7 },
            ..PicardConfig::standard(4000, 3)
        };
        let table = JumpMapTable::new(cfg.spec, 24.0, 0.01).unwrap();
        let ends: Vec<f64> = draw_noise(&cfg)
            .iter()
            .map(|n| simulate_phi_sde(&cfg, &table, n, [0.0, 0.0]).unwrap().last().unwrap()[1])
            .collect();
        let p = ends.len() as f64;
        let mean = ends.iter().sum::<f64>() / p;
        let var = ends.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (p - 1.0);
        // ∫_{B_1} w² dw/|w|^{5/2} = 2/(2 - α) per unit time
        let want = 2.0 / 0.5 * cfg.horizon;
        assert!((mean - 0.7 * cfg.horizon).abs() < 3.0 * (var / p).sqrt());
        assert!((var / want - 1.0).abs() < 0.1, "{var} {want}");
    }
}

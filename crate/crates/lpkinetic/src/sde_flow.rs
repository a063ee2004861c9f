//! Degenerate stable-driven SDE `dX = (V + b1(X)) dt`, `dV = b2(X, V) dt + σ dL`
//! by jump-adapted Euler on a replayable noise tape, flow and Jacobian
//! checks, and the random transport equation solved along characteristics.

use rayon::prelude::*;
use serde::Serialize;

use crate::stable_sim::{JumpTape, StableConfig, StablePath};
use crate::{Error, Result};

/// Smoothing radius of the power profiles at the origin.
pub const POWER_SMOOTHING: f64 = 1e-6;

/// `y (y² + ε²)^{(s-1)/2}`: `sign(y)|y|^s` with the kink at 0 smoothed.
pub fn signed_power(y: f64, s: f64) -> f64 {
    y * (y * y + POWER_SMOOTHING * POWER_SMOOTHING).powf(0.5 * (s - 1.0))
}

/// Derivative of [`signed_power`].
pub fn signed_power_derivative(y: f64, s: f64) -> f64 {
    let q = y * y + POWER_SMOOTHING * POWER_SMOOTHING;
    q.powf(0.5 * (s - 1.0)) + (s - 1.0) * y * y * q.powf(0.5 * (s - 3.0))
}

/// Drift catalog for the kinetic SDE. The `v` in the position equation is
/// implicit, so `∇_v b1 = I` for every entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Drift {
    Zero,
    /// `b2 = a x + c v`.
    Linear { a: f64, c: f64 },
    /// `b1 = amp sin x`.
    Shear { amp: f64 },
    /// `b1 = amp sgnpow(x, γ/(1+α))`, `b2 = amp (sgnpow(v, β) + sgnpow(x, β/(1+α)))`:
    /// anisotropic Hölder orders `γ` and `β`.
    Holder { gamma: f64, beta: f64, amp: f64 },
    /// `b1 = 0`, `b2 = amp sgnpow(v, β)`.
    VelocityHolder { beta: f64, amp: f64 },
}

impl Drift {
    /// `(b1, b2)` at `z = (x, v)`.
    pub fn eval(&self, alpha: f64, z: [f64; 2]) -> [f64; 2] {
        let [x, v] = z;
        match *self {
            Drift::Zero => [0.0, 0.0],
            Drift::Linear { a, c } => [0.0, a * x + c * v],
            Drift::Shear { amp } => [amp * x.sin(), 0.0],
            Drift::Holder { gamma, beta, amp } => [
                amp * signed_power(x, gamma / (1.0 + alpha)),
                amp * (signed_power(v, beta) + signed_power(x, beta / (1.0 + alpha))),
            ],
            Drift::VelocityHolder { beta, amp } => [0.0, amp * signed_power(v, beta)],
        }
    }

    /// `∂(b1, b2)/∂(x, v)`.
    pub fn gradient(&self, alpha: f64, z: [f64; 2]) -> [[f64; 2]; 2] {
        let [x, v] = z;
        match *self {
            Drift::Zero => [[0.0; 2]; 2],
            Drift::Linear { a, c } => [[0.0, 0.0], [a, c]],
            Drift::Shear { amp } => [[amp * x.cos(), 0.0], [0.0, 0.0]],
            Drift::Holder { gamma, beta, amp } => [
                [amp * signed_power_derivative(x, gamma / (1.0 + alpha)), 0.0],
                [
                    amp * signed_power_derivative(x, beta / (1.0 + alpha)),
                    amp * signed_power_derivative(v, beta),
                ],
            ],
            Drift::VelocityHolder { beta, amp } => [[0.0, 0.0], [0.0, amp * signed_power_derivative(v, beta)]],
        }
    }

    /// Anisotropic Hölder orders `(γ, β)` of `(b1, b2)`; `γ` is `None` when
    /// `b1` is smooth, and the whole is `None` for smooth drifts.
    pub fn holder_orders(&self) -> Option<(Option<f64>, f64)> {
        match *self {
            Drift::Holder { gamma, beta, .. } => Some((Some(gamma), beta)),
            Drift::VelocityHolder { beta, .. } => Some((None, beta)),
            _ => None,
        }
    }

    /// Inside the strong well-posedness window `γ ∈ (1+α/2, 1+α)`,
    /// `β ∈ (1-α/2, 1)`; smooth parts always qualify.
    pub fn admissible(&self, alpha: f64) -> bool {
        match self.holder_orders() {
            None => true,
            Some((g, b)) => {
                g.is_none_or(|g| g > 1.0 + alpha / 2.0 && g < 1.0 + alpha) && b > 1.0 - alpha / 2.0 && b < 1.0
            }
        }
    }
}

/// Noise coefficient on the velocity equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sigma {
    Constant { value: f64 },
    /// `base (1 + amp cos x)` with `|amp| < 1`.
    Modulated { base: f64, amp: f64 },
}

impl Sigma {
    pub fn eval(&self, z: [f64; 2]) -> f64 {
        match *self {
            Sigma::Constant { value } => value,
            Sigma::Modulated { base, amp } => base * (1.0 + amp * z[0].cos()),
        }
    }

    /// `∂σ/∂x`.
    fn dx(&self, z: [f64; 2]) -> f64 {
        match *self {
            Sigma::Constant { .. } => 0.0,
            Sigma::Modulated { base, amp } => -base * amp * z[0].sin(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Sigma::Constant { value } => value > 0.0,
            Sigma::Modulated { base, amp } => base > 0.0 && amp.abs() < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("sigma", "must stay bounded away from zero"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    pub drift: Drift,
    pub sigma: Sigma,
    pub dt: f64,
    pub horizon: f64,
    pub stable: StableConfig,
}

impl SdeConfig {
    pub fn alpha(&self) -> f64 {
        self.stable.alpha
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.stable.validate()?;
        self.sigma.validate()?;
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::param("dt", "time step and horizon must be positive"));
        }
        if ((self.horizon / self.dt).round() * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::param("dt", "must divide the horizon"));
        }
        Ok(())
    }

    /// Noise tape of stream `stream` on the configured grid.
    pub fn tape(&self, stream: u64) -> Result<JumpTape> {
        self.validate()?;
        JumpTape::generate(&self.stable, 0.0, self.dt, self.steps(), stream)
    }
}

/// Trajectory on the union of the step grid and the jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub stream: u64,
    pub times: Vec<f64>,
    pub states: Vec<[f64; 2]>,
    /// `(time, state before, state after)` for every applied jump.
    pub jumps: Vec<(f64, [f64; 2], [f64; 2])>,
}

impl FlowSample {
    pub fn end(&self) -> [f64; 2] {
        *self.states.last().expect("non-empty trajectory")
    }

    /// `max |ΔX|` over jump times; zero because jumps only enter `V`.
    pub fn max_position_jump(&self) -> f64 {
        self.jumps.iter().map(|(_, a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max)
    }
}

const BLOW_UP: f64 = 1e9;

fn grid_index(tape: &JumpTape, t: f64) -> Result<usize> {
    let k = ((t - tape.t0) / tape.dt).round();
    if (tape.t0 + k * tape.dt - t).abs() > 1e-9 * tape.dt || k < 0.0 || k as usize > tape.steps() {
        return Err(Error::param("t", format!("{t} is not a grid time of the noise tape")));
    }
    Ok(k as usize)
}

struct Stepper<'a> {
    drift: Drift,
    sigma: Sigma,
    alpha: f64,
    tape: &'a JumpTape,
}

impl Stepper<'_> {
    fn euler(&self, z: [f64; 2], h: f64) -> [f64; 2] {
        let b = self.drift.eval(self.alpha, z);
        [z[0] + h * (z[1] + b[0]), z[1] + h * b[1]]
    }

    /// Grid steps `k0..k1`; `visit` sees every recorded state.
    fn run<V: FnMut(f64, [f64; 2], Option<[f64; 2]>)>(&self, k0: usize, k1: usize, z0: [f64; 2], mut visit: V) -> Result<[f64; 2]> {
        let tape = self.tape;
        let mut z = z0;
        let start = tape.t0 + k0 as f64 * tape.dt;
        let mut next_jump = tape.jumps.partition_point(|j| j.0 <= start);
        for k in k0..k1 {
            let mut t = tape.t0 + k as f64 * tape.dt;
            let t_end = tape.t0 + (k + 1) as f64 * tape.dt;
            while next_jump < tape.jumps.len() && tape.jumps[next_jump].0 <= t_end {
                let (tj, w) = tape.jumps[next_jump];
                z = self.euler(z, tj - t);
                let before = z;
                z[1] += self.sigma.eval(z) * w;
                visit(tj, z, Some(before));
                t = tj;
                next_jump += 1;
            }
            z = self.euler(z, t_end - t);
            z[1] += self.sigma.eval(z) * tape.small[k];
            if !(z[0].abs() < BLOW_UP && z[1].abs() < BLOW_UP) {
                return Err(Error::Numerical(format!("state left |z| < 1e9 at t = {t_end}")));
            }
            visit(t_end, z, None);
        }
        Ok(z)
    }

    /// Exact derivative of the scheme along the trajectory from `z0`.
    fn run_jacobian(&self, k0: usize, k1: usize, z0: [f64; 2]) -> [[f64; 2]; 2] {
        let tape = self.tape;
        let mut z = z0;
        let mut jac = [[1.0, 0.0], [0.0, 1.0]];
        let start = tape.t0 + k0 as f64 * tape.dt;
        let mut next_jump = tape.jumps.partition_point(|j| j.0 <= start);
        let euler_step = |z: [f64; 2], jac: [[f64; 2]; 2], h: f64| {
            let g = self.drift.gradient(self.alpha, z);
            let m = [[1.0 + h * g[0][0], h * (1.0 + g[0][1])], [h * g[1][0], 1.0 + h * g[1][1]]];
            (self.euler(z, h), mat_mul(m, jac))
        };
        let noise_step = |z: [f64; 2], jac: [[f64; 2]; 2], w: f64| {
            let m = [[1.0, 0.0], [self.sigma.dx(z) * w, 1.0]];
            ([z[0], z[1] + self.sigma.eval(z) * w], mat_mul(m, jac))
        };
        for k in k0..k1 {
            let mut t = tape.t0 + k as f64 * tape.dt;
            let t_end = tape.t0 + (k + 1) as f64 * tape.dt;
            while next_jump < tape.jumps.len() && tape.jumps[next_jump].0 <= t_end {
                let (tj, w) = tape.jumps[next_jump];
                (z, jac) = euler_step(z, jac, tj - t);
                (z, jac) = noise_step(z, jac, w);
                t = tj;
                next_jump += 1;
            }
            (z, jac) = euler_step(z, jac, t_end - t);
            (z, jac) = noise_step(z, jac, tape.small[k]);
        }
        jac
    }
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// `Z_{s,t}(z)` on a given tape; `s` and `t` must be grid times.
pub fn flow_on_tape(cfg: &SdeConfig, tape: &JumpTape, s: f64, t: f64, z: [f64; 2]) -> Result<[f64; 2]> {
    let (k0, k1) = (grid_index(tape, s)?, grid_index(tape, t)?);
    if k1 < k0 {
        return Err(Error::param("t", "need s <= t"));
    }
    Stepper { drift: cfg.drift, sigma: cfg.sigma, alpha: cfg.alpha(), tape }.run(k0, k1, z, |_, _, _| {})
}

/// Trajectory from `(s, z)` to the horizon, driven by noise stream `stream`.
pub fn simulate_sde(cfg: &SdeConfig, s: f64, z: [f64; 2], stream: u64) -> Result<FlowSample> {
    let tape = cfg.tape(stream)?;
    simulate_on_tape(cfg, &tape, s, z, stream)
}

pub fn simulate_on_tape(cfg: &SdeConfig, tape: &JumpTape, s: f64, z: [f64; 2], stream: u64) -> Result<FlowSample> {
    let k0 = grid_index(tape, s)?;
    let mut out = FlowSample { stream, times: vec![s], states: vec![z], jumps: Vec::new() };
    Stepper { drift: cfg.drift, sigma: cfg.sigma, alpha: cfg.alpha(), tape }.run(k0, tape.steps(), z, |t, z, before| {
        if let Some(b) = before {
            out.jumps.push((t, b, z));
        }
        out.times.push(t);
        out.states.push(z);
    })?;
    Ok(out)
}

/// `|Z_{s,t}(z) - Z_{r,t}(Z_{s,r}(z))|` over the same noise.
pub fn flow_composition_check(cfg: &SdeConfig, s: f64, r: f64, t: f64, z: [f64; 2], stream: u64) -> Result<f64> {
    if !(s < r && r < t) {
        return Err(Error::param("r", "need s < r < t"));
    }
    let tape = cfg.tape(stream)?;
    let direct = flow_on_tape(cfg, &tape, s, t, z)?;
    let mid = flow_on_tape(cfg, &tape, s, r, z)?;
    let composed = flow_on_tape(cfg, &tape, r, t, mid)?;
    Ok(((direct[0] - composed[0]).powi(2) + (direct[1] - composed[1]).powi(2)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowJacobian {
    pub matrix: [[f64; 2]; 2],
    pub determinant: f64,
    /// Set when `|det| < 1e-8`.
    pub flagged: bool,
}

/// Default finite-difference step `max(1e-5, 1e-3 |z|)`.
pub fn jacobian_step(z: [f64; 2]) -> f64 {
    (1e-3 * (z[0] * z[0] + z[1] * z[1]).sqrt()).max(1e-5)
}

/// Central differences of `z ↦ Z_{s,t}(z)` over common noise.
pub fn flow_jacobian(cfg: &SdeConfig, s: f64, t: f64, z: [f64; 2], stream: u64, h: Option<f64>) -> Result<FlowJacobian> {
    let tape = cfg.tape(stream)?;
    jacobian_on_tape(cfg, &tape, s, t, z, h)
}

pub fn jacobian_on_tape(cfg: &SdeConfig, tape: &JumpTape, s: f64, t: f64, z: [f64; 2], h: Option<f64>) -> Result<FlowJacobian> {
    let h = h.unwrap_or_else(|| jacobian_step(z));
    let mut m = [[0.0; 2]; 2];
    for col in 0..2 {
        let mut zp = z;
        let mut zm = z;
        zp[col] += h;
        zm[col] -= h;
        let (a, b) = (flow_on_tape(cfg, tape, s, t, zp)?, flow_on_tape(cfg, tape, s, t, zm)?);
        for row in 0..2 {
            m[row][col] = (a[row] - b[row]) / (2.0 * h);
        }
    }
    let determinant = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    Ok(FlowJacobian { matrix: m, determinant, flagged: determinant.abs() < 1e-8 })
}

/// Derivative of the discrete flow obtained by differentiating every Euler
/// and noise step; the oracle for [`flow_jacobian`] with smooth drifts.
pub fn variational_jacobian(cfg: &SdeConfig, tape: &JumpTape, s: f64, t: f64, z: [f64; 2]) -> Result<[[f64; 2]; 2]> {
    let (k0, k1) = (grid_index(tape, s)?, grid_index(tape, t)?);
    Ok(Stepper { drift: cfg.drift, sigma: cfg.sigma, alpha: cfg.alpha(), tape }.run_jacobian(k0, k1, z))
}

/// Sup-distance on the coarsest grid between solutions at step sizes
/// `dt, dt/4, …, dt/4^levels`, all driven by one fine tape: entry `k`
/// compares levels `k` and `k+1`.
pub fn uniqueness_gaps(cfg: &SdeConfig, z: [f64; 2], levels: usize, stream: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let factor = 4usize.pow(levels as u32);
    let fine_dt = cfg.dt / factor as f64;
    let fine = JumpTape::generate(&cfg.stable, 0.0, fine_dt, cfg.steps() * factor, stream)?;
    let coarse_times: Vec<f64> = (0..=cfg.steps()).map(|k| k as f64 * cfg.dt).collect();
    let mut sols: Vec<Vec<[f64; 2]>> = Vec::with_capacity(levels + 1);
    for level in 0..=levels {
        let tape = fine.coarsen(4usize.pow((levels - level) as u32))?;
        let per = 4usize.pow(level as u32);
        let stepper = Stepper { drift: cfg.drift, sigma: cfg.sigma, alpha: cfg.alpha(), tape: &tape };
        let mut states = vec![z];
        let mut count = 0usize;
        stepper.run(0, tape.steps(), z, |_, st, before| {
            if before.is_none() {
                count += 1;
                if count % per == 0 {
                    states.push(st);
                }
            }
        })?;
        debug_assert_eq!(states.len(), coarse_times.len());
        sols.push(states);
    }
    Ok(sols
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Fraction of streams whose gap sequence is strictly decreasing, with the
/// per-stream gaps.
pub fn uniqueness_study(cfg: &SdeConfig, z: [f64; 2], levels: usize, streams: u64) -> Result<(f64, Vec<Vec<f64>>)> {
    let gaps: Vec<Vec<f64>> = (0..streams)
        .into_par_iter()
        .map(|s| uniqueness_gaps(cfg, z, levels, s))
        .collect::<Result<_>>()?;
    let shrinking = gaps.iter().filter(|g| g.windows(2).all(|w| w[1] < w[0])).count();
    Ok((shrinking as f64 / streams.max(1) as f64, gaps))
}

/// Right-continuous piecewise-constant forcing `t ↦ L_t` with exact running
/// integrals.
#[derive(Debug, Clone)]
pub struct Forcing {
    breaks: Vec<f64>,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Forcing {
    /// From a sampled path: small increments land on grid times, recorded
    /// jumps at their own times.
    pub fn from_path(path: &StablePath) -> Self {
        let mut events: Vec<(f64, f64)> = Vec::new();
        let mut j = 0;
        for k in 1..path.times.len() {
            let t = path.times[k];
            let mut level = path.values[k - 1];
            while j < path.jumps.len() && path.jumps[j].0 < t {
                level += path.jumps[j].1;
                events.push((path.jumps[j].0, level));
                j += 1;
            }
            // grid values already include jumps at or before t
            while j < path.jumps.len() && path.jumps[j].0 <= t {
                j += 1;
            }
            events.push((t, path.values[k]));
        }
        let mut breaks = vec![path.times[0]];
        let mut values = vec![path.values[0]];
        for (t, v) in events {
            if t > *breaks.last().unwrap() {
                breaks.push(t);
                values.push(v);
            } else {
                *values.last_mut().unwrap() = v;
            }
        }
        let mut cumulative = vec![0.0];
        for i in 1..breaks.len() {
            let prev = cumulative[i - 1];
            cumulative.push(prev + values[i - 1] * (breaks[i] - breaks[i - 1]));
        }
        Self { breaks, values, cumulative }
    }

    pub fn horizon(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    fn piece(&self, t: f64) -> usize {
        self.breaks.partition_point(|b| *b <= t).saturating_sub(1)
    }

    pub fn value(&self, t: f64) -> f64 {
        self.values[self.piece(t)]
    }

    /// `∫_{t0}^t L_r dr`.
    pub fn integral(&self, t: f64) -> f64 {
        let i = self.piece(t);
        self.cumulative[i] + self.values[i] * (t - self.breaks[i])
    }

    /// Whether `L` changes inside `(a, b]`.
    pub fn changes_within(&self, a: f64, b: f64) -> bool {
        let i = self.breaks.partition_point(|x| *x <= a);
        i < self.breaks.len() && self.breaks[i] <= b
    }

    /// Whether `L` changes inside the open interval `(a, b)`.
    pub fn changes_inside(&self, a: f64, b: f64) -> bool {
        let i = self.breaks.partition_point(|x| *x <= a);
        i < self.breaks.len() && self.breaks[i] < b
    }
}

/// Drift of the random ODE `dY = (b(Y) + L_t) dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScalarDrift {
    Zero,
    Constant { value: f64 },
    Smooth { amp: f64 },
    /// `amp sgnpow(x, γ)`.
    Holder { gamma: f64, amp: f64 },
}

impl ScalarDrift {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ScalarDrift::Zero => 0.0,
            ScalarDrift::Constant { value } => value,
            ScalarDrift::Smooth { amp } => amp * x.sin(),
            ScalarDrift::Holder { gamma, amp } => amp * signed_power(x, gamma),
        }
    }

    /// Inside `((2+α)/(2(1+α)), 1)` for Hölder entries.
    pub fn admissible(&self, alpha: f64) -> bool {
        match *self {
            ScalarDrift::Holder { gamma, .. } => gamma > (2.0 + alpha) / (2.0 * (1.0 + alpha)) && gamma < 1.0,
            _ => true,
        }
    }
}

/// Initial data for the transport equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Datum {
    Linear { slope: f64, offset: f64 },
    Sine { freq: f64 },
    Bump { width: f64 },
    Constant { value: f64 },
}

impl Datum {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Datum::Linear { slope, offset } => slope * x + offset,
            Datum::Sine { freq } => (freq * x).sin(),
            Datum::Bump { width } => (-(x / width).powi(2)).exp(),
            Datum::Constant { value } => value,
        }
    }

    /// `(inf, sup)` over the line.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            Datum::Linear { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Datum::Sine { .. } => (-1.0, 1.0),
            Datum::Bump { .. } => (0.0, 1.0),
            Datum::Constant { value } => (value, value),
        }
    }
}

/// `∂_t u + (b(x) + L_t) ∂_x u = 0`, `u(0) = φ`.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub drift: ScalarDrift,
    pub datum: Datum,
    pub forcing: Forcing,
    /// Heun step for the characteristics.
    pub dt: f64,
}

impl TransportProblem {
    pub fn new(drift: ScalarDrift, datum: Datum, path: &StablePath, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        Ok(Self { drift, datum, forcing: Forcing::from_path(path), dt })
    }

    fn steps_to(&self, t: f64) -> Result<usize> {
        let n = (t / self.dt).round();
        if (n * self.dt - t).abs() > 1e-9 * self.dt.max(t) || n < 0.0 {
            return Err(Error::param("t", format!("{t} is not a multiple of the step {}", self.dt)));
        }
        if t > self.forcing.horizon() + 1e-12 {
            return Err(Error::param("t", "beyond the horizon of the driving path"));
        }
        Ok(n as usize)
    }

    /// One Heun step from `t0` to `t1` (either direction); the forcing is
    /// integrated exactly.
    fn heun(&self, t0: f64, t1: f64, y: f64) -> f64 {
        let h = t1 - t0;
        let push = self.forcing.integral(t1) - self.forcing.integral(t0);
        let k0 = self.drift.eval(y);
        let pred = y + h * k0 + push;
        y + 0.5 * h * (k0 + self.drift.eval(pred)) + push
    }
}

/// `Y_{s,·}(x)` on the step grid from `s` to `t`.
pub fn solve_random_ode(problem: &TransportProblem, s: f64, t: f64, x: f64) -> Result<Vec<(f64, f64)>> {
    let (k0, k1) = (problem.steps_to(s)?, problem.steps_to(t)?);
    if k1 < k0 {
        return Err(Error::param("t", "need s <= t"));
    }
    let mut y = x;
    let mut out = vec![(s, x)];
    for k in k0..k1 {
        let (a, b) = (k as f64 * problem.dt, (k + 1) as f64 * problem.dt);
        y = problem.heun(a, b, y);
        out.push((b, y));
    }
    Ok(out)
}

/// `Y_{s,t}(x)`.
pub fn forward_flow(problem: &TransportProblem, s: f64, t: f64, x: f64) -> Result<f64> {
    Ok(solve_random_ode(problem, s, t, x)?.last().unwrap().1)
}

/// `Y_{0,t}^{-1}(x)` by integrating the characteristic backwards from `(t, x)`.
pub fn inverse_flow(problem: &TransportProblem, t: f64, x: f64) -> Result<f64> {
    let n = problem.steps_to(t)?;
    let mut y = x;
    for k in (0..n).rev() {
        y = problem.heun((k + 1) as f64 * problem.dt, k as f64 * problem.dt, y);
    }
    Ok(y)
}

/// `u(t, x) = φ(Y_{0,t}^{-1}(x))` at each `x`.
pub fn solve_transport(problem: &TransportProblem, t: f64, xs: &[f64]) -> Result<Vec<f64>> {
    xs.par_iter().map(|&x| Ok(problem.datum.eval(inverse_flow(problem, t, x)?))).collect()
}

/// `|∂⁺_t u + (b(x) + L_t) ∂_x u|` at `(t, x)`: forward difference over one
/// step in time, centred difference with step `h` in space. Rejected when
/// the forcing changes strictly inside `(t, t + dt)`.
pub fn transport_residual(problem: &TransportProblem, t: f64, x: f64, h: f64) -> Result<f64> {
    let dt = problem.dt;
    if problem.forcing.changes_inside(t, t + dt) {
        return Err(Error::param("t", format!("forcing jumps inside ({t}, {})", t + dt)));
    }
    let u = |tt: f64, xx: f64| -> Result<f64> { Ok(problem.datum.eval(inverse_flow(problem, tt, xx)?)) };
    let ut = (u(t + dt, x)? - u(t, x)?) / dt;
    let ux = (u(t, x + h)? - u(t, x - h)?) / (2.0 * h);
    Ok((ut + (problem.drift.eval(x) + problem.forcing.value(t)) * ux).abs())
}

/// `∫_0^t L_r dr` summed directly from the tape's increments and jumps.
pub fn integrated_noise(tape: &JumpTape, t: f64) -> f64 {
    let small: f64 = tape
        .small
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let at = tape.t0 + (k + 1) as f64 * tape.dt;
            if at <= t {
                w * (t - at)
            } else {
                0.0
            }
        })
        .sum();
    let jumps: f64 = tape.jumps.iter().filter(|j| j.0 <= t).map(|j| j.1 * (t - j.0)).sum();
    small + jumps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(drift: Drift, sigma: Sigma) -> SdeConfig {
        SdeConfig { drift, sigma, dt: 1.0 / 64.0, horizon: 1.0, stable: StableConfig::new(1.5, 1, 1.0, 11, 0.5).unwrap() }
    }

    #[test]
    fn zero_drift_integrates_the_noise_exactly() {
        let cfg = config(Drift::Zero, Sigma::Constant { value: 1.0 });
        let tape = cfg.tape(3).unwrap();
        let path = tape.path();
        let (x, v) = (0.3, -0.7);
        let sample = simulate_on_tape(&cfg, &tape, 0.0, [x, v], 3).unwrap();
        for (t, z) in sample.times.iter().zip(&sample.states) {
            let k = (t / cfg.dt).round() as usize;
            if (k as f64 * cfg.dt - t).abs() < 1e-12 {
                assert!((z[1] - v - path.values[k]).abs() < 1e-12);
                assert!((z[0] - x - v * t - integrated_noise(&tape, *t)).abs() < 1e-12);
            }
        }
        assert_eq!(sample.max_position_jump(), 0.0);
    }

    #[test]
    fn composition_reuses_the_noise() {
        let cfg = config(Drift::Holder { gamma: 2.0, beta: 0.6, amp: 1.0 }, Sigma::Modulated { base: 1.0, amp: 0.3 });
        let gap = flow_composition_check(&cfg, 0.0, 0.5, 1.0, [0.2, -0.1], 5).unwrap();
        assert!(gap <= 1e-12, "{gap}");
        assert!(flow_composition_check(&cfg, 0.0, 0.5 + 1e-3, 1.0, [0.2, -0.1], 5).is_err());
    }

    #[test]
    fn affine_flow_jacobian() {
        let cfg = config(Drift::Zero, Sigma::Constant { value: 1.0 });
        let j = flow_jacobian(&cfg, 0.25, 0.75, [1.0, 0.5], 2, None).unwrap();
        let want = [[1.0, 0.5], [0.0, 1.0]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((j.matrix[r][c] - want[r][c]).abs() < 1e-10);
            }
        }
        assert!(!j.flagged);
    }

    #[test]
    fn finite_differences_match_the_variational_scheme() {
        let cfg = config(Drift::Linear { a: -1.0, c: -0.5 }, Sigma::Modulated { base: 1.0, amp: 0.4 });
        let cfg = SdeConfig { drift: Drift::Shear { amp: 0.7 }, ..cfg };
        let tape = cfg.tape(8).unwrap();
        let z = [0.4, 0.9];
        let fd = jacobian_on_tape(&cfg, &tape, 0.0, 1.0, z, Some(1e-5)).unwrap();
        let exact = variational_jacobian(&cfg, &tape, 0.0, 1.0, z).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((fd.matrix[r][c] - exact[r][c]).abs() < 1e-7, "{fd:?} {exact:?}");
            }
        }
    }

    #[test]
    fn admissibility_window() {
        assert!(Drift::Holder { gamma: 2.0, beta: 0.6, amp: 1.0 }.admissible(1.5));
        assert!(!Drift::Holder { gamma: 1.5, beta: 0.6, amp: 1.0 }.admissible(1.5));
        assert!(ScalarDrift::Holder { gamma: 0.85, amp: 1.0 }.admissible(1.5));
        assert!(!ScalarDrift::Holder { gamma: 0.6, amp: 1.0 }.admissible(1.5));
    }

    #[test]
    fn forcing_integrates_exactly() {
        let cfg = config(Drift::Zero, Sigma::Constant { value: 1.0 });
        let tape = cfg.tape(4).unwrap();
        let f = Forcing::from_path(&tape.path());
        for t in [0.0, 0.013, 0.5, 0.77, 1.0] {
            assert!((f.integral(t) - integrated_noise(&tape, t)).abs() < 1e-12);
        }
        for &(tj, _) in &tape.jumps {
            assert!(f.changes_within(tj - 1e-9, tj));
        }
    }

    #[test]
    fn zero_drift_transport_is_a_shift() {
        let cfg = config(Drift::Zero, Sigma::Constant { value: 1.0 });
        let tape = cfg.tape(6).unwrap();
        let p = TransportProblem::new(ScalarDrift::Zero, Datum::Sine { freq: 1.3 }, &tape.path(), 1.0 / 128.0).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| -2.0 + 0.2 * i as f64).collect();
        let u = solve_transport(&p, 0.75, &xs).unwrap();
        let shift = integrated_noise(&tape, 0.75);
        for (x, v) in xs.iter().zip(&u) {
            assert!((v - (1.3 * (x - shift)).sin()).abs() < 1e-12);
        }
        let c = TransportProblem { datum: Datum::Constant { value: 2.0 }, ..p.clone() };
        let ok: Vec<f64> = (32..96).filter_map(|k| transport_residual(&c, k as f64 * p.dt, 0.1, 1e-3).ok()).collect();
        assert!(!ok.is_empty() && ok.iter().all(|r| *r <= 1e-12));
    }

    #[test]
    fn random_ode_composes_and_is_monotone() {
        let cfg = config(Drift::Zero, Sigma::Constant { value: 1.0 });
        let tape = cfg.tape(7).unwrap();
        let p = TransportProblem::new(ScalarDrift::Holder { gamma: 0.85, amp: 1.0 }, Datum::Bump { width: 1.0 }, &tape.path(), 1.0 / 256.0)
            .unwrap();
        for i in 0..100 {
            let x = -3.0 + 0.06 * i as f64;
            let direct = forward_flow(&p, 0.0, 1.0, x).unwrap();
            let mid = forward_flow(&p, 0.0, 0.5, x).unwrap();
            assert!((direct - forward_flow(&p, 0.5, 1.0, mid).unwrap()).abs() <= 1e-10);
            assert!(forward_flow(&p, 0.0, 1.0, x + 1e-6).unwrap() > direct);
        }
    }
}

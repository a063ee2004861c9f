use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use super::{SlopeFit, Wave, WaveSum};
use crate::kernels::{kinetic_cf, symbol_constant, KineticKernelSpec, LevyNodes};
use crate::lp_core::DyadicPartition;
use crate::quad::gl;
use crate::{Error, Result};

/// Exponent beyond which a mode is treated as fully damped.
const DAMPED: f64 = 40.0;

/// Model equation `∂_t u = κ L_v u + U v ∂_x u - λ u + f` on `(x, v) ∈ R²`
/// with `u(0) = 0` and a time-independent plane-wave source.
#[derive(Debug, Clone)]
pub struct DuhamelConfig {
    pub alpha: f64,
    pub kappa: f64,
    pub transport: f64,
    pub lambda: f64,
    pub horizon: f64,
    /// Gauss–Legendre nodes per time panel.
    pub gl_nodes: usize,
    /// Evaluation window in `v` is `[-v_max, v_max]`; time panels are sized
    /// so the sheared phases stay resolved there.
    pub v_max: f64,
    pub source: WaveSum,
}

impl DuhamelConfig {
    pub fn new(alpha: f64, source: WaveSum) -> Self {
        Self { alpha, kappa: 1.0, transport: 1.0, lambda: 1.0, horizon: 1.0, gl_nodes: 8, v_max: 2.0, source }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::param("alpha", "must lie in (0, 2]"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::param("kappa", "must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::param("lambda", "must be >= 0"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::param("horizon", "must be positive"));
        }
        if !self.transport.is_finite() {
            return Err(Error::param("transport", "must be finite"));
        }
        if self.gl_nodes < 2 {
            return Err(Error::param("gl_nodes", "need at least 2"));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::param("v_max", "must be positive"));
        }
        if self.source.dim != 2 {
            return Err(Error::Dimension { expected: 2, got: self.source.dim });
        }
        Ok(())
    }

    /// `e^{-λτ} p̂_τ(ξ, η)`: the amplitude a source mode keeps after time `τ`.
    pub fn damping(&self, tau: f64, xi: f64, eta: f64) -> f64 {
        if tau <= 0.0 {
            return 1.0;
        }
        let spec = KineticKernelSpec::constant(self.alpha, self.kappa, self.transport, 0.0, tau)
            .expect("validated coefficients");
        (-self.lambda * tau).exp() * kinetic_cf(&spec, xi, eta)
    }

    fn exponent(&self, tau: f64, xi: f64, eta: f64) -> f64 {
        let d = self.damping(tau, xi, eta);
        if d > 0.0 {
            -d.ln()
        } else {
            f64::INFINITY
        }
    }

    /// Time panels on `[0, t]` for one source mode.
    fn breaks(&self, wave: &Wave, t: f64) -> Vec<f64> {
        let (xi, eta) = (wave.freq[0], wave.freq[1]);
        let shear = (self.transport * xi).abs();
        let c = symbol_constant(self.alpha) * self.kappa;
        let rate = self.lambda + c * eta.abs().powf(self.alpha) + (c * shear.powf(self.alpha)).powf(1.0 / (1.0 + self.alpha));
        let mut end = t;
        if self.exponent(t, xi, eta) > DAMPED {
            let (mut lo, mut hi) = (0.0, t);
            while hi - lo > 1e-12 * t {
                let mid = 0.5 * (lo + hi);
                if self.exponent(mid, xi, eta) > DAMPED {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            end = hi;
        }
        let mut h = 0.5 / rate.max(1.0 / t);
        if shear > 0.0 {
            h = h.min(1.0 / (shear * self.v_max));
        }
        let panels = (end / h).ceil().max(1.0) as usize;
        let mut b: Vec<f64> = (0..=panels).map(|i| end * i as f64 / panels as f64).collect();
        if shear > 0.0 {
            // the symbol |η + Uξτ|^α has a kink where the sheared frequency crosses zero
            let cross = -eta / (self.transport * xi);
            if cross > 0.0 && cross < end {
                b.push(cross);
                b.sort_by(f64::total_cmp);
                b.dedup();
            }
        }
        b
    }
}

/// Exact-in-space solution: each source mode `cos(ξx + ηv + φ)` is carried
/// to `∫_0^t e^{-λτ} p̂_τ(ξ, η) cos(ξx + (η + Uξτ)v + φ) dτ`, and the time
/// integral is discretized on Gauss–Legendre panels.
#[derive(Debug, Clone)]
pub struct DuhamelSolution {
    pub cfg: DuhamelConfig,
}

pub fn duhamel_solve(cfg: DuhamelConfig) -> Result<DuhamelSolution> {
    cfg.validate()?;
    Ok(DuhamelSolution { cfg })
}

impl DuhamelSolution {
    /// `u(t)` as a wave sum (one wave per source mode and time node).
    pub fn at(&self, t: f64) -> WaveSum {
        let cfg = &self.cfg;
        let rule = gl(cfg.gl_nodes);
        let waves: Vec<Wave> = cfg
            .source
            .waves
            .par_iter()
            .flat_map_iter(|w| {
                let (xi, eta) = (w.freq[0], w.freq[1]);
                let b = if t > 0.0 { cfg.breaks(w, t) } else { vec![] };
                let mut out = Vec::new();
                for p in b.windows(2) {
                    for (tau, wt) in rule.mapped(p[0], p[1]) {
                        let a = cfg.damping(tau, xi, eta);
                        if a > 0.0 {
                            out.push(Wave::new(w.amp * wt * a, vec![xi, eta + cfg.transport * xi * tau], w.phase));
                        }
                    }
                }
                out
            })
            .collect();
        WaveSum { dim: 2, waves }
    }

    pub fn final_state(&self) -> WaveSum {
        self.at(self.cfg.horizon)
    }

    /// `max |∂_t u - κ L_v u - U v ∂_x u + λ u - f|` at time `t` over `points`,
    /// with the time derivative from a five-point centred difference and
    /// `L_v` from the jump-integral quadrature (`-κ ∂_v²`-symbol at α = 2).
    pub fn residual(&self, t: f64, points: &[Vec<f64>]) -> Result<f64> {
        let cfg = &self.cfg;
        let u = self.at(t);
        let top_rate = u
            .waves
            .iter()
            .map(|w| {
                cfg.lambda
                    + symbol_constant(cfg.alpha) * cfg.kappa * w.freq[1].abs().powf(cfg.alpha)
                    + (cfg.transport * w.freq[0]).abs() * cfg.v_max
            })
            .fold(1.0, f64::max);
        let h = (1e-3 * t).min(0.05 / top_rate).min(0.25 * t);
        let shifted: Vec<WaveSum> = [-2.0, -1.0, 1.0, 2.0].iter().map(|k| self.at(t + k * h)).collect();

        let lu = if cfg.alpha >= 2.0 {
            u.filtered(|k| -cfg.kappa * k[1] * k[1])
        } else {
            let k_max = u.waves.iter().map(|w| w.freq[1].abs()).fold(1.0, f64::max);
            let nodes = LevyNodes::new(cfg.alpha, 0.1 / k_max, 1.0, k_max, 10)?;
            let kappa = cfg.kappa;
            let waves = u
                .waves
                .par_iter()
                .map(|w| Wave { amp: w.amp * nodes.symbol(w.freq[1], &|_| kappa), ..w.clone() })
                .collect();
            WaveSum { dim: 2, waves }
        };
        let res = points
            .par_iter()
            .map(|z| {
                let dt = (shifted[0].eval(z) - 8.0 * shifted[1].eval(z) + 8.0 * shifted[2].eval(z) - shifted[3].eval(z))
                    / (12.0 * h);
                let rhs = lu.eval(z) + cfg.transport * z[1] * u.derivative(0, z) - cfg.lambda * u.eval(z)
                    + cfg.source.eval(z);
                (dt - rhs).abs()
            })
            .reduce(|| 0.0, f64::max);
        Ok(res)
    }
}

/// `(1 - e^{-λT}) ||f||_∞ / λ`, or `T ||f||_∞` when `λ = 0`.
pub fn max_principle_bound(lambda: f64, horizon: f64, source_sup: f64) -> f64 {
    if lambda > 0.0 {
        (1.0 - (-lambda * horizon).exp()) * source_sup / lambda
    } else {
        horizon * source_sup
    }
}

/// Sup of a wave sum with integer frequencies, sampled on an `n × n` grid of
/// its period cell `[-π, π)²`.
pub fn periodic_sup(f: &WaveSum, n: usize) -> f64 {
    let step = 2.0 * PI / n as f64;
    (0..n)
        .into_par_iter()
        .map(|a| {
            let x = -PI + a as f64 * step;
            (0..n).map(|b| f.eval(&[x, -PI + b as f64 * step]).abs()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// `waves` random modes with integer frequencies in `[-k_max, k_max]²`,
/// amplitudes in `[-1, 1]` and uniform phases.
pub fn random_band_limited(waves: usize, k_max: i32, seed: u64) -> WaveSum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = WaveSum::new(2);
    for _ in 0..waves {
        let xi = rng.random_range(-k_max..=k_max) as f64;
        let eta = rng.random_range(-k_max..=k_max) as f64;
        f.push(rng.random_range(-1.0..1.0), vec![xi, eta], rng.random_range(0.0..2.0 * PI));
    }
    f
}

/// `Σ_k 2^{-γk/(1+α)} cos(2^k x + φ_k) + Σ_k 2^{-βk} cos(2^k v + ψ_k)`:
/// anisotropic Hölder order `γ` in `x` and `β` in `v` with exact block
/// profiles. `kx_max = None` drops the `x` modes.
pub fn lacunary_source(alpha: f64, beta: f64, gamma: f64, kx_max: Option<u32>, kv_max: u32, seed: u64) -> WaveSum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = WaveSum::new(2);
    if let Some(kx) = kx_max {
        for k in 0..=kx {
            let amp = 2f64.powf(-gamma * k as f64 / (1.0 + alpha));
            f.push(amp, vec![2f64.powi(k as i32), 0.0], rng.random_range(0.0..2.0 * PI));
        }
    }
    for k in 0..=kv_max {
        f.push(2f64.powf(-beta * k as f64), vec![0.0, 2f64.powi(k as i32)], rng.random_range(0.0..2.0 * PI));
    }
    f
}

/// `points` evaluation points in `[-π, π) × [-v_max, v_max]`; the first half
/// sits on `v = 0`, where transported `x` modes keep their full amplitude.
pub fn evaluation_points(points: usize, v_max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|i| {
            let x = rng.random_range(-PI..PI);
            let v = if i < points / 2 { 0.0 } else { rng.random_range(-v_max..v_max) };
            vec![x, v]
        })
        .collect()
}

fn aniso_ring(alpha: f64, j: usize) -> impl Fn(&[f64]) -> f64 {
    move |k: &[f64]| DyadicPartition::ring_at(j, k[0].abs().powf(1.0 / (1.0 + alpha)) + k[1].abs())
}

fn x_ring(j: usize) -> impl Fn(&[f64]) -> f64 {
    move |k: &[f64]| DyadicPartition::ring_at(j, k[0].abs())
}

/// Block profiles of the solution against the source's Hölder norms.
#[derive(Debug, Clone, Serialize)]
pub struct SchauderReport {
    /// `log2 s_j(u)` over anisotropic blocks.
    pub aniso: SlopeFit,
    /// `log2 s_j^x(u)` over `x`-only blocks; absent without `x` modes.
    pub x: Option<SlopeFit>,
    /// `sup_j 2^{βj} s_j(f)`.
    pub source_aniso_norm: f64,
    /// `sup_{j≥1} 2^{γj/(1+α)} s_j^x(f)`.
    pub source_x_norm: f64,
    /// `max_j s_j(u) 2^{(α+β)j} / ||f||`.
    pub aniso_constant: f64,
    pub aniso_spread: f64,
    pub x_constant: Option<f64>,
    pub x_spread: Option<f64>,
}

/// Measure `s_j(u(T))` on the given block ranges and compare with
/// `2^{-(α+β)j}` (anisotropic) and `2^{-(γ+α)j/(1+α)}` (`x` direction).
pub fn schauder_report(
    cfg: &DuhamelConfig,
    beta: f64,
    gamma: f64,
    aniso_js: std::ops::RangeInclusive<usize>,
    x_js: Option<std::ops::RangeInclusive<usize>>,
    points: &[Vec<f64>],
) -> Result<SchauderReport> {
    let sol = duhamel_solve(cfg.clone())?;
    let u = sol.final_state();
    let alpha = cfg.alpha;
    let f = &cfg.source;

    let top = f
        .waves
        .iter()
        .map(|w| w.freq[0].abs().powf(1.0 / (1.0 + alpha)) + w.freq[1].abs())
        .fold(1.0, f64::max)
        .log2()
        .ceil() as usize
        + 1;
    let source_aniso_norm = (0..=top)
        .map(|j| 2f64.powf(beta * j as f64) * f.filtered(aniso_ring(alpha, j)).sup_over(points))
        .fold(0.0, f64::max);
    let x_top = f.waves.iter().map(|w| w.freq[0].abs()).fold(1.0, f64::max).log2().ceil() as usize + 1;
    let source_x_norm = (1..=x_top)
        .map(|j| 2f64.powf(gamma * j as f64 / (1.0 + alpha)) * f.filtered(x_ring(j)).sup_over(points))
        .fold(0.0, f64::max);

    let profile = |js: &std::ops::RangeInclusive<usize>, x_only: bool| -> Result<SlopeFit> {
        let xs: Vec<f64> = js.clone().map(|j| j as f64).collect();
        let vals: Vec<f64> = js
            .clone()
            .map(|j| if x_only { u.filtered(x_ring(j)) } else { u.filtered(aniso_ring(alpha, j)) }.sup_over(points))
            .collect();
        SlopeFit::fit(&xs, &vals)
    };

    let aniso = profile(&aniso_js, false)?;
    let a_exp = -(alpha + beta);
    let aniso_constant = aniso.constant(a_exp) / source_aniso_norm;
    let aniso_spread = aniso.constant_spread(a_exp);
    let (x, x_constant, x_spread) = match x_js {
        Some(js) => {
            let fit = profile(&js, true)?;
            let e = -(gamma + alpha) / (1.0 + alpha);
            let c = fit.constant(e) / source_x_norm;
            let s = fit.constant_spread(e);
            (Some(fit), Some(c), Some(s))
        }
        None => (None, None, None),
    };
    Ok(SchauderReport {
        aniso,
        x,
        source_aniso_norm,
        source_x_norm,
        aniso_constant,
        aniso_spread,
        x_constant,
        x_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_source_solves_the_scalar_ode() {
        let cfg = DuhamelConfig { lambda: 2.0, ..DuhamelConfig::new(1.5, WaveSum::constant(2, 3.0)) };
        let u = duhamel_solve(cfg).unwrap();
        for t in [0.1f64, 0.7, 1.0] {
            let exact = 3.0 * (1.0 - (-2.0 * t).exp()) / 2.0;
            assert!((u.at(t).eval(&[0.3, -1.0]) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn pure_velocity_mode_matches_its_multiplier() {
        for alpha in [1.2, 2.0] {
            let mut f = WaveSum::new(2);
            f.push(1.0, vec![0.0, 3.0], 0.0);
            let cfg = DuhamelConfig { lambda: 0.5, kappa: 0.7, ..DuhamelConfig::new(alpha, f) };
            let m = 0.5 + symbol_constant(alpha) * 0.7 * 3f64.powf(alpha);
            let u = duhamel_solve(cfg).unwrap().at(1.0);
            for v in [0.0f64, 0.4, -1.3] {
                let exact = (3.0 * v).cos() * (1.0 - (-m).exp()) / m;
                assert!((u.eval(&[0.2, v]) - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "{alpha} {v}");
            }
        }
    }

    #[test]
    fn transported_modes_solve_the_equation() {
        let f = random_band_limited(6, 3, 4);
        let cfg = DuhamelConfig { lambda: 1.0, ..DuhamelConfig::new(1.5, f.clone()) };
        let sol = duhamel_solve(cfg).unwrap();
        let pts = evaluation_points(200, 2.0, 9);
        let fs = periodic_sup(&f, 256);
        assert!(sol.residual(1.0, &pts).unwrap() < 1e-4 * fs);
        let u = sol.final_state();
        assert!(u.sup_over(&pts) <= max_principle_bound(1.0, 1.0, fs));
    }

    #[test]
    fn single_velocity_packet_peaks_at_its_block() {
        let mut f = WaveSum::new(2);
        f.push(1.0, vec![0.0, 16.0], 0.3);
        let u = duhamel_solve(DuhamelConfig::new(1.5, f)).unwrap().final_state();
        let pts = evaluation_points(400, 2.0, 1);
        let prof: Vec<f64> = (0..8).map(|j| u.filtered(aniso_ring(1.5, j)).sup_over(&pts)).collect();
        let peak = (0..8).max_by(|&a, &b| prof[a].total_cmp(&prof[b])).unwrap();
        assert_eq!(peak, 4);
        let m = 1.0 + symbol_constant(1.5) * 16f64.powf(1.5);
        assert!((prof[4] - (1.0 - (-m).exp()) / m).abs() < 1e-3 * prof[4]);
    }
}

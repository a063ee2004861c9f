use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::SlopeFit;
use crate::kernels::{
    check_spectral_decay, field_from_transform, kinetic_cf, moment_integral, sheared_cf, GaussianSpec,
    KineticKernelSpec, MomentGrid, StepPath,
};
use crate::lp_core::{DyadicPartition, Field, GridSpec};
use crate::quad::gl;
use crate::{Error, Result};

/// A time-integrated block quantity with the gap between two quadrature
/// orders as its error estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BlockIntegral {
    pub value: f64,
    pub error_estimate: f64,
    /// Set when the error estimate exceeds 1% of the value.
    pub flagged: bool,
}

impl BlockIntegral {
    fn new(value: f64, coarse: f64) -> Self {
        let error_estimate = (value - coarse).abs();
        Self { value, error_estimate, flagged: error_estimate > 1e-2 * value.abs() }
    }
}

/// Discretization of the heat block integrals. The spatial box is
/// `box_scale · max(2^{-j}, (c0 τ)^{1/2})`, shrunk if the ring would not be
/// resolved by `points` samples per axis.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HeatBlockConfig {
    pub box_scale: f64,
    pub points: usize,
    pub gl_nodes: usize,
    /// Time integration stops at `tail_factor · c0 · 4^{-j}`.
    pub tail_factor: f64,
    /// Below `near_factor · 4^{-j}` the inner integral is frozen at its
    /// small-time limit.
    pub near_factor: f64,
}

impl Default for HeatBlockConfig {
    fn default() -> Self {
        Self { box_scale: 48.0, points: 1024, gl_nodes: 8, tail_factor: 300.0, near_factor: 1e-3 }
    }
}

/// `Σ cell · w(z) |f(z)|` for each `(β, γ)`: `w = |z|^β` on heat grids,
/// `|x|^β |v|^γ` on kinetic `(x, v)` grids.
fn weighted_l1(field: &Field, weights: &[(f64, f64)], kinetic: bool) -> Vec<f64> {
    let g = &field.grid;
    let d = g.dim();
    let cell = g.cell_volume();
    let per_point: Vec<Vec<f64>> = field
        .values
        .par_iter()
        .enumerate()
        .map_init(
            || vec![0.0; d],
            |z, (k, &f)| {
                g.coords_of(k, z);
                let a = f.abs();
                let (rx, rv) = if kinetic {
                    (z[0].abs(), z[1].abs())
                } else {
                    (z.iter().map(|x| x * x).sum::<f64>().sqrt(), 1.0)
                };
                weights
                    .iter()
                    .map(|&(b, c)| {
                        let wx = if b == 0.0 { 1.0 } else { rx.powf(b) };
                        let wv = if c == 0.0 { 1.0 } else { rv.powf(c) };
                        a * wx * wv
                    })
                    .collect()
            },
        )
        .collect();
    let mut out = vec![0.0; weights.len()];
    for row in per_point {
        for (o, r) in out.iter_mut().zip(row) {
            *o += r;
        }
    }
    out.iter().map(|o| o * cell).collect()
}

/// `∫ |x|^β |R_j p_{s,t}(x)| dx` for each `β`, at the times stored in `gspec`.
pub fn heat_block_inner(j: usize, betas: &[f64], gspec: &GaussianSpec, cfg: &HeatBlockConfig) -> Result<Vec<f64>> {
    if betas.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::param("beta", "must be >= 0"));
    }
    let d = gspec.dim();
    let cov = gspec.covariance();
    let c0 = gspec.ellipticity();
    let tau = gspec.t - gspec.s;
    let scale = 2f64.powi(-(j as i32)).max((c0 * tau).sqrt());
    let reach = 2f64.powi(j as i32 + 1);
    let cap = 0.95 * std::f64::consts::PI * (cfg.points as f64 / 2.0 - 1.0) / reach;
    let half = (cfg.box_scale * scale).min(cap);
    let grid = GridSpec::uniform(d, half, cfg.points)?;
    let field = field_from_transform(&grid, |xi| {
        let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ring = DyadicPartition::ring_at(j, r);
        if ring == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += xi[a] * cov[(a, b)] * xi[b];
            }
        }
        Complex64::new(ring * (-0.5 * q).exp(), 0.0)
    });
    let weights: Vec<(f64, f64)> = betas.iter().map(|&b| (b, 0.0)).collect();
    Ok(weighted_l1(&field, &weights, false))
}

/// Breakpoints `τ_lo, 2τ_lo, ...` capped at `hi`, with `pivot` among them
/// when it falls inside.
fn doubling_breaks(lo: f64, pivot: f64, hi: f64) -> Vec<f64> {
    let mut out = vec![lo];
    let mut b = pivot;
    while b / 2.0 > lo {
        b /= 2.0;
    }
    while b < hi {
        if b > lo {
            out.push(b);
        }
        b *= 2.0;
    }
    out.push(hi);
    out.dedup();
    out
}

/// `∫_0^t (t-s)^{q_i} J_i(t-s) ds` given the inner integrals `J_i(τ)` on a
/// doubling mesh; returns fine and coarse-rule values.
fn time_integrals<F>(breaks: &[f64], gl_nodes: usize, qs: &[f64], inner: F) -> Result<Vec<BlockIntegral>>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let fine = gl(gl_nodes);
    let coarse = gl((gl_nodes / 2).max(2));
    let mut nodes: Vec<(f64, f64, bool)> = Vec::new();
    for p in breaks.windows(2) {
        nodes.extend(fine.mapped(p[0], p[1]).map(|(x, w)| (x, w, true)));
        nodes.extend(coarse.mapped(p[0], p[1]).map(|(x, w)| (x, w, false)));
    }
    let values: Vec<Vec<f64>> = nodes.par_iter().map(|&(tau, _, _)| inner(tau)).collect::<Result<_>>()?;
    let lo = breaks[0];
    let at_lo = inner(lo)?;
    let n = qs.len();
    let mut f = vec![0.0; n];
    let mut c = vec![0.0; n];
    for ((tau, w, is_fine), v) in nodes.iter().zip(&values) {
        for i in 0..n {
            let term = w * tau.powf(qs[i]) * v[i];
            if *is_fine {
                f[i] += term;
            } else {
                c[i] += term;
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            let near = at_lo[i] * lo.powf(qs[i] + 1.0) / (qs[i] + 1.0);
            BlockIntegral::new(f[i] + near, c[i] + near)
        })
        .collect())
}

/// `∫_0^t ∫ |x|^β |R_j p_{s,t}(x)| dx ds` for every `β`, sharing the fields.
pub fn heat_block_integrals(
    j: usize,
    betas: &[f64],
    t: f64,
    gspec: &GaussianSpec,
    cfg: &HeatBlockConfig,
) -> Result<Vec<BlockIntegral>> {
    if !(t > 0.0) {
        return Err(Error::param("t", "horizon must be positive"));
    }
    let tj = 4f64.powi(-(j as i32));
    let hi = t.min(cfg.tail_factor * gspec.ellipticity() * tj);
    let lo = (cfg.near_factor * tj).min(0.5 * hi);
    let breaks = doubling_breaks(lo, tj, hi);
    let qs = vec![0.0; betas.len()];
    time_integrals(&breaks, cfg.gl_nodes, &qs, |tau| {
        heat_block_inner(j, betas, &gspec.with_times(t - tau, t)?, cfg)
    })
}

pub fn heat_block_integral(j: usize, beta: f64, t: f64, gspec: &GaussianSpec, cfg: &HeatBlockConfig) -> Result<BlockIntegral> {
    Ok(heat_block_integrals(j, &[beta], t, gspec, cfg)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMode {
    /// Anisotropic blocks `|ξ|^{1/(1+α)} + |η| ~ 2^j`.
    Aniso,
    /// Blocks in `x` only, `|ξ| ~ 2^j`.
    XOnly,
}

/// `(t-s)^q |x|^β |v|^γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentWeights {
    pub q: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl MomentWeights {
    pub fn new(q: f64, beta: f64, gamma: f64) -> Self {
        Self { q, beta, gamma }
    }
}

/// Discretization of the kinetic block integrals; boxes follow the larger
/// of the block scale and the kernel scale at each time lag.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KineticBlockConfig {
    pub box_scale: f64,
    pub nx: usize,
    pub nv: usize,
    pub gl_nodes: usize,
    /// Time integration stops at `tail_factor` natural block times.
    pub tail_factor: f64,
    pub near_factor: f64,
}

impl Default for KineticBlockConfig {
    fn default() -> Self {
        Self { box_scale: 24.0, nx: 256, nv: 256, gl_nodes: 6, tail_factor: 64.0, near_factor: 1e-3 }
    }
}

fn kinetic_ring(mode: BlockMode, alpha: f64, j: usize, xi: f64, eta: f64) -> f64 {
    let r = match mode {
        BlockMode::Aniso => xi.abs().powf(1.0 / (1.0 + alpha)) + eta.abs(),
        BlockMode::XOnly => xi.abs(),
    };
    DyadicPartition::ring_at(j, r)
}

fn kinetic_block_inner(
    j: usize,
    weights: &[(f64, f64)],
    spec: &KineticKernelSpec,
    mode: BlockMode,
    cfg: &KineticBlockConfig,
) -> Result<Vec<f64>> {
    let a = spec.alpha;
    let tau = spec.tau();
    let (_, k_hi) = spec.kappa.range(spec.s, spec.t);
    let (u_lo, u_hi) = spec.u.range(spec.s, spec.t);
    let u_max = u_lo.abs().max(u_hi.abs());
    let kv = (spec.symbol_constant() * k_hi * tau).powf(1.0 / a);
    let kx = u_max * tau * kv;
    let jf = j as f64;
    let (bx, bv) = match mode {
        BlockMode::Aniso => (2f64.powf(-(1.0 + a) * jf), 2f64.powf(-jf)),
        BlockMode::XOnly => (2f64.powf(-jf), 0.0),
    };
    let mut half = [cfg.box_scale * bx.max(kx), cfg.box_scale * bv.max(kv)];
    let damp = (spec.lambda * (spec.s - spec.t)).exp();
    let ft = |f: &[f64]| {
        let ring = kinetic_ring(mode, a, j, f[0], f[1]);
        if ring == 0.0 {
            0.0
        } else {
            ring * sheared_cf(spec, f[0], f[1])
        }
    };
    let mut tries = 0;
    let grid = loop {
        let grid = GridSpec::new(half.to_vec(), vec![cfg.nx, cfg.nv])?;
        match check_spectral_decay(&grid, 1e-10, ft) {
            Ok(()) => break grid,
            Err(Error::Unresolved { axis, .. }) if tries < 24 => {
                half[axis] *= 0.5;
                tries += 1;
            }
            Err(e) => return Err(e),
        }
    };
    let field = field_from_transform(&grid, |f| Complex64::new(damp * ft(f), 0.0));
    Ok(weighted_l1(&field, weights, true))
}

fn check_weights(alpha: f64, w: &MomentWeights) -> Result<()> {
    if !(w.q > -1.0) {
        return Err(Error::param("q", "must exceed -1"));
    }
    if !(w.beta >= 0.0 && w.gamma >= 0.0) {
        return Err(Error::param("beta", "moment exponents must be >= 0"));
    }
    if !(w.beta + w.gamma < alpha) {
        return Err(Error::param("beta", "need beta + gamma < alpha"));
    }
    Ok(())
}

/// `∫_0^t ∫ (t-s)^q |x|^β |v|^γ |R_j Γ_{s,t} p_{s,t}| dx dv ds` for every
/// weight triple, with `t = kspec.t` and the coefficient paths of `kspec`.
pub fn kinetic_block_integrals(
    j: usize,
    weights: &[MomentWeights],
    kspec: &KineticKernelSpec,
    mode: BlockMode,
    cfg: &KineticBlockConfig,
) -> Result<Vec<BlockIntegral>> {
    kspec.validate()?;
    let a = kspec.alpha;
    for w in weights {
        check_weights(a, w)?;
    }
    let t = kspec.t;
    if !(t > 0.0) {
        return Err(Error::param("t", "horizon must be positive"));
    }
    let (k_lo, _) = kspec.kappa.range(0.0, t);
    let c = kspec.symbol_constant();
    let jf = j as f64;
    let tj = match mode {
        BlockMode::Aniso => 2f64.powf(-a * jf) / (c * k_lo),
        BlockMode::XOnly => {
            let (u_lo, u_hi) = kspec.u.range(0.0, t);
            if u_lo * u_hi <= 0.0 {
                return Err(Error::param("u", "x-blocks need a transport speed of fixed sign"));
            }
            let u_min = u_lo.abs().min(u_hi.abs());
            (2f64.powf(-a * jf) / (c * k_lo * u_min.powf(a))).powf(1.0 / (1.0 + a))
        }
    };
    let hi = t.min(cfg.tail_factor * tj);
    let lo = (cfg.near_factor * tj).min(0.5 * hi);
    let breaks = doubling_breaks(lo, tj, hi);
    let pairs: Vec<(f64, f64)> = weights.iter().map(|w| (w.beta, w.gamma)).collect();
    let qs: Vec<f64> = weights.iter().map(|w| w.q).collect();
    time_integrals(&breaks, cfg.gl_nodes, &qs, |tau| {
        kinetic_block_inner(j, &pairs, &kspec.with_times(t - tau, t), mode, cfg)
    })
}

pub fn kinetic_block_integral(
    j: usize,
    q: f64,
    beta: f64,
    gamma: f64,
    kspec: &KineticKernelSpec,
    mode: BlockMode,
    cfg: &KineticBlockConfig,
) -> Result<BlockIntegral> {
    Ok(kinetic_block_integrals(j, &[MomentWeights::new(q, beta, gamma)], kspec, mode, cfg)?[0])
}

/// Moments `∫ |x|^β |v|^γ |∂_x^n ∂_v^m p_{0,τ}|` at each lag and their
/// log-log slope against `τ`.
pub fn moment_scaling(
    spec: &KineticKernelSpec,
    beta: f64,
    gamma: f64,
    n: u32,
    m: u32,
    taus: &[f64],
    mg: &MomentGrid,
) -> Result<(SlopeFit, Vec<f64>)> {
    let values: Vec<f64> = taus
        .par_iter()
        .map(|&tau| moment_integral(&spec.with_times(0.0, tau), beta, gamma, n, m, mg))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = taus.iter().map(|t| t.log2()).collect();
    Ok((SlopeFit::fit(&xs, &values)?, values))
}

/// Time-rescaled coefficient path `r ↦ p(s + τ r)`.
pub fn rescale_path(p: &StepPath, s: f64, tau: f64) -> StepPath {
    StepPath { breaks: p.breaks.iter().map(|b| (b - s) / tau).collect(), values: p.values.clone() }
}

/// Largest gap between `p̂_{s,t}(ξ, η)` and the unit-time transform of the
/// rescaled coefficients at `(τ^{1+1/α} ξ, τ^{1/α} η)`, over random
/// frequencies spread across the kernel's natural scales.
pub fn nb3_gap(spec: &KineticKernelSpec, samples: usize, seed: u64) -> Result<f64> {
    spec.validate()?;
    let tau = spec.tau();
    let a = spec.alpha;
    let unit = KineticKernelSpec {
        kappa: rescale_path(&spec.kappa, spec.s, tau),
        u: rescale_path(&spec.u, spec.s, tau),
        s: 0.0,
        t: 1.0,
        ..spec.clone()
    };
    let sx = tau.powf(1.0 + 1.0 / a);
    let sv = tau.powf(1.0 / a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mx = 10f64.powf(rng.random_range(-1.5..1.0));
        let mv = 10f64.powf(rng.random_range(-1.5..1.0));
        let xi = if rng.random::<bool>() { mx } else { -mx } / sx;
        let eta = if rng.random::<bool>() { mv } else { -mv } / sv;
        let direct = kinetic_cf(spec, xi, eta);
        let scaled = kinetic_cf(&unit, sx * xi, sv * eta);
        worst = worst.max((direct - scaled).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_limit_at_small_lag_is_the_ring_kernel_mass() {
        // as τ → 0 the inner integral tends to ∫|φ̌_j|, which does not depend on j
        let cfg = HeatBlockConfig::default();
        let g = GaussianSpec::identity(1, 1.0 - 1e-12, 1.0).unwrap();
        let a = heat_block_inner(3, &[0.0], &g, &cfg).unwrap()[0];
        let b = heat_block_inner(5, &[0.0], &g, &cfg).unwrap()[0];
        assert!((a - b).abs() < 1e-6 * a, "{a} {b}");
        // the weight |x| scales by 2^{-j}
        let a1 = heat_block_inner(3, &[1.0], &g, &cfg).unwrap()[0];
        let b1 = heat_block_inner(5, &[1.0], &g, &cfg).unwrap()[0];
        assert!((a1 / b1 - 4.0).abs() < 1e-4, "{}", a1 / b1);
    }

    #[test]
    fn heat_block_integral_decays_like_four_to_minus_j() {
        let cfg = HeatBlockConfig::default();
        let g = GaussianSpec::identity(1, 0.0, 1.0).unwrap();
        let v: Vec<f64> = (2..=4).map(|j| heat_block_integral(j, 0.0, 1.0, &g, &cfg).unwrap().value).collect();
        assert!((v[0] / v[1] - 4.0).abs() < 0.05 && (v[1] / v[2] - 4.0).abs() < 0.05, "{v:?}");
        assert!(heat_block_integral(2, -1.0, 1.0, &g, &cfg).is_err());
    }

    #[test]
    fn kinetic_rejects_bad_weights() {
        let k = KineticKernelSpec::constant(1.5, 1.0, 1.0, 0.0, 1.0).unwrap();
        let cfg = KineticBlockConfig::default();
        assert!(kinetic_block_integral(2, -1.0, 0.0, 0.0, &k, BlockMode::Aniso, &cfg).is_err());
        assert!(kinetic_block_integral(2, 0.0, 1.0, 0.6, &k, BlockMode::Aniso, &cfg).is_err());
        let still = KineticKernelSpec::constant(1.5, 1.0, 0.0, 0.0, 1.0).unwrap();
        assert!(kinetic_block_integral(2, 0.0, 0.0, 0.0, &still, BlockMode::XOnly, &cfg).is_err());
    }

    #[test]
    fn kinetic_blocks_are_self_similar() {
        // constant coefficients: the j and j+1 integrals differ by exactly 2^{-α} once t is large
        let k = KineticKernelSpec::constant(1.5, 1.0, 1.0, 0.0, 8.0).unwrap();
        let cfg = KineticBlockConfig { nx: 128, nv: 128, ..Default::default() };
        let a = kinetic_block_integral(3, 0.0, 0.0, 0.0, &k, BlockMode::Aniso, &cfg).unwrap();
        let b = kinetic_block_integral(4, 0.0, 0.0, 0.0, &k, BlockMode::Aniso, &cfg).unwrap();
        assert!(!a.flagged && !b.flagged);
        assert!(((a.value / b.value).log2() - 1.5).abs() < 0.02, "{}", (a.value / b.value).log2());
    }

    #[test]
    fn scaling_identity_with_variable_coefficients() {
        let kappa = StepPath::new(vec![0.0, 0.4, 0.7], vec![1.0, 2.0, 0.5]).unwrap();
        let u = StepPath::new(vec![0.0, 0.5], vec![1.0, -0.5]).unwrap();
        let spec = KineticKernelSpec { alpha: 1.3, kappa, u, lambda: 0.0, s: 0.2, t: 0.9 };
        assert!(nb3_gap(&spec, 100, 7).unwrap() < 1e-12);
    }

    #[test]
    fn doubling_mesh_contains_pivot() {
        let b = doubling_breaks(1e-3, 0.1, 1.0);
        assert!(b.contains(&0.1));
        assert_eq!(b[0], 1e-3);
        assert_eq!(*b.last().unwrap(), 1.0);
        assert!(b.windows(2).all(|w| w[1] > w[0] && w[1] <= 2.0 * w[0] + 1e-15));
    }
}

//! Samplers for symmetric alpha-stable laws: Chambers-Mallows-Stuck in one
//! dimension, Gaussian subordination for rotationally invariant vectors, and
//! a jump tape (compensated small jumps plus exactly timed large jumps) that
//! several consumers can replay at different time resolutions.

use std::f64::consts::PI;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use crate::kernels::c_alpha;
use crate::{Error, Result};

/// Deterministic generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Symmetric stable law with characteristic function `exp(-(scale |θ|)^α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StableConfig {
    pub alpha: f64,
    pub dim: usize,
    pub scale: f64,
    pub seed: u64,
    /// Jumps of size at least `r0` are recorded individually.
    pub r0: f64,
}

impl StableConfig {
    pub fn new(alpha: f64, dim: usize, scale: f64, seed: u64, r0: f64) -> Result<Self> {
        let cfg = Self { alpha, dim, scale, seed, r0 };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unit-time law of the process generated by `κ ∫ δ²_w f |w|^{-d-α} dw`.
    pub fn for_generator(alpha: f64, dim: usize, kappa: f64, seed: u64, r0: f64) -> Result<Self> {
        let c = if alpha >= 2.0 { 1.0 } else { c_alpha(dim, alpha) };
        Self::new(alpha, dim, (kappa * c).powf(1.0 / alpha), seed, r0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::param("alpha", "must lie in (0, 2]"));
        }
        if self.dim == 0 {
            return Err(Error::param("dim", "must be >= 1"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::param("scale", "must be positive"));
        }
        if !(self.r0 > 0.0 && self.r0 <= 1.0) {
            return Err(Error::param("r0", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// `ν0` in the one-dimensional Lévy measure `ν0 |w|^{-1-α} dw`.
    pub fn levy_density(&self) -> f64 {
        2.0 * self.scale.powf(self.alpha) / c_alpha(1, self.alpha)
    }
}

/// One symmetric draw with characteristic function `exp(-|θ|^α)`.
pub fn stable_draw<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = PI * (rng.random::<f64>() - 0.5);
    if alpha == 1.0 {
        return u.tan();
    }
    let w: f64 = Exp1.sample(rng);
    (alpha * u).sin() / u.cos().powf(1.0 / alpha) * ((u - alpha * u).cos() / w).powf((1.0 - alpha) / alpha)
}

/// `n` i.i.d. unit-scale symmetric draws (Chambers-Mallows-Stuck).
pub fn sample_1d_stable<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| stable_draw(alpha, rng)).collect()
}

/// Positive stable draw with Laplace transform `exp(-s^a)`, `a ∈ (0, 1]`
/// (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a >= 1.0 {
        return 1.0;
    }
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let w: f64 = Exp1.sample(rng);
    let num = (a * PI * u).sin().powf(a / (1.0 - a)) * ((1.0 - a) * PI * u).sin();
    let den = (PI * u).sin().powf(1.0 / (1.0 - a));
    (num / den / w).powf((1.0 - a) / a)
}

/// Rotationally invariant increments over `dt` as `sqrt(2S) G`, scaled by
/// `scale dt^{1/α}`.
pub fn sample_isotropic_stable<R: Rng + ?Sized>(cfg: &StableConfig, dt: f64, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let factor = cfg.scale * dt.powf(1.0 / cfg.alpha);
    (0..n)
        .map(|_| {
            let s = positive_stable(cfg.alpha / 2.0, rng);
            let r = (2.0 * s).sqrt() * factor;
            (0..cfg.dim).map(|_| r * { let z: f64 = StandardNormal.sample(rng); z }).collect()
        })
        .collect()
}

/// Explicit small jumps per unit time are capped at this rate.
pub const SMALL_JUMP_RATE_CAP: f64 = 2000.0;

/// Truncation radius of the explicit small-jump series: the Gaussian stand-in
/// carries at most 1% of the small-jump variance unless that would need more
/// than [`SMALL_JUMP_RATE_CAP`] explicit jumps per unit time.
pub fn small_jump_cutoff(cfg: &StableConfig) -> f64 {
    let a = cfg.alpha;
    let by_variance = cfg.r0 * 0.01f64.powf(1.0 / (2.0 - a));
    let by_rate = (SMALL_JUMP_RATE_CAP * a / (2.0 * cfg.levy_density()) + cfg.r0.powf(-a)).powf(-1.0 / a);
    by_variance.max(by_rate)
}

/// Share of the small-jump variance carried by the Gaussian stand-in.
pub fn gaussian_share(cfg: &StableConfig) -> f64 {
    (small_jump_cutoff(cfg) / cfg.r0).powf(2.0 - cfg.alpha)
}

/// Variance per unit time of the compensated jumps below `r0`.
pub fn small_jump_variance(cfg: &StableConfig) -> f64 {
    2.0 * cfg.levy_density() * cfg.r0.powf(2.0 - cfg.alpha) / (2.0 - cfg.alpha)
}

fn check_small_jump_scheme(cfg: &StableConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.dim != 1 {
        return Err(Error::param("dim", "jump streams are one-dimensional"));
    }
    if !(cfg.alpha > 1.0 && cfg.alpha < 2.0) {
        return Err(Error::param("alpha", "compensated small-jump series needs alpha in (1, 2)"));
    }
    Ok(())
}

/// Magnitude with density proportional to `w^{-1-α}` on `(lo, hi)`.
fn pareto_between<R: Rng + ?Sized>(alpha: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let a = lo.powf(-alpha);
    let b = if hi.is_finite() { hi.powf(-alpha) } else { 0.0 };
    (a - rng.random::<f64>() * (a - b)).powf(-1.0 / alpha)
}

fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Sum of the compensated jumps of size below `r0` over `dt`: explicit jumps
/// above the cutoff plus a variance-matched Gaussian for the rest.
pub fn sample_compensated_small_jumps<R: Rng + ?Sized>(cfg: &StableConfig, dt: f64, rng: &mut R) -> Result<f64> {
    check_small_jump_scheme(cfg)?;
    Ok(small_jump_increment(cfg, dt, rng))
}

fn small_jump_increment<R: Rng + ?Sized>(cfg: &StableConfig, dt: f64, rng: &mut R) -> f64 {
    let a = cfg.alpha;
    let nu0 = cfg.levy_density();
    let eps = small_jump_cutoff(cfg);
    let rate = 2.0 * nu0 * (eps.powf(-a) - cfg.r0.powf(-a)) / a * dt;
    let count = Poisson::new(rate).map(|p| p.sample(rng) as u64).unwrap_or(0);
    let mut sum = 0.0;
    for _ in 0..count {
        sum += random_sign(rng) * pareto_between(a, eps, cfg.r0, rng);
    }
    let var = 2.0 * nu0 * eps.powf(2.0 - a) / (2.0 - a) * dt;
    sum + var.sqrt() * { let z: f64 = StandardNormal.sample(rng); z }
}

/// Jumps of size at least `r0` over `[t0, t1)`, sorted by time.
pub fn sample_large_jumps<R: Rng + ?Sized>(cfg: &StableConfig, t0: f64, t1: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let a = cfg.alpha;
    let rate = 2.0 * cfg.levy_density() * cfg.r0.powf(-a) / a;
    let mut out = Vec::new();
    let mut t = t0;
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e / rate;
        if t >= t1 {
            break;
        }
        out.push((t, random_sign(rng) * pareto_between(a, cfg.r0, f64::INFINITY, rng)));
    }
    out
}

/// Noise of one stream on `[t0, t0 + n dt]`: compensated small-jump
/// increments per fine step and the exactly timed jumps of size `>= r0`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTape {
    pub t0: f64,
    pub dt: f64,
    pub small: Vec<f64>,
    pub jumps: Vec<(f64, f64)>,
}

impl JumpTape {
    /// At `α = 2` the tape is Brownian (variance `2 scale²` per unit time)
    /// and carries no jumps.
    pub fn generate(cfg: &StableConfig, t0: f64, dt: f64, n: usize, stream: u64) -> Result<Self> {
        if cfg.alpha < 2.0 {
            check_small_jump_scheme(cfg)?;
        } else {
            cfg.validate()?;
        }
        if !(dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        let mut rng = stream_rng(cfg.seed, stream);
        let horizon = t0 + dt * n as f64;
        if cfg.alpha >= 2.0 {
            let sd = (2.0 * dt).sqrt() * cfg.scale;
            let small = (0..n).map(|_| sd * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
            return Ok(Self { t0, dt, small, jumps: Vec::new() });
        }
        let jumps = sample_large_jumps(cfg, t0, horizon, &mut rng);
        let small = (0..n).map(|_| small_jump_increment(cfg, dt, &mut rng)).collect();
        Ok(Self { t0, dt, small, jumps })
    }

    pub fn steps(&self) -> usize {
        self.small.len()
    }

    pub fn horizon(&self) -> f64 {
        self.t0 + self.dt * self.steps() as f64
    }

    /// Same noise on a grid `factor` times coarser: small increments are
    /// summed, jumps are kept as they are.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::param("factor", "must divide the number of fine steps"));
        }
        let small = self.small.chunks(factor).map(|c| c.iter().sum()).collect();
        Ok(Self { t0: self.t0, dt: self.dt * factor as f64, small, jumps: self.jumps.clone() })
    }

    /// Path values `L_{t_k} - L_{t0}` on the grid `t_k = t0 + k dt`; small
    /// increments land at the end of their step.
    pub fn path(&self) -> StablePath {
        let n = self.steps();
        let mut times = Vec::with_capacity(n + 1);
        let mut values = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        let mut j = 0;
        times.push(self.t0);
        values.push(0.0);
        for k in 0..n {
            let t = self.t0 + (k + 1) as f64 * self.dt;
            acc += self.small[k];
            while j < self.jumps.len() && self.jumps[j].0 <= t {
                acc += self.jumps[j].1;
                j += 1;
            }
            times.push(t);
            values.push(acc);
        }
        StablePath { times, values, jumps: self.jumps.clone() }
    }

    /// Order-sensitive FNV-1a digest of the jump record, for replay checks.
    pub fn jump_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &(t, w) in &self.jumps {
            for b in t.to_bits().to_le_bytes().iter().chain(&w.to_bits().to_le_bytes()) {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Sampled trajectory with its recorded large jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct StablePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub jumps: Vec<(f64, f64)>,
}

impl StablePath {
    /// `t,value` rows after a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,value\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            s.push_str(&format!("{t:.12e},{v:.12e}\n"));
        }
        s
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Critical value of the two-sample statistic at the 1% level.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.628 * ((n + m) / (n * m)).sqrt()
}

/// One-sample statistic against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(a: &[f64], cdf: F) -> f64 {
    let mut x = a.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let c = cdf(v);
        d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs())
    })
}

/// Critical value of the one-sample statistic at the 1% level.
pub fn ks_one_sample_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Least-squares fit of `-log|E e^{iξX}|` against `|ξ|^α` in log-log form:
/// returns `(slope, intercept)` of `log(-log φ)` versus `log ξ`, i.e. the
/// index estimate and `α log(scale)`.
pub fn empirical_cf_fit(samples: &[f64], freqs: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = freqs
        .iter()
        .map(|&xi| {
            let (c, s) = samples.iter().fold((0.0, 0.0), |(c, s), &x| (c + (xi * x).cos(), s + (xi * x).sin()));
            let n = samples.len() as f64;
            let modulus = ((c / n).powi(2) + (s / n).powi(2)).sqrt();
            (xi.ln(), (-modulus.ln()).ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Cauchy, ContinuousCDF, Normal};

    #[test]
    fn gaussian_and_cauchy_reductions() {
        let mut rng = stream_rng(11, 0);
        let g = sample_1d_stable(2.0, 100_000, &mut rng);
        let var = g.iter().map(|x| x * x).sum::<f64>() / g.len() as f64;
        // variance 2, standard error 2 sqrt(2/n)
        assert!((var - 2.0).abs() < 3.0 * 2.0 * (2.0 / 1e5f64).sqrt());
        let n = Normal::new(0.0, 2f64.sqrt()).unwrap();
        assert!(ks_one_sample(&g, |x| n.cdf(x)) < ks_one_sample_critical_1pct(g.len()));

        let mut c = sample_1d_stable(1.0, 100_000, &mut rng);
        let cd = Cauchy::new(0.0, 1.0).unwrap();
        assert!(ks_one_sample(&c, |x| cd.cdf(x)) < ks_one_sample_critical_1pct(c.len()));
        c.sort_by(f64::total_cmp);
        let q = |p: f64| c[(p * c.len() as f64) as usize];
        assert!(q(0.5).abs() < 0.02);
        assert!((q(0.75) - q(0.25) - 2.0).abs() < 0.05);
    }

    #[test]
    fn cf_slope_recovers_index() {
        let mut rng = stream_rng(5, 1);
        for &a in &[1.2, 1.5, 1.8] {
            let x = sample_1d_stable(a, 100_000, &mut rng);
            let (slope, icpt) = empirical_cf_fit(&x, &[0.25, 0.5, 1.0, 2.0]);
            assert!((slope - a).abs() < 0.05, "{a}: {slope}");
            assert!(icpt.abs() < 0.05);
        }
    }

    #[test]
    fn subordinated_law_matches_cms_in_one_dimension() {
        let cfg = StableConfig::new(1.5, 1, 1.0, 3, 1.0).unwrap();
        let mut rng = stream_rng(3, 0);
        let a: Vec<f64> = sample_isotropic_stable(&cfg, 1.0, 20_000, &mut rng).into_iter().map(|v| v[0]).collect();
        let b = sample_1d_stable(1.5, 20_000, &mut rng);
        assert!(ks_two_sample(&a, &b) < ks_critical_1pct(a.len(), b.len()));
    }

    #[test]
    fn isotropy_and_self_similarity() {
        let cfg = StableConfig::new(1.3, 2, 1.0, 9, 1.0).unwrap();
        let mut rng = stream_rng(9, 0);
        let inc = sample_isotropic_stable(&cfg, 1.0, 40_000, &mut rng);
        // directions: the angle of an isotropic vector is uniform
        let angles: Vec<f64> = inc.iter().map(|v| v[1].atan2(v[0])).collect();
        assert!(ks_one_sample(&angles, |t| (t + PI) / (2.0 * PI)) < ks_one_sample_critical_1pct(angles.len()));
        let dt = 0.01;
        let small: Vec<f64> = sample_isotropic_stable(&cfg, dt, 20_000, &mut rng)
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt() / dt.powf(1.0 / 1.3))
            .collect();
        let unit: Vec<f64> = inc[..20_000].iter().map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt()).collect();
        assert!(ks_two_sample(&small, &unit) < ks_critical_1pct(20_000, 20_000));
    }

    #[test]
    fn small_jumps_have_zero_mean_and_matched_variance() {
        let cfg = StableConfig::new(1.5, 1, 1.0, 21, 0.5).unwrap();
        let mut rng = stream_rng(21, 0);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| sample_compensated_small_jumps(&cfg, 0.01, &mut rng).unwrap()).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let want = small_jump_variance(&cfg) * 0.01;
        let m4 = x.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
        let se_var = ((m4 - var * var) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * (want / n as f64).sqrt());
        assert!((var - want).abs() < 3.0 * se_var, "{var} vs {want}");
        let bad = StableConfig::new(0.8, 1, 1.0, 1, 0.5).unwrap();
        assert!(sample_compensated_small_jumps(&bad, 0.01, &mut rng).is_err());
        assert!(gaussian_share(&cfg) < 0.1);
    }

    #[test]
    fn recomposed_jumps_reproduce_the_stable_law() {
        let cfg = StableConfig::new(1.6, 1, 1.0, 2, 0.5).unwrap();
        let mut rng = stream_rng(2, 0);
        let n = 20_000;
        let full: Vec<f64> = (0..n)
            .map(|_| {
                let big: f64 = sample_large_jumps(&cfg, 0.0, 1.0, &mut rng).iter().map(|j| j.1).sum();
                big + sample_compensated_small_jumps(&cfg, 1.0, &mut rng).unwrap()
            })
            .collect();
        let cms = sample_1d_stable(1.6, n, &mut rng);
        assert!(ks_two_sample(&full, &cms) < ks_critical_1pct(n, n));
    }

    #[test]
    fn tapes_replay_and_coarsen() {
        let cfg = StableConfig::new(1.5, 1, 1.0, 77, 0.5).unwrap();
        let a = JumpTape::generate(&cfg, 0.0, 1e-3, 1024, 4).unwrap();
        let b = JumpTape::generate(&cfg, 0.0, 1e-3, 1024, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.jump_digest(), b.jump_digest());
        let c = a.coarsen(4).unwrap();
        assert_eq!(c.jump_digest(), a.jump_digest());
        let (pa, pc) = (a.path(), c.path());
        for k in 0..c.steps() {
            assert!((pa.values[4 * k] - pc.values[k]).abs() < 1e-12);
        }
        assert!(pa.to_csv().starts_with("t,value\n"));
        let other = JumpTape::generate(&cfg, 0.0, 1e-3, 1024, 5).unwrap();
        assert_ne!(other.small, a.small);
    }
}

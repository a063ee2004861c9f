use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::lp_core::DyadicPartition;

/// Parameters of the frequency set `Θ_j^t`. `c1` bounds the transport
/// speed and the ratio `(t-s)/|Π_{s,t}|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaParams {
    pub c1: f64,
    pub t: f64,
    pub j: usize,
    pub alpha: f64,
}

fn reach(c1: f64, t: f64, alpha: f64, k: usize) -> f64 {
    let k = k as f64;
    16.0 * c1 * (2f64.powf(k) + t * 2f64.powf((1.0 + alpha) * k))
}

/// `{l >= 0 : 2^l <= 16 c1 (2^j + t 2^{(1+α)j}), 2^j <= 16 c1 (2^l + t 2^{(1+α)l})}`.
pub fn theta_set(p: &ThetaParams) -> Vec<usize> {
    let top = reach(p.c1, p.t, p.alpha, p.j).log2().floor().max(0.0) as usize;
    let lower = 2f64.powi(p.j as i32);
    (0..=top)
        .filter(|&l| 2f64.powi(l as i32) <= reach(p.c1, p.t, p.alpha, p.j) && lower <= reach(p.c1, p.t, p.alpha, l))
        .collect()
}

/// `(Σ_{l∈Θ} 2^{-βl}, Σ_{l∈Θ} 2^{βl})`.
pub fn theta_sums(p: &ThetaParams, beta: f64) -> (f64, f64) {
    theta_set(p).iter().fold((0.0, 0.0), |(a, b), &l| {
        let l = l as f64;
        (a + 2f64.powf(-beta * l), b + 2f64.powf(beta * l))
    })
}

/// Smallest integer `j0 > log2(16 c1 (2^5 + T 2^{5(1+α)}))`; for `j >= j0`
/// and `t <= T` every element of `Θ_j^t` is at least 5.
pub fn theta_j0(c1: f64, alpha: f64, horizon: f64) -> usize {
    reach(c1, horizon, alpha, 5).log2().floor() as usize + 1
}

/// Smooth random weight on the window `[-X, X] × [-V, V]`.
#[derive(Debug, Clone)]
struct RandomSmooth {
    amp: Vec<f64>,
    kx: Vec<f64>,
    kv: Vec<f64>,
    phase: Vec<f64>,
}

impl RandomSmooth {
    fn draw(rng: &mut ChaCha8Rng, x: f64, v: f64) -> Self {
        let n = 6;
        let mut s = Self { amp: vec![], kx: vec![], kv: vec![], phase: vec![] };
        for _ in 0..n {
            s.amp.push(rng.random_range(-0.5..0.5));
            s.kx.push(rng.random_range(-4.0..4.0) * PI / x);
            s.kv.push(rng.random_range(-4.0..4.0) * PI / v);
            s.phase.push(rng.random_range(0.0..2.0 * PI));
        }
        s
    }

    fn eval(&self, xi: f64, eta: f64) -> f64 {
        1.0 + (0..self.amp.len()).map(|i| self.amp[i] * (self.kx[i] * xi + self.kv[i] * eta + self.phase[i]).cos()).sum::<f64>()
    }
}

/// One draw of the normalized pairing.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OrthogonalityTrial {
    pub pairing: f64,
    pub norm_f: f64,
    pub norm_g: f64,
}

const WINDOW_POINTS: usize = 256;

fn window(alpha: f64, j: usize) -> (f64, f64) {
    let r = 2f64.powi(j as i32 + 1);
    (r.powf(1.0 + alpha), r)
}

/// Midpoint sum of `h` over the ring-`k` window.
fn window_sum<H: Fn(f64, f64) -> f64 + Sync>(alpha: f64, k: usize, h: H) -> f64 {
    let (x, v) = window(alpha, k);
    let n = WINDOW_POINTS;
    let (dx, dv) = (2.0 * x / n as f64, 2.0 * v / n as f64);
    (0..n)
        .into_par_iter()
        .map(|a| {
            let xi = -x + (a as f64 + 0.5) * dx;
            (0..n).map(|b| h(xi, -v + (b as f64 + 0.5) * dv)).sum::<f64>()
        })
        .sum::<f64>()
        * dx
        * dv
}

fn ring(alpha: f64, j: usize, xi: f64, eta: f64) -> f64 {
    DyadicPartition::ring_at(j, xi.abs().powf(1.0 / (1.0 + alpha)) + eta.abs())
}

/// `max |<R_j f, Γ R_l g>| / (||R_j f||_2 ||R_l g||_2)` over random smooth
/// spectra, evaluated through Parseval as
/// `∫ φ_j f̂ (ξ,η) · φ_l ĝ (ξ, η - Π ξ) dξ dη` on the smaller of the two
/// ring windows (the shear preserves measure).
pub fn orthogonality_trials(j: usize, l: usize, pi: f64, alpha: f64, trials: usize, seed: u64) -> Vec<OrthogonalityTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let (xj, vj) = window(alpha, j);
            let (xl, vl) = window(alpha, l);
            let f = RandomSmooth::draw(&mut rng, xj, vj);
            let g = RandomSmooth::draw(&mut rng, xl, vl);
            let pf = |xi: f64, eta: f64| ring(alpha, j, xi, eta) * f.eval(xi, eta);
            let pg = |xi: f64, eta: f64| ring(alpha, l, xi, eta) * g.eval(xi, eta);
            let pairing = if j <= l {
                window_sum(alpha, j, |xi, eta| {
                    let a = pf(xi, eta);
                    if a == 0.0 {
                        0.0
                    } else {
                        a * pg(xi, eta - pi * xi)
                    }
                })
            } else {
                window_sum(alpha, l, |xi, eta| {
                    let b = pg(xi, eta);
                    if b == 0.0 {
                        0.0
                    } else {
                        b * pf(xi, eta + pi * xi)
                    }
                })
            };
            let norm_f = window_sum(alpha, j, |xi, eta| pf(xi, eta).powi(2)).sqrt();
            let norm_g = window_sum(alpha, l, |xi, eta| pg(xi, eta).powi(2)).sqrt();
            OrthogonalityTrial { pairing: pairing.abs() / (norm_f * norm_g), norm_f, norm_g }
        })
        .collect()
}

/// Largest normalized pairing over `trials` draws.
pub fn orthogonality_check(j: usize, l: usize, pi: f64, alpha: f64, trials: usize, seed: u64) -> f64 {
    orthogonality_trials(j, l, pi, alpha, trials, seed).iter().map(|t| t.pairing).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_set_is_a_band() {
        for j in 0..12 {
            let p = ThetaParams { c1: 1.0, t: 0.0, j, alpha: 1.5 };
            let expect: Vec<usize> = (j.saturating_sub(4)..=j + 4).collect();
            assert_eq!(theta_set(&p), expect);
        }
    }

    #[test]
    fn j0_pushes_the_set_above_five() {
        let (c1, alpha, horizon) = (2.0, 1.5, 1.0);
        let j0 = theta_j0(c1, alpha, horizon);
        for j in j0..j0 + 6 {
            for t in [0.0, 0.3, 1.0] {
                let set = theta_set(&ThetaParams { c1, t, j, alpha });
                assert!(!set.is_empty() && set[0] >= 5);
            }
        }
    }

    #[test]
    fn overlapping_rings_pair_positively_and_distant_ones_vanish() {
        let same = orthogonality_trials(4, 4, 0.0, 1.0, 2, 1);
        assert!(same.iter().all(|t| t.pairing > 1e-2 && t.norm_f > 0.0));
        assert_eq!(orthogonality_check(2, 9, 0.0, 1.0, 2, 2), 0.0);
        // a large shear separates equal rings: Θ_4 at t = 1 excludes l = 4 only when the
        // transport is huge, so check the direct geometric claim instead
        assert!(orthogonality_check(3, 3, 4000.0, 1.0, 2, 3) == 0.0);
    }
}

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;

use super::WaveSum;
use crate::lp_core::{besov_norm, block_apply, DyadicPartition, Field, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommutatorOutput {
    Sup,
    /// `sup_l 2^{βl} ||R_l [R_j, f] g||_∞` over the partition's blocks.
    Holder(f64),
}

/// `[R_j, f] g = R_j(f g) - f R_j g`. Whether the block acts on all axes or
/// on `x` only is decided by the partition.
pub fn commutator_field(f: &Field, g: &Field, j: usize, part: &DyadicPartition) -> Field {
    block_apply(&f.mul(g), j, part).sub(&f.mul(&block_apply(g, j, part)))
}

pub fn commutator_norm(f: &Field, g: &Field, j: usize, part: &DyadicPartition, output: CommutatorOutput) -> f64 {
    let c = commutator_field(f, g, j, part);
    match output {
        CommutatorOutput::Sup => c.sup_norm(),
        CommutatorOutput::Holder(b) => besov_norm(&c, b, part).0,
    }
}

/// `Σ_{k=0}^{k_max} 2^{-s k} cos(2^k z_axis + φ_k)` with seeded phases; on a
/// grid over `[-π, π)` every term sits at the centre of its own block.
pub fn lacunary_field(grid: &GridSpec, axis: usize, s: f64, k_max: u32, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..=k_max).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    Field::from_fn(grid, |z| {
        phases
            .iter()
            .enumerate()
            .map(|(k, ph)| 2f64.powf(-s * k as f64) * (2f64.powi(k as i32) * z[axis] + ph).cos())
            .sum()
    })
}

fn aniso_radius(alpha: f64, k: &[f64]) -> f64 {
    k[0].abs().powf(1.0 / (1.0 + alpha)) + k[1].abs()
}

/// `∂_η φ_j` of the anisotropic ring at `(ξ, η)`; zero on `η = 0`, where the
/// one-sided derivatives cancel by the `η ↦ -η` symmetry.
pub fn ring_eta_derivative(j: usize, alpha: f64, xi: f64, eta: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    let r = aniso_radius(alpha, &[xi, eta]);
    let h = 1e-6 * 2f64.powi(j as i32);
    let d = (DyadicPartition::ring_at(j, r + h) - DyadicPartition::ring_at(j, r - h)) / (2.0 * h);
    d * eta.signum()
}

/// `m(D)(v g)` at the origin for an even multiplier with `η`-derivative `dm`:
/// `m(D)(v e^{il·z}) = (v m(l) - i ∂_η m(l)) e^{il·z}`.
fn v_weighted_at_origin<D: Fn(&[f64]) -> f64>(g: &WaveSum, dm: D) -> f64 {
    g.waves.iter().map(|w| w.amp * dm(&w.freq) * w.phase.sin()).sum()
}

/// `|[R_j, f̃] g|(0, 0)` with `f̃ = f - f(0,0) - v ∂_v f(0,0)`, exactly for
/// plane-wave sums on `(x, v)`: the `v g` term uses
/// `R_j(v cos(l·z + ψ))(0) = ∂_η φ_j(l) sin ψ`.
pub fn hq2_origin(f: &WaveSum, g: &WaveSum, j: usize, alpha: f64) -> f64 {
    assert!(f.dim == 2 && g.dim == 2, "kinetic wave sums are two-dimensional");
    let origin = [0.0, 0.0];
    let ring = |k: &[f64]| DyadicPartition::ring_at(j, aniso_radius(alpha, k));
    let f0 = f.eval(&origin);
    let fv = f.derivative(1, &origin);
    let fg = f.product(g).filtered(ring).eval(&origin);
    let g_j = g.filtered(ring).eval(&origin);
    let vg = v_weighted_at_origin(g, |k| ring_eta_derivative(j, alpha, k[0], k[1]));
    // f̃(0,0) = 0, so the commutator at the origin is R_j(f̃ g)(0,0)
    (fg - f0 * g_j - fv * vg).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_core::{build_partition, AnisotropyIndex};

    #[test]
    fn scalar_factor_commutes() {
        let g = GridSpec::uniform(1, PI, 512).unwrap();
        let p = build_partition(&AnisotropyIndex::isotropic(1), &g, 6).unwrap();
        let c = Field::from_fn(&g, |_| 2.0);
        let h = lacunary_field(&g, 0, 0.0, 6, 1);
        for j in 0..=6 {
            assert!(commutator_norm(&c, &h, j, &p, CommutatorOutput::Sup) < 1e-12);
        }
    }

    #[test]
    fn separated_spectra_commute() {
        // f at frequency 1, g at 64: f g lives at 63 and 65, all inside the
        // flat part of ring 6, so R_6 (f g) = f R_6 g and the commutator vanishes
        let g = GridSpec::uniform(1, PI, 1024).unwrap();
        let p = build_partition(&AnisotropyIndex::isotropic(1), &g, 7).unwrap();
        let f = Field::from_fn(&g, |z| (z[0] + 0.4).cos());
        let h = Field::from_fn(&g, |z| (64.0 * z[0] - 1.0).cos());
        assert!(commutator_norm(&f, &h, 6, &p, CommutatorOutput::Sup) < 1e-12);
        assert!(commutator_norm(&f, &h, 6, &p, CommutatorOutput::Holder(0.5)) < 1e-10);
    }

    #[test]
    fn lacunary_profile_is_exact() {
        let g = GridSpec::uniform(1, PI, 2048).unwrap();
        let p = build_partition(&AnisotropyIndex::isotropic(1), &g, 8).unwrap();
        let f = lacunary_field(&g, 0, 0.6, 8, 3);
        for j in 1..=8 {
            let s = block_apply(&f, j, &p).sup_norm();
            // grid sampling of the peak of cos(2^j z) costs up to (2^j π / N)² / 2
            let exact = 2f64.powf(-0.6 * j as f64);
            let sampling = 0.5 * (2f64.powi(j as i32) * PI / 2048.0).powi(2);
            assert!(s <= exact * (1.0 + 1e-12) && s >= exact * (1.0 - sampling), "{j} {s}");
        }
    }

    #[test]
    fn v_weighted_term_matches_a_differential_operator() {
        // m(ξ, η) = η² is -∂_v², and -∂_v²(v cos(a x + b v + ψ)) at 0 is 2 b sin ψ
        let mut g = WaveSum::new(2);
        g.push(1.0, vec![1.3, 0.7], 0.4);
        g.push(-0.6, vec![-2.0, 3.1], 2.2);
        let direct: f64 = g.waves.iter().map(|w| 2.0 * w.amp * w.freq[1] * w.phase.sin()).sum();
        let h = 1e-4;
        let second = |v: f64| v * g.eval(&[0.0, v]);
        let fd = -(second(h) - 2.0 * second(0.0) + second(-h)) / (h * h);
        assert!((fd - direct).abs() < 1e-6);
        assert!((v_weighted_at_origin(&g, |k| 2.0 * k[1]) - direct).abs() < 1e-14);
        let (j, alpha, xi, eta) = (5usize, 1.5, 300.0, 17.0);
        let fd = (DyadicPartition::ring_at(j, aniso_radius(alpha, &[xi, eta + 1e-4]))
            - DyadicPartition::ring_at(j, aniso_radius(alpha, &[xi, eta - 1e-4])))
            / 2e-4;
        assert!((ring_eta_derivative(j, alpha, xi, eta) - fd).abs() < 1e-6);
    }

    #[test]
    fn hq2_degenerate_cases() {
        let mut g = WaveSum::new(2);
        g.push(1.0, vec![40.0, 5.0], 0.3);
        g.push(0.5, vec![0.0, 20.0], 1.0);
        for j in 3..8 {
            assert!(hq2_origin(&WaveSum::constant(2, 3.0), &g, j, 1.0) < 1e-13);
        }
        // against g = 1 only R_j f survives: φ_j(0, 16) cos ψ = cos ψ at j = 4
        let mut f = WaveSum::new(2);
        f.push(1.0, vec![0.0, 16.0], 0.7);
        let one = WaveSum::constant(2, 1.0);
        assert!((hq2_origin(&f, &one, 4, 1.0) - 0.7f64.cos()).abs() < 1e-13);
        assert!(hq2_origin(&f, &one, 6, 1.0) < 1e-15);
    }
}

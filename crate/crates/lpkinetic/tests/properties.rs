use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lpkinetic::estimates::{theta_set, ThetaParams};
use lpkinetic::kernels::{kinetic_cf, KineticKernelSpec, StepPath};
use lpkinetic::lp_core::{besov_norm, block_apply, build_partition, AnisotropyIndex, DyadicPartition, Field, GridSpec};
use lpkinetic::picard::{jump_map_phi, JumpMapSpec, ProductKernel};
use lpkinetic::stable_sim::{sample_1d_stable, stream_rng, JumpTape, StableConfig};

fn kinetic_partition() -> DyadicPartition {
    let idx = AnisotropyIndex::kinetic(1.0, 1);
    let grid = GridSpec::new(vec![PI, PI], vec![256, 32]).unwrap();
    build_partition(&idx, &grid, 2).unwrap()
}

fn noise_field(part: &DyadicPartition, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..part.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Field::new(part.grid.clone(), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rings_sum_to_the_lowpass(r in 0.0f64..80.0, k in 0usize..6) {
        let sum: f64 = (0..=k).map(|j| DyadicPartition::ring_at(j, r)).sum();
        prop_assert!((sum - DyadicPartition::lowpass_at(k as i64, r)).abs() <= 1e-12);
        if r <= 2f64.powi(k as i32) {
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn blocks_are_symmetric(seed in any::<u64>(), j in 0usize..3) {
        let part = kinetic_partition();
        let f = noise_field(&part, seed);
        let g = noise_field(&part, seed.wrapping_add(1));
        let lhs = block_apply(&f, j, &part).inner(&g);
        let rhs = f.inner(&block_apply(&g, j, &part));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
    }

    #[test]
    fn besov_profile_interpolates(seed in any::<u64>(), s in -1.0f64..0.5, gap1 in 0.1f64..1.0, gap2 in 0.1f64..1.0) {
        let part = kinetic_partition();
        let f = noise_field(&part, seed);
        let (r, t) = (s + gap1, s + gap1 + gap2);
        let theta = (t - r) / (t - s);
        let lhs = besov_norm(&f, r, &part).0;
        let rhs = besov_norm(&f, s, &part).0.powf(theta) * besov_norm(&f, t, &part).0.powf(1.0 - theta);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn theta_set_grows_with_time(j in 0usize..12, t in 0.0f64..2.0, dt in 0.0f64..2.0, alpha in 0.5f64..2.0, c1 in 0.5f64..3.0) {
        let early = theta_set(&ThetaParams { c1, t, j, alpha });
        let late = theta_set(&ThetaParams { c1, t: t + dt, j, alpha });
        prop_assert!(early.iter().all(|l| late.contains(l)));
    }

    #[test]
    fn jump_map_is_odd_and_increasing(
        z in 0.01f64..0.99,
        dz in 0.001f64..0.01,
        x in -3.0f64..3.0,
        state_amp in -0.5f64..0.5,
        jump_amp in -0.5f64..0.5,
    ) {
        let spec = JumpMapSpec { alpha: 1.5, kernel: ProductKernel { scale: 1.2, state_amp, jump_amp } };
        let at = jump_map_phi(&spec, x, z).unwrap();
        prop_assert_eq!(jump_map_phi(&spec, x, -z).unwrap(), -at);
        prop_assert!(jump_map_phi(&spec, x, z + dz).unwrap() > at);
    }

    #[test]
    fn kinetic_cf_composes(
        xi in -20.0f64..20.0,
        eta in -20.0f64..20.0,
        r in 0.05f64..0.95,
        u2 in -2.0f64..2.0,
        k2 in 0.3f64..3.0,
    ) {
        let spec = KineticKernelSpec {
            alpha: 1.4,
            kappa: StepPath::new(vec![0.0, 0.5], vec![1.0, k2]).unwrap(),
            u: StepPath::new(vec![0.0, 0.4], vec![1.0, u2]).unwrap(),
            lambda: 0.0,
            s: 0.0,
            t: 1.0,
        };
        let head = spec.with_times(0.0, r);
        let tail = spec.with_times(r, 1.0);
        let whole = kinetic_cf(&spec, xi, eta);
        let split = kinetic_cf(&head, xi, eta) * kinetic_cf(&tail, xi, eta + head.transport() * xi);
        prop_assert!((whole - split).abs() <= 1e-8 * whole.max(1e-300) || whole < 1e-250);
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>(), stream in 0u64..1000, alpha in 0.8f64..2.0) {
        let a = sample_1d_stable(alpha, 16, &mut stream_rng(seed, stream));
        let b = sample_1d_stable(alpha, 16, &mut stream_rng(seed, stream));
        prop_assert_eq!(a, b);
        let cfg = StableConfig::new(1.5, 1, 1.0, seed, 0.25).unwrap();
        let t1 = JumpTape::generate(&cfg, 0.0, 1.0 / 16.0, 16, stream).unwrap();
        let t2 = JumpTape::generate(&cfg, 0.0, 1.0 / 16.0, 16, stream).unwrap();
        prop_assert_eq!(t1.jump_digest(), t2.jump_digest());
        prop_assert_eq!(t1.small, t2.small);
    }
}

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{block_apply, AnisotropyIndex, DyadicPartition, Field, GridSpec};
use crate::{Error, Result};

/// Per-block sup norms `s_j = max |R_j f|`, j = 0..=J.
#[derive(Debug, Clone, Serialize)]
pub struct BlockSpectrum {
    pub sup: Vec<f64>,
}

impl BlockSpectrum {
    pub fn of(f: &Field, part: &DyadicPartition) -> Self {
        Self { sup: (0..=part.j_max).map(|j| block_apply(f, j, part).sup_norm()).collect() }
    }

    pub fn weighted_max(&self, s: f64) -> f64 {
        self.sup.iter().enumerate().fold(0.0, |m, (j, v)| m.max(2f64.powf(s * j as f64) * v))
    }
}

/// `sup_j 2^{sj} ||R_j f||_inf` with the grid maximum as sup.
pub fn besov_norm(f: &Field, s: f64, part: &DyadicPartition) -> (f64, BlockSpectrum) {
    let profile = BlockSpectrum::of(f, part);
    (profile.weighted_max(s), profile)
}

/// Convert a physical displacement to whole grid cells.
pub fn displacement_cells(grid: &GridSpec, h: &[f64]) -> Result<Vec<i64>> {
    if h.len() != grid.dim() {
        return Err(Error::Dimension { expected: grid.dim(), got: h.len() });
    }
    h.iter()
        .enumerate()
        .map(|(axis, &x)| {
            let c = x / grid.spacing(axis);
            let r = c.round();
            if (c - r).abs() > 1e-9 * c.abs().max(1.0) {
                Err(Error::OffGrid { axis })
            } else {
                Ok(r as i64)
            }
        })
        .collect()
}

/// `delta_h^order f` with `delta_h f = f(.+h) - f`, periodic.
pub fn difference_op(f: &Field, h: &[f64], order: u32) -> Result<Field> {
    let cells = displacement_cells(&f.grid, h)?;
    Ok(difference_cells(f, &cells, order))
}

fn difference_cells(f: &Field, cells: &[i64], order: u32) -> Field {
    let mut out = f.clone();
    for _ in 0..order {
        out = out.roll(cells).sub(&out);
    }
    out
}

/// `f(x+h) + f(x-h) - 2 f(x)`.
pub fn symmetric_second_difference(f: &Field, h: &[f64]) -> Result<Field> {
    let cells = displacement_cells(&f.grid, h)?;
    let neg: Vec<i64> = cells.iter().map(|c| -c).collect();
    let plus = f.roll(&cells);
    let minus = f.roll(&neg);
    Ok(plus.add(&minus).sub(&f.scale(2.0)))
}

/// Displacement set used by the Zygmund seminorm: axis steps of
/// 1, 2, 4, ..., N/4 cells on every axis plus `n_random` lattice vectors
/// with components in `[-N/4, N/4]`, drawn from `seed`.
pub fn h_set(grid: &GridSpec, n_random: usize, seed: u64) -> Vec<Vec<i64>> {
    let d = grid.dim();
    let mut out = Vec::new();
    for axis in 0..d {
        let mut c = 1usize;
        while c <= grid.points[axis] / 4 {
            let mut h = vec![0i64; d];
            h[axis] = c as i64;
            out.push(h);
            c *= 2;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = out.len();
    while out.len() < base + n_random {
        let h: Vec<i64> = (0..d)
            .map(|a| {
                let q = (grid.points[a] / 4).max(1) as i64;
                rng.random_range(-q..=q)
            })
            .collect();
        if h.iter().any(|&c| c != 0) {
            out.push(h);
        }
    }
    out
}

pub const ZYGMUND_RANDOM_SHIFTS: usize = 64;
pub const ZYGMUND_SEED: u64 = 0x5eed_2d1f;

/// `||f||_inf + max_h ||delta_h^{[s]+1} f||_inf / |h|_a^s` over the default
/// displacement set.
pub fn zygmund_norm(f: &Field, s: f64, idx: &AnisotropyIndex) -> Result<f64> {
    let hs = h_set(&f.grid, ZYGMUND_RANDOM_SHIFTS, ZYGMUND_SEED);
    zygmund_norm_with(f, s, idx, &hs)
}

/// Same as [`zygmund_norm`] over an explicit displacement set (in cells).
pub fn zygmund_norm_with(f: &Field, s: f64, idx: &AnisotropyIndex, hs: &[Vec<i64>]) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::param("s", "Zygmund norm needs s > 0; use the Besov norm for s <= 0"));
    }
    if idx.dim() != f.grid.dim() {
        return Err(Error::Dimension { expected: idx.dim(), got: f.grid.dim() });
    }
    let order = s.floor() as u32 + 1;
    let groups = idx.default_axis_groups();
    let mut semi = 0.0f64;
    for h in hs {
        let phys: Vec<f64> = h.iter().enumerate().map(|(a, &c)| c as f64 * f.grid.spacing(a)).collect();
        let dist = idx.distance_mapped(&phys, &groups);
        if dist == 0.0 {
            continue;
        }
        let q = difference_cells(f, h, order).sup_norm() / dist.powf(s);
        semi = semi.max(q);
    }
    Ok(f.sup_norm() + semi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_core::build_partition;
    use std::f64::consts::PI;

    #[test]
    fn h_set_has_axis_steps_and_random_vectors() {
        let g = GridSpec::new(vec![PI, PI], vec![64, 16]).unwrap();
        let hs = h_set(&g, 64, 1);
        // 1..16 on axis 0 (5 steps), 1..4 on axis 1 (3 steps)
        assert_eq!(hs.len(), 8 + 64);
        assert_eq!(hs, h_set(&g, 64, 1));
    }

    #[test]
    fn differences_of_constants_vanish() {
        let g = GridSpec::uniform(1, PI, 32).unwrap();
        let c = Field::from_fn(&g, |_| 3.0);
        let h = [4.0 * g.spacing(0)];
        assert_eq!(difference_op(&c, &h, 2).unwrap().sup_norm(), 0.0);
        assert!(difference_op(&c, &[0.3 * g.spacing(0)], 1).is_err());
        let idx = AnisotropyIndex::isotropic(1);
        assert!((zygmund_norm(&c, 0.5, &idx).unwrap() - 3.0).abs() < 1e-15);
        assert!(zygmund_norm(&c, 0.0, &idx).is_err());
    }

    #[test]
    fn symmetric_difference_of_cosine() {
        let g = GridSpec::uniform(1, PI, 64).unwrap();
        let f = Field::from_fn(&g, |x| (5.0 * x[0]).cos());
        let h = 3.0 * g.spacing(0);
        let d2 = symmetric_second_difference(&f, &[h]).unwrap();
        for (k, v) in d2.values.iter().enumerate() {
            let x = g.coord(0, k);
            assert!((v - 2.0 * ((5.0 * h).cos() - 1.0) * (5.0 * x).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn besov_of_plane_wave() {
        let idx = AnisotropyIndex::isotropic(1);
        let g = GridSpec::uniform(1, PI, 64).unwrap();
        let p = build_partition(&idx, &g, 3).unwrap();
        let f = Field::from_fn(&g, |x| (3.0 * x[0]).cos());
        let (n, prof) = besov_norm(&f, 0.5, &p);
        let mut expect = 0.0f64;
        for j in 0..=3 {
            let m = DyadicPartition::ring_at(j, 3.0);
            assert!((prof.sup[j] - m).abs() < 1e-12);
            expect = expect.max(2f64.powf(0.5 * j as f64) * m);
        }
        assert!((n - expect).abs() < 1e-12);
        let z = Field::zeros(&g);
        assert_eq!(besov_norm(&z, 0.5, &p).0, 0.0);
    }
}

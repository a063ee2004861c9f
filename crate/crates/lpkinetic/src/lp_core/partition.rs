use super::{AnisotropyIndex, Field, GridSpec};
use crate::{Error, Result};

#[inline]
fn glue(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth transition: 1 on [0,1], 0 on [2,inf).
#[inline]
pub fn bump(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let a = glue(2.0 - r);
        a / (a + glue(r - 1.0))
    }
}

/// Dyadic rings on a grid, stored through the anisotropic radius of every
/// DFT slot; ring values are produced on demand.
#[derive(Debug, Clone)]
pub struct DyadicPartition {
    pub index: AnisotropyIndex,
    pub grid: GridSpec,
    pub axis_groups: Vec<Option<usize>>,
    pub j_max: usize,
    /// `|xi|_a` for every DFT slot.
    pub radius: Vec<f64>,
}

/// Partition with the default axis-to-group map.
pub fn build_partition(idx: &AnisotropyIndex, grid: &GridSpec, j_max: usize) -> Result<DyadicPartition> {
    if idx.dim() != grid.dim() {
        return Err(Error::Dimension { expected: idx.dim(), got: grid.dim() });
    }
    DyadicPartition::with_axis_groups(idx, grid, j_max, idx.default_axis_groups())
}

impl DyadicPartition {
    /// Axes mapped to `None` are ignored by the radius, which turns a
    /// partition of one group into a block operator acting on those axes only.
    pub fn with_axis_groups(
        idx: &AnisotropyIndex,
        grid: &GridSpec,
        j_max: usize,
        axis_groups: Vec<Option<usize>>,
    ) -> Result<Self> {
        if axis_groups.len() != grid.dim() {
            return Err(Error::Dimension { expected: grid.dim(), got: axis_groups.len() });
        }
        for (axis, g) in axis_groups.iter().enumerate() {
            if let Some(g) = g {
                let a = *idx.a.get(*g).ok_or_else(|| Error::param("axis_groups", "unknown group"))?;
                let need = 2f64.powf(a * (j_max as f64 + 1.0));
                if grid.max_wavenumber(axis) < need {
                    let pts = 2.0 * (need * grid.half_width[axis] / std::f64::consts::PI + 1.0);
                    return Err(Error::Unresolved {
                        axis,
                        needed: (pts.ceil() as usize).next_power_of_two(),
                    });
                }
            }
        }
        let d = grid.dim();
        let mut xi = vec![0.0; d];
        let radius = (0..grid.len())
            .map(|k| {
                grid.freq_of(k, &mut xi);
                idx.distance_mapped(&xi, &axis_groups)
            })
            .collect();
        Ok(Self { index: idx.clone(), grid: grid.clone(), axis_groups, j_max, radius })
    }

    /// `phi_j` as a function of the anisotropic radius.
    #[inline]
    pub fn ring_at(j: usize, r: f64) -> f64 {
        if j == 0 {
            bump(r)
        } else {
            let s = 2f64.powi(-(j as i32));
            bump(s * r) - bump(2.0 * s * r)
        }
    }

    /// `phi_0(2^{-a k} xi)` as a function of the radius.
    #[inline]
    pub fn lowpass_at(k: i64, r: f64) -> f64 {
        bump(2f64.powi(-(k as i32)) * r)
    }

    pub fn ring(&self, j: usize) -> Vec<f64> {
        self.radius.iter().map(|&r| Self::ring_at(j, r)).collect()
    }

    /// Multiplier of `S_k = sum_{j<k} R_j`.
    pub fn lowpass(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            return vec![0.0; self.radius.len()];
        }
        self.radius.iter().map(|&r| Self::lowpass_at(k as i64 - 1, r)).collect()
    }
}

/// `R_j f`.
pub fn block_apply(f: &Field, j: usize, part: &DyadicPartition) -> Field {
    assert!(j <= part.j_max + 1, "block index beyond partition");
    f.apply_multiplier(&part.ring(j))
}

/// `S_k f = sum_{j<k} R_j f`.
pub fn low_freq_cutoff(f: &Field, k: usize, part: &DyadicPartition) -> Field {
    f.apply_multiplier(&part.lowpass(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn kinetic_grid() -> (AnisotropyIndex, GridSpec, DyadicPartition) {
        let idx = AnisotropyIndex::kinetic(1.0, 1);
        let g = GridSpec::new(vec![PI, PI], vec![256, 32]).unwrap();
        let p = build_partition(&idx, &g, 2).unwrap();
        (idx, g, p)
    }

    #[test]
    fn telescoping_and_support() {
        let (_, _, p) = kinetic_grid();
        for k in 0..=p.j_max {
            for &r in &p.radius {
                let s: f64 = (0..=k).map(|j| DyadicPartition::ring_at(j, r)).sum();
                assert!((s - DyadicPartition::lowpass_at(k as i64, r)).abs() <= 1e-12);
            }
        }
        for j in 0..=p.j_max {
            for &r in &p.radius {
                let v = DyadicPartition::ring_at(j, r);
                assert!(v >= 0.0);
                if r >= 2f64.powi(j as i32 + 1) {
                    assert_eq!(v, 0.0);
                }
                if j >= 1 && r <= 2f64.powi(j as i32 - 1) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn rings_are_rescaled_copies() {
        for j in 1..6usize {
            for k in 0..200 {
                let r = 0.05 * k as f64 * 2f64.powi(j as i32);
                let scaled = 2f64.powi(-(j as i32 - 1)) * r;
                let diff = DyadicPartition::ring_at(j, r) - DyadicPartition::ring_at(1, scaled);
                assert!(diff.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn plane_wave_and_constant() {
        let (_, g, p) = kinetic_grid();
        let f = Field::from_fn(&g, |x| (9.0 * x[0] + 2.0 * x[1]).cos());
        let r = 9f64.powf(0.5) + 2.0;
        for j in 0..=p.j_max {
            let b = block_apply(&f, j, &p);
            let m = DyadicPartition::ring_at(j, r);
            for (k, v) in b.values.iter().enumerate() {
                assert!((v - m * f.values[k]).abs() < 1e-11);
            }
        }
        let c = Field::from_fn(&g, |_| 2.5);
        assert!((block_apply(&c, 0, &p).values[7] - 2.5).abs() < 1e-12);
        assert!(block_apply(&c, 2, &p).sup_norm() < 1e-12);
        assert!(low_freq_cutoff(&c, 0, &p).sup_norm() == 0.0);
    }

    #[test]
    fn unresolved_grid_is_rejected() {
        let idx = AnisotropyIndex::kinetic(1.5, 1);
        let g = GridSpec::new(vec![PI, PI], vec![64, 64]).unwrap();
        match build_partition(&idx, &g, 4) {
            Err(Error::Unresolved { axis, needed }) => {
                assert_eq!(axis, 0);
                assert!(needed > 64);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }
}

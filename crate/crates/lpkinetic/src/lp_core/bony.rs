use super::{block_apply, low_freq_cutoff, DyadicPartition, Field};

/// `f g = T_f g + T_g f + R(f, g)` on the grid.
#[derive(Debug, Clone)]
pub struct BonyParts {
    pub t_fg: Field,
    pub t_gf: Field,
    pub r_fg: Field,
    /// Grid max of `f g - (T_f g + T_g f + R(f,g))`.
    pub residual: f64,
}

fn paraproduct(f: &Field, g_blocks: &[Field], part: &DyadicPartition) -> Field {
    let mut acc = Field::zeros(&f.grid);
    for k in 2..g_blocks.len() {
        let low = low_freq_cutoff(f, k - 1, part);
        acc = acc.add(&low.mul(&g_blocks[k]));
    }
    acc
}

/// Bony decomposition with `T_f g = sum_{k>=2} S_{k-1} f R_k g` and the
/// diagonal part `sum_k sum_{|i|<=1} R_k f R_{k-i} g` (`R_{-1} = 0`), using
/// blocks `0..=J_max+1` so band-limited inputs are reproduced exactly.
pub fn bony_decompose(f: &Field, g: &Field, part: &DyadicPartition) -> BonyParts {
    let top = part.j_max + 1;
    let fb: Vec<Field> = (0..=top).map(|j| block_apply(f, j, part)).collect();
    let gb: Vec<Field> = (0..=top).map(|j| block_apply(g, j, part)).collect();
    let t_fg = paraproduct(f, &gb, part);
    let t_gf = paraproduct(g, &fb, part);
    let mut r_fg = Field::zeros(&f.grid);
    for k in 0..=top {
        for i in -1i64..=1 {
            let l = k as i64 - i;
            if l < 0 || l > top as i64 {
                continue;
            }
            r_fg = r_fg.add(&fb[k].mul(&gb[l as usize]));
        }
    }
    let sum = t_fg.add(&t_gf).add(&r_fg);
    let residual = f.mul(g).sub(&sum).sup_norm();
    BonyParts { t_fg, t_gf, r_fg, residual }
}

/// `||R_j (S_{k-1} f R_k g)||_inf`.
pub fn paraproduct_block_leak(f: &Field, g: &Field, j: usize, k: usize, part: &DyadicPartition) -> f64 {
    let low = low_freq_cutoff(f, k.saturating_sub(1), part);
    let prod = low.mul(&block_apply(g, k, part));
    block_apply(&prod, j, part).sup_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_core::{build_partition, AnisotropyIndex, GridSpec};
    use std::f64::consts::PI;

    #[test]
    fn constant_factor_degenerates() {
        let idx = AnisotropyIndex::isotropic(1);
        let g = GridSpec::uniform(1, PI, 128).unwrap();
        let p = build_partition(&idx, &g, 4).unwrap();
        let c = Field::from_fn(&g, |_| 1.5);
        let h = Field::from_fn(&g, |x| (7.0 * x[0]).sin() + 0.3 * (2.0 * x[0]).cos());
        let parts = bony_decompose(&c, &h, &p);
        assert!(parts.residual < 1e-10);
        let expect = h.sub(&block_apply(&h, 0, &p)).sub(&block_apply(&h, 1, &p)).scale(1.5);
        assert!(parts.t_fg.sub(&expect).sup_norm() < 1e-10);
    }

    #[test]
    fn single_wave_identity() {
        let idx = AnisotropyIndex::kinetic(1.0, 1);
        let g = GridSpec::new(vec![PI, PI], vec![256, 32]).unwrap();
        let p = build_partition(&idx, &g, 2).unwrap();
        let f = Field::from_fn(&g, |x| (11.0 * x[0] - 3.0 * x[1]).cos());
        let parts = bony_decompose(&f, &f, &p);
        assert!(parts.residual < 1e-10);
    }
}

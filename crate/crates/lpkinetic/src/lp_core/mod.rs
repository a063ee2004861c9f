//! Anisotropic Littlewood-Paley decomposition on periodic grids.
//!
//! Fields live on a torus `[-L_k, L_k)` per axis with `N_k` points (a power
//! of two). Transforms use the plain DFT; multipliers, block norms and every
//! verified identity are insensitive to the normalization constant.

mod bony;
mod norms;
mod partition;

pub use bony::{bony_decompose, paraproduct_block_leak, BonyParts};
pub use norms::{
    besov_norm, difference_op, displacement_cells, h_set, symmetric_second_difference,
    zygmund_norm, zygmund_norm_with, BlockSpectrum,
};
pub use partition::{block_apply, bump, build_partition, low_freq_cutoff, DyadicPartition};

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Scaling vector `a` with group dimensions `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnisotropyIndex {
    pub m: Vec<usize>,
    pub a: Vec<f64>,
}

impl AnisotropyIndex {
    pub fn new(m: Vec<usize>, a: Vec<f64>) -> Result<Self> {
        if m.len() != a.len() || m.is_empty() {
            return Err(Error::param("a", "group sizes and exponents must have equal, nonzero length"));
        }
        if m.iter().any(|&k| k == 0) {
            return Err(Error::param("m", "group dimensions must be positive"));
        }
        if a.iter().any(|&x| !(x >= 1.0) || !x.is_finite()) {
            return Err(Error::param("a", "scaling exponents must be >= 1"));
        }
        Ok(Self { m, a })
    }

    pub fn isotropic(d: usize) -> Self {
        Self { m: vec![d], a: vec![1.0] }
    }

    /// Position/velocity scaling `(1+alpha, 1)` with `d` components per group.
    pub fn kinetic(alpha: f64, d: usize) -> Self {
        Self { m: vec![d, d], a: vec![1.0 + alpha, 1.0] }
    }

    pub fn groups(&self) -> usize {
        self.m.len()
    }

    pub fn dim(&self) -> usize {
        self.m.iter().sum()
    }

    /// Default axis map: consecutive axes fill the groups in order.
    pub fn default_axis_groups(&self) -> Vec<Option<usize>> {
        self.m.iter().enumerate().flat_map(|(g, &k)| std::iter::repeat(Some(g)).take(k)).collect()
    }

    /// `sum_i |x_i|^{1/a_i}` with `|x_i|` the Euclidean norm over axes in group i.
    pub fn distance_mapped(&self, x: &[f64], axis_groups: &[Option<usize>]) -> f64 {
        let mut sq = [0.0f64; 8];
        let mut sq_vec;
        let acc: &mut [f64] = if self.groups() <= 8 {
            &mut sq[..self.groups()]
        } else {
            sq_vec = vec![0.0; self.groups()];
            &mut sq_vec
        };
        for (xi, g) in x.iter().zip(axis_groups) {
            if let Some(g) = g {
                acc[*g] += xi * xi;
            }
        }
        acc.iter().zip(&self.a).map(|(s, a)| s.sqrt().powf(1.0 / a)).sum()
    }
}

/// `|x|_a = sum_i |x_i|^{1/a_i}`.
pub fn anisotropic_distance(x: &[f64], idx: &AnisotropyIndex) -> Result<f64> {
    if x.len() != idx.dim() {
        return Err(Error::Dimension { expected: idx.dim(), got: x.len() });
    }
    Ok(idx.distance_mapped(x, &idx.default_axis_groups()))
}

/// Periodic tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub half_width: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn new(half_width: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if half_width.len() != points.len() || points.is_empty() {
            return Err(Error::param("points", "one half-width and point count per axis"));
        }
        for (k, (&l, &n)) in half_width.iter().zip(&points).enumerate() {
            if !(l > 0.0) {
                return Err(Error::param("half_width", format!("axis {k} must be positive")));
            }
            if n < 2 || !n.is_power_of_two() {
                return Err(Error::param("points", format!("axis {k} needs a power of two >= 2")));
            }
        }
        Ok(Self { half_width, points })
    }

    pub fn uniform(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        Self::new(vec![half_width; dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_width[axis] / self.points[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        -self.half_width[axis] + i as f64 * self.spacing(axis)
    }

    /// Signed integer frequency of DFT index `i`.
    pub fn wave_index(&self, axis: usize, i: usize) -> i64 {
        let n = self.points[axis];
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Angular frequency of DFT index `i`.
    pub fn wavenumber(&self, axis: usize, i: usize) -> f64 {
        std::f64::consts::PI * self.wave_index(axis, i) as f64 / self.half_width[axis]
    }

    /// Largest positive frequency represented on `axis`.
    pub fn max_wavenumber(&self, axis: usize) -> f64 {
        std::f64::consts::PI * (self.points[axis] / 2 - 1) as f64 / self.half_width[axis]
    }

    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.points[k];
            flat /= self.points[k];
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.points).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Physical coordinates of every grid point, flattened per point.
    pub fn coords_of(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0usize; self.dim()];
        self.unravel(flat, &mut idx);
        for k in 0..self.dim() {
            out[k] = self.coord(k, idx[k]);
        }
    }

    /// Frequency vector of DFT slot `flat`.
    pub fn freq_of(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0usize; self.dim()];
        self.unravel(flat, &mut idx);
        for k in 0..self.dim() {
            out[k] = self.wavenumber(k, idx[k]);
        }
    }

    /// Wavenumber along `axis` for every DFT slot (row-major order).
    pub fn slot_wavenumbers(&self, axis: usize) -> Vec<f64> {
        let n = self.points[axis];
        let stride: usize = self.points[axis + 1..].iter().product();
        let line: Vec<f64> = (0..n).map(|i| self.wavenumber(axis, i)).collect();
        (0..self.len()).map(|k| line[(k / stride) % n]).collect()
    }

    /// Frequency vectors for all DFT slots, axis-major within each slot.
    pub fn frequencies(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (flat, chunk) in out.chunks_mut(d).enumerate() {
            self.freq_of(flat, chunk);
        }
        out
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)>> =
        OnceLock::new();
    let cell = PLANS.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cell.lock().expect("fft plan registry poisoned");
    let (planner, map) = &mut *guard;
    map.entry((n, inverse))
        .or_insert_with(|| if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) })
        .clone()
}

/// In-place n-d DFT over all axes of a row-major array. The inverse is
/// normalized by the number of points.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    assert_eq!(data.len(), total);
    let d = shape.len();
    for ax in 0..d {
        let n = shape[ax];
        let stride: usize = shape[ax + 1..].iter().product();
        let outer: usize = shape[..ax].iter().product();
        let fft = plan(n, inverse);
        if stride == 1 {
            fft.process(data);
            continue;
        }
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (k, c) in line.iter_mut().enumerate() {
                    *c = data[base + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (k, c) in line.iter().enumerate() {
                    data[base + k * stride] = *c;
                }
            }
        }
    }
    if inverse {
        let s = 1.0 / total as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }
}

/// DFT along one axis only.
pub fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let fft = plan(n, inverse);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for (k, c) in line.iter_mut().enumerate() {
                *c = data[base + k * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (k, c) in line.iter().enumerate() {
                data[base + k * stride] = *c * scale;
            }
        }
    }
}

/// A real sampled function on a periodic grid.
#[derive(Debug, Clone)]
pub struct Field {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    spectrum: OnceLock<Arc<Vec<Complex64>>>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("field values must be finite".into()));
        }
        Ok(Self { grid, values, spectrum: OnceLock::new() })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()], spectrum: OnceLock::new() }
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &GridSpec, f: F) -> Self {
        let d = grid.dim();
        let mut x = vec![0.0; d];
        let values = (0..grid.len())
            .map(|k| {
                grid.coords_of(k, &mut x);
                f(&x)
            })
            .collect();
        Self { grid: grid.clone(), values, spectrum: OnceLock::new() }
    }

    fn from_values(grid: &GridSpec, values: Vec<f64>) -> Self {
        Self { grid: grid.clone(), values, spectrum: OnceLock::new() }
    }

    /// Unnormalized DFT, cached after the first call.
    pub fn spectrum(&self) -> Arc<Vec<Complex64>> {
        self.spectrum
            .get_or_init(|| {
                let mut data: Vec<Complex64> =
                    self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft_nd(&mut data, &self.grid.points, false);
                Arc::new(data)
            })
            .clone()
    }

    /// Real part of the inverse DFT of `spec`.
    pub fn from_spectrum(grid: &GridSpec, mut spec: Vec<Complex64>) -> Self {
        fft_nd(&mut spec, &grid.points, true);
        Self::from_values(grid, spec.iter().map(|c| c.re).collect())
    }

    /// Apply a real multiplier given per DFT slot.
    pub fn apply_multiplier(&self, m: &[f64]) -> Field {
        let s = self.spectrum();
        let spec: Vec<Complex64> = s.iter().zip(m).map(|(c, &w)| c * w).collect();
        Field::from_spectrum(&self.grid, spec)
    }

    /// Apply a complex multiplier evaluated at each frequency vector.
    pub fn map_spectrum<F: Fn(&[f64]) -> Complex64>(&self, m: F) -> Field {
        let s = self.spectrum();
        let d = self.grid.dim();
        let mut xi = vec![0.0; d];
        let spec: Vec<Complex64> = s
            .iter()
            .enumerate()
            .map(|(k, c)| {
                self.grid.freq_of(k, &mut xi);
                c * m(&xi)
            })
            .collect();
        Field::from_spectrum(&self.grid, spec)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Riemann sum of `f g` over the torus.
    pub fn inner(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &Field, f: F) -> Field {
        assert_eq!(self.grid, other.grid, "fields on different grids");
        Field::from_values(&self.grid, self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field::from_values(&self.grid, self.values.iter().map(|&a| f(a)).collect())
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|a| a * s)
    }

    /// Spectral partial derivative along `axis` of the given order.
    pub fn derivative(&self, axis: usize, order: u32) -> Field {
        if order == 0 {
            return self.clone();
        }
        let n = self.grid.points[axis];
        self.map_spectrum(|xi| {
            // the Nyquist mode has no well-defined odd derivative
            let k = xi[axis];
            let nyq = std::f64::consts::PI * (n / 2) as f64 / self.grid.half_width[axis];
            if order % 2 == 1 && (k.abs() - nyq).abs() < 1e-9 * nyq {
                return Complex64::new(0.0, 0.0);
            }
            Complex64::new(0.0, k).powu(order)
        })
    }

    /// Periodic shift `f(x + cells * h)` by whole cells.
    pub fn roll(&self, cells: &[i64]) -> Field {
        let g = &self.grid;
        let d = g.dim();
        let mut idx = vec![0usize; d];
        let mut src = vec![0usize; d];
        let values = (0..g.len())
            .map(|k| {
                g.unravel(k, &mut idx);
                for a in 0..d {
                    let n = g.points[a] as i64;
                    src[a] = (idx[a] as i64 + cells[a]).rem_euclid(n) as usize;
                }
                self.values[g.ravel(&src)]
            })
            .collect();
        Field::from_values(g, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        let idx = AnisotropyIndex::new(vec![1, 1], vec![2.0, 1.0]).unwrap();
        assert_eq!(anisotropic_distance(&[4.0, 3.0], &idx).unwrap(), 5.0);
        assert_eq!(anisotropic_distance(&[0.0, 0.0], &idx).unwrap(), 0.0);
        let t = 2.0f64;
        let scaled = anisotropic_distance(&[t.powf(2.0), t], &idx).unwrap();
        assert!((scaled - t * anisotropic_distance(&[1.0, 1.0], &idx).unwrap()).abs() < 1e-15);
        assert!(anisotropic_distance(&[1.0], &idx).is_err());
    }

    #[test]
    fn fft_round_trip_2d() {
        let g = GridSpec::new(vec![1.0, 2.0], vec![8, 16]).unwrap();
        let f = Field::from_fn(&g, |x| (x[0] * 3.0).sin() + x[1] * x[1]);
        let back = Field::from_spectrum(&g, f.spectrum().to_vec());
        for (a, b) in f.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_derivative_of_plane_wave() {
        let g = GridSpec::uniform(1, std::f64::consts::PI, 32).unwrap();
        let f = Field::from_fn(&g, |x| (3.0 * x[0]).sin());
        let df = f.derivative(0, 1);
        for (k, v) in df.values.iter().enumerate() {
            let x = g.coord(0, k);
            assert!((v - 3.0 * (3.0 * x).cos()).abs() < 1e-11);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(GridSpec::new(vec![1.0], vec![12]).is_err());
    }
}

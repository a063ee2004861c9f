use rayon::prelude::*;

use crate::lp_core::{Field, GridSpec};

/// `amp · cos(freq·z + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Wave {
    pub amp: f64,
    pub freq: Vec<f64>,
    pub phase: f64,
}

impl Wave {
    pub fn new(amp: f64, freq: Vec<f64>, phase: f64) -> Self {
        Self { amp, freq, phase }
    }

    #[inline]
    fn arg(&self, z: &[f64]) -> f64 {
        self.freq.iter().zip(z).map(|(k, x)| k * x).sum::<f64>() + self.phase
    }
}

/// Finite real trigonometric sum on `R^d`. Frequencies are arbitrary reals,
/// so Fourier multipliers act exactly and nothing is periodized.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveSum {
    pub dim: usize,
    pub waves: Vec<Wave>,
}

impl WaveSum {
    pub fn new(dim: usize) -> Self {
        Self { dim, waves: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self { dim, waves: vec![Wave::new(c, vec![0.0; dim], 0.0)] }
    }

    pub fn push(&mut self, amp: f64, freq: Vec<f64>, phase: f64) {
        assert_eq!(freq.len(), self.dim, "wave dimension");
        self.waves.push(Wave::new(amp, freq, phase));
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.waves.iter().map(|w| w.amp * w.arg(z).cos()).sum()
    }

    /// `∂_axis` at `z`.
    pub fn derivative(&self, axis: usize, z: &[f64]) -> f64 {
        self.waves.iter().map(|w| -w.amp * w.freq[axis] * w.arg(z).sin()).sum()
    }

    /// Apply an even real multiplier `m(k) = m(-k)`; zero-weight waves are dropped.
    pub fn filtered<M: Fn(&[f64]) -> f64>(&self, m: M) -> WaveSum {
        let waves = self
            .waves
            .iter()
            .filter_map(|w| {
                let s = m(&w.freq);
                (s != 0.0).then(|| Wave { amp: w.amp * s, ..w.clone() })
            })
            .collect();
        WaveSum { dim: self.dim, waves }
    }

    pub fn add(&self, other: &WaveSum) -> WaveSum {
        assert_eq!(self.dim, other.dim, "wave dimension");
        let mut waves = self.waves.clone();
        waves.extend(other.waves.iter().cloned());
        WaveSum { dim: self.dim, waves }
    }

    pub fn scale(&self, s: f64) -> WaveSum {
        let waves = self.waves.iter().map(|w| Wave { amp: w.amp * s, ..w.clone() }).collect();
        WaveSum { dim: self.dim, waves }
    }

    /// Product through `cos a cos b = (cos(a+b) + cos(a-b)) / 2`.
    pub fn product(&self, other: &WaveSum) -> WaveSum {
        assert_eq!(self.dim, other.dim, "wave dimension");
        let mut waves = Vec::with_capacity(2 * self.len() * other.len());
        for a in &self.waves {
            for b in &other.waves {
                let amp = 0.5 * a.amp * b.amp;
                let plus = a.freq.iter().zip(&b.freq).map(|(x, y)| x + y).collect();
                let minus = a.freq.iter().zip(&b.freq).map(|(x, y)| x - y).collect();
                waves.push(Wave::new(amp, plus, a.phase + b.phase));
                waves.push(Wave::new(amp, minus, a.phase - b.phase));
            }
        }
        WaveSum { dim: self.dim, waves }
    }

    /// Maximum of `|self|` over a point set.
    pub fn sup_over(&self, points: &[Vec<f64>]) -> f64 {
        points.par_iter().map(|z| self.eval(z).abs()).reduce(|| 0.0, f64::max)
    }

    pub fn to_field(&self, grid: &GridSpec) -> Field {
        Field::from_fn(grid, |z| self.eval(z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_filter_match_pointwise() {
        let mut a = WaveSum::new(2);
        a.push(1.5, vec![2.0, -1.0], 0.3);
        a.push(-0.5, vec![0.0, 3.0], 1.1);
        let mut b = WaveSum::new(2);
        b.push(2.0, vec![1.0, 1.0], -0.7);
        let ab = a.product(&b);
        for z in [[0.1, 0.2], [-1.3, 2.2], [3.0, -0.4]] {
            assert!((ab.eval(&z) - a.eval(&z) * b.eval(&z)).abs() < 1e-13);
            let h = 1e-6;
            let fd = (a.eval(&[z[0] + h, z[1]]) - a.eval(&[z[0] - h, z[1]])) / (2.0 * h);
            assert!((fd - a.derivative(0, &z)).abs() < 1e-7);
        }
        let low = a.filtered(|k| if k[0] == 0.0 { 1.0 } else { 0.0 });
        assert_eq!(low.len(), 1);
        assert!((low.eval(&[0.0, 0.0]) + 0.5 * 1.1f64.cos()).abs() < 1e-15);
    }
}

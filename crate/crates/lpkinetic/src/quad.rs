//! Quadrature and interpolation helpers shared by the numerical modules.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GlRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Cached Gauss-Legendre rule with `n` nodes.
pub fn gl(n: usize) -> Arc<GlRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GlRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    map.entry(n)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
            let (nodes, weights) = rule.as_node_weight_pairs().iter().copied().unzip();
            Arc::new(GlRule { nodes, weights })
        })
        .clone()
}

impl GlRule {
    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Composite Gauss-Legendre over consecutive breakpoints.
pub fn integrate_panels<F: FnMut(f64) -> f64>(breaks: &[f64], n: usize, mut f: F) -> f64 {
    let rule = gl(n);
    breaks.windows(2).map(|p| rule.integrate(p[0], p[1], &mut f)).sum()
}

/// All (node, weight) pairs of a composite rule.
pub fn panel_nodes(breaks: &[f64], n: usize) -> Vec<(f64, f64)> {
    let rule = gl(n);
    breaks.windows(2).flat_map(|p| rule.mapped(p[0], p[1]).collect::<Vec<_>>()).collect()
}

/// Geometric breakpoints from `a` to `b` (both > 0) with about `per_octave`
/// panels per factor of two.
pub fn log_breaks(a: f64, b: f64, per_octave: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a);
    let octaves = (b / a).log2();
    let n = ((octaves * per_octave as f64).ceil() as usize).max(1);
    let r = (b / a).powf(1.0 / n as f64);
    let mut out: Vec<f64> = (0..=n).map(|k| a * r.powi(k as i32)).collect();
    out[n] = b;
    out
}

/// Uniform breakpoints with panel width at most `h`.
pub fn uniform_breaks(a: f64, b: f64, h: f64) -> Vec<f64> {
    let n = (((b - a) / h).ceil() as usize).max(1);
    (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
}

/// Adaptive Simpson with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Cubic (Catmull-Rom) interpolation of samples on a uniform grid
/// `x0 + k*dx`. Outside the table the end values are held.
#[derive(Debug, Clone)]
pub struct UniformCubic {
    pub x0: f64,
    pub dx: f64,
    pub y: Vec<f64>,
}

impl UniformCubic {
    pub fn new(x0: f64, dx: f64, y: Vec<f64>) -> Self {
        assert!(y.len() >= 4 && dx > 0.0);
        Self { x0, dx, y }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let s = (x - self.x0) / self.dx;
        if s <= 0.0 {
            return self.y[0];
        }
        if s >= (n - 1) as f64 {
            return self.y[n - 1];
        }
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        let y1 = self.y[i];
        let y2 = self.y[i + 1];
        let y0 = if i == 0 { 2.0 * y1 - y2 } else { self.y[i - 1] };
        let y3 = if i + 2 >= n { 2.0 * y2 - y1 } else { self.y[i + 2] };
        catmull_rom(y0, y1, y2, y3, t)
    }
}

#[inline]
pub fn catmull_rom(y0: f64, y1: f64, y2: f64, y3: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * (2.0 * y1
        + (-y0 + y2) * t
        + (2.0 * y0 - 5.0 * y1 + 4.0 * y2 - y3) * t2
        + (-y0 + 3.0 * y1 - 3.0 * y2 + y3) * t3)
}

/// Bicubic Catmull-Rom interpolation on a uniform 2-d table, zero outside.
#[derive(Debug, Clone)]
pub struct UniformBicubic {
    pub origin: [f64; 2],
    pub step: [f64; 2],
    pub shape: [usize; 2],
    /// Row-major, second axis fastest.
    pub values: Vec<f64>,
}

impl UniformBicubic {
    pub fn new(origin: [f64; 2], step: [f64; 2], shape: [usize; 2], values: Vec<f64>) -> Self {
        assert_eq!(values.len(), shape[0] * shape[1]);
        assert!(shape[0] >= 2 && shape[1] >= 2);
        Self { origin, step, shape, values }
    }

    fn at(&self, i: isize, j: isize) -> f64 {
        // linear extension across the border keeps the stencil defined
        let (n0, n1) = (self.shape[0] as isize, self.shape[1] as isize);
        let ci = i.clamp(0, n0 - 1);
        let cj = j.clamp(0, n1 - 1);
        let base = self.values[(ci * n1 + cj) as usize];
        if ci == i && cj == j {
            return base;
        }
        let di = if i < 0 {
            base - self.values[(((ci + 1).min(n0 - 1)) * n1 + cj) as usize]
        } else if i >= n0 {
            base - self.values[(((ci - 1).max(0)) * n1 + cj) as usize]
        } else {
            0.0
        };
        let dj = if j < 0 {
            base - self.values[(ci * n1 + (cj + 1).min(n1 - 1)) as usize]
        } else if j >= n1 {
            base - self.values[(ci * n1 + (cj - 1).max(0)) as usize]
        } else {
            0.0
        };
        base + di + dj
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let s0 = (x - self.origin[0]) / self.step[0];
        let s1 = (y - self.origin[1]) / self.step[1];
        let (n0, n1) = (self.shape[0] as f64, self.shape[1] as f64);
        if s0 < 0.0 || s1 < 0.0 || s0 > n0 - 1.0 || s1 > n1 - 1.0 {
            return 0.0;
        }
        let i = (s0.floor() as isize).min(self.shape[0] as isize - 2);
        let j = (s1.floor() as isize).min(self.shape[1] as isize - 2);
        let t0 = s0 - i as f64;
        let t1 = s1 - j as f64;
        let mut col = [0.0; 4];
        for (k, c) in col.iter_mut().enumerate() {
            let ii = i - 1 + k as isize;
            *c = catmull_rom(
                self.at(ii, j - 1),
                self.at(ii, j),
                self.at(ii, j + 1),
                self.at(ii, j + 2),
                t1,
            );
        }
        catmull_rom(col[0], col[1], col[2], col[3], t0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        let r = gl(5);
        let v = r.integrate(0.0, 2.0, |x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn simpson_handles_kink() {
        let f = |x: f64| (x - 0.3).abs().powf(1.5);
        let exact = (0.3f64.powf(2.5) + 0.7f64.powf(2.5)) / 2.5;
        let v = adaptive_simpson(&f, 0.0, 1.0, 1e-12, 50);
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn cubic_reproduces_quadratics() {
        let y: Vec<f64> = (0..20).map(|k| (k as f64 * 0.1).powi(2)).collect();
        let c = UniformCubic::new(0.0, 0.1, y);
        assert!((c.eval(0.55) - 0.3025).abs() < 1e-12);
    }

    #[test]
    fn bicubic_reproduces_bilinear_data() {
        let shape = [6, 7];
        let mut v = Vec::new();
        for i in 0..6 {
            for j in 0..7 {
                v.push(1.0 + 2.0 * i as f64 * 0.5 - 0.5 * j as f64 * 0.25);
            }
        }
        let b = UniformBicubic::new([0.0, 0.0], [0.5, 0.25], shape, v);
        assert!((b.eval(1.3, 0.8) - (1.0 + 2.0 * 1.3 - 0.5 * 0.8)).abs() < 1e-12);
        assert_eq!(b.eval(-1.0, 0.0), 0.0);
    }
}

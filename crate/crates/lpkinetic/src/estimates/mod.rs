//! Rate measurements: block integrals of kernels, commutator decay, the
//! `Θ` frequency sets, and exact plane-wave solutions of the model equation.

mod blocks;
mod commutator;
mod duhamel;
mod theta;
mod waves;

pub use blocks::{
    heat_block_inner, heat_block_integral, heat_block_integrals, kinetic_block_integral, kinetic_block_integrals,
    moment_scaling, nb3_gap, rescale_path, BlockIntegral, BlockMode, HeatBlockConfig, KineticBlockConfig,
    MomentWeights,
};
pub use commutator::{
    commutator_field, commutator_norm, hq2_origin, lacunary_field, ring_eta_derivative, CommutatorOutput,
};
pub use duhamel::{
    duhamel_solve, evaluation_points, lacunary_source, max_principle_bound, periodic_sup, random_band_limited,
    schauder_report, DuhamelConfig, DuhamelSolution, SchauderReport,
};
pub use theta::{orthogonality_check, orthogonality_trials, theta_j0, theta_set, theta_sums, OrthogonalityTrial, ThetaParams};
pub use waves::{Wave, WaveSum};

use serde::Serialize;

use crate::{Error, Result};

/// Claims only pass when every sample sits within this distance (log2
/// units) of the fitted line.
pub const MAX_FIT_RESIDUAL: f64 = 0.3;

/// Least-squares line through `(x, log2 value)`.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub j_min: f64,
    pub j_max: f64,
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

impl SlopeFit {
    /// Fit `log2 values[i]` against `xs[i]`; every value must be positive.
    pub fn fit(xs: &[f64], values: &[f64]) -> Result<Self> {
        if xs.len() != values.len() {
            return Err(Error::Dimension { expected: xs.len(), got: values.len() });
        }
        if xs.len() < 2 {
            return Err(Error::param("xs", "a slope needs at least two samples"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Numerical(format!("cannot take log2 of {v}")));
        }
        let samples: Vec<(f64, f64)> = xs.iter().zip(values).map(|(&x, &v)| (x, v.log2())).collect();
        Self::fit_log2(samples)
    }

    pub fn fit_log2(samples: Vec<(f64, f64)>) -> Result<Self> {
        let n = samples.len() as f64;
        let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
        let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::param("xs", "all abscissae coincide"));
        }
        let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let max_residual = samples.iter().map(|s| (s.1 - intercept - slope * s.0).abs()).fold(0.0, f64::max);
        let j_min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let j_max = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { j_min, j_max, samples, slope, intercept, max_residual })
    }

    pub fn residual_ok(&self) -> bool {
        self.max_residual <= MAX_FIT_RESIDUAL
    }

    /// `|slope - target| <= tol` with acceptable residuals.
    pub fn matches(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol && self.residual_ok()
    }

    /// `slope <= bound` with acceptable residuals.
    pub fn at_most(&self, bound: f64) -> bool {
        self.slope <= bound && self.residual_ok()
    }

    /// `max/min` of `2^{log2 v - exponent x}`: the spread of the constant in
    /// `v <= C 2^{exponent x}` over the fitted samples.
    pub fn constant_spread(&self, exponent: f64) -> f64 {
        let cs: Vec<f64> = self.samples.iter().map(|s| s.1 - exponent * s.0).collect();
        let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
        2f64.powf(hi - lo)
    }

    /// Largest `2^{log2 v - exponent x}`.
    pub fn constant(&self, exponent: f64) -> f64 {
        self.samples.iter().map(|s| 2f64.powf(s.1 - exponent * s.0)).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let xs: Vec<f64> = (2..7).map(f64::from).collect();
        let vs: Vec<f64> = xs.iter().map(|j| 3.0 * 2f64.powf(-2.5 * j)).collect();
        let fit = SlopeFit::fit(&xs, &vs).unwrap();
        assert!((fit.slope + 2.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.log2()).abs() < 1e-12);
        assert!(fit.max_residual < 1e-12);
        assert!(fit.matches(-2.5, 1e-9));
        assert!(fit.at_most(-2.4) && !fit.at_most(-2.6));
        assert!((fit.constant_spread(-2.5) - 1.0).abs() < 1e-12);
        assert!((fit.constant(-2.5) - 3.0).abs() < 1e-12);
        assert_eq!((fit.j_min, fit.j_max), (2.0, 6.0));
    }

    #[test]
    fn residuals_are_reported() {
        let fit = SlopeFit::fit(&[0.0, 1.0, 2.0], &[1.0, 2.0, 1.0]).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!((fit.max_residual - 2.0 / 3.0).abs() < 1e-12);
        assert!(!fit.residual_ok());
        assert!(SlopeFit::fit(&[0.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(SlopeFit::fit(&[1.0], &[1.0]).is_err());
    }
}

//! Monte Carlo experiments: stable samplers, the kinetic SDE flow, the
//! random transport equation and the Picard scheme for the jump-map
//! equation.

use rayon::prelude::*;
use statrs::distribution::{Cauchy, ContinuousCDF, Normal};

use super::config::{key, Kind};
use super::{seed_key, Experiment, KeySpec, Outcome, Params, Table};
use crate::picard::{
    change_of_variables_battery, closed_form_gap, jump_map_phi, picard_solve, JumpMapSpec, PicardConfig,
    ProductKernel, Source,
};
use crate::sde_flow::{
    flow_composition_check, flow_jacobian, simulate_sde, solve_transport, transport_residual, uniqueness_study,
    Datum, Drift, ScalarDrift, SdeConfig, Sigma, TransportProblem,
};
use crate::estimates::SlopeFit;
use crate::stable_sim::{empirical_cf_fit, ks_one_sample, ks_one_sample_critical_1pct, sample_1d_stable, stream_rng, JumpTape, StableConfig};
use crate::{Error, Result};

pub(super) fn experiments() -> Vec<Experiment> {
    vec![
        Experiment {
            id: "stable-laws",
            description: "Chambers-Mallows-Stuck samples against their characteristic function and the classical limits",
            claim: "-log|E e^{i xi X}| = |xi|^alpha; alpha = 2 is N(0, 2) and alpha = 1 is standard Cauchy",
            parallel: true,
            keys: STABLE_KEYS,
            run: stable_laws,
        },
        Experiment {
            id: "sde-uniqueness",
            description: "pathwise behaviour of the kinetic SDE with Holder drift",
            claim: "the flow composes, has the free-transport Jacobian without drift, and Euler gaps shrink under refinement",
            parallel: true,
            keys: SDE_KEYS,
            run: sde_uniqueness,
        },
        Experiment {
            id: "transport-residual",
            description: "characteristics of the transport equation driven by a stable path",
            claim: "u = phi(Y^{-1}) solves the equation, matches the closed form without drift and keeps the range of phi",
            parallel: true,
            keys: TRANSPORT_KEYS,
            run: transport,
        },
        Experiment {
            id: "picard-contraction",
            description: "jump-map change of variables and Picard iteration for the nonlocal equation",
            claim: "the jump map turns the kernel into the reference measure and the Picard map contracts",
            parallel: true,
            keys: PICARD_KEYS,
            run: picard,
        },
    ]
}

const STABLE_KEYS: &[KeySpec] = &[
    key("alphas", Kind::FloatList, "1.2,1.5,1.8", "1.2,1.5,1.8", "indices for the characteristic-function fit"),
    key("samples", Kind::Int, "100000", "200000", "draws per law"),
    key("freqs", Kind::FloatList, "0.3,0.5,0.7,1,1.5", "0.3,0.5,0.7,1,1.5", "fit frequencies"),
    key("tolerance", Kind::Float, "0.05", "0.05", "allowed |fitted index - alpha|"),
    seed_key("23"),
];

fn stable_laws(p: &Params) -> Result<Outcome> {
    let n = p.usize("samples");
    let seed = p.u64("seed");
    let freqs = p.f64_list("freqs");
    let tol = p.f64("tolerance");
    let alphas = p.f64_list("alphas");
    let fits: Vec<(f64, f64)> = alphas
        .par_iter()
        .enumerate()
        .map(|(i, &a)| empirical_cf_fit(&sample_1d_stable(a, n, &mut stream_rng(seed, i as u64)), &freqs))
        .collect();
    let mut out = Outcome::default();
    let mut table = Table::new("cf_fits", &["alpha", "fitted_index", "fitted_log_scale"]);
    for (a, (slope, icpt)) in alphas.iter().zip(&fits) {
        table.push(vec![*a, *slope, *icpt]);
        out.check(format!("fitted index alpha={a}"), *slope, format!("within {tol} of {a}"), (slope - a).abs() <= tol);
    }
    out.tables.push(table);

    let crit = ks_one_sample_critical_1pct(n);
    let gauss = sample_1d_stable(2.0, n, &mut stream_rng(seed, 100));
    let normal = Normal::new(0.0, 2f64.sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
    let d = ks_one_sample(&gauss, |x| normal.cdf(x));
    out.check("KS alpha=2 against N(0, 2)", d, format!("<= {crit:.3e}"), d <= crit);
    let cauchy_draws = sample_1d_stable(1.0, n, &mut stream_rng(seed, 101));
    let cauchy = Cauchy::new(0.0, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let d = ks_one_sample(&cauchy_draws, |x| cauchy.cdf(x));
    out.check("KS alpha=1 against Cauchy(0, 1)", d, format!("<= {crit:.3e}"), d <= crit);
    Ok(out)
}

const SDE_KEYS: &[KeySpec] = &[
    key("alpha", Kind::Float, "1.5", "1.5", "stable index"),
    key("holder_gamma", Kind::Float, "2.0", "2.0", "Holder order of the position drift"),
    key("holder_beta", Kind::Float, "0.6", "0.6", "Holder order of the velocity drift"),
    key("amp", Kind::Float, "1", "1", "drift amplitude"),
    key("dt", Kind::Float, "0.0625", "0.0625", "coarsest step"),
    key("horizon", Kind::Float, "1", "1", "final time"),
    key("levels", Kind::Int, "4", "4", "refinements by 4"),
    key("streams", Kind::Int, "200", "400", "independent noise streams"),
    key("fraction", Kind::Float, "0.95", "0.95", "required share of shrinking gap sequences"),
    key("r0", Kind::Float, "0.25", "0.25", "smallest recorded jump"),
    seed_key("29"),
];

fn sde_uniqueness(p: &Params) -> Result<Outcome> {
    let alpha = p.f64("alpha");
    let seed = p.u64("seed");
    let stable = StableConfig::for_generator(alpha, 1, 1.0, seed, p.f64("r0"))?;
    let drift = Drift::Holder { gamma: p.f64("holder_gamma"), beta: p.f64("holder_beta"), amp: p.f64("amp") };
    if !drift.admissible(alpha) {
        return Err(Error::param("holder_gamma", "drift orders outside the admissible window"));
    }
    let cfg = SdeConfig {
        drift,
        sigma: Sigma::Modulated { base: 1.0, amp: 0.3 },
        dt: p.f64("dt"),
        horizon: p.f64("horizon"),
        stable: stable.clone(),
    };
    cfg.validate()?;
    let horizon = cfg.horizon;
    let z0 = [0.3, -0.2];
    let mut out = Outcome::default();

    let mid = (cfg.steps() / 2) as f64 * cfg.dt;
    let composition = (0..8u64)
        .map(|s| flow_composition_check(&cfg, 0.0, mid, horizon, z0, s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.check("flow composition gap", composition, "<= 1e-12", composition <= 1e-12);

    let free = SdeConfig { drift: Drift::Zero, sigma: Sigma::Constant { value: 1.0 }, ..cfg.clone() };
    let mut jac_err = 0.0f64;
    for s in 0..4u64 {
        // the free flow is affine, so any difference step is exact up to rounding
        let j = flow_jacobian(&free, mid, horizon, [0.4, 1.1], s, Some(0.01))?;
        let expect = [[1.0, horizon - mid], [0.0, 1.0]];
        for r in 0..2 {
            for c in 0..2 {
                jac_err = jac_err.max((j.matrix[r][c] - expect[r][c]).abs());
            }
        }
    }
    out.check("zero-drift Jacobian error", jac_err, "<= 1e-10", jac_err <= 1e-10);

    let need = p.f64("fraction");
    let catalog = [("full", drift), ("velocity", Drift::VelocityHolder { beta: p.f64("holder_beta"), amp: p.f64("amp") })];
    let mut table = Table::new("gaps", &["drift", "stream", "level", "gap"]);
    let mut mean = Table::new("mean_gaps", &["drift", "level", "mean_gap"]);
    for (d, (name, entry)) in catalog.iter().enumerate() {
        let run = SdeConfig { drift: *entry, ..cfg.clone() };
        let (share, gaps) = uniqueness_study(&run, z0, p.usize("levels"), p.u64("streams"))?;
        out.check(format!("share of strictly shrinking gap sequences, {name} Holder drift"), share, format!(">= {need}"), share >= need);
        for (s, g) in gaps.iter().enumerate() {
            for (k, v) in g.iter().enumerate() {
                table.push(vec![d as f64, s as f64, k as f64, *v]);
            }
        }
        for k in 0..gaps.first().map_or(0, Vec::len) {
            mean.push(vec![d as f64, k as f64, gaps.iter().map(|g| g[k]).sum::<f64>() / gaps.len() as f64]);
        }
    }
    out.tables.push(table);
    out.tables.push(mean);

    let sample = simulate_sde(&cfg, 0.0, z0, 0)?;
    let again = simulate_sde(&cfg, 0.0, z0, 0)?;
    let jump = sample.max_position_jump();
    out.check("position jump at noise jumps", jump, "== 0", jump == 0.0);
    out.metric("recorded_jumps", sample.jumps.len());
    let (d1, d2) = (cfg.tape(0)?.jump_digest(), cfg.tape(0)?.jump_digest());
    out.check("replayed trajectory identical", if sample == again && d1 == d2 { 1.0 } else { 0.0 }, "== 1", sample == again && d1 == d2);
    let mut path = Table::new("trajectory", &["t", "x", "v"]);
    for (t, z) in sample.times.iter().zip(&sample.states) {
        path.push(vec![*t, z[0], z[1]]);
    }
    out.tables.push(path);
    Ok(out)
}

const TRANSPORT_KEYS: &[KeySpec] = &[
    key("alpha", Kind::Float, "1.5", "1.5", "stable index of the driving path"),
    key("tape_dt", Kind::Float, "0.015625", "0.015625", "step of the driving path"),
    key("horizon", Kind::Float, "1", "1", "final time"),
    key("holder_gamma", Kind::Float, "0.85", "0.85", "Holder order of the drift"),
    key("refinements", Kind::Int, "5", "6", "ODE steps tape_dt/2^k for k = 0..refinements"),
    key("residual_h", Kind::Float, "1e-5", "1e-5", "spatial difference step"),
    key("min_order", Kind::Float, "0.8", "0.8", "required convergence order of the residual"),
    key("points", Kind::Int, "41", "81", "spatial evaluation points on [-2, 2]"),
    seed_key("31"),
];

fn transport(p: &Params) -> Result<Outcome> {
    let alpha = p.f64("alpha");
    let tape_dt = p.f64("tape_dt");
    let horizon = p.f64("horizon");
    let n = (horizon / tape_dt).round() as usize;
    let stable = StableConfig::for_generator(alpha, 1, 1.0, p.u64("seed"), 0.25)?;
    let tape = JumpTape::generate(&stable, 0.0, tape_dt, n, 0)?;
    let path = tape.path();
    let npts = p.usize("points");
    let xs: Vec<f64> = (0..npts).map(|i| -2.0 + 4.0 * i as f64 / (npts - 1).max(1) as f64).collect();
    let mut out = Outcome::default();

    let free = TransportProblem::new(ScalarDrift::Zero, Datum::Linear { slope: 1.3, offset: 0.2 }, &path, tape_dt)?;
    let shift = crate::sde_flow::integrated_noise(&tape, horizon);
    let solved = solve_transport(&free, horizon, &xs)?;
    let closed = xs.iter().zip(&solved).map(|(x, u)| (u - (1.3 * (x - shift) + 0.2)).abs()).fold(0.0, f64::max);
    out.check("zero-drift closed-form error", closed, format!("<= dt^2 = {:.3e}", tape_dt * tape_dt), closed <= tape_dt * tape_dt);

    let drift = ScalarDrift::Holder { gamma: p.f64("holder_gamma"), amp: 1.0 };
    if !drift.admissible(alpha) {
        return Err(Error::param("holder_gamma", "outside the admissible window for this alpha"));
    }
    let datum = Datum::Sine { freq: 1.0 };
    let probe = TransportProblem::new(drift, datum, &path, tape_dt)?;
    // tape grid times with no jump strictly inside the next tape step
    let times: Vec<f64> = (n / 4..3 * n / 4)
        .map(|k| k as f64 * tape_dt)
        .filter(|&t| !probe.forcing.changes_inside(t, t + tape_dt))
        .take(4)
        .collect();
    if times.is_empty() {
        return Err(Error::Numerical("no jump-free step on the driving path".into()));
    }
    let h = p.f64("residual_h");
    let probe_x = [-1.1, 0.35, 1.6];
    let ks: Vec<usize> = (0..=p.usize("refinements")).collect();
    let residuals: Vec<f64> = ks
        .par_iter()
        .map(|&k| -> Result<f64> {
            let prob = TransportProblem::new(drift, datum, &path, tape_dt / 2f64.powi(k as i32))?;
            let mut worst = 0.0f64;
            for &t in &times {
                for &x in &probe_x {
                    worst = worst.max(transport_residual(&prob, t, x, h)?);
                }
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let dts: Vec<f64> = ks.iter().map(|&k| -(k as f64)).collect();
    // log2 residual against log2 dt: the slope is the convergence order
    let fit = SlopeFit::fit(&dts, &residuals)?;
    let mut table = Table::new("residuals", &["k", "dt", "residual"]);
    for (k, r) in ks.iter().zip(&residuals) {
        table.push(vec![*k as f64, tape_dt / 2f64.powi(*k as i32), *r]);
    }
    out.tables.push(table);
    out.metric("residual_fit", &fit);
    let order = p.f64("min_order");
    out.check("residual convergence order", fit.slope, format!(">= {order}"), fit.slope >= order && fit.residual_ok());

    let bump = TransportProblem::new(drift, Datum::Bump { width: 0.5 }, &path, tape_dt / 4.0)?;
    let (lo, hi) = Datum::Bump { width: 0.5 }.range();
    let mut worst_excess = 0.0f64;
    let mut profile = Table::new("bump_profile", &["t", "x", "u"]);
    for m in 1..=4 {
        let t = horizon * m as f64 / 4.0;
        let us = solve_transport(&bump, t, &xs)?;
        for (x, u) in xs.iter().zip(&us) {
            worst_excess = worst_excess.max(lo - u).max(u - hi);
            profile.push(vec![t, *x, *u]);
        }
    }
    out.tables.push(profile);
    out.check("excursion outside the datum range", worst_excess.max(0.0), "== 0", worst_excess <= 0.0);
    Ok(out)
}

const PICARD_KEYS: &[KeySpec] = &[
    key("paths", Kind::Int, "1000", "4000", "Monte Carlo paths per node"),
    key("max_iter", Kind::Int, "6", "6", "Picard iterations"),
    key("ratio", Kind::Float, "0.8", "0.8", "largest allowed contraction ratio after iteration 2"),
    key("identity_tolerance", Kind::Float, "1e-6", "1e-6", "relative error of the change of variables"),
    key("closed_form_c", Kind::Float, "2", "2", "constant kernel for the closed-form map"),
    seed_key("37"),
];

fn picard(p: &Params) -> Result<Outcome> {
    let mut out = Outcome::default();
    let alpha = 1.5;
    let battery_spec = JumpMapSpec { alpha, kernel: ProductKernel { scale: 1.0, state_amp: 0.0, jump_amp: 0.3 } };
    let c = p.f64("closed_form_c");
    let tol = p.f64("identity_tolerance");
    let mut table = Table::new("identity", &["case", "mapped", "weighted", "rel_err"]);
    for (i, case) in change_of_variables_battery(&battery_spec, 0.0, c)?.into_iter().enumerate() {
        out.check(format!("change of variables {}", case.name), case.rel_err, format!("<= {tol:e}"), case.rel_err <= tol);
        table.push(vec![i as f64, case.mapped, case.weighted, case.rel_err]);
    }
    out.tables.push(table);
    let gap = closed_form_gap(alpha, c)?;
    out.check("closed-form map gap", gap, "<= 1e-10", gap <= 1e-10);

    let mut cfg = PicardConfig::standard(p.usize("paths"), p.u64("seed"));
    cfg.max_iter = p.usize("max_iter");
    let mut odd = 0.0f64;
    for x in [-1.0, 0.0, 2.0] {
        for z in [1e-3, 0.2, 0.7, 1.0] {
            let (a, b) = (jump_map_phi(&cfg.spec, x, z)?, jump_map_phi(&cfg.spec, x, -z)?);
            odd = odd.max((a + b).abs() / a.abs());
        }
    }
    out.check("odd symmetry of the jump map", odd, "<= 1e-12", odd <= 1e-12);

    let res = picard_solve(&cfg, Source::Wave)?;
    out.tables.push(Table {
        name: "picard".into(),
        columns: ["n", "sup_diff", "ratio", "max_stderr"].map(String::from).to_vec(),
        rows: res.history.iter().map(|h| vec![h.iteration as f64, h.sup_diff, h.ratio.unwrap_or(f64::NAN), h.max_stderr]).collect(),
    });
    let limit = p.f64("ratio");
    match res.worst_ratio_after(2) {
        Some(r) => out.check("worst Picard ratio after iteration 2", r, format!("<= {limit}"), r <= limit),
        None => out.check("worst Picard ratio after iteration 2", f64::NAN, "needs at least 4 iterations", false),
    }
    let first = &res.history[0];
    let bound = (1.0 - (-cfg.lambda * cfg.horizon).exp()) * Source::Wave.sup() / cfg.lambda + 3.0 * first.max_stderr;
    out.check("first iterate against the maximum principle", first.sup_diff, format!("<= {bound:.6}"), first.sup_diff <= bound);
    out.metric("history", &res.history);
    Ok(out)
}

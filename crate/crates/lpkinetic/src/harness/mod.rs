//! Experiment registry, deterministic execution and report persistence.

mod analysis;
pub mod config;
mod stochastic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

pub use config::{ConfigError, Kind, KeySpec, Params, Profile};

use crate::estimates::SlopeFit;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// Human-readable acceptance rule, e.g. `<= -0.45`.
    pub rule: String,
    pub passed: bool,
}

/// Numeric table written as `<name>.csv` and `<name>.dat`.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn csv(&self, provenance: &[String]) -> String {
        let mut s = String::new();
        for p in provenance {
            let _ = writeln!(s, "# {p}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    fn dat(&self) -> String {
        let mut s = format!("# {}\n", self.columns.join(" "));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        s
    }
}

/// What an experiment measured.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, Value>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn check(&mut self, name: impl Into<String>, measured: f64, rule: impl Into<String>, passed: bool) {
        self.checks.push(Check { name: name.into(), measured, rule: rule.into(), passed });
    }

    /// `|slope - target| <= tol` with residuals within the fit tolerance.
    pub fn slope_equals(&mut self, name: impl Into<String>, fit: &SlopeFit, target: f64, tol: f64) {
        let rule = format!("= {target:.4} ± {tol} (max residual {:.3})", fit.max_residual);
        self.check(name, fit.slope, rule, fit.matches(target, tol));
    }

    /// `slope <= bound` with residuals within the fit tolerance.
    pub fn slope_at_most(&mut self, name: impl Into<String>, fit: &SlopeFit, bound: f64) {
        let rule = format!("<= {bound:.4} (max residual {:.3})", fit.max_residual);
        self.check(name, fit.slope, rule, fit.at_most(bound));
    }

    pub fn metric(&mut self, name: impl Into<String>, value: impl Serialize) {
        self.metrics.insert(name.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

pub type Runner = fn(&Params) -> crate::Result<Outcome>;

pub struct Experiment {
    pub id: &'static str,
    pub description: &'static str,
    /// Statement being measured.
    pub claim: &'static str,
    /// Whether the experiment fans out over the thread pool itself.
    pub parallel: bool,
    pub keys: &'static [KeySpec],
    pub run: Runner,
}

pub fn registry() -> Vec<Experiment> {
    let mut v = analysis::experiments();
    v.extend(stochastic::experiments());
    v
}

pub fn find(id: &str) -> Option<Experiment> {
    registry().into_iter().find(|e| e.id == id)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub id: String,
    pub description: String,
    pub claim: String,
    pub profile: Profile,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, Value>,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub wall_time_s: f64,
    pub build: String,
    pub error: Option<String>,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

/// `git describe` of the source tree, or the crate version outside a checkout.
pub fn build_id() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("lpkinetic-{}", env!("CARGO_PKG_VERSION")))
}

/// Resolve parameters, run, and build the report. Parameter problems found
/// by the experiment's own validation are configuration errors too.
pub fn execute(exp: &Experiment, profile: Profile, overrides: &BTreeMap<String, String>) -> Result<(ExperimentReport, Vec<Table>), RunError> {
    let params = Params::resolve(exp.keys, profile, overrides).map_err(RunError::Config)?;
    let start = Instant::now();
    let result = (exp.run)(&params);
    let wall_time_s = start.elapsed().as_secs_f64();
    let (outcome, error) = match result {
        Ok(o) => (o, None),
        Err(crate::Error::Param { name, reason }) => return Err(RunError::Config(ConfigError::new(&name, reason))),
        Err(e) => (Outcome::default(), Some(e.to_string())),
    };
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        id: exp.id.into(),
        description: exp.description.into(),
        claim: exp.claim.into(),
        profile,
        passed: error.is_none() && outcome.passed(),
        checks: outcome.checks,
        metrics: outcome.metrics,
        config: params.echo(),
        seed: params.u64("seed"),
        wall_time_s,
        build: build_id(),
        error,
    };
    Ok((report, outcome.tables))
}

/// `report.json`, one CSV with `#` provenance lines and one `.dat` per table.
pub fn write_outputs(dir: &Path, report: &ExperimentReport, tables: &[Table]) -> Result<(), RunError> {
    let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| RunError::Io(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n").map_err(io)?;
    let provenance = vec![
        format!("experiment={}", report.id),
        format!("profile={}", report.profile.name()),
        format!("seed={}", report.seed),
        format!("build={}", report.build),
    ];
    for t in tables {
        std::fs::write(dir.join(format!("{}.csv", t.name)), t.csv(&provenance)).map_err(io)?;
        std::fs::write(dir.join(format!("{}.dat", t.name)), t.dat()).map_err(io)?;
    }
    Ok(())
}

/// One line per check plus a verdict.
pub fn summarize(report: &ExperimentReport) -> String {
    let mut s = String::new();
    for c in &report.checks {
        let _ = writeln!(s, "  [{}] {}: {:.6} {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.measured, c.rule);
    }
    if let Some(e) = &report.error {
        let _ = writeln!(s, "  error: {e}");
    }
    let _ = write!(s, "{} {} ({:.1} s)", if report.passed { "PASS" } else { "FAIL" }, report.id, report.wall_time_s);
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub id: String,
    pub passed: bool,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub suite: Profile,
    pub passed: bool,
    pub failures: Vec<String>,
    pub wall_time_s: f64,
    pub build: String,
    pub experiments: Vec<SuiteEntry>,
}

/// Threads for the shared pool: `LPKINETIC_THREADS` if set, else all cores.
pub fn thread_count() -> Option<usize> {
    std::env::var("LPKINETIC_THREADS").ok().and_then(|v| v.parse().ok()).filter(|n| *n > 0)
}

/// Run every registered experiment into `out/<id>/` and write
/// `out/summary.json`. `out` must be empty unless `force` is set.
pub fn run_suite(profile: Profile, out: &Path, force: bool) -> Result<SuiteReport, RunError> {
    if out.exists() {
        let nonempty = std::fs::read_dir(out).map_err(|e| RunError::Io(e.to_string()))?.next().is_some();
        if nonempty && !force {
            return Err(RunError::Config(ConfigError::new(
                "out",
                format!("{} is not empty; pass --force to write into it", out.display()),
            )));
        }
    }
    let start = Instant::now();
    let exps = registry();
    let results: Vec<Result<ExperimentReport, RunError>> = exps
        .par_iter()
        .map(|e| {
            let (report, tables) = execute(e, profile, &BTreeMap::new())?;
            write_outputs(&out.join(e.id), &report, &tables)?;
            Ok(report)
        })
        .collect();
    let mut entries = Vec::new();
    for r in results {
        let r = r?;
        println!("{}", summarize(&r));
        entries.push(SuiteEntry { id: r.id.clone(), passed: r.passed, wall_time_s: r.wall_time_s, error: r.error.clone() });
    }
    let failures: Vec<String> = entries.iter().filter(|e| !e.passed).map(|e| e.id.clone()).collect();
    let summary = SuiteReport {
        schema_version: SCHEMA_VERSION,
        suite: profile,
        passed: failures.is_empty(),
        failures,
        wall_time_s: start.elapsed().as_secs_f64(),
        build: build_id(),
        experiments: entries,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| RunError::Io(e.to_string()))?;
    std::fs::write(out.join("summary.json"), json + "\n").map_err(|e| RunError::Io(e.to_string()))?;
    Ok(summary)
}

/// Default output location for a single run.
pub fn default_out(id: &str) -> PathBuf {
    PathBuf::from("lpkinetic-out").join(id)
}

/// Common key every experiment carries.
pub(crate) const fn seed_key(default: &'static str) -> KeySpec {
    config::key("seed", Kind::Int, default, default, "root of every random stream")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_complete_and_unique() {
        let ids: Vec<&str> = registry().iter().map(|e| e.id).collect();
        assert_eq!(ids.len(), 12);
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 12);
        for e in registry() {
            assert!(e.keys.iter().any(|k| k.name == "seed"), "{}", e.id);
            for p in [Profile::Fast, Profile::Full] {
                Params::resolve(e.keys, p, &BTreeMap::new()).unwrap();
            }
        }
    }

    #[test]
    fn tables_carry_provenance() {
        let mut t = Table::new("demo", &["j", "value"]);
        t.push(vec![1.0, 0.5]);
        let csv = t.csv(&["seed=3".into()]);
        assert!(csv.starts_with("# seed=3\nj,value\n1.0"));
        assert!(t.dat().starts_with("# j value\n"));
    }
}

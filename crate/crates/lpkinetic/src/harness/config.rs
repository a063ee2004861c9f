//! Plain-text `key=value` configuration with per-experiment schemas.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Which default column of a schema applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Fast,
    Full,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fast" => Some(Profile::Fast),
            "full" => Some(Profile::Full),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Fast => "fast",
            Profile::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Float,
    Int,
    FloatList,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub kind: Kind,
    pub fast: &'static str,
    pub full: &'static str,
    pub doc: &'static str,
}

pub const fn key(name: &'static str, kind: Kind, fast: &'static str, full: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { name, kind, fast, full, doc }
}

/// A rejected configuration entry; reported with exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(key: &str, reason: impl Into<String>) -> Self {
        Self { key: key.to_string(), reason: reason.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config key `{}`: {}", self.key, self.reason)
    }
}

impl std::error::Error for ConfigError {}

/// Accepts decimals, exponents and `a/b` fractions.
pub fn parse_float(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (b != 0.0).then(|| a / b);
    }
    s.parse().ok().filter(|v: &f64| v.is_finite())
}

fn check_value(spec: &KeySpec, raw: &str) -> Result<(), ConfigError> {
    let ok = match spec.kind {
        Kind::Float => parse_float(raw).is_some(),
        Kind::Int => raw.trim().parse::<u64>().is_ok(),
        Kind::FloatList => !raw.trim().is_empty() && raw.split(',').all(|p| parse_float(p).is_some()),
    };
    if ok {
        Ok(())
    } else {
        let what = match spec.kind {
            Kind::Float => "a number",
            Kind::Int => "a non-negative integer",
            Kind::FloatList => "a comma-separated list of numbers",
        };
        Err(ConfigError::new(spec.name, format!("expected {what}, got `{raw}`")))
    }
}

/// Parse `key=value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::new(line, format!("line {} is not of the form key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

/// `--key value` and `--key=value` pairs after the fixed CLI arguments.
pub fn parse_overrides(args: &[String]) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let name = a.strip_prefix("--").ok_or_else(|| ConfigError::new(a, "expected --key value"))?;
        let (k, v) = match name.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| ConfigError::new(name, "missing value"))?;
                (name.to_string(), v.clone())
            }
        };
        out.insert(k.replace('-', "_"), v);
    }
    Ok(out)
}

/// Validated parameter values of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: BTreeMap<String, String>,
    kinds: BTreeMap<String, Kind>,
}

impl Params {
    /// Schema defaults for `profile` overlaid with `overrides`; every key must
    /// be declared and every value must parse.
    pub fn resolve(schema: &[KeySpec], profile: Profile, overrides: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        let mut kinds = BTreeMap::new();
        for spec in schema {
            let default = match profile {
                Profile::Fast => spec.fast,
                Profile::Full => spec.full,
            };
            values.insert(spec.name.to_string(), default.to_string());
            kinds.insert(spec.name.to_string(), spec.kind);
        }
        for (k, v) in overrides {
            let spec = schema
                .iter()
                .find(|s| s.name == k)
                .ok_or_else(|| ConfigError::new(k, "unknown key for this experiment"))?;
            check_value(spec, v)?;
            values.insert(k.clone(), v.clone());
        }
        for spec in schema {
            check_value(spec, &values[spec.name])?;
        }
        Ok(Self { values, kinds })
    }

    fn raw(&self, k: &str) -> &str {
        self.values.get(k).unwrap_or_else(|| panic!("experiment reads undeclared key `{k}`"))
    }

    pub fn f64(&self, k: &str) -> f64 {
        debug_assert_eq!(self.kinds[k], Kind::Float);
        parse_float(self.raw(k)).expect("validated at resolve")
    }

    pub fn usize(&self, k: &str) -> usize {
        self.raw(k).trim().parse().expect("validated at resolve")
    }

    pub fn u64(&self, k: &str) -> u64 {
        self.raw(k).trim().parse().expect("validated at resolve")
    }

    pub fn f64_list(&self, k: &str) -> Vec<f64> {
        self.raw(k).split(',').map(|p| parse_float(p).expect("validated at resolve")).collect()
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[KeySpec] = &[
        key("beta", Kind::FloatList, "0", "0,0.5,1", ""),
        key("jmax", Kind::Int, "4", "6", ""),
        key("dt", Kind::Float, "1/16", "1/64", ""),
    ];

    #[test]
    fn defaults_and_overrides() {
        let p = Params::resolve(SCHEMA, Profile::Full, &BTreeMap::new()).unwrap();
        assert_eq!(p.f64_list("beta"), vec![0.0, 0.5, 1.0]);
        assert_eq!(p.f64("dt"), 1.0 / 64.0);
        let o = parse_overrides(&["--jmax".into(), "9".into(), "--beta=0.25".into()]).unwrap();
        let p = Params::resolve(SCHEMA, Profile::Fast, &o).unwrap();
        assert_eq!((p.usize("jmax"), p.f64_list("beta")), (9, vec![0.25]));
    }

    #[test]
    fn rejections_name_the_key() {
        let mut o = BTreeMap::new();
        o.insert("gamma".to_string(), "1".to_string());
        assert_eq!(Params::resolve(SCHEMA, Profile::Fast, &o).unwrap_err().key, "gamma");
        let mut o = BTreeMap::new();
        o.insert("jmax".to_string(), "-1".to_string());
        assert_eq!(Params::resolve(SCHEMA, Profile::Fast, &o).unwrap_err().key, "jmax");
        assert_eq!(parse_overrides(&["--dt".into()]).unwrap_err().key, "dt");
        let text = "# comment\njmax = 5\n\nbeta=0.5 # trailing\n";
        let m = parse_config_text(text).unwrap();
        assert_eq!(m["jmax"], "5");
        assert_eq!(m["beta"], "0.5");
        assert!(parse_config_text("nonsense").is_err());
    }
}

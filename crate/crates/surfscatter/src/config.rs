//! Experiment configuration: defaults, an INI-style file, then flags.

use std::path::{Path, PathBuf};

use ini::Ini;
use surfscatter_core::model::{CorrugationSeries, ModelParams, PhysicalParams};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: ini::Error },
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid parameters: {0}")]
    Model(#[from] surfscatter_core::model::ModelError),
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.into(), value: value.into(), reason: reason.into() }
}

pub fn parse_f64(key: &str, s: &str) -> Result<f64, ConfigError> {
    let x: f64 = s.trim().parse().map_err(|_| bad(key, s, "not a number"))?;
    if !x.is_finite() {
        return Err(bad(key, s, "not finite"));
    }
    Ok(x)
}

pub fn parse_usize(key: &str, s: &str) -> Result<usize, ConfigError> {
    s.trim().parse().map_err(|_| bad(key, s, "not a non-negative integer"))
}

/// Comma-separated numbers.
pub fn parse_list(key: &str, s: &str) -> Result<Vec<f64>, ConfigError> {
    let v = s.split(',').map(|x| parse_f64(key, x)).collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err(bad(key, s, "empty list"));
    }
    Ok(v)
}

/// `a:b:step` (inclusive of `b` up to rounding), a single value, or a
/// comma-separated list.
pub fn parse_range(key: &str, s: &str) -> Result<Vec<f64>, ConfigError> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => parse_list(key, s),
        3 => {
            let a = parse_f64(key, parts[0])?;
            let b = parse_f64(key, parts[1])?;
            let h = parse_f64(key, parts[2])?;
            if !(h > 0.0) || b < a {
                return Err(bad(key, s, "need a ≤ b and step > 0"));
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            if n > 10_000 {
                return Err(bad(key, s, "too many points"));
            }
            Ok((0..=n).map(|i| a + h * i as f64).collect())
        }
        _ => Err(bad(key, s, "expected a:b:step, a value or a list")),
    }
}

/// Resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: String,
    pub physical: PhysicalParams,
    /// `νI₀` values (a sweep, a list or one value).
    pub nu_i0: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub kmax: usize,
    pub modes: usize,
    pub tol: f64,
    /// Number of excursions for `oscillate`.
    pub k: usize,
    pub z_return: f64,
    pub out: PathBuf,
    /// Always on; recorded in the manifest.
    pub deterministic: bool,
}

/// Values given on the command line; `None` leaves the lower layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub nu_i0: Option<String>,
    pub epsilon: Option<String>,
    pub kmax: Option<usize>,
    pub modes: Option<usize>,
    pub tol: Option<f64>,
    pub k: Option<usize>,
    pub z_return: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn defaults(command: &str) -> Self {
        let (nu_i0, epsilon, kmax): (Vec<f64>, Vec<f64>, usize) = match command {
            "melnikov" => (vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0], vec![1.0], 2),
            "splitting" => (vec![4.0], vec![1e-4], 1),
            "sweep" => (vec![4.0, 5.0, 6.0, 7.0], vec![1e-4], 1),
            "inner" => (vec![5.0], vec![2.5e-4, 5e-4, 1e-3], 2),
            "horseshoe" | "oscillate" => (vec![3.0, 2.5, 2.0, 1.75, 1.5], vec![1.0], 1),
            _ => (vec![4.0], vec![1e-4], 1),
        };
        Self {
            command: command.into(),
            physical: PhysicalParams::default(),
            nu_i0,
            epsilon,
            kmax,
            modes: 8,
            // Round-off caps the Melnikov quadrature near 1e-10 relative.
            tol: if command == "melnikov" { 1e-9 } else { 1e-12 },
            k: 3,
            z_return: 8.0,
            out: PathBuf::from("out").join(command),
            deterministic: true,
        }
    }

    /// Defaults, then `file`, then `flags`.
    pub fn resolve(command: &str, file: Option<&Path>, flags: &Overrides) -> Result<Self, ConfigError> {
        let mut spec = Self::defaults(command);
        if let Some(path) = file {
            let ini = Ini::load_from_file(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
            spec.apply_file(&ini)?;
        }
        spec.apply_flags(flags)?;
        spec.validate()?;
        Ok(spec)
    }

    fn apply_file(&mut self, ini: &Ini) -> Result<(), ConfigError> {
        let mut i0 = None;
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                match (section, key) {
                    ("physical", "D") => self.physical.d = parse_f64(key, value)?,
                    ("physical", "a") => self.physical.a = parse_f64(key, value)?,
                    ("physical", "alpha") => self.physical.alpha = parse_f64(key, value)?,
                    ("physical", "m") => self.physical.m = parse_f64(key, value)?,
                    ("physical", "r") => self.physical.corrugation = CorrugationSeries::even(parse_list(key, value)?)?,
                    ("model", "I0") => i0 = Some(parse_f64(key, value)?),
                    ("model" | "run", "nuI0") => self.nu_i0 = parse_range(key, value)?,
                    ("model" | "run", "epsilon") => self.epsilon = parse_list(key, value)?,
                    ("run", "kmax") => self.kmax = parse_usize(key, value)?,
                    ("run", "modes") => self.modes = parse_usize(key, value)?,
                    ("run", "tol") => self.tol = parse_f64(key, value)?,
                    ("run", "k") => self.k = parse_usize(key, value)?,
                    ("run", "zret") => self.z_return = parse_f64(key, value)?,
                    ("run", "out") => self.out = PathBuf::from(value),
                    _ => return Err(ConfigError::UnknownKey { section: section.into(), key: key.into() }),
                }
            }
        }
        // I₀ is stored through νI₀ once ν is known.
        if let Some(i0) = i0 {
            self.nu_i0 = vec![i0 * self.physical.nu()];
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Overrides) -> Result<(), ConfigError> {
        if let Some(s) = &f.nu_i0 {
            self.nu_i0 = parse_range("--nuI0", s)?;
        }
        if let Some(s) = &f.epsilon {
            self.epsilon = parse_list("--epsilon", s)?;
        }
        if let Some(x) = f.kmax {
            self.kmax = x;
        }
        if let Some(x) = f.modes {
            self.modes = x;
        }
        if let Some(x) = f.tol {
            self.tol = x;
        }
        if let Some(x) = f.k {
            self.k = x;
        }
        if let Some(x) = f.z_return {
            self.z_return = x;
        }
        if let Some(p) = &f.out {
            self.out = p.clone();
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.physical.validate()?;
        if self.nu_i0.is_empty() || self.nu_i0.iter().any(|x| !(*x > 0.0)) {
            return Err(bad("nuI0", &format!("{:?}", self.nu_i0), "values must be positive"));
        }
        if self.epsilon.is_empty() {
            return Err(bad("epsilon", "", "empty list"));
        }
        if self.kmax == 0 {
            return Err(bad("kmax", "0", "must be at least 1"));
        }
        if self.modes == 0 {
            return Err(bad("modes", "0", "must be at least 1"));
        }
        if !(1e-15..=1e-3).contains(&self.tol) {
            return Err(bad("tol", &self.tol.to_string(), "must lie in [1e-15, 1e-3]"));
        }
        if self.k == 0 {
            return Err(bad("k", "0", "must be at least 1"));
        }
        if !(self.z_return > 0.0) {
            return Err(bad("zret", &self.z_return.to_string(), "must be positive"));
        }
        Ok(())
    }

    pub fn params(&self, nu_i0: f64, epsilon: f64) -> Result<ModelParams, ConfigError> {
        Ok(ModelParams::from_nu_i0(self.physical.clone(), nu_i0, epsilon)?)
    }

    /// `key = value` lines echoing every resolved setting.
    pub fn echo(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let p = &self.physical;
        vec![
            ("command".into(), self.command.clone()),
            ("physical.D".into(), format!("{:e}", p.d)),
            ("physical.a".into(), format!("{:e}", p.a)),
            ("physical.alpha".into(), format!("{:e}", p.alpha)),
            ("physical.m".into(), format!("{:e}", p.m)),
            ("physical.r".into(), list(p.corrugation.cos_coeffs())),
            ("physical.s".into(), list(p.corrugation.sin_coeffs())),
            ("nu".into(), format!("{:e}", p.nu())),
            ("nuI0".into(), list(&self.nu_i0)),
            ("epsilon".into(), list(&self.epsilon)),
            ("kmax".into(), self.kmax.to_string()),
            ("modes".into(), self.modes.to_string()),
            ("tol".into(), format!("{:e}", self.tol)),
            ("k".into(), self.k.to_string()),
            ("zret".into(), format!("{:e}", self.z_return)),
            ("out".into(), self.out.display().to_string()),
            ("deterministic".into(), self.deterministic.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("x", "4:8:1").unwrap(), vec![4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(parse_range("x", "5").unwrap(), vec![5.0]);
        assert_eq!(parse_range("x", "1,2.5").unwrap(), vec![1.0, 2.5]);
        assert!(parse_range("x", "8:4:1").is_err());
        assert!(parse_range("x", "1:2").is_err());
        assert!(parse_range("x", "nan").is_err());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[physical]\nD = 6.35\nr = 0.05,0.01\n[run]\nkmax = 3\nnuI0 = 4:6:1").unwrap();
        let flags = Overrides { nu_i0: Some("7".into()), ..Overrides::default() };
        let s = ExperimentSpec::resolve("melnikov", Some(f.path()), &flags).unwrap();
        assert_eq!(s.nu_i0, vec![7.0]);
        assert_eq!(s.kmax, 3);
        assert_eq!(s.physical.corrugation.cos_coeffs(), &[0.05, 0.01]);
        assert_eq!(s.modes, 8);
    }

    #[test]
    fn i0_sets_nu_i0() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[model]\nI0 = 0.5\nepsilon = 1e-3").unwrap();
        let s = ExperimentSpec::resolve("splitting", Some(f.path()), &Overrides::default()).unwrap();
        assert!((s.nu_i0[0] - 0.5 * s.physical.nu()).abs() < 1e-12);
        assert_eq!(s.epsilon, vec![1e-3]);
    }

    #[test]
    fn unknown_key_and_bad_values_are_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[run]\nspeed = 3").unwrap();
        assert!(matches!(ExperimentSpec::resolve("sweep", Some(f.path()), &Overrides::default()), Err(ConfigError::UnknownKey { .. })));
        let flags = Overrides { tol: Some(1.0), ..Overrides::default() };
        assert!(ExperimentSpec::resolve("sweep", None, &flags).is_err());
        let flags = Overrides { nu_i0: Some("-1".into()), ..Overrides::default() };
        assert!(ExperimentSpec::resolve("sweep", None, &flags).is_err());
        assert!(ExperimentSpec::resolve("sweep", Some(Path::new("/nonexistent/x.ini")), &Overrides::default()).is_err());
    }
}

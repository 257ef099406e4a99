//! Flat INI-style run configuration: `[section]` headers over `key = value`
//! lines, `#`/`;` comments. Getters carry the section and key names into
//! every diagnostic so a failing run names the offending field.

use crate::flows::{SubordinatorFamily, SubordinatorSpec};
use crate::dist::gig::GigParams;
use crate::ofi::{JumpLaw, SizeDist};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("missing key `{key}` in section [{section}]")]
    MissingKey { section: String, key: String },
    #[error("bad value for `{key}` in section [{section}]: {msg}")]
    BadValue { section: String, key: String, msg: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Section<'a> {
    name: &'a str,
    entries: &'a BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if name.is_empty() {
                    return Err(ConfigError::Parse { line: i + 1, msg: "empty section name".into() });
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let Some(section) = &current else {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    msg: "key/value pair before any [section] header".into(),
                });
            };
            sections
                .get_mut(section)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { sections })
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?)?)
    }

    pub fn section<'a>(&'a self, name: &'a str) -> Result<Section<'a>, ConfigError> {
        self.sections
            .get(name)
            .map(|entries| Section { name, entries })
            .ok_or_else(|| ConfigError::MissingSection(name.to_string()))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }
}

impl<'a> Section<'a> {
    pub fn get(&self, key: &str) -> Result<&'a str, ConfigError> {
        self.entries.get(key).map(String::as_str).ok_or_else(|| ConfigError::MissingKey {
            section: self.name.to_string(),
            key: key.to_string(),
        })
    }

    pub fn get_opt(&self, key: &str) -> Option<&'a str> {
        self.entries.get(key).map(String::as_str)
    }

    fn bad(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            section: self.name.to_string(),
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.get(key)?.parse().map_err(|_| self.bad(key, "not a number"))
    }

    pub fn get_f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get_opt(key) {
            Some(v) => v.parse().map_err(|_| self.bad(key, "not a number")),
            None => Ok(default),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.get(key)?.parse().map_err(|_| self.bad(key, "not a nonnegative integer"))
    }

    pub fn get_u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get_opt(key) {
            Some(v) => v.parse().map_err(|_| self.bad(key, "not a nonnegative integer")),
            None => Ok(default),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get(key)?.parse().map_err(|_| self.bad(key, "not a nonnegative integer"))
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.get(key)?
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| self.bad(key, format!("bad list entry `{v}`"))))
            .collect()
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Vec<u64>, ConfigError> {
        self.get(key)?
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| self.bad(key, format!("bad list entry `{v}`"))))
            .collect()
    }

    /// Reads a size law from `{prefix}law` plus its parameter keys.
    pub fn size_dist(&self, prefix: &str) -> Result<SizeDist, ConfigError> {
        let law_key = format!("{prefix}law");
        let law = match self.get(&law_key)? {
            "exponential" => SizeDist::Exponential { mean: self.get_f64(&format!("{prefix}mean"))? },
            "constant" => SizeDist::Constant { value: self.get_f64(&format!("{prefix}value"))? },
            "uniform" => SizeDist::Uniform {
                lo: self.get_f64(&format!("{prefix}lo"))?,
                hi: self.get_f64(&format!("{prefix}hi"))?,
            },
            other => {
                return Err(self.bad(&law_key, format!(
                    "unknown size law `{other}` (expected exponential, constant, or uniform)"
                )))
            }
        };
        law.validate().map_err(|e| self.bad(&law_key, e.to_string()))?;
        Ok(law)
    }

    /// Reads the driver family and side multipliers.
    pub fn subordinator_spec(&self) -> Result<SubordinatorSpec, ConfigError> {
        let family = match self.get("family")? {
            "deterministic_linear" => {
                SubordinatorFamily::DeterministicLinear { slope: self.get_f64("slope")? }
            }
            "gamma" => SubordinatorFamily::Gamma {
                shape: self.get_f64("shape")?,
                rate: self.get_f64("rate")?,
            },
            "inverse_gaussian" => SubordinatorFamily::InverseGaussian {
                mu0: self.get_f64("mu0")?,
                lambda0: self.get_f64("lambda0")?,
            },
            "gig" => {
                let g = GigParams::new(
                    self.get_f64("nu")?,
                    self.get_f64("mu")?,
                    self.get_f64("lambda")?,
                )
                .map_err(|e| self.bad("family", e.to_string()))?;
                SubordinatorFamily::Gig(g)
            }
            "stable_one_sided" => {
                SubordinatorFamily::StableOneSided { alpha_exp: self.get_f64("alpha_exp")? }
            }
            other => return Err(self.bad("family", format!("unknown driver family `{other}`"))),
        };
        SubordinatorSpec::new(family, self.get_f64("alpha_plus")?, self.get_f64("alpha_minus")?)
            .map_err(|e| self.bad("family", e.to_string()))
    }

    /// Reads the jump law with the weight implied by the driver split.
    pub fn jump_law(&self, spec: &SubordinatorSpec) -> Result<JumpLaw, ConfigError> {
        let plus = self.size_dist("plus_")?;
        let minus = self.size_dist("minus_")?;
        JumpLaw::for_spec(plus, minus, spec).map_err(|e| self.bad("plus_law", e.to_string()))
    }
}

/// Renders a driver spec back to the flat key-value schema.
pub fn subordinator_spec_to_config(spec: &SubordinatorSpec, section: &str) -> String {
    let mut out = format!("[{section}]\n");
    match spec.family {
        SubordinatorFamily::DeterministicLinear { slope } => {
            let _ = writeln!(out, "family = deterministic_linear\nslope = {slope}");
        }
        SubordinatorFamily::Gamma { shape, rate } => {
            let _ = writeln!(out, "family = gamma\nshape = {shape}\nrate = {rate}");
        }
        SubordinatorFamily::InverseGaussian { mu0, lambda0 } => {
            let _ = writeln!(out, "family = inverse_gaussian\nmu0 = {mu0}\nlambda0 = {lambda0}");
        }
        SubordinatorFamily::Gig(g) => {
            let _ = writeln!(out, "family = gig\nnu = {}\nmu = {}\nlambda = {}", g.nu, g.mu, g.lambda);
        }
        SubordinatorFamily::StableOneSided { alpha_exp } => {
            let _ = writeln!(out, "family = stable_one_sided\nalpha_exp = {alpha_exp}");
        }
    }
    let _ = writeln!(out, "alpha_plus = {}\nalpha_minus = {}", spec.alpha_plus, spec.alpha_minus);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_whitespace() {
        let cfg = Config::parse(
            "# run fixture\n[driver]\nfamily = gamma\nshape= 2.0\n rate =1.5\n\n; trailing\n[run]\nseed = 7\nn_list = 10, 100,1000\n",
        )
        .unwrap();
        let d = cfg.section("driver").unwrap();
        assert_eq!(d.get("family").unwrap(), "gamma");
        assert_eq!(d.get_f64("shape").unwrap(), 2.0);
        let r = cfg.section("run").unwrap();
        assert_eq!(r.get_u64("seed").unwrap(), 7);
        assert_eq!(r.get_u64_list("n_list").unwrap(), vec![10, 100, 1000]);
        assert!(cfg.has_section("driver"));
        assert!(!cfg.has_section("jumps"));
    }

    #[test]
    fn diagnostics_name_the_offending_key() {
        let cfg = Config::parse("[driver]\nfamily = gamma\nshape = fast\n").unwrap();
        let err = cfg.section("driver").unwrap().get_f64("shape").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("shape") && msg.contains("driver"), "{msg}");
        let err = cfg.section("driver").unwrap().get("rate").unwrap_err();
        assert!(err.to_string().contains("rate"));
        assert!(cfg.section("jumps").unwrap_err().to_string().contains("jumps"));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::parse("key = 1\n").is_err()); // before any section
        assert!(Config::parse("[s]\nnot a pair\n").is_err());
        assert!(Config::parse("[]\n").is_err());
    }

    #[test]
    fn subordinator_spec_round_trip() {
        let specs = [
            "[driver]\nfamily = deterministic_linear\nslope = 2\nalpha_plus = 1\nalpha_minus = 1\n",
            "[driver]\nfamily = gamma\nshape = 2\nrate = 3\nalpha_plus = 1.5\nalpha_minus = 0.5\n",
            "[driver]\nfamily = inverse_gaussian\nmu0 = 1\nlambda0 = 2\nalpha_plus = 1\nalpha_minus = 2\n",
            "[driver]\nfamily = gig\nnu = -0.5\nmu = 4\nlambda = 1\nalpha_plus = 1\nalpha_minus = 1\n",
            "[driver]\nfamily = stable_one_sided\nalpha_exp = 0.5\nalpha_plus = 2\nalpha_minus = 1\n",
        ];
        for text in specs {
            let spec = Config::parse(text).unwrap().section("driver").unwrap().subordinator_spec().unwrap();
            let rendered = subordinator_spec_to_config(&spec, "driver");
            let again = Config::parse(&rendered)
                .unwrap()
                .section("driver")
                .unwrap()
                .subordinator_spec()
                .unwrap();
            assert_eq!(spec, again, "{text}");
        }
    }

    #[test]
    fn jump_law_from_config() {
        let cfg = Config::parse(
            "[driver]\nfamily = deterministic_linear\nslope = 1\nalpha_plus = 2\nalpha_minus = 1\n[jumps]\nplus_law = exponential\nplus_mean = 1.5\nminus_law = uniform\nminus_lo = 0\nminus_hi = 2\n",
        )
        .unwrap();
        let spec = cfg.section("driver").unwrap().subordinator_spec().unwrap();
        let jumps = cfg.section("jumps").unwrap().jump_law(&spec).unwrap();
        assert!((jumps.mix_weight - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(jumps.plus_law, crate::ofi::SizeDist::Exponential { mean: 1.5 });
        // unknown law names are rejected with the key in the message
        let bad = Config::parse("[jumps]\nplus_law = pareto\n").unwrap();
        let err = bad.section("jumps").unwrap().size_dist("plus_").unwrap_err();
        assert!(err.to_string().contains("plus_law"));
    }
}

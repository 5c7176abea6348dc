//! Plain-text `key = value` configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored. Recognized keys:
//!
//! | key         | value                                                            |
//! |-------------|------------------------------------------------------------------|
//! | `input`     | path of a `z,d,y,r` CSV file                                     |
//! | `scenario`  | comma-separated scenario names                                   |
//! | `family`    | comma-separated outcome families for the two-step fit            |
//! | `method`    | `odn`, `li` or `both`                                            |
//! | `bootstrap` | bootstrap replicates per fit, at least 100                       |
//! | `levels`    | comma-separated interval levels in (0, 1)                        |
//! | `seed`      | unsigned 64-bit integer                                          |
//! | `out`       | output directory                                                 |
//! | `threads`   | worker threads                                                   |
//! | `n`         | simulated sample size                                            |
//! | `reps`      | Monte-Carlo replicates                                           |
//! | `delta`     | comma-separated sensitivity parameters in (0, 0.45]              |
//! | `complete`  | `true` to simulate without missing outcomes                      |

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use cace_core::simulation::Method;
use cace_core::{Error, OutcomeFamily, Result};

pub const KEYS: [&str; 13] = [
    "input", "scenario", "family", "method", "bootstrap", "levels", "seed", "out", "threads", "n", "reps", "delta",
    "complete",
];

/// Raw settings with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: BTreeMap<String, (String, u64)>,
}

/// Parses configuration text. Unknown and repeated keys are errors.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let mut cfg = ConfigFile::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Parse {
                line,
                message: format!("expected key = value, found {content:?}"),
            });
        };
        let key = key.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Parse {
                line,
                message: format!("unknown key {key:?}"),
            });
        }
        if let Some((_, first)) = cfg.entries.get(&key) {
            return Err(Error::Parse {
                line,
                message: format!("{key} already set on line {first}"),
            });
        }
        cfg.entries.insert(key, (value.trim().to_string(), line));
    }
    Ok(cfg)
}

/// Which estimators a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Odn,
    Li,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            Self::Odn => vec![Method::Odn],
            Self::Li => vec![Method::Li],
            Self::Both => vec![Method::Odn, Method::Li],
        }
    }
}

impl FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "odn" => Ok(Self::Odn),
            "li" => Ok(Self::Li),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("method must be odn, li or both, got {other:?}"))),
        }
    }
}

/// Settings shared by every command, after merging defaults, the config file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub input: Option<PathBuf>,
    pub scenarios: Vec<String>,
    pub families: Vec<OutcomeFamily>,
    pub method: MethodChoice,
    pub bootstrap: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub deltas: Vec<f64>,
    pub complete: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            input: None,
            scenarios: Vec::new(),
            families: vec![OutcomeFamily::HomoNormal],
            method: MethodChoice::Odn,
            bootstrap: 1000,
            levels: vec![0.95, 0.90],
            seed: 1,
            out: PathBuf::from("."),
            threads: None,
            n: None,
            reps: None,
            deltas: Vec::new(),
            complete: false,
        }
    }
}

fn list<T>(value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub fn parse_family(s: &str) -> Result<OutcomeFamily> {
    OutcomeFamily::from_name(s).ok_or_else(|| Error::Config(format!("unknown family {s:?}")))
}

impl AnalysisConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "scenario" => self.scenarios = list(value, |s| Ok(s.to_string()))?,
            "family" => self.families = list(value, parse_family)?,
            "method" => self.method = value.parse()?,
            "bootstrap" => self.bootstrap = number(key, value)?,
            "levels" => self.levels = list(value, |s| number(key, s))?,
            "seed" => self.seed = number(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "threads" => self.threads = Some(number(key, value)?),
            "n" => self.n = Some(number(key, value)?),
            "reps" => self.reps = Some(number(key, value)?),
            "delta" => self.deltas = list(value, |s| number(key, s))?,
            "complete" => self.complete = number(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every entry of a parsed file; errors point at the offending line.
    pub fn apply(&mut self, file: &ConfigFile) -> Result<()> {
        for (key, (value, line)) in &file.entries {
            self.set(key, value).map_err(|e| Error::Parse {
                line: *line,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Checks the settings every command relies on.
    pub fn validate(&self) -> Result<()> {
        if self.input.is_some() && !self.scenarios.is_empty() {
            return Err(Error::Config("give either an input file or a scenario, not both".into()));
        }
        if self.bootstrap < 100 {
            return Err(Error::Config(format!("bootstrap must be at least 100, got {}", self.bootstrap)));
        }
        if self.levels.is_empty() {
            return Err(Error::Config("no interval levels".into()));
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::Config(format!("interval level {l} not in (0, 1)")));
        }
        if self.families.is_empty() {
            return Err(Error::Config("no outcome family".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_applies() {
        let text = "# study\nscenario = homo_normal, LI1\nbootstrap=200\nlevels = 0.95\nmethod = both # trailing\n";
        let file = parse_config(text).unwrap();
        let mut cfg = AnalysisConfig::default();
        cfg.apply(&file).unwrap();
        assert_eq!(cfg.scenarios, vec!["homo_normal", "LI1"]);
        assert_eq!(cfg.bootstrap, 200);
        assert_eq!(cfg.levels, vec![0.95]);
        assert_eq!(cfg.method, MethodChoice::Both);
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, want) in [
            ("seed = 1\nnonsense\n", 2),
            ("\n\ncolour = red\n", 3),
            ("seed = 1\nseed = 2\n", 2),
        ] {
            match parse_config(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        let file = parse_config("n = 10\nreps = many\n").unwrap();
        match AnalysisConfig::default().apply(&file) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation() {
        let mut cfg = AnalysisConfig {
            bootstrap: 99,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.bootstrap = 100;
        cfg.levels = vec![1.0];
        assert!(cfg.validate().is_err());
        cfg.levels = vec![0.9];
        cfg.input = Some("x.csv".into());
        cfg.scenarios = vec!["homo_normal".into()];
        assert!(cfg.validate().is_err());
    }
}

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::learner::{LearnerConfig, Method};
use crate::loanenv::LoanConfig;
use crate::synthenv::{Mechanism, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Synthetic,
    SyntheticNoisy,
    SyntheticSoftmax,
    SyntheticCoarse,
    Loan,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Synthetic,
        Scenario::SyntheticNoisy,
        Scenario::SyntheticSoftmax,
        Scenario::SyntheticCoarse,
        Scenario::Loan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Synthetic => "synthetic",
            Scenario::SyntheticNoisy => "synthetic_noisy",
            Scenario::SyntheticSoftmax => "synthetic_softmax",
            Scenario::SyntheticCoarse => "synthetic_coarse",
            Scenario::Loan => "loan",
        }
    }

    pub fn is_synthetic(self) -> bool {
        self != Scenario::Loan
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

/// Everything needed to reproduce a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub learner: LearnerConfig,
    pub synthetic: SynthConfig,
    pub loan: LoanConfig,
}

impl ExperimentConfig {
    pub fn preset(scenario: Scenario) -> Self {
        let mut synthetic = SynthConfig::default();
        let mut learner = LearnerConfig::synthetic();
        let mut methods = Method::ALL.to_vec();
        match scenario {
            Scenario::Synthetic => {}
            Scenario::SyntheticNoisy => synthetic.mechanism = Mechanism::Noisy,
            Scenario::SyntheticSoftmax => synthetic.mechanism = Mechanism::Softmax,
            Scenario::SyntheticCoarse => {
                synthetic.true_levels = 15;
                synthetic.n_levels = 10;
                synthetic.cost_span = Some(4.0);
                learner.epochs = 180;
                learner.warmup = 90;
            }
            Scenario::Loan => {
                learner = LearnerConfig::loan();
                methods = vec![Method::Cutoff, Method::Vanilla, Method::Strategic];
            }
        }
        Self {
            scenario,
            methods,
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("runs").join(scenario.name()),
            learner,
            synthetic,
            loan: LoanConfig::default(),
        }
    }

    /// Parses a configuration file. Keys left out take the values of the
    /// preset named by `scenario`; unknown keys are errors.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| Error::Config(format!("config syntax: {e}")))?;
        Self::from_table(table, &[])
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let table: Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_table(table, overrides)
    }

    /// Preset for `scenario` with `key=value` overrides applied.
    pub fn from_overrides(scenario: Scenario, overrides: &[String]) -> Result<Self> {
        let mut table = Table::new();
        table.insert("scenario".into(), Value::String(scenario.name().into()));
        Self::from_table(table, overrides)
    }

    fn from_table(mut user: Table, overrides: &[String]) -> Result<Self> {
        for item in overrides {
            apply_override(&mut user, item)?;
        }
        let scenario = match user.get("scenario") {
            None => Scenario::Synthetic,
            Some(Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("scenario must be a string, got {other}"))),
        };
        let mut merged = Table::try_from(Self::preset(scenario)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A copy with `key=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let table = Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("need at least one method and one seed".into()));
        }
        for (k, m) in self.methods.iter().enumerate() {
            if self.methods[..k].contains(m) {
                return Err(Error::Config(format!("method `{m}` listed twice")));
            }
        }
        for (k, s) in self.seeds.iter().enumerate() {
            if self.seeds[..k].contains(s) {
                return Err(Error::Config(format!("seed {s} listed twice")));
            }
        }
        self.learner.validate()?;
        if self.scenario.is_synthetic() {
            self.synthetic.validate()?;
            let expected = match self.scenario {
                Scenario::SyntheticNoisy => Some(Mechanism::Noisy),
                Scenario::SyntheticSoftmax => Some(Mechanism::Softmax),
                _ => None,
            };
            if let Some(m) = expected.filter(|&m| m != self.synthetic.mechanism) {
                return Err(Error::Config(format!(
                    "scenario {} expects mechanism {m:?}, found {:?}",
                    self.scenario, self.synthetic.mechanism
                )));
            }
        } else {
            self.loan.validate()?;
        }
        Ok(())
    }
}

fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Applies `a.b.c=value`. The value is read as TOML when it parses and as a
/// bare string otherwise.
fn apply_override(table: &mut Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{item}` has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut at = table;
    for key in &keys[..keys.len() - 1] {
        let entry = at.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
        at = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override `{item}`: `{key}` is not a table"))),
        };
    }
    at.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

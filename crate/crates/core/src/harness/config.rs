use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::LabelKind;
use crate::error::{Error, Result};
use crate::metrics::Regime;
use crate::model::{HeadMode, Paradigm, TrainConfig};
use crate::selection::{Aggregation, SelectionConfig, Strategy};
use crate::spotting::NmsConfig;

/// How many clips each AL step annotates, as a percent of the training universe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Schedule {
    Fixed(f64),
    /// 1% below 15% labeled, 2% below 25%, 5% below 40%, then 10%.
    Adaptive,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Fixed(p) => write!(f, "fixed:{p}"),
            Schedule::Adaptive => write!(f, "adaptive"),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(Schedule::Adaptive);
        }
        let pct = s
            .strip_prefix("fixed:")
            .ok_or_else(|| Error::config(format!("unknown schedule {s:?}")))?
            .trim_end_matches('%')
            .parse::<f64>()
            .map_err(|e| Error::config(format!("schedule {s:?}: {e}")))?;
        if !(pct > 0.0 && pct <= 100.0) {
            return Err(Error::config(format!("schedule percent {pct} not in (0, 100]")));
        }
        Ok(Schedule::Fixed(pct))
    }
}

impl TryFrom<String> for Schedule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Schedule> for String {
    fn from(s: Schedule) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Simulated,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    /// Stop once the curve's Avg-mAP reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_avg_map: Option<f64>,
    /// Stop after this many training rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ALConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset: PathBuf,
    pub seed: u64,
    pub selection: SelectionConfig,
    pub schedule: Schedule,
    pub head_mode: HeadMode,
    pub train: TrainConfig,
    pub oracle: OracleKind,
    /// Seconds to wait for a remote batch; absent waits forever.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_timeout_secs: Option<u64>,
    pub label_kind: LabelKind,
    pub regime: Regime,
    pub nms: NmsConfig,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default)]
    pub restart_on_divergence: bool,
    #[serde(default = "default_true")]
    pub write_checkpoints: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            name: None,
            dataset: PathBuf::from("dataset.ndjson"),
            seed: 0,
            selection: SelectionConfig::new(Strategy::Em, Aggregation::Max),
            schedule: Schedule::Adaptive,
            head_mode: HeadMode::Frame,
            train: TrainConfig {
                max_epochs: 20,
                ..TrainConfig::fast()
            },
            oracle: OracleKind::Simulated,
            oracle_timeout_secs: None,
            label_kind: LabelKind::Full,
            regime: Regime::Loose,
            nms: NmsConfig {
                window: 5.0,
                ..NmsConfig::default()
            },
            stop: StopConfig::default(),
            restart_on_divergence: false,
            write_checkpoints: true,
        }
    }
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match self.label_kind {
            LabelKind::Unlabeled => {
                return Err(Error::config("label_kind must be weak or full"));
            }
            LabelKind::Weak if self.head_mode == HeadMode::Frame => {
                return Err(Error::config(
                    "weak labels carry no timestamps; the frame head cannot train on them",
                ));
            }
            _ => {}
        }
        if let Some(t) = self.stop.target_avg_map {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::config("target_avg_map must be in (0, 1]"));
            }
        }
        if self.stop.max_steps == Some(0) {
            return Err(Error::config("max_steps must be >= 1"));
        }
        if !(self.nms.window > 0.0) {
            return Err(Error::config("nms window must be > 0"));
        }
        if self.train.paradigm == Paradigm::Continual && self.train.bootstrap_epochs == 0 {
            return Err(Error::config("continual training needs bootstrap_epochs >= 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ALConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; a relative dataset path resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        if config.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                config.dataset = dir.join(&config.dataset);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short label for reports, e.g. `em-max-adaptive`.
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let strategy = match self.selection.strategy {
            Strategy::Rs => "rs",
            Strategy::Um => "um",
            Strategy::Em => "em",
        };
        let agg = match self.selection.aggregation {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        };
        if self.selection.strategy == Strategy::Rs {
            format!("{strategy}-{}", self.schedule)
        } else {
            format!("{strategy}-{agg}-{}", self.schedule)
        }
    }
}

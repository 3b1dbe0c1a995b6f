//! Run configuration: one TOML file holding everything a run depends on.
//!
//! ```toml
//! seed = 7
//! model_preset = "default"   # or a full [model] table, not both
//!
//! [paths]
//! corpus = "data/fixture"
//! cache = "data/cqt-cache"   # optional
//! out = "runs/fixture-7"
//!
//! [split]                    # optional; defaults to an 80/10/10 share
//! train = 14
//! valid = 3
//! test = 3
//!
//! [train]
//! epochs = 10
//! ```
//!
//! The copy saved in the run directory is fully resolved: explicit split
//! sizes, an explicit `[model]` table and `train.seed == seed`.

use std::fmt;
use std::path::{Path, PathBuf};

use ipt_core::dataset::SplitSizes;
use ipt_core::model::ModelConfig;
use ipt_core::pipeline::CorpusLayout;
use ipt_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_preset: Option<String>,
    pub paths: Paths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSizes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Every problem found in a configuration, reported together.
#[derive(Debug)]
pub struct ConfigProblems(pub Vec<ipt_core::Error>);

impl fmt::Display for ConfigProblems {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration problem(s)", self.0.len())?;
        for p in &self.0 {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigProblems {}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigProblems> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigProblems(vec![ipt_core::Error::config("<file>", e.to_string())]))?;
        let explicit_train_seed = raw
            .get("train")
            .and_then(|t| t.get("seed"))
            .and_then(|s| s.as_integer());
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigProblems(vec![ipt_core::Error::config("<file>", e.to_string())]))?;
        if let Some(s) = explicit_train_seed {
            if s != cfg.seed as i64 {
                return Err(ConfigProblems(vec![ipt_core::Error::config(
                    "train.seed",
                    format!("{s} conflicts with the top-level seed {}; set only `seed`", cfg.seed),
                )]));
            }
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ipt_core::Error::io(path, e))?;
        Ok(Self::from_toml(&text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    /// The architecture this run uses.
    pub fn model_config(&self) -> Result<ModelConfig, ipt_core::Error> {
        match (&self.model, &self.model_preset) {
            (Some(_), Some(_)) => Err(ipt_core::Error::config(
                "model_preset",
                "give either `model_preset` or a `[model]` table, not both",
            )),
            (Some(m), None) => Ok(m.clone()),
            (None, Some(name)) => ModelConfig::preset(name),
            (None, None) => Ok(ModelConfig::default()),
        }
    }

    pub fn layout(&self) -> CorpusLayout {
        CorpusLayout::new(&self.paths.corpus)
    }

    /// Split sizes for a corpus of `n` tracks.
    pub fn split_sizes(&self, n: usize) -> SplitSizes {
        self.split.unwrap_or_else(|| default_split(n))
    }

    /// Checks everything that can be checked without touching audio and
    /// returns the resolved configuration.
    pub fn resolve(&self) -> Result<RunConfig, ConfigProblems> {
        let mut problems = Vec::new();
        let model = match self.model_config() {
            Ok(m) => {
                problems.extend(m.problems());
                Some(m)
            }
            Err(e) => {
                problems.push(e);
                None
            }
        };
        problems.extend(self.train.problems());
        let mut split = self.split;
        let layout = self.layout();
        if !layout.metadata_path().is_file() {
            problems.push(ipt_core::Error::config(
                "paths.corpus",
                format!("{} has no metadata.csv", self.paths.corpus.display()),
            ));
        } else {
            match layout.metadata() {
                Ok(metas) => {
                    let sizes = self.split_sizes(metas.len());
                    if sizes.total() != metas.len() {
                        problems.push(ipt_core::Error::config(
                            "split",
                            format!(
                                "sizes {}+{}+{} do not add up to the {} corpus tracks",
                                sizes.train,
                                sizes.valid,
                                sizes.test,
                                metas.len()
                            ),
                        ));
                    } else if sizes.train == 0 || sizes.valid == 0 {
                        problems.push(ipt_core::Error::config("split", "train and valid need at least one track each"));
                    }
                    split = Some(sizes);
                }
                Err(e) => problems.push(ipt_core::Error::config("paths.corpus", e.to_string())),
            }
        }
        if !problems.is_empty() {
            return Err(ConfigProblems(problems));
        }
        Ok(RunConfig {
            seed: self.seed,
            model_preset: None,
            paths: self.paths.clone(),
            split,
            model,
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
        })
    }
}

/// 80/10/10, with at least one validation track when there are two or more.
pub fn default_split(n: usize) -> SplitSizes {
    let mut valid = (n as f64 * 0.1).round() as usize;
    if n >= 2 {
        valid = valid.max(1);
    }
    let test = (n as f64 * 0.1).round() as usize;
    let test = test.min(n - valid);
    SplitSizes::new(n - valid - test, valid, test)
}

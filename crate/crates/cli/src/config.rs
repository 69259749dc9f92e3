//! Run configuration: one JSON document, with command-line overrides.

use std::path::{Path, PathBuf};

use colortraj::eval::Target;
use colortraj::net::IMAGE_SIZE;
use colortraj::{BasisConfig, EvalSelector, SplitMode, TrainConfig, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_world() -> WorldConfig {
    WorldConfig::cookie_default()
}

fn default_cutoff() -> usize {
    colortraj::signal::DEFAULT_CUTOFF
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("colortraj-out")
}

fn default_mode() -> SplitMode {
    SplitMode::AllUnseen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Evaluation conditions; the world's default condition when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSelector>,
    #[serde(default = "default_mode")]
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            eval: None,
            mode: SplitMode::AllUnseen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_world")]
    pub world: WorldConfig,
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub target: Target,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: default_world(),
            cutoff: default_cutoff(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            basis: BasisConfig::default(),
            target: Target::Smoothed,
            output_dir: default_output_dir(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub cutoff: Option<usize>,
    pub mode: Option<SplitMode>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// `--seed` reseeds the world, the split draw and training together.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.world.seed = seed;
            self.train.seed = seed;
        }
        if let Some(c) = o.cutoff {
            self.cutoff = c;
        }
        if let Some(m) = o.mode {
            self.split.mode = m;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |field: &str, msg: String| Err(CliError::Usage(format!("invalid config field {field}: {msg}")));
        if self.cutoff == 0 {
            return invalid("cutoff", "must be at least 1".into());
        }
        if let Err(e) = self.world.validate() {
            return invalid("world", e.to_string());
        }
        if self.world.image_size != IMAGE_SIZE {
            return invalid(
                "world.image_size",
                format!(
                    "the image encoder takes {IMAGE_SIZE}x{IMAGE_SIZE} rasters, got {}",
                    self.world.image_size
                ),
            );
        }
        if let Err(e) = self.train.validate() {
            return invalid("train", e.to_string());
        }
        if let Err(e) = self.basis.validate() {
            return invalid("basis", e);
        }
        if let Some(EvalSelector::Fraction(f)) = &self.split.eval {
            if !(*f > 0.0 && *f < 1.0) {
                return invalid(
                    "split.eval.fraction",
                    format!("must lie strictly between 0 and 1, got {f}"),
                );
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return invalid("output_dir", "must not be empty".into());
        }
        Ok(())
    }

    pub fn eval_selector(&self) -> EvalSelector {
        self.split
            .eval
            .clone()
            .unwrap_or_else(|| EvalSelector::Conditions(vec![self.world.default_eval_condition()]))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

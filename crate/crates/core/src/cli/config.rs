//! Run configuration: a TOML file with optional sections, overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::PlantedSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::presets::Preset;
use crate::rescale::GainPolicy;
use crate::taxonomy::{Boundaries, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuerySet {
    #[default]
    All,
    /// Positions from `generated_start` on.
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub queries: QuerySet,
    pub generated_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub lengths: Vec<usize>,
    pub reps: usize,
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            lengths: vec![256, 512],
            reps: 31,
            warmup: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    #[default]
    Boundaries,
    Thresholds,
    Gains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    /// Number of planted models; model `i` uses seed `seed + i`.
    pub models: usize,
    /// Inputs averaged per model for boundary and threshold sweeps.
    pub inputs: usize,
    /// Copy-task samples per model per cell for gain sweeps.
    pub samples: usize,
    /// First-axis values; empty means every layer (boundaries) or a default grid.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Boundaries,
            models: 1,
            inputs: 10,
            samples: 200,
            x: Vec::new(),
            y: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub top_k: usize,
}

impl Default for InferSection {
    fn default() -> Self {
        Self { top_k: 5 }
    }
}

/// Fully resolved configuration. Its TOML serialization is what report
/// headers hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub model_path: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub planted: Option<PlantedSpec>,
    #[serde(default)]
    pub partition: PartitionSection,
    pub boundaries: Option<Boundaries>,
    pub thresholds: Option<Thresholds>,
    pub policy: Option<GainPolicy>,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub infer: InferSection,
    /// Planted head lists were drawn by `banded = true` and follow the seed.
    #[serde(skip)]
    pub banded: bool,
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub model_path: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn parse_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{}: {e}", path.display()))
}

impl RunConfig {
    /// Parses TOML text. `[planted]` accepts `banded = true` in place of
    /// explicit head lists, and takes its seed from the top-level `seed`.
    pub fn from_toml_str(src: &str, path: &Path) -> Result<Self> {
        let mut table: toml::Table = src.parse().map_err(|e| parse_error(path, e))?;
        let mut banded = false;
        let top = table.get("seed").and_then(|v| v.as_integer()).unwrap_or(0);
        if let Some(toml::Value::Table(p)) = table.get_mut("planted") {
            if let Some(v) = p.remove("seed") {
                if v.as_integer() != Some(top) {
                    return Err(parse_error(path, "[planted] takes its seed from the top-level `seed`"));
                }
            }
            if let Some(v) = p.remove("banded") {
                banded = v.as_bool().ok_or_else(|| parse_error(path, "`banded` must be a boolean"))?;
            }
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e| parse_error(path, e))?;
        if let Some(m) = cfg.model.take() {
            cfg.model = Some(m.normalize());
        }
        if let Some(p) = &mut cfg.planted {
            if banded {
                let m = cfg
                    .model
                    .as_ref()
                    .ok_or_else(|| parse_error(path, "`banded = true` needs a [model] section"))?;
                if !(p.perception.is_empty() && p.reasoning.is_empty() && p.decoy_visual.is_empty() && p.decoy_text.is_empty()) {
                    return Err(parse_error(path, "`banded = true` cannot be combined with explicit head lists"));
                }
                let b = PlantedSpec::banded(m.num_layers, m.num_heads, cfg.seed);
                p.perception = b.perception;
                p.reasoning = b.reasoning;
                p.decoy_visual = b.decoy_visual;
                p.decoy_text = b.decoy_text;
            }
            p.seed = cfg.seed;
        }
        cfg.banded = banded;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src, path)
    }

    /// Applies flag overrides. A preset replaces boundaries, thresholds and
    /// policy. A new seed re-draws planted head lists only when they came
    /// from `banded = true`; explicit lists keep their heads.
    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
            if let Some(p) = &mut self.planted {
                p.seed = s;
                if let (true, Some(m)) = (self.banded, &self.model) {
                    let b = PlantedSpec::banded(m.num_layers, m.num_heads, s);
                    p.perception = b.perception;
                    p.reasoning = b.reasoning;
                    p.decoy_visual = b.decoy_visual;
                    p.decoy_text = b.decoy_text;
                }
            }
        }
        if let Some(pr) = o.preset {
            let v = pr.values();
            self.boundaries = Some(v.boundaries);
            self.thresholds = Some(v.thresholds);
            self.policy = Some(pr.policy());
        }
        if o.model_path.is_some() {
            self.model_path.clone_from(&o.model_path);
        }
        if o.out.is_some() {
            self.out.clone_from(&o.out);
        }
        self
    }

    /// Checks every hyperparameter present; `num_layers` bounds the boundaries when known.
    pub fn validate(&self, num_layers: Option<usize>) -> Result<()> {
        if let Some(m) = &self.model {
            m.validate()?;
            if let Some(p) = &self.planted {
                p.validate(m)?;
            }
        }
        if let Some(t) = &self.thresholds {
            t.validate()?;
        }
        if let (Some(b), Some(l)) = (&self.boundaries, num_layers.or(self.model.as_ref().map(|m| m.num_layers))) {
            b.validate(l)?;
        }
        if let Some(p) = &self.policy {
            p.validate()?;
        }
        if self.bench.lengths.is_empty() || self.bench.lengths.contains(&0) {
            return Err(Error::InvalidConfig("[bench] lengths must be non-empty and positive".into()));
        }
        if self.bench.reps == 0 {
            return Err(Error::InvalidConfig("[bench] reps must be positive".into()));
        }
        if self.sweep.models == 0 {
            return Err(Error::InvalidConfig("[sweep] models must be positive".into()));
        }
        Ok(())
    }

    /// TOML of the hyperparameters, without file locations.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.model_path = None;
        toml::to_string(&c).expect("run config serializes")
    }

    pub fn require_boundaries(&self) -> Result<Boundaries> {
        self.boundaries
            .ok_or_else(|| Error::InvalidConfig("missing [boundaries] (or pass --preset)".into()))
    }

    pub fn require_thresholds(&self) -> Result<Thresholds> {
        self.thresholds
            .ok_or_else(|| Error::InvalidConfig("missing [thresholds] (or pass --preset)".into()))
    }

    pub fn require_policy(&self) -> Result<GainPolicy> {
        self.policy
            .clone()
            .ok_or_else(|| Error::InvalidConfig("missing [policy] (or pass --preset)".into()))
    }

    pub fn require_model(&self) -> Result<ModelConfig> {
        self.model
            .clone()
            .ok_or_else(|| Error::InvalidConfig("missing [model] section".into()))
    }
}

/// A token sequence file: a `vision START END` line (0-based, end
/// exclusive) and whitespace-separated token ids. `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputFile {
    pub tokens: Vec<usize>,
    pub vision: std::ops::Range<usize>,
}

impl InputFile {
    pub fn parse(src: &str, path: &Path) -> Result<Self> {
        let mut vision = None;
        let mut tokens = Vec::new();
        for (no, raw) in src.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |why: String| Error::format(path, format!("line {}: {why}", no + 1));
            let mut words = line.split_whitespace().peekable();
            if words.peek() == Some(&"vision") {
                words.next();
                let nums: Vec<&str> = words.collect();
                if nums.len() != 2 || vision.is_some() {
                    return Err(bad("expected a single `vision START END` line".into()));
                }
                let parse = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
                vision = Some(parse(nums[0])?..parse(nums[1])?);
                continue;
            }
            for w in words {
                tokens.push(w.parse::<usize>().map_err(|e| bad(format!("token {w:?}: {e}")))?);
            }
        }
        let vision = vision.ok_or_else(|| Error::format(path, "missing `vision START END` line"))?;
        if tokens.is_empty() {
            return Err(Error::format(path, "no token ids"));
        }
        Ok(Self { tokens, vision })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src, path)
    }

    pub fn render(&self) -> String {
        let ids: Vec<String> = self.tokens.iter().map(|t| t.to_string()).collect();
        format!("vision {} {}\n{}\n", self.vision.start, self.vision.end, ids.join(" "))
    }
}

//! Pipeline configuration file (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/pima"
//!
//! [data]
//! builtin = "pima"        # or: path = "x.csv", label = "y"; or: [data.purchase]
//! split = 0.8
//! scaling = "minmax"      # or "none"
//!
//! [target]
//! epochs = 200
//!
//! [synth]
//! method = "hill"         # or "gan"
//! records_per_class = 1000
//!
//! [shadow]
//! kind = "tree"           # or "fca"
//! ```
//!
//! Every key is optional except the data source. Unknown keys are errors.
//! Errors carry the 1-based line of the offending key when it can be found.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cluster::PurchaseShape;
use super::ingest::{builtin_schema, Schema, BUILTIN};
use crate::gansynth::GeneratorConfig;
use crate::hillsynth::HillConfig;
use crate::netcore::{Optimizer, TrainConfig};
use crate::shadow_tree::TreeParams;

#[derive(Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    None,
    #[default]
    Minmax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Hill,
    Gan,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hill => "hill",
            Method::Gan => "gan",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowKind {
    #[default]
    Tree,
    Fca,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSet {
    /// Held-out split of the original data.
    #[default]
    Test,
    /// Freshly synthesized records, labelled by the target.
    Synth,
}

fn default_output() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub shadow: ShadowConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_split() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub ignore: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purchase: Option<PurchaseShape>,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub scaling: Scaling,
}

impl DataConfig {
    pub fn builtin(name: &str) -> DataConfig {
        DataConfig {
            builtin: Some(name.into()),
            path: None,
            label: None,
            features: None,
            ignore: Vec::new(),
            purchase: None,
            split: default_split(),
            scaling: Scaling::Minmax,
        }
    }

    pub fn purchase(shape: PurchaseShape) -> DataConfig {
        DataConfig {
            builtin: None,
            purchase: Some(shape),
            ..DataConfig::builtin("")
        }
    }

    /// Schema for a CSV source; `None` for generated data.
    pub fn schema(&self) -> Option<Schema> {
        if let Some(b) = &self.builtin {
            return builtin_schema(b);
        }
        self.path.as_ref()?;
        Some(Schema {
            label: self.label.clone().unwrap_or_default(),
            features: self.features.clone(),
            ignore: self.ignore.clone(),
        })
    }

    /// Short name used in reports.
    pub fn name(&self) -> String {
        if let Some(b) = &self.builtin {
            b.clone()
        } else if let Some(p) = &self.path {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into())
        } else if let Some(s) = &self.purchase {
            format!("purchase-{}f-{}c", s.features, s.classes)
        } else {
            "data".into()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    /// Hidden widths; empty means one layer of twice the feature count.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TargetConfig {
            hidden: Vec::new(),
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
        }
    }
}

impl TargetConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: Optimizer::adam(),
            seed,
        }
    }

    pub fn layer_sizes(&self, features: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![features];
        if self.hidden.is_empty() {
            sizes.push(2 * features);
        } else {
            sizes.extend(&self.hidden);
        }
        sizes.push(classes);
        sizes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HillSection {
    /// Defaults to `max(1, features / 2)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    pub k_min: usize,
    pub rej_max: usize,
    pub query_budget: u64,
    pub restarts: usize,
}

impl Default for HillSection {
    fn default() -> Self {
        let h = HillConfig::for_features(2);
        HillSection {
            k_max: None,
            k_min: h.k_min,
            rej_max: h.rej_max,
            query_budget: h.query_budget,
            restarts: h.restarts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSection {
    /// Defaults to the feature count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_size: Option<usize>,
    /// Defaults to one layer of twice the feature count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub soft_target: f64,
    pub ensembles: usize,
    /// Drop generated records below `conf_min` before fitting the shadow.
    pub filter_confidence: bool,
}

impl Default for GanSection {
    fn default() -> Self {
        let g = GeneratorConfig::for_features(1);
        GanSection {
            noise_size: None,
            hidden: None,
            epochs: g.epochs,
            batch_size: g.batch_size,
            learning_rate: g.learning_rate,
            soft_target: g.soft_target,
            ensembles: 1,
            filter_confidence: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub method: Method,
    pub records_per_class: usize,
    pub conf_min: f64,
    pub hill: HillSection,
    pub gan: GanSection,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            method: Method::Hill,
            records_per_class: 1000,
            conf_min: 0.7,
            hill: HillSection::default(),
            gan: GanSection::default(),
        }
    }
}

impl SynthConfig {
    pub fn hill_config(&self, features: usize, seed: u64) -> HillConfig {
        let base = HillConfig::for_features(features);
        HillConfig {
            conf_min: self.conf_min,
            k_max: self.hill.k_max.unwrap_or(base.k_max),
            k_min: self.hill.k_min,
            rej_max: self.hill.rej_max,
            query_budget: self.hill.query_budget,
            restarts: self.hill.restarts,
            seed,
        }
    }

    pub fn generator_config(&self, features: usize, seed: u64) -> GeneratorConfig {
        let base = GeneratorConfig::for_features(features);
        GeneratorConfig {
            noise_size: self.gan.noise_size.unwrap_or(base.noise_size),
            hidden: self.gan.hidden.clone().unwrap_or(base.hidden),
            epochs: self.gan.epochs,
            batch_size: self.gan.batch_size,
            learning_rate: self.gan.learning_rate,
            soft_target: self.gan.soft_target,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowConfig {
    pub kind: ShadowKind,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_impurity_decrease: f64,
    /// Per-class concept limit for FCA lattices.
    pub max_concepts: usize,
    pub permutation_repeats: usize,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        let t = TreeParams::default();
        ShadowConfig {
            kind: ShadowKind::Tree,
            max_depth: t.max_depth,
            min_samples_split: t.min_samples_split,
            min_impurity_decrease: t.min_impurity_decrease,
            max_concepts: 200_000,
            permutation_repeats: 5,
        }
    }
}

impl ShadowConfig {
    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_impurity_decrease: self.min_impurity_decrease,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub set: EvalSet,
    /// Records per class when `set = "synth"`.
    pub synth_records_per_class: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            set: EvalSet::Test,
            synth_records_per_class: 200,
        }
    }
}

/// 1-based line of `key` inside table `section` (`""` for the root table).
pub fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl PipelineConfig {
    /// Config with defaults for a data source.
    pub fn new(data: DataConfig) -> PipelineConfig {
        PipelineConfig {
            seed: 0,
            output_dir: default_output(),
            data,
            target: TargetConfig::default(),
            synth: SynthConfig::default(),
            shadow: ShadowConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate_with(Some(text))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("{}: {e}", path.display()),
        })?;
        PipelineConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with(None)
    }

    fn validate_with(&self, text: Option<&str>) -> Result<(), ConfigError> {
        let err = |section: &str, key: &str, message: String| ConfigError {
            line: text.and_then(|t| key_line(t, section, key)),
            message,
        };
        let d = &self.data;
        let sources = [d.builtin.is_some(), d.path.is_some(), d.purchase.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if sources != 1 {
            return Err(err(
                "data",
                "builtin",
                "exactly one of data.builtin, data.path or [data.purchase] must be set".into(),
            ));
        }
        if let Some(b) = &d.builtin {
            if !BUILTIN.contains(&b.as_str()) {
                return Err(err(
                    "data",
                    "builtin",
                    format!("unknown builtin dataset `{b}` (expected one of {BUILTIN:?})"),
                ));
            }
        }
        if d.path.is_some() && d.label.is_none() {
            return Err(err("data", "path", "data.path requires data.label".into()));
        }
        if let Some(p) = &d.purchase {
            if p.users == 0 || p.features == 0 || p.classes < 2 {
                return Err(err(
                    "data.purchase",
                    "users",
                    "purchase shape needs users, features > 0 and classes >= 2".into(),
                ));
            }
        }
        if !(d.split > 0.0 && d.split < 1.0) {
            return Err(err("data", "split", format!("split {} must lie in (0, 1)", d.split)));
        }
        let t = &self.target;
        if t.hidden.contains(&0) {
            return Err(err("target", "hidden", "hidden widths must be positive".into()));
        }
        if t.batch_size == 0 {
            return Err(err("target", "batch_size", "batch_size must be positive".into()));
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(err("target", "learning_rate", "learning_rate must be >= 0".into()));
        }
        let s = &self.synth;
        if s.records_per_class == 0 {
            return Err(err("synth", "records_per_class", "records_per_class must be positive".into()));
        }
        if !(s.conf_min > 0.0 && s.conf_min < 1.0) {
            return Err(err("synth", "conf_min", "conf_min must lie in (0, 1)".into()));
        }
        if s.hill.k_max == Some(0) || s.hill.k_min == 0 {
            return Err(err("synth.hill", "k_min", "k_min and k_max must be positive".into()));
        }
        if s.gan.ensembles == 0 {
            return Err(err("synth.gan", "ensembles", "ensembles must be positive".into()));
        }
        if s.gan.batch_size == 0 {
            return Err(err("synth.gan", "batch_size", "batch_size must be positive".into()));
        }
        if !(s.gan.soft_target > 0.0 && s.gan.soft_target <= 1.0) {
            return Err(err("synth.gan", "soft_target", "soft_target must lie in (0, 1]".into()));
        }
        let sh = &self.shadow;
        if sh.max_depth == 0 {
            return Err(err("shadow", "max_depth", "max_depth must be at least 1".into()));
        }
        if sh.max_concepts == 0 {
            return Err(err("shadow", "max_concepts", "max_concepts must be positive".into()));
        }
        if self.eval.set == EvalSet::Synth && self.eval.synth_records_per_class == 0 {
            return Err(err(
                "eval",
                "synth_records_per_class",
                "synth_records_per_class must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = PipelineConfig::from_toml("[data]\nbuiltin = \"pima\"\n").unwrap();
        assert_eq!(c.data.split, 0.8);
        assert_eq!(c.synth.conf_min, 0.7);
        assert_eq!(c.shadow.kind, ShadowKind::Tree);
        assert_eq!(c.data.scaling, Scaling::Minmax);
        let again = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_shadow_kind_reports_line() {
        let text = "seed = 1\n[data]\nbuiltin = \"zoo\"\n[shadow]\nkind = \"forest\"\n";
        let e = PipelineConfig::from_toml(text).unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");
        assert!(e.message.contains("forest"), "{e}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "[data]\nbuiltin = \"zoo\"\nsplti = 0.5\n";
        let e = PipelineConfig::from_toml(text).unwrap_err();
        assert_eq!(e.line, Some(3), "{e}");
    }

    #[test]
    fn semantic_errors_report_line() {
        let text = "[data]\nbuiltin = \"zoo\"\n\nsplit = 1.5\n";
        let e = PipelineConfig::from_toml(text).unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.to_string().starts_with("config line 4:"));
        let e = PipelineConfig::from_toml("[data]\nbuiltin = \"income\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = PipelineConfig::from_toml("[data]\nsplit = 0.5\n").unwrap_err();
        assert!(e.message.contains("exactly one"));
    }

    #[test]
    fn purchase_source() {
        let text = "[data.purchase]\nusers = 300\nfeatures = 10\nclasses = 2\n";
        let c = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(c.data.name(), "purchase-10f-2c");
        assert_eq!(c.data.schema(), None);
    }
}

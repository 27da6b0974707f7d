//! `key = value` run configuration: defaults, then a config file, then
//! command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use idxmvs_core::{ModelConfig, TrainConfig, Variant};

use crate::UsageError;

/// Every accepted key with its default.
const KEYS: &[(&str, &str)] = &[
    ("data", ""),
    ("out", "run"),
    ("n_views", "3"),
    ("stride", "1"),
    ("steps", "auto"),
    ("pose_net", "on"),
    ("attention", "on"),
    ("coarse_bins", "64"),
    ("fine_bins", "256"),
    ("lookup_radius", "4"),
    ("pose_step", "auto"),
    ("include_level0", "off"),
    ("feature_channels", "32"),
    ("fusion_channels", "128"),
    ("attention_heads", "4"),
    ("hidden_channels", "64"),
    ("pose_output_scale", "0.01"),
    ("pose_translation", "off"),
    ("prob_predicted_depth", "0.6"),
    ("learning_rate", "1e-4"),
    ("decay_epochs", "4,8"),
    ("decay_factor", "0.5"),
    ("epochs", "10"),
    ("batch_size", "1"),
    ("iterations_train", "12"),
    ("iterations_infer", "24"),
    ("gamma", "0.9"),
    ("clip", "1.0"),
    ("lambda_photo", "1.0"),
    ("seed", "0"),
    ("warmup_epochs_pose", "1"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("eps", "1e-8"),
    ("weight_decay", "1e-4"),
    ("d_min", "0.25"),
    ("d_max", "20"),
];

/// Keys that describe the network and its inference defaults; they are
/// stored next to each checkpoint.
pub const CHECKPOINT_KEYS: &[&str] = &[
    "pose_net",
    "attention",
    "coarse_bins",
    "fine_bins",
    "lookup_radius",
    "include_level0",
    "feature_channels",
    "fusion_channels",
    "attention_heads",
    "hidden_channels",
    "pose_output_scale",
    "pose_translation",
    "prob_predicted_depth",
    "d_min",
    "d_max",
    "iterations_infer",
    "pose_step",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

fn parse_line(line: &str) -> Result<Option<(String, String)>, String> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (k, v) = line.split_once('=').ok_or_else(|| format!("expected key=value, got {line:?}"))?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(UsageError(format!("unknown configuration key {key:?}"))),
        }
    }

    /// `key=value` form, as given to `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), UsageError> {
        match parse_line(pair).map_err(UsageError)? {
            Some((k, v)) => self.set(&k, &v),
            None => Err(UsageError(format!("empty override {pair:?}"))),
        }
    }

    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), UsageError> {
        for (n, line) in text.lines().enumerate() {
            let parsed = parse_line(line).map_err(|e| UsageError(format!("{origin}:{}: {e}", n + 1)))?;
            if let Some((k, v)) = parsed {
                self.set(&k, &v).map_err(|e| UsageError(format!("{origin}:{}: {}", n + 1, e.0)))?;
            }
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_text(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).parse().map_err(|e| UsageError(format!("{key} = {:?}: {e}", self.get(key))))
    }

    fn flag(&self, key: &str) -> Result<bool, UsageError> {
        match self.get(key) {
            "on" | "true" | "yes" | "1" => Ok(true),
            "off" | "false" | "no" | "0" => Ok(false),
            other => Err(UsageError(format!("{key} = {other:?}: expected on or off"))),
        }
    }

    fn auto<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        if self.get(key) == "auto" {
            Ok(None)
        } else {
            self.parsed(key).map(Some)
        }
    }

    pub fn set_variant(&mut self, variant: Variant) {
        let on = |b: bool| if b { "on" } else { "off" };
        self.values.insert("pose_net".into(), on(variant.uses_pose()).into());
        self.values.insert("attention".into(), on(variant.uses_attention()).into());
    }

    pub fn variant(&self) -> Result<Variant, UsageError> {
        match (self.flag("pose_net")?, self.flag("attention")?) {
            (false, false) => Ok(Variant::Base),
            (true, false) => Ok(Variant::Pose),
            (true, true) => Ok(Variant::PoseAttention),
            (false, true) => Err(UsageError("attention = on requires pose_net = on".into())),
        }
    }

    pub fn data(&self) -> Option<PathBuf> {
        Some(self.get("data")).filter(|s| !s.is_empty()).map(PathBuf::from)
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn n_views(&self) -> Result<usize, UsageError> {
        self.parsed("n_views")
    }

    pub fn stride(&self) -> Result<usize, UsageError> {
        self.parsed("stride")
    }

    pub fn steps(&self) -> Result<Option<usize>, UsageError> {
        self.auto("steps")
    }

    pub fn model_config(&self) -> Result<ModelConfig, UsageError> {
        let cfg = ModelConfig {
            variant: self.variant()?,
            feature_channels: self.parsed("feature_channels")?,
            fusion_channels: self.parsed("fusion_channels")?,
            attention_heads: self.parsed("attention_heads")?,
            hidden_channels: self.parsed("hidden_channels")?,
            coarse_bins: self.parsed("coarse_bins")?,
            fine_bins: self.parsed("fine_bins")?,
            lookup_radius: self.parsed("lookup_radius")?,
            include_level0: self.flag("include_level0")?,
            d_min: self.parsed("d_min")?,
            d_max: self.parsed("d_max")?,
            pose_output_scale: self.parsed("pose_output_scale")?,
            pose_translation: self.flag("pose_translation")?,
            prob_predicted_depth: self.parsed("prob_predicted_depth")?,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, UsageError> {
        let decay = self.get("decay_epochs");
        let decay_epochs = decay
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| UsageError(format!("decay_epochs = {decay:?}: {e}"))))
            .collect::<Result<Vec<usize>, _>>()?;
        let cfg = TrainConfig {
            learning_rate: self.parsed("learning_rate")?,
            decay_epochs,
            decay_factor: self.parsed("decay_factor")?,
            epochs: self.parsed("epochs")?,
            batch_size: self.parsed("batch_size")?,
            iterations_train: self.parsed("iterations_train")?,
            iterations_infer: self.parsed("iterations_infer")?,
            gamma: self.parsed("gamma")?,
            clip: self.parsed("clip")?,
            lambda_photo: self.parsed("lambda_photo")?,
            seed: self.parsed("seed")?,
            warmup_epochs_pose: self.parsed("warmup_epochs_pose")?,
            pose_step: self.auto("pose_step")?,
            beta1: self.parsed("beta1")?,
            beta2: self.parsed("beta2")?,
            eps: self.parsed("eps")?,
            weight_decay: self.parsed("weight_decay")?,
            d_min: self.parsed("d_min")?,
            d_max: self.parsed("d_max")?,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }

    /// Zero-based pose-rectification iteration for `iterations` updates.
    pub fn pose_step_for(&self, iterations: usize) -> Result<usize, UsageError> {
        match self.auto::<usize>("pose_step")? {
            None => Ok(iterations / 2),
            Some(t) if t < iterations => Ok(t),
            Some(t) => Err(UsageError(format!("pose_step {t} must be below the iteration count {iterations}"))),
        }
    }

    /// All keys, one `key = value` per line, sorted.
    pub fn render(&self) -> String {
        self.render_keys(|_| true)
    }

    pub fn render_keys(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut s = String::new();
        for (k, v) in self.values.iter().filter(|(k, _)| keep(k)) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

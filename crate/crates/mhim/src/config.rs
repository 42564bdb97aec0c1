//! Run configuration: one flat `key = value` text file (section headers are
//! cosmetic), named presets, CLI overrides, and a stable serialization so a
//! run directory always contains the fully resolved config.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::data::{SplitScheme, SynthConfig};
use crate::models::{LayerChoice, ModelConfig, ModelKind};
use crate::trainer::{TeacherMode, TrainerConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("bad value for key {key}: {value:?} (expected {expected})")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("malformed config line {lineno}: {line:?}")]
    MalformedLine { lineno: usize, line: String },
    #[error("unknown preset: {0} (expected easy or hard)")]
    UnknownPreset(String),
    #[error("invalid value for key {key}: {reason}")]
    Invalid { key: String, reason: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Masking strategy axis of the ablation grid. `None` is the vanilla
/// baseline (no teacher, no masking, no consistency loss).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    None,
    Ham,
    LHam,
    RHam,
    LrHam,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::None,
        Strategy::Ham,
        Strategy::LHam,
        Strategy::RHam,
        Strategy::LrHam,
    ];
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::None => "none",
            Strategy::Ham => "HAM",
            Strategy::LHam => "L-HAM",
            Strategy::RHam => "R-HAM",
            Strategy::LrHam => "LR-HAM",
        };
        write!(f, "{}", s)
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Strategy::None),
            "ham" => Ok(Strategy::Ham),
            "l-ham" | "lham" => Ok(Strategy::LHam),
            "r-ham" | "rham" => Ok(Strategy::RHam),
            "lr-ham" | "lrham" => Ok(Strategy::LrHam),
            _ => Err(format!("unknown strategy {:?}", s)),
        }
    }
}

fn parse_teacher(s: &str) -> std::result::Result<TeacherMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(TeacherMode::None),
        "student-copy" => Ok(TeacherMode::StudentCopy),
        "momentum" => Ok(TeacherMode::Momentum),
        "init" => Ok(TeacherMode::Init),
        "init-momentum" | "init+momentum" => Ok(TeacherMode::InitMomentum),
        _ => Err(format!("unknown teacher mode {:?}", s)),
    }
}

/// Everything one run needs: data generation, model, trainer, masking,
/// splits, and the ablation axes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub split: SplitScheme,
    pub strategy: Strategy,
    pub ablate_strategies: Vec<Strategy>,
    pub ablate_teachers: Vec<TeacherMode>,
    pub ablate_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: SynthConfig::easy(1),
            model: ModelConfig::default(),
            trainer: TrainerConfig {
                seed: 1,
                ..Default::default()
            },
            split: SplitScheme::Holdout {
                train: 0.65,
                val: 0.10,
                test: 0.25,
            },
            strategy: Strategy::Ham,
            ablate_strategies: Strategy::ALL.to_vec(),
            ablate_teachers: vec![TeacherMode::InitMomentum],
            ablate_seeds: vec![1, 2, 3],
        }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        match name {
            "easy" => cfg.data = SynthConfig::easy(cfg.trainer.seed),
            "hard" => cfg.data = SynthConfig::hard(cfg.trainer.seed),
            _ => return Err(ConfigError::UnknownPreset(name.to_string())),
        }
        Ok(cfg)
    }

    /// Parse flat `key = value` text. `[section]` headers and `#` comments
    /// are skipped; keys apply on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::MalformedLine {
                    lineno: lineno + 1,
                    line: raw.to_string(),
                }
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set a single key. Unknown keys are errors that name the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                expected,
            })
        }
        let bad = |expected: &'static str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected,
        };
        match key {
            "seed" => {
                let s: u64 = num(key, value, "unsigned integer")?;
                self.trainer.seed = s;
                self.data.seed = s;
            }
            "n_bags" => self.data.n_bags = num(key, value, "count")?,
            "instances_min" => self.data.instances_min = num(key, value, "count")?,
            "instances_max" => self.data.instances_max = num(key, value, "count")?,
            "d_in" => {
                let d: usize = num(key, value, "count")?;
                self.data.d_in = d;
                self.model.d_in = d;
            }
            "positive_instance_ratio" => {
                self.data.positive_instance_ratio = num(key, value, "real in (0, 1]")?
            }
            "separation" => self.data.separation = num(key, value, "non-negative real")?,
            "hard_fraction" => self.data.hard_fraction = num(key, value, "real in [0, 1)")?,
            "label_balance" => self.data.label_balance = num(key, value, "real in (0, 1)")?,
            "model_kind" => {
                self.model.kind = match value {
                    "gated" => ModelKind::Gated,
                    "msa" => ModelKind::Msa,
                    _ => return Err(bad("gated or msa")),
                }
            }
            "d" => self.model.d = num(key, value, "count")?,
            "d_h" => self.model.d_h = num(key, value, "count")?,
            "heads" => self.model.heads = num(key, value, "count")?,
            "layers" => self.model.layers = num(key, value, "count")?,
            "attn_layer" => {
                self.model.attn_layer = match value {
                    "first" => LayerChoice::First,
                    "last" => LayerChoice::Last,
                    v => LayerChoice::Index(num(key, v, "first, last, or layer index")?),
                }
            }
            "lambda_ema" => self.trainer.lambda_ema = num(key, value, "real in [0, 1]")?,
            "tau" => self.trainer.tau = num(key, value, "positive real")?,
            "alpha" => self.trainer.alpha = num(key, value, "non-negative real")?,
            "lr0" => self.trainer.lr0 = num(key, value, "positive real")?,
            "weight_decay" => self.trainer.weight_decay = num(key, value, "non-negative real")?,
            "max_epochs" => self.trainer.max_epochs = num(key, value, "count")?,
            "patience" => self.trainer.patience = num(key, value, "count")?,
            "pretrain_epochs" => self.trainer.pretrain_epochs = num(key, value, "count")?,
            "teacher" => {
                self.trainer.teacher = parse_teacher(value).map_err(|_| {
                    bad("none, student-copy, momentum, init, or init-momentum")
                })?
            }
            "beta_h" => self.trainer.mask.beta_h = num(key, value, "percentage in [0, 100]")?,
            "beta_l" => self.trainer.mask.beta_l = num(key, value, "percentage in [0, 100]")?,
            "beta_r" => self.trainer.mask.beta_r = num(key, value, "percentage in [0, 100]")?,
            "randomized_ham" => {
                self.trainer.mask.randomized_ham = num(key, value, "true or false")?
            }
            "decay_high" => self.trainer.mask.decay_high = num(key, value, "true or false")?,
            "strategy" => {
                self.strategy = value.parse().map_err(|_| {
                    bad("none, HAM, L-HAM, R-HAM, or LR-HAM")
                })?
            }
            "split" => {
                // Keeps the current ratios / fold counts where they apply.
                self.split = match value {
                    "holdout" => match self.split {
                        SplitScheme::Holdout { .. } => self.split,
                        _ => SplitScheme::Holdout {
                            train: 0.65,
                            val: 0.10,
                            test: 0.25,
                        },
                    },
                    "kfold" => match self.split {
                        SplitScheme::KFold { .. } => self.split,
                        _ => SplitScheme::KFold { k: 3, repeats: 3 },
                    },
                    _ => return Err(bad("holdout or kfold")),
                }
            }
            "train_ratio" | "val_ratio" | "test_ratio" => {
                let v: f64 = num(key, value, "real in (0, 1)")?;
                if let SplitScheme::Holdout { train, val, test } = &mut self.split {
                    match key {
                        "train_ratio" => *train = v,
                        "val_ratio" => *val = v,
                        _ => *test = v,
                    }
                } else {
                    return Err(ConfigError::Invalid {
                        key: key.to_string(),
                        reason: "only valid with split = holdout".to_string(),
                    });
                }
            }
            "folds" | "repeats" => {
                let v: usize = num(key, value, "count >= 2")?;
                if let SplitScheme::KFold { k, repeats } = &mut self.split {
                    match key {
                        "folds" => *k = v,
                        _ => *repeats = v,
                    }
                } else {
                    return Err(ConfigError::Invalid {
                        key: key.to_string(),
                        reason: "only valid with split = kfold".to_string(),
                    });
                }
            }
            "ablate_strategies" => {
                self.ablate_strategies = split_list(value)
                    .map(|v| v.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("comma-separated strategies"))?
            }
            "ablate_teachers" => {
                self.ablate_teachers = split_list(value)
                    .map(parse_teacher)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("comma-separated teacher modes"))?
            }
            "ablate_seeds" => {
                self.ablate_seeds = split_list(value)
                    .map(|v| v.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("comma-separated unsigned integers"))?
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Semantic validation beyond per-key parsing; errors name the key.
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: String| {
            Err(ConfigError::Invalid {
                key: key.to_string(),
                reason,
            })
        };
        if self.data.instances_min == 0 || self.data.instances_min > self.data.instances_max {
            return fail(
                "instances_min",
                format!(
                    "range [{}, {}] is empty or starts at zero",
                    self.data.instances_min, self.data.instances_max
                ),
            );
        }
        if !(0.0 < self.data.positive_instance_ratio && self.data.positive_instance_ratio <= 1.0) {
            return fail(
                "positive_instance_ratio",
                format!("{} is outside (0, 1]", self.data.positive_instance_ratio),
            );
        }
        if !(0.0..1.0).contains(&self.data.hard_fraction) {
            return fail(
                "hard_fraction",
                format!("{} is outside [0, 1)", self.data.hard_fraction),
            );
        }
        if !(0.0 < self.data.label_balance && self.data.label_balance < 1.0) {
            return fail(
                "label_balance",
                format!("{} is outside (0, 1)", self.data.label_balance),
            );
        }
        if self.data.separation < 0.0 {
            return fail("separation", format!("{} is negative", self.data.separation));
        }
        if self.model.d_in != self.data.d_in {
            return fail(
                "d_in",
                format!(
                    "model input dim {} does not match data dim {}",
                    self.model.d_in, self.data.d_in
                ),
            );
        }
        for (key, v) in [("d", self.model.d), ("d_h", self.model.d_h)] {
            if v == 0 {
                return fail(key, "must be positive".to_string());
            }
        }
        if self.model.heads == 0 || self.model.d % self.model.heads != 0 {
            return fail(
                "heads",
                format!("{} must be positive and divide d = {}", self.model.heads, self.model.d),
            );
        }
        if self.model.layers == 0 {
            return fail("layers", "must be positive".to_string());
        }
        if let LayerChoice::Index(i) = self.model.attn_layer {
            if i >= self.model.layers {
                return fail(
                    "attn_layer",
                    format!("index {} out of range for {} layers", i, self.model.layers),
                );
            }
        }
        if !(0.0..=1.0).contains(&self.trainer.lambda_ema) {
            return fail(
                "lambda_ema",
                format!("{} is outside [0, 1]", self.trainer.lambda_ema),
            );
        }
        if self.trainer.tau <= 0.0 {
            return fail("tau", format!("{} is not positive", self.trainer.tau));
        }
        if self.trainer.alpha < 0.0 {
            return fail("alpha", format!("{} is negative", self.trainer.alpha));
        }
        if self.trainer.lr0 <= 0.0 {
            return fail("lr0", format!("{} is not positive", self.trainer.lr0));
        }
        if self.trainer.weight_decay < 0.0 {
            return fail(
                "weight_decay",
                format!("{} is negative", self.trainer.weight_decay),
            );
        }
        if self.trainer.max_epochs == 0 {
            return fail("max_epochs", "must be positive".to_string());
        }
        if let Err(reason) = self.trainer.mask.validate(self.data.instances_min) {
            return fail("beta_h", reason);
        }
        match self.split {
            SplitScheme::Holdout { train, val, test } => {
                let sum = train + val + test;
                if (sum - 1.0).abs() > 1e-9 || train <= 0.0 || val <= 0.0 || test <= 0.0 {
                    return fail(
                        "train_ratio",
                        format!("ratios {}/{}/{} must be positive and sum to 1", train, val, test),
                    );
                }
            }
            SplitScheme::KFold { k, repeats } => {
                if k < 2 {
                    return fail("folds", format!("{} must be at least 2", k));
                }
                if repeats == 0 {
                    return fail("repeats", "must be positive".to_string());
                }
            }
        }
        if self.ablate_seeds.is_empty() {
            return fail("ablate_seeds", "at least one seed required".to_string());
        }
        if self.ablate_strategies.is_empty() {
            return fail("ablate_strategies", "at least one strategy required".to_string());
        }
        if self.ablate_teachers.is_empty() {
            return fail("ablate_teachers", "at least one teacher mode required".to_string());
        }
        Ok(())
    }

    /// Trainer configuration for one (strategy, teacher) cell: the strategy
    /// zeroes the inactive mask components; vanilla additionally drops the
    /// teacher and the consistency loss.
    pub fn cell_trainer(&self, strategy: Strategy, teacher: TeacherMode) -> TrainerConfig {
        let mut t = self.trainer.clone();
        t.teacher = teacher;
        match strategy {
            Strategy::None => {
                t.teacher = TeacherMode::None;
                t.alpha = 0.0;
                t.mask.beta_h = 0.0;
                t.mask.beta_l = 0.0;
                t.mask.beta_r = 0.0;
            }
            Strategy::Ham => {
                t.mask.beta_l = 0.0;
                t.mask.beta_r = 0.0;
            }
            Strategy::LHam => t.mask.beta_r = 0.0,
            Strategy::RHam => t.mask.beta_l = 0.0,
            Strategy::LrHam => {}
        }
        t
    }

    /// Canonical serialization: stable key order, round-trips through
    /// [`RunConfig::apply_text`] exactly.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.trainer.seed);
        let _ = writeln!(s, "strategy = {}", self.strategy);
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "n_bags = {}", self.data.n_bags);
        let _ = writeln!(s, "instances_min = {}", self.data.instances_min);
        let _ = writeln!(s, "instances_max = {}", self.data.instances_max);
        let _ = writeln!(s, "d_in = {}", self.data.d_in);
        let _ = writeln!(
            s,
            "positive_instance_ratio = {}",
            self.data.positive_instance_ratio
        );
        let _ = writeln!(s, "separation = {}", self.data.separation);
        let _ = writeln!(s, "hard_fraction = {}", self.data.hard_fraction);
        let _ = writeln!(s, "label_balance = {}", self.data.label_balance);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "model_kind = {}", self.model.kind);
        let _ = writeln!(s, "d = {}", self.model.d);
        let _ = writeln!(s, "d_h = {}", self.model.d_h);
        let _ = writeln!(s, "heads = {}", self.model.heads);
        let _ = writeln!(s, "layers = {}", self.model.layers);
        let attn_layer = match self.model.attn_layer {
            LayerChoice::First => "first".to_string(),
            LayerChoice::Last => "last".to_string(),
            LayerChoice::Index(i) => i.to_string(),
        };
        let _ = writeln!(s, "attn_layer = {}", attn_layer);
        let _ = writeln!(s, "\n[trainer]");
        let _ = writeln!(s, "teacher = {}", self.trainer.teacher);
        let _ = writeln!(s, "lambda_ema = {}", self.trainer.lambda_ema);
        let _ = writeln!(s, "tau = {}", self.trainer.tau);
        let _ = writeln!(s, "alpha = {}", self.trainer.alpha);
        let _ = writeln!(s, "lr0 = {}", self.trainer.lr0);
        let _ = writeln!(s, "weight_decay = {}", self.trainer.weight_decay);
        let _ = writeln!(s, "max_epochs = {}", self.trainer.max_epochs);
        let _ = writeln!(s, "patience = {}", self.trainer.patience);
        let _ = writeln!(s, "pretrain_epochs = {}", self.trainer.pretrain_epochs);
        let _ = writeln!(s, "\n[mask]");
        let _ = writeln!(s, "beta_h = {}", self.trainer.mask.beta_h);
        let _ = writeln!(s, "beta_l = {}", self.trainer.mask.beta_l);
        let _ = writeln!(s, "beta_r = {}", self.trainer.mask.beta_r);
        let _ = writeln!(s, "randomized_ham = {}", self.trainer.mask.randomized_ham);
        let _ = writeln!(s, "decay_high = {}", self.trainer.mask.decay_high);
        let _ = writeln!(s, "\n[split]");
        match self.split {
            SplitScheme::Holdout { train, val, test } => {
                let _ = writeln!(s, "split = holdout");
                let _ = writeln!(s, "train_ratio = {}", train);
                let _ = writeln!(s, "val_ratio = {}", val);
                let _ = writeln!(s, "test_ratio = {}", test);
            }
            SplitScheme::KFold { k, repeats } => {
                let _ = writeln!(s, "split = kfold");
                let _ = writeln!(s, "folds = {}", k);
                let _ = writeln!(s, "repeats = {}", repeats);
            }
        }
        let _ = writeln!(s, "\n[ablate]");
        let strategies: Vec<String> =
            self.ablate_strategies.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "ablate_strategies = {}", strategies.join(","));
        let teachers: Vec<String> =
            self.ablate_teachers.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "ablate_teachers = {}", teachers.join(","));
        let seeds: Vec<String> = self.ablate_seeds.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "ablate_seeds = {}", seeds.join(","));
        s
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|v| !v.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        RunConfig::preset("easy").unwrap().validate().unwrap();
        RunConfig::preset("hard").unwrap().validate().unwrap();
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(matches!(
            RunConfig::preset("medium"),
            Err(ConfigError::UnknownPreset(_))
        ));
    }

    #[test]
    fn unknown_key_names_the_key() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("bogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{}", err);
    }

    #[test]
    fn sections_and_comments_skipped() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\n[trainer]\n\nalpha = 0.25\n")
            .unwrap();
        assert_eq!(cfg.trainer.alpha, 0.25);
    }

    #[test]
    fn bad_value_names_key_and_expectation() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("tau", "warm").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tau") && msg.contains("warm"), "{}", msg);
    }

    #[test]
    fn seed_sets_both_trainer_and_data() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "77").unwrap();
        assert_eq!(cfg.trainer.seed, 77);
        assert_eq!(cfg.data.seed, 77);
    }

    #[test]
    fn render_roundtrip_is_identity() {
        let mut cfg = RunConfig::preset("hard").unwrap();
        cfg.set("seed", "9").unwrap();
        cfg.set("model_kind", "msa").unwrap();
        cfg.set("beta_l", "5").unwrap();
        cfg.set("split", "kfold").unwrap();
        cfg.set("folds", "4").unwrap();
        let text = cfg.render();
        let mut reparsed = RunConfig::default();
        reparsed.apply_text(&text).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(text, reparsed.render());
    }

    #[test]
    fn strategy_parsing_accepts_paper_spellings() {
        assert_eq!("LR-HAM".parse::<Strategy>().unwrap(), Strategy::LrHam);
        assert_eq!("r-ham".parse::<Strategy>().unwrap(), Strategy::RHam);
        assert_eq!(parse_teacher("init+momentum").unwrap(), TeacherMode::InitMomentum);
    }

    #[test]
    fn cell_trainer_strategy_masks() {
        let cfg = {
            let mut c = RunConfig::default();
            c.trainer.mask.beta_h = 10.0;
            c.trainer.mask.beta_l = 5.0;
            c.trainer.mask.beta_r = 5.0;
            c
        };
        let vanilla = cfg.cell_trainer(Strategy::None, TeacherMode::InitMomentum);
        assert_eq!(vanilla.teacher, TeacherMode::None);
        assert_eq!(vanilla.alpha, 0.0);
        assert_eq!(
            (vanilla.mask.beta_h, vanilla.mask.beta_l, vanilla.mask.beta_r),
            (0.0, 0.0, 0.0)
        );
        let ham = cfg.cell_trainer(Strategy::Ham, TeacherMode::Momentum);
        assert_eq!((ham.mask.beta_h, ham.mask.beta_l, ham.mask.beta_r), (10.0, 0.0, 0.0));
        assert_eq!(ham.teacher, TeacherMode::Momentum);
        let rham = cfg.cell_trainer(Strategy::RHam, TeacherMode::Init);
        assert_eq!((rham.mask.beta_h, rham.mask.beta_l, rham.mask.beta_r), (10.0, 0.0, 5.0));
        let lrham = cfg.cell_trainer(Strategy::LrHam, TeacherMode::InitMomentum);
        assert_eq!(
            (lrham.mask.beta_h, lrham.mask.beta_l, lrham.mask.beta_r),
            (10.0, 5.0, 5.0)
        );
    }

    #[test]
    fn validation_rejects_incompatible_dims() {
        let mut cfg = RunConfig::default();
        cfg.model.d_in = 32;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("d_in"));
    }

    #[test]
    fn validation_rejects_total_masking() {
        let mut cfg = RunConfig::default();
        cfg.trainer.mask.beta_h = 50.0;
        cfg.trainer.mask.beta_l = 50.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn holdout_keys_rejected_under_kfold() {
        let mut cfg = RunConfig::default();
        cfg.set("split", "kfold").unwrap();
        let err = cfg.set("train_ratio", "0.5").unwrap_err();
        assert!(err.to_string().contains("train_ratio"));
    }
}

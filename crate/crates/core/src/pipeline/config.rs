//! Experiment configuration as flat `key = value` pairs.
//!
//! Every key mirrors a command-line flag of the same name. Files may hold
//! blank lines and `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::classifier::{LossReduction, Readout};
use crate::error::{Error, Result};
use crate::fsio::read_to_string;
use crate::gsae::StructuralInputKind;
use crate::mixup::MixupConfig;
use crate::sampling::{DifficultyPolicy, SubsetToggles};

/// How generated pairs are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Acc,
    Unc,
    Rand,
}

impl Policy {
    pub fn difficulty(self) -> Option<DifficultyPolicy> {
        match self {
            Policy::Acc => Some(DifficultyPolicy::Acc),
            Policy::Unc => Some(DifficultyPolicy::Unc),
            Policy::Rand => None,
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acc" => Ok(Policy::Acc),
            "unc" => Ok(Policy::Unc),
            "rand" | "random" => Ok(Policy::Rand),
            other => Err(Error::Usage(format!("unknown policy {other:?}"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Acc => "acc",
            Policy::Unc => "unc",
            Policy::Rand => "rand",
        })
    }
}

/// Whether decoded adjacencies are binarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binarize {
    /// Binarize exactly when every input adjacency is 0/1-valued.
    Auto,
    Always,
    Never,
}

impl FromStr for Binarize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Binarize::Auto),
            "true" | "yes" | "1" => Ok(Binarize::Always),
            "false" | "no" | "0" => Ok(Binarize::Never),
            other => Err(Error::Usage(format!(
                "binarize must be auto, true or false, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Binarize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Binarize::Auto => "auto",
            Binarize::Always => "true",
            Binarize::Never => "false",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub name: Option<String>,
    pub out_dir: PathBuf,
    pub labels_per_class: usize,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub policy: Policy,
    pub toggles: SubsetToggles,
    pub readout: Readout,
    pub lambda_gdm: f64,
    pub loss_reduction: LossReduction,
    pub pretrain_epochs: usize,
    pub main_epochs: usize,
    pub gsae_epochs: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub binarize: Binarize,
    pub keep_isolated: bool,
    pub aug_multiplier: f64,
    pub hidden_dim: usize,
    pub mp_layers: usize,
    pub gsae_hidden_dim: usize,
    pub gsae_embed_dim: usize,
    pub structural_input: StructuralInputKind,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            name: None,
            out_dir: PathBuf::from("gdm-out"),
            labels_per_class: 10,
            folds: 10,
            repeats: 3,
            seed: 0,
            policy: Policy::Acc,
            toggles: SubsetToggles::default(),
            readout: Readout::Mean,
            lambda_gdm: 1.0,
            loss_reduction: LossReduction::Mean,
            pretrain_epochs: 100,
            main_epochs: 800,
            gsae_epochs: 200,
            learning_rate: 1e-2,
            alpha: 1.0,
            beta: 1.0,
            epsilon: 0.1,
            binarize: Binarize::Auto,
            keep_isolated: true,
            aug_multiplier: 1.0,
            hidden_dim: 64,
            mp_layers: 4,
            gsae_hidden_dim: 32,
            gsae_embed_dim: 32,
            structural_input: StructuralInputKind::DegreeDiagonal,
            threads: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Usage(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl ExperimentConfig {
    /// Every recognized key.
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "name",
        "out-dir",
        "labels-per-class",
        "folds",
        "repeats",
        "seed",
        "policy",
        "no-low",
        "no-med",
        "no-high",
        "readout",
        "lambda-gdm",
        "loss-reduction",
        "pretrain-epochs",
        "main-epochs",
        "gsae-epochs",
        "lr",
        "alpha",
        "beta",
        "epsilon",
        "binarize",
        "keep-isolated",
        "aug-multiplier",
        "hidden-dim",
        "mp-layers",
        "gsae-hidden-dim",
        "gsae-embed-dim",
        "structural-input",
        "threads",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "name" => self.name = Some(value.to_string()),
            "out-dir" => self.out_dir = PathBuf::from(value),
            "labels-per-class" => self.labels_per_class = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "policy" => self.policy = value.parse()?,
            "no-low" => self.toggles.low = !parse_bool(key, value)?,
            "no-med" => self.toggles.medium = !parse_bool(key, value)?,
            "no-high" => self.toggles.high = !parse_bool(key, value)?,
            "readout" => self.readout = value.parse()?,
            "lambda-gdm" => self.lambda_gdm = parse(key, value)?,
            "loss-reduction" => self.loss_reduction = value.parse()?,
            "pretrain-epochs" => self.pretrain_epochs = parse(key, value)?,
            "main-epochs" => self.main_epochs = parse(key, value)?,
            "gsae-epochs" => self.gsae_epochs = parse(key, value)?,
            "lr" => self.learning_rate = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "binarize" => self.binarize = value.parse()?,
            "keep-isolated" => self.keep_isolated = parse_bool(key, value)?,
            "aug-multiplier" => self.aug_multiplier = parse(key, value)?,
            "hidden-dim" => self.hidden_dim = parse(key, value)?,
            "mp-layers" => self.mp_layers = parse(key, value)?,
            "gsae-hidden-dim" => self.gsae_hidden_dim = parse(key, value)?,
            "gsae-embed-dim" => self.gsae_embed_dim = parse(key, value)?,
            "structural-input" => self.structural_input = value.parse()?,
            "threads" => self.threads = parse(key, value)?,
            other => return Err(Error::Usage(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!(
                    "{}:{}: expected key = value, found {line:?}",
                    origin.display(),
                    n + 1
                ))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Usage(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = read_to_string(path).map_err(|e| match e {
            Error::MissingFile(p) => Error::Usage(format!("config file {} not found", p.display())),
            other => other,
        })?;
        self.apply_text(&text, path)
    }

    /// Current values under their keys; [`ExperimentConfig::set`] accepts
    /// every entry back.
    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &'static str, v: String| {
            m.insert(k, v);
        };
        if let Some(d) = &self.dataset {
            put("dataset", d.display().to_string());
        }
        if let Some(n) = &self.name {
            put("name", n.clone());
        }
        put("out-dir", self.out_dir.display().to_string());
        put("labels-per-class", self.labels_per_class.to_string());
        put("folds", self.folds.to_string());
        put("repeats", self.repeats.to_string());
        put("seed", self.seed.to_string());
        put("policy", self.policy.to_string());
        put("no-low", (!self.toggles.low).to_string());
        put("no-med", (!self.toggles.medium).to_string());
        put("no-high", (!self.toggles.high).to_string());
        put("readout", self.readout.to_string());
        put("lambda-gdm", format!("{:?}", self.lambda_gdm));
        put("loss-reduction", self.loss_reduction.to_string());
        put("pretrain-epochs", self.pretrain_epochs.to_string());
        put("main-epochs", self.main_epochs.to_string());
        put("gsae-epochs", self.gsae_epochs.to_string());
        put("lr", format!("{:?}", self.learning_rate));
        put("alpha", format!("{:?}", self.alpha));
        put("beta", format!("{:?}", self.beta));
        put("epsilon", format!("{:?}", self.epsilon));
        put("binarize", self.binarize.to_string());
        put("keep-isolated", self.keep_isolated.to_string());
        put("aug-multiplier", format!("{:?}", self.aug_multiplier));
        put("hidden-dim", self.hidden_dim.to_string());
        put("mp-layers", self.mp_layers.to_string());
        put("gsae-hidden-dim", self.gsae_hidden_dim.to_string());
        put("gsae-embed-dim", self.gsae_embed_dim.to_string());
        put("structural-input", self.structural_input.to_string());
        put("threads", self.threads.to_string());
        m
    }

    /// Mixup settings; `binary_input` resolves [`Binarize::Auto`].
    pub fn mixup(&self, binary_input: bool) -> MixupConfig {
        MixupConfig {
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
            binarize: match self.binarize {
                Binarize::Auto => binary_input,
                Binarize::Always => true,
                Binarize::Never => false,
            },
            keep_isolated: self.keep_isolated,
        }
    }

    /// Generated graphs per enabled subset for `n` labeled graphs.
    pub fn per_subset(&self, n: usize) -> usize {
        (self.aug_multiplier * n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |msg: String| Err(Error::Usage(msg));
        if self.folds < 2 {
            return usage(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.repeats == 0 {
            return usage("repeats must be at least 1".into());
        }
        if self.labels_per_class == 0 {
            return usage("labels-per-class must be at least 1".into());
        }
        if !(self.aug_multiplier >= 0.0 && self.aug_multiplier.is_finite()) {
            return usage(format!(
                "aug-multiplier must be non-negative, got {}",
                self.aug_multiplier
            ));
        }
        if !(self.lambda_gdm >= 0.0 && self.lambda_gdm.is_finite()) {
            return usage(format!(
                "lambda-gdm must be non-negative, got {}",
                self.lambda_gdm
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return usage(format!("lr must be positive, got {}", self.learning_rate));
        }
        if self.hidden_dim == 0
            || self.mp_layers == 0
            || self.gsae_hidden_dim == 0
            || self.gsae_embed_dim == 0
        {
            return usage("model widths and depth must be positive".into());
        }
        self.mixup(true)
            .validate()
            .map_err(|e| Error::Usage(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!(
            (c.pretrain_epochs, c.gsae_epochs, c.main_epochs),
            (100, 200, 800)
        );
        assert_eq!(c.learning_rate, 1e-2);
        assert_eq!(
            (c.alpha, c.beta, c.epsilon, c.lambda_gdm),
            (1.0, 1.0, 0.1, 1.0)
        );
        assert!(c.validate().is_ok());
    }

    #[test]
    fn pairs_round_trip_through_set() {
        let mut c = ExperimentConfig::default();
        c.apply_text(
            "policy = unc\nno-med = true # comment\n\nepsilon=0.25\nreadout = max\ndataset = /d\n",
            Path::new("x"),
        )
        .unwrap();
        let mut back = ExperimentConfig::default();
        for (k, v) in c.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
        assert!(!c.toggles.medium && c.toggles.low);
        assert_eq!(c.to_pairs().len() + 1, ExperimentConfig::KEYS.len());
    }

    #[test]
    fn malformed_lines_are_usage_errors() {
        let mut c = ExperimentConfig::default();
        let e = c.apply_text("folds 3\n", Path::new("cfg")).unwrap_err();
        assert!(matches!(e, Error::Usage(ref m) if m.contains("cfg:1")));
        assert!(matches!(c.set("bogus", "1"), Err(Error::Usage(_))));
        assert!(matches!(c.set("folds", "three"), Err(Error::Usage(_))));
        assert!(matches!(c.set("policy", "best"), Err(Error::Usage(_))));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let c = ExperimentConfig {
            folds: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            epsilon: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn binarize_follows_the_data_by_default() {
        let c = ExperimentConfig::default();
        assert!(c.mixup(true).binarize);
        assert!(!c.mixup(false).binarize);
    }
}

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fedguard_core::attack::AttackSpec;
use fedguard_core::data::PartitionScheme;
use fedguard_core::federation::{FederationConfig, LossStat, Mode, ThresholdRule};
use fedguard_core::nn::{paper_cnn, small_mlp, ModelSpec};
use fedguard_core::{Error, Result};

/// Named model architectures; class count comes from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    PaperCnn,
    SmallMlp,
}

impl ModelChoice {
    pub fn spec(self, classes: usize) -> ModelSpec {
        match self {
            ModelChoice::PaperCnn => paper_cnn(classes),
            ModelChoice::SmallMlp => small_mlp(classes),
        }
    }
}

fn default_synthetic_n() -> usize {
    2000
}

fn default_classes() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Seeded Gaussian-blob images; a held-out test split is generated from
    /// an independent stream of the same master seed.
    Synthetic {
        #[serde(default = "default_synthetic_n")]
        n: usize,
        #[serde(default = "default_classes")]
        classes: usize,
    },
    /// IDX image/label file pairs (optionally gzipped). Limits truncate to
    /// the first k samples after loading.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl DatasetConfig {
    pub fn classes(&self) -> usize {
        match *self {
            DatasetConfig::Synthetic { classes, .. } => classes,
            DatasetConfig::Idx { classes, .. } => classes,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DatasetConfig::Synthetic { n, classes } => {
                if classes < 2 {
                    return Err(Error::config(format!(
                        "dataset.classes {classes} must be ≥ 2"
                    )));
                }
                if n < classes {
                    return Err(Error::config(format!(
                        "dataset.n {n} must cover all {classes} classes"
                    )));
                }
            }
            DatasetConfig::Idx {
                classes,
                train_limit,
                test_limit,
                ..
            } => {
                if classes < 2 {
                    return Err(Error::config(format!(
                        "dataset.classes {classes} must be ≥ 2"
                    )));
                }
                for (key, limit) in [
                    ("dataset.train_limit", train_limit),
                    ("dataset.test_limit", test_limit),
                ] {
                    if limit == Some(0) {
                        return Err(Error::config(format!("{key} must be ≥ 1")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The full experiment file: federation knobs plus data, model, attack, and
/// output settings. Every field has a default; `{}` is a valid config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub clients: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    /// The mode to run when compare_modes is false; with compare_modes both
    /// modes run regardless.
    pub mode: Mode,
    pub threshold_rule: ThresholdRule,
    pub master_seed: u64,
    pub threshold_slack: f64,
    pub strict_ban: bool,
    pub resample_each_round: bool,
    pub loss_stat: LossStat,
    pub model: ModelChoice,
    pub dataset: DatasetConfig,
    pub partition: PartitionScheme,
    pub attack: Option<AttackSpec>,
    pub output_dir: PathBuf,
    pub compare_modes: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fed = FederationConfig::default();
        ExperimentConfig {
            clients: fed.clients,
            fraction: fed.fraction,
            local_epochs: fed.local_epochs,
            batch_size: fed.batch_size,
            learning_rate: fed.learning_rate,
            rounds: fed.rounds,
            mode: fed.mode,
            threshold_rule: fed.threshold_rule,
            master_seed: fed.master_seed,
            threshold_slack: fed.threshold_slack,
            strict_ban: fed.strict_ban,
            resample_each_round: fed.resample_each_round,
            loss_stat: fed.loss_stat,
            model: ModelChoice::SmallMlp,
            dataset: DatasetConfig::Synthetic {
                n: default_synthetic_n(),
                classes: default_classes(),
            },
            partition: PartitionScheme::Iid,
            attack: None,
            output_dir: PathBuf::from("out"),
            compare_modes: true,
        }
    }
}

impl ExperimentConfig {
    /// The federation settings for one mode. Worker threads come from the
    /// environment, not the config file, so thread count can never change
    /// what an experiment file means.
    pub fn federation(&self, mode: Mode, worker_threads: usize) -> FederationConfig {
        FederationConfig {
            clients: self.clients,
            fraction: self.fraction,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            rounds: self.rounds,
            mode,
            threshold_rule: self.threshold_rule,
            master_seed: self.master_seed,
            threshold_slack: self.threshold_slack,
            strict_ban: self.strict_ban,
            resample_each_round: self.resample_each_round && mode == Mode::FedAvg,
            loss_stat: self.loss_stat,
            worker_threads,
        }
    }

    /// Modes to execute, in run order.
    pub fn modes(&self) -> Vec<Mode> {
        if self.compare_modes {
            vec![Mode::FedAvg, Mode::Secure]
        } else {
            vec![self.mode]
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.federation(self.mode, 0).validate()?;
        if self.resample_each_round {
            if self.compare_modes {
                return Err(Error::config(
                    "resample_each_round cannot be combined with compare_modes: the \
                     secure run would not accept it"
                        .to_string(),
                ));
            }
            if self.mode != Mode::FedAvg {
                return Err(Error::config(
                    "resample_each_round applies to fedavg mode only".to_string(),
                ));
            }
        }
        self.dataset.validate()?;
        self.partition.validate()?;
        if let Some(atk) = &self.attack {
            atk.validate(self.clients)?;
        }
        Ok(())
    }
}

/// Parses and validates an experiment file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text)
        .map_err(|e| Error::config(format!("config parse error: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_documented_default() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg.clients, 10);
        assert_eq!(cfg.fraction, 1.0);
        assert_eq!(cfg.local_epochs, 10);
        assert_eq!(cfg.batch_size, 124);
        assert_eq!(cfg.learning_rate, 0.1);
        assert_eq!(cfg.rounds, 10);
        assert_eq!(cfg.threshold_rule, ThresholdRule::Median);
        assert_eq!(cfg.model, ModelChoice::SmallMlp);
        assert!(matches!(
            cfg.dataset,
            DatasetConfig::Synthetic { n: 2000, classes: 10 }
        ));
        assert!(matches!(cfg.partition, PartitionScheme::Iid));
        assert!(cfg.attack.is_none());
        assert!(cfg.compare_modes);
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = parse_config(r#"{"learning_rate": -1}"#).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");

        let err = parse_config(r#"{"fraction": 0.0}"#).unwrap_err();
        assert!(err.to_string().contains("fraction"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config(r#"{"modee": 1}"#).unwrap_err();
        assert!(err.to_string().contains("modee"), "{err}");
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = parse_config("{").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line") && msg.contains("column"), "{msg}");
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"{
            "clients": 10,
            "local_epochs": 2,
            "batch_size": 64,
            "rounds": 3,
            "master_seed": 42,
            "model": "small_mlp",
            "dataset": {"kind": "synthetic", "n": 2000, "classes": 10},
            "partition": {"scheme": "non_iid_equal", "shards_per_client": 2},
            "attack": {
                "targets": [1, 2],
                "kind": {"type": "first_layer_noise", "std": 1.0},
                "attack_seed": 7
            },
            "output_dir": "/tmp/x",
            "compare_modes": true
        }"#;
        let cfg = parse_config(text).unwrap();
        let atk = cfg.attack.as_ref().unwrap();
        assert_eq!(atk.targets.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(cfg.modes(), vec![Mode::FedAvg, Mode::Secure]);

        let echoed = serde_json::to_string(&cfg).unwrap();
        let again = parse_config(&echoed).unwrap();
        assert_eq!(serde_json::to_string(&again).unwrap(), echoed);
    }

    #[test]
    fn idx_dataset_parses_with_limits() {
        let text = r#"{
            "dataset": {
                "kind": "idx",
                "train_images": "a", "train_labels": "b",
                "test_images": "c", "test_labels": "d",
                "train_limit": 10000, "test_limit": 2000
            }
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.dataset.classes(), 10);

        let err = parse_config(
            r#"{"dataset": {"kind": "idx",
                "train_images": "a", "train_labels": "b",
                "test_images": "c", "test_labels": "d",
                "train_limit": 0}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("train_limit"), "{err}");
    }

    #[test]
    fn attack_targets_must_be_known_clients() {
        let err = parse_config(
            r#"{"clients": 3, "attack": {
                "targets": [5],
                "kind": {"type": "first_layer_noise", "std": 1.0},
                "attack_seed": 0
            }}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains('5'), "{err}");
    }

    #[test]
    fn single_mode_runs_honor_the_mode_field() {
        let cfg = parse_config(r#"{"compare_modes": false, "mode": "fedavg"}"#).unwrap();
        assert_eq!(cfg.modes(), vec![Mode::FedAvg]);
        let cfg = parse_config(r#"{"compare_modes": false}"#).unwrap();
        assert_eq!(cfg.modes(), vec![Mode::Secure]);
    }
}

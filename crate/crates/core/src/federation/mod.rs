mod engine;
mod scoring;

pub use engine::{
    aggregate, client_update, participants, run_experiment, run_round, select_initial_clients,
    ClientUpdate, ExperimentContext,
};
pub use scoring::{anomaly_scores, flag_anomalous, threshold};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::ClientId;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Fresh clients start with this anomaly score; kept for lineage, no later
/// step reads it.
pub const INITIAL_ANOMALY_SCORE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[serde(rename = "fedavg")]
    FedAvg,
    Secure,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::FedAvg => "fedavg",
            Mode::Secure => "secure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    Median,
    Mean,
}

/// Which statistic a client reports as loss(w) for its upload.
///
/// `EvalAtUpload` evaluates the returned weights on the client's full local
/// data, so tampering between training and upload shows up in the score.
/// `FinalEpochTrainMean` averages the minibatch losses of the last local
/// epoch; it is cheaper but reflects the pre-upload weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossStat {
    EvalAtUpload,
    FinalEpochTrainMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub clients: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    pub mode: Mode,
    pub threshold_rule: ThresholdRule,
    pub master_seed: u64,
    /// Margin added to the threshold rule's output before flagging. The raw
    /// median/mean cut flags roughly half of any honest round, so the margin
    /// separates ordinary loss spread from genuine outliers. Zero restores
    /// the raw rule; +inf disables banning entirely.
    pub threshold_slack: f64,
    /// Drop a flagged client's update from the current round's aggregation
    /// instead of only excluding it from future rounds.
    pub strict_ban: bool,
    /// FedAvg-only: redraw the participant set each round instead of keeping
    /// the round-1 selection.
    pub resample_each_round: bool,
    pub loss_stat: LossStat,
    /// Worker threads for client updates; 0 runs them sequentially. Results
    /// are identical either way.
    pub worker_threads: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            clients: 10,
            fraction: 1.0,
            local_epochs: 10,
            batch_size: 124,
            learning_rate: 0.1,
            rounds: 10,
            mode: Mode::Secure,
            threshold_rule: ThresholdRule::Median,
            master_seed: 0,
            threshold_slack: 0.5,
            strict_ban: false,
            resample_each_round: false,
            loss_stat: LossStat::EvalAtUpload,
            worker_threads: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("clients must be ≥ 1".to_string()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config(format!(
                "fraction {} must lie in (0, 1]",
                self.fraction
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs must be ≥ 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1".to_string()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning_rate {} must be a positive finite number",
                self.learning_rate
            )));
        }
        if self.threshold_slack.is_nan() || self.threshold_slack < 0.0 {
            return Err(Error::config(format!(
                "threshold_slack {} must be ≥ 0 (inf allowed)",
                self.threshold_slack
            )));
        }
        if self.resample_each_round && self.mode != Mode::FedAvg {
            return Err(Error::config(
                "resample_each_round applies to fedavg mode only".to_string(),
            ));
        }
        Ok(())
    }
}

/// One client's standing in a round, as recorded in the audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundReport {
    pub client: ClientId,
    pub loss: f64,
    /// Anomaly score; None in fedavg mode.
    pub score: Option<f64>,
    pub banned_now: bool,
}

/// Immutable record of one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub mode: Mode,
    pub participants: Vec<ClientId>,
    pub clients: Vec<ClientRoundReport>,
    /// Minimum finite participant loss; None in fedavg mode.
    pub sigma: Option<f64>,
    /// Raw output of the threshold rule; None in fedavg mode.
    pub threshold: Option<f64>,
    /// Cut actually applied to scores (rule output + slack).
    pub effective_threshold: Option<f64>,
    pub newly_banned: Vec<ClientId>,
    pub global_loss: f64,
    pub global_accuracy: f64,
}

/// Server-side state across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub params: ModelParams,
    /// Last completed round; 0 before any round ran.
    pub round: usize,
    pub initial_selection: Vec<ClientId>,
    pub banned: BTreeSet<ClientId>,
    pub initial_anomaly_score: f64,
    pub history: Vec<RoundRecord>,
}

/// Progress callbacks emitted by the round engine.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundEvent {
    RoundStarted {
        round: usize,
        mode: Mode,
        participants: Vec<ClientId>,
    },
    ClientFinished {
        round: usize,
        client: ClientId,
        loss: f64,
    },
    ClientBanned {
        round: usize,
        client: ClientId,
        score: f64,
    },
    RoundCompleted {
        round: usize,
        global_loss: f64,
        global_accuracy: f64,
    },
}

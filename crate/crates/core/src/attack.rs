use std::collections::BTreeSet;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ClientId;
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::rng::attack_stream;

/// How a malicious client corrupts its upload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackKind {
    /// Adds zero-mean Gaussian noise to every element of the first
    /// parameterized layer's weight tensor; its bias and all other tensors
    /// are untouched.
    FirstLayerNoise { std: f64 },
    /// Replaces every parameter with a uniform draw from [-scale, scale].
    RandomParams { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub targets: BTreeSet<ClientId>,
    pub kind: AttackKind,
    pub attack_seed: u64,
}

impl AttackSpec {
    pub fn validate(&self, clients: usize) -> Result<()> {
        if let Some(&bad) = self.targets.iter().find(|&&t| t >= clients) {
            return Err(Error::config(format!(
                "attack target {bad} out of range for {clients} clients"
            )));
        }
        match self.kind {
            AttackKind::FirstLayerNoise { std } => {
                if !(std.is_finite() && std >= 0.0) {
                    return Err(Error::config(format!(
                        "first_layer_noise std {std} must be a finite value ≥ 0"
                    )));
                }
            }
            AttackKind::RandomParams { scale } => {
                if !(scale.is_finite() && scale >= 0.0) {
                    return Err(Error::config(format!(
                        "random_params scale {scale} must be a finite value ≥ 0"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_target(&self, client: ClientId) -> bool {
        self.targets.contains(&client)
    }
}

/// Applies the attack to a target client's upload in place. Non-target
/// clients pass through untouched. The corruption stream is derived from
/// (attack_seed, client, round), so repeated calls agree bit-exactly.
pub fn inject(
    params: &mut ModelParams,
    spec: &AttackSpec,
    client: ClientId,
    round: usize,
) -> Result<()> {
    if !spec.is_target(client) {
        return Ok(());
    }
    let mut rng = attack_stream(spec.attack_seed, client, round);
    match spec.kind {
        AttackKind::FirstLayerNoise { std } => {
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::config(format!("first_layer_noise std {std}: {e}")))?;
            let weight = params.first_weight_mut().ok_or_else(|| {
                Error::domain("model has no weight tensor to perturb".to_string())
            })?;
            for w in weight.data_mut() {
                *w += normal.sample(&mut rng);
            }
        }
        AttackKind::RandomParams { scale } => {
            use rand::Rng;
            for entry in params.entries_mut() {
                for w in entry.tensor.data_mut() {
                    *w = if scale == 0.0 {
                        0.0
                    } else {
                        rng.random_range(-scale..scale)
                    };
                }
            }
        }
    }
    Ok(())
}

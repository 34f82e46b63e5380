use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub type ClientId = usize;

/// How the training pool is split across clients.
///
/// Non-IID schemes sort samples by label and allocate contiguous shards, so
/// each client sees few distinct labels. The unequal scheme draws a per-client
/// shard target in [min_shards, max_shards]; shards left over once every
/// client reaches its target are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    Iid,
    NonIidEqual { shards_per_client: usize },
    NonIidUnequal { min_shards: usize, max_shards: usize },
}

impl PartitionScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PartitionScheme::Iid => Ok(()),
            PartitionScheme::NonIidEqual { shards_per_client } => {
                if shards_per_client == 0 {
                    Err(Error::config("shards_per_client must be ≥ 1".to_string()))
                } else {
                    Ok(())
                }
            }
            PartitionScheme::NonIidUnequal {
                min_shards,
                max_shards,
            } => {
                if min_shards == 0 {
                    Err(Error::config("min_shards must be ≥ 1".to_string()))
                } else if max_shards < min_shards {
                    Err(Error::config(format!(
                        "max_shards {max_shards} must be ≥ min_shards {min_shards}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Assignment of sample indices to clients 0..C-1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client_indices(&self, client: ClientId) -> &[usize] {
        &self.assignments[client]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Checks disjointness, the one-sample minimum, and index bounds.
    pub fn check(&self, n_samples: usize) -> Result<()> {
        let mut seen = vec![false; n_samples];
        for (client, indices) in self.assignments.iter().enumerate() {
            if indices.is_empty() {
                return Err(Error::config(format!("client {client} received no samples")));
            }
            for &i in indices {
                if i >= n_samples {
                    return Err(Error::config(format!(
                        "client {client} assigned out-of-range index {i}"
                    )));
                }
                if seen[i] {
                    return Err(Error::config(format!(
                        "sample {i} assigned to more than one client"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    /// Deterministic byte form used for run-summary checksums.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.assignments.len() as u64).to_le_bytes());
        for indices in &self.assignments {
            out.extend_from_slice(&(indices.len() as u64).to_le_bytes());
            for &i in indices {
                out.extend_from_slice(&(i as u64).to_le_bytes());
            }
        }
        out
    }
}

/// Splits a dataset across clients under the given scheme.
pub fn partition(
    dataset: &Dataset,
    scheme: &PartitionScheme,
    clients: usize,
    rng: &mut StreamRng,
) -> Result<PartitionPlan> {
    scheme.validate()?;
    if clients == 0 {
        return Err(Error::config("clients must be ≥ 1".to_string()));
    }
    let n = dataset.len();
    let assignments = match *scheme {
        PartitionScheme::Iid => partition_iid(n, clients, rng)?,
        PartitionScheme::NonIidEqual { shards_per_client } => partition_shards(
            dataset,
            clients,
            clients * shards_per_client,
            &vec![shards_per_client; clients],
            rng,
        )?,
        PartitionScheme::NonIidUnequal {
            min_shards,
            max_shards,
        } => {
            // Per-client shard targets are drawn first, in client-id order,
            // so the plan is a pure function of the RNG stream.
            let targets: Vec<usize> = (0..clients)
                .map(|_| rng.random_range(min_shards..=max_shards))
                .collect();
            partition_shards(dataset, clients, clients * max_shards, &targets, rng)?
        }
    };
    let plan = PartitionPlan { assignments };
    plan.check(n)?;
    Ok(plan)
}

fn partition_iid(n: usize, clients: usize, rng: &mut StreamRng) -> Result<Vec<Vec<usize>>> {
    if n < clients {
        return Err(Error::config(format!(
            "cannot give each of {clients} clients a sample from {n}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let base = n / clients;
    let extra = n % clients;
    let mut out = Vec::with_capacity(clients);
    let mut offset = 0;
    for client in 0..clients {
        let size = base + usize::from(client < extra);
        let mut chunk = indices[offset..offset + size].to_vec();
        chunk.sort_unstable();
        out.push(chunk);
        offset += size;
    }
    Ok(out)
}

/// Shard-based allocation shared by both non-IID schemes: label-sorted
/// indices are cut into `pool` equal shards; every client gets one shard,
/// then remaining shards are dealt uniformly among clients still below their
/// target. Shards left once all targets are met are discarded.
fn partition_shards(
    dataset: &Dataset,
    clients: usize,
    pool: usize,
    targets: &[usize],
    rng: &mut StreamRng,
) -> Result<Vec<Vec<usize>>> {
    let n = dataset.len();
    if n % pool != 0 {
        return Err(Error::config(format!(
            "{n} samples cannot be cut into {pool} equal shards"
        )));
    }
    let shard_size = n / pool;
    if clients > pool {
        return Err(Error::config(format!(
            "{clients} clients cannot each receive one of {pool} shards"
        )));
    }

    // Label sort with ties broken by original index keeps shards deterministic.
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by_key(|&i| (dataset.labels()[i], i));

    let mut deck: Vec<usize> = (0..pool).collect();
    deck.shuffle(rng);

    let mut shard_lists: Vec<Vec<usize>> = vec![Vec::new(); clients];
    let mut counts = vec![0usize; clients];
    for (client, &shard) in deck.iter().take(clients).enumerate() {
        shard_lists[client].push(shard);
        counts[client] = 1;
    }
    for &shard in &deck[clients..] {
        let eligible: Vec<usize> = (0..clients).filter(|&c| counts[c] < targets[c]).collect();
        if eligible.is_empty() {
            break;
        }
        let pick = eligible[rng.random_range(0..eligible.len())];
        shard_lists[pick].push(shard);
        counts[pick] += 1;
    }

    Ok(shard_lists
        .into_iter()
        .map(|shards| {
            let mut indices: Vec<usize> = shards
                .into_iter()
                .flat_map(|s| sorted[s * shard_size..(s + 1) * shard_size].iter().copied())
                .collect();
            indices.sort_unstable();
            indices
        })
        .collect())
}

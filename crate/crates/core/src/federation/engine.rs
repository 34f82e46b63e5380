use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    anomaly_scores, flag_anomalous, threshold, ClientRoundReport, FederationConfig, LossStat,
    Mode, RoundEvent, RoundRecord, ServerState, INITIAL_ANOMALY_SCORE,
};
use crate::attack::{inject, AttackSpec};
use crate::data::{ClientId, Dataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy, dataset_loss, init_params, loss_and_grad, sgd_step, ModelParams, ModelSpec,
};
use crate::numeric::CompensatedSum;
use crate::rng::{client_stream, stream, TAG_INIT, TAG_SELECT};

/// A simulated client: its id and the sample indices it owns.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: ClientId,
    pub indices: Vec<usize>,
}

impl ClientState {
    pub fn n_c(&self) -> usize {
        self.indices.len()
    }
}

/// One client's upload for a round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client: ClientId,
    pub params: ModelParams,
    /// Reported loss statistic; +inf marks a divergent client.
    pub loss: f64,
}

/// Draws the round-1 participant set: m = max(floor(F*C), 1) distinct ids.
pub fn select_initial_clients(
    clients: usize,
    fraction: f64,
    rng: &mut crate::rng::StreamRng,
) -> Result<Vec<ClientId>> {
    if clients == 0 {
        return Err(Error::config("clients must be ≥ 1".to_string()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "fraction {fraction} must lie in (0, 1]"
        )));
    }
    let m = ((fraction * clients as f64).floor() as usize).max(1);
    let mut ids = rand::seq::index::sample(rng, clients, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Participants of a round: the initial selection minus banned clients in
/// secure mode; fedavg ignores bans.
pub fn participants(
    initial: &[ClientId],
    banned: &std::collections::BTreeSet<ClientId>,
    mode: Mode,
) -> Result<Vec<ClientId>> {
    let out: Vec<ClientId> = match mode {
        Mode::FedAvg => initial.to_vec(),
        Mode::Secure => initial
            .iter()
            .copied()
            .filter(|id| !banned.contains(id))
            .collect(),
    };
    if out.is_empty() {
        return Err(Error::protocol("all clients banned".to_string()));
    }
    Ok(out)
}

/// Local training for one client-round: E epochs of minibatch SGD from the
/// global weights, per-epoch shuffling from the client-round stream, the
/// attack transform (if this client is a target), then the reported loss.
///
/// A non-finite loss or update anywhere aborts local work; the client uploads
/// its last finite weights with loss = +inf so scoring can flag it.
pub fn client_update(
    model: &ModelSpec,
    global: &ModelParams,
    client: &ClientState,
    train: &Dataset,
    cfg: &FederationConfig,
    attack: Option<&AttackSpec>,
    round: usize,
) -> Result<ClientUpdate> {
    if client.indices.is_empty() {
        return Err(Error::domain(format!("client {} has no samples", client.id)));
    }
    let mut rng = client_stream(cfg.master_seed, client.id, round);
    let mut w = global.clone();
    let mut indices = client.indices.clone();
    let mut diverged = false;
    let mut final_epoch_losses: Vec<f64> = Vec::new();

    'training: for epoch in 0..cfg.local_epochs {
        indices.shuffle(&mut rng);
        let final_epoch = epoch + 1 == cfg.local_epochs;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = train.batch(chunk)?;
            let (loss, grads) = match loss_and_grad(model, &w, &batch) {
                Ok(ok) => ok,
                Err(Error::Numeric(_)) => {
                    diverged = true;
                    break 'training;
                }
                Err(e) => return Err(e),
            };
            if final_epoch {
                final_epoch_losses.push(loss);
            }
            w = match sgd_step(&w, &grads, cfg.learning_rate) {
                Ok(next) => next,
                Err(Error::Numeric(_)) => {
                    diverged = true;
                    break 'training;
                }
                Err(e) => return Err(e),
            };
        }
    }

    if let Some(atk) = attack {
        inject(&mut w, atk, client.id, round)?;
    }

    let loss = if diverged {
        f64::INFINITY
    } else {
        match cfg.loss_stat {
            LossStat::EvalAtUpload => {
                match dataset_loss(model, &w, train, Some(&client.indices)) {
                    Ok(l) => l,
                    Err(Error::Numeric(_)) => f64::INFINITY,
                    Err(e) => return Err(e),
                }
            }
            LossStat::FinalEpochTrainMean => {
                let n = final_epoch_losses.len() as f64;
                final_epoch_losses.iter().sum::<f64>() / n
            }
        }
    };

    Ok(ClientUpdate {
        client: client.id,
        params: w,
        loss,
    })
}

/// Sample-count weighted mean of client uploads, summed in ascending client
/// id order with compensated accumulation: identical uploads aggregate to
/// themselves bit-exactly, and thread scheduling cannot change the result.
pub fn aggregate(updates: &[(ClientId, &ModelParams, usize)]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::protocol("aggregation over an empty round".to_string()));
    }
    let mut sorted: Vec<&(ClientId, &ModelParams, usize)> = updates.iter().collect();
    sorted.sort_by_key(|(id, _, _)| *id);
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::domain(format!(
                "client {} appears twice in aggregation",
                pair[0].0
            )));
        }
    }

    let (ref_id, reference, _) = *sorted[0];
    let mut m_t: u64 = 0;
    for &&(id, params, n_c) in &sorted {
        if n_c == 0 {
            return Err(Error::domain(format!("client {id} has weight 0")));
        }
        m_t += n_c as u64;
        if params.entries().len() != reference.entries().len() {
            return Err(Error::shape(format!(
                "client {id} uploaded {} tensors, client {ref_id} uploaded {}",
                params.entries().len(),
                reference.entries().len()
            )));
        }
        for (a, b) in params.entries().iter().zip(reference.entries()) {
            if a.layer != b.layer || a.role != b.role || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::shape(format!(
                    "client {id} layer {} {:?} shape {:?} differs from client {ref_id}'s {:?}",
                    a.layer,
                    a.role,
                    a.tensor.shape(),
                    b.tensor.shape()
                )));
            }
        }
    }

    let denom = m_t as f64;
    let mut out = reference.zeros_like();
    for (e_idx, out_entry) in out.entries_mut().iter_mut().enumerate() {
        let data = out_entry.tensor.data_mut();
        for (i, slot) in data.iter_mut().enumerate() {
            let mut acc = CompensatedSum::new();
            for &&(_, params, n_c) in &sorted {
                acc.add_product(n_c as f64, params.entries()[e_idx].tensor.data()[i]);
            }
            *slot = acc.div(denom);
        }
    }
    if !out.all_finite() {
        return Err(Error::numeric("aggregation produced non-finite parameters".to_string()));
    }
    Ok(out)
}

/// Everything a round needs that does not change between rounds.
pub struct ExperimentContext<'a> {
    pub model: &'a ModelSpec,
    pub cfg: &'a FederationConfig,
    pub clients: Vec<ClientState>,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub attack: Option<&'a AttackSpec>,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> ExperimentContext<'a> {
    pub fn new(
        model: &'a ModelSpec,
        cfg: &'a FederationConfig,
        train: &'a Dataset,
        test: &'a Dataset,
        plan: &PartitionPlan,
        attack: Option<&'a AttackSpec>,
    ) -> Result<Self> {
        cfg.validate()?;
        let classes = model.num_classes()?;
        for (name, ds) in [("train", train), ("test", test)] {
            if ds.classes() != classes {
                return Err(Error::config(format!(
                    "{name} dataset has {} classes but the model outputs {classes}",
                    ds.classes()
                )));
            }
            let (c, h, w) = ds.sample_shape();
            let want = (model.input.channels, model.input.height, model.input.width);
            if (c, h, w) != want {
                return Err(Error::config(format!(
                    "{name} dataset samples are {c}x{h}x{w}, model expects {}x{}x{}",
                    want.0, want.1, want.2
                )));
            }
        }
        if plan.num_clients() != cfg.clients {
            return Err(Error::config(format!(
                "partition plan covers {} clients, config says {}",
                plan.num_clients(),
                cfg.clients
            )));
        }
        plan.check(train.len())?;
        if let Some(atk) = attack {
            atk.validate(cfg.clients)?;
        }
        let clients = (0..cfg.clients)
            .map(|id| ClientState {
                id,
                indices: plan.client_indices(id).to_vec(),
            })
            .collect();
        let pool = if cfg.worker_threads > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.worker_threads)
                    .build()
                    .map_err(|e| Error::config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(ExperimentContext {
            model,
            cfg,
            clients,
            train,
            test,
            attack,
            pool,
        })
    }
}

fn run_client_updates(
    ctx: &ExperimentContext,
    global: &ModelParams,
    parts: &[ClientId],
    round: usize,
) -> Result<Vec<ClientUpdate>> {
    let job = |id: &ClientId| {
        client_update(
            ctx.model,
            global,
            &ctx.clients[*id],
            ctx.train,
            ctx.cfg,
            ctx.attack,
            round,
        )
    };
    match &ctx.pool {
        None => parts.iter().map(job).collect(),
        Some(pool) => pool.install(|| parts.par_iter().map(job).collect()),
    }
}

/// Executes one full round and appends its record to the server state.
pub fn run_round(
    state: &mut ServerState,
    ctx: &ExperimentContext,
    sink: &mut dyn FnMut(&RoundEvent),
) -> Result<()> {
    let cfg = ctx.cfg;
    let round = state.round + 1;
    let parts = if cfg.resample_each_round && cfg.mode == Mode::FedAvg && round > 1 {
        select_initial_clients(
            cfg.clients,
            cfg.fraction,
            &mut stream(cfg.master_seed, &[TAG_SELECT, round as u64]),
        )?
    } else {
        participants(&state.initial_selection, &state.banned, cfg.mode)?
    };
    sink(&RoundEvent::RoundStarted {
        round,
        mode: cfg.mode,
        participants: parts.clone(),
    });

    let updates = run_client_updates(ctx, &state.params, &parts, round)?;
    for u in &updates {
        sink(&RoundEvent::ClientFinished {
            round,
            client: u.client,
            loss: u.loss,
        });
    }

    let mut reports: Vec<ClientRoundReport>;
    let mut newly_banned: Vec<ClientId> = Vec::new();
    let (mut sigma, mut thr, mut eff) = (None, None, None);
    match cfg.mode {
        Mode::FedAvg => {
            reports = updates
                .iter()
                .map(|u| ClientRoundReport {
                    client: u.client,
                    loss: u.loss,
                    score: None,
                    banned_now: false,
                })
                .collect();
        }
        Mode::Secure => {
            let losses: Vec<f64> = updates.iter().map(|u| u.loss).collect();
            let (scores, s) = anomaly_scores(&losses)?;
            let t = threshold(&scores, cfg.threshold_rule)?;
            let cut = t + cfg.threshold_slack;
            let flagged = flag_anomalous(&scores, cut);
            reports = updates
                .iter()
                .zip(&scores)
                .map(|(u, &score)| ClientRoundReport {
                    client: u.client,
                    loss: u.loss,
                    score: Some(score),
                    banned_now: false,
                })
                .collect();
            for &pos in &flagged {
                reports[pos].banned_now = true;
                newly_banned.push(parts[pos]);
                sink(&RoundEvent::ClientBanned {
                    round,
                    client: parts[pos],
                    score: scores[pos],
                });
            }
            (sigma, thr, eff) = (Some(s), Some(t), Some(cut));
        }
    }

    // Flagged clients' current updates still aggregate; the ban takes effect
    // from the next round. strict_ban drops them immediately instead.
    let agg_inputs: Vec<(ClientId, &ModelParams, usize)> = updates
        .iter()
        .zip(&reports)
        .filter(|(_, r)| !(cfg.strict_ban && r.banned_now))
        .map(|(u, _)| (u.client, &u.params, ctx.clients[u.client].n_c()))
        .collect();
    if agg_inputs.is_empty() {
        return Err(Error::protocol(format!(
            "every participant of round {round} was banned"
        )));
    }
    state.params = aggregate(&agg_inputs)?;
    state.banned.extend(newly_banned.iter().copied());

    let global_loss = dataset_loss(ctx.model, &state.params, ctx.test, None)?;
    let global_accuracy = accuracy(ctx.model, &state.params, ctx.test, None)?;
    sink(&RoundEvent::RoundCompleted {
        round,
        global_loss,
        global_accuracy,
    });

    state.history.push(RoundRecord {
        round,
        mode: cfg.mode,
        participants: parts,
        clients: reports,
        sigma,
        threshold: thr,
        effective_threshold: eff,
        newly_banned,
        global_loss,
        global_accuracy,
    });
    state.round = round;
    Ok(())
}

/// Runs a full experiment: seeded initialization, one-time client selection,
/// then T rounds. Returns the final server state with the complete history.
pub fn run_experiment(
    model: &ModelSpec,
    cfg: &FederationConfig,
    train: &Dataset,
    test: &Dataset,
    plan: &PartitionPlan,
    attack: Option<&AttackSpec>,
    sink: &mut dyn FnMut(&RoundEvent),
) -> Result<ServerState> {
    let ctx = ExperimentContext::new(model, cfg, train, test, plan, attack)?;
    let mut state = ServerState {
        params: init_params(model, &mut stream(cfg.master_seed, &[TAG_INIT]))?,
        round: 0,
        initial_selection: select_initial_clients(
            cfg.clients,
            cfg.fraction,
            &mut stream(cfg.master_seed, &[TAG_SELECT, 1]),
        )?,
        banned: std::collections::BTreeSet::new(),
        initial_anomaly_score: INITIAL_ANOMALY_SCORE,
        history: Vec::new(),
    };
    for _ in 0..cfg.rounds {
        run_round(&mut state, &ctx, sink)?;
    }
    Ok(state)
}

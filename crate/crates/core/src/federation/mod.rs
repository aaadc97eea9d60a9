//! Round orchestration.
//!
//! One round: stratified client selection, downlink (truncation to each
//! participant's rank), one local epoch, a "before" probe of every uploaded
//! update, per-layer aggregation, an "after" probe with the rank-matched
//! downlink of the new global adapters, and uplink accounting.
//!
//! Randomness is split into fixed ChaCha streams: task, partition,
//! backbone, global adapter init, server selection, and one stream per
//! client. Client training therefore runs in parallel without changing
//! results.

mod config;
mod selection;

use std::sync::Arc;

use rayon::prelude::*;

pub use config::{
    Billing, ExperimentConfig, FederationConfig, LedgerConfig, RankPolicy, BYTES_PER_PARAM,
};
pub use selection::{assign_ranks, select_clients};

use crate::aggregation::{aggregate, downlink, ClientUpdate};
use crate::datagen::{generate_task, partition, ClientShard, Dataset, Quality, SyntheticTask};
use crate::error::Result;
use crate::lora::{LoraAdapter, LoraConfig};
use crate::model::{FactorOptim, FrozenBackbone};
use crate::numerics::{Matrix, Rng};

const STREAM_TASK: u64 = 0;
const STREAM_PARTITION: u64 = 1;
const STREAM_BACKBONE: u64 = 2;
const STREAM_GLOBAL: u64 = 3;
const STREAM_SERVER: u64 = 4;
const STREAM_CLIENT_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticipantRecord {
    pub client_id: usize,
    pub rank: usize,
    pub quality: Quality,
    pub acc_before: f64,
    pub acc_after: f64,
    pub uplink_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub global_acc: f64,
    pub participants: Vec<ParticipantRecord>,
    pub uplink_bytes: u64,
    pub cumulative_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub quality: Quality,
    pub rank: usize,
    pub adapters: Vec<LoraAdapter>,
    pub optim: Vec<FactorOptim>,
    pub last_val_acc: Option<f64>,
    pub data: Dataset,
    rng: Rng,
}

#[derive(Clone, Debug)]
pub struct ServerState {
    pub global: Vec<LoraAdapter>,
    pub round: usize,
}

impl ServerState {
    pub fn rank(&self) -> usize {
        self.global[0].rank()
    }
}

/// A full experiment's trace.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    /// One-off uplink of the round-1 validation probe for clients that did
    /// not participate in round 1 (top-k policy only). Not part of any
    /// round's `uplink_bytes`.
    pub calibration_bytes: u64,
    pub backbone_fingerprint: u64,
}

pub struct Federation {
    cfg: ExperimentConfig,
    backbone: Arc<FrozenBackbone>,
    task: SyntheticTask,
    shards: Vec<ClientShard>,
    clients: Vec<ClientState>,
    server: ServerState,
    global_rng: Rng,
    server_rng: Rng,
    cumulative_bytes: u64,
    calibration_bytes: u64,
}

impl Federation {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let fed = &cfg.federation;

        let task = generate_task(&cfg.task, &mut Rng::stream(seed, STREAM_TASK))?;
        let shards = partition(
            &task,
            fed.num_clients,
            &cfg.partition,
            &mut Rng::stream(seed, STREAM_PARTITION),
        )?;

        let mut bb_rng = Rng::stream(seed, STREAM_BACKBONE);
        let pool = task.draw(cfg.model.pretrain_size, &mut bb_rng);
        let backbone = Arc::new(FrozenBackbone::pretrained(
            &cfg.model,
            cfg.task.dim,
            cfg.task.num_classes,
            &pool,
            &mut bb_rng,
        )?);

        let qualities: Vec<Quality> = shards.iter().map(|s| s.quality).collect();
        let initial_policy = match fed.rank_policy {
            RankPolicy::TopKValidation => RankPolicy::AllLow,
            p => p,
        };
        let ranks = assign_ranks(
            &qualities,
            &vec![None; fed.num_clients],
            initial_policy,
            fed.k_high(),
            fed.r_low,
            fed.r_high,
        )?;
        let global_rank = ranks.iter().copied().max().expect("at least one client");
        let mut global_rng = Rng::stream(seed, STREAM_GLOBAL);
        let global = backbone.init_adapters(global_rank, &mut global_rng);

        let clients = shards
            .iter()
            .zip(&ranks)
            .map(|(shard, &rank)| {
                let adapters: Vec<LoraAdapter> = global
                    .iter()
                    .map(|g| downlink(g, rank))
                    .collect::<Result<_>>()?;
                let optim = adapters
                    .iter()
                    .map(|a| FactorOptim::for_adapter(a, cfg.optimizer))
                    .collect();
                Ok(ClientState {
                    id: shard.client_id,
                    quality: shard.quality,
                    rank,
                    adapters,
                    optim,
                    last_val_acc: None,
                    data: task.train.subset(&shard.indices),
                    rng: Rng::stream(seed, STREAM_CLIENT_BASE + shard.client_id as u64),
                })
            })
            .collect::<Result<_>>()?;

        Ok(Federation {
            backbone,
            task,
            shards,
            clients,
            server: ServerState { global, round: 0 },
            global_rng,
            server_rng: Rng::stream(seed, STREAM_SERVER),
            cumulative_bytes: 0,
            calibration_bytes: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn backbone(&self) -> &FrozenBackbone {
        &self.backbone
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn calibration_bytes(&self) -> u64 {
        self.calibration_bytes
    }

    pub fn global_accuracy(&self) -> Result<f64> {
        self.backbone.evaluate(&self.server.global, &self.task.test)
    }

    /// Uplink bytes for one client at `rank` under the configured billing.
    pub fn bytes_for_rank(&self, rank: usize) -> u64 {
        let layers: Vec<LoraConfig> = self.backbone.adapter_configs(rank);
        self.cfg.ledger.billing.bytes_for_rank(&layers, rank)
    }

    /// Round 0: accuracy of the freshly initialized global model.
    pub fn initial_record(&self) -> Result<RoundRecord> {
        Ok(RoundRecord {
            round: 0,
            global_acc: self.global_accuracy()?,
            participants: Vec::new(),
            uplink_bytes: 0,
            cumulative_bytes: 0,
        })
    }

    pub fn run_round(&mut self) -> Result<RoundRecord> {
        self.server.round += 1;
        let round = self.server.round;
        let fed = self.cfg.federation.clone();
        let ranks: Vec<usize> = self.clients.iter().map(|c| c.rank).collect();
        let selected = select_clients(
            &ranks,
            fed.r_high,
            fed.participation_fraction,
            &mut self.server_rng,
        );
        let mut is_selected = vec![false; self.clients.len()];
        for &i in &selected {
            is_selected[i] = true;
        }

        let calibrate = fed.rank_policy == RankPolicy::TopKValidation && round == 1;
        let backbone = Arc::clone(&self.backbone);
        let global = &self.server.global;
        let task = &self.task;
        let optimizer = self.cfg.optimizer;
        let training = self.cfg.training;

        // Local phase. Participants train their own state; under top-k the
        // remaining clients run the same first update on a scratch copy so
        // the server can rank everyone on validation accuracy.
        let outcomes: Vec<Option<(f64, Option<f64>)>> = self
            .clients
            .par_iter_mut()
            .map(|client| -> Result<Option<(f64, Option<f64>)>> {
                let participant = is_selected[client.id];
                if !participant && !calibrate {
                    return Ok(None);
                }
                let mut adapters: Vec<LoraAdapter> = global
                    .iter()
                    .map(|g| downlink(g, client.rank))
                    .collect::<Result<_>>()?;
                let mut optim = if participant {
                    let mut kept = std::mem::take(&mut client.optim);
                    if kept.len() != adapters.len()
                        || kept.iter().zip(&adapters).any(|(o, a)| !o.matches(a))
                    {
                        kept = adapters
                            .iter()
                            .map(|a| FactorOptim::for_adapter(a, optimizer))
                            .collect();
                    }
                    kept
                } else {
                    client.optim.clone()
                };
                backbone.local_train(
                    &mut adapters,
                    &mut optim,
                    &client.data,
                    &training,
                    &mut client.rng,
                )?;
                let val = if calibrate {
                    let acc = backbone.evaluate(&adapters, &task.val)?;
                    client.last_val_acc = Some(acc);
                    Some(acc)
                } else {
                    None
                };
                if !participant {
                    return Ok(None);
                }
                let before = backbone.evaluate(&adapters, &task.test)?;
                client.adapters = adapters;
                client.optim = optim;
                Ok(Some((before, val)))
            })
            .collect::<Result<_>>()?;

        if calibrate {
            self.calibration_bytes = self
                .clients
                .iter()
                .filter(|c| !is_selected[c.id])
                .map(|c| self.bytes_for_rank(c.rank))
                .sum();
        }

        let uplink_bytes: u64 = selected
            .iter()
            .map(|&i| self.bytes_for_rank(self.clients[i].rank))
            .sum();

        let r_target = self.server.rank();
        let num_layers = self.server.global.len();
        let new_global: Vec<LoraAdapter> = (0..num_layers)
            .map(|layer| {
                let updates: Vec<ClientUpdate> = selected
                    .iter()
                    .map(|&i| {
                        let c = &self.clients[i];
                        ClientUpdate::new(c.id, c.adapters[layer].clone())
                            .with_weight(c.data.len() as f64)
                    })
                    .collect();
                aggregate(fed.strategy, &updates, r_target, fed.weighting)
            })
            .collect::<Result<_>>()?;
        self.server.global = new_global;

        let global = &self.server.global;
        let backbone = &self.backbone;
        let participants: Vec<ParticipantRecord> = selected
            .par_iter()
            .map(|&i| {
                let c = &self.clients[i];
                let received: Vec<LoraAdapter> = global
                    .iter()
                    .map(|g| downlink(g, c.rank))
                    .collect::<Result<_>>()?;
                let (acc_before, _) = outcomes[i].expect("participant trained");
                Ok(ParticipantRecord {
                    client_id: c.id,
                    rank: c.rank,
                    quality: c.quality,
                    acc_before,
                    acc_after: backbone.evaluate(&received, &self.task.test)?,
                    uplink_bytes: self.bytes_for_rank(c.rank),
                })
            })
            .collect::<Result<_>>()?;

        if calibrate {
            self.promote()?;
        }

        self.cumulative_bytes += uplink_bytes;
        Ok(RoundRecord {
            round,
            global_acc: self.global_accuracy()?,
            participants,
            uplink_bytes,
            cumulative_bytes: self.cumulative_bytes,
        })
    }

    /// Top-k promotion after round 1. The global adapters grow to `r_high`
    /// with zero `B` columns and fresh Gaussian `A` rows, so the merged
    /// update is unchanged but the new components can learn.
    fn promote(&mut self) -> Result<()> {
        let fed = &self.cfg.federation;
        let qualities: Vec<Quality> = self.clients.iter().map(|c| c.quality).collect();
        let scores: Vec<Option<f64>> = self.clients.iter().map(|c| c.last_val_acc).collect();
        let ranks = assign_ranks(
            &qualities,
            &scores,
            RankPolicy::TopKValidation,
            fed.k_high(),
            fed.r_low,
            fed.r_high,
        )?;
        let target = ranks.iter().copied().max().unwrap_or(fed.r_low);
        let current = self.server.rank();
        if target > current {
            let extra = target - current;
            let std = (1.0 / target as f64).sqrt();
            let rng = &mut self.global_rng;
            self.server.global = self
                .server
                .global
                .iter()
                .map(|g| {
                    let tail = Matrix::from_fn(extra, g.n(), |_, _| rng.normal(0.0, std));
                    g.extend_with(tail)
                })
                .collect::<Result<_>>()?;
        }
        for (c, r) in self.clients.iter_mut().zip(ranks) {
            c.rank = r;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<ExperimentOutcome> {
        let mut records = Vec::with_capacity(self.cfg.rounds + 1);
        records.push(self.initial_record()?);
        for _ in 0..self.cfg.rounds {
            records.push(self.run_round()?);
        }
        Ok(ExperimentOutcome {
            records,
            calibration_bytes: self.calibration_bytes,
            backbone_fingerprint: self.backbone.fingerprint(),
        })
    }
}

/// Round 0 plus `cfg.rounds` round records.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    Ok(Federation::new(cfg.clone())?.run()?.records)
}

/// First round index whose global accuracy reaches `target`, if any.
pub fn rounds_to_target(records: &[RoundRecord], target: f64) -> Option<usize> {
    records
        .iter()
        .skip(1)
        .find(|r| r.global_acc >= target)
        .map(|r| r.round)
}

/// Sum of `acc_before - acc_after` over high-quality participants in
/// rounds `1..=rounds`: how much aggregation hurt the best-data client.
pub fn hq_aggregation_drop(records: &[RoundRecord], rounds: usize) -> f64 {
    records
        .iter()
        .filter(|r| (1..=rounds).contains(&r.round))
        .flat_map(|r| &r.participants)
        .filter(|p| p.quality == Quality::High)
        .map(|p| p.acc_before - p.acc_after)
        .sum()
}

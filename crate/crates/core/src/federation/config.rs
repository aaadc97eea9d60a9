use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationStrategy, Weighting};
use crate::datagen::{PartitionSpec, TaskSpec};
use crate::error::{Error, Result};
use crate::lora::{param_count, LoraConfig};
use crate::model::{ModelSpec, TrainOptions};
use crate::numerics::AdamConfig;

/// Who trains at the high rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankPolicy {
    /// High-quality clients (known from the partition) get `r_high` from the start.
    Oracle,
    /// Everyone starts at `r_low`; after round 1 the clients whose local
    /// update scores best on the validation split are promoted.
    TopKValidation,
    AllLow,
    AllHigh,
}

impl RankPolicy {
    pub const ALL: [RankPolicy; 4] = [
        RankPolicy::Oracle,
        RankPolicy::TopKValidation,
        RankPolicy::AllLow,
        RankPolicy::AllHigh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RankPolicy::Oracle => "oracle",
            RankPolicy::TopKValidation => "top-k-validation",
            RankPolicy::AllLow => "all-low",
            RankPolicy::AllHigh => "all-high",
        }
    }
}

impl fmt::Display for RankPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RankPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown rank policy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub participation_fraction: f64,
    pub r_low: usize,
    pub r_high: usize,
    pub high_rank_fraction: f64,
    pub strategy: AggregationStrategy,
    pub rank_policy: RankPolicy,
    pub weighting: Weighting,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            num_clients: 100,
            participation_fraction: 0.1,
            r_low: 5,
            r_high: 20,
            high_rank_fraction: 0.1,
            strategy: AggregationStrategy::Replication,
            rank_policy: RankPolicy::TopKValidation,
            weighting: Weighting::Uniform,
        }
    }
}

impl FederationConfig {
    /// Number of clients promoted to `r_high` under top-k selection.
    pub fn k_high(&self) -> usize {
        (self.high_rank_fraction * self.num_clients as f64).round() as usize
    }

    pub fn participants_per_round(&self) -> usize {
        ((self.participation_fraction * self.num_clients as f64).round() as usize).max(1)
    }
}

/// Which dimensions the uplink ledger bills.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Billing {
    /// The simulated model's own adapted layers.
    #[default]
    Model,
    /// 18 adapted 768×768 matrices, the DistilBERT attention layout.
    Distilbert,
}

pub const BYTES_PER_PARAM: u64 = 4;

impl Billing {
    /// Uplink bytes for one client at `rank`, given the model's adapter shapes.
    pub fn bytes_for_rank(self, model_layers: &[LoraConfig], rank: usize) -> u64 {
        let params: u64 = match self {
            Billing::Model => model_layers
                .iter()
                .map(|c| param_count(&c.with_rank(rank)))
                .sum(),
            Billing::Distilbert => param_count(&LoraConfig {
                m: 768,
                n: 768,
                rank,
                num_adapted_matrices: 18,
            }),
        };
        params * BYTES_PER_PARAM
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerConfig {
    pub billing: Billing,
}

/// Everything that determines one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub federation: FederationConfig,
    pub task: TaskSpec,
    pub partition: PartitionSpec,
    pub model: ModelSpec,
    pub optimizer: AdamConfig,
    pub training: TrainOptions,
    pub ledger: LedgerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::main()
    }
}

impl ExperimentConfig {
    /// 100 clients, 10% HQ at α=5 and 90% LQ at α=1, 10% stratified
    /// participation, top-10% promotion to rank 20 after round 1.
    pub fn main() -> Self {
        ExperimentConfig {
            seed: 0,
            rounds: 30,
            federation: FederationConfig::default(),
            task: TaskSpec::default(),
            partition: PartitionSpec::default(),
            model: ModelSpec::default(),
            optimizer: AdamConfig::default(),
            training: TrainOptions::default(),
            ledger: LedgerConfig::default(),
        }
    }

    /// 15 clients: one perfectly balanced client at rank 20, fourteen
    /// clients at Dirichlet α=0.6 with rank 5, everyone participating.
    pub fn lone_hq() -> Self {
        let num_clients = 15;
        let main = ExperimentConfig::main();
        ExperimentConfig {
            federation: FederationConfig {
                num_clients,
                participation_fraction: 1.0,
                high_rank_fraction: 1.0 / num_clients as f64,
                rank_policy: RankPolicy::Oracle,
                ..FederationConfig::default()
            },
            task: TaskSpec {
                train_size: 8_000,
                ..main.task.clone()
            },
            partition: PartitionSpec::lone_hq(num_clients, main.partition.samples_per_client),
            ..main
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "main" => Ok(ExperimentConfig::main()),
            "lone-hq" => Ok(ExperimentConfig::lone_hq()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `main` or `lone-hq`)"
            ))),
        }
    }

    /// Field-level range checks; the error names the offending key.
    pub fn validate(&self) -> Result<()> {
        let fed = &self.federation;
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if fed.num_clients == 0 {
            return bad("federation.num_clients", "must be at least 1".into());
        }
        if !(fed.participation_fraction > 0.0 && fed.participation_fraction <= 1.0) {
            return bad(
                "federation.participation_fraction",
                format!("must lie in (0, 1], got {}", fed.participation_fraction),
            );
        }
        if fed.r_low == 0 {
            return bad("federation.r_low", "must be at least 1".into());
        }
        if fed.r_low > fed.r_high {
            return bad(
                "federation.r_low",
                format!(
                    "r_low ({}) must not exceed r_high ({})",
                    fed.r_low, fed.r_high
                ),
            );
        }
        if !(0.0..=1.0).contains(&fed.high_rank_fraction) {
            return bad(
                "federation.high_rank_fraction",
                format!("must lie in [0, 1], got {}", fed.high_rank_fraction),
            );
        }
        let heterogeneous = matches!(
            fed.rank_policy,
            RankPolicy::Oracle | RankPolicy::TopKValidation
        ) && fed.r_low != fed.r_high;
        if heterogeneous && fed.strategy == AggregationStrategy::Homogeneous {
            return bad(
                "federation.strategy",
                format!(
                    "`homogeneous` cannot merge mixed ranks under `{}`",
                    fed.rank_policy
                ),
            );
        }
        if let Err(e) = self.task.validate() {
            return bad("task", e.to_string());
        }
        if let Err(e) = self.partition.validate(fed.num_clients) {
            return bad("partition", e.to_string());
        }
        if fed.num_clients * self.partition.samples_per_client > self.task.train_size {
            return bad(
                "partition.samples_per_client",
                format!(
                    "{} clients x {} samples exceed task.train_size {}",
                    fed.num_clients, self.partition.samples_per_client, self.task.train_size
                ),
            );
        }
        if let Err(e) = self.model.validate() {
            return bad("model", e.to_string());
        }
        let opt = &self.optimizer;
        if !(opt.lr >= 0.0 && opt.lr.is_finite()) {
            return bad("optimizer.lr", "must be finite and non-negative".into());
        }
        if !((0.0..1.0).contains(&opt.beta1) && (0.0..1.0).contains(&opt.beta2)) {
            return bad("optimizer.beta1", "betas must lie in [0, 1)".into());
        }
        if opt.eps <= 0.0 {
            return bad("optimizer.eps", "must be positive".into());
        }
        if self.training.batch_size == 0 {
            return bad("training.batch_size", "must be at least 1".into());
        }
        Ok(())
    }
}

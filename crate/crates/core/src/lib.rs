//! Deterministic simulator for federated LoRA fine-tuning with
//! rank-heterogeneous clients.
//!
//! Clients fine-tune low-rank adapters on a frozen backbone and the server
//! merges factors of different ranks. [`aggregation`] holds the merge rules
//! (homogeneous averaging, zero padding, Frobenius-weighted zero padding and
//! replication padding), [`federation`] drives rounds, and [`cli`] parses
//! experiment configs, writes metrics and prints communication ledgers.

pub mod aggregation;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod federation;
pub mod lora;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};

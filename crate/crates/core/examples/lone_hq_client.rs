//! Fifteen clients, one with balanced data at rank 20 and fourteen skewed
//! ones at rank 5. Prints the balanced client's accuracy before and after
//! each of the first rounds under zero padding and replication.
//!
//! `cargo run --release --example lone_hq_client [seed]`

use hetlora::aggregation::AggregationStrategy;
use hetlora::datagen::Quality;
use hetlora::federation::{run_experiment, ExperimentConfig};

fn main() -> hetlora::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut cfg = ExperimentConfig::lone_hq();
    cfg.seed = seed;
    cfg.rounds = 5;
    for strategy in [
        AggregationStrategy::ZeroPad,
        AggregationStrategy::Replication,
    ] {
        cfg.federation.strategy = strategy;
        println!("{strategy}:");
        for rec in run_experiment(&cfg)?.iter().skip(1) {
            let hq = rec
                .participants
                .iter()
                .find(|p| p.quality == Quality::High)
                .expect("full participation");
            let others: Vec<f64> = rec
                .participants
                .iter()
                .filter(|p| p.quality == Quality::Low)
                .map(|p| p.acc_after)
                .collect();
            println!(
                "  round {}: balanced client {:.2}% -> {:.2}%, others after {:.2}%, global {:.2}%",
                rec.round,
                100.0 * hq.acc_before,
                100.0 * hq.acc_after,
                100.0 * others.iter().sum::<f64>() / others.len() as f64,
                100.0 * rec.global_acc
            );
        }
    }
    Ok(())
}

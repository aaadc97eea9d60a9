//! The 100-client setting with top-k rank promotion: rounds and uplink
//! bytes needed to reach 90% of the all-rank-20 run's final accuracy.
//!
//! `cargo run --release --example main_experiment [seed]`

use hetlora::aggregation::AggregationStrategy as S;
use hetlora::federation::{rounds_to_target, ExperimentConfig, Federation, RankPolicy as P};

fn main() -> hetlora::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let base = ExperimentConfig {
        seed,
        ..ExperimentConfig::main()
    };
    let arms = [
        ("homogeneous r=20", P::AllHigh, S::Homogeneous, None),
        ("homogeneous r=7", P::AllLow, S::Homogeneous, Some(7)),
        ("homogeneous r=5", P::AllLow, S::Homogeneous, None),
        ("zero-pad", P::TopKValidation, S::ZeroPad, None),
        (
            "frobenius zero-pad",
            P::TopKValidation,
            S::FrobeniusZeroPad,
            None,
        ),
        ("replication", P::TopKValidation, S::Replication, None),
    ];
    let mut target = None;
    for (label, policy, strategy, rank) in arms {
        let mut cfg = base.clone();
        cfg.federation.rank_policy = policy;
        cfg.federation.strategy = strategy;
        if let Some(r) = rank {
            cfg.federation.r_low = r;
            cfg.federation.r_high = r;
        }
        let outcome = Federation::new(cfg)?.run()?;
        let recs = &outcome.records;
        let t = *target.get_or_insert(0.9 * recs.last().expect("records").global_acc);
        let reached = rounds_to_target(recs, t);
        let at = reached.map_or("never".to_owned(), |k| {
            format!("round {k:2}, {:>7} bytes", recs[k].cumulative_bytes)
        });
        println!(
            "{label:<20} final acc {:.3}  target {t:.3}: {at}{}",
            recs.last().expect("records").global_acc,
            if outcome.calibration_bytes > 0 {
                format!(" (+{} probe bytes)", outcome.calibration_bytes)
            } else {
                String::new()
            }
        );
    }
    Ok(())
}

use hetlora::aggregation::AggregationStrategy;
use hetlora::federation::{run_experiment, ExperimentConfig, Federation, RankPolicy};

#[test]
fn homogeneous_low_rank_learns_above_chance() {
    let mut above = 0;
    for seed in 0..5 {
        let mut cfg = ExperimentConfig::main();
        cfg.seed = seed;
        cfg.federation.rank_policy = RankPolicy::AllLow;
        cfg.federation.strategy = AggregationStrategy::Homogeneous;
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs.len(), 31);
        if recs.last().unwrap().global_acc > 0.5 {
            above += 1;
        }
    }
    assert!(above >= 3, "only {above}/5 seeds above 0.5");
}

#[test]
fn main_preset_round_structure() {
    let cfg = ExperimentConfig {
        rounds: 3,
        ..ExperimentConfig::main()
    };
    let mut fed = Federation::new(cfg).unwrap();
    let fingerprint = fed.backbone().fingerprint();
    for round in 1..=3 {
        let rec = fed.run_round().unwrap();
        assert_eq!(rec.participants.len(), 10);
        let high = rec.participants.iter().filter(|p| p.rank == 20).count();
        // Everyone is rank 5 until the promotion at the end of round 1.
        assert_eq!(high, usize::from(round > 1), "round {round}");
        let bytes: u64 = rec.participants.iter().map(|p| p.uplink_bytes).sum();
        assert_eq!(bytes, rec.uplink_bytes);
    }
    assert_eq!(fed.clients().iter().filter(|c| c.rank == 20).count(), 10);
    assert_eq!(fed.server().rank(), 20);
    assert_eq!(fed.backbone().fingerprint(), fingerprint);
}

#[test]
fn after_probe_uses_rank_matched_downlink() {
    let cfg = ExperimentConfig {
        rounds: 1,
        ..ExperimentConfig::lone_hq()
    };
    let mut fed = Federation::new(cfg).unwrap();
    let rec = fed.run_round().unwrap();
    for p in &rec.participants {
        let received: Vec<_> = fed
            .server()
            .global
            .iter()
            .map(|g| hetlora::aggregation::downlink(g, p.rank).unwrap())
            .collect();
        let acc = fed
            .backbone()
            .evaluate(&received, &fed.task().test)
            .unwrap();
        assert_eq!(acc, p.acc_after);
    }
}

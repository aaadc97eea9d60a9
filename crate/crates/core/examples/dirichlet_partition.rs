//! Synthetic task and non-IID client shards. Pass a path to also dump the
//! partition as CSV.

use hetlora::datagen::{generate_task, partition, write_dataset_csv, Quality};
use hetlora::federation::ExperimentConfig;
use hetlora::numerics::Rng;

fn main() -> hetlora::Result<()> {
    let cfg = ExperimentConfig::main();
    let task = generate_task(&cfg.task, &mut Rng::seed_from(0))?;
    let shards = partition(
        &task,
        cfg.federation.num_clients,
        &cfg.partition,
        &mut Rng::seed_from(1),
    )?;

    let mean_entropy = |q: Quality| {
        let picked: Vec<f64> = shards
            .iter()
            .filter(|s| s.quality == q)
            .map(|s| s.label_entropy())
            .collect();
        picked.iter().sum::<f64>() / picked.len() as f64
    };
    println!(
        "{} clients, label entropy HQ {:.3} vs LQ {:.3} nats (max {:.3})",
        shards.len(),
        mean_entropy(Quality::High),
        mean_entropy(Quality::Low),
        (task.num_classes as f64).ln()
    );
    for s in shards.iter().take(12) {
        println!(
            "client {:3} {:?}\t{:?}",
            s.client_id, s.quality, s.histogram
        );
    }

    if let Some(path) = std::env::args().nth(1) {
        write_dataset_csv(&task, &shards, path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}

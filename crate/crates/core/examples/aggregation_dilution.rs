//! One rank-20 client among k−1 rank-5 clients: zero padding shrinks the
//! components only the high-rank client has by 1/k, replication keeps them.

use hetlora::aggregation::{aggregate, AggregationStrategy, ClientUpdate, Weighting};
use hetlora::lora::LoraAdapter;
use hetlora::numerics::{Matrix, Rng};

fn random(m: usize, n: usize, r: usize, rng: &mut Rng) -> hetlora::Result<LoraAdapter> {
    LoraAdapter::new(
        Matrix::from_fn(m, r, |_, _| rng.normal(0.0, 1.0)),
        Matrix::from_fn(r, n, |_, _| rng.normal(0.0, 1.0)),
    )
}

fn main() -> hetlora::Result<()> {
    let mut rng = Rng::seed_from(1);
    println!(
        "{:>3}  {:>10}  {:>10}  {:>12}",
        "k", "zero-pad", "frobenius", "replication"
    );
    for k in [2, 5, 10, 15] {
        let mut updates = vec![ClientUpdate::new(0, random(32, 32, 20, &mut rng)?)];
        for id in 1..k {
            updates.push(ClientUpdate::new(id, random(32, 32, 5, &mut rng)?));
        }
        let donor_tail = updates[0].adapter.b().columns(5..20)?.frobenius_norm();
        let ratio = |s: AggregationStrategy| -> hetlora::Result<f64> {
            let agg = aggregate(s, &updates, 20, Weighting::Uniform)?;
            Ok(agg.b().columns(5..20)?.frobenius_norm() / donor_tail)
        };
        println!(
            "{k:>3}  {:>10.4}  {:>10.4}  {:>12.4}",
            ratio(AggregationStrategy::ZeroPad)?,
            ratio(AggregationStrategy::FrobeniusZeroPad)?,
            ratio(AggregationStrategy::Replication)?
        );
    }
    println!("(ratio of trailing-column norm in the aggregate to the donor's)");
    Ok(())
}

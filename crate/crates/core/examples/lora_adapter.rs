//! LoRA adapters: parameter counts, padding, truncation and the wire format.

use hetlora::lora::{param_count, LoraAdapter, LoraConfig};
use hetlora::numerics::{Matrix, Rng};

fn main() -> hetlora::Result<()> {
    for rank in [5, 7, 20] {
        let cfg = LoraConfig::new(768, 768, rank, 18)?;
        println!(
            "768x768, 18 matrices, r={rank:2}: {:>7} parameters",
            param_count(&cfg)
        );
    }

    let mut rng = Rng::seed_from(3);
    let cfg = LoraConfig::new(6, 4, 3, 1)?;
    let fresh = LoraAdapter::init(&cfg, &mut rng);
    println!(
        "fresh adapter delta norm: {} (B starts at zero)",
        fresh.delta().frobenius_norm()
    );

    let adapter = LoraAdapter::new(
        Matrix::from_fn(6, 3, |_, _| rng.normal(0.0, 1.0)),
        Matrix::from_fn(3, 4, |_, _| rng.normal(0.0, 1.0)),
    )?;
    let padded = adapter.pad_zero(8)?;
    println!(
        "zero-padded to r=8: delta change {:.1e}",
        padded.delta().max_abs_diff(&adapter.delta())?
    );
    let back = padded.truncate(3)?;
    println!("truncated back to r=3 equals original: {}", back == adapter);

    let blob = adapter.to_bytes();
    let decoded = LoraAdapter::from_bytes(&blob)?;
    println!(
        "{} byte blob round-trips: {}",
        blob.len(),
        decoded == adapter
    );
    Ok(())
}

//! Compares analytic LoRA factor gradients with central finite differences.

use hetlora::datagen::{generate_task, TaskSpec};
use hetlora::model::{FrozenBackbone, ModelSpec};
use hetlora::numerics::{Matrix, Rng};

fn main() -> hetlora::Result<()> {
    let mut rng = Rng::seed_from(5);
    let task = generate_task(
        &TaskSpec {
            train_size: 64,
            val_size: 8,
            test_size: 8,
            ..TaskSpec::default()
        },
        &mut rng,
    )?;
    let spec = ModelSpec {
        hidden: 12,
        pretrain_size: 64,
        pretrain_epochs: 1,
        ..ModelSpec::default()
    };
    let backbone =
        FrozenBackbone::pretrained(&spec, task.dim, task.num_classes, &task.train, &mut rng)?;
    let mut adapters = backbone.init_adapters(4, &mut rng);
    for ad in &mut adapters {
        let (m, r) = ad.b().shape();
        *ad.b_mut() = Matrix::from_fn(m, r, |_, _| rng.normal(0.0, 0.2));
    }
    let batch = task.train.subset(&(0..32).collect::<Vec<_>>());
    let (loss, grads) = backbone.loss_and_grads(&adapters, &batch.features, &batch.labels)?;
    println!("loss {loss:.6}");

    let h = 1e-5;
    for (layer, g) in grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for probe in 0..10 {
            let on_b = probe % 2 == 0;
            let grad = if on_b { &g.b } else { &g.a };
            let (i, j) = (rng.below(grad.rows()), rng.below(grad.cols()));
            let shifted = |d: f64| -> hetlora::Result<f64> {
                let mut ads = adapters.clone();
                let f = if on_b {
                    ads[layer].b_mut()
                } else {
                    ads[layer].a_mut()
                };
                f.set(i, j, f.get(i, j) + d);
                backbone.loss(&ads, &batch)
            };
            let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            let analytic = grad.get(i, j);
            worst =
                worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
        }
        println!("adapted layer {layer}: max relative error {worst:.2e} over 10 entries");
    }
    Ok(())
}

//! Dense matrices and the Adam optimizer: fit `X` so that `X·M ≈ T` for a
//! fixed `M` and target `T` by minimizing the squared error.

use hetlora::numerics::{AdamConfig, AdamState, Matrix, Rng};

fn main() -> hetlora::Result<()> {
    let mut rng = Rng::seed_from(7);
    let m = Matrix::from_fn(4, 3, |_, _| rng.normal(0.0, 1.0));
    let truth = Matrix::from_fn(2, 4, |_, _| rng.normal(0.0, 1.0));
    let target = truth.matmul(&m)?;

    let mut x = Matrix::zeros(2, 4);
    let mut adam = AdamState::new(
        2,
        4,
        AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
    );
    for step in 0..=400 {
        let residual = x.matmul(&m)?.sub(&target)?;
        // d/dX ½‖XM − T‖² = (XM − T)·Mᵀ
        let grad = residual.matmul_transposed(&m)?;
        if step % 100 == 0 {
            println!(
                "step {step:3}: loss {:.3e}",
                0.5 * residual.frobenius_norm().powi(2)
            );
        }
        adam.update(&mut x, &grad)?;
    }
    println!(
        "residual ‖XM − T‖ = {:.2e}",
        x.matmul(&m)?.sub(&target)?.frobenius_norm()
    );
    Ok(())
}

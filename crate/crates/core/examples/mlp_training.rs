//! The bare network and optimizer: supervised training on well-separated
//! clusters with momentum SGD and the cosine schedule.
//!
//! `cargo run --release --example mlp_training`

use marginmatch::data::{generate_synthetic, DataConfig};
use marginmatch::model::{sgd_step, LossTerm, Mlp, OptimizerState};
use marginmatch::seeds::rng_for;
use marginmatch::trainer::classification_error;

fn main() -> marginmatch::Result<()> {
    let cfg = DataConfig {
        per_class_labeled: 30,
        hard_fraction: 0.0,
        unlabeled_count: 10,
        ..DataConfig::default()
    };
    let data = generate_synthetic(&cfg, 3)?;
    let mut model = Mlp::init_uniform(&[2, 32, 32, 4], &mut rng_for(3, &[]))?;
    let steps = 300;
    let mut opt = OptimizerState::new(model.num_params(), 0.9, 0.03, steps);
    for k in 0..steps {
        let w = 1.0 / data.labeled.len() as f64;
        let terms: Vec<LossTerm> = data
            .labeled
            .iter()
            .map(|e| LossTerm { input: &e.features, target: e.label, weight: w })
            .collect();
        let (loss, grads) = model.backward(&terms)?;
        let lr = sgd_step(&mut model, &grads, &mut opt)?;
        if k % 50 == 0 {
            println!("step {k:3}  lr {lr:.4}  loss {loss:.4}");
        }
    }
    println!("test error {:.4}", classification_error(&model, &data.test, 3)?);
    Ok(())
}

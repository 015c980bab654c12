//! Train the full pipeline on a small synthetic dataset and evaluate it on
//! its own training set. Finishes in well under a minute.

use ahgcn::descriptor::PyramidProfile;
use ahgcn::metrics::srocc;
use ahgcn::sphere::default_viewport_centers;
use ahgcn::training::{evaluate, synthetic_dataset, train, TrainConfig};

fn main() -> ahgcn::Result<()> {
    let profile = PyramidProfile::compact(4);
    let centers = default_viewport_centers(20)?[..8].to_vec();
    let dataset = synthetic_dataset(8, centers, &profile, (1.0, 10.0), 13);
    let config = TrainConfig {
        batch_size: 8,
        epochs: 120,
        lr_predictor: 0.1,
        lr_decay: 0.5,
        dropout: 0.0,
        seed: 13,
        k: 3,
        layer_dims: vec![1024, 32, 8, 1],
        ..TrainConfig::default()
    };

    let outcome = train(&dataset, &config)?;
    for entry in outcome.log.iter().step_by(20) {
        println!(
            "epoch {:3}  lr {:.3e}  train mse {:.5}",
            entry.epoch, entry.lr, entry.train_mse
        );
    }
    println!(
        "final train mse {:.5}",
        outcome.log.last().unwrap().train_mse
    );

    let preds = evaluate(&dataset, &outcome.params, &config)?;
    let mos: Vec<f64> = dataset.samples.iter().map(|s| s.mos).collect();
    println!("train-set srocc {:.4}", srocc(&preds, &mos)?);
    for (s, p) in dataset.samples.iter().zip(&preds) {
        println!("  {}: mos {:5.2}  predicted {:5.2}", s.id, s.mos, p);
    }
    Ok(())
}

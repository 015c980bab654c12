//! The evaluation protocol on synthetic predictions: five-parameter
//! logistic mapping, PLCC/SROCC/RMSE, and the Krasula pair analysis.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ahgcn::metrics::EvalReport;

fn main() -> ahgcn::Result<()> {
    // A noisy, nonlinearly compressed predictor of MOS in [1, 10].
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mos: Vec<f64> = (0..24).map(|_| rng.random_range(1.0..10.0)).collect();
    let preds: Vec<f64> = mos
        .iter()
        .map(|&g| (g / 3.0).tanh() * 4.0 + rng.random_range(-0.15..0.15))
        .collect();
    let ids: Vec<String> = (0..mos.len()).map(|i| format!("sample_{i:02}")).collect();

    let report = EvalReport::from_predictions(&ids, &preds, &mos, 0.5, None)?;
    println!("plcc  {:+.4}", report.plcc);
    println!("srocc {:+.4}", report.srocc);
    println!("rmse  {:.4}", report.rmse);
    println!(
        "logistic betas: {:+.3} {:+.3} {:+.3} {:+.3} {:+.3}",
        report.logistic.beta1,
        report.logistic.beta2,
        report.logistic.beta3,
        report.logistic.beta4,
        report.logistic.beta5
    );
    println!(
        "krasula: auc_ds {:?}, auc_bw {:?}, c0 {:?} ({} different / {} similar pairs)",
        report.krasula.auc_ds,
        report.krasula.auc_bw,
        report.krasula.c0,
        report.krasula.n_different,
        report.krasula.n_similar
    );
    let mut csv = Vec::new();
    report.write_scatter_csv(&mut csv).expect("vec write");
    println!("\nscatter.csv preview:");
    for line in String::from_utf8(csv).unwrap().lines().take(5) {
        println!("  {line}");
    }
    Ok(())
}

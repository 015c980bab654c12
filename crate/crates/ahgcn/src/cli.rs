//! Command implementations behind the `ahgcn` binary. Every command is
//! deterministic given its inputs and seed, and all artifacts are written
//! atomically.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::dataset::load_dataset;
use crate::descriptor;
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradCheckReport};
use crate::hypergraph::{build_location_hyperedges, concat_hypergraphs, normalize};
use crate::metrics::EvalReport;
use crate::model::{load_checkpoint, save_checkpoint};
use crate::sphere::{render_viewport, viewport_to_png, EquirectImage, ViewportSpec};
use crate::training::{evaluate, train};
use crate::util::write_atomic;

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Render the configured viewports of an equirectangular image into
/// `vp_NN.png` files plus a `centers.csv`.
pub fn cmd_sample_viewports(image: &Path, out: &Path, config: &RunConfig) -> Result<()> {
    ensure_out_dir(out)?;
    let img = EquirectImage::load(image)?;
    let centers = config.centers()?;
    let mut centers_csv = String::from("id,lon_deg,lat_deg\n");
    for (i, &c) in centers.iter().enumerate() {
        let spec = ViewportSpec::new(c, config.viewport_fov_deg, config.viewport_resolution)?;
        let viewport = render_viewport(&img, &spec);
        write_atomic(&out.join(format!("vp_{i:02}.png")), &viewport_to_png(&viewport)?)?;
        writeln!(centers_csv, "vp_{i:02},{},{}", c.lon_deg(), c.lat_deg()).unwrap();
    }
    write_atomic(&out.join("centers.csv"), centers_csv.as_bytes())?;
    Ok(())
}

fn loss_log_csv(log: &[crate::training::EpochLog]) -> String {
    let mut csv = String::from("epoch,lr,train_mse\n");
    for e in log {
        writeln!(csv, "{},{},{}", e.epoch, e.lr, e.train_mse).unwrap();
    }
    csv
}

/// Train on a manifest; writes `model.ahgc` (with optimizer state),
/// `loss.csv`, and the effective `config.toml` into the output directory.
pub fn cmd_train(manifest: &Path, out: &Path, config: &RunConfig) -> Result<()> {
    ensure_out_dir(out)?;
    let dataset = load_dataset(manifest, config)?;
    let outcome = train(&dataset, &config.to_train_config())?;
    save_checkpoint(
        &out.join("model.ahgc"),
        &outcome.params,
        Some(&outcome.optimizer.to_optimizer_state()),
    )?;
    write_atomic(&out.join("loss.csv"), loss_log_csv(&outcome.log).as_bytes())?;
    write_atomic(&out.join("config.toml"), config.to_toml().as_bytes())?;
    Ok(())
}

/// Evaluate a checkpoint on a manifest; writes `report.json` and
/// `scatter.csv`.
pub fn cmd_evaluate(
    manifest: &Path,
    checkpoint: &Path,
    out: &Path,
    config: &RunConfig,
) -> Result<EvalReport> {
    ensure_out_dir(out)?;
    let dataset = load_dataset(manifest, config)?;
    let (params, _) = load_checkpoint(checkpoint)?;
    let preds = evaluate(&dataset, &params, &config.to_train_config())?;
    let ids: Vec<String> = dataset.samples.iter().map(|s| s.id.clone()).collect();
    let mos: Vec<f64> = dataset.samples.iter().map(|s| s.mos).collect();
    let report = EvalReport::from_predictions(
        &ids,
        &preds,
        &mos,
        config.effective_mos_diff_threshold(),
        None,
    )?;
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    let mut scatter = Vec::new();
    report.write_scatter_csv(&mut scatter).expect("vec write");
    write_atomic(&out.join("scatter.csv"), &scatter)?;
    Ok(report)
}

/// Finite-difference verification of every gradient block.
pub fn cmd_gradcheck(seed: u64, corrupt: bool) -> GradCheckReport {
    run_gradcheck(seed, corrupt)
}

/// Dump a sample's hypergraph: the incidence matrix, the normalized
/// operator, and a degree summary. Descriptor weights are freshly seeded
/// from the config, so the dump is deterministic without a checkpoint.
pub fn cmd_dump_hypergraph(
    manifest: &Path,
    sample_id: &str,
    out: &Path,
    config: &RunConfig,
) -> Result<()> {
    ensure_out_dir(out)?;
    let dataset = load_dataset(manifest, config)?;
    let sample = dataset
        .samples
        .iter()
        .find(|s| s.id == sample_id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown sample id '{sample_id}'")))?;
    let location = build_location_hyperedges(&dataset.centers, config.delta_deg.to_radians())?;
    let params = crate::model::ModelParams::init(
        config.seed,
        &dataset.profile(),
        &config.to_train_config().predictor_config(),
    )?;
    let (features, _) = descriptor::forward(&sample.pyramids, &params.descriptor, false)?;
    let k = config.effective_k();
    let content = crate::hypergraph::build_content_hyperedges(&features, k)?;
    let incidence = concat_hypergraphs(&[location, content])?;
    let operator = normalize(&incidence)?;

    let mut buf = Vec::new();
    incidence.write_csv(&mut buf).expect("vec write");
    write_atomic(&out.join("incidence.csv"), &buf)?;
    let mut buf = Vec::new();
    operator.write_csv(&mut buf).expect("vec write");
    write_atomic(&out.join("operator.csv"), &buf)?;

    let mut summary = String::new();
    writeln!(summary, "sample: {sample_id}").unwrap();
    writeln!(summary, "nodes: {}", incidence.n_nodes()).unwrap();
    writeln!(summary, "hyperedges: {}", incidence.n_edges()).unwrap();
    writeln!(summary, "k: {k}").unwrap();
    writeln!(summary, "delta_deg: {}", config.delta_deg).unwrap();
    let dv = incidence.node_degrees();
    let de = incidence.edge_degrees();
    writeln!(
        summary,
        "node_degrees: {}",
        dv.iter().map(|d| format!("{d}")).collect::<Vec<_>>().join(" ")
    )
    .unwrap();
    writeln!(
        summary,
        "edge_degrees: {}",
        de.iter().map(|d| format!("{d}")).collect::<Vec<_>>().join(" ")
    )
    .unwrap();
    write_atomic(&out.join("summary.txt"), summary.as_bytes())?;
    Ok(())
}

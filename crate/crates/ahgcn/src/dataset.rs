//! Dataset manifests and sample loading.
//!
//! The manifest is a CSV with header `id,path,mos`. A sample's `path`
//! points either to a directory of per-viewport feature files
//! (`vp_00.ahgf` ...) or, with the synthetic feature source, to an
//! equirectangular image; viewports are then rendered and each one's
//! pyramid is synthesized from a content-derived seed. Any other path is
//! treated as a label and features come from the sample id.

use std::path::{Path, PathBuf};

use crate::config::{FeatureSource, RunConfig};
use crate::descriptor::FeaturePyramid;
use crate::error::{Error, Result};
use crate::sphere::{render_viewport, EquirectImage, ViewportSpec};
use crate::training::{Dataset, Sample};

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub mos: f64,
}

/// Parse a dataset manifest; malformed rows are reported with their line
/// number.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    {
        let headers = reader.headers().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?;
        let expected = ["id", "path", "mos"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("header must be id,path,mos, got {}", got.join(",")),
            });
        }
    }
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let mos: f64 = record[2].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("mos value '{}' is not a number", &record[2]),
        })?;
        entries.push(ManifestEntry {
            id: record[0].to_string(),
            path: record[1].to_string(),
            mos,
        });
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "manifest lists no samples".to_string(),
        });
    }
    Ok(entries)
}

/// Stable 64-bit FNV-1a; used to derive per-sample feature seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn viewport_content_seed(viewport: &ndarray::Array3<f64>) -> u64 {
    let mut bytes = Vec::with_capacity(viewport.len() * 2);
    for &v in viewport.iter() {
        bytes.extend_from_slice(&((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_le_bytes());
    }
    fnv1a(&bytes)
}

fn load_feature_dir(dir: &Path, id: &str, n_viewports: usize) -> Result<Vec<FeaturePyramid>> {
    let mut pyramids = Vec::with_capacity(n_viewports);
    for v in 0..n_viewports {
        let file = dir.join(format!("vp_{v:02}.ahgf"));
        if !file.is_file() {
            return Err(Error::InvalidArgument(format!(
                "sample {id}: missing feature file {}",
                file.display()
            )));
        }
        pyramids.push(FeaturePyramid::load(&file)?);
    }
    Ok(pyramids)
}

fn synthesize_from_image(
    image_path: &Path,
    config: &RunConfig,
) -> Result<Vec<FeaturePyramid>> {
    let image = EquirectImage::load(image_path)?;
    let centers = config.centers()?;
    let profile = config.pyramid_profile()?;
    centers
        .iter()
        .map(|&c| {
            let spec = ViewportSpec::new(c, config.viewport_fov_deg, config.viewport_resolution)?;
            let viewport = render_viewport(&image, &spec);
            Ok(FeaturePyramid::synthesize(
                config.seed ^ viewport_content_seed(&viewport),
                &profile,
            ))
        })
        .collect()
}

fn synthesize_from_id(id: &str, viewport: usize, config: &RunConfig) -> Result<FeaturePyramid> {
    let profile = config.pyramid_profile()?;
    let seed = config.seed ^ fnv1a(id.as_bytes()) ^ (viewport as u64).wrapping_mul(0x9e37);
    Ok(FeaturePyramid::synthesize(seed, &profile))
}

fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("png" | "ppm" | "pnm" | "pgm")
    )
}

/// Load every sample named by a manifest. Relative sample paths resolve
/// against the manifest's directory.
pub fn load_dataset(manifest_path: &Path, config: &RunConfig) -> Result<Dataset> {
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let centers = config.centers()?;
    let n = centers.len();
    let mut samples = Vec::with_capacity(entries.len());
    for entry in entries {
        let resolved: PathBuf = {
            let p = Path::new(&entry.path);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let pyramids = if resolved.is_dir() {
            load_feature_dir(&resolved, &entry.id, n)?
        } else {
            match config.feature_source {
                FeatureSource::Files => {
                    return Err(Error::InvalidArgument(format!(
                        "sample {}: feature source 'files' needs a viewport directory, \
                         got {}",
                        entry.id,
                        resolved.display()
                    )));
                }
                FeatureSource::Synthetic => {
                    if resolved.is_file() && is_image_path(&resolved) {
                        synthesize_from_image(&resolved, config)?
                    } else {
                        (0..n)
                            .map(|v| synthesize_from_id(&entry.id, v, config))
                            .collect::<Result<Vec<_>>>()?
                    }
                }
            }
        };
        samples.push(Sample {
            id: entry.id,
            pyramids,
            mos: entry.mos,
        });
    }
    let dataset = Dataset { centers, samples };
    dataset.validate()?;
    Ok(dataset)
}

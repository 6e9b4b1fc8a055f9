//! Subcommand implementations.

pub mod gen_data;
pub mod inspect_schedule;
pub mod psd;
pub mod sample;
pub mod train;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blurdiff_core::dataset::{generate, ToyDatasetKind, ToyDatasetSpec};
use blurdiff_core::transform::ImageTensor;

use crate::config::{DatasetChoice, RunConfig};

/// Resolved configuration plus its output directory, after CLI overrides.
pub struct CommandCtx {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
}

/// Load a config file, apply overrides, create the output directory and
/// write the fully resolved configuration back for reproducibility.
pub fn prepare(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<CommandCtx> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let mut cfg = RunConfig::parse(&text)
        .with_context(|| format!("parsing config {}", config_path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = &out {
        cfg.out_dir = out.display().to_string();
    }
    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    fs::write(out_dir.join("config.resolved.txt"), cfg.serialize())?;
    Ok(CommandCtx { cfg, out_dir })
}

/// Materialize the dataset selected by the config.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<ImageTensor>> {
    let kind = match cfg.dataset {
        DatasetChoice::Bars => ToyDatasetKind::Bars {
            width: cfg.bar_width,
        },
        DatasetChoice::GaussianSpectrum => ToyDatasetKind::GaussianSpectrum {
            p: cfg.spectrum_p,
            scale: cfg.spectrum_scale,
        },
        DatasetChoice::ExternalRaw => {
            if cfg.data_path.is_empty() {
                bail!("dataset = external_raw requires data_path");
            }
            ToyDatasetKind::ExternalRaw {
                path: PathBuf::from(&cfg.data_path),
            }
        }
    };
    let spec = ToyDatasetSpec {
        kind,
        n: cfg.n,
        channels: cfg.channels,
        size: cfg.dataset_size,
    };
    Ok(generate(&spec, cfg.seed)?)
}

/// `sample_000.pgm` / `.ppm` style file name.
pub fn image_file_name(prefix: &str, index: usize, channels: usize) -> String {
    let ext = if channels == 3 { "ppm" } else { "pgm" };
    format!("{prefix}_{index:03}.{ext}")
}

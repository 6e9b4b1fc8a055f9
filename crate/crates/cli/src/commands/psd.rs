//! `psd`: per-frequency mean power of a sample set against a reference set,
//! with the max relative deviation over the lowest frequencies and an
//! aggregate log-spectral distance.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blurdiff_core::io::{read_image, read_image_batch};
use blurdiff_core::spectrum::{compare_spectra, power_spectrum, SpectralReport};
use blurdiff_core::transform::{Dct, FrequencyGrid, ImageTensor};

use super::CommandCtx;

/// Load images from a `.bdt` batch file or from a directory of
/// `.pgm`/`.ppm`/`.bdt` files (sorted by name).
pub fn load_images(path: &Path) -> Result<Vec<ImageTensor>> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm" | "ppm" | "bdt")
                )
            })
            .collect();
        entries.sort();
        if entries.is_empty() {
            bail!("{}: no .pgm/.ppm/.bdt files", path.display());
        }
        let mut images = Vec::new();
        for p in entries {
            if p.extension().and_then(|e| e.to_str()) == Some("bdt") {
                images.extend(read_image_batch(&p)?);
            } else {
                images.push(read_image(&p)?);
            }
        }
        Ok(images)
    } else {
        Ok(read_image_batch(path)
            .with_context(|| format!("reading {}", path.display()))?)
    }
}

pub fn analyze(
    samples: &[ImageTensor],
    reference: &[ImageTensor],
    lowest_k: usize,
) -> Result<SpectralReport> {
    if samples.len() < 100 {
        bail!("need at least 100 samples, got {}", samples.len());
    }
    if reference.is_empty() {
        bail!("empty reference set");
    }
    let n = samples[0].n();
    if reference[0].n() != n {
        bail!(
            "sample grid {}x{} does not match reference {}x{}",
            n,
            n,
            reference[0].n(),
            reference[0].n()
        );
    }
    let dct = Dct::new(n)?;
    let grid = FrequencyGrid::new(n)?;
    let s = power_spectrum(samples, &dct)?;
    let r = power_spectrum(reference, &dct)?;
    Ok(compare_spectra(&s, &r, &grid, lowest_k)?)
}

pub fn run(ctx: &CommandCtx) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.psd_samples.is_empty() || cfg.psd_reference.is_empty() {
        bail!("psd requires psd_samples and psd_reference paths in the config");
    }
    let samples = load_images(Path::new(&cfg.psd_samples))?;
    let reference = load_images(Path::new(&cfg.psd_reference))?;
    let report = analyze(&samples, &reference, cfg.psd_lowest_k)?;

    let mut csv = String::from("i,j,lambda,power_samples,power_reference\n");
    for (i, j, lambda, ps, pr) in &report.rows {
        csv.push_str(&format!("{i},{j},{lambda},{ps},{pr}\n"));
    }
    let csv_path = ctx.out_dir.join("psd.csv");
    fs::write(&csv_path, csv)?;

    println!(
        "samples = {} ({} spectra), reference = {}",
        samples.len(),
        report.rows.len(),
        reference.len()
    );
    println!("max_rel_dev_low{} = {}", report.lowest_k, report.max_rel_dev_low);
    println!("log_spectral_distance = {}", report.log_spectral_distance);
    println!("wrote {}", csv_path.display());
    Ok(())
}

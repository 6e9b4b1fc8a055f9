//! Spectral analysis of image sets: per-frequency mean power and distances
//! between spectra. Stands in for perceptual metrics at toy scale.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::transform::{Dct, FreqTensor, FrequencyGrid, ImageTensor};

/// Floor applied before taking logs of powers.
const POWER_FLOOR: f64 = 1e-300;

/// Mean squared DCT coefficient per frequency, pooled over samples and
/// channels.
#[derive(Debug, Clone)]
pub struct PowerSpectrum {
    pub power: Array2<f64>,
    pub count: usize,
}

pub fn power_spectrum(images: &[ImageTensor], dct: &Dct) -> Result<PowerSpectrum> {
    let freqs: Vec<FreqTensor> = images.iter().map(|i| dct.forward(i)).collect::<Result<_>>()?;
    power_spectrum_freq(&freqs)
}

pub fn power_spectrum_freq(freqs: &[FreqTensor]) -> Result<PowerSpectrum> {
    let first = freqs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty sample set".into()))?;
    let n = first.n();
    let mut power = Array2::zeros((n, n));
    let mut total = 0usize;
    for f in freqs {
        if f.n() != n {
            return Err(Error::dim(format!("{n}x{n}"), format!("{0}x{0}", f.n())));
        }
        for ch in f.array().outer_iter() {
            power += &ch.mapv(|v| v * v);
            total += 1;
        }
    }
    power.mapv_inplace(|v| v / total as f64);
    Ok(PowerSpectrum {
        power,
        count: total,
    })
}

/// Comparison of a sample spectrum against a reference spectrum.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// `max |P_s / P_r - 1|` over the `lowest_k` smallest-lambda frequencies.
    pub max_rel_dev_low: f64,
    /// `sqrt(mean over all frequencies of (ln P_s - ln P_r)^2)`.
    pub log_spectral_distance: f64,
    pub lowest_k: usize,
    /// `(i, j, lambda, sample power, reference power)` sorted by lambda.
    pub rows: Vec<(usize, usize, f64, f64, f64)>,
}

pub fn compare_spectra(
    samples: &PowerSpectrum,
    reference: &PowerSpectrum,
    grid: &FrequencyGrid,
    lowest_k: usize,
) -> Result<SpectralReport> {
    let n = grid.n();
    if samples.power.dim() != (n, n) || reference.power.dim() != (n, n) {
        return Err(Error::dim(
            format!("{n}x{n} spectra"),
            format!("{:?} vs {:?}", samples.power.dim(), reference.power.dim()),
        ));
    }
    let order = grid.indices_by_lambda();
    let k = lowest_k.min(order.len());
    let mut max_rel_dev_low = 0.0f64;
    let mut log_dist_sq = 0.0;
    let mut rows = Vec::with_capacity(order.len());
    for (rank, &(i, j)) in order.iter().enumerate() {
        let ps = samples.power[[i, j]];
        let pr = reference.power[[i, j]];
        if rank < k {
            let rel = (ps / pr.max(POWER_FLOOR) - 1.0).abs();
            max_rel_dev_low = max_rel_dev_low.max(rel);
        }
        let d = ps.max(POWER_FLOOR).ln() - pr.max(POWER_FLOOR).ln();
        log_dist_sq += d * d;
        rows.push((i, j, grid.lambda()[[i, j]], ps, pr));
    }
    Ok(SpectralReport {
        max_rel_dev_low,
        log_spectral_distance: (log_dist_sq / order.len() as f64).sqrt(),
        lowest_k: k,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::GaussianDataPrior;
    use crate::rng::CounterRng;

    #[test]
    fn identical_sets_have_zero_distance() {
        let mut rng = CounterRng::new(3);
        let dct = Dct::new(8).unwrap();
        let grid = FrequencyGrid::new(8).unwrap();
        let images: Vec<ImageTensor> = (0..120)
            .map(|_| ImageTensor::standard_normal(1, 8, &mut rng))
            .collect();
        let s = power_spectrum(&images, &dct).unwrap();
        let report = compare_spectra(&s, &s, &grid, 10).unwrap();
        assert_eq!(report.max_rel_dev_low, 0.0);
        assert_eq!(report.log_spectral_distance, 0.0);
        assert_eq!(report.rows.len(), 64);
    }

    #[test]
    fn white_noise_against_power_law_reference_scores_badly() {
        let mut rng = CounterRng::new(4);
        let grid = FrequencyGrid::new(8).unwrap();
        let dct = Dct::new(8).unwrap();
        let prior = GaussianDataPrior::power_law(&grid, 1.0, 1.0).unwrap();

        let reference: Vec<FreqTensor> =
            (0..3000).map(|_| prior.sample_freq(1, &mut rng)).collect();
        let ref_spec = power_spectrum_freq(&reference).unwrap();

        let noise: Vec<ImageTensor> = (0..3000)
            .map(|_| ImageTensor::standard_normal(1, 8, &mut rng))
            .collect();
        let noise_spec = power_spectrum(&noise, &dct).unwrap();

        // Matched samples score near zero; white noise scores far from it.
        let matched: Vec<FreqTensor> =
            (0..3000).map(|_| prior.sample_freq(1, &mut rng)).collect();
        let matched_spec = power_spectrum_freq(&matched).unwrap();

        let good = compare_spectra(&matched_spec, &ref_spec, &grid, 10).unwrap();
        let bad = compare_spectra(&noise_spec, &ref_spec, &grid, 10).unwrap();
        assert!(good.log_spectral_distance < 0.1, "{}", good.log_spectral_distance);
        assert!(bad.log_spectral_distance > 1.0, "{}", bad.log_spectral_distance);
        assert!(bad.max_rel_dev_low > good.max_rel_dev_low);
    }
}

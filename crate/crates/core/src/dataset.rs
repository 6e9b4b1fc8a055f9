//! Toy datasets for training and evaluation. All generated samples are
//! normalized to `[-1, 1]`; generation is deterministic given the seed,
//! with sample `i` drawn from RNG stream `[DATA, i]`.

use std::path::PathBuf;

use crate::denoiser::GaussianDataPrior;
use crate::error::{Error, Result};
use crate::rng::{stream_id, CounterRng};
use crate::transform::{Dct, FrequencyGrid, ImageTensor};

#[derive(Debug, Clone, PartialEq)]
pub enum ToyDatasetKind {
    /// Frequency coefficients drawn from `N(0, s_k^2)` with
    /// `s_k = scale * (1 + lambda_k)^(-p)`, inverted to pixel space. If any
    /// pixel of the finished dataset exceeds 1 in magnitude, the whole
    /// dataset is divided by the global max-abs.
    GaussianSpectrum { p: f64, scale: f64 },
    /// 1-3 axis-aligned bright bars (+1) on a dark (-1) background.
    Bars { width: usize },
    /// Read from a raw-tensor file (dims `[count, channels, n, n]`).
    ExternalRaw { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDatasetSpec {
    pub kind: ToyDatasetKind,
    pub n: usize,
    pub channels: usize,
    pub size: usize,
}

fn bars_sample(n: usize, channels: usize, width: usize, rng: &mut CounterRng) -> ImageTensor {
    let mut img = ImageTensor::zeros(channels, n);
    img.array_mut().fill(-1.0);
    let count = 1 + rng.below(3) as usize;
    for _ in 0..count {
        let horizontal = rng.below(2) == 0;
        let pos = rng.below(n as u64) as usize;
        for c in 0..channels {
            for w in 0..width {
                let line = pos + w;
                if line >= n {
                    continue;
                }
                for k in 0..n {
                    if horizontal {
                        img.array_mut()[[c, line, k]] = 1.0;
                    } else {
                        img.array_mut()[[c, k, line]] = 1.0;
                    }
                }
            }
        }
    }
    img
}

/// Generate a toy dataset.
pub fn generate(spec: &ToyDatasetSpec, seed: u64) -> Result<Vec<ImageTensor>> {
    if spec.n == 0 || spec.channels == 0 {
        return Err(Error::InvalidArgument("empty sample shape".into()));
    }
    match &spec.kind {
        ToyDatasetKind::Bars { width } => {
            if *width == 0 {
                return Err(Error::InvalidArgument("bar width must be >= 1".into()));
            }
            Ok((0..spec.size)
                .map(|i| {
                    let mut rng = CounterRng::stream(seed, &[stream_id::DATA, i as u64]);
                    bars_sample(spec.n, spec.channels, *width, &mut rng)
                })
                .collect())
        }
        ToyDatasetKind::GaussianSpectrum { p, scale } => {
            if *scale <= 0.0 {
                return Err(Error::InvalidArgument("spectrum scale must be > 0".into()));
            }
            let grid = FrequencyGrid::new(spec.n)?;
            let prior = GaussianDataPrior::power_law(&grid, *p, *scale)?;
            let dct = Dct::new(spec.n)?;
            let mut samples: Vec<ImageTensor> = (0..spec.size)
                .map(|i| {
                    let mut rng = CounterRng::stream(seed, &[stream_id::DATA, i as u64]);
                    let u = prior.sample_freq(spec.channels, &mut rng);
                    dct.inverse(&u)
                })
                .collect::<Result<_>>()?;
            let max_abs = samples.iter().map(|s| s.max_abs()).fold(0.0f64, f64::max);
            if max_abs > 1.0 {
                for s in &mut samples {
                    s.array_mut().mapv_inplace(|v| v / max_abs);
                }
            }
            Ok(samples)
        }
        ToyDatasetKind::ExternalRaw { path } => {
            let samples = crate::io::read_image_batch(path)?;
            if samples.is_empty() {
                return Err(Error::Format(format!("{}: empty dataset", path.display())));
            }
            for (i, s) in samples.iter().enumerate() {
                if s.n() != spec.n || s.channels() != spec.channels {
                    return Err(Error::dim(
                        format!("{} ch {1}x{1}", spec.channels, spec.n),
                        format!("sample {i}: {} ch {1}x{1}", s.channels(), s.n()),
                    ));
                }
                if !s.is_finite() || s.max_abs() > 1.0 + 1e-9 {
                    return Err(Error::Format(format!(
                        "{}: sample {i} is not normalized to [-1, 1]",
                        path.display()
                    )));
                }
            }
            Ok(samples)
        }
    }
}

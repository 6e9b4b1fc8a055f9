//! Noise-prediction models: an analytic oracle for Gaussian data (used for
//! exact end-to-end verification) and a small fully-connected network with a
//! sinusoidal time embedding.

use ndarray::Array2;

use crate::diffusion::BlurringDiffusion;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::schedule::{alpha_sigma, ScheduleParams};
use crate::transform::{Dct, FreqTensor, FrequencyGrid, ImageTensor};

/// Anything that predicts the injected noise from a noisy latent.
pub trait Denoiser {
    fn n(&self) -> usize;
    fn channels(&self) -> usize;

    /// Predict `eps_hat` from the pixel-space latent.
    fn predict_eps(&self, z_t: &ImageTensor, t: f64) -> Result<ImageTensor>;

    /// Frequency-space variant; the default round-trips through pixel space.
    fn predict_eps_freq(&self, u_t: &FreqTensor, t: f64, dct: &Dct) -> Result<FreqTensor> {
        let z = dct.inverse(u_t)?;
        dct.forward(&self.predict_eps(&z, t)?)
    }
}

/// Gaussian data distribution over frequency coefficients: independent
/// `N(mean[k], std[k]^2)` per frequency, shared across channels.
#[derive(Debug, Clone)]
pub struct GaussianDataPrior {
    mean_freq: Array2<f64>,
    std_freq: Array2<f64>,
}

impl GaussianDataPrior {
    pub fn new(mean_freq: Array2<f64>, std_freq: Array2<f64>) -> Result<Self> {
        if mean_freq.dim() != std_freq.dim() {
            return Err(Error::dim(
                format!("{:?}", mean_freq.dim()),
                format!("{:?}", std_freq.dim()),
            ));
        }
        if !std_freq.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(
                "prior std entries must be positive and finite".into(),
            ));
        }
        Ok(GaussianDataPrior {
            mean_freq,
            std_freq,
        })
    }

    /// Zero-mean power-law prior `std[k] = scale * (1 + lambda[k])^(-p)`.
    pub fn power_law(grid: &FrequencyGrid, p: f64, scale: f64) -> Result<Self> {
        let std = grid.lambda().mapv(|l| scale * (1.0 + l).powf(-p));
        Self::new(Array2::zeros(std.dim()), std)
    }

    pub fn mean(&self) -> &Array2<f64> {
        &self.mean_freq
    }

    pub fn std(&self) -> &Array2<f64> {
        &self.std_freq
    }

    pub fn n(&self) -> usize {
        self.mean_freq.dim().0
    }

    /// Draw frequency coefficients of one sample.
    pub fn sample_freq(&self, channels: usize, rng: &mut CounterRng) -> FreqTensor {
        let n = self.n();
        let mut u = FreqTensor::zeros(channels, n);
        for c in 0..channels {
            for i in 0..n {
                for j in 0..n {
                    u.array_mut()[[c, i, j]] =
                        self.mean_freq[[i, j]] + self.std_freq[[i, j]] * rng.normal();
                }
            }
        }
        u
    }
}

/// Exact MMSE noise predictor for data drawn from a [`GaussianDataPrior`].
///
/// Per frequency, `E[u_x | u_t] = (alpha s^2 u_t + sigma^2 mu) / (alpha^2 s^2
/// + sigma^2)` and `eps_hat = (u_t - alpha E[u_x | u_t]) / sigma`; both the
/// prior and the marginal factorize, so this is the posterior mean exactly.
#[derive(Debug, Clone)]
pub struct GaussianOracleDenoiser {
    prior: GaussianDataPrior,
    params: ScheduleParams,
    grid: FrequencyGrid,
    dct: Dct,
    channels: usize,
}

impl GaussianOracleDenoiser {
    pub fn new(prior: GaussianDataPrior, params: ScheduleParams, channels: usize) -> Result<Self> {
        params.validate()?;
        if prior.n() != params.n {
            return Err(Error::dim(format!("{}", params.n), format!("{}", prior.n())));
        }
        let grid = FrequencyGrid::new(params.n)?;
        let dct = Dct::new(params.n)?;
        Ok(GaussianOracleDenoiser {
            prior,
            params,
            grid,
            dct,
            channels,
        })
    }

    pub fn prior(&self) -> &GaussianDataPrior {
        &self.prior
    }

    /// Posterior mean of the data coefficients given the latent coefficients.
    pub fn posterior_data_mean(&self, u_t: &FreqTensor, t: f64) -> Result<FreqTensor> {
        let coeffs = alpha_sigma(t, &self.grid, &self.params)?;
        let sigma2 = coeffs.sigma * coeffs.sigma;
        let mut out = u_t.clone();
        for mut ch in out.array_mut().outer_iter_mut() {
            for i in 0..self.params.n {
                for j in 0..self.params.n {
                    let alpha = coeffs.alpha[[i, j]];
                    let s2 = self.prior.std_freq[[i, j]].powi(2);
                    let mu = self.prior.mean_freq[[i, j]];
                    ch[[i, j]] =
                        (alpha * s2 * ch[[i, j]] + sigma2 * mu) / (alpha * alpha * s2 + sigma2);
                }
            }
        }
        Ok(out)
    }
}

impl Denoiser for GaussianOracleDenoiser {
    fn n(&self) -> usize {
        self.params.n
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn predict_eps(&self, z_t: &ImageTensor, t: f64) -> Result<ImageTensor> {
        let u = self.dct.forward(z_t)?;
        let eps_freq = self.predict_eps_freq(&u, t, &self.dct)?;
        self.dct.inverse(&eps_freq)
    }

    fn predict_eps_freq(&self, u_t: &FreqTensor, t: f64, _dct: &Dct) -> Result<FreqTensor> {
        let coeffs = alpha_sigma(t, &self.grid, &self.params)?;
        let x_mean = self.posterior_data_mean(u_t, t)?;
        let mut out = u_t.clone();
        for (mut ch, xch) in out
            .array_mut()
            .outer_iter_mut()
            .zip(x_mean.array().outer_iter())
        {
            for i in 0..self.params.n {
                for j in 0..self.params.n {
                    ch[[i, j]] =
                        (ch[[i, j]] - coeffs.alpha[[i, j]] * xch[[i, j]]) / coeffs.sigma;
                }
            }
        }
        Ok(out)
    }
}

/// What the network is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictTarget {
    /// Predict the injected noise (the default parametrization).
    Eps,
    /// Predict the clean image; converted through `x_to_eps` when sampling.
    X,
}

impl PredictTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictTarget::Eps => "eps",
            PredictTarget::X => "x",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(PredictTarget::Eps),
            "x" => Ok(PredictTarget::X),
            other => Err(Error::InvalidArgument(format!(
                "unknown prediction target {other:?} (expected eps or x)"
            ))),
        }
    }
}

/// Architecture descriptor for the MLP denoiser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    pub n: usize,
    pub channels: usize,
    pub hidden: Vec<usize>,
    /// Number of sinusoidal time-embedding frequencies (each contributes a
    /// sin and a cos feature). Frequencies are `2 pi * 1000^(j / (F - 1))`.
    pub time_embed_freqs: usize,
    pub predict: PredictTarget,
}

impl MlpArch {
    pub fn new(n: usize, channels: usize) -> Self {
        MlpArch {
            n,
            channels,
            hidden: vec![128, 128],
            time_embed_freqs: 16,
            predict: PredictTarget::Eps,
        }
    }

    pub fn embed_dim(&self) -> usize {
        2 * self.time_embed_freqs
    }

    pub fn input_dim(&self) -> usize {
        self.channels * self.n * self.n + self.embed_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.channels * self.n * self.n
    }

    /// Layer sizes including input and output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim());
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.output_dim());
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument("empty input shape".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden sizes must be nonzero".into()));
        }
        if self.time_embed_freqs < 2 {
            return Err(Error::InvalidArgument(
                "need at least 2 time-embedding frequencies".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Fully-connected denoiser with SiLU activations, a sinusoidal time
/// embedding concatenated to the flattened latent, and a zero-initialized
/// output layer (so the prediction at initialization is exactly zero).
#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    arch: MlpArch,
    params: Vec<f64>,
}

impl MlpDenoiser {
    /// He-normal hidden layers, zero output layer.
    pub fn init(arch: MlpArch, rng: &mut CounterRng) -> Result<Self> {
        arch.validate()?;
        let sizes = arch.layer_sizes();
        let mut params = Vec::with_capacity(arch.param_count());
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let last = l == sizes.len() - 2;
            let scale = if last { 0.0 } else { (2.0 / fan_in as f64).sqrt() };
            for _ in 0..fan_in * fan_out {
                params.push(scale * rng.normal());
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(MlpDenoiser { arch, params })
    }

    pub fn from_params(arch: MlpArch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::dim(
                format!("{} parameters", arch.param_count()),
                format!("{}", params.len()),
            ));
        }
        Ok(MlpDenoiser { arch, params })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Replace the parameter vector (length-checked).
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dim(
                format!("{} parameters", self.params.len()),
                format!("{}", params.len()),
            ));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn embed_time(&self, t: f64, out: &mut Vec<f64>) {
        let f = self.arch.time_embed_freqs;
        for j in 0..f {
            let omega =
                2.0 * std::f64::consts::PI * 1000f64.powf(j as f64 / (f as f64 - 1.0));
            out.push((omega * t).sin());
            out.push((omega * t).cos());
        }
    }

    fn input_vec(&self, z_t: &ImageTensor, t: f64) -> Result<Vec<f64>> {
        if z_t.n() != self.arch.n || z_t.channels() != self.arch.channels {
            return Err(Error::dim(
                format!("{} ch {1}x{1} input", self.arch.channels, self.arch.n),
                format!("{} ch {1}x{1}", z_t.channels(), z_t.n()),
            ));
        }
        let mut input = Vec::with_capacity(self.arch.input_dim());
        input.extend(z_t.array().iter().copied());
        self.embed_time(t, &mut input);
        Ok(input)
    }

    /// Forward pass keeping pre-activations for the backward pass.
    fn forward_raw(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let sizes = self.arch.layer_sizes();
        let n_layers = sizes.len() - 1;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut act: Vec<f64> = input.to_vec();
        let mut offset = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases =
                &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = biases[o];
                for (wi, ai) in row.iter().zip(act.iter()) {
                    acc += wi * ai;
                }
                *zo = acc;
            }
            pre.push(z.clone());
            act = if l == n_layers - 1 {
                z
            } else {
                z.iter().map(|&v| silu(v)).collect()
            };
        }
        (pre, act)
    }

    /// Deterministic prediction for a single latent.
    pub fn forward(&self, z_t: &ImageTensor, t: f64) -> Result<ImageTensor> {
        let input = self.input_vec(z_t, t)?;
        let (_, out) = self.forward_raw(&input);
        let data =
            ndarray::Array3::from_shape_vec((self.arch.channels, self.arch.n, self.arch.n), out)
                .expect("output length matches architecture");
        Ok(ImageTensor { data })
    }

    /// Mean-squared error against `target` plus its exact parameter gradient,
    /// for a single `(z_t, t)` input. The loss is averaged over output
    /// entries, matching the training objective.
    pub fn loss_and_grad(
        &self,
        z_t: &ImageTensor,
        t: f64,
        target: &ImageTensor,
    ) -> Result<(f64, Vec<f64>)> {
        if target.n() != self.arch.n || target.channels() != self.arch.channels {
            return Err(Error::dim(
                format!("{} ch {1}x{1} target", self.arch.channels, self.arch.n),
                format!("{} ch {1}x{1}", target.channels(), target.n()),
            ));
        }
        let input = self.input_vec(z_t, t)?;
        let (pre, out) = self.forward_raw(&input);
        let sizes = self.arch.layer_sizes();
        let n_layers = sizes.len() - 1;
        let dim = self.arch.output_dim() as f64;

        let target_flat: Vec<f64> = target.array().iter().copied().collect();
        let mut loss = 0.0;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(target_flat.iter())
            .map(|(&p, &y)| {
                let d = p - y;
                loss += d * d;
                2.0 * d / dim
            })
            .collect();
        loss /= dim;

        // Activations entering each layer.
        let mut act_in: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        act_in.push(input);
        for l in 0..n_layers - 1 {
            act_in.push(pre[l].iter().map(|&v| silu(v)).collect());
        }

        let mut grad = vec![0.0; self.params.len()];
        let mut layer_offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in sizes.windows(2) {
            layer_offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let offset = layer_offsets[l];
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let a = &act_in[l];
            {
                let gw = &mut grad[offset..offset + fan_in * fan_out];
                for o in 0..fan_out {
                    let d = delta[o];
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, ai) in row.iter_mut().zip(a.iter()) {
                        *g += d * ai;
                    }
                }
            }
            let gb = &mut grad[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            gb.copy_from_slice(&delta);

            if l > 0 {
                let mut prev = vec![0.0; fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    for (p, wi) in prev.iter_mut().zip(row.iter()) {
                        *p += d * wi;
                    }
                }
                for (p, &z) in prev.iter_mut().zip(pre[l - 1].iter()) {
                    *p *= silu_grad(z);
                }
                delta = prev;
            }
        }
        Ok((loss, grad))
    }
}

/// Adapter that turns a trained network into a [`Denoiser`], converting
/// x-predictions to noise predictions when needed.
pub struct TrainedDenoiser<'a> {
    net: &'a MlpDenoiser,
    process: &'a BlurringDiffusion,
}

impl<'a> TrainedDenoiser<'a> {
    pub fn new(net: &'a MlpDenoiser, process: &'a BlurringDiffusion) -> Result<Self> {
        if net.arch().n != process.params().n {
            return Err(Error::CheckpointMismatch(format!(
                "network expects n = {}, process has n = {}",
                net.arch().n,
                process.params().n
            )));
        }
        Ok(TrainedDenoiser { net, process })
    }
}

impl Denoiser for TrainedDenoiser<'_> {
    fn n(&self) -> usize {
        self.net.arch().n
    }

    fn channels(&self) -> usize {
        self.net.arch().channels
    }

    fn predict_eps(&self, z_t: &ImageTensor, t: f64) -> Result<ImageTensor> {
        let out = self.net.forward(z_t, t)?;
        match self.net.arch().predict {
            PredictTarget::Eps => Ok(out),
            PredictTarget::X => self.process.x_to_eps(z_t, &out, t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_limits() {
        let grid = FrequencyGrid::new(4).unwrap();
        let params = ScheduleParams::new(4, 10.0);
        let mu = Array2::from_elem((4, 4), 0.3);

        // Near-delta prior: posterior mean collapses to mu.
        let prior = GaussianDataPrior::new(mu.clone(), Array2::from_elem((4, 4), 1e-9)).unwrap();
        let oracle = GaussianOracleDenoiser::new(prior, params.clone(), 1).unwrap();
        let mut rng = CounterRng::new(2);
        let u = GaussianDataPrior::new(mu.clone(), Array2::from_elem((4, 4), 1.0))
            .unwrap()
            .sample_freq(1, &mut rng);
        let t = 0.4;
        let xm = oracle.posterior_data_mean(&u, t).unwrap();
        for (v, m) in xm.array().iter().zip(mu.iter()) {
            assert!((v - m).abs() < 1e-6);
        }
        let coeffs = alpha_sigma(t, &grid, &params).unwrap();
        let eps = oracle
            .predict_eps_freq(&u, t, &Dct::new(4).unwrap())
            .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect =
                    (u.array()[[0, i, j]] - coeffs.alpha[[i, j]] * mu[[i, j]]) / coeffs.sigma;
                assert!((eps.array()[[0, i, j]] - expect).abs() < 1e-5);
            }
        }

        // No signal: with heavy blur at t = 1 the high-frequency alpha is
        // nearly zero, so the posterior mean reverts to the prior mean.
        let prior = GaussianDataPrior::new(mu.clone(), Array2::from_elem((4, 4), 0.5)).unwrap();
        let oracle = GaussianOracleDenoiser::new(prior, ScheduleParams::new(4, 20.0), 1).unwrap();
        let xm = oracle.posterior_data_mean(&u, 1.0).unwrap();
        assert!((xm.array()[[0, 3, 3]] - 0.3).abs() < 1e-4);
    }

    #[test]
    fn zero_initialized_network_predicts_zero() {
        let mut rng = CounterRng::new(5);
        let net = MlpDenoiser::init(MlpArch::new(4, 1), &mut rng).unwrap();
        let z = ImageTensor::standard_normal(1, 4, &mut rng);
        let out = net.forward(&z, 0.3).unwrap();
        assert!(out.array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = CounterRng::new(6);
        let mut net = MlpDenoiser::init(MlpArch::new(4, 1), &mut rng).unwrap();
        // Give the output layer nonzero weights for a nontrivial check.
        let n_params = net.params().len();
        for i in n_params - 100..n_params {
            net.params_mut()[i] = 0.01 * (i % 17) as f64;
        }
        let z = ImageTensor::standard_normal(1, 4, &mut rng);
        let a = net.forward(&z, 0.77).unwrap();
        let b = net.forward(&z, 0.77).unwrap();
        assert_eq!(a.array(), b.array());
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = CounterRng::new(7);
        let mut arch = MlpArch::new(3, 1);
        arch.hidden = vec![10, 8];
        let mut net = MlpDenoiser::init(arch, &mut rng).unwrap();
        // Perturb all layers (including the zero output layer) so the
        // gradient has no dead regions.
        for p in net.params_mut().iter_mut() {
            *p += 0.05 * rng.normal();
        }
        let z = ImageTensor::standard_normal(1, 3, &mut rng);
        let target = ImageTensor::standard_normal(1, 3, &mut rng);
        let t = 0.31;
        let (_, grad) = net.loss_and_grad(&z, t, &target).unwrap();

        let h = 1e-5;
        let n_params = net.params().len();
        let mut checked = 0;
        for k in 0..100 {
            let idx = (rng.next_u64() as usize) % n_params;
            let orig = net.params()[idx];
            net.params_mut()[idx] = orig + h;
            let (lp, _) = net.loss_and_grad(&z, t, &target).unwrap();
            net.params_mut()[idx] = orig - h;
            let (lm, _) = net.loss_and_grad(&z, t, &target).unwrap();
            net.params_mut()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[idx].abs()).max(1e-8);
            assert!(
                (fd - grad[idx]).abs() / denom < 1e-4,
                "coordinate {k} (param {idx}): fd = {fd}, analytic = {}",
                grad[idx]
            );
            checked += 1;
        }
        assert_eq!(checked, 100);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut rng = CounterRng::new(8);
        let net = MlpDenoiser::init(MlpArch::new(4, 1), &mut rng).unwrap();
        let bad = ImageTensor::standard_normal(1, 5, &mut rng);
        assert!(net.forward(&bad, 0.5).is_err());
        let bad_ch = ImageTensor::standard_normal(2, 4, &mut rng);
        assert!(net.forward(&bad_ch, 0.5).is_err());
    }
}

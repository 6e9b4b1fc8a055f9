//! Training loop for the MLP denoiser: per-step batches of
//! `(t ~ U(0,1), eps ~ N(0,I))` draws, Adam updates, and an exponential
//! moving average of the parameters.

use rayon::prelude::*;

use crate::denoiser::{MlpDenoiser, PredictTarget};
use crate::diffusion::BlurringDiffusion;
use crate::error::{Error, Result};
use crate::rng::{stream_id, CounterRng};
use crate::transform::ImageTensor;

/// Loss above which training aborts with a diagnostic.
pub const DIVERGENCE_THRESHOLD: f64 = 1e4;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            batch_size: 32,
            steps: 5000,
            seed: 0,
            ema_decay: 0.9999,
        }
    }
}

/// Adam accumulators, kept so checkpoints can carry the optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One Adam update with bias-corrected moments.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    /// Exponentially smoothed loss (decay 0.99).
    pub ema_loss: f64,
}

/// Everything a finished run produces besides the mutated model itself.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub ema_params: Vec<f64>,
    pub opt: AdamState,
    pub history: Vec<LossRecord>,
}

/// The `(t, eps)` draws for one batch element of one training step.
fn element_draws(
    seed: u64,
    step: usize,
    elem: usize,
    channels: usize,
    n: usize,
) -> (f64, ImageTensor) {
    let mut rng = CounterRng::stream(seed, &[stream_id::TRAIN_NOISE, step as u64, elem as u64]);
    let t = rng.uniform_co();
    let eps = ImageTensor::standard_normal(channels, n, &mut rng);
    (t, eps)
}

/// Loss and gradient of one training batch. Elements are evaluated in
/// parallel; the reduction runs in element order so the result does not
/// depend on scheduling.
pub fn batch_loss_and_grad(
    model: &MlpDenoiser,
    batch: &[&ImageTensor],
    process: &BlurringDiffusion,
    step: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let arch = model.arch();
    let per_element: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(e, x)| {
            let (t, eps) = element_draws(seed, step, e, arch.channels, arch.n);
            let z_t = process.diffuse(x, t, &eps)?;
            let target = match arch.predict {
                PredictTarget::Eps => &eps,
                PredictTarget::X => *x,
            };
            model.loss_and_grad(&z_t, t, target)
        })
        .collect();

    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.params().len()];
    for r in per_element {
        let (l, g) = r?;
        loss += l * inv;
        for (acc, gi) in grad.iter_mut().zip(g.iter()) {
            *acc += gi * inv;
        }
    }
    Ok((loss, grad))
}

/// Empirical eps-prediction loss of an arbitrary denoiser on a batch, using
/// the same per-element draw scheme as training. Used by the verification
/// checks to compare predictors.
pub fn empirical_eps_loss(
    denoiser: &(impl crate::denoiser::Denoiser + Sync),
    batch: &[&ImageTensor],
    process: &BlurringDiffusion,
    step: usize,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (channels, n) = (denoiser.channels(), denoiser.n());
    let losses: Vec<Result<f64>> = batch
        .par_iter()
        .enumerate()
        .map(|(e, x)| {
            let (t, eps) = element_draws(seed, step, e, channels, n);
            let z_t = process.diffuse(x, t, &eps)?;
            let pred = denoiser.predict_eps(&z_t, t)?;
            let dim = (channels * n * n) as f64;
            let mut l = 0.0;
            for (p, y) in pred.array().iter().zip(eps.array().iter()) {
                l += (p - y) * (p - y);
            }
            Ok(l / dim)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / batch.len() as f64)
}

/// Run the optimizer for `cfg.steps` steps over `data`, mutating `model` in
/// place. Deterministic given `cfg.seed`. Returns the EMA parameter copy,
/// the final optimizer state, and the per-step loss history.
pub fn train(
    model: &mut MlpDenoiser,
    data: &[ImageTensor],
    process: &BlurringDiffusion,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    for x in data {
        if x.n() != model.arch().n || x.channels() != model.arch().channels {
            return Err(Error::dim(
                format!("{} ch {1}x{1} data", model.arch().channels, model.arch().n),
                format!("{} ch {1}x{1}", x.channels(), x.n()),
            ));
        }
    }

    let mut opt = AdamState::new(model.params().len());
    let mut ema_params = model.params().to_vec();
    let mut history = Vec::with_capacity(cfg.steps);
    let mut ema_loss = f64::NAN;

    for step in 1..=cfg.steps {
        let mut idx_rng = CounterRng::stream(cfg.seed, &[stream_id::TRAIN_BATCH, step as u64]);
        let batch: Vec<&ImageTensor> = (0..cfg.batch_size)
            .map(|_| &data[idx_rng.below(data.len() as u64) as usize])
            .collect();

        let (loss, grad) = batch_loss_and_grad(model, &batch, process, step, cfg.seed)?;
        if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence { step, loss });
        }
        opt.update(model.params_mut(), &grad, cfg.lr);

        for (e, p) in ema_params.iter_mut().zip(model.params().iter()) {
            *e = cfg.ema_decay * *e + (1.0 - cfg.ema_decay) * p;
        }

        ema_loss = if step == 1 {
            loss
        } else {
            0.99 * ema_loss + 0.01 * loss
        };
        history.push(LossRecord {
            step,
            loss,
            ema_loss,
        });
    }

    Ok(TrainOutput {
        ema_params,
        opt,
        history,
    })
}

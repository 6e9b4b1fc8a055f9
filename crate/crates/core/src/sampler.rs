//! Ancestral sampling: iterate the learned denoising distribution from
//! `z ~ N(0, I)` down the time grid `t = T/T, ..., 1/T` with `s = t - 1/T`.
//!
//! The latent is kept in frequency space across steps; pixel space is
//! entered once per step for the network input (and once at the end).
//! Batch elements evolve independently on RNG streams derived from
//! `(seed, element, step)` — see [`crate::rng`] — so parallel and serial
//! execution produce identical output.

use rayon::prelude::*;

use crate::denoiser::Denoiser;
use crate::diffusion::{mul_per_channel, BlurringDiffusion};
use crate::error::{Error, Result};
use crate::rng::{stream_id, CounterRng};
use crate::schedule::{posterior_from_parts, ScheduleTable, DELTA};
use crate::transform::{FreqTensor, ImageTensor};

/// How the step down to `s = 0` is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastStepMode {
    /// Follow the update rule verbatim, injecting noise at the final step.
    Literal,
    /// Suppress the final noise and return the data prediction instead.
    Mean,
}

impl LastStepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LastStepMode::Literal => "literal",
            LastStepMode::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(LastStepMode::Literal),
            "mean" => Ok(LastStepMode::Mean),
            other => Err(Error::InvalidArgument(format!(
                "unknown last-step mode {other:?} (expected literal or mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Number of grid steps T.
    pub t_steps: usize,
    pub seed: u64,
    pub batch: usize,
    pub last_step_mode: LastStepMode,
    /// Experimental: clip the implied data prediction to `[-1, 1]` in pixel
    /// space each step and convert back to a noise prediction.
    pub clip_x_hat: bool,
    /// Snapshot stride for [`sample_trajectory`].
    pub trajectory_stride: usize,
}

impl SamplerConfig {
    pub fn new(t_steps: usize, seed: u64, batch: usize) -> Self {
        SamplerConfig {
            t_steps,
            seed,
            batch,
            last_step_mode: LastStepMode::Literal,
            clip_x_hat: false,
            trajectory_stride: t_steps.max(1),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::InvalidArgument("t_steps must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be >= 1".into()));
        }
        if self.trajectory_stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// One recorded latent along a trajectory; `grid_index` is the time-grid
/// position of the state (`T` is the initial draw, `0` the final output).
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub grid_index: usize,
    pub t: f64,
    pub z: ImageTensor,
}

/// Per-step posterior coefficients shared by all batch elements.
struct StepCoeffs {
    /// Grid index of t for this update (s = k - 1).
    k: usize,
    t: f64,
    sigma_t: f64,
    alpha_t: ndarray::Array2<f64>,
    coeff_zt: ndarray::Array2<f64>,
    coeff_pred: ndarray::Array2<f64>,
    sigma_denoise: ndarray::Array2<f64>,
}

fn build_steps(table: &ScheduleTable) -> Vec<StepCoeffs> {
    let t_steps = table.t_steps();
    (1..=t_steps)
        .rev()
        .map(|k| {
            let cs = table.at_step(k - 1);
            let ct = table.at_step(k);
            let (sigma2_denoise, coeff_zt, coeff_pred) =
                posterior_from_parts(&cs.alpha, cs.sigma, &ct.alpha, ct.sigma, DELTA);
            StepCoeffs {
                k,
                t: ct.t,
                sigma_t: ct.sigma,
                alpha_t: ct.alpha.clone(),
                coeff_zt,
                coeff_pred,
                sigma_denoise: sigma2_denoise.mapv(f64::sqrt),
            }
        })
        .collect()
}

fn check_finite(u: &FreqTensor, grid_index: usize, t: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(Error::NonFiniteLatent {
            step: grid_index,
            t,
            max_abs: u
                .array()
                .iter()
                .filter(|v| v.is_finite())
                .fold(0.0f64, |m, v| m.max(v.abs())),
        });
    }
    Ok(())
}

/// Evolve one batch element, optionally recording snapshots.
fn run_element<D: Denoiser + Sync>(
    denoiser: &D,
    process: &BlurringDiffusion,
    config: &SamplerConfig,
    steps: &[StepCoeffs],
    elem: usize,
    record: Option<&mut Vec<Snapshot>>,
) -> Result<ImageTensor> {
    let dct = process.dct();
    let t_steps = config.t_steps;
    let channels = denoiser.channels();
    let n = denoiser.n();

    let mut init_rng = CounterRng::stream(config.seed, &[stream_id::SAMPLER, elem as u64, 0]);
    let z0 = ImageTensor::standard_normal(channels, n, &mut init_rng);
    let mut u = dct.forward(&z0)?;

    let mut snapshots = record;
    if let Some(snaps) = snapshots.as_deref_mut() {
        snaps.push(Snapshot {
            grid_index: t_steps,
            t: 1.0,
            z: z0,
        });
    }

    let mut out: Option<ImageTensor> = None;
    for sc in steps {
        check_finite(&u, sc.k, sc.t)?;
        let mut u_eps = denoiser.predict_eps_freq(&u, sc.t, dct)?;

        if config.clip_x_hat {
            // x_hat = (u - sigma_t u_eps) / alpha_t, clipped in pixel space,
            // then converted back to a noise prediction.
            let mut u_x = u.array().clone();
            u_x.scaled_add(-sc.sigma_t, u_eps.array());
            for mut ch in u_x.outer_iter_mut() {
                ch /= &sc.alpha_t;
            }
            let mut x_hat = dct.inverse(&FreqTensor { data: u_x })?;
            x_hat.array_mut().mapv_inplace(|v| v.clamp(-1.0, 1.0));
            let u_x_clipped = dct.forward(&x_hat)?;
            let mut e = u.array().clone();
            e -= &mul_per_channel(u_x_clipped.array(), &sc.alpha_t);
            e.mapv_inplace(|v| v / sc.sigma_t);
            u_eps = FreqTensor { data: e };
        }

        let last = sc.k == 1;
        if last && config.last_step_mode == LastStepMode::Mean {
            let mut u_x = u.array().clone();
            u_x.scaled_add(-sc.sigma_t, u_eps.array());
            for mut ch in u_x.outer_iter_mut() {
                ch /= &sc.alpha_t;
            }
            let u_x = FreqTensor { data: u_x };
            check_finite(&u_x, 0, 0.0)?;
            u = u_x;
        } else {
            // mu = coeff_zt u + coeff_pred (u - sigma_t u_eps), then add
            // per-frequency noise sqrt(sigma2_denoise) * DCT(eps).
            let mut pred_term = u.array().clone();
            pred_term.scaled_add(-sc.sigma_t, u_eps.array());
            let mut mu = mul_per_channel(u.array(), &sc.coeff_zt);
            mu += &mul_per_channel(&pred_term, &sc.coeff_pred);

            let mut noise_rng =
                CounterRng::stream(config.seed, &[stream_id::SAMPLER, elem as u64, sc.k as u64]);
            let eps = ImageTensor::standard_normal(channels, n, &mut noise_rng);
            let u_eps_noise = dct.forward(&eps)?;
            mu += &mul_per_channel(u_eps_noise.array(), &sc.sigma_denoise);
            u = FreqTensor { data: mu };
            check_finite(&u, sc.k - 1, sc.t - 1.0 / t_steps as f64)?;
        }

        if let Some(snaps) = snapshots.as_deref_mut() {
            let taken = t_steps - sc.k + 1;
            if taken % config.trajectory_stride == 0 || last {
                snaps.push(Snapshot {
                    grid_index: sc.k - 1,
                    t: (sc.k - 1) as f64 / t_steps as f64,
                    z: dct.inverse(&u)?,
                });
            }
        }

        if last {
            out = Some(dct.inverse(&u)?);
        }
    }
    Ok(out.expect("at least one step"))
}

/// Draw a batch of samples. Deterministic given `(config, params)`.
pub fn sample<D: Denoiser + Sync>(
    denoiser: &D,
    config: &SamplerConfig,
    process: &BlurringDiffusion,
) -> Result<Vec<ImageTensor>> {
    config.validate()?;
    if denoiser.n() != process.params().n {
        return Err(Error::dim(
            format!("denoiser for n = {}", process.params().n),
            format!("n = {}", denoiser.n()),
        ));
    }
    let table = ScheduleTable::new(process.grid(), process.params(), config.t_steps)?;
    let steps = build_steps(&table);
    (0..config.batch)
        .into_par_iter()
        .map(|e| run_element(denoiser, process, config, &steps, e, None))
        .collect()
}

/// As [`sample`], but also record latents every `trajectory_stride` steps
/// (plus the initial draw and the final state). The last snapshot equals
/// the [`sample`] output for the same seed.
pub fn sample_trajectory<D: Denoiser + Sync>(
    denoiser: &D,
    config: &SamplerConfig,
    process: &BlurringDiffusion,
) -> Result<Vec<Vec<Snapshot>>> {
    config.validate()?;
    let table = ScheduleTable::new(process.grid(), process.params(), config.t_steps)?;
    let steps = build_steps(&table);
    (0..config.batch)
        .into_par_iter()
        .map(|e| {
            let mut snaps = Vec::new();
            let last = run_element(denoiser, process, config, &steps, e, Some(&mut snaps))?;
            // The final state is always recorded; replace to guarantee
            // bit-identity with `sample` even in Mean mode.
            if let Some(s) = snaps.last_mut() {
                if s.grid_index == 0 {
                    s.z = last;
                }
            }
            Ok(snaps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GaussianDataPrior, GaussianOracleDenoiser};
    use crate::schedule::ScheduleParams;
    use ndarray::Array2;

    fn oracle_setup(sigma_b_max: f64, n: usize) -> (BlurringDiffusion, GaussianOracleDenoiser) {
        let params = ScheduleParams::new(n, sigma_b_max);
        let process = BlurringDiffusion::new(params.clone()).unwrap();
        let prior = GaussianDataPrior::power_law(process.grid(), 1.0, 1.0).unwrap();
        let denoiser = GaussianOracleDenoiser::new(prior, params, 1).unwrap();
        (process, denoiser)
    }

    #[test]
    fn same_seed_gives_bitwise_identical_batches() {
        let (process, denoiser) = oracle_setup(10.0, 4);
        let config = SamplerConfig::new(20, 77, 3);
        let a = sample(&denoiser, &config, &process).unwrap();
        let b = sample(&denoiser, &config, &process).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.array(), y.array());
        }
        let c = sample(
            &denoiser,
            &SamplerConfig::new(20, 78, 3),
            &process,
        )
        .unwrap();
        assert_ne!(a[0].array(), c[0].array());
    }

    #[test]
    fn single_step_literal_sampling_matches_the_closed_form() {
        // T = 1 without blur: one posterior step from pure noise. Replay the
        // update by hand from the same streams.
        let (process, denoiser) = oracle_setup(0.0, 4);
        let config = SamplerConfig::new(1, 5, 1);
        let out = sample(&denoiser, &config, &process).unwrap();

        let dct = process.dct();
        let mut rng = CounterRng::stream(5, &[stream_id::SAMPLER, 0, 0]);
        let z0 = ImageTensor::standard_normal(1, 4, &mut rng);
        let u0 = dct.forward(&z0).unwrap();
        let u_eps = denoiser.predict_eps_freq(&u0, 1.0, dct).unwrap();

        let table = ScheduleTable::new(process.grid(), process.params(), 1).unwrap();
        let steps = build_steps(&table);
        let sc = &steps[0];
        let mut pred = u0.array().clone();
        pred.scaled_add(-sc.sigma_t, u_eps.array());
        let mut mu = mul_per_channel(u0.array(), &sc.coeff_zt);
        mu += &mul_per_channel(&pred, &sc.coeff_pred);
        let mut noise_rng = CounterRng::stream(5, &[stream_id::SAMPLER, 0, 1]);
        let eps = ImageTensor::standard_normal(1, 4, &mut noise_rng);
        mu += &mul_per_channel(dct.forward(&eps).unwrap().array(), &sc.sigma_denoise);
        let expect = dct.inverse(&FreqTensor { data: mu }).unwrap();

        let diff = (out[0].array() - expect.array())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn trajectory_brackets_the_run_and_matches_sample() {
        let (process, denoiser) = oracle_setup(20.0, 4);
        let mut config = SamplerConfig::new(16, 3, 2);
        config.trajectory_stride = 16;
        let trajs = sample_trajectory(&denoiser, &config, &process).unwrap();
        let outs = sample(&denoiser, &config, &process).unwrap();
        for (traj, out) in trajs.iter().zip(outs.iter()) {
            assert_eq!(traj.len(), 2, "stride = T records start and end only");
            assert_eq!(traj[0].grid_index, 16);
            assert_eq!(traj[0].t, 1.0);
            assert_eq!(traj.last().unwrap().grid_index, 0);
            assert_eq!(traj.last().unwrap().z.array(), out.array());
        }

        // The first snapshot is the untouched initial draw.
        let mut rng = CounterRng::stream(3, &[stream_id::SAMPLER, 0, 0]);
        let z0 = ImageTensor::standard_normal(1, 4, &mut rng);
        assert_eq!(trajs[0][0].z.array(), z0.array());
    }

    #[test]
    fn mean_mode_ends_with_the_data_prediction() {
        let (process, denoiser) = oracle_setup(10.0, 4);
        let mut config = SamplerConfig::new(8, 11, 1);
        config.last_step_mode = LastStepMode::Mean;
        let mut traj_config = config.clone();
        traj_config.trajectory_stride = 8;
        let outs = sample(&denoiser, &config, &process).unwrap();
        let trajs = sample_trajectory(&denoiser, &traj_config, &process).unwrap();
        assert_eq!(outs[0].array(), trajs[0].last().unwrap().z.array());

        // Literal mode differs from mean mode (it adds noise at the end).
        let mut literal = config.clone();
        literal.last_step_mode = LastStepMode::Literal;
        let lit = sample(&denoiser, &literal, &process).unwrap();
        assert_ne!(outs[0].array(), lit[0].array());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (process, denoiser) = oracle_setup(0.0, 4);
        assert!(sample(&denoiser, &SamplerConfig::new(0, 1, 1), &process).is_err());
        assert!(sample(&denoiser, &SamplerConfig::new(4, 1, 0), &process).is_err());
        let (process8, _) = oracle_setup(0.0, 8);
        assert!(sample(&denoiser, &SamplerConfig::new(4, 1, 1), &process8).is_err());
    }

    struct NanDenoiser;
    impl Denoiser for NanDenoiser {
        fn n(&self) -> usize {
            4
        }
        fn channels(&self) -> usize {
            1
        }
        fn predict_eps(&self, z_t: &ImageTensor, _t: f64) -> crate::Result<ImageTensor> {
            let mut out = z_t.clone();
            out.array_mut().fill(f64::NAN);
            Ok(out)
        }
    }

    #[test]
    fn non_finite_latents_abort_with_the_step_index() {
        let process = BlurringDiffusion::new(ScheduleParams::new(4, 0.0)).unwrap();
        let err = sample(&NanDenoiser, &SamplerConfig::new(10, 1, 1), &process).unwrap_err();
        match err {
            Error::NonFiniteLatent { step, .. } => assert_eq!(step, 9),
            other => panic!("expected NonFiniteLatent, got {other}"),
        }
    }

    #[test]
    fn clip_x_hat_changes_nothing_when_predictions_are_in_range() {
        // With a tiny prior the implied x_hat stays well inside [-1, 1],
        // so the clipping path must be a no-op up to roundoff.
        let params = ScheduleParams::new(4, 5.0);
        let process = BlurringDiffusion::new(params.clone()).unwrap();
        let prior = GaussianDataPrior::new(
            Array2::zeros((4, 4)),
            Array2::from_elem((4, 4), 0.05),
        )
        .unwrap();
        let denoiser = GaussianOracleDenoiser::new(prior, params, 1).unwrap();
        let base = SamplerConfig::new(12, 9, 1);
        let mut clipped = base.clone();
        clipped.clip_x_hat = true;
        let a = sample(&denoiser, &base, &process).unwrap();
        let b = sample(&denoiser, &clipped, &process).unwrap();
        let diff = (a[0].array() - b[0].array())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-9, "diff = {diff}");
    }
}

//! Time-dependent coefficients: cosine noise schedule with log-SNR clipping,
//! blur schedule, per-frequency signal scaling, and the Markov-transition and
//! denoising-posterior coefficients derived from them.
//!
//! Time is continuous in `[0, 1]` throughout; the discrete step grid exists
//! only in the sampler. All functions are pure and return freshly allocated
//! arrays that are never mutated afterwards.

use ndarray::Array2;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::transform::FrequencyGrid;

/// Clipping constant applied inside the posterior coefficients.
pub const DELTA: f64 = 1e-8;

/// Shape of the blur-std schedule `sigma_{B,t}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlurShape {
    /// `sigma_{B,max} * sin(t pi / 2)^2` (the better-performing default).
    SinSquared,
    /// `sigma_{B,max} * sin(t pi / 2)`.
    Sin,
}

impl BlurShape {
    pub fn as_str(self) -> &'static str {
        match self {
            BlurShape::SinSquared => "sin_squared",
            BlurShape::Sin => "sin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sin_squared" => Ok(BlurShape::SinSquared),
            "sin" => Ok(BlurShape::Sin),
            other => Err(Error::InvalidArgument(format!(
                "unknown blur shape {other:?} (expected sin_squared or sin)"
            ))),
        }
    }
}

/// Static configuration of the diffusion process.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    /// Maximum blur std in pixels; 0 recovers isotropic diffusion.
    pub sigma_b_max: f64,
    /// Floor on the per-frequency signal scaling, bounds error amplification
    /// in the reverse process.
    pub d_min: f64,
    pub logsnr_min: f64,
    pub logsnr_max: f64,
    pub blur_shape: BlurShape,
    /// Number of sampling steps on the discrete grid.
    pub t_steps: usize,
    /// Spatial grid size.
    pub n: usize,
}

impl ScheduleParams {
    pub fn new(n: usize, sigma_b_max: f64) -> Self {
        ScheduleParams {
            sigma_b_max,
            d_min: 0.001,
            logsnr_min: -10.0,
            logsnr_max: 10.0,
            blur_shape: BlurShape::SinSquared,
            t_steps: 1000,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_b_max < 0.0 {
            return Err(Error::InvalidArgument("sigma_b_max must be >= 0".into()));
        }
        if !(self.d_min > 0.0 && self.d_min < 1.0) {
            return Err(Error::InvalidArgument("d_min must lie in (0, 1)".into()));
        }
        if self.logsnr_min >= self.logsnr_max {
            return Err(Error::InvalidArgument(
                "logsnr_min must be < logsnr_max".into(),
            ));
        }
        if self.t_steps == 0 {
            return Err(Error::InvalidArgument("t_steps must be >= 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        Ok(())
    }
}

/// Marginal coefficients at a single time: `q(u_t | u_x) = N(alpha u_x, sigma^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionCoeffs {
    /// Per-frequency signal scale `a_t * d_t`.
    pub alpha: Array2<f64>,
    /// Noise std, shared by all frequencies.
    pub sigma: f64,
    pub t: f64,
}

/// Markov transition coefficients for `q(u_t | u_s)`, `s < t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCoeffs {
    pub alpha_ts: Array2<f64>,
    pub sigma2_ts: Array2<f64>,
    pub s: f64,
    pub t: f64,
}

/// Denoising-posterior coefficients for `q(u_s | u_t, x)`, `s < t`.
///
/// The posterior mean is `coeff_zt * u_t + coeff_pred * (u_t - sigma_t * u_eps_hat)`
/// and its variance is `sigma2_denoise`, everything elementwise per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorCoeffs {
    pub sigma2_denoise: Array2<f64>,
    pub coeff_zt: Array2<f64>,
    pub coeff_pred: Array2<f64>,
    pub s: f64,
    pub t: f64,
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "time must lie in [0, 1], got {t}"
        )));
    }
    Ok(())
}

fn check_st(s: f64, t: f64) -> Result<()> {
    check_t(s)?;
    check_t(t)?;
    if s >= t {
        return Err(Error::InvalidArgument(format!(
            "need s < t, got s = {s}, t = {t}"
        )));
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar log-SNR of the clipped cosine schedule at time `t`.
pub fn log_snr(t: f64, params: &ScheduleParams) -> Result<f64> {
    check_t(t)?;
    let limit_max = (-0.5 * params.logsnr_max).exp().atan();
    let limit_min = (-0.5 * params.logsnr_min).exp().atan() - limit_max;
    Ok(-2.0 * (limit_min * t + limit_max).tan().ln())
}

/// Variance-preserving cosine schedule with log-SNR clipping: returns
/// `(a_t, sigma_t)` with `a_t^2 + sigma_t^2 = 1`.
pub fn noise_scaling_cosine(t: f64, params: &ScheduleParams) -> Result<(f64, f64)> {
    let logsnr = log_snr(t, params)?;
    Ok((sigmoid(logsnr).sqrt(), sigmoid(-logsnr).sqrt()))
}

/// Blur std at time `t`.
pub fn blur_sigma(t: f64, params: &ScheduleParams) -> Result<f64> {
    check_t(t)?;
    let s = (t * PI / 2.0).sin();
    Ok(match params.blur_shape {
        BlurShape::SinSquared => params.sigma_b_max * s * s,
        BlurShape::Sin => params.sigma_b_max * s,
    })
}

/// Per-frequency signal scaling `d_t = (1 - d_min) exp(-lambda tau_t) + d_min`
/// with dissipation time `tau_t = sigma_{B,t}^2 / 2`.
pub fn frequency_scaling(
    t: f64,
    grid: &FrequencyGrid,
    params: &ScheduleParams,
) -> Result<Array2<f64>> {
    let sb = blur_sigma(t, params)?;
    let tau = sb * sb / 2.0;
    Ok(grid
        .lambda()
        .mapv(|lambda| (1.0 - params.d_min) * (-lambda * tau).exp() + params.d_min))
}

/// Combined marginal coefficients `alpha = a_t * d_t`, `sigma = sigma_t`.
pub fn alpha_sigma(
    t: f64,
    grid: &FrequencyGrid,
    params: &ScheduleParams,
) -> Result<DiffusionCoeffs> {
    let (a, sigma) = noise_scaling_cosine(t, params)?;
    let alpha = frequency_scaling(t, grid, params)?.mapv(|d| a * d);
    Ok(DiffusionCoeffs { alpha, sigma, t })
}

/// Per-frequency log-SNR `ln(alpha^2 / sigma^2)` at time `t`.
pub fn per_frequency_log_snr(
    t: f64,
    grid: &FrequencyGrid,
    params: &ScheduleParams,
) -> Result<Array2<f64>> {
    let coeffs = alpha_sigma(t, grid, params)?;
    let s2 = coeffs.sigma * coeffs.sigma;
    Ok(coeffs.alpha.mapv(|a| (a * a / s2).ln()))
}

/// Transition coefficients from raw marginal parts (sigma scalar per time).
pub fn transition_from_parts(
    alpha_s: &Array2<f64>,
    sigma_s: f64,
    alpha_t: &Array2<f64>,
    sigma_t: f64,
) -> (Array2<f64>, Array2<f64>) {
    let alpha_ts = alpha_t / alpha_s;
    let sigma2_ts = alpha_ts.mapv(|a| sigma_t * sigma_t - a * a * sigma_s * sigma_s);
    (alpha_ts, sigma2_ts)
}

/// Markov transition coefficients for the configured schedule.
pub fn transition_coeffs(
    s: f64,
    t: f64,
    grid: &FrequencyGrid,
    params: &ScheduleParams,
) -> Result<TransitionCoeffs> {
    check_st(s, t)?;
    let cs = alpha_sigma(s, grid, params)?;
    let ct = alpha_sigma(t, grid, params)?;
    let (alpha_ts, sigma2_ts) = transition_from_parts(&cs.alpha, cs.sigma, &ct.alpha, ct.sigma);
    Ok(TransitionCoeffs {
        alpha_ts,
        sigma2_ts,
        s,
        t,
    })
}

#[inline]
fn clip(x: f64, min: f64) -> f64 {
    x.max(min)
}

/// Posterior coefficients from raw marginal parts, with `delta` clipping in
/// the same three places the reference procedure applies it.
pub fn posterior_from_parts(
    alpha_s: &Array2<f64>,
    sigma_s: f64,
    alpha_t: &Array2<f64>,
    sigma_t: f64,
    delta: f64,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let n = alpha_s.dim();
    let mut sigma2_denoise = Array2::zeros(n);
    let mut coeff_zt = Array2::zeros(n);
    let mut coeff_pred = Array2::zeros(n);
    let ss2 = sigma_s * sigma_s;
    let st2 = sigma_t * sigma_t;
    for i in 0..n.0 {
        for j in 0..n.1 {
            let alpha_ts = alpha_t[[i, j]] / alpha_s[[i, j]];
            let sigma2_ts = st2 - alpha_ts * alpha_ts * ss2;
            let s2d = 1.0
                / clip(
                    1.0 / clip(ss2, delta) + 1.0 / clip(st2 / (alpha_ts * alpha_ts) - ss2, delta),
                    delta,
                );
            sigma2_denoise[[i, j]] = s2d;
            coeff_zt[[i, j]] = alpha_ts * s2d / (sigma2_ts + delta);
            coeff_pred[[i, j]] = (1.0 / alpha_ts) * s2d / clip(ss2, delta);
        }
    }
    (sigma2_denoise, coeff_zt, coeff_pred)
}

/// Denoising-posterior coefficients for the configured schedule.
pub fn posterior_coeffs(
    s: f64,
    t: f64,
    grid: &FrequencyGrid,
    params: &ScheduleParams,
) -> Result<PosteriorCoeffs> {
    check_st(s, t)?;
    let cs = alpha_sigma(s, grid, params)?;
    let ct = alpha_sigma(t, grid, params)?;
    let (sigma2_denoise, coeff_zt, coeff_pred) =
        posterior_from_parts(&cs.alpha, cs.sigma, &ct.alpha, ct.sigma, DELTA);
    Ok(PosteriorCoeffs {
        sigma2_denoise,
        coeff_zt,
        coeff_pred,
        s,
        t,
    })
}

/// Marginal coefficients precomputed on the sampler grid `t = k / T`,
/// `k = 0..=T`. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct ScheduleTable {
    coeffs: Vec<DiffusionCoeffs>,
}

impl ScheduleTable {
    pub fn new(grid: &FrequencyGrid, params: &ScheduleParams, t_steps: usize) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::InvalidArgument("t_steps must be >= 1".into()));
        }
        let coeffs = (0..=t_steps)
            .map(|k| alpha_sigma(k as f64 / t_steps as f64, grid, params))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScheduleTable { coeffs })
    }

    pub fn t_steps(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficients at grid point `k`, i.e. time `t = k / T`.
    pub fn at_step(&self, k: usize) -> &DiffusionCoeffs {
        &self.coeffs[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(sigma_b_max: f64) -> ScheduleParams {
        ScheduleParams::new(8, sigma_b_max)
    }

    #[test]
    fn logsnr_hits_the_clipping_limits_at_the_endpoints() {
        let p = params(0.0);
        assert!((log_snr(0.0, &p).unwrap() - 10.0).abs() < 1e-12);
        assert!((log_snr(1.0, &p).unwrap() + 10.0).abs() < 1e-12);

        let (a0, s0) = noise_scaling_cosine(0.0, &p).unwrap();
        assert!((a0 - 0.999977300808022).abs() < 1e-12);
        assert!((s0 - 0.006737794053133).abs() < 1e-12);
        let (a1, s1) = noise_scaling_cosine(1.0, &p).unwrap();
        assert!((a1 - s0).abs() < 1e-12);
        assert!((s1 - a0).abs() < 1e-12);
    }

    #[test]
    fn cosine_schedule_is_variance_preserving() {
        let p = params(0.0);
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            let (a, s) = noise_scaling_cosine(t, &p).unwrap();
            assert!((a * a + s * s - 1.0).abs() < 1e-12, "t = {t}");
        }
        assert!(noise_scaling_cosine(-0.1, &p).is_err());
        assert!(noise_scaling_cosine(1.1, &p).is_err());
    }

    #[test]
    fn midpoint_logsnr_is_zero() {
        // Forced by the symmetric default limits.
        let p = params(0.0);
        assert!(log_snr(0.5, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn blur_sigma_shapes() {
        let mut p = params(20.0);
        assert_eq!(blur_sigma(0.0, &p).unwrap(), 0.0);
        assert!((blur_sigma(1.0, &p).unwrap() - 20.0).abs() < 1e-12);
        assert!((blur_sigma(0.5, &p).unwrap() - 10.0).abs() < 1e-12);
        p.blur_shape = BlurShape::Sin;
        assert_eq!(blur_sigma(0.0, &p).unwrap(), 0.0);
        assert!((blur_sigma(1.0, &p).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn frequency_scaling_is_one_without_blur_or_time() {
        let grid = FrequencyGrid::new(8).unwrap();
        let p = params(20.0);
        let d0 = frequency_scaling(0.0, &grid, &p).unwrap();
        assert!(d0.iter().all(|&d| (d - 1.0).abs() < 1e-15));

        for t in [0.3, 0.7, 1.0] {
            let d = frequency_scaling(t, &grid, &p).unwrap();
            assert!((d[[0, 0]] - 1.0).abs() < 1e-15, "dc stays unblurred");
            assert!(d.iter().all(|&v| v >= p.d_min && v <= 1.0));
        }

        let p0 = params(0.0);
        for t in [0.0, 0.4, 1.0] {
            let d = frequency_scaling(t, &grid, &p0).unwrap();
            assert!(d.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn alpha_sigma_combines_scalar_and_blur_parts() {
        let grid = FrequencyGrid::new(8).unwrap();
        let p0 = params(0.0);
        let c = alpha_sigma(0.37, &grid, &p0).unwrap();
        let (a, s) = noise_scaling_cosine(0.37, &p0).unwrap();
        assert!(c.alpha.iter().all(|&v| (v - a).abs() < 1e-15));
        assert_eq!(c.sigma, s);

        let c0 = alpha_sigma(0.0, &grid, &params(20.0)).unwrap();
        assert!(c0.alpha.iter().all(|&v| (v - 0.999977300808022).abs() < 1e-12));

        // The DC channel never sees the blur.
        for sb in [0.0, 1.0, 10.0, 20.0] {
            let c = alpha_sigma(0.62, &grid, &params(sb)).unwrap();
            let (a, s) = noise_scaling_cosine(0.62, &params(sb)).unwrap();
            assert!((c.alpha[[0, 0]] - a).abs() < 1e-15);
            assert_eq!(c.sigma, s);
        }
    }

    #[test]
    fn transition_identities() {
        let grid = FrequencyGrid::new(8).unwrap();
        for sb in [0.0, 1.0, 10.0, 20.0] {
            let p = params(sb);
            let (s, t) = (0.4, 0.6);
            let cs = alpha_sigma(s, &grid, &p).unwrap();
            let ct = alpha_sigma(t, &grid, &p).unwrap();
            let tc = transition_coeffs(s, t, &grid, &p).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let comp = tc.alpha_ts[[i, j]] * cs.alpha[[i, j]];
                    assert!((comp - ct.alpha[[i, j]]).abs() < 1e-12);
                    let var = tc.alpha_ts[[i, j]].powi(2) * cs.sigma.powi(2)
                        + tc.sigma2_ts[[i, j]];
                    assert!((var - ct.sigma.powi(2)).abs() < 1e-12);
                    assert!(tc.sigma2_ts[[i, j]] > 0.0);
                }
            }
        }
        assert!(transition_coeffs(0.6, 0.4, &grid, &params(1.0)).is_err());
        assert!(transition_coeffs(0.5, 0.5, &grid, &params(1.0)).is_err());
    }

    #[test]
    fn blur_adds_more_transition_noise_to_high_frequencies() {
        let grid = FrequencyGrid::new(8).unwrap();
        // At sigma_b_max = 20 and s = 0.4 the top frequency already sits on
        // the d_min floor at both ends (exp(-361) underflows against d_min),
        // so its transition variance ties with DC in double precision. The
        // strict gap shows where d is still above the floor.
        let tc = transition_coeffs(0.4, 0.6, &grid, &params(20.0)).unwrap();
        assert!(tc.sigma2_ts[[7, 7]] >= tc.sigma2_ts[[0, 0]]);
        assert!(tc.sigma2_ts[[1, 1]] > tc.sigma2_ts[[0, 0]]);

        let tc = transition_coeffs(0.1, 0.2, &grid, &params(20.0)).unwrap();
        assert!(tc.sigma2_ts[[7, 7]] > tc.sigma2_ts[[0, 0]]);
        let tc = transition_coeffs(0.4, 0.6, &grid, &params(1.0)).unwrap();
        assert!(tc.sigma2_ts[[7, 7]] > tc.sigma2_ts[[0, 0]]);
    }

    #[test]
    fn posterior_variance_respects_the_harmonic_bounds() {
        let grid = FrequencyGrid::new(8).unwrap();
        for sb in [0.0, 10.0, 20.0] {
            let p = params(sb);
            let (s, t) = (0.3, 0.8);
            let cs = alpha_sigma(s, &grid, &p).unwrap();
            let pc = posterior_coeffs(s, t, &grid, &p).unwrap();
            let tc = transition_coeffs(s, t, &grid, &p).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let bound_fwd =
                        tc.sigma2_ts[[i, j]] / tc.alpha_ts[[i, j]].powi(2) + 1e-12;
                    let bound_data = cs.sigma.powi(2) + 1e-12;
                    assert!(pc.sigma2_denoise[[i, j]] <= bound_fwd);
                    assert!(pc.sigma2_denoise[[i, j]] <= bound_data);
                }
            }
        }
        assert!(posterior_coeffs(0.9, 0.2, &grid, &params(1.0)).is_err());
    }

    #[test]
    fn schedule_table_matches_direct_evaluation() {
        let grid = FrequencyGrid::new(4).unwrap();
        let p = ScheduleParams::new(4, 10.0);
        let table = ScheduleTable::new(&grid, &p, 10).unwrap();
        assert_eq!(table.t_steps(), 10);
        for k in 0..=10 {
            let direct = alpha_sigma(k as f64 / 10.0, &grid, &p).unwrap();
            assert_eq!(table.at_step(k).alpha, direct.alpha);
            assert_eq!(table.at_step(k).sigma, direct.sigma);
        }
    }
}

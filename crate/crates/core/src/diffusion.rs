//! The diffusion process itself: forward sampling, exact Markov steps, the
//! eps-parametrization conversions, the denoising-posterior mean, and the
//! pixel-space view of the marginal.
//!
//! Transitions and posteriors are diagonal in frequency space, so every
//! operation enters pixel space at most once on the way in and once on the
//! way out. Frequency-space variants are provided for callers that keep the
//! latent in coefficient form across many steps (the sampler does).

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::schedule::{
    alpha_sigma, posterior_coeffs, transition_coeffs, DiffusionCoeffs, PosteriorCoeffs,
    ScheduleParams,
};
use crate::transform::{Dct, FreqTensor, FrequencyGrid, ImageTensor};

/// A forward draw together with the noise that produced it.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    pub z_t: ImageTensor,
    pub eps: ImageTensor,
    pub t: f64,
}

/// Multiply each channel of `data` elementwise by the per-frequency `coeff`.
pub(crate) fn mul_per_channel(data: &Array3<f64>, coeff: &Array2<f64>) -> Array3<f64> {
    let mut out = data.clone();
    for mut ch in out.outer_iter_mut() {
        ch *= coeff;
    }
    out
}

/// A configured blurring-diffusion process: schedule parameters plus the
/// frequency grid and DCT basis for its grid size.
#[derive(Debug, Clone)]
pub struct BlurringDiffusion {
    params: ScheduleParams,
    grid: FrequencyGrid,
    dct: Dct,
}

impl BlurringDiffusion {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        params.validate()?;
        let grid = FrequencyGrid::new(params.n)?;
        let dct = Dct::new(params.n)?;
        Ok(BlurringDiffusion { params, grid, dct })
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn dct(&self) -> &Dct {
        &self.dct
    }

    pub fn coeffs(&self, t: f64) -> Result<DiffusionCoeffs> {
        alpha_sigma(t, &self.grid, &self.params)
    }

    fn check_pair(&self, a: &ImageTensor, b: &ImageTensor) -> Result<()> {
        if a.n() != self.params.n || b.n() != self.params.n || a.channels() != b.channels() {
            return Err(Error::dim(
                format!("matching {0}x{0} tensors", self.params.n),
                format!(
                    "{}x{} ({} ch) vs {}x{} ({} ch)",
                    a.n(),
                    a.n(),
                    a.channels(),
                    b.n(),
                    b.n(),
                    b.channels()
                ),
            ));
        }
        Ok(())
    }

    /// Draw `z_t ~ q(z_t | x)` using the caller-supplied standard-normal
    /// `eps`. The noise is added in pixel space directly; with a scalar
    /// per-time sigma the two are equivalent and this saves a transform.
    pub fn diffuse(&self, x: &ImageTensor, t: f64, eps: &ImageTensor) -> Result<ImageTensor> {
        self.check_pair(x, eps)?;
        let coeffs = self.coeffs(t)?;
        let u_x = self.dct.forward(x)?;
        let scaled = FreqTensor {
            data: mul_per_channel(&u_x.data, &coeffs.alpha),
        };
        let mut z = self.dct.inverse(&scaled)?;
        z.data.scaled_add(coeffs.sigma, &eps.data);
        Ok(z)
    }

    /// One exact Markov step `z_s -> z_t` (`s < t`). The transition variance
    /// is per-frequency, so here the noise does pass through the DCT.
    pub fn markov_step(
        &self,
        z_s: &ImageTensor,
        s: f64,
        t: f64,
        eps: &ImageTensor,
    ) -> Result<ImageTensor> {
        self.check_pair(z_s, eps)?;
        let tc = transition_coeffs(s, t, &self.grid, &self.params)?;
        let u_s = self.dct.forward(z_s)?;
        let u_eps = self.dct.forward(eps)?;
        let sigma_ts = tc.sigma2_ts.mapv(f64::sqrt);
        let mut u_t = mul_per_channel(&u_s.data, &tc.alpha_ts);
        u_t += &mul_per_channel(&u_eps.data, &sigma_ts);
        self.dct.inverse(&FreqTensor { data: u_t })
    }

    /// Recover the data prediction from a noise prediction:
    /// `u_x_hat = (u_t - sigma_t u_eps_hat) / alpha_t`. The division is safe;
    /// the d_min floor and log-SNR clipping keep every alpha entry positive.
    pub fn eps_to_x(
        &self,
        z_t: &ImageTensor,
        eps_hat: &ImageTensor,
        t: f64,
    ) -> Result<ImageTensor> {
        self.check_pair(z_t, eps_hat)?;
        let coeffs = self.coeffs(t)?;
        let u_t = self.dct.forward(z_t)?;
        let u_eps = self.dct.forward(eps_hat)?;
        let mut u_x = u_t.data;
        u_x.scaled_add(-coeffs.sigma, &u_eps.data);
        for mut ch in u_x.outer_iter_mut() {
            ch /= &coeffs.alpha;
        }
        self.dct.inverse(&FreqTensor { data: u_x })
    }

    /// Inverse of [`eps_to_x`]: `u_eps_hat = (u_t - alpha_t u_x_hat) / sigma_t`.
    pub fn x_to_eps(
        &self,
        z_t: &ImageTensor,
        x_hat: &ImageTensor,
        t: f64,
    ) -> Result<ImageTensor> {
        self.check_pair(z_t, x_hat)?;
        let coeffs = self.coeffs(t)?;
        let u_t = self.dct.forward(z_t)?;
        let u_x = self.dct.forward(x_hat)?;
        let mut u_eps = u_t.data;
        u_eps -= &mul_per_channel(&u_x.data, &coeffs.alpha);
        u_eps.mapv_inplace(|v| v / coeffs.sigma);
        self.dct.inverse(&FreqTensor { data: u_eps })
    }

    /// Posterior mean `mu_{t->s}` in frequency space, from a noise prediction.
    pub fn posterior_mean(
        &self,
        z_t: &ImageTensor,
        eps_hat: &ImageTensor,
        s: f64,
        t: f64,
    ) -> Result<FreqTensor> {
        self.check_pair(z_t, eps_hat)?;
        let pc = posterior_coeffs(s, t, &self.grid, &self.params)?;
        let sigma_t = self.coeffs(t)?.sigma;
        let u_t = self.dct.forward(z_t)?;
        let u_eps = self.dct.forward(eps_hat)?;
        Ok(posterior_mean_freq(&u_t, &u_eps, &pc, sigma_t))
    }

    /// Mean and covariance spectrum of `q(z_t | x)` seen in pixel space:
    /// the mean is the blurred-and-scaled image, and because sigma is shared
    /// across frequencies the covariance is exactly `sigma_t^2 I` (every
    /// eigenvalue in the returned spectrum is the same).
    pub fn pixel_space_marginal(
        &self,
        x: &ImageTensor,
        t: f64,
    ) -> Result<(ImageTensor, Array2<f64>)> {
        if x.n() != self.params.n {
            return Err(Error::dim(format!("{0}x{0}", self.params.n), format!("{0}x{0}", x.n())));
        }
        let coeffs = self.coeffs(t)?;
        let u_x = self.dct.forward(x)?;
        let mean = self.dct.inverse(&FreqTensor {
            data: mul_per_channel(&u_x.data, &coeffs.alpha),
        })?;
        let cov_spectrum = Array2::from_elem(coeffs.alpha.dim(), coeffs.sigma * coeffs.sigma);
        debug_assert!(cov_spectrum.iter().all(|&v| v == coeffs.sigma * coeffs.sigma));
        Ok((mean, cov_spectrum))
    }
}

/// Frequency-space posterior mean:
/// `coeff_zt * u_t + coeff_pred * (u_t - sigma_t * u_eps_hat)` per channel.
pub fn posterior_mean_freq(
    u_t: &FreqTensor,
    u_eps_hat: &FreqTensor,
    pc: &PosteriorCoeffs,
    sigma_t: f64,
) -> FreqTensor {
    let mut pred_term = u_t.data.clone();
    pred_term.scaled_add(-sigma_t, &u_eps_hat.data);
    let mut out = mul_per_channel(&u_t.data, &pc.coeff_zt);
    out += &mul_per_channel(&pred_term, &pc.coeff_pred);
    FreqTensor { data: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use crate::schedule::{noise_scaling_cosine, BlurShape, DELTA};

    fn process(sigma_b_max: f64) -> BlurringDiffusion {
        BlurringDiffusion::new(ScheduleParams::new(8, sigma_b_max)).unwrap()
    }

    fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn noiseless_diffuse_without_blur_is_pure_scaling() {
        let proc = process(0.0);
        let mut rng = CounterRng::new(1);
        let x = ImageTensor::standard_normal(1, 8, &mut rng);
        let zero = ImageTensor::zeros(1, 8);
        let t = 0.42;
        let z = proc.diffuse(&x, t, &zero).unwrap();
        let (a, _) = noise_scaling_cosine(t, proc.params()).unwrap();
        let expect = x.data.mapv(|v| a * v);
        assert!(max_abs_diff(&z.data, &expect) < 1e-12);
    }

    #[test]
    fn constant_images_pass_through_heavy_blur_untouched() {
        let proc = process(20.0);
        let c = -0.4;
        let x = ImageTensor::new(Array3::from_elem((1, 8, 8), c)).unwrap();
        let zero = ImageTensor::zeros(1, 8);
        let z = proc.diffuse(&x, 1.0, &zero).unwrap();
        let (a1, _) = noise_scaling_cosine(1.0, proc.params()).unwrap();
        for v in z.data.iter() {
            assert!((v - a1 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn heavy_blur_attenuates_a_high_frequency_basis_function() {
        // x is the (3,3) basis function; mid-time blur at sigma_b_max = 20
        // multiplies it by alpha_(0.5)[3][3] with d[3][3] almost exactly d_min.
        let proc = process(20.0);
        let mut u = FreqTensor::zeros(1, 8);
        u.data[[0, 3, 3]] = 1.0;
        let x = proc.dct().inverse(&u).unwrap();
        let zero = ImageTensor::zeros(1, 8);
        let z = proc.diffuse(&x, 0.5, &zero).unwrap();

        let coeffs = proc.coeffs(0.5).unwrap();
        let lambda = proc.grid().lambda()[[3, 3]];
        assert!((lambda - 2.775826237806382).abs() < 1e-12);
        let tau = 50.0; // (20 * sin(pi/4)^2)^2 / 2
        let d = (1.0 - 0.001) * (-lambda * tau).exp() + 0.001;
        assert!((d - 0.001).abs() < 1e-12, "exp(-138.8) is negligible");
        let (a, _) = noise_scaling_cosine(0.5, proc.params()).unwrap();
        assert!((coeffs.alpha[[3, 3]] - a * d).abs() < 1e-15);

        let expect = x.data.mapv(|v| a * d * v);
        assert!(max_abs_diff(&z.data, &expect) < 1e-12);
    }

    #[test]
    fn markov_step_moments_compose_exactly() {
        let grid = FrequencyGrid::new(8).unwrap();
        for sb in [0.0, 1.0, 10.0, 20.0] {
            for shape in [BlurShape::SinSquared, BlurShape::Sin] {
                let mut params = ScheduleParams::new(8, sb);
                params.blur_shape = shape;
                let (s, t) = (0.3, 0.7);
                let cs = alpha_sigma(s, &grid, &params).unwrap();
                let ct = alpha_sigma(t, &grid, &params).unwrap();
                let tc = transition_coeffs(s, t, &grid, &params).unwrap();
                for i in 0..8 {
                    for j in 0..8 {
                        let mean = tc.alpha_ts[[i, j]] * cs.alpha[[i, j]];
                        assert!((mean - ct.alpha[[i, j]]).abs() < 1e-12);
                        let var = tc.alpha_ts[[i, j]].powi(2) * cs.sigma.powi(2)
                            + tc.sigma2_ts[[i, j]];
                        assert!((var - ct.sigma.powi(2)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn markov_step_rejects_bad_times_and_shapes() {
        let proc = process(1.0);
        let z = ImageTensor::zeros(1, 8);
        let eps = ImageTensor::zeros(1, 8);
        assert!(proc.markov_step(&z, 0.7, 0.3, &eps).is_err());
        let eps_bad = ImageTensor::zeros(2, 8);
        assert!(proc.markov_step(&z, 0.3, 0.7, &eps_bad).is_err());
        let z_bad = ImageTensor::zeros(1, 4);
        assert!(proc.diffuse(&z_bad, 0.5, &eps).is_err());
    }

    #[test]
    fn eps_to_x_inverts_the_forward_draw() {
        let mut rng = CounterRng::new(7);
        for sb in [0.0, 20.0] {
            let proc = process(sb);
            for t in [0.05, 0.5, 0.95] {
                let x = ImageTensor::standard_normal(1, 8, &mut rng);
                let eps = ImageTensor::standard_normal(1, 8, &mut rng);
                let z = proc.diffuse(&x, t, &eps).unwrap();
                let back = proc.eps_to_x(&z, &eps, t).unwrap();
                assert!(max_abs_diff(&back.data, &x.data) < 1e-8, "sb={sb} t={t}");
            }
        }
    }

    #[test]
    fn zero_eps_prediction_without_blur_rescales_the_latent() {
        let proc = process(0.0);
        let mut rng = CounterRng::new(3);
        let z = ImageTensor::standard_normal(1, 8, &mut rng);
        let zero = ImageTensor::zeros(1, 8);
        let t = 0.77;
        let x_hat = proc.eps_to_x(&z, &zero, t).unwrap();
        let (a, _) = noise_scaling_cosine(t, proc.params()).unwrap();
        let expect = z.data.mapv(|v| v / a);
        assert!(max_abs_diff(&x_hat.data, &expect) < 1e-10);
    }

    #[test]
    fn high_frequency_perturbations_amplify_by_sigma_over_alpha() {
        let proc = process(20.0);
        let t = 0.5;
        let mut rng = CounterRng::new(4);
        let z = ImageTensor::standard_normal(1, 8, &mut rng);
        let eps_hat = ImageTensor::standard_normal(1, 8, &mut rng);

        let mut u_pert = proc.dct().forward(&eps_hat).unwrap();
        u_pert.data[[0, 7, 7]] += 1e-3;
        let eps_pert = proc.dct().inverse(&u_pert).unwrap();

        let base = proc.dct().forward(&proc.eps_to_x(&z, &eps_hat, t).unwrap()).unwrap();
        let pert = proc.dct().forward(&proc.eps_to_x(&z, &eps_pert, t).unwrap()).unwrap();
        let coeffs = proc.coeffs(t).unwrap();
        let observed = pert.data[[0, 7, 7]] - base.data[[0, 7, 7]];
        let expect = -coeffs.sigma * 1e-3 / coeffs.alpha[[7, 7]];
        assert!((observed - expect).abs() < 1e-9 * expect.abs());

        // With d at the floor this is about sigma / (a * d_min) per unit.
        let (a, sigma) = noise_scaling_cosine(t, proc.params()).unwrap();
        let approx = sigma / (a * 0.001) * 1e-3;
        assert!((observed.abs() - approx).abs() < 1e-3 * approx);
    }

    #[test]
    fn eps_and_x_predictions_are_mutual_inverses() {
        let mut rng = CounterRng::new(9);
        for sb in [0.0, 10.0] {
            let proc = process(sb);
            for t in [0.1, 0.6, 1.0] {
                let z = ImageTensor::standard_normal(2, 8, &mut rng);
                let e = ImageTensor::standard_normal(2, 8, &mut rng);
                let x_hat = proc.eps_to_x(&z, &e, t).unwrap();
                let e_back = proc.x_to_eps(&z, &x_hat, t).unwrap();
                assert!(max_abs_diff(&e_back.data, &e.data) < 1e-8);

                let x = ImageTensor::standard_normal(2, 8, &mut rng);
                let z_t = proc.diffuse(&x, t, &e).unwrap();
                let e_hat = proc.x_to_eps(&z_t, &x, t).unwrap();
                assert!(max_abs_diff(&e_hat.data, &e.data) < 1e-8);
            }
        }
    }

    #[test]
    fn zero_x_prediction_divides_the_latent_by_sigma() {
        let proc = process(5.0);
        let mut rng = CounterRng::new(2);
        let z = ImageTensor::standard_normal(1, 8, &mut rng);
        let zero = ImageTensor::zeros(1, 8);
        let t = 0.66;
        let eps_hat = proc.x_to_eps(&z, &zero, t).unwrap();
        let sigma = proc.coeffs(t).unwrap().sigma;
        let expect = z.data.mapv(|v| v / sigma);
        assert!(max_abs_diff(&eps_hat.data, &expect) < 1e-10);
    }

    #[test]
    fn posterior_mean_matches_the_two_parameter_form() {
        let mut rng = CounterRng::new(6);
        for sb in [0.0, 20.0] {
            let proc = process(sb);
            let (s, t) = (0.35, 0.7);
            let z = ImageTensor::standard_normal(1, 8, &mut rng);
            let eps_hat = ImageTensor::standard_normal(1, 8, &mut rng);
            let mu = proc.posterior_mean(&z, &eps_hat, s, t).unwrap();

            // sigma2_denoise * (alpha_ts / sigma2_ts * u_t + alpha_s / sigma_s^2 * u_x_hat),
            // with the same delta conventions the coefficients use.
            let cs = proc.coeffs(s).unwrap();
            let ct = proc.coeffs(t).unwrap();
            let pc = posterior_coeffs(s, t, proc.grid(), proc.params()).unwrap();
            let tc = transition_coeffs(s, t, proc.grid(), proc.params()).unwrap();
            let u_t = proc.dct().forward(&z).unwrap();
            let u_x = proc
                .dct()
                .forward(&proc.eps_to_x(&z, &eps_hat, t).unwrap())
                .unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let expect = pc.sigma2_denoise[[i, j]]
                        * (tc.alpha_ts[[i, j]] / (tc.sigma2_ts[[i, j]] + DELTA)
                            * u_t.data[[0, i, j]]
                            + cs.alpha[[i, j]] / cs.sigma.powi(2).max(DELTA)
                                * u_x.data[[0, i, j]]);
                    assert!(
                        (mu.data[[0, i, j]] - expect).abs() < 1e-10,
                        "sb={sb} ({i},{j}): {} vs {expect}",
                        mu.data[[0, i, j]]
                    );
                    let _ = ct;
                }
            }
        }
    }

    #[test]
    fn marginal_mean_is_the_noiseless_draw_and_covariance_is_isotropic() {
        let proc = process(10.0);
        let mut rng = CounterRng::new(8);
        let x = ImageTensor::standard_normal(1, 8, &mut rng);
        let zero = ImageTensor::zeros(1, 8);
        let t = 0.55;
        let (mean, spectrum) = proc.pixel_space_marginal(&x, t).unwrap();
        let z = proc.diffuse(&x, t, &zero).unwrap();
        assert!(max_abs_diff(&mean.data, &z.data) < 1e-14);
        let sigma2 = proc.coeffs(t).unwrap().sigma.powi(2);
        assert!(spectrum.iter().all(|&v| v == sigma2));
    }
}

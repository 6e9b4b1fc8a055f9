//! Runtime verification suite: every invariant declared by the library,
//! runnable as named pass/fail checks (the `verify` CLI command prints one
//! line per check). Statistical checks use fixed internal seeds, so the
//! whole suite is deterministic.

use ndarray::{Array2, Array3};

use crate::denoiser::{
    Denoiser, GaussianDataPrior, GaussianOracleDenoiser, MlpArch, MlpDenoiser,
};
use crate::diffusion::BlurringDiffusion;
use crate::rng::{stream_id, CounterRng};
use crate::sampler::{sample, sample_trajectory, SamplerConfig};
use crate::schedule::{
    alpha_sigma, frequency_scaling, log_snr, noise_scaling_cosine,
    posterior_coeffs, posterior_from_parts, transition_coeffs, transition_from_parts,
    BlurShape, ScheduleParams, DELTA,
};
use crate::train::{batch_loss_and_grad, train, AdamState, TrainConfig};
use crate::transform::{Dct, FreqTensor, FrequencyGrid, ImageTensor};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(id: &'static str, passed: bool, detail: String) -> Self {
        CheckResult { id, passed, detail }
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Fault injection: perturb the DCT basis inside the orthogonality
    /// check (negative control; makes the check fail).
    pub corrupt_dct: bool,
}

/// Run every library-level check. The CLI adds its own config/IO checks on
/// top of these.
pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        check_dct_orthogonality(opts.corrupt_dct),
        check_dct_roundtrip(),
        check_parseval(),
        check_dct_linearity(),
        check_blur_semigroup(),
        check_blur_heat_correspondence(),
        check_variance_preserving(),
        check_logsnr_monotone(),
        check_frequency_ordering(),
        check_d_min_floor(),
        check_ratio_scale_invariance(),
        check_markov_algebra(),
        check_markov_monte_carlo(),
        check_eps_x_duality(),
        check_ddpm_reduction(),
        check_heat_dissipation_equivalence(),
        check_oracle_optimality(),
        check_gradient(),
        check_ema_consistency(),
        check_sampler_ddpm_reduction(),
        check_sampler_step_doubling(),
        check_sampler_finite_latents(),
    ]
}

fn max_abs3(a: &Array3<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    max_abs3(&(a - b))
}

// ---------------------------------------------------------------------------
// transform

pub fn check_dct_orthogonality(corrupt: bool) -> CheckResult {
    let mut worst = 0.0f64;
    for n in 1..=16usize {
        let dct = Dct::new(n).unwrap();
        let mut basis = dct.matrix().clone();
        if corrupt {
            basis[[0, 0]] += 1e-3;
        }
        let gram = basis.t().dot(&basis);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[[i, j]] - expect).abs());
            }
        }
    }
    CheckResult::new(
        "transform/orthogonality",
        worst < 1e-10,
        format!("max |V^T V - I| = {worst:.2e} (tol 1e-10, N <= 16)"),
    )
}

pub fn check_dct_roundtrip() -> CheckResult {
    let mut rng = CounterRng::new(0x11);
    let mut worst = 0.0f64;
    for n in [1usize, 2, 3, 5, 8, 16, 33, 64] {
        let dct = Dct::new(n).unwrap();
        let x = ImageTensor::standard_normal(2, n, &mut rng);
        let back = dct.inverse(&dct.forward(&x).unwrap()).unwrap();
        worst = worst.max(max_abs_diff(back.array(), x.array()));
        let u = FreqTensor::new(ImageTensor::standard_normal(1, n, &mut rng).into_array())
            .unwrap();
        let fwd = dct.forward(&dct.inverse(&u).unwrap()).unwrap();
        worst = worst.max(max_abs_diff(fwd.array(), u.array()));
    }
    CheckResult::new(
        "transform/roundtrip",
        worst < 1e-10,
        format!("max roundtrip error = {worst:.2e} (tol 1e-10, N <= 64)"),
    )
}

pub fn check_parseval() -> CheckResult {
    let mut rng = CounterRng::new(0x12);
    let mut worst = 0.0f64;
    for n in [2usize, 8, 32] {
        let dct = Dct::new(n).unwrap();
        let x = ImageTensor::standard_normal(1, n, &mut rng);
        let u = dct.forward(&x).unwrap();
        let ex: f64 = x.array().iter().map(|v| v * v).sum();
        let eu: f64 = u.array().iter().map(|v| v * v).sum();
        worst = worst.max(((ex - eu) / ex).abs());
    }
    CheckResult::new(
        "transform/parseval",
        worst < 1e-10,
        format!("max relative energy deviation = {worst:.2e} (tol 1e-10)"),
    )
}

pub fn check_dct_linearity() -> CheckResult {
    let mut rng = CounterRng::new(0x13);
    let mut worst = 0.0f64;
    for n in [4usize, 8, 16] {
        let dct = Dct::new(n).unwrap();
        let x = ImageTensor::standard_normal(1, n, &mut rng);
        let y = ImageTensor::standard_normal(1, n, &mut rng);
        let (a, b) = (1.7, -0.4);
        let combo =
            ImageTensor::new(x.array().mapv(|v| a * v) + y.array().mapv(|v| b * v)).unwrap();
        let lhs = dct.forward(&combo).unwrap();
        let rhs = dct.forward(&x).unwrap().into_array().mapv(|v| a * v)
            + dct.forward(&y).unwrap().into_array().mapv(|v| b * v);
        worst = worst.max(max_abs_diff(lhs.array(), &rhs));
    }
    CheckResult::new(
        "transform/linearity",
        worst < 1e-10,
        format!("max |dct(ax+by) - (a dct(x) + b dct(y))| = {worst:.2e} (tol 1e-10)"),
    )
}

/// Apply the dissipation operator `V exp(-lambda tau) V^T` to an image.
fn blur_operator(x: &ImageTensor, tau: f64, dct: &Dct, grid: &FrequencyGrid) -> ImageTensor {
    let mut u = dct.forward(x).unwrap();
    let scale = grid.lambda().mapv(|l| (-l * tau).exp());
    for mut ch in u.array_mut().outer_iter_mut() {
        ch *= &scale;
    }
    dct.inverse(&u).unwrap()
}

pub fn check_blur_semigroup() -> CheckResult {
    let mut rng = CounterRng::new(0x14);
    let n = 16;
    let dct = Dct::new(n).unwrap();
    let grid = FrequencyGrid::new(n).unwrap();
    let mut worst = 0.0f64;
    for &(tau1, tau2) in &[(0.05, 0.3), (0.5, 0.5), (1.5, 0.01)] {
        let x = ImageTensor::standard_normal(1, n, &mut rng);
        let two_step = blur_operator(&blur_operator(&x, tau1, &dct, &grid), tau2, &dct, &grid);
        let one_step = blur_operator(&x, tau1 + tau2, &dct, &grid);
        worst = worst.max(max_abs_diff(two_step.array(), one_step.array()));
    }
    CheckResult::new(
        "transform/blur-semigroup",
        worst < 1e-10,
        format!("max |A_t1 A_t2 x - A_(t1+t2) x| = {worst:.2e} (tol 1e-10)"),
    )
}

/// Dense separable Gaussian convolution with half-sample symmetric
/// (reflective) padding; the oracle for the blur/heat correspondence.
fn gaussian_convolve_reflect(x: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let n = x.dim().0;
    let radius = (5.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for m in -radius..=radius {
        kernel.push((-((m * m) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    let reflect = |idx: isize| -> usize {
        // Half-sample symmetric: ... 1 0 | 0 1 ... n-1 | n-1 ...
        let period = 2 * n as isize;
        let mut i = idx.rem_euclid(period);
        if i >= n as isize {
            i = period - 1 - i;
        }
        i as usize
    };
    let conv_rows = |src: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((n, n));
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for (ki, m) in (-radius..=radius).enumerate() {
                    acc += kernel[ki] * src[[r, reflect(c as isize + m)]];
                }
                out[[r, c]] = acc;
            }
        }
        out
    };
    let horizontal = conv_rows(x);
    conv_rows(&horizontal.t().to_owned()).t().to_owned()
}

pub fn check_blur_heat_correspondence() -> CheckResult {
    // Calibrated once against the dense-convolution oracle: observed interior
    // max-abs error 1.1e-6 at N = 32, sigma in {1, 2}, for this test image.
    // The bound leaves two orders of margin.
    const BOUND: f64 = 1e-4;
    let n = 32usize;
    let dct = Dct::new(n).unwrap();
    let grid = FrequencyGrid::new(n).unwrap();
    let x = Array2::from_shape_fn((n, n), |(r, c)| {
        let (rf, cf) = (r as f64 / n as f64, c as f64 / n as f64);
        0.4 * (2.0 * std::f64::consts::PI * rf).sin()
            + 0.3 * (2.0 * std::f64::consts::PI * cf).cos()
            + 0.3 * (-((rf - 0.5).powi(2) + (cf - 0.5).powi(2)) / 0.02).exp()
    });
    let img = ImageTensor::new(x.clone().insert_axis(ndarray::Axis(0))).unwrap();
    let mut worst = 0.0f64;
    for &sigma_b in &[1.0f64, 2.0] {
        let spectral = blur_operator(&img, sigma_b * sigma_b / 2.0, &dct, &grid);
        let oracle = gaussian_convolve_reflect(&x, sigma_b);
        let margin = (5.0 * sigma_b).ceil() as usize;
        for r in margin..n - margin {
            for c in margin..n - margin {
                worst = worst.max((spectral.array()[[0, r, c]] - oracle[[r, c]]).abs());
            }
        }
    }
    CheckResult::new(
        "transform/blur-heat-correspondence",
        worst < BOUND,
        format!("interior max-abs error vs dense convolution = {worst:.2e} (bound {BOUND:.0e})"),
    )
}

// ---------------------------------------------------------------------------
// schedule

pub fn check_variance_preserving() -> CheckResult {
    let p = ScheduleParams::new(8, 0.0);
    let mut worst = 0.0f64;
    for k in 0..=1000 {
        let t = k as f64 / 1000.0;
        let (a, s) = noise_scaling_cosine(t, &p).unwrap();
        worst = worst.max((a * a + s * s - 1.0).abs());
    }
    let end0 = (log_snr(0.0, &p).unwrap() - 10.0).abs();
    let end1 = (log_snr(1.0, &p).unwrap() + 10.0).abs();
    let passed = worst < 1e-12 && end0 < 1e-12 && end1 < 1e-12;
    CheckResult::new(
        "schedule/variance-preserving",
        passed,
        format!(
            "max |a^2 + s^2 - 1| = {worst:.2e} on 1001 points; logsnr endpoint error = {:.2e}",
            end0.max(end1)
        ),
    )
}

fn all_schedule_configs(n: usize) -> Vec<ScheduleParams> {
    let mut out = Vec::new();
    for &sb in &[0.0, 1.0, 10.0, 20.0] {
        for &shape in &[BlurShape::SinSquared, BlurShape::Sin] {
            let mut p = ScheduleParams::new(n, sb);
            p.blur_shape = shape;
            out.push(p);
        }
    }
    out
}

pub fn check_logsnr_monotone() -> CheckResult {
    let grid = FrequencyGrid::new(8).unwrap();
    let steps = 400;
    let mut min_drop = f64::INFINITY;
    for p in all_schedule_configs(8) {
        let mut prev: Option<Array2<f64>> = None;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let c = alpha_sigma(t, &grid, &p).unwrap();
            let s2 = c.sigma * c.sigma;
            let cur = c.alpha.mapv(|a| (a * a / s2).ln());
            if let Some(prev) = &prev {
                for (pv, cv) in prev.iter().zip(cur.iter()) {
                    min_drop = min_drop.min(pv - cv);
                }
            }
            prev = Some(cur);
        }
    }
    CheckResult::new(
        "schedule/logsnr-monotone",
        min_drop > 0.0,
        format!(
            "per-frequency log-SNR strictly decreasing; smallest step drop = {min_drop:.2e} \
             (grid of 401 t, sigma_b_max in {{0,1,10,20}}, both shapes)"
        ),
    )
}

pub fn check_frequency_ordering() -> CheckResult {
    let grid = FrequencyGrid::new(8).unwrap();
    let order = grid.indices_by_lambda();
    let mut ok = true;
    let mut worst = 0.0f64;
    for &sb in &[1.0, 10.0, 20.0] {
        let p = ScheduleParams::new(8, sb);
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let c = alpha_sigma(t, &grid, &p).unwrap();
            for w in order.windows(2) {
                let (lo, hi) = (c.alpha[w[0]], c.alpha[w[1]]);
                if hi > lo {
                    ok = false;
                    worst = worst.max(hi - lo);
                }
            }
        }
    }
    CheckResult::new(
        "schedule/frequency-ordering",
        ok,
        if ok {
            "alpha is non-increasing in lambda at every t".into()
        } else {
            format!("ordering violated by up to {worst:.2e}")
        },
    )
}

pub fn check_d_min_floor() -> CheckResult {
    let grid = FrequencyGrid::new(8).unwrap();
    let mut min_d = f64::INFINITY;
    let mut max_d = f64::NEG_INFINITY;
    for p in all_schedule_configs(8) {
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            let d = frequency_scaling(t, &grid, &p).unwrap();
            min_d = min_d.min(d.iter().cloned().fold(f64::INFINITY, f64::min));
            max_d = max_d.max(d.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    let passed = min_d >= 0.001 && max_d <= 1.0 + 1e-15;
    CheckResult::new(
        "schedule/d-min-floor",
        passed,
        format!("d range over all configs = [{min_d:.6}, {max_d:.6}] (must stay in [d_min, 1])"),
    )
}

pub fn check_ratio_scale_invariance() -> CheckResult {
    let grid = FrequencyGrid::new(8).unwrap();
    let p = ScheduleParams::new(8, 10.0);
    let (s, t) = (0.25, 0.65);
    let cs = alpha_sigma(s, &grid, &p).unwrap();
    let ct = alpha_sigma(t, &grid, &p).unwrap();
    let mut rng = CounterRng::new(0x21);
    let u_t = Array2::from_shape_fn((8, 8), |_| rng.normal());
    let u_eps = Array2::from_shape_fn((8, 8), |_| rng.normal());

    let (alpha_ts, sigma2_ts) = transition_from_parts(&cs.alpha, cs.sigma, &ct.alpha, ct.sigma);
    let (s2d, czt, cpred) = posterior_from_parts(&cs.alpha, cs.sigma, &ct.alpha, ct.sigma, DELTA);
    let mut worst = 0.0f64;
    for &c in &[0.5f64, 2.0] {
        let alpha_s_c = cs.alpha.mapv(|a| c * a);
        let alpha_t_c = ct.alpha.mapv(|a| c * a);
        let (alpha_ts_c, sigma2_ts_c) =
            transition_from_parts(&alpha_s_c, c * cs.sigma, &alpha_t_c, c * ct.sigma);
        let (s2d_c, czt_c, cpred_c) =
            posterior_from_parts(&alpha_s_c, c * cs.sigma, &alpha_t_c, c * ct.sigma, DELTA);
        for i in 0..8 {
            for j in 0..8 {
                let ij = [i, j];
                worst = worst.max(((alpha_ts_c[ij] - alpha_ts[ij]) / alpha_ts[ij]).abs());
                worst = worst
                    .max(((sigma2_ts_c[ij] - c * c * sigma2_ts[ij]) / sigma2_ts[ij]).abs());
                worst = worst.max(((s2d_c[ij] - c * c * s2d[ij]) / s2d[ij]).abs());
                // Rescaled latents: u' = c u; the posterior mean must rescale.
                let mu = czt[ij] * u_t[ij] + cpred[ij] * (u_t[ij] - ct.sigma * u_eps[ij]);
                let mu_c = czt_c[ij] * (c * u_t[ij])
                    + cpred_c[ij] * (c * u_t[ij] - c * ct.sigma * u_eps[ij]);
                worst = worst.max(((mu_c - c * mu) / mu.abs().max(1e-9)).abs());
            }
        }
    }
    CheckResult::new(
        "schedule/ratio-scale-invariance",
        worst < 1e-6,
        format!("max relative deviation under common rescaling = {worst:.2e} (tol 1e-6)"),
    )
}

// ---------------------------------------------------------------------------
// diffusion

pub fn check_markov_algebra() -> CheckResult {
    let grid = FrequencyGrid::new(8).unwrap();
    let mut worst = 0.0f64;
    let mut rng = CounterRng::new(0x31);
    for p in all_schedule_configs(8) {
        for _ in 0..6 {
            let s = 0.05 + 0.6 * rng.uniform_co();
            let t = s + 0.05 + (0.94 - s) * rng.uniform_co();
            let cs = alpha_sigma(s, &grid, &p).unwrap();
            let ct = alpha_sigma(t, &grid, &p).unwrap();
            let tc = transition_coeffs(s, t, &grid, &p).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    worst = worst
                        .max((tc.alpha_ts[[i, j]] * cs.alpha[[i, j]] - ct.alpha[[i, j]]).abs());
                    worst = worst.max(
                        (tc.alpha_ts[[i, j]].powi(2) * cs.sigma.powi(2) + tc.sigma2_ts[[i, j]]
                            - ct.sigma.powi(2))
                        .abs(),
                    );
                }
            }
        }
    }
    CheckResult::new(
        "diffusion/markov-algebra",
        worst < 1e-12,
        format!("max composition/variance identity error = {worst:.2e} (tol 1e-12)"),
    )
}

/// Accumulates per-frequency mean and variance over draws.
struct FreqStats {
    count: f64,
    sum: Array2<f64>,
    sumsq: Array2<f64>,
}

impl FreqStats {
    fn new(n: usize) -> Self {
        FreqStats {
            count: 0.0,
            sum: Array2::zeros((n, n)),
            sumsq: Array2::zeros((n, n)),
        }
    }

    fn push(&mut self, u: &FreqTensor) {
        self.count += 1.0;
        let ch = u.array().index_axis(ndarray::Axis(0), 0);
        self.sum += &ch;
        self.sumsq += &ch.mapv(|v| v * v);
    }

    fn mean(&self) -> Array2<f64> {
        self.sum.mapv(|v| v / self.count)
    }

    fn var(&self) -> Array2<f64> {
        let mean = self.mean();
        let n = self.count;
        // Unbiased sample variance.
        (&self.sumsq - &mean.mapv(|m| m * m * n)).mapv(|v| v / (n - 1.0))
    }
}

pub fn check_markov_monte_carlo() -> CheckResult {
    let n = 8usize;
    let draws = 200_000usize;
    let (s, t) = (0.3, 0.7);
    let p = ScheduleParams::new(n, 10.0);
    let process = BlurringDiffusion::new(p.clone()).unwrap();
    let dct = process.dct();
    let mut rng = CounterRng::new(0x32);
    let x = ImageTensor::standard_normal(1, n, &mut rng);

    let mut one_shot = FreqStats::new(n);
    let mut two_step = FreqStats::new(n);
    for i in 0..draws {
        let mut draw_rng = CounterRng::stream(0x33, &[i as u64]);
        let eps = ImageTensor::standard_normal(1, n, &mut draw_rng);
        let z_t = process.diffuse(&x, t, &eps).unwrap();
        one_shot.push(&dct.forward(&z_t).unwrap());

        let eps1 = ImageTensor::standard_normal(1, n, &mut draw_rng);
        let eps2 = ImageTensor::standard_normal(1, n, &mut draw_rng);
        let z_s = process.diffuse(&x, s, &eps1).unwrap();
        let z_t2 = process.markov_step(&z_s, s, t, &eps2).unwrap();
        two_step.push(&dct.forward(&z_t2).unwrap());
    }

    let (m1, v1) = (one_shot.mean(), one_shot.var());
    let (m2, v2) = (two_step.mean(), two_step.var());
    let nf = draws as f64;
    let mut worst_sigmas = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let se_mean = ((v1[[i, j]] + v2[[i, j]]) / nf).sqrt();
            worst_sigmas = worst_sigmas.max((m1[[i, j]] - m2[[i, j]]).abs() / se_mean);
            let se_var =
                ((v1[[i, j]].powi(2) + v2[[i, j]].powi(2)) * 2.0 / (nf - 1.0)).sqrt();
            worst_sigmas = worst_sigmas.max((v1[[i, j]] - v2[[i, j]]).abs() / se_var);
        }
    }
    CheckResult::new(
        "diffusion/markov-monte-carlo",
        worst_sigmas < 4.0,
        format!(
            "two-step vs one-shot marginals: worst deviation = {worst_sigmas:.2} SE \
             (limit 4 SE, {draws} draws)"
        ),
    )
}

pub fn check_eps_x_duality() -> CheckResult {
    let mut worst = 0.0f64;
    let mut rng = CounterRng::new(0x34);
    for &sb in &[0.0, 1.0, 10.0, 20.0] {
        let process = BlurringDiffusion::new(ScheduleParams::new(8, sb)).unwrap();
        for &t in &[0.05, 0.5, 0.95] {
            let z = ImageTensor::standard_normal(1, 8, &mut rng);
            let e = ImageTensor::standard_normal(1, 8, &mut rng);
            let x_hat = process.eps_to_x(&z, &e, t).unwrap();
            let e_back = process.x_to_eps(&z, &x_hat, t).unwrap();
            worst = worst.max(max_abs_diff(e_back.array(), e.array()));
            let x = ImageTensor::standard_normal(1, 8, &mut rng);
            let e_hat = process.x_to_eps(&z, &x, t).unwrap();
            let x_back = process.eps_to_x(&z, &e_hat, t).unwrap();
            worst = worst.max(max_abs_diff(x_back.array(), x.array()));
        }
    }
    CheckResult::new(
        "diffusion/eps-x-duality",
        worst < 1e-8,
        format!("max roundtrip error = {worst:.2e} (tol 1e-8)"),
    )
}

pub fn check_ddpm_reduction() -> CheckResult {
    let n = 8usize;
    let process = BlurringDiffusion::new(ScheduleParams::new(n, 0.0)).unwrap();
    let grid = process.grid();
    let params = process.params();
    let mut rng = CounterRng::new(0x35);
    let mut worst = 0.0f64;

    for &t in &[0.1, 0.5, 0.9] {
        // Forward draw.
        let x = ImageTensor::standard_normal(1, n, &mut rng);
        let eps = ImageTensor::standard_normal(1, n, &mut rng);
        let z = process.diffuse(&x, t, &eps).unwrap();
        let (a_ref, s_ref) = ddpm_ref::noise_scaling(t);
        for ((zv, xv), ev) in z.array().iter().zip(x.array().iter()).zip(eps.array().iter())
        {
            worst = worst.max((zv - (a_ref * xv + s_ref * ev)).abs());
        }
    }

    for &(s, t) in &[(0.0, 0.25), (0.3, 0.7), (0.9, 1.0)] {
        // Posterior coefficients.
        let pc = posterior_coeffs(s, t, grid, params).unwrap();
        let (s2d_ref, czt_ref, cpred_ref) = ddpm_ref::posterior(s, t);
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((pc.sigma2_denoise[[i, j]] - s2d_ref).abs());
                worst = worst.max((pc.coeff_zt[[i, j]] - czt_ref).abs());
                worst = worst.max((pc.coeff_pred[[i, j]] - cpred_ref).abs());
            }
        }
        // Posterior mean on a random latent and prediction.
        let z = ImageTensor::standard_normal(1, n, &mut rng);
        let e_hat = ImageTensor::standard_normal(1, n, &mut rng);
        let mu = process.posterior_mean(&z, &e_hat, s, t).unwrap();
        let mu_pixel = process.dct().inverse(&mu).unwrap();
        let (_, sigma_t_ref) = ddpm_ref::noise_scaling(t);
        for ((mv, zv), ev) in mu_pixel
            .array()
            .iter()
            .zip(z.array().iter())
            .zip(e_hat.array().iter())
        {
            let expect = czt_ref * zv + cpred_ref * (zv - sigma_t_ref * ev);
            worst = worst.max((mv - expect).abs());
        }
    }

    CheckResult::new(
        "diffusion/ddpm-reduction",
        worst < 1e-10,
        format!(
            "sigma_b_max = 0 vs independent scalar implementation: max deviation = {worst:.2e} \
             (tol 1e-10)"
        ),
    )
}

pub fn check_heat_dissipation_equivalence() -> CheckResult {
    // Heat dissipation with fixed noise: alpha := d_t (no cosine factor),
    // sigma := constant. Per frequency the Monte-Carlo mean must equal
    // d_t u_x and the variance sigma^2.
    let n = 8usize;
    let draws = 200_000usize;
    let sigma = 0.4f64;
    let p = ScheduleParams::new(n, 10.0);
    let grid = FrequencyGrid::new(n).unwrap();
    let dct = Dct::new(n).unwrap();
    let mut rng = CounterRng::new(0x36);
    let x = ImageTensor::standard_normal(1, n, &mut rng);
    let u_x = dct.forward(&x).unwrap();

    let mut worst_sigmas = 0.0f64;
    for &t in &[0.25f64, 0.5, 0.75] {
        let d = frequency_scaling(t, &grid, &p).unwrap();
        let mut blurred = dct.forward(&x).unwrap();
        for mut ch in blurred.array_mut().outer_iter_mut() {
            ch *= &d;
        }
        let base = dct.inverse(&blurred).unwrap();

        let mut stats = FreqStats::new(n);
        for i in 0..draws {
            let mut draw_rng = CounterRng::stream(0x37, &[t.to_bits(), i as u64]);
            let eps = ImageTensor::standard_normal(1, n, &mut draw_rng);
            let mut z = base.clone();
            z.array_mut().scaled_add(sigma, eps.array());
            stats.push(&dct.forward(&z).unwrap());
        }
        let (mean, var) = (stats.mean(), stats.var());
        let nf = draws as f64;
        let se_mean = sigma / nf.sqrt();
        let se_var = sigma * sigma * (2.0 / (nf - 1.0)).sqrt();
        for i in 0..n {
            for j in 0..n {
                let expect_mean = d[[i, j]] * u_x.array()[[0, i, j]];
                worst_sigmas =
                    worst_sigmas.max((mean[[i, j]] - expect_mean).abs() / se_mean);
                worst_sigmas =
                    worst_sigmas.max((var[[i, j]] - sigma * sigma).abs() / se_var);
            }
        }
    }
    CheckResult::new(
        "diffusion/heat-dissipation-equivalence",
        worst_sigmas < 4.0,
        format!(
            "dissipation-with-fixed-noise marginal: worst deviation = {worst_sigmas:.2} SE \
             (limit 4 SE, {draws} draws, 3 times)"
        ),
    )
}

// ---------------------------------------------------------------------------
// denoiser

pub fn check_oracle_optimality() -> CheckResult {
    let n = 8usize;
    let p = ScheduleParams::new(n, 10.0);
    let process = BlurringDiffusion::new(p.clone()).unwrap();
    let prior = GaussianDataPrior::power_law(process.grid(), 1.0, 1.0).unwrap();
    let oracle = GaussianOracleDenoiser::new(prior.clone(), p, 1).unwrap();
    let dct = process.dct();
    let draws = 4000usize;
    let mut ok = true;
    let mut detail = String::new();
    for &t in &[0.1f64, 0.3, 0.5, 0.7, 0.9] {
        let mut loss_zero = 0.0;
        let mut loss_rand = 0.0;
        let mut loss_oracle = 0.0;
        for i in 0..draws {
            let mut rng = CounterRng::stream(0x41, &[t.to_bits(), i as u64]);
            let u_x = prior.sample_freq(1, &mut rng);
            let x = dct.inverse(&u_x).unwrap();
            let eps = ImageTensor::standard_normal(1, n, &mut rng);
            let z = process.diffuse(&x, t, &eps).unwrap();
            let pred = oracle.predict_eps(&z, t).unwrap();
            let rand_pred = ImageTensor::standard_normal(1, n, &mut rng);
            let dim = (n * n) as f64;
            for ((ev, pv), rv) in eps
                .array()
                .iter()
                .zip(pred.array().iter())
                .zip(rand_pred.array().iter())
            {
                loss_zero += ev * ev / dim;
                loss_rand += (ev - rv) * (ev - rv) / dim;
                loss_oracle += (ev - pv) * (ev - pv) / dim;
            }
        }
        loss_zero /= draws as f64;
        loss_rand /= draws as f64;
        loss_oracle /= draws as f64;
        if !(loss_oracle < loss_zero && loss_oracle < loss_rand) {
            ok = false;
        }
        detail = format!(
            "t = {t}: oracle {loss_oracle:.3} < zero {loss_zero:.3} < random {loss_rand:.3}"
        );
    }
    CheckResult::new(
        "denoiser/oracle-optimality",
        ok,
        format!("oracle achieves the lowest loss at every tested t (last: {detail})"),
    )
}

pub fn check_gradient() -> CheckResult {
    let mut rng = CounterRng::new(0x42);
    let mut arch = MlpArch::new(3, 1);
    arch.hidden = vec![12, 10];
    let mut net = MlpDenoiser::init(arch, &mut rng).unwrap();
    for p in net.params_mut().iter_mut() {
        *p += 0.05 * rng.normal();
    }
    let z = ImageTensor::standard_normal(1, 3, &mut rng);
    let target = ImageTensor::standard_normal(1, 3, &mut rng);
    let t = 0.37;
    let (_, grad) = net.loss_and_grad(&z, t, &target).unwrap();
    let h = 1e-5;
    let count = net.params().len();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let idx = (rng.next_u64() as usize) % count;
        let orig = net.params()[idx];
        net.params_mut()[idx] = orig + h;
        let (lp, _) = net.loss_and_grad(&z, t, &target).unwrap();
        net.params_mut()[idx] = orig - h;
        let (lm, _) = net.loss_and_grad(&z, t, &target).unwrap();
        net.params_mut()[idx] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(grad[idx].abs()).max(1e-8);
        worst = worst.max((fd - grad[idx]).abs() / denom);
    }
    CheckResult::new(
        "denoiser/gradient-check",
        worst < 1e-4,
        format!(
            "central finite differences (step 1e-5) on 100 random coordinates: \
             max relative deviation = {worst:.2e} (tol 1e-4)"
        ),
    )
}

pub fn check_ema_consistency() -> CheckResult {
    let process = BlurringDiffusion::new(ScheduleParams::new(4, 1.0)).unwrap();
    let mut init_rng = CounterRng::stream(0x43, &[stream_id::INIT]);
    let mut arch = MlpArch::new(4, 1);
    arch.hidden = vec![16];
    let model0 = MlpDenoiser::init(arch, &mut init_rng).unwrap();
    let mut data_rng = CounterRng::new(0x44);
    let data: Vec<ImageTensor> = (0..8)
        .map(|_| {
            let mut x = ImageTensor::standard_normal(1, 4, &mut data_rng);
            x.array_mut().mapv_inplace(|v| 0.5 * v.tanh());
            x
        })
        .collect();
    let decay = 0.95;
    let cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 4,
        steps: 10,
        seed: 0x45,
        ema_decay: decay,
    };
    let mut trained = model0.clone();
    let out = train(&mut trained, &data, &process, &cfg).unwrap();

    // Replay the optimizer step by step, recomputing the EMA from snapshots.
    let mut replay = model0.clone();
    let mut opt = AdamState::new(replay.params().len());
    let mut expect = replay.params().to_vec();
    for step in 1..=10usize {
        let mut idx_rng = CounterRng::stream(0x45, &[stream_id::TRAIN_BATCH, step as u64]);
        let batch: Vec<&ImageTensor> = (0..4)
            .map(|_| &data[idx_rng.below(data.len() as u64) as usize])
            .collect();
        let (_, grad) = batch_loss_and_grad(&replay, &batch, &process, step, 0x45).unwrap();
        opt.update(replay.params_mut(), &grad, 1e-3);
        for (e, p) in expect.iter_mut().zip(replay.params().iter()) {
            *e = decay * *e + (1.0 - decay) * p;
        }
    }
    let mut worst = 0.0f64;
    for (a, b) in out.ema_params.iter().zip(expect.iter()) {
        worst = worst.max((a - b).abs());
    }
    CheckResult::new(
        "denoiser/ema-consistency",
        worst < 1e-10,
        format!("EMA vs snapshot recomputation over 10 steps: max deviation = {worst:.2e} (tol 1e-10)"),
    )
}

// ---------------------------------------------------------------------------
// sampler

pub fn check_sampler_ddpm_reduction() -> CheckResult {
    let n = 8usize;
    let t_steps = 100usize;
    let seed = 0x51u64;
    let params = ScheduleParams::new(n, 0.0);
    let process = BlurringDiffusion::new(params.clone()).unwrap();
    let prior_std = 0.5f64;
    let prior = GaussianDataPrior::new(
        Array2::zeros((n, n)),
        Array2::from_elem((n, n), prior_std),
    )
    .unwrap();
    let denoiser = GaussianOracleDenoiser::new(prior, params, 1).unwrap();

    let mut config = SamplerConfig::new(t_steps, seed, 2);
    config.trajectory_stride = 1;
    let trajs = sample_trajectory(&denoiser, &config, &process).unwrap();

    let mut worst = 0.0f64;
    for (elem, traj) in trajs.iter().enumerate() {
        let reference = ddpm_ref::sample_trajectory(n, t_steps, seed, elem, prior_std);
        assert_eq!(traj.len(), reference.len());
        for (snap, r) in traj.iter().zip(reference.iter()) {
            for (a, b) in snap.z.array().iter().zip(r.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    CheckResult::new(
        "sampler/ddpm-reduction",
        worst < 1e-10,
        format!(
            "sigma_b_max = 0 vs independent isotropic sampler, {t_steps} shared-seed steps: \
             max per-step deviation = {worst:.2e} (tol 1e-10)"
        ),
    )
}

pub fn check_sampler_step_doubling() -> CheckResult {
    let n = 8usize;
    let batch = 1200usize;
    let params = ScheduleParams::new(n, 10.0);
    let process = BlurringDiffusion::new(params.clone()).unwrap();
    let prior = GaussianDataPrior::power_law(process.grid(), 1.0, 1.0).unwrap();
    let denoiser = GaussianOracleDenoiser::new(prior, params, 1).unwrap();
    let dct = process.dct();

    let var_of = |t_steps: usize, seed: u64| -> Array2<f64> {
        let config = SamplerConfig::new(t_steps, seed, batch);
        let out = sample(&denoiser, &config, &process).unwrap();
        let mut stats = FreqStats::new(n);
        for z in &out {
            stats.push(&dct.forward(z).unwrap());
        }
        stats.var()
    };
    let v1 = var_of(200, 0x52);
    let v2 = var_of(400, 0x53);
    let nf = batch as f64;
    let mut worst_sigmas = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let se = ((v1[[i, j]].powi(2) + v2[[i, j]].powi(2)) * 2.0 / (nf - 1.0)).sqrt();
            worst_sigmas = worst_sigmas.max((v1[[i, j]] - v2[[i, j]]).abs() / se);
        }
    }
    CheckResult::new(
        "sampler/step-doubling",
        worst_sigmas < 5.0,
        format!(
            "per-frequency variances at T = 200 vs T = 400: worst gap = {worst_sigmas:.2} SE \
             (limit 5 SE, batch {batch})"
        ),
    )
}

pub fn check_sampler_finite_latents() -> CheckResult {
    let n = 8usize;
    let mut ok = true;
    let mut ran = 0usize;
    for p in all_schedule_configs(n) {
        for &t_steps in &[100usize, 1000] {
            let process = BlurringDiffusion::new(p.clone()).unwrap();
            let prior = GaussianDataPrior::power_law(process.grid(), 1.0, 1.0).unwrap();
            let denoiser = GaussianOracleDenoiser::new(prior, p.clone(), 1).unwrap();
            let config = SamplerConfig::new(t_steps, 0x54, 1);
            match sample(&denoiser, &config, &process) {
                Ok(out) => {
                    if !out.iter().all(|z| z.is_finite()) {
                        ok = false;
                    }
                }
                Err(_) => ok = false,
            }
            ran += 1;
        }
    }
    CheckResult::new(
        "sampler/finite-latents",
        ok,
        format!(
            "{ran} schedule/step configurations (sigma_b_max x shape x T) sampled without \
             non-finite latents"
        ),
    )
}

// ---------------------------------------------------------------------------
// Independent scalar DDPM reference.

/// Self-contained scalar isotropic diffusion: the reduction oracle. Written
/// against the same formulas but sharing no code (and no DCT) with the main
/// modules; coefficient clipping uses the same delta so agreement is exact
/// to roundoff.
pub mod ddpm_ref {
    use crate::rng::{stream_id, CounterRng};

    const LOGSNR_MIN: f64 = -10.0;
    const LOGSNR_MAX: f64 = 10.0;
    const DELTA: f64 = 1e-8;

    pub fn noise_scaling(t: f64) -> (f64, f64) {
        let limit_max = (-0.5 * LOGSNR_MAX).exp().atan();
        let limit_min = (-0.5 * LOGSNR_MIN).exp().atan() - limit_max;
        let logsnr = -2.0 * (limit_min * t + limit_max).tan().ln();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        (sig(logsnr).sqrt(), sig(-logsnr).sqrt())
    }

    /// `(sigma2_denoise, coeff_zt, coeff_pred)` for the scalar posterior.
    pub fn posterior(s: f64, t: f64) -> (f64, f64, f64) {
        let (a_s, sigma_s) = noise_scaling(s);
        let (a_t, sigma_t) = noise_scaling(t);
        let alpha_ts = a_t / a_s;
        let ss2 = sigma_s * sigma_s;
        let st2 = sigma_t * sigma_t;
        let sigma2_ts = st2 - alpha_ts * alpha_ts * ss2;
        let clip = |x: f64| x.max(DELTA);
        let s2d = 1.0 / clip(1.0 / clip(ss2) + 1.0 / clip(st2 / (alpha_ts * alpha_ts) - ss2));
        let czt = alpha_ts * s2d / (sigma2_ts + DELTA);
        let cpred = s2d / (alpha_ts * clip(ss2));
        (s2d, czt, cpred)
    }

    /// Ancestral sampling in pixel space with the scalar MMSE denoiser for
    /// an isotropic zero-mean Gaussian prior of std `prior_std`. Returns the
    /// full state trajectory (initial draw plus every step), flattened row-
    /// major per state, using the same RNG streams as the main sampler.
    pub fn sample_trajectory(
        n: usize,
        t_steps: usize,
        seed: u64,
        elem: usize,
        prior_std: f64,
    ) -> Vec<Vec<f64>> {
        let dim = n * n;
        let mut init_rng = CounterRng::stream(seed, &[stream_id::SAMPLER, elem as u64, 0]);
        let mut z: Vec<f64> = (0..dim).map(|_| init_rng.normal()).collect();
        let mut states = vec![z.clone()];
        let s2 = prior_std * prior_std;
        for k in (1..=t_steps).rev() {
            let t = k as f64 / t_steps as f64;
            let s = (k - 1) as f64 / t_steps as f64;
            let (a_t, sigma_t) = noise_scaling(t);
            let (s2d, czt, cpred) = posterior(s, t);
            let mut rng =
                CounterRng::stream(seed, &[stream_id::SAMPLER, elem as u64, k as u64]);
            let eps_scale = s2d.sqrt();
            for zv in z.iter_mut() {
                // Scalar MMSE noise prediction for the Gaussian prior.
                let eps_hat = *zv * sigma_t / (a_t * a_t * s2 + sigma_t * sigma_t);
                let mu = czt * *zv + cpred * (*zv - sigma_t * eps_hat);
                *zv = mu + eps_scale * rng.normal();
            }
            states.push(z.clone());
        }
        states
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for check in run_all(&VerifyOptions::default()) {
            assert!(check.passed, "{}: {}", check.id, check.detail);
        }
    }

    #[test]
    fn corrupt_dct_is_caught() {
        let result = check_dct_orthogonality(true);
        assert!(!result.passed, "fault injection must fail the check");
    }
}

// Scratch calibration for the eps-vs-x prediction ablation and for the
// single-pixel convergence settings.
use blurdiff_core::dataset::{generate, ToyDatasetKind, ToyDatasetSpec};
use blurdiff_core::denoiser::{MlpArch, MlpDenoiser, PredictTarget, TrainedDenoiser};
use blurdiff_core::diffusion::BlurringDiffusion;
use blurdiff_core::rng::{stream_id, CounterRng};
use blurdiff_core::sampler::{sample, SamplerConfig};
use blurdiff_core::schedule::ScheduleParams;
use blurdiff_core::spectrum::{compare_spectra, power_spectrum};
use blurdiff_core::train::{empirical_eps_loss, train, TrainConfig};
use blurdiff_core::transform::{Dct, FrequencyGrid, ImageTensor};
use ndarray::Array3;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("ablation");
    if mode == "pixel" {
        single_pixel();
    } else {
        ablation();
    }
}

fn single_pixel() {
    let s = 0.25f64;
    let process = BlurringDiffusion::new(ScheduleParams::new(1, 0.0)).unwrap();
    let mut data_rng = CounterRng::new(0xD1);
    let data: Vec<ImageTensor> = (0..4096)
        .map(|_| ImageTensor::new(Array3::from_elem((1, 1, 1), s * data_rng.normal())).unwrap())
        .collect();
    for (steps, lr, decay) in [(4000usize, 2e-3, 0.995), (6000, 2e-3, 0.995), (4000, 3e-3, 0.99)] {
        let mut arch = MlpArch::new(1, 1);
        arch.hidden = vec![48, 32];
        let mut init_rng = CounterRng::stream(0xD2, &[stream_id::INIT]);
        let mut model = MlpDenoiser::init(arch, &mut init_rng).unwrap();
        let cfg = TrainConfig {
            lr,
            batch_size: 64,
            steps,
            seed: 0xD2,
            ema_decay: decay,
        };
        let out = train(&mut model, &data, &process, &cfg).unwrap();
        let mut ema_model = model.clone();
        ema_model.set_params(&out.ema_params).unwrap();
        let mut eval_rng = CounterRng::new(0xD4);
        let eval: Vec<ImageTensor> = (0..20_000)
            .map(|_| {
                ImageTensor::new(Array3::from_elem((1, 1, 1), s * eval_rng.normal())).unwrap()
            })
            .collect();
        let eval_refs: Vec<&ImageTensor> = eval.iter().collect();
        let d_ema = TrainedDenoiser::new(&ema_model, &process).unwrap();
        let d_raw = TrainedDenoiser::new(&model, &process).unwrap();
        let l_ema = empirical_eps_loss(&d_ema, &eval_refs, &process, 999_999, 0xD3).unwrap();
        let l_raw = empirical_eps_loss(&d_raw, &eval_refs, &process, 999_999, 0xD3).unwrap();
        println!(
            "steps={steps} lr={lr} decay={decay}: ema ratio = {:.4}, raw ratio = {:.4}",
            l_ema / 0.1974051055555814,
            l_raw / 0.1974051055555814
        );
    }
}

fn ablation() {
    let n = 8usize;
    let params = ScheduleParams::new(n, 20.0);
    let bars = generate(
        &ToyDatasetSpec {
            kind: ToyDatasetKind::Bars { width: 1 },
            n,
            channels: 1,
            size: 2048,
        },
        0,
    )
    .unwrap();
    let process = BlurringDiffusion::new(params.clone()).unwrap();
    let dct = Dct::new(n).unwrap();
    let grid = FrequencyGrid::new(n).unwrap();
    let ref_spec = power_spectrum(&bars, &dct).unwrap();

    for steps in [1500usize, 2500] {
        let mut dists = Vec::new();
        for predict in [PredictTarget::Eps, PredictTarget::X] {
            let mut arch = MlpArch::new(n, 1);
            arch.predict = predict;
            let mut init_rng = CounterRng::stream(7, &[stream_id::INIT]);
            let mut model = MlpDenoiser::init(arch, &mut init_rng).unwrap();
            let cfg = TrainConfig {
                lr: 2e-4,
                batch_size: 32,
                steps,
                seed: 7,
                ema_decay: 0.999,
            };
            let t0 = std::time::Instant::now();
            let out = train(&mut model, &bars, &process, &cfg).unwrap();
            let mut ema_model = model.clone();
            ema_model.set_params(&out.ema_params).unwrap();
            let denoiser = TrainedDenoiser::new(&ema_model, &process).unwrap();
            let sconfig = SamplerConfig::new(200, 0xAB, 200);
            let samples = sample(&denoiser, &sconfig, &process).unwrap();
            let spec = power_spectrum(&samples, &dct).unwrap();
            let report = compare_spectra(&spec, &ref_spec, &grid, 10).unwrap();
            println!(
                "steps={steps} predict={:?}: final ema loss = {:.4}, log_spectral_distance = {:.4}, low10 = {:.4} ({:?})",
                predict,
                out.history.last().unwrap().ema_loss,
                report.log_spectral_distance,
                report.max_rel_dev_low,
                t0.elapsed()
            );
            dists.push(report.log_spectral_distance);
        }
        println!(
            "steps={steps}: eps {} x (eps={:.4}, x={:.4})\n",
            if dists[0] < dists[1] { "BEATS" } else { "LOSES TO" },
            dists[0],
            dists[1]
        );
    }
}

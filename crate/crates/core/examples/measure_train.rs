// Scratch calibration for the 1-pixel MMSE convergence test and the
// bars-loss-halving reference run.
use blurdiff_core::dataset::{generate, ToyDatasetKind, ToyDatasetSpec};
use blurdiff_core::denoiser::{MlpArch, MlpDenoiser, TrainedDenoiser};
use blurdiff_core::diffusion::BlurringDiffusion;
use blurdiff_core::rng::{stream_id, CounterRng};
use blurdiff_core::schedule::ScheduleParams;
use blurdiff_core::train::{empirical_eps_loss, train, TrainConfig};
use blurdiff_core::transform::ImageTensor;
use ndarray::Array3;

fn main() {
    // --- single pixel ---
    let s = 0.25f64;
    let process = BlurringDiffusion::new(ScheduleParams::new(1, 0.0)).unwrap();
    let mut data_rng = CounterRng::new(0xD1);
    let data: Vec<ImageTensor> = (0..4096)
        .map(|_| {
            ImageTensor::new(Array3::from_elem((1, 1, 1), s * data_rng.normal())).unwrap()
        })
        .collect();
    let mut arch = MlpArch::new(1, 1);
    arch.hidden = vec![48, 32];
    let mut init_rng = CounterRng::stream(0xD2, &[stream_id::INIT]);
    let mut model = MlpDenoiser::init(arch, &mut init_rng).unwrap();
    let cfg = TrainConfig {
        lr: 2e-3,
        batch_size: 64,
        steps: 3000,
        seed: 0xD2,
        ema_decay: 0.999,
    };
    let t0 = std::time::Instant::now();
    let out = train(&mut model, &data, &process, &cfg).unwrap();
    eprintln!("train took {:?}", t0.elapsed());

    // Evaluate with the EMA parameters on fresh draws.
    let mut ema_model = model.clone();
    ema_model.set_params(&out.ema_params).unwrap();
    let denoiser = TrainedDenoiser::new(&ema_model, &process).unwrap();
    let eval: Vec<ImageTensor> = (0..20_000)
        .map(|_| ImageTensor::new(Array3::from_elem((1, 1, 1), s * data_rng.normal())).unwrap())
        .collect();
    let eval_refs: Vec<&ImageTensor> = eval.iter().collect();
    let loss = empirical_eps_loss(&denoiser, &eval_refs, &process, 999_999, 0xD3).unwrap();
    let raw_denoiser = TrainedDenoiser::new(&model, &process).unwrap();
    let loss_raw = empirical_eps_loss(&raw_denoiser, &eval_refs, &process, 999_999, 0xD3).unwrap();
    println!(
        "single-pixel: eval loss ema = {loss:.5}, raw = {loss_raw:.5}, L* = 0.19741, ratio_ema = {:.4}",
        loss / 0.1974051055555814
    );
    println!(
        "history: first = {:.4}, last ema = {:.4}",
        out.history[0].loss,
        out.history.last().unwrap().ema_loss
    );

    // --- bars halving (criterion 8) ---
    let bars = generate(
        &ToyDatasetSpec {
            kind: ToyDatasetKind::Bars { width: 1 },
            n: 8,
            channels: 1,
            size: 2048,
        },
        0,
    )
    .unwrap();
    let process8 = BlurringDiffusion::new(ScheduleParams::new(8, 20.0)).unwrap();
    let arch8 = MlpArch::new(8, 1);
    let mut init8 = CounterRng::stream(0, &[stream_id::INIT]);
    let mut model8 = MlpDenoiser::init(arch8, &mut init8).unwrap();
    let cfg8 = TrainConfig {
        lr: 2e-4,
        batch_size: 32,
        steps: 5000,
        seed: 0,
        ema_decay: 0.9999,
    };
    let t0 = std::time::Instant::now();
    let out8 = train(&mut model8, &bars, &process8, &cfg8).unwrap();
    eprintln!("bars train took {:?}", t0.elapsed());
    let first = out8.history.first().unwrap();
    let last = out8.history.last().unwrap();
    println!(
        "bars: first loss = {:.4}, final ema = {:.4}, ratio = {:.4}",
        first.loss,
        last.ema_loss,
        last.ema_loss / first.loss
    );
}

//! `train`: optimize the denoiser on the configured dataset, writing the
//! checkpoint, the EMA checkpoint, and the per-step loss CSV.

use std::fs;

use anyhow::{Context, Result};
use blurdiff_core::denoiser::{MlpArch, MlpDenoiser};
use blurdiff_core::diffusion::BlurringDiffusion;
use blurdiff_core::io::{write_checkpoint, Checkpoint};
use blurdiff_core::rng::{stream_id, CounterRng};
use blurdiff_core::train::{train, TrainConfig};

use super::{load_dataset, CommandCtx};

pub fn run(ctx: &CommandCtx) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_dataset(cfg)?;
    let process = BlurringDiffusion::new(cfg.schedule_params())?;

    let arch = MlpArch {
        n: cfg.n,
        channels: cfg.channels,
        hidden: cfg.hidden.clone(),
        time_embed_freqs: cfg.time_embed_freqs,
        predict: cfg.predict,
    };
    let mut init_rng = CounterRng::stream(cfg.seed, &[stream_id::INIT]);
    let mut model = MlpDenoiser::init(arch.clone(), &mut init_rng)?;

    let train_cfg = TrainConfig {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        steps: cfg.train_steps,
        seed: cfg.seed,
        ema_decay: cfg.ema_decay,
    };
    let out = train(&mut model, &data, &process, &train_cfg)
        .context("training aborted")?;

    let mut loss_csv = String::from("step,loss,ema_loss\n");
    for rec in &out.history {
        loss_csv.push_str(&format!("{},{},{}\n", rec.step, rec.loss, rec.ema_loss));
    }
    fs::write(ctx.out_dir.join("loss.csv"), loss_csv)?;

    let ckpt = Checkpoint {
        arch: arch.clone(),
        params: model.params().to_vec(),
        opt: out.opt.clone(),
        ema_params: out.ema_params.clone(),
    };
    write_checkpoint(&ctx.out_dir.join("model.ckpt"), &ckpt)?;

    // The EMA checkpoint carries the averaged parameters as its primary
    // vector so `sample --checkpoint model.ema.ckpt` runs them directly.
    let ema_ckpt = Checkpoint {
        arch,
        params: out.ema_params.clone(),
        opt: out.opt,
        ema_params: out.ema_params,
    };
    write_checkpoint(&ctx.out_dir.join("model.ema.ckpt"), &ema_ckpt)?;

    if let (Some(first), Some(last)) = (out.history.first(), out.history.last()) {
        println!(
            "trained {} steps on {} samples: loss {:.4} -> smoothed {:.4}",
            cfg.train_steps,
            data.len(),
            first.loss,
            last.ema_loss
        );
    }
    println!("wrote {}", ctx.out_dir.join("model.ckpt").display());
    println!("wrote {}", ctx.out_dir.join("model.ema.ckpt").display());
    println!("wrote {}", ctx.out_dir.join("loss.csv").display());
    Ok(())
}

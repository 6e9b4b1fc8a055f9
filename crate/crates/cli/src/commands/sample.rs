//! `sample`: ancestral generation from a trained checkpoint, writing
//! individual PGM/PPM files, a tiled grid, a raw-tensor batch, and
//! (optionally) trajectory dumps.

use std::path::Path;

use anyhow::{bail, Result};
use blurdiff_core::denoiser::{MlpDenoiser, TrainedDenoiser};
use blurdiff_core::diffusion::BlurringDiffusion;
use blurdiff_core::io::{
    read_checkpoint, write_image, write_image_batch, write_image_grid, write_raw_tensor,
};
use blurdiff_core::sampler::{sample, sample_trajectory, SamplerConfig};

use super::{image_file_name, CommandCtx};

pub fn run(ctx: &CommandCtx, checkpoint: &Path) -> Result<()> {
    let cfg = &ctx.cfg;
    let ckpt = read_checkpoint(checkpoint)?;
    if ckpt.arch.n != cfg.n || ckpt.arch.channels != cfg.channels {
        bail!(
            "checkpoint was trained for {} channel(s) at {}x{}, config asks for {} at {}x{}",
            ckpt.arch.channels,
            ckpt.arch.n,
            ckpt.arch.n,
            cfg.channels,
            cfg.n,
            cfg.n
        );
    }
    let model = MlpDenoiser::from_params(ckpt.arch.clone(), ckpt.params)?;
    let process = BlurringDiffusion::new(cfg.schedule_params())?;
    let denoiser = TrainedDenoiser::new(&model, &process)?;

    let sampler_cfg = SamplerConfig {
        t_steps: cfg.t_steps,
        seed: cfg.seed,
        batch: cfg.sample_batch,
        last_step_mode: cfg.last_step,
        clip_x_hat: cfg.clip_xhat,
        trajectory_stride: cfg.stride(),
    };

    let samples = sample(&denoiser, &sampler_cfg, &process)?;
    for (i, img) in samples.iter().enumerate() {
        let name = image_file_name("sample", i, cfg.channels);
        write_image(&ctx.out_dir.join(name), img)?;
    }
    let grid_name = if cfg.channels == 3 { "grid.ppm" } else { "grid.pgm" };
    write_image_grid(&ctx.out_dir.join(grid_name), &samples)?;
    write_image_batch(&ctx.out_dir.join("samples.bdt"), &samples)?;

    if cfg.record_trajectory {
        let trajs = sample_trajectory(&denoiser, &sampler_cfg, &process)?;
        for (i, traj) in trajs.iter().enumerate() {
            let mut data = Vec::new();
            for snap in traj {
                data.extend(snap.z.array().iter().copied());
            }
            let dims = [
                traj.len() as u32,
                cfg.channels as u32,
                cfg.n as u32,
                cfg.n as u32,
            ];
            write_raw_tensor(
                &ctx.out_dir.join(format!("trajectory_{i:03}.bdt")),
                &dims,
                &data,
            )?;
        }
    }

    println!(
        "sampled {} image(s) with T = {} (last step: {})",
        samples.len(),
        cfg.t_steps,
        cfg.last_step.as_str()
    );
    println!("wrote {}", ctx.out_dir.join(grid_name).display());
    Ok(())
}

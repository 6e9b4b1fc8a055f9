//! `inspect-schedule`: tabulate the schedule on 1001 grid points.

use std::fs;

use anyhow::Result;
use blurdiff_core::schedule::{blur_sigma, frequency_scaling, noise_scaling_cosine};
use blurdiff_core::transform::FrequencyGrid;

use super::CommandCtx;
use crate::config::RunConfig;

/// Columns: `t, a_t, sigma_t, sigma_b_t`, then `d_(i)_(j), logsnr_(i)_(j)`
/// for the frequency indices `(0,0), (1,1), (N/2,N/2), (N-1,N-1)`.
/// Rows: `t = 0, 0.001, ..., 1`.
pub fn schedule_csv(cfg: &RunConfig) -> Result<String> {
    let params = cfg.schedule_params();
    let grid = FrequencyGrid::new(cfg.n)?;
    let n = cfg.n;
    let indices = [(0, 0), (1.min(n - 1), 1.min(n - 1)), (n / 2, n / 2), (n - 1, n - 1)];

    let mut out = String::from("t,a_t,sigma_t,sigma_b_t");
    for (i, j) in indices {
        out.push_str(&format!(",d_{i}_{j},logsnr_{i}_{j}"));
    }
    out.push('\n');

    for k in 0..=1000 {
        let t = k as f64 / 1000.0;
        let (a, sigma) = noise_scaling_cosine(t, &params)?;
        let d = frequency_scaling(t, &grid, &params)?;
        let sb = blur_sigma(t, &params)?;
        out.push_str(&format!("{t},{a},{sigma},{sb}"));
        for (i, j) in indices {
            let alpha = a * d[[i, j]];
            let logsnr = (alpha * alpha / (sigma * sigma)).ln();
            out.push_str(&format!(",{},{logsnr}", d[[i, j]]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn run(ctx: &CommandCtx) -> Result<()> {
    let csv = schedule_csv(&ctx.cfg)?;
    let path = ctx.out_dir.join("schedule.csv");
    fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

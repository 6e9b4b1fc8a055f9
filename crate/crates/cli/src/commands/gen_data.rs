//! `gen-data`: materialize the configured toy dataset to a raw-tensor file
//! plus a small preview grid.

use anyhow::Result;
use blurdiff_core::io::{write_image_batch, write_image_grid};

use super::{load_dataset, CommandCtx};

pub fn run(ctx: &CommandCtx) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_dataset(cfg)?;
    let path = ctx.out_dir.join("dataset.bdt");
    write_image_batch(&path, &data)?;

    let preview: Vec<_> = data.iter().take(16).cloned().collect();
    let preview_name = if cfg.channels == 3 {
        "dataset_preview.ppm"
    } else {
        "dataset_preview.pgm"
    };
    write_image_grid(&ctx.out_dir.join(preview_name), &preview)?;

    println!(
        "generated {} samples ({} ch, {}x{}) -> {}",
        data.len(),
        cfg.channels,
        cfg.n,
        cfg.n,
        path.display()
    );
    Ok(())
}

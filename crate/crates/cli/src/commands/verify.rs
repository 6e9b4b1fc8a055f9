//! `verify`: run every declared invariant as a named check, print one
//! machine-readable line per check plus a manifest line, and exit nonzero
//! on any failure.

use std::fs;

use anyhow::Result;
use blurdiff_core::denoiser::{MlpArch, MlpDenoiser};
use blurdiff_core::dataset::{generate, ToyDatasetKind, ToyDatasetSpec};
use blurdiff_core::diffusion::BlurringDiffusion;
use blurdiff_core::io::{write_checkpoint, write_image_batch, Checkpoint};
use blurdiff_core::rng::{stream_id, CounterRng};
use blurdiff_core::schedule::ScheduleParams;
use blurdiff_core::train::{train, TrainConfig};
use blurdiff_core::verify::{run_all, CheckResult, VerifyOptions};

use super::CommandCtx;
use crate::config::RunConfig;

/// Total number of checks the manifest must report: 22 library checks plus
/// the two CLI checks below. Documented in the README.
pub const TOTAL_CHECKS: usize = 24;

fn check_config_roundtrip() -> CheckResult {
    let mut ok = true;
    let default = RunConfig::default();
    ok &= matches!(RunConfig::parse(&default.serialize()), Ok(c) if c == default);

    let mut mutated = RunConfig::default();
    mutated.n = 16;
    mutated.sigma_b_max = 1.0;
    mutated.hidden = vec![64, 32];
    mutated.clip_xhat = true;
    mutated.data_path = "x/y.bdt".into();
    ok &= matches!(RunConfig::parse(&mutated.serialize()), Ok(c) if c == mutated);

    // Unknown keys must be rejected.
    ok &= RunConfig::parse("no_such_key = 1\n").is_err();

    CheckResult {
        id: "cli/config-roundtrip",
        passed: ok,
        detail: "parse(serialize(config)) == config; unknown keys rejected".into(),
    }
}

fn check_command_determinism() -> CheckResult {
    let run_once = || -> Result<(Vec<u8>, String, Vec<u8>)> {
        let dir = tempfile_dir()?;
        // Dataset bytes.
        let spec = ToyDatasetSpec {
            kind: ToyDatasetKind::Bars { width: 1 },
            n: 8,
            channels: 1,
            size: 24,
        };
        let data = generate(&spec, 17)?;
        let data_path = dir.join("d.bdt");
        write_image_batch(&data_path, &data)?;
        let data_bytes = fs::read(&data_path)?;

        // Schedule CSV.
        let csv = super::inspect_schedule::schedule_csv(&RunConfig::default())?;

        // Short training run -> checkpoint bytes.
        let params = ScheduleParams::new(4, 1.0);
        let process = BlurringDiffusion::new(params)?;
        let mut arch = MlpArch::new(4, 1);
        arch.hidden = vec![8];
        let mut init_rng = CounterRng::stream(17, &[stream_id::INIT]);
        let mut model = MlpDenoiser::init(arch.clone(), &mut init_rng)?;
        let tiny: Vec<_> = generate(
            &ToyDatasetSpec {
                kind: ToyDatasetKind::Bars { width: 1 },
                n: 4,
                channels: 1,
                size: 8,
            },
            17,
        )?;
        let out = train(
            &mut model,
            &tiny,
            &process,
            &TrainConfig {
                lr: 1e-3,
                batch_size: 4,
                steps: 5,
                seed: 17,
                ema_decay: 0.99,
            },
        )?;
        let ckpt_path = dir.join("m.ckpt");
        write_checkpoint(
            &ckpt_path,
            &Checkpoint {
                arch,
                params: model.params().to_vec(),
                opt: out.opt,
                ema_params: out.ema_params,
            },
        )?;
        let ckpt_bytes = fs::read(&ckpt_path)?;
        fs::remove_dir_all(&dir).ok();
        Ok((data_bytes, csv, ckpt_bytes))
    };

    let result = (|| -> Result<bool> {
        let a = run_once()?;
        let b = run_once()?;
        Ok(a == b)
    })();
    match result {
        Ok(passed) => CheckResult {
            id: "cli/determinism",
            passed,
            detail: "dataset bytes, schedule CSV and checkpoint bytes identical across reruns"
                .into(),
        },
        Err(e) => CheckResult {
            id: "cli/determinism",
            passed: false,
            detail: format!("errored: {e}"),
        },
    }
}

fn tempfile_dir() -> Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!(
        "blurdiff-verify-{}-{:x}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Returns `true` when every check passed.
pub fn run(ctx: &CommandCtx, corrupt_dct: bool) -> Result<bool> {
    let opts = VerifyOptions { corrupt_dct };
    let mut results = run_all(&opts);
    results.push(check_config_roundtrip());
    results.push(check_command_determinism());

    let mut report = String::new();
    let mut passed = 0usize;
    for r in &results {
        let line = format!(
            "CHECK {} {} {}",
            r.id,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
        println!("{line}");
        report.push_str(&line);
        report.push('\n');
        if r.passed {
            passed += 1;
        }
    }
    let manifest = format!("MANIFEST checks={} passed={passed}", results.len());
    println!("{manifest}");
    report.push_str(&manifest);
    report.push('\n');
    fs::write(ctx.out_dir.join("verify_report.txt"), report)?;

    debug_assert_eq!(results.len(), TOTAL_CHECKS);
    Ok(passed == results.len())
}

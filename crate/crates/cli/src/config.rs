//! Flat key=value run configuration. One pair per line, `#` starts a
//! comment, unknown keys are rejected, and every command writes the fully
//! resolved configuration back into its output directory.

use anyhow::{bail, Context, Result};
use blurdiff_core::denoiser::PredictTarget;
use blurdiff_core::sampler::LastStepMode;
use blurdiff_core::schedule::{BlurShape, ScheduleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetChoice {
    Bars,
    GaussianSpectrum,
    ExternalRaw,
}

impl DatasetChoice {
    fn as_str(self) -> &'static str {
        match self {
            DatasetChoice::Bars => "bars",
            DatasetChoice::GaussianSpectrum => "gaussian_spectrum",
            DatasetChoice::ExternalRaw => "external_raw",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "bars" => DatasetChoice::Bars,
            "gaussian_spectrum" => DatasetChoice::GaussianSpectrum,
            "external_raw" => DatasetChoice::ExternalRaw,
            other => bail!("unknown dataset {other:?} (expected bars, gaussian_spectrum or external_raw)"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // process
    pub n: usize,
    pub channels: usize,
    pub sigma_b_max: f64,
    pub d_min: f64,
    pub logsnr_min: f64,
    pub logsnr_max: f64,
    pub blur_shape: BlurShape,
    pub t_steps: usize,
    // training
    pub lr: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub seed: u64,
    pub ema_decay: f64,
    pub predict: PredictTarget,
    pub hidden: Vec<usize>,
    pub time_embed_freqs: usize,
    // sampling
    pub sample_batch: usize,
    pub last_step: LastStepMode,
    pub clip_xhat: bool,
    pub record_trajectory: bool,
    /// 0 means "use t_steps".
    pub trajectory_stride: usize,
    // dataset
    pub dataset: DatasetChoice,
    pub dataset_size: usize,
    pub bar_width: usize,
    pub spectrum_p: f64,
    pub spectrum_scale: f64,
    pub data_path: String,
    // spectral analysis
    pub psd_samples: String,
    pub psd_reference: String,
    pub psd_lowest_k: usize,
    // output
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 8,
            channels: 1,
            sigma_b_max: 20.0,
            d_min: 0.001,
            logsnr_min: -10.0,
            logsnr_max: 10.0,
            blur_shape: BlurShape::SinSquared,
            t_steps: 1000,
            lr: 2e-4,
            batch_size: 32,
            train_steps: 5000,
            seed: 0,
            ema_decay: 0.9999,
            predict: PredictTarget::Eps,
            hidden: vec![128, 128],
            time_embed_freqs: 16,
            sample_batch: 16,
            last_step: LastStepMode::Literal,
            clip_xhat: false,
            record_trajectory: false,
            trajectory_stride: 0,
            dataset: DatasetChoice::Bars,
            dataset_size: 2048,
            bar_width: 1,
            spectrum_p: 1.0,
            spectrum_scale: 1.0,
            data_path: String::new(),
            psd_samples: String::new(),
            psd_reference: String::new(),
            psd_lowest_k: 10,
            out_dir: "out".into(),
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => bail!("expected true or false, got {other:?}"),
    }
}

fn parse_hidden(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .with_context(|| format!("bad hidden layer size {p:?}"))
        })
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value, got {raw:?}", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .with_context(|| format!("line {}: key {key:?}", lineno + 1))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let num = || -> Result<f64> { v.parse::<f64>().with_context(|| format!("bad number {v:?}")) };
        let int = || -> Result<usize> { v.parse::<usize>().with_context(|| format!("bad integer {v:?}")) };
        match key {
            "n" => self.n = int()?,
            "channels" => self.channels = int()?,
            "sigma_b_max" => self.sigma_b_max = num()?,
            "d_min" => self.d_min = num()?,
            "logsnr_min" => self.logsnr_min = num()?,
            "logsnr_max" => self.logsnr_max = num()?,
            "blur_shape" => self.blur_shape = BlurShape::parse(v)?,
            "t_steps" => self.t_steps = int()?,
            "lr" => self.lr = num()?,
            "batch_size" => self.batch_size = int()?,
            "train_steps" => self.train_steps = int()?,
            "seed" => self.seed = v.parse::<u64>().with_context(|| format!("bad seed {v:?}"))?,
            "ema_decay" => self.ema_decay = num()?,
            "predict" => self.predict = PredictTarget::parse(v)?,
            "hidden" => self.hidden = parse_hidden(v)?,
            "time_embed_freqs" => self.time_embed_freqs = int()?,
            "sample_batch" => self.sample_batch = int()?,
            "last_step" => self.last_step = LastStepMode::parse(v)?,
            "clip_xhat" => self.clip_xhat = parse_bool(v)?,
            "record_trajectory" => self.record_trajectory = parse_bool(v)?,
            "trajectory_stride" => self.trajectory_stride = int()?,
            "dataset" => self.dataset = DatasetChoice::parse(v)?,
            "dataset_size" => self.dataset_size = int()?,
            "bar_width" => self.bar_width = int()?,
            "spectrum_p" => self.spectrum_p = num()?,
            "spectrum_scale" => self.spectrum_scale = num()?,
            "data_path" => self.data_path = v.to_string(),
            "psd_samples" => self.psd_samples = v.to_string(),
            "psd_reference" => self.psd_reference = v.to_string(),
            "psd_lowest_k" => self.psd_lowest_k = int()?,
            "out_dir" => self.out_dir = v.to_string(),
            other => bail!("unknown key {other:?}"),
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let hidden = self
            .hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "# blurring diffusion run configuration\n\
             \n\
             # process\n\
             n = {}\n\
             channels = {}\n\
             sigma_b_max = {}\n\
             d_min = {}\n\
             logsnr_min = {}\n\
             logsnr_max = {}\n\
             blur_shape = {}\n\
             t_steps = {}\n\
             \n\
             # training\n\
             lr = {}\n\
             batch_size = {}\n\
             train_steps = {}\n\
             seed = {}\n\
             ema_decay = {}\n\
             predict = {}\n\
             hidden = {}\n\
             time_embed_freqs = {}\n\
             \n\
             # sampling\n\
             sample_batch = {}\n\
             last_step = {}\n\
             clip_xhat = {}\n\
             record_trajectory = {}\n\
             trajectory_stride = {}\n\
             \n\
             # dataset\n\
             dataset = {}\n\
             dataset_size = {}\n\
             bar_width = {}\n\
             spectrum_p = {}\n\
             spectrum_scale = {}\n\
             data_path = {}\n\
             \n\
             # spectral analysis\n\
             psd_samples = {}\n\
             psd_reference = {}\n\
             psd_lowest_k = {}\n\
             \n\
             # output\n\
             out_dir = {}\n",
            self.n,
            self.channels,
            self.sigma_b_max,
            self.d_min,
            self.logsnr_min,
            self.logsnr_max,
            self.blur_shape.as_str(),
            self.t_steps,
            self.lr,
            self.batch_size,
            self.train_steps,
            self.seed,
            self.ema_decay,
            self.predict.as_str(),
            hidden,
            self.time_embed_freqs,
            self.sample_batch,
            self.last_step.as_str(),
            self.clip_xhat,
            self.record_trajectory,
            self.trajectory_stride,
            self.dataset.as_str(),
            self.dataset_size,
            self.bar_width,
            self.spectrum_p,
            self.spectrum_scale,
            self.data_path,
            self.psd_samples,
            self.psd_reference,
            self.psd_lowest_k,
            self.out_dir,
        )
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            sigma_b_max: self.sigma_b_max,
            d_min: self.d_min,
            logsnr_min: self.logsnr_min,
            logsnr_max: self.logsnr_max,
            blur_shape: self.blur_shape,
            t_steps: self.t_steps,
            n: self.n,
        }
    }

    pub fn stride(&self) -> usize {
        if self.trajectory_stride == 0 {
            self.t_steps
        } else {
            self.trajectory_stride
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_default_and_mutated() {
        let def = RunConfig::default();
        assert_eq!(RunConfig::parse(&def.serialize()).unwrap(), def);

        let mut cfg = RunConfig::default();
        cfg.n = 16;
        cfg.sigma_b_max = 1.5;
        cfg.blur_shape = BlurShape::Sin;
        cfg.predict = PredictTarget::X;
        cfg.hidden = vec![64];
        cfg.clip_xhat = true;
        cfg.last_step = LastStepMode::Mean;
        cfg.dataset = DatasetChoice::GaussianSpectrum;
        cfg.data_path = "some/where.bdt".into();
        cfg.lr = 3.5e-4;
        assert_eq!(RunConfig::parse(&cfg.serialize()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::parse("no_such_key = 3\n").is_err());
        assert!(RunConfig::parse("n = not_a_number\n").is_err());
        assert!(RunConfig::parse("blur_shape = cubic\n").is_err());
        assert!(RunConfig::parse("just a line\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse("# comment\n\n  n = 4   # trailing\n").unwrap();
        assert_eq!(cfg.n, 4);
    }
}

//! Binary file formats. All multi-byte values are little-endian.
//!
//! # Images (PGM/PPM)
//!
//! 1-channel tensors are written as binary PGM (`P5`), 3-channel as binary
//! PPM (`P6`), maxval 255. Pixels map through
//! `round(clamp((v + 1) / 2, 0, 1) * 255)` with round-half-up, so
//! `-1 -> 0`, `0 -> 128`, `+1 -> 255`.
//!
//! # Raw tensors (`BDT0`)
//!
//! ```text
//! magic    4 bytes   "BDT0"
//! ndim     u32
//! dims     u32 * ndim
//! payload  f32 * product(dims), row-major
//! ```
//!
//! Image batches use dims `[count, channels, n, n]`.
//!
//! # Checkpoints (`BDFM`)
//!
//! ```text
//! magic             4 bytes   "BDFM"
//! version           u16       (currently 1)
//! n                 u32
//! channels          u32
//! time_embed_freqs  u32
//! predict           u8        (0 = eps, 1 = x)
//! activation        u8        (0 = silu)
//! hidden_count      u32
//! hidden sizes      u32 * hidden_count
//! param_count       u64
//! params            f32 * param_count
//! adam step         u64
//! adam m            f32 * param_count
//! adam v            f32 * param_count
//! ema params        f32 * param_count
//! ```

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array3;

use crate::denoiser::{MlpArch, PredictTarget};
use crate::error::{Error, Result};
use crate::train::AdamState;
use crate::transform::ImageTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"BDT0";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BDFM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// `round(clamp((v + 1) / 2, 0, 1) * 255)`, round-half-up.
pub fn quantize_pixel(v: f64) -> u8 {
    (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_bytes(img: &ImageTensor) -> Result<Vec<u8>> {
    let n = img.n();
    let mut body = Vec::with_capacity(img.channels() * n * n);
    match img.channels() {
        1 => {
            for v in img.array().iter() {
                body.push(quantize_pixel(*v));
            }
        }
        3 => {
            for r in 0..n {
                for c in 0..n {
                    for ch in 0..3 {
                        body.push(quantize_pixel(img.array()[[ch, r, c]]));
                    }
                }
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "image output needs 1 or 3 channels, got {other}"
            )))
        }
    }
    Ok(body)
}

/// Write one image as binary PGM (1 channel) or PPM (3 channels).
pub fn write_image(path: &Path, img: &ImageTensor) -> Result<()> {
    let body = image_bytes(img)?;
    let tag = if img.channels() == 1 { "P5" } else { "P6" };
    let mut f = fs::File::create(path)?;
    write!(f, "{tag}\n{} {}\n255\n", img.n(), img.n())?;
    f.write_all(&body)?;
    Ok(())
}

/// Read a binary PGM (`P5`) or PPM (`P6`) written by [`write_image`],
/// mapping bytes back through `v = byte / 255 * 2 - 1`.
pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let buf = fs::read(path)?;
    let err = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    let channels = match buf.get(0..2) {
        Some(b"P5") => 1usize,
        Some(b"P6") => 3usize,
        _ => return Err(err("expected binary PGM (P5) or PPM (P6)")),
    };
    // Header: magic, width, height, maxval, single whitespace, then pixels.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if buf.get(pos) == Some(&b'#') {
            return Err(err("comments in headers are not supported"));
        }
        let start = pos;
        while pos < buf.len() && buf[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed header"))?;
    }
    pos += 1; // single whitespace after maxval
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(err("only maxval 255 is supported"));
    }
    if w != h {
        return Err(err("image is not square"));
    }
    let body = buf
        .get(pos..pos + w * h * channels)
        .ok_or_else(|| err("truncated pixel data"))?;
    let mut data = Array3::zeros((channels, h, w));
    for r in 0..h {
        for c in 0..w {
            for ch in 0..channels {
                let byte = body[(r * w + c) * channels + ch];
                data[[ch, r, c]] = byte as f64 / 255.0 * 2.0 - 1.0;
            }
        }
    }
    ImageTensor::new(data)
}

/// Tile a batch row-major into a square-ish grid image. Cells without a
/// sample stay at byte 0. 16 samples tile 4x4.
pub fn write_image_grid(path: &Path, images: &[ImageTensor]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let n = first.n();
    let channels = first.channels();
    if !images
        .iter()
        .all(|i| i.n() == n && i.channels() == channels)
    {
        return Err(Error::dim("uniform batch", "mixed image shapes"));
    }
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    let (w, h) = (cols * n, rows * n);
    let depth = if channels == 1 { 1 } else { 3 };
    let mut body = vec![0u8; w * h * depth];
    for (idx, img) in images.iter().enumerate() {
        let bytes = image_bytes(img)?;
        let (r0, c0) = (idx / cols * n, idx % cols * n);
        for r in 0..n {
            let dst = ((r0 + r) * w + c0) * depth;
            let src = r * n * depth;
            body[dst..dst + n * depth].copy_from_slice(&bytes[src..src + n * depth]);
        }
    }
    let tag = if channels == 1 { "P5" } else { "P6" };
    let mut f = fs::File::create(path)?;
    write!(f, "{tag}\n{w} {h}\n255\n")?;
    f.write_all(&body)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.buf.len() {
            return Err(Error::Format(format!("{}: truncated file", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn push_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Write a raw tensor (`BDT0`).
pub fn write_raw_tensor(path: &Path, dims: &[u32], data: &[f64]) -> Result<()> {
    let expect: usize = dims.iter().map(|&d| d as usize).product();
    if expect != data.len() {
        return Err(Error::dim(
            format!("{expect} values for dims {dims:?}"),
            format!("{}", data.len()),
        ));
    }
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    push_f32(&mut out, data);
    fs::write(path, out)?;
    Ok(())
}

/// Read a raw tensor (`BDT0`), returning `(dims, data)`.
pub fn read_raw_tensor(path: &Path) -> Result<(Vec<u32>, Vec<f64>)> {
    let buf = fs::read(path)?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        what: "raw tensor",
    };
    if cur.take(4)? != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic (expected BDT0)",
            path.display()
        )));
    }
    let ndim = cur.u32()? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Format(format!("implausible ndim {ndim}")));
    }
    let dims: Vec<u32> = (0..ndim).map(|_| cur.u32()).collect::<Result<_>>()?;
    let count: usize = dims.iter().map(|&d| d as usize).product();
    let data = cur.f32_vec(count)?;
    cur.done()?;
    Ok((dims, data))
}

/// Write an image batch with dims `[count, channels, n, n]`.
pub fn write_image_batch(path: &Path, images: &[ImageTensor]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (c, n) = (first.channels(), first.n());
    let mut data = Vec::with_capacity(images.len() * c * n * n);
    for img in images {
        if img.channels() != c || img.n() != n {
            return Err(Error::dim("uniform batch", "mixed shapes"));
        }
        data.extend(img.array().iter().copied());
    }
    write_raw_tensor(
        path,
        &[images.len() as u32, c as u32, n as u32, n as u32],
        &data,
    )
}

/// Read an image batch written by [`write_image_batch`].
pub fn read_image_batch(path: &Path) -> Result<Vec<ImageTensor>> {
    let (dims, data) = read_raw_tensor(path)?;
    if dims.len() != 4 || dims[2] != dims[3] {
        return Err(Error::Format(format!(
            "{}: expected dims [count, channels, n, n], got {dims:?}",
            path.display()
        )));
    }
    let (count, c, n) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let stride = c * n * n;
    (0..count)
        .map(|i| {
            let chunk = data[i * stride..(i + 1) * stride].to_vec();
            let arr = Array3::from_shape_vec((c, n, n), chunk)
                .map_err(|e| Error::Format(e.to_string()))?;
            ImageTensor::new(arr)
        })
        .collect()
}

/// A trained model on disk: parameters, optimizer state, and the EMA copy.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: MlpArch,
    pub params: Vec<f64>,
    pub opt: AdamState,
    pub ema_params: Vec<f64>,
}

/// Write a checkpoint (`BDFM`).
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let count = ckpt.params.len();
    if ckpt.arch.param_count() != count
        || ckpt.opt.m.len() != count
        || ckpt.opt.v.len() != count
        || ckpt.ema_params.len() != count
    {
        return Err(Error::dim(
            format!("{} parameters everywhere", ckpt.arch.param_count()),
            "inconsistent checkpoint vectors",
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.arch.n as u32).to_le_bytes());
    out.extend_from_slice(&(ckpt.arch.channels as u32).to_le_bytes());
    out.extend_from_slice(&(ckpt.arch.time_embed_freqs as u32).to_le_bytes());
    out.push(match ckpt.arch.predict {
        PredictTarget::Eps => 0,
        PredictTarget::X => 1,
    });
    out.push(0); // activation: silu
    out.extend_from_slice(&(ckpt.arch.hidden.len() as u32).to_le_bytes());
    for &h in &ckpt.arch.hidden {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(count as u64).to_le_bytes());
    push_f32(&mut out, &ckpt.params);
    out.extend_from_slice(&ckpt.opt.step.to_le_bytes());
    push_f32(&mut out, &ckpt.opt.m);
    push_f32(&mut out, &ckpt.opt.v);
    push_f32(&mut out, &ckpt.ema_params);
    fs::write(path, out)?;
    Ok(())
}

/// Read a checkpoint (`BDFM`).
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        what: "checkpoint",
    };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic (expected BDFM)",
            path.display()
        )));
    }
    let version = cur.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let n = cur.u32()? as usize;
    let channels = cur.u32()? as usize;
    let time_embed_freqs = cur.u32()? as usize;
    let predict = match cur.u8()? {
        0 => PredictTarget::Eps,
        1 => PredictTarget::X,
        other => return Err(Error::Format(format!("unknown predict code {other}"))),
    };
    let activation = cur.u8()?;
    if activation != 0 {
        return Err(Error::Format(format!(
            "unknown activation code {activation}"
        )));
    }
    let hidden_count = cur.u32()? as usize;
    if hidden_count > 64 {
        return Err(Error::Format(format!(
            "implausible hidden layer count {hidden_count}"
        )));
    }
    let hidden: Vec<usize> = (0..hidden_count)
        .map(|_| cur.u32().map(|v| v as usize))
        .collect::<Result<_>>()?;
    let arch = MlpArch {
        n,
        channels,
        hidden,
        time_embed_freqs,
        predict,
    };
    let count = cur.u64()? as usize;
    if count != arch.param_count() {
        return Err(Error::Format(format!(
            "parameter count {count} does not match architecture ({} expected)",
            arch.param_count()
        )));
    }
    let params = cur.f32_vec(count)?;
    let step = cur.u64()?;
    let m = cur.f32_vec(count)?;
    let v = cur.f32_vec(count)?;
    let ema_params = cur.f32_vec(count)?;
    cur.done()?;
    Ok(Checkpoint {
        arch,
        params,
        opt: AdamState { step, m, v },
        ema_params,
    })
}

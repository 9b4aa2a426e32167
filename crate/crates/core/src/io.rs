//! Binary containers for fields, stacks and parameters, plus PNG/CSV export.
//!
//! All integers are little-endian `u32`; every file starts with a four-byte
//! magic and a format version.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{FpmError, Result};
use crate::field::{ComplexGrid, RealGrid};
use crate::forward::IntensityStack;
use crate::geometry::{IlluminationPattern, OpticalConfig};
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != magic {
            return Err(FpmError::format(format!(
                "{what}: expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Reader { buf, pos: 4, what };
        let v = r.u32()?;
        if v != FORMAT_VERSION {
            return Err(FpmError::format(format!("{what}: unsupported version {v}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(FpmError::format(format!("{}: truncated file", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dims(&mut self) -> Result<(usize, usize)> {
        let h = self.u32()? as usize;
        let w = self.u32()? as usize;
        // Reject sizes the remaining bytes cannot possibly hold.
        if h.checked_mul(w).is_none_or(|n| n > self.buf.len()) {
            return Err(FpmError::format(format!("{}: implausible size {h}x{w}", self.what)));
        }
        Ok((h, w))
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(FpmError::format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut b = magic.to_vec();
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    b
}

fn put_u32(b: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| FpmError::format(format!("{v} does not fit in u32")))?;
    b.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_complex<T: Real>(g: &ComplexGrid<T>) -> Result<Vec<u8>> {
    let mut b = header(b"FPMC");
    put_u32(&mut b, g.height())?;
    put_u32(&mut b, g.width())?;
    for z in g.data() {
        b.extend_from_slice(&z.re.as_f64().to_le_bytes());
        b.extend_from_slice(&z.im.as_f64().to_le_bytes());
    }
    Ok(b)
}

pub fn decode_complex<T: Real>(buf: &[u8]) -> Result<ComplexGrid<T>> {
    let mut r = Reader::new(buf, b"FPMC", "complex image")?;
    let (h, w) = r.dims()?;
    let mut data = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let re = r.f64()?;
        let im = r.f64()?;
        data.push(Complex::new(T::lit(re), T::lit(im)));
    }
    r.finish()?;
    ComplexGrid::from_vec(h, w, data)
}

pub fn encode_real<T: Real>(g: &RealGrid<T>) -> Result<Vec<u8>> {
    let mut b = header(b"FPMR");
    put_u32(&mut b, g.height())?;
    put_u32(&mut b, g.width())?;
    for v in g.data() {
        b.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    Ok(b)
}

pub fn decode_real<T: Real>(buf: &[u8]) -> Result<RealGrid<T>> {
    let mut r = Reader::new(buf, b"FPMR", "real image")?;
    let (h, w) = r.dims()?;
    let data = (0..h * w).map(|_| r.f64().map(T::lit)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    RealGrid::from_vec(h, w, data)
}

/// Trailing metadata of a stack file.
#[derive(Serialize, Deserialize)]
struct StackMeta {
    cfg: OpticalConfig,
    patterns: Vec<IlluminationPattern>,
}

/// Images are stored as `f32`; reading returns the rounded values.
pub fn encode_stack<T: Real>(s: &IntensityStack<T>) -> Result<Vec<u8>> {
    let m = s.cfg.lr_size();
    let mut b = header(b"FPMS");
    put_u32(&mut b, s.len())?;
    put_u32(&mut b, m)?;
    put_u32(&mut b, m)?;
    for img in &s.images {
        for v in img.data() {
            b.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let meta = StackMeta {
        cfg: s.cfg,
        patterns: s.patterns.clone(),
    };
    b.extend_from_slice(serde_json::to_string(&meta).expect("stack metadata serializes").as_bytes());
    Ok(b)
}

pub fn decode_stack<T: Real>(buf: &[u8]) -> Result<IntensityStack<T>> {
    let mut r = Reader::new(buf, b"FPMS", "intensity stack")?;
    let count = r.u32()? as usize;
    let (h, w) = r.dims()?;
    let mut images = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let data = (0..h * w).map(|_| r.f32().map(|v| T::lit(v as f64))).collect::<Result<Vec<_>>>()?;
        images.push(RealGrid::from_vec(h, w, data)?);
    }
    let text = std::str::from_utf8(r.rest()).map_err(|_| FpmError::format("intensity stack: metadata is not UTF-8"))?;
    let meta: StackMeta =
        serde_json::from_str(text).map_err(|e| FpmError::format(format!("intensity stack metadata: {e}")))?;
    IntensityStack::new(images, meta.patterns, meta.cfg)
}

pub fn encode_params<T: Real>(p: &ParamSet<T>) -> Result<Vec<u8>> {
    let mut b = header(b"FPMW");
    put_u32(&mut b, p.len())?;
    for (name, t) in p.iter() {
        put_u32(&mut b, name.len())?;
        b.extend_from_slice(name.as_bytes());
        put_u32(&mut b, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut b, d)?;
        }
        for v in t.data() {
            b.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(b)
}

pub fn decode_params<T: Real>(buf: &[u8]) -> Result<ParamSet<T>> {
    let mut r = Reader::new(buf, b"FPMW", "parameter file")?;
    let count = r.u32()?;
    let mut out = ParamSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FpmError::format("parameter file: tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n
            .filter(|&n| n <= buf.len())
            .ok_or_else(|| FpmError::format(format!("parameter file: tensor `{name}` has implausible shape {shape:?}")))?;
        let data = (0..n).map(|_| r.f64().map(T::lit)).collect::<Result<Vec<_>>>()?;
        out.insert(name, Tensor::new(shape, data)?);
    }
    r.finish()?;
    Ok(out)
}

pub fn write_complex<T: Real>(path: &Path, g: &ComplexGrid<T>) -> Result<()> {
    write_file(path, &encode_complex(g)?)
}

pub fn read_complex<T: Real>(path: &Path) -> Result<ComplexGrid<T>> {
    decode_complex(&fs::read(path)?)
}

pub fn write_real<T: Real>(path: &Path, g: &RealGrid<T>) -> Result<()> {
    write_file(path, &encode_real(g)?)
}

pub fn read_real<T: Real>(path: &Path) -> Result<RealGrid<T>> {
    decode_real(&fs::read(path)?)
}

pub fn write_stack<T: Real>(path: &Path, s: &IntensityStack<T>) -> Result<()> {
    write_file(path, &encode_stack(s)?)
}

pub fn read_stack<T: Real>(path: &Path) -> Result<IntensityStack<T>> {
    decode_stack(&fs::read(path)?)
}

pub fn write_params<T: Real>(path: &Path, p: &ParamSet<T>) -> Result<()> {
    write_file(path, &encode_params(p)?)
}

pub fn read_params<T: Real>(path: &Path) -> Result<ParamSet<T>> {
    decode_params(&fs::read(path)?)
}

/// 8-bit grayscale PNG, linearly mapping `[lo, hi]` onto `[0, 255]`.
pub fn write_png<T: Real>(path: &Path, g: &RealGrid<T>, lo: f64, hi: f64) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> = g
        .data()
        .iter()
        .map(|v| (((v.as_f64() - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(g.width() as u32, g.height() as u32, pixels)
        .ok_or_else(|| FpmError::shape("png buffer size"))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| FpmError::format(format!("png {}: {e}", path.display())))
}

/// PNG scaled by the grid's own range.
pub fn write_png_auto<T: Real>(path: &Path, g: &RealGrid<T>) -> Result<()> {
    let (lo, hi) = g.min_max();
    write_png(path, g, lo.as_f64(), hi.as_f64())
}

/// Reads an 8-bit grayscale PNG as values in `[0, 1]`.
pub fn read_png<T: Real>(path: &Path) -> Result<RealGrid<T>> {
    let img = image::open(path)
        .map_err(|e| FpmError::format(format!("png {}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    RealGrid::from_vec(
        h as usize,
        w as usize,
        img.into_raw().into_iter().map(|p| T::lit(p as f64 / 255.0)).collect(),
    )
}

/// `iter,loss` CSV.
pub fn loss_csv(trace: &[f64]) -> String {
    let mut s = String::from("iter,loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{l:.12e}\n"));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

//! Full-reference image quality: PSNR and single-scale SSIM.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::RealGrid;
use crate::scalar::Real;

/// Reported PSNR when the error is negligible.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse<T: Real>(x: &RealGrid<T>, y: &RealGrid<T>) -> Result<f64> {
    x.check_same_dims(y.dims(), "mse")?;
    let total: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(total / x.len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`] once `MSE < peak²·1e-10`.
pub fn psnr<T: Real>(x: &RealGrid<T>, y: &RealGrid<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(crate::FpmError::domain(format!("psnr peak must be positive, got {peak}")));
    }
    let e = mse(x, y)?;
    if e < peak * peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / e).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over every 8×8 window position with peak 1.
pub fn ssim<T: Real>(x: &RealGrid<T>, y: &RealGrid<T>) -> Result<f64> {
    ssim_with_peak(x, y, 1.0)
}

/// Mean SSIM over every window position; the window shrinks to the image
/// when the image is smaller than 8×8.
pub fn ssim_with_peak<T: Real>(x: &RealGrid<T>, y: &RealGrid<T>, peak: f64) -> Result<f64> {
    x.check_same_dims(y.dims(), "ssim")?;
    if !(peak > 0.0) {
        return Err(crate::FpmError::domain(format!("ssim peak must be positive, got {peak}")));
    }
    let (h, w) = x.dims();
    let win = SSIM_WINDOW.min(h).min(w);
    if win == 0 {
        return Err(crate::FpmError::shape("ssim of an empty image"));
    }
    let a: Vec<f64> = x.data().iter().map(|v| v.as_f64()).collect();
    let b: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
    let sa = Integral::new(h, w, |k| a[k]);
    let sb = Integral::new(h, w, |k| b[k]);
    let saa = Integral::new(h, w, |k| a[k] * a[k]);
    let sbb = Integral::new(h, w, |k| b[k] * b[k]);
    let sab = Integral::new(h, w, |k| a[k] * b[k]);
    let n = (win * win) as f64;
    let (c1, c2) = ((SSIM_K1 * peak).powi(2), (SSIM_K2 * peak).powi(2));
    let mut total = 0.0;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let ma = sa.window(i, j, win) / n;
            let mb = sb.window(i, j, win) / n;
            let va = saa.window(i, j, win) / n - ma * ma;
            let vb = sbb.window(i, j, win) / n - mb * mb;
            let cov = sab.window(i, j, win) / n - ma * mb;
            total += ssim_term(ma, mb, va, vb, cov, c1, c2);
        }
    }
    Ok(total / ((h - win + 1) * (w - win + 1)) as f64)
}

pub(crate) fn ssim_term(ma: f64, mb: f64, va: f64, vb: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Summed-area table with a zero border row and column.
struct Integral {
    w: usize,
    s: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Self {
        let mut s = vec![0.0; (h + 1) * (w + 1)];
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += f(i * w + j);
                s[(i + 1) * (w + 1) + j + 1] = s[i * (w + 1) + j + 1] + row;
            }
        }
        Integral { w, s }
    }

    fn window(&self, i: usize, j: usize, k: usize) -> f64 {
        let at = |r: usize, c: usize| self.s[r * (self.w + 1) + c];
        at(i + k, j + k) - at(i, j + k) - at(i + k, j) + at(i, j)
    }
}

/// One named row of a metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image rows plus their mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, psnr_db: f64, ssim: f64) {
        self.rows.push(MetricRow {
            name: name.into(),
            psnr_db,
            ssim,
        });
    }

    pub fn evaluate<T: Real>(&mut self, name: impl Into<String>, reference: &RealGrid<T>, test: &RealGrid<T>) -> Result<()> {
        let p = psnr(reference, test, 1.0)?;
        let s = ssim(reference, test)?;
        self.push(name, p, s);
        Ok(())
    }

    /// Mean PSNR and SSIM over all rows.
    pub fn aggregate(&self) -> (f64, f64) {
        if self.rows.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = self.rows.len() as f64;
        (
            self.rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            self.rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        )
    }

    /// `name,psnr_db,ssim` CSV with fixed formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,psnr_db,ssim\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6},{:.6}\n", r.name, r.psnr_db, r.ssim));
        }
        s
    }
}

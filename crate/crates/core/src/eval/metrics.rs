use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::raster::Image;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Masked,
    Ink,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub region: Region,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn new(
        name: impl Into<String>,
        value: f64,
        region: Region,
        sample_count: usize,
    ) -> Result<Self> {
        if !value.is_finite() || sample_count == 0 {
            return Err(Error::Invalid(format!(
                "metric value {value} over {sample_count} samples"
            )));
        }
        Ok(MetricReport {
            name: name.into(),
            value,
            region,
            sample_count,
        })
    }

    /// Mean of per-sample values.
    pub fn mean(name: impl Into<String>, values: &[f64], region: Region) -> Result<Self> {
        let v = values.iter().sum::<f64>() / values.len().max(1) as f64;
        Self::new(name, v, region, values.len())
    }
}

/// Mean absolute difference in `f64`, over all channels of the pixels selected
/// by `region` (one flag per pixel), or over the whole image. An empty region
/// gives 0.
pub fn l1_metric(a: &Image, b: &Image, region: Option<&[bool]>) -> Result<f64> {
    a.check_same_shape(b, "l1_metric")?;
    let ch = a.channels();
    let (mut sum, mut n) = (0.0f64, 0usize);
    match region {
        None => {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                sum += (x as f64 - y as f64).abs();
            }
            n = a.data().len();
        }
        Some(m) => {
            if m.len() != a.width() * a.height() {
                return Err(dim_err(format!(
                    "region has {} flags for a {}x{} image",
                    m.len(),
                    a.width(),
                    a.height()
                )));
            }
            for (i, _) in m.iter().enumerate().filter(|(_, &on)| on) {
                for c in 0..ch {
                    sum += (a.data()[i * ch + c] as f64 - b.data()[i * ch + c] as f64).abs();
                }
                n += ch;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Structural similarity of two single-channel images with values in `[0,1]`.
///
/// Uniform 7×7 windows at every position fully inside the image, sample
/// (N−1) variances, `C1=(0.01)²`, `C2=(0.03)²`, and the mean over windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    if a.channels() != 1 {
        return Err(dim_err("ssim expects grayscale images"));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Invalid(format!(
            "{w}x{h} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = np / (np - 1.0);
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0f64;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let p = ad[y * w + x] as f64;
                    let q = bd[y * w + x] as f64;
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / np, sb / np);
            let va = cov_norm * (saa / np - ma * ma);
            let vb = cov_norm * (sbb / np - mb * mb);
            let cab = cov_norm * (sab / np - ma * mb);
            let num = (2.0 * ma * mb + c1) * (2.0 * cab + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
        }
    }
    Ok(total / ((w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1)) as f64)
}

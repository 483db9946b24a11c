//! Float rasters in `[0,1]`, rectangles, resampling and PNG I/O.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Axis-aligned integer rectangle; `x..x+w` by `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w <= 0 || self.h <= 0
    }

    pub fn area(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            self.w as i64 * self.h as i64
        }
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn contains_point(&self, x: i32, y: i32) -> bool {
        x >= self.x && y >= self.y && x < self.right() && y < self.bottom()
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        Rect::new(x0, y0, (x1 - x0).max(0), (y1 - y0).max(0))
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn bounds_of(width: usize, height: usize) -> Rect {
        Rect::new(0, 0, width as i32, height as i32)
    }

    /// Parses `x,y,w,h`.
    pub fn parse(s: &str) -> Result<Rect> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Invalid(format!("expected x,y,w,h, got {s:?}")));
        }
        let mut v = [0i32; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::Invalid(format!("bad rectangle component {p:?} in {s:?}")))?;
        }
        let r = Rect::new(v[0], v[1], v[2], v[3]);
        if r.w <= 0 || r.h <= 0 {
            return Err(Error::Invalid(format!("rectangle {s:?} is empty")));
        }
        Ok(r)
    }
}

/// Interleaved (HWC) raster of `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, color: &[f32]) -> Self {
        let channels = color.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(color);
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(dim_err(format!(
                "{}x{}x{} raster needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Image::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(dim_err(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn bounds(&self) -> Rect {
        Rect::bounds_of(self.width, self.height)
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rec. 601 luma for RGB, identity for single-channel rasters.
    pub fn luminance(&self) -> Image {
        match self.channels {
            1 => self.clone(),
            _ => {
                let data = self
                    .data
                    .chunks_exact(self.channels)
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect();
                Image {
                    width: self.width,
                    height: self.height,
                    channels: 1,
                    data,
                }
            }
        }
    }

    pub fn channel(&self, c: usize) -> Image {
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn crop(&self, rect: Rect) -> Result<Image> {
        if rect.is_empty() || !self.bounds().contains_rect(&rect) {
            return Err(Error::Invalid(format!(
                "crop {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut out = Image::new(rect.w as usize, rect.h as usize, self.channels);
        for y in 0..rect.h as usize {
            let src = ((rect.y as usize + y) * self.width + rect.x as usize) * self.channels;
            let dst = y * rect.w as usize * self.channels;
            let n = rect.w as usize * self.channels;
            out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
        }
        Ok(out)
    }

    /// Writes `patch` with its top-left corner at `(x, y)`; must fit.
    pub fn paste(&mut self, patch: &Image, x: usize, y: usize) -> Result<()> {
        if patch.channels != self.channels
            || x + patch.width > self.width
            || y + patch.height > self.height
        {
            return Err(dim_err("paste does not fit"));
        }
        for py in 0..patch.height {
            let dst = ((y + py) * self.width + x) * self.channels;
            let src = py * patch.width * patch.channels;
            let n = patch.width * patch.channels;
            self.data[dst..dst + n].copy_from_slice(&patch.data[src..src + n]);
        }
        Ok(())
    }

    /// Bilinear sample at continuous pixel-center coordinates, clamped to the edge.
    #[inline]
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f32 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let a = self.get(x0, y0, c);
        let b = self.get(x1, y0, c);
        let d = self.get(x0, y1, c);
        let e = self.get(x1, y1, c);
        let top = a + (b - a) * fx;
        let bot = d + (e - d) * fx;
        top + (bot - top) * fy
    }

    /// Resamples the source window `[x0,x1)×[y0,y1)` (continuous, may extend past
    /// the edges) onto a `width×height` grid.
    pub fn resample_window(
        &self,
        window: (f64, f64, f64, f64),
        width: usize,
        height: usize,
    ) -> Image {
        let (x0, y0, x1, y1) = window;
        let sx = (x1 - x0) / width as f64;
        let sy = (y1 - y0) / height as f64;
        let mut out = Image::new(width, height, self.channels);
        for oy in 0..height {
            let y = y0 + (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..width {
                let x = x0 + (ox as f64 + 0.5) * sx - 0.5;
                for c in 0..self.channels {
                    let v = self.sample(x, y, c);
                    out.data[(oy * width + ox) * self.channels + c] = v;
                }
            }
        }
        out
    }

    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        self.resample_window(
            (0.0, 0.0, self.width as f64, self.height as f64),
            width,
            height,
        )
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Tight bounding box of pixels on channel 0 strictly above `threshold`.
    pub fn ink_bbox(&self, threshold: f32) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y, 0) > threshold {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX)
            .then(|| Rect::new(x0 as i32, y0 as i32, (x1 - x0) as i32, (y1 - y0) as i32))
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let out = match img.color().channel_count() {
            1 | 2 => {
                let g = img.to_luma8();
                let (w, h) = g.dimensions();
                let data = g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
                Image::from_vec(w as usize, h as usize, 1, data)?
            }
            _ => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                let data = rgb
                    .into_raw()
                    .into_iter()
                    .map(|v| v as f32 / 255.0)
                    .collect();
                Image::from_vec(w as usize, h as usize, 3, data)?
            }
        };
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// Writes an 8-bit grayscale (1 channel) or RGB (3 channel) PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(dim_err(format!("cannot write a {c}-channel PNG"))),
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        image::save_buffer(
            path,
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Otsu's threshold over a 256-bin histogram of `values` in `[0,1]`.
///
/// Returns the upper edge of the lower class; pixels `> t` form the upper class.
pub fn otsu_threshold(values: &[f32]) -> f32 {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[quantize(v) as usize] += 1;
    }
    let total = values.len() as f64;
    if total == 0.0 {
        return 0.5;
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best = (f64::MIN, 127usize);
    for (t, &h) in hist.iter().enumerate() {
        w0 += h as f64;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    (best.1 as f32 + 0.5) / 255.0
}

/// Intersection over union of two binary masks; two empty masks give 1.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "mask_iou: length mismatch");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &q) in a.iter().zip(b) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn binarize(img: &Image, threshold: f32) -> Vec<bool> {
    img.data().iter().map(|&v| v > threshold).collect()
}

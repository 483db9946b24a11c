//! Background restoration with a context encoder: encoder → fully-connected
//! bottleneck → decoder, trained with masked L1 plus a hole-only adversary.

mod model;
mod train;

pub use model::{
    adversarial_losses, encode, inpaint, inpaint_region, Discriminator, Generator, GeneratorLoss,
    InpaintBatch, InpaintConfig, InpaintModel,
};
pub use train::{train_inpainter, train_inpainter_with, InpaintTrainConfig, LossReport};

use crate::error::{dim_err, Error, Result};
use crate::eval::l1_metric;
use crate::raster::{Image, Rect};

/// Binary mask, `true` = erase/inpaint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl RegionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        RegionMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        RegionMask {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    /// Mask of `rect` clipped to the image.
    pub fn from_rect(width: usize, height: usize, rect: Rect) -> Self {
        let mut m = Self::empty(width, height);
        let r = rect.intersect(&Rect::bounds_of(width, height));
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                m.data[y as usize * width + x as usize] = true;
            }
        }
        m
    }

    /// Centered `side×side` square.
    pub fn centered(width: usize, height: usize, side: usize) -> Self {
        Self::from_rect(width, height, centered_rect(width, height, side))
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(dim_err(format!(
                "{} mask values for {width}x{height}",
                data.len()
            )));
        }
        Ok(RegionMask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Bounding box of the set pixels.
    pub fn bbox(&self) -> Option<Rect> {
        let img = Image::from_fn(self.width, self.height, 1, |x, y, _| {
            self.get(x, y) as u8 as f32
        });
        img.ink_bbox(0.5)
    }

    fn check_fits(&self, img: &Image) -> Result<()> {
        if img.width() != self.width || img.height() != self.height {
            return Err(dim_err(format!(
                "{}x{} mask for a {}x{} image",
                self.width,
                self.height,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

pub(crate) fn centered_rect(width: usize, height: usize, side: usize) -> Rect {
    Rect::new(
        (width as i32 - side as i32) / 2,
        (height as i32 - side as i32) / 2,
        side as i32,
        side as i32,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    /// Input with masked pixels replaced by `fill`.
    pub image: Image,
    pub mask: RegionMask,
    pub fill: f32,
    pub original: Option<Image>,
}

/// Sets masked pixels (every channel) to `fill`, copying the rest verbatim.
pub fn mask_region(image: &Image, mask: &RegionMask, fill: f32) -> Result<MaskedImage> {
    mask.check_fits(image)?;
    if !(0.0..=1.0).contains(&fill) {
        return Err(Error::Invalid(format!("fill value {fill} outside [0,1]")));
    }
    let mut out = image.clone();
    let ch = image.channels();
    for (i, _) in mask.data.iter().enumerate().filter(|(_, &m)| m) {
        out.data_mut()[i * ch..(i + 1) * ch].fill(fill);
    }
    Ok(MaskedImage {
        image: out,
        mask: mask.clone(),
        fill,
        original: Some(image.clone()),
    })
}

/// Mean absolute difference over masked pixels (all channels); 0 for an empty mask.
pub fn recon_loss(pred: &Image, target: &Image, mask: &RegionMask) -> Result<f64> {
    mask.check_fits(pred)?;
    l1_metric(pred, target, Some(&mask.data))
}

/// Mean per-channel intensity over a set of images.
pub fn dataset_mean(images: &[Image]) -> f32 {
    let (mut s, mut n) = (0.0f64, 0usize);
    for img in images {
        s += img.data().iter().map(|&v| v as f64).sum::<f64>();
        n += img.data().len();
    }
    if n == 0 {
        0.5
    } else {
        (s / n as f64) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| ((x + 2 * y + c) % 17) as f32 / 16.0)
    }

    #[test]
    fn empty_mask_is_identity() {
        let img = ramp(10, 8);
        let m = mask_region(&img, &RegionMask::empty(10, 8), 0.3).unwrap();
        assert_eq!(m.image, img);
    }

    #[test]
    fn full_mask_is_constant() {
        let m = mask_region(&ramp(10, 8), &RegionMask::full(10, 8), 0.3).unwrap();
        assert!(m.image.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn centered_square_counts() {
        let img = ramp(128, 128);
        let mask = RegionMask::centered(128, 128, 64);
        assert_eq!(mask.count(), 4096);
        let m = mask_region(&img, &mask, 0.25).unwrap();
        let n = m
            .image
            .data()
            .chunks(3)
            .filter(|p| p.iter().all(|&v| v == 0.25))
            .count();
        // No pixel of the ramp is (0.25, 0.25, 0.25), so every match is a fill.
        assert_eq!(n, 4096);
    }

    #[test]
    fn shape_mismatch_and_bad_fill() {
        assert!(mask_region(&ramp(4, 4), &RegionMask::empty(4, 5), 0.0).is_err());
        assert!(mask_region(&ramp(4, 4), &RegionMask::empty(4, 4), 1.5).is_err());
    }

    #[test]
    fn recon_loss_closed_forms() {
        let t = ramp(8, 8).map(|v| v * 0.5);
        let mask = RegionMask::centered(8, 8, 4);
        assert_eq!(recon_loss(&t, &t, &mask).unwrap(), 0.0);
        assert_eq!(
            recon_loss(&t, &t.map(|v| v + 0.1), &RegionMask::empty(8, 8)).unwrap(),
            0.0
        );
        let shifted = t.map(|v| v + 0.2);
        assert!((recon_loss(&shifted, &t, &mask).unwrap() - 0.2).abs() < 1e-6);
    }
}

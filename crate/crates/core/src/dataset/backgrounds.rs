//! Procedural RGB backgrounds for synthetic scenes and inpainting data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Flat,
    Gradient,
    Stripes,
    Checker,
    Noise,
}

impl BackgroundKind {
    pub const ALL: [BackgroundKind; 5] = [
        BackgroundKind::Flat,
        BackgroundKind::Gradient,
        BackgroundKind::Stripes,
        BackgroundKind::Checker,
        BackgroundKind::Noise,
    ];
}

fn color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [
        rng.gen_range(0.1..0.9),
        rng.gen_range(0.1..0.9),
        rng.gen_range(0.1..0.9),
    ]
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// A `width×height` RGB background of the given kind, fully determined by `seed`.
pub fn procedural_background(
    kind: BackgroundKind,
    width: usize,
    height: usize,
    seed: u64,
) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = color(&mut rng);
    let b = color(&mut rng);
    let theta: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let period: f32 = rng.gen_range(12.0..40.0);
    let diag = ((width * width + height * height) as f32).sqrt().max(1.0);
    match kind {
        BackgroundKind::Flat => Image::filled(width, height, &a),
        BackgroundKind::Gradient => Image::from_fn(width, height, 3, |x, y, c| {
            let t = 0.5
                + ((x as f32 - width as f32 / 2.0) * dx + (y as f32 - height as f32 / 2.0) * dy)
                    / diag;
            mix(a, b, t.clamp(0.0, 1.0))[c]
        }),
        BackgroundKind::Stripes => Image::from_fn(width, height, 3, |x, y, c| {
            let p = (x as f32 * dx + y as f32 * dy) / period;
            let t = 0.5 + 0.5 * (p * std::f32::consts::TAU).sin();
            mix(a, b, t)[c]
        }),
        BackgroundKind::Checker => {
            let cell = period.round() as usize;
            Image::from_fn(width, height, 3, |x, y, c| {
                if (x / cell + y / cell) % 2 == 0 {
                    a[c]
                } else {
                    b[c]
                }
            })
        }
        BackgroundKind::Noise => {
            // Bilinearly interpolated value noise on a coarse lattice.
            let step = period.round() as usize;
            let gw = width / step + 2;
            let gh = height / step + 2;
            let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.gen::<f32>()).collect();
            Image::from_fn(width, height, 3, |x, y, c| {
                let fx = x as f32 / step as f32;
                let fy = y as f32 / step as f32;
                let (ix, iy) = (fx as usize, fy as usize);
                let (tx, ty) = (fx - ix as f32, fy - iy as f32);
                let at = |i: usize, j: usize| lattice[j * gw + i];
                let top = at(ix, iy) + (at(ix + 1, iy) - at(ix, iy)) * tx;
                let bot = at(ix, iy + 1) + (at(ix + 1, iy + 1) - at(ix, iy + 1)) * tx;
                mix(a, b, top + (bot - top) * ty)[c]
            })
        }
    }
}

/// `n` backgrounds cycling through every kind, seeded from `seed`.
pub fn training_backgrounds(n: usize, size: usize, seed: u64) -> Vec<Image> {
    (0..n)
        .map(|i| {
            let kind = BackgroundKind::ALL[i % BackgroundKind::ALL.len()];
            procedural_background(
                kind,
                size,
                size,
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        for kind in BackgroundKind::ALL {
            let a = procedural_background(kind, 40, 30, 9);
            assert_eq!(a, procedural_background(kind, 40, 30, 9));
            assert_eq!((a.width(), a.height(), a.channels()), (40, 30, 3));
            assert!(a.in_unit_range());
        }
    }

    #[test]
    fn flat_is_constant() {
        let a = procedural_background(BackgroundKind::Flat, 8, 8, 1);
        assert!(a.data().chunks(3).all(|p| p == a.pixel(0, 0)));
    }
}

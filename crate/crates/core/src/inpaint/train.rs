use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Checkpoint;
use crate::nn::{Adam, AdamConfig, FlushDenormals, ParamSet};
use crate::raster::Image;

use super::model::{InpaintConfig, InpaintModel};
use super::{dataset_mean, mask_region, RegionMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub seed: u64,
}

impl Default for InpaintTrainConfig {
    fn default() -> Self {
        InpaintTrainConfig {
            steps: 2000,
            batch_size: 8,
            adam: AdamConfig::default(),
            lambda_rec: 0.999,
            lambda_adv: 0.001,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub recon: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub total: f64,
}

/// Trains generator and discriminator on `input_size` crops with the model's
/// centered hole erased. Both gradients of a step come from the same
/// parameters: the discriminator sees the generator's fakes as constants, and
/// the generator's adversarial term uses the not-yet-updated discriminator.
/// The fill value is the dataset mean; crops of another size are resized.
///
/// A non-finite loss or parameter aborts with [`Error::Diverged`] carrying the
/// parameters from before the failing step.
pub fn train_inpainter(
    images: &[Image],
    model_cfg: &InpaintConfig,
    cfg: &InpaintTrainConfig,
) -> Result<(Checkpoint, Vec<LossReport>)> {
    train_inpainter_with(images, model_cfg, cfg, |_| {})
}

/// [`train_inpainter`] with a per-step callback (progress reporting).
pub fn train_inpainter_with(
    images: &[Image],
    model_cfg: &InpaintConfig,
    cfg: &InpaintTrainConfig,
    mut on_step: impl FnMut(&LossReport),
) -> Result<(Checkpoint, Vec<LossReport>)> {
    let _ftz = FlushDenormals::new();
    if images.is_empty() {
        return Err(Error::EmptyDataset("no inpainting training images".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch_size must be positive".into()));
    }
    model_cfg.validate()?;
    let s = model_cfg.input_size;
    let fill = dataset_mean(images);
    let mask = RegionMask::from_rect(s, s, model_cfg.hole_rect());
    let items = images
        .iter()
        .map(|img| {
            if img.width() != s || img.height() != s {
                return Ok(mask_region(&img.resize(s, s), &mask, fill)?);
            }
            mask_region(img, &mask, fill)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = InpaintModel::<f32>::new(model_cfg, fill, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1a9a);
    let mut opt_g = Adam::new(cfg.adam);
    let mut opt_d = Adam::new(cfg.adam);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(cfg.steps);
    let info = |m: &InpaintModel<f32>, step: usize| {
        m.to_checkpoint(
            cfg.seed,
            step,
            &[
                ("hole_size", model_cfg.hole_size.into()),
                (
                    "train",
                    serde_json::to_value(cfg).expect("train config serializes"),
                ),
            ],
        )
    };

    for step in 0..cfg.steps {
        let mut picks = Vec::with_capacity(cfg.batch_size);
        while picks.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..items.len()).collect();
                order.shuffle(&mut rng);
            }
            picks.push(items[order.pop().unwrap()].clone());
        }
        let before = model.clone();
        let batch = model.batch(&picks)?;

        let g = model.generator_loss(&batch, cfg.lambda_rec, cfg.lambda_adv)?;
        let real = batch
            .target
            .as_ref()
            .expect("training items carry ground truth");
        let (adv_d, d_grads) = model.discriminator_loss(real, &g.fake);
        let report = LossReport {
            step,
            recon: g.recon,
            adv_g: g.adv_g,
            adv_d,
            total: g.total,
        };
        let grads_ok = g.grads.iter().chain(&d_grads).all(|t| t.all_finite());
        if ![report.recon, report.adv_g, report.adv_d, report.total]
            .iter()
            .all(|v| v.is_finite())
            || !grads_ok
        {
            return Err(Error::Diverged {
                step,
                last_good: Box::new(info(&before, step)),
            });
        }
        opt_d.step(model.discriminator.params_mut(), &d_grads);
        opt_g.step(model.generator.params_mut(), &g.grads);
        if !model.to_flat().iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                step,
                last_good: Box::new(info(&before, step)),
            });
        }
        on_step(&report);
        history.push(report);
    }
    Ok((info(&model, cfg.steps), history))
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charset::NUM_CHARS;
use crate::dataset::FontGlyphs;
use crate::error::{dim_err, Error, Result};
use crate::eval::Checkpoint;
use crate::nn::{
    bce_with_logits, masked_l1, masked_l1_grad, softplus, Adam, AdamConfig, FlushDenormals,
    ParamSet, Real, Tape, Tensor,
};

use super::net::{GlyphNet, GlyphNetConfig};
use super::orna::{
    color_targets, exemplar_field, GlyphDiscriminator, OrnaNet, OrnaNetConfig, ORNA_INPUTS,
};
use super::sampler::{bounded, HiddenSlotDraw, HiddenSlotSampler, ObservedRange};
use super::{assemble_input, GlyphStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub observed: ObservedRange,
    /// Weight of the logit cross-entropy added to the mask L1.
    pub shape_bce: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 3000,
            batch_size: 8,
            adam: AdamConfig::default(),
            observed: ObservedRange::default(),
            shape_bce: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphLossReport {
    pub step: usize,
    /// Mean L1 between predicted and true masks over all 62 slots.
    pub shape: f64,
    /// Mean cross-entropy of the mask logits.
    pub shape_bce: f64,
    /// `shape + shape_bce_weight·shape_bce`, the minimized objective.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub steps: usize,
    /// Fonts per step.
    pub batch_size: usize,
    /// Unobserved slots per font that the color network and the
    /// discriminator train on.
    pub color_slots: usize,
    pub adam: AdamConfig,
    pub observed: ObservedRange,
    pub lambda_shape: f64,
    /// Weight of the logit cross-entropy inside the shape term.
    pub shape_bce: f64,
    pub lambda_color: f64,
    pub lambda_adv: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 500,
            batch_size: 4,
            color_slots: 8,
            adam: AdamConfig::default(),
            observed: ObservedRange::default(),
            lambda_shape: 1.0,
            shape_bce: 1.0,
            lambda_color: 1.0,
            lambda_adv: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub step: usize,
    pub shape: f64,
    pub shape_bce: f64,
    /// Mean color L1 over the true ink pixels of the color slots.
    pub color: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    /// `λ_shape·(shape + shape_bce_weight·shape_bce) + λ_color·color + λ_adv·adv_g`.
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub glyph: Checkpoint,
    pub orna: Checkpoint,
    pub history: Vec<FinetuneReport>,
}

/// Full 62-slot stacks of one font, kept as network-ready planes.
pub(crate) struct FontPlanes<T> {
    stack: GlyphStack,
    ink: Vec<T>,
}

fn font_planes<T: Real>(
    fonts: &[FontGlyphs],
    size: usize,
    color: bool,
) -> Result<Vec<FontPlanes<T>>> {
    if fonts.is_empty() {
        return Err(Error::EmptyDataset("no training fonts".into()));
    }
    fonts
        .iter()
        .map(|f| {
            if f.glyphs.len() != NUM_CHARS {
                return Err(Error::Invalid(format!(
                    "font {} has {} glyphs",
                    f.font_id,
                    f.glyphs.len()
                )));
            }
            let stack = assemble_input(&f.glyphs)?;
            if stack.size != size {
                return Err(dim_err(format!(
                    "font {} has {}px glyphs, network uses {size}px",
                    f.font_id, stack.size
                )));
            }
            if color && !stack.is_color() {
                return Err(Error::Invalid(format!(
                    "font {} has no color glyphs",
                    f.font_id
                )));
            }
            let ink = stack
                .ink_planes()
                .into_iter()
                .map(|v| T::of(v as f64))
                .collect();
            Ok(FontPlanes { stack, ink })
        })
        .collect()
}

/// Inputs (observed slots only) and full targets for a batch of draws.
fn shape_batch<T: Real>(
    net: &GlyphNet<T>,
    fonts: &[FontPlanes<T>],
    draws: &[HiddenSlotDraw],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = net.config.glyph_size;
    let stacks: Vec<GlyphStack> = draws
        .iter()
        .map(|d| fonts[d.font].stack.restrict(&d.observed))
        .collect();
    let refs: Vec<&GlyphStack> = stacks.iter().collect();
    let x = net.input(&refs)?;
    let mut target = Vec::with_capacity(draws.len() * NUM_CHARS * g * g);
    for d in draws {
        target.extend_from_slice(&fonts[d.font].ink);
    }
    Ok((x, Tensor::from_vec(&[draws.len(), NUM_CHARS, g, g], target)))
}

pub(crate) struct ShapeLoss<T> {
    pub tape: Tape<T>,
    /// Mean L1 between predicted and true masks.
    pub l1: f64,
    /// Mean cross-entropy of the mask logits against the true masks.
    pub bce: f64,
    /// Gradient of `l1` with respect to the masks.
    pub d_l1: Vec<T>,
}

pub(crate) fn shape_loss<T: Real>(
    net: &GlyphNet<T>,
    x: &Tensor<T>,
    target: &Tensor<T>,
) -> ShapeLoss<T> {
    let tape = net.net.forward(x);
    let out = tape.output();
    let l1 = masked_l1(out.data(), target.data(), None).f64();
    let d_l1 = masked_l1_grad(out.data(), target.data(), None);
    let logits = tape.activation(net.net.layers.len() - 1);
    let mut bce = T::zero();
    for (&z, &t) in logits.data().iter().zip(target.data()) {
        bce += softplus(z) - t * z;
    }
    let bce = bce.f64() / target.data().len().max(1) as f64;
    ShapeLoss {
        tape,
        l1,
        bce,
        d_l1,
    }
}

/// Backpropagates `d_masks` (a gradient on the sigmoid masks) plus
/// `bce_weight` times the cross-entropy gradient. The cross-entropy part is
/// applied to the logits directly, `(p − t)/n`, so saturated pixels keep a
/// gradient that the L1 term loses through the sigmoid.
pub(crate) fn shape_backward<T: Real>(
    net: &GlyphNet<T>,
    tape: &Tape<T>,
    target: &Tensor<T>,
    d_masks: &[T],
    bce_weight: T,
    grads: &mut [Tensor<T>],
) {
    let p = tape.output();
    let w = bce_weight / T::of(p.data().len().max(1) as f64);
    let dz: Vec<T> = p
        .data()
        .iter()
        .zip(target.data())
        .zip(d_masks)
        .map(|((&p, &t), &d)| d * p * (T::one() - p) + w * (p - t))
        .collect();
    let last = net.net.layers.len() - 1;
    debug_assert!(matches!(net.net.layers[last], crate::nn::Layer::Sigmoid));
    net.net
        .backward_from(tape, last, &Tensor::from_vec(p.shape(), dz), grads);
}

/// Trains the shape network with randomly hidden slots: each batch item is a
/// font with `k ∈ observed` of its slots visible (see the sampler module for
/// the exact draw order) and the loss is the mean L1 over all 62 slots.
pub fn pretrain_glyphnet(
    fonts: &[FontGlyphs],
    net_cfg: &GlyphNetConfig,
    cfg: &PretrainConfig,
) -> Result<(Checkpoint, Vec<GlyphLossReport>)> {
    pretrain_glyphnet_with(GlyphNet::new(net_cfg, cfg.seed)?, fonts, cfg, |_| {})
}

/// [`pretrain_glyphnet`] from given initial parameters, with a per-step callback.
pub fn pretrain_glyphnet_with(
    mut net: GlyphNet<f32>,
    fonts: &[FontGlyphs],
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(&GlyphLossReport),
) -> Result<(Checkpoint, Vec<GlyphLossReport>)> {
    let _ftz = FlushDenormals::new();
    let planes = font_planes::<f32>(fonts, net.config.glyph_size, false)?;
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch_size must be positive".into()));
    }
    let mut sampler = HiddenSlotSampler::new(cfg.seed, planes.len(), cfg.observed)?;
    let mut opt = Adam::new(cfg.adam);
    let mut history = Vec::with_capacity(cfg.steps);
    let train_info = serde_json::to_value(cfg).expect("config serializes");
    let ck = |n: &GlyphNet<f32>, step| {
        n.to_checkpoint(
            cfg.seed,
            step,
            cfg.observed,
            &[("train", train_info.clone())],
        )
    };
    for step in 0..cfg.steps {
        let draws = sampler.draw_batch(cfg.batch_size);
        let (x, target) = shape_batch(&net, &planes, &draws)?;
        let sl = shape_loss(&net, &x, &target);
        let mut grads = net.zero_grads();
        shape_backward(
            &net,
            &sl.tape,
            &target,
            &sl.d_l1,
            cfg.shape_bce as f32,
            &mut grads,
        );
        let loss = sl.l1 + cfg.shape_bce * sl.bce;
        if !loss.is_finite() || !grads.iter().all(|g| g.all_finite()) {
            return Err(Error::Diverged {
                step,
                last_good: Box::new(ck(&net, step)),
            });
        }
        let before = net.clone();
        opt.step(net.params_mut(), &grads);
        if !net.params().iter().all(|t| t.all_finite()) {
            return Err(Error::Diverged {
                step,
                last_good: Box::new(ck(&before, step)),
            });
        }
        let r = GlyphLossReport {
            step,
            shape: sl.l1,
            shape_bce: sl.bce,
            total: loss,
        };
        on_step(&r);
        history.push(r);
    }
    Ok((ck(&net, cfg.steps), history))
}

/// One joint step's losses and gradients (shape network, color network,
/// discriminator), all evaluated at the same parameters.
#[derive(Debug, Clone)]
pub struct JointGrads<T> {
    pub report: FinetuneReport,
    pub glyph: Vec<Tensor<T>>,
    pub orna: Vec<Tensor<T>>,
    pub disc: Vec<Tensor<T>>,
}

/// Slots the color stages train on: `n` unobserved slots per item drawn by a
/// partial Fisher–Yates over the unobserved slots in index order.
fn color_slots(rng: &mut ChaCha8Rng, draws: &[HiddenSlotDraw], n: usize) -> Vec<Vec<usize>> {
    draws
        .iter()
        .map(|d| {
            let mut free: Vec<usize> = (0..NUM_CHARS).filter(|i| !d.observed.contains(i)).collect();
            let n = n.min(free.len());
            for i in 0..n {
                let j = i + bounded(rng, free.len() - i);
                free.swap(i, j);
            }
            free.truncate(n);
            free
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn joint_step<T: Real>(
    glyph: &GlyphNet<T>,
    orna: &OrnaNet<T>,
    disc: &GlyphDiscriminator<T>,
    fonts: &[FontPlanes<T>],
    draws: &[HiddenSlotDraw],
    slots: &[Vec<usize>],
    cfg: &FinetuneConfig,
    step: usize,
) -> Result<JointGrads<T>> {
    let g = glyph.config.glyph_size;
    let plane = g * g;
    let t = orna.config.threshold;
    let (x, target) = shape_batch(glyph, fonts, draws)?;
    let ShapeLoss {
        tape,
        l1: shape,
        bce: shape_bce,
        d_l1,
    } = shape_loss(glyph, &x, &target);
    let masks = tape.output();
    let ls = T::of(cfg.lambda_shape);
    let mut d_masks: Vec<T> = d_l1.into_iter().map(|v| v * ls).collect();

    // Color network inputs: predicted masks of the chosen slots under each
    // font's exemplar field.
    let mut x_orna = Vec::new();
    let mut inks = Vec::new();
    let mut cols = Vec::new();
    let mut index = Vec::new();
    for (b, (d, s)) in draws.iter().zip(slots).enumerate() {
        let font = &fonts[d.font].stack;
        let field = exemplar_field(&font.restrict(&d.observed), t)?;
        let item = masks.item(b);
        let ms: Vec<&[T]> = s
            .iter()
            .map(|&k| &item[k * plane..(k + 1) * plane])
            .collect();
        x_orna.push(orna.input(&ms, &field)?);
        let rgb = font.rgb.as_ref().expect("color fonts");
        for &k in s {
            inks.push(&font.ink[k]);
            cols.push(&rgb[k]);
            index.push((b, k));
        }
    }
    let n_slots = index.len();
    let x_orna = concat_batch(&x_orna, &[n_slots, ORNA_INPUTS, g, g]);
    let (c_target, c_weight) = color_targets::<T>(&inks, &cols, t);
    let o_tape = orna.net.forward(&x_orna);
    let colors = o_tape.output();
    let color = masked_l1(colors.data(), c_target.data(), Some(c_weight.data())).f64();
    let lc = T::of(cfg.lambda_color);
    let mut d_colors: Vec<T> =
        masked_l1_grad(colors.data(), c_target.data(), Some(c_weight.data()))
            .into_iter()
            .map(|v| v * lc)
            .collect();

    // Premultiplied fakes m·c for the discriminator.
    let mask_of = |i: usize, p: usize| {
        let (b, k) = index[i];
        masks.item(b)[k * plane + p]
    };
    let mut fake = Vec::with_capacity(n_slots * 3 * plane);
    for i in 0..n_slots {
        let c = colors.item(i);
        for ch in 0..3 {
            for p in 0..plane {
                fake.push(mask_of(i, p) * c[ch * plane + p]);
            }
        }
    }
    let fake = Tensor::from_vec(&[n_slots, 3, g, g], fake);
    let mut real = Vec::with_capacity(n_slots * 3 * plane);
    for im in &cols {
        for ch in 0..3 {
            real.extend(
                im.data()
                    .iter()
                    .skip(ch)
                    .step_by(3)
                    .map(|&v| T::of(v as f64)),
            );
        }
    }
    let real = Tensor::from_vec(&[n_slots, 3, g, g], real);

    let d_tape = disc.net.forward(&fake);
    let (adv_g, dl) = bce_with_logits(d_tape.output().data(), true);
    let adv_g = adv_g.f64();
    let mut d_mask_adv = vec![T::zero(); n_slots * plane];
    if cfg.lambda_adv != 0.0 {
        let mut scratch = disc.zero_grads();
        let la = T::of(cfg.lambda_adv);
        let dl = Tensor::from_vec(
            d_tape.output().shape(),
            dl.into_iter().map(|v| v * la).collect(),
        );
        let d_fake = disc.net.backward(&d_tape, &dl, &mut scratch);
        for i in 0..n_slots {
            let c = colors.item(i);
            let df = d_fake.item(i);
            for ch in 0..3 {
                for p in 0..plane {
                    let j = ch * plane + p;
                    d_colors[i * 3 * plane + j] += df[j] * mask_of(i, p);
                    d_mask_adv[i * plane + p] += df[j] * c[j];
                }
            }
        }
    }

    let mut orna_grads = orna.zero_grads();
    let d_x = orna.net.backward(
        &o_tape,
        &Tensor::from_vec(colors.shape(), d_colors),
        &mut orna_grads,
    );
    for (i, &(b, k)) in index.iter().enumerate() {
        let dx_mask = &d_x.item(i)[..plane];
        let dst = &mut d_masks[(b * NUM_CHARS + k) * plane..(b * NUM_CHARS + k + 1) * plane];
        for p in 0..plane {
            dst[p] += dx_mask[p] + d_mask_adv[i * plane + p];
        }
    }
    let mut glyph_grads = glyph.zero_grads();
    shape_backward(
        glyph,
        &tape,
        &target,
        &d_masks,
        T::of(cfg.lambda_shape * cfg.shape_bce),
        &mut glyph_grads,
    );

    // Discriminator on detached fakes.
    let mut disc_grads = disc.zero_grads();
    let half = T::of(0.5);
    let mut adv_d = 0.0;
    for (xd, label) in [(&real, true), (&fake, false)] {
        let tp = disc.net.forward(xd);
        let (l, dl) = bce_with_logits(tp.output().data(), label);
        adv_d += 0.5 * l.f64();
        let dl = Tensor::from_vec(
            tp.output().shape(),
            dl.into_iter().map(|v| v * half).collect(),
        );
        disc.net.backward(&tp, &dl, &mut disc_grads);
    }

    let total = cfg.lambda_shape * (shape + cfg.shape_bce * shape_bce)
        + cfg.lambda_color * color
        + cfg.lambda_adv * adv_g;
    Ok(JointGrads {
        report: FinetuneReport {
            step,
            shape,
            shape_bce,
            color,
            adv_g,
            adv_d,
            total,
        },
        glyph: glyph_grads,
        orna: orna_grads,
        disc: disc_grads,
    })
}

fn concat_batch<T: Real>(parts: &[Tensor<T>], shape: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(shape.iter().product());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(shape, data)
}

/// Joint fine-tuning of a pretrained shape network with the color network on
/// colorized fonts. Shape loss on all predicted masks, color L1 on the true
/// ink pixels of `color_slots` unobserved slots per font, and a
/// non-saturating adversarial term on their premultiplied renderings.
///
/// Observed slots come from the same sampler stream as pretraining; the
/// color slots from a second stream seeded with `seed + 1`. The color network
/// is initialized from `seed + 2`, the discriminator from `seed + 3`.
/// Losses and gradients of the first fine-tuning step at the given
/// parameters, drawing fonts, observed slots and color slots exactly as
/// [`finetune_pipeline`] does at step 0. Nothing is updated; this is the
/// objective that gradient checks verify.
pub fn finetune_step_grads<T: Real>(
    glyph: &GlyphNet<T>,
    orna: &OrnaNet<T>,
    disc: &GlyphDiscriminator<T>,
    fonts: &[FontGlyphs],
    cfg: &FinetuneConfig,
) -> Result<JointGrads<T>> {
    let planes = font_planes::<T>(fonts, glyph.config.glyph_size, true)?;
    let mut sampler = HiddenSlotSampler::new(cfg.seed, planes.len(), cfg.observed)?;
    let mut slot_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let draws = sampler.draw_batch(cfg.batch_size);
    let slots = color_slots(&mut slot_rng, &draws, cfg.color_slots);
    joint_step(glyph, orna, disc, &planes, &draws, &slots, cfg, 0)
}

pub fn finetune_pipeline(
    glyph_ckpt: &Checkpoint,
    fonts: &[FontGlyphs],
    orna_cfg: &OrnaNetConfig,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutput> {
    finetune_pipeline_with(glyph_ckpt, fonts, orna_cfg, cfg, |_| {})
}

pub fn finetune_pipeline_with(
    glyph_ckpt: &Checkpoint,
    fonts: &[FontGlyphs],
    orna_cfg: &OrnaNetConfig,
    cfg: &FinetuneConfig,
    mut on_step: impl FnMut(&FinetuneReport),
) -> Result<FinetuneOutput> {
    let _ftz = FlushDenormals::new();
    let mut glyph = GlyphNet::<f32>::from_checkpoint(glyph_ckpt)?;
    if orna_cfg.glyph_size != glyph.config.glyph_size {
        return Err(Error::Incompatible(format!(
            "{}px glyph network with a {}px ornament network",
            glyph.config.glyph_size, orna_cfg.glyph_size
        )));
    }
    if cfg.batch_size == 0 || cfg.color_slots == 0 {
        return Err(Error::Invalid(
            "batch_size and color_slots must be positive".into(),
        ));
    }
    let planes = font_planes::<f32>(fonts, glyph.config.glyph_size, true)?;
    let mut orna = OrnaNet::<f32>::new(orna_cfg, cfg.seed.wrapping_add(2))?;
    let mut disc = GlyphDiscriminator::<f32>::new(orna_cfg, cfg.seed.wrapping_add(3))?;
    let mut sampler = HiddenSlotSampler::new(cfg.seed, planes.len(), cfg.observed)?;
    let mut slot_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let (mut opt_g, mut opt_o, mut opt_d) = (
        Adam::new(cfg.adam),
        Adam::new(cfg.adam),
        Adam::new(cfg.adam),
    );
    let train_info = serde_json::to_value(cfg).expect("config serializes");
    let pretrain_id = glyph_ckpt.id();
    let cks = |g: &GlyphNet<f32>, o: &OrnaNet<f32>, step: usize| {
        let extra = [
            ("train", train_info.clone()),
            ("initialized_from", pretrain_id.clone().into()),
        ];
        let gck = g.to_checkpoint(cfg.seed, step, cfg.observed, &extra);
        let ock = o.to_checkpoint(
            cfg.seed,
            step,
            &[("train", train_info.clone()), ("glyphnet", gck.id().into())],
        );
        (gck, ock)
    };
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let draws = sampler.draw_batch(cfg.batch_size);
        let slots = color_slots(&mut slot_rng, &draws, cfg.color_slots);
        let jg = joint_step(&glyph, &orna, &disc, &planes, &draws, &slots, cfg, step)?;
        let r = jg.report;
        let finite = [r.shape, r.color, r.adv_g, r.adv_d, r.total]
            .iter()
            .all(|v| v.is_finite())
            && jg
                .glyph
                .iter()
                .chain(&jg.orna)
                .chain(&jg.disc)
                .all(|t| t.all_finite());
        if !finite {
            return Err(Error::Diverged {
                step,
                last_good: Box::new(cks(&glyph, &orna, step).0),
            });
        }
        let (gb, ob) = (glyph.clone(), orna.clone());
        opt_d.step(disc.params_mut(), &jg.disc);
        opt_o.step(orna.params_mut(), &jg.orna);
        opt_g.step(glyph.params_mut(), &jg.glyph);
        if !(glyph
            .to_flat()
            .iter()
            .chain(&orna.to_flat())
            .all(|v| v.is_finite()))
        {
            return Err(Error::Diverged {
                step,
                last_good: Box::new(cks(&gb, &ob, step).0),
            });
        }
        on_step(&r);
        history.push(r);
    }
    let (glyph_ck, orna_ck) = cks(&glyph, &orna, cfg.steps);
    Ok(FinetuneOutput {
        glyph: glyph_ck,
        orna: orna_ck,
        history,
    })
}

/// Micro-model loss closures for gradient checks.
#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::raster::Image;

    pub fn fonts(size: usize, n: usize) -> Vec<FontGlyphs> {
        use crate::dataset::GlyphImage;
        (0..n)
            .map(|f| FontGlyphs {
                font_id: format!("f{f}"),
                glyphs: crate::CharSet
                    .chars()
                    .enumerate()
                    .map(|(i, ch)| {
                        let ink = Image::from_fn(size, size, 1, |x, y, _| {
                            let v = ((x * 7 + y * 3 + i * 5 + f * 11) % 13) as f32 / 12.0;
                            if v > 0.3 {
                                v
                            } else {
                                0.0
                            }
                        });
                        let col = [0.2 + 0.1 * f as f32, 0.5, 0.9 - 0.01 * i as f32];
                        let rgb =
                            Image::from_fn(size, size, 3, |x, y, c| ink.get(x, y, 0) * col[c]);
                        GlyphImage {
                            ch,
                            font_id: format!("f{f}"),
                            ink,
                            rgb: Some(rgb),
                        }
                    })
                    .collect(),
                gradient: None,
            })
            .collect()
    }

    pub fn planes(fonts: &[FontGlyphs], size: usize) -> Vec<FontPlanes<f64>> {
        font_planes(fonts, size, true).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::eval::{gradcheck_params, GradcheckConfig};
    use crate::nn::flatten_grads;

    fn setup() -> (
        GlyphNet<f64>,
        OrnaNet<f64>,
        GlyphDiscriminator<f64>,
        Vec<FontPlanes<f64>>,
        Vec<HiddenSlotDraw>,
        Vec<Vec<usize>>,
    ) {
        let fonts = fonts(8, 2);
        let planes = planes(&fonts, 8);
        let g = GlyphNet::new(&GlyphNetConfig::micro(), 1).unwrap();
        let o = OrnaNet::new(&OrnaNetConfig::micro(), 2).unwrap();
        let d = GlyphDiscriminator::new(&OrnaNetConfig::micro(), 3).unwrap();
        let mut s = HiddenSlotSampler::new(4, 2, ObservedRange { min: 2, max: 4 }).unwrap();
        let draws = s.draw_batch(2);
        let slots = color_slots(&mut ChaCha8Rng::seed_from_u64(5), &draws, 2);
        (g, o, d, planes, draws, slots)
    }

    fn cfg(ls: f64, lc: f64, la: f64) -> FinetuneConfig {
        FinetuneConfig {
            lambda_shape: ls,
            lambda_color: lc,
            lambda_adv: la,
            ..Default::default()
        }
    }

    #[test]
    fn micro_models_fit_the_budget() {
        let (g, o, d, ..) = setup();
        for n in [g.num_params(), o.num_params(), d.num_params()] {
            assert!(n <= 5000, "{n}");
        }
    }

    #[test]
    fn shape_network_gradients() {
        let (g, o, d, planes, draws, slots) = setup();
        for c in [
            cfg(1.0, 0.0, 0.0),
            cfg(0.0, 1.0, 0.0),
            cfg(0.0, 0.0, 1.0),
            cfg(1.0, 1.0, 0.01),
        ] {
            let mut gm = g.clone();
            let r = gradcheck_params(
                &mut gm,
                |gm| {
                    let jg = joint_step(gm, &o, &d, &planes, &draws, &slots, &c, 0).unwrap();
                    (jg.report.total, flatten_grads(&jg.glyph))
                },
                &GradcheckConfig::default(),
            )
            .unwrap();
            assert!(r.passed, "{c:?}: {r:?}");
        }
    }

    #[test]
    fn color_network_gradients() {
        let (g, o, d, planes, draws, slots) = setup();
        for c in [cfg(0.0, 1.0, 0.0), cfg(0.0, 0.0, 1.0), cfg(1.0, 1.0, 0.01)] {
            let mut om = o.clone();
            let r = gradcheck_params(
                &mut om,
                |om| {
                    let jg = joint_step(&g, om, &d, &planes, &draws, &slots, &c, 0).unwrap();
                    (jg.report.total, flatten_grads(&jg.orna))
                },
                &GradcheckConfig::default(),
            )
            .unwrap();
            assert!(r.passed, "{c:?}: {r:?}");
        }
    }

    #[test]
    fn discriminator_gradients() {
        let (g, o, d, planes, draws, slots) = setup();
        let c = cfg(1.0, 1.0, 0.01);
        let mut dm = d.clone();
        let r = gradcheck_params(
            &mut dm,
            |dm| {
                let jg = joint_step(&g, &o, dm, &planes, &draws, &slots, &c, 0).unwrap();
                (jg.report.adv_d, flatten_grads(&jg.disc))
            },
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn total_is_weighted_sum() {
        let (g, o, d, planes, draws, slots) = setup();
        let c = cfg(0.7, 0.2, 0.1);
        let r = joint_step(&g, &o, &d, &planes, &draws, &slots, &c, 0)
            .unwrap()
            .report;
        assert_eq!(
            r.total,
            0.7 * (r.shape + c.shape_bce * r.shape_bce) + 0.2 * r.color + 0.1 * r.adv_g
        );
    }

    #[test]
    fn pretrain_history_and_errors() {
        let fonts = fonts(8, 2);
        let pc = PretrainConfig {
            steps: 5,
            batch_size: 2,
            ..Default::default()
        };
        let (ck, hist) = pretrain_glyphnet(&fonts, &GlyphNetConfig::micro(), &pc).unwrap();
        assert_eq!(hist.len(), 5);
        assert_eq!(ck.meta.step, 5);
        assert!(pretrain_glyphnet(&[], &GlyphNetConfig::micro(), &pc).is_err());
        assert!(pretrain_glyphnet(&fonts, &GlyphNetConfig::default(), &pc).is_err());
    }

    #[test]
    fn shape_only_finetune_reproduces_pretraining() {
        let fonts = fonts(8, 3);
        let net_cfg = GlyphNetConfig::micro();
        let seed = 9;
        let pc = PretrainConfig {
            steps: 6,
            batch_size: 2,
            seed,
            ..Default::default()
        };
        let (_, pre) = pretrain_glyphnet(&fonts, &net_cfg, &pc).unwrap();
        let init =
            GlyphNet::<f32>::new(&net_cfg, seed)
                .unwrap()
                .to_checkpoint(seed, 0, pc.observed, &[]);
        let fc = FinetuneConfig {
            steps: 6,
            batch_size: 2,
            lambda_color: 0.0,
            lambda_adv: 0.0,
            seed,
            ..Default::default()
        };
        let out = finetune_pipeline(&init, &fonts, &OrnaNetConfig::micro(), &fc).unwrap();
        let a: Vec<[f64; 3]> = pre
            .iter()
            .map(|r| [r.shape, r.shape_bce, r.total])
            .collect();
        let b: Vec<[f64; 3]> = out
            .history
            .iter()
            .map(|r| [r.shape, r.shape_bce, r.total])
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn finetune_rejects_wrong_checkpoint() {
        let fonts = fonts(8, 1);
        let o = OrnaNet::<f32>::new(&OrnaNetConfig::micro(), 0).unwrap();
        let ck = o.to_checkpoint(0, 0, &[]);
        assert!(finetune_pipeline(
            &ck,
            &fonts,
            &OrnaNetConfig::micro(),
            &FinetuneConfig::default()
        )
        .is_err());
    }
}

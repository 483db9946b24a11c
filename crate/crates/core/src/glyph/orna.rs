use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charset::NUM_CHARS;
use crate::error::{dim_err, Error, Result};
use crate::eval::{config_hash, Checkpoint, ModuleKind};
use crate::nn::{
    masked_l1, masked_l1_grad, Adam, AdamConfig, FlushDenormals, Layer, ParamSet, Real, Sequential,
    Tensor,
};
use crate::raster::Image;

use super::GlyphStack;

const LEAK: f64 = 0.2;
/// Per-slot input: shape mask, exemplar color field (3), exemplar coverage.
pub(crate) const ORNA_INPUTS: usize = 5;

/// Per-slot color network (3×3 convolution then 1×1 convolutions, shared by
/// all slots) plus the layout of the glyph discriminator used in fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrnaNetConfig {
    pub glyph_size: usize,
    pub hidden: Vec<usize>,
    /// Ink/background split of shape masks.
    pub threshold: f32,
    /// Stride-2 stages of the glyph discriminator.
    pub disc_channels: Vec<usize>,
}

impl Default for OrnaNetConfig {
    fn default() -> Self {
        OrnaNetConfig {
            glyph_size: 64,
            hidden: vec![16, 16],
            threshold: 0.5,
            disc_channels: vec![16, 32, 32],
        }
    }
}

impl OrnaNetConfig {
    pub fn micro() -> Self {
        OrnaNetConfig {
            glyph_size: 8,
            hidden: vec![4, 4],
            threshold: 0.5,
            disc_channels: vec![2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.disc_channels.len();
        if self.hidden.is_empty()
            || self
                .hidden
                .iter()
                .chain(&self.disc_channels)
                .any(|&c| c == 0)
        {
            return Err(Error::Invalid(
                "ornament network needs nonzero hidden widths".into(),
            ));
        }
        if d == 0 || d >= 16 || self.glyph_size % (1 << d) != 0 || self.glyph_size >> d == 0 {
            return Err(Error::Invalid(format!(
                "{}px glyphs cannot be halved {d} times",
                self.glyph_size
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Invalid(format!(
                "threshold {} outside [0,1)",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Debug, Clone)]
pub struct OrnaNet<T> {
    pub config: OrnaNetConfig,
    pub net: Sequential<T>,
}

#[derive(Debug, Clone)]
pub struct GlyphDiscriminator<T> {
    pub net: Sequential<T>,
}

impl<T: Real> ParamSet<T> for OrnaNet<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }
}

impl<T: Real> ParamSet<T> for GlyphDiscriminator<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }
}

impl<T: Real> GlyphDiscriminator<T> {
    pub fn new(config: &OrnaNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut c = 3;
        for &co in &config.disc_channels {
            layers.push(Layer::conv(&mut rng, c, co, 4, 2, 1));
            layers.push(Layer::LeakyRelu(T::of(LEAK)));
            c = co;
        }
        let b = config.glyph_size >> config.disc_channels.len();
        layers.push(Layer::linear(&mut rng, c * b * b, 1));
        Ok(GlyphDiscriminator {
            net: Sequential::new(layers),
        })
    }
}

impl<T: Real> OrnaNet<T> {
    pub fn new(config: &OrnaNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut c = ORNA_INPUTS;
        for (i, &h) in config.hidden.iter().enumerate() {
            let (k, p) = if i == 0 { (3, 1) } else { (1, 0) };
            layers.push(Layer::conv(&mut rng, c, h, k, 1, p));
            layers.push(Layer::LeakyRelu(T::of(LEAK)));
            c = h;
        }
        layers.push(Layer::conv(&mut rng, c, 3, 1, 1, 0));
        layers.push(Layer::Sigmoid);
        Ok(OrnaNet {
            config: config.clone(),
            net: Sequential::new(layers),
        })
    }

    pub fn to_checkpoint(
        &self,
        seed: u64,
        step: usize,
        extra: &[(&str, serde_json::Value)],
    ) -> Checkpoint {
        let mut info = std::collections::BTreeMap::new();
        info.insert(
            "config".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        info.insert(
            "char_set".into(),
            serde_json::to_value(crate::CharSet).expect("char set serializes"),
        );
        info.insert("glyph_size".into(), self.config.glyph_size.into());
        for (k, v) in extra {
            info.insert((*k).into(), v.clone());
        }
        let params = self.to_flat().into_iter().map(|v| v.f64() as f32).collect();
        Checkpoint::new(
            ModuleKind::OrnaNet,
            self.config.hash(),
            seed,
            step,
            params,
            info,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.kind != ModuleKind::OrnaNet {
            return Err(Error::Incompatible(format!(
                "{} checkpoint is not an ornament network",
                ck.meta.kind
            )));
        }
        let config: OrnaNetConfig = ck.info("config")?;
        ck.expect(ModuleKind::OrnaNet, &config.hash())?;
        let mut m = Self::new(&config, 0)?;
        if m.num_params() != ck.params.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint has {} parameters, architecture needs {}",
                ck.params.len(),
                m.num_params()
            )));
        }
        let flat: Vec<T> = ck.params.iter().map(|&v| T::of(v as f64)).collect();
        m.set_flat(&flat);
        Ok(m)
    }

    /// `[k,5,g,g]` input for `masks` (each `g²` values) under one exemplar field.
    pub fn input(&self, masks: &[&[T]], field: &ExemplarField) -> Result<Tensor<T>> {
        let g = self.config.glyph_size;
        if field.color.width() != g || field.color.height() != g {
            return Err(dim_err(format!(
                "{g}px network given a {}px exemplar field",
                field.color.width()
            )));
        }
        let plane = g * g;
        let mut data = Vec::with_capacity(masks.len() * ORNA_INPUTS * plane);
        for m in masks {
            if m.len() != plane {
                return Err(dim_err(format!(
                    "mask has {} values, expected {plane}",
                    m.len()
                )));
            }
            data.extend_from_slice(m);
            for c in 0..3 {
                data.extend(
                    field
                        .color
                        .data()
                        .iter()
                        .skip(c)
                        .step_by(3)
                        .map(|&v| T::of(v as f64)),
                );
            }
            data.extend(field.valid.data().iter().map(|&v| T::of(v as f64)));
        }
        Ok(Tensor::from_vec(&[masks.len(), ORNA_INPUTS, g, g], data))
    }

    /// Unpremultiplied colors `[k,3,g,g]`.
    pub fn colors(&self, masks: &[&[T]], field: &ExemplarField) -> Result<Tensor<T>> {
        Ok(self.net.infer(&self.input(masks, field)?))
    }
}

/// Per-pixel summary of the observed color exemplars: the mean
/// unpremultiplied color of the exemplars inked at that pixel (the overall
/// mean ink color where none is), and the fraction of exemplars inked there.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarField {
    pub color: Image,
    pub valid: Image,
    pub mean: [f32; 3],
}

pub fn exemplar_field(exemplars: &GlyphStack, threshold: f32) -> Result<ExemplarField> {
    let rgb = exemplars
        .rgb
        .as_ref()
        .ok_or_else(|| Error::Invalid("ornamentation needs color exemplars".into()))?;
    let slots: Vec<usize> = (0..NUM_CHARS).filter(|&i| exemplars.observed[i]).collect();
    if slots.is_empty() {
        return Err(Error::Invalid("no observed color exemplar".into()));
    }
    let g = exemplars.size;
    let mut sum = vec![[0.0f64; 3]; g * g];
    let mut cnt = vec![0usize; g * g];
    let mut total = [0.0f64; 3];
    let mut total_n = 0usize;
    for &i in &slots {
        let (ink, col) = (exemplars.ink[i].data(), rgb[i].data());
        for p in 0..g * g {
            let a = ink[p];
            if a > threshold {
                for c in 0..3 {
                    let v = (col[p * 3 + c] / a).min(1.0) as f64;
                    sum[p][c] += v;
                    total[c] += v;
                }
                cnt[p] += 1;
                total_n += 1;
            }
        }
    }
    if total_n == 0 {
        return Err(Error::Invalid("color exemplars contain no ink".into()));
    }
    let mean = total.map(|v| (v / total_n as f64) as f32);
    let color = Image::from_fn(g, g, 3, |x, y, c| {
        let p = y * g + x;
        if cnt[p] == 0 {
            mean[c]
        } else {
            (sum[p][c] / cnt[p] as f64) as f32
        }
    });
    let valid = Image::from_fn(g, g, 1, |x, y, _| {
        cnt[y * g + x] as f32 / slots.len() as f32
    });
    Ok(ExemplarField { color, valid, mean })
}

/// Colors the 62 completed shapes after the exemplars. Returns premultiplied
/// colors on a black background: `mask·color` where the mask exceeds the
/// threshold and exactly 0 elsewhere.
pub fn ornament<T: Real>(
    net: &OrnaNet<T>,
    shapes: &[Image],
    exemplars: &GlyphStack,
) -> Result<Vec<Image>> {
    let g = net.config.glyph_size;
    if shapes.len() != NUM_CHARS {
        return Err(dim_err(format!(
            "{} shapes, expected {NUM_CHARS}",
            shapes.len()
        )));
    }
    if let Some(s) = shapes
        .iter()
        .find(|s| s.width() != g || s.height() != g || s.channels() != 1)
    {
        return Err(dim_err(format!(
            "shape is {}x{}x{}, expected {g}x{g}x1",
            s.width(),
            s.height(),
            s.channels()
        )));
    }
    if exemplars.size != g {
        return Err(dim_err(format!(
            "{}px exemplars for a {g}px network",
            exemplars.size
        )));
    }
    let field = exemplar_field(exemplars, net.config.threshold)?;
    let masks: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| s.data().iter().map(|&v| T::of(v as f64)).collect())
        .collect();
    let refs: Vec<&[T]> = masks.iter().map(|m| m.as_slice()).collect();
    let colors = net.colors(&refs, &field)?;
    let t = net.config.threshold;
    Ok(shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let item = colors.item(i);
            Image::from_fn(g, g, 3, |x, y, c| {
                let m = s.get(x, y, 0);
                if m > t {
                    m * item[(c * g + y) * g + x].f64() as f32
                } else {
                    0.0
                }
            })
        })
        .collect())
}

/// Training targets for the color network: unpremultiplied colors and a
/// weight of 1 on inked pixels, `[k,3,g,g]` each.
pub(crate) fn color_targets<T: Real>(
    ink: &[&Image],
    rgb: &[&Image],
    threshold: f32,
) -> (Tensor<T>, Tensor<T>) {
    let g = ink[0].width();
    let mut target = Vec::with_capacity(ink.len() * 3 * g * g);
    let mut weight = Vec::with_capacity(ink.len() * 3 * g * g);
    for (a, col) in ink.iter().zip(rgb) {
        for c in 0..3 {
            for p in 0..g * g {
                let m = a.data()[p];
                if m > threshold {
                    target.push(T::of((col.data()[p * 3 + c] / m).min(1.0) as f64));
                    weight.push(T::one());
                } else {
                    target.push(T::zero());
                    weight.push(T::zero());
                }
            }
        }
    }
    let shape = [ink.len(), 3, g, g];
    (
        Tensor::from_vec(&shape, target),
        Tensor::from_vec(&shape, weight),
    )
}

/// Mean color L1 over inked pixels and its gradient with respect to `net`.
pub(crate) fn color_loss<T: Real>(
    net: &OrnaNet<T>,
    x: &Tensor<T>,
    target: &Tensor<T>,
    weight: &Tensor<T>,
) -> (f64, Vec<Tensor<T>>) {
    let tape = net.net.forward(x);
    let out = tape.output();
    let loss = masked_l1(out.data(), target.data(), Some(weight.data()));
    let d = masked_l1_grad(out.data(), target.data(), Some(weight.data()));
    let mut grads = net.zero_grads();
    net.net
        .backward(&tape, &Tensor::from_vec(out.shape(), d), &mut grads);
    (loss.f64(), grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub steps: usize,
    pub adam: AdamConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            steps: 200,
            adam: AdamConfig::default(),
        }
    }
}

/// Scene-time adaptation: fits a copy of `net` to reproduce the observed
/// exemplars' colors from their own masks (full-batch Adam). Returns the
/// adapted network and the color loss per step.
pub fn adapt_ornanet(
    net: &OrnaNet<f32>,
    exemplars: &GlyphStack,
    cfg: &AdaptConfig,
) -> Result<(OrnaNet<f32>, Vec<f64>)> {
    let _ftz = FlushDenormals::new();
    let t = net.config.threshold;
    let field = exemplar_field(exemplars, t)?;
    let rgb = exemplars.rgb.as_ref().expect("checked by exemplar_field");
    let slots: Vec<usize> = (0..NUM_CHARS).filter(|&i| exemplars.observed[i]).collect();
    let inks: Vec<&Image> = slots.iter().map(|&i| &exemplars.ink[i]).collect();
    let cols: Vec<&Image> = slots.iter().map(|&i| &rgb[i]).collect();
    let masks: Vec<&[f32]> = inks.iter().map(|im| im.data()).collect();
    let x = net.input(&masks, &field)?;
    let (target, weight) = color_targets::<f32>(&inks, &cols, t);
    let mut out = net.clone();
    let mut opt = Adam::new(cfg.adam);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grads) = color_loss(&out, &x, &target, &weight);
        if !loss.is_finite() || !grads.iter().all(|g| g.all_finite()) {
            return Err(Error::NonFinite {
                step,
                what: "ornament adaptation loss".into(),
            });
        }
        opt.step(out.params_mut(), &grads);
        history.push(loss);
    }
    Ok((out, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GlyphImage;
    use crate::glyph::assemble_input;

    fn disc(size: usize, r: usize, col: [f32; 3]) -> GlyphImage {
        let ink = Image::from_fn(size, size, 1, |x, y, _| {
            let (dx, dy) = (x as f32 - size as f32 / 2.0, y as f32 - size as f32 / 2.0);
            ((dx * dx + dy * dy).sqrt() < r as f32) as u8 as f32
        });
        let rgb = Image::from_fn(size, size, 3, |x, y, c| ink.get(x, y, 0) * col[c]);
        GlyphImage {
            ch: 'o',
            font_id: "t".into(),
            ink,
            rgb: Some(rgb),
        }
    }

    #[test]
    fn field_is_exemplar_color() {
        let ex = assemble_input(&[disc(8, 3, [0.2, 0.4, 0.9])]).unwrap();
        let f = exemplar_field(&ex, 0.5).unwrap();
        for p in f.color.data().chunks(3) {
            assert!(
                (p[0] - 0.2).abs() < 1e-6 && (p[1] - 0.4).abs() < 1e-6 && (p[2] - 0.9).abs() < 1e-6
            );
        }
        assert_eq!(f.valid.get(4, 4, 0), 1.0);
        assert_eq!(f.valid.get(0, 0, 0), 0.0);
        let gray = assemble_input(&[GlyphImage::gray('o', "t", Image::new(8, 8, 1))]).unwrap();
        assert!(exemplar_field(&gray, 0.5).is_err());
    }

    #[test]
    fn zero_shapes_give_background() {
        let net = OrnaNet::<f32>::new(&OrnaNetConfig::micro(), 1).unwrap();
        let ex = assemble_input(&[disc(8, 3, [0.2, 0.4, 0.9])]).unwrap();
        let out = ornament(&net, &vec![Image::new(8, 8, 1); 62], &ex).unwrap();
        assert!(out.iter().all(|im| im.data().iter().all(|&v| v == 0.0)));
        let shapes: Vec<Image> = (0..62)
            .map(|i| Image::filled(8, 8, &[i as f32 / 61.0]))
            .collect();
        let out = ornament(&net, &shapes, &ex).unwrap();
        for (s, o) in shapes.iter().zip(&out) {
            assert!(o.in_unit_range());
            if s.get(0, 0, 0) <= 0.5 {
                assert!(o.data().iter().all(|&v| v == 0.0));
            }
        }
        assert!(ornament(&net, &shapes[..3], &ex).is_err());
    }

    #[test]
    fn adaptation_learns_a_flat_color() {
        let net = OrnaNet::<f32>::new(&OrnaNetConfig::micro(), 1).unwrap();
        let col = [0.8, 0.1, 0.3];
        let ex = assemble_input(&[disc(8, 3, col)]).unwrap();
        let (adapted, hist) = adapt_ornanet(
            &net,
            &ex,
            &AdaptConfig {
                steps: 300,
                adam: AdamConfig {
                    lr: 1e-2,
                    ..Default::default()
                },
            },
        )
        .unwrap();
        assert_eq!(hist.len(), 300);
        assert!(hist[299] < hist[0]);
        assert!(hist[299] < 0.02, "{}", hist[299]);
        let shapes = vec![disc(8, 3, col).ink; 62];
        let out = ornament(&adapted, &shapes, &ex).unwrap();
        let c = crate::glyph::mean_ink_color(&shapes[5], &out[5], 0.5).unwrap();
        for k in 0..3 {
            assert!((c[k] - col[k]).abs() < 0.05, "{c:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = OrnaNet::<f32>::new(&OrnaNetConfig::micro(), 3).unwrap();
        let back = OrnaNet::<f32>::from_checkpoint(&net.to_checkpoint(3, 0, &[])).unwrap();
        assert_eq!(back.to_flat(), net.to_flat());
    }
}

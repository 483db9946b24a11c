use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::eval::{config_hash, Checkpoint, ModuleKind};
use crate::nn::{
    bce_with_logits, masked_l1, masked_l1_grad, sigmoid, Layer, ParamSet, Real, Sequential, Tape,
    Tensor,
};
use crate::raster::{Image, Rect};

use super::{centered_rect, mask_region, MaskedImage, RegionMask};

const LEAK: f64 = 0.2;
/// Coarse fills are kept this far from 0 and 1 before taking the logit.
const COARSE_EPS: f64 = 0.01;

/// Architecture of the context encoder. Every encoder/discriminator stage is a
/// 4×4 stride-2 convolution and every decoder stage a 4×4 stride-2 transposed
/// convolution, so each halves or doubles the spatial size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintConfig {
    /// Side of the square context crop.
    pub input_size: usize,
    /// Side of the centered square the decoder fills.
    pub hole_size: usize,
    pub enc_channels: Vec<usize>,
    pub latent_dim: usize,
    pub dec_channels: Vec<usize>,
    pub disc_channels: Vec<usize>,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            input_size: 128,
            hole_size: 64,
            enc_channels: vec![16, 32, 32, 64, 64],
            latent_dim: 256,
            dec_channels: vec![64, 64, 32, 16],
            disc_channels: vec![16, 32, 64, 64],
        }
    }
}

impl InpaintConfig {
    /// A model small enough for exhaustive gradient checks (16×16 input).
    pub fn micro() -> Self {
        InpaintConfig {
            input_size: 16,
            hole_size: 8,
            enc_channels: vec![3, 4],
            latent_dim: 8,
            dec_channels: vec![4, 3],
            disc_channels: vec![3, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        let divisible = |n: usize, depth: usize| {
            depth < usize::BITS as usize && n % (1 << depth) == 0 && n >> depth > 0
        };
        if self.enc_channels.is_empty()
            || self.dec_channels.is_empty()
            || self.disc_channels.is_empty()
        {
            return bad("encoder, decoder and discriminator need at least one stage".into());
        }
        if !divisible(self.input_size, self.enc_channels.len()) {
            return bad(format!(
                "input {} does not halve {} times",
                self.input_size,
                self.enc_channels.len()
            ));
        }
        if !divisible(self.hole_size, self.dec_channels.len())
            || !divisible(self.hole_size, self.disc_channels.len())
        {
            return bad(format!(
                "hole {} does not halve enough times",
                self.hole_size
            ));
        }
        if self.hole_size + 2 > self.input_size || (self.input_size - self.hole_size) % 2 != 0 {
            return bad(format!(
                "hole {} must leave an even border of at least one pixel in a {} crop",
                self.hole_size, self.input_size
            ));
        }
        if self.latent_dim == 0
            || self
                .enc_channels
                .iter()
                .chain(&self.dec_channels)
                .chain(&self.disc_channels)
                .any(|&c| c == 0)
        {
            return bad("zero-width layer".into());
        }
        Ok(())
    }

    pub fn hole_rect(&self) -> Rect {
        centered_rect(self.input_size, self.input_size, self.hole_size)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Encoder and decoder; the decoder predicts a logit-space residual over a
/// boundary-interpolated coarse fill of the hole.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub encoder: Sequential<T>,
    pub decoder: Sequential<T>,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub net: Sequential<T>,
}

#[derive(Debug, Clone)]
pub struct InpaintModel<T> {
    pub config: InpaintConfig,
    /// Value written into masked pixels before encoding.
    pub fill: f32,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Real> ParamSet<T> for Generator<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}

impl<T: Real> ParamSet<T> for Discriminator<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }
}

impl<T: Real> ParamSet<T> for InpaintModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = self.generator.params();
        v.extend(self.discriminator.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.generator.params_mut();
        v.extend(self.discriminator.params_mut());
        v
    }
}

/// Tensors for a batch of masked crops.
#[derive(Debug, Clone)]
pub struct InpaintBatch<T> {
    /// `[n,4,S,S]`: context-mean-centered RGB with the hole zeroed, plus the mask.
    pub input: Tensor<T>,
    /// `[n,3,h,h]` logit of the coarse fill.
    pub coarse_logit: Tensor<T>,
    /// `[n,3,h,h]` masked-image pixels of the hole window.
    pub context: Tensor<T>,
    /// `[n,3,h,h]` 1 where the pixel is masked.
    pub weight: Tensor<T>,
    /// `[n,3,h,h]` ground-truth hole window, when known.
    pub target: Option<Tensor<T>>,
}

/// Gradients and values of the generator objective.
#[derive(Debug, Clone)]
pub struct GeneratorLoss<T> {
    pub recon: f64,
    pub adv_g: f64,
    pub total: f64,
    pub grads: Vec<Tensor<T>>,
    /// Composited hole windows fed to the discriminator.
    pub fake: Tensor<T>,
}

fn conv_stack<T: Real>(rng: &mut ChaCha8Rng, cin: usize, channels: &[usize]) -> Vec<Layer<T>> {
    let mut layers = Vec::new();
    let mut c = cin;
    for &co in channels {
        layers.push(Layer::conv(rng, c, co, 4, 2, 1));
        layers.push(Layer::LeakyRelu(T::of(LEAK)));
        c = co;
    }
    layers
}

impl<T: Real> InpaintModel<T> {
    /// Fresh parameters from `seed`: generator first, then discriminator.
    pub fn new(config: &InpaintConfig, fill: f32, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;

        let mut enc = conv_stack(&mut rng, 4, &c.enc_channels);
        let b = c.input_size >> c.enc_channels.len();
        let c_last = *c.enc_channels.last().unwrap();
        enc.push(Layer::linear(&mut rng, c_last * b * b, c.latent_dim));

        let s0 = c.hole_size >> c.dec_channels.len();
        let d0 = c.dec_channels[0];
        let mut dec = vec![
            Layer::LeakyRelu(T::of(LEAK)),
            Layer::linear(&mut rng, c.latent_dim, d0 * s0 * s0),
            Layer::LeakyRelu(T::of(LEAK)),
            Layer::Reshape(vec![d0, s0, s0]),
        ];
        for (i, &ci) in c.dec_channels.iter().enumerate() {
            match c.dec_channels.get(i + 1) {
                Some(&co) => {
                    dec.push(Layer::deconv(&mut rng, ci, co, 4, 2, 1));
                    dec.push(Layer::LeakyRelu(T::of(LEAK)));
                }
                // Start the residual near zero so training begins at the coarse fill.
                None => dec.push(Layer::deconv(&mut rng, ci, 3, 4, 2, 1).scaled(0.1)),
            }
        }

        let mut disc = conv_stack(&mut rng, 3, &c.disc_channels);
        let db = c.hole_size >> c.disc_channels.len();
        disc.push(Layer::linear(
            &mut rng,
            c.disc_channels.last().unwrap() * db * db,
            1,
        ));

        Ok(InpaintModel {
            config: c.clone(),
            fill,
            generator: Generator {
                encoder: Sequential::new(enc),
                decoder: Sequential::new(dec),
            },
            discriminator: Discriminator {
                net: Sequential::new(disc),
            },
        })
    }

    pub fn cast<U: Real>(&self) -> InpaintModel<U> {
        let mut m = InpaintModel::<U>::new(&self.config, self.fill, 0).expect("validated config");
        let flat: Vec<U> = self.to_flat().into_iter().map(|v| U::of(v.f64())).collect();
        m.set_flat(&flat);
        m
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
        info.insert("input_size".into(), self.config.input_size.into());
        info.insert("latent_dim".into(), self.config.latent_dim.into());
        info.insert("fill".into(), serde_json::json!(self.fill));
        for (k, v) in extra {
            info.insert((*k).into(), v.clone());
        }
        let params = self.to_flat().into_iter().map(|v| v.f64() as f32).collect();
        Checkpoint::new(
            ModuleKind::Inpainter,
            self.config.hash(),
            seed,
            step,
            params,
            info,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.kind != ModuleKind::Inpainter {
            return Err(Error::Incompatible(format!(
                "{} checkpoint is not an inpainter",
                ck.meta.kind
            )));
        }
        let config: InpaintConfig = ck.info("config")?;
        if config.hash() != ck.meta.config_hash {
            return Err(Error::ConfigHash {
                found: ck.meta.config_hash.clone(),
                expected: config.hash(),
            });
        }
        let fill: f32 = ck.info("fill")?;
        let mut m = Self::new(&config, fill, 0)?;
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

    /// Builds the network inputs for crops of exactly `input_size`.
    pub fn batch(&self, items: &[MaskedImage]) -> Result<InpaintBatch<T>> {
        let c = &self.config;
        let (s, h) = (c.input_size, c.hole_size);
        let hole = c.hole_rect();
        let (hx, hy) = (hole.x as usize, hole.y as usize);
        let n = items.len();
        if n == 0 {
            return Err(Error::Invalid("empty inpainting batch".into()));
        }
        let mut input = Vec::with_capacity(n * 4 * s * s);
        let mut coarse = Vec::with_capacity(n * 3 * h * h);
        let mut context = Vec::with_capacity(n * 3 * h * h);
        let mut weight = Vec::with_capacity(n * 3 * h * h);
        let mut target = Vec::with_capacity(n * 3 * h * h);
        let have_target = items.iter().all(|m| m.original.is_some());
        for m in items {
            let img = &m.image;
            if img.width() != s || img.height() != s || img.channels() != 3 {
                return Err(dim_err(format!(
                    "model expects {s}x{s}x3 crops, got {}x{}x{}",
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
            if m.mask.width() != s || m.mask.height() != s {
                return Err(dim_err("mask does not match the crop"));
            }
            if let Some(b) = m.mask.bbox() {
                if !hole.contains_rect(&b) {
                    return Err(Error::Invalid(format!(
                        "mask {b:?} extends outside the model's hole {hole:?}"
                    )));
                }
            }
            // Per-channel mean of the unmasked context.
            let mut mean = [0.0f64; 3];
            let mut cnt = 0usize;
            for (i, px) in img.data().chunks_exact(3).enumerate() {
                if !m.mask.data()[i] {
                    for ch in 0..3 {
                        mean[ch] += px[ch] as f64;
                    }
                    cnt += 1;
                }
            }
            for v in &mut mean {
                *v = if cnt == 0 {
                    m.fill as f64
                } else {
                    *v / cnt as f64
                };
            }
            for ch in 0..3 {
                for y in 0..s {
                    for x in 0..s {
                        let v = if m.mask.get(x, y) {
                            0.0
                        } else {
                            img.get(x, y, ch) as f64 - mean[ch]
                        };
                        input.push(T::of(v));
                    }
                }
            }
            for y in 0..s {
                for x in 0..s {
                    input.push(if m.mask.get(x, y) {
                        T::one()
                    } else {
                        T::zero()
                    });
                }
            }
            let fill = coons_fill(img, hole);
            for ch in 0..3 {
                for y in 0..h {
                    for x in 0..h {
                        let cv = fill[(y * h + x) * 3 + ch].clamp(COARSE_EPS, 1.0 - COARSE_EPS);
                        coarse.push(T::of((cv / (1.0 - cv)).ln()));
                        context.push(T::of(img.get(hx + x, hy + y, ch) as f64));
                        weight.push(if m.mask.get(hx + x, hy + y) {
                            T::one()
                        } else {
                            T::zero()
                        });
                        if have_target {
                            let o = m.original.as_ref().unwrap();
                            target.push(T::of(o.get(hx + x, hy + y, ch) as f64));
                        }
                    }
                }
            }
        }
        let hs = [n, 3, h, h];
        Ok(InpaintBatch {
            input: Tensor::from_vec(&[n, 4, s, s], input),
            coarse_logit: Tensor::from_vec(&hs, coarse),
            context: Tensor::from_vec(&hs, context),
            weight: Tensor::from_vec(&hs, weight),
            target: have_target.then(|| Tensor::from_vec(&hs, target)),
        })
    }

    /// Hole predictions `[n,3,h,h]` in `(0,1)`.
    pub fn predict(&self, batch: &InpaintBatch<T>) -> Tensor<T> {
        let latent = self.generator.encoder.infer(&batch.input);
        let r = self.generator.decoder.infer(&latent);
        add_sigmoid(&batch.coarse_logit, &r)
    }

    /// Predictions composited with the known pixels of the hole window.
    pub fn composite_hole(batch: &InpaintBatch<T>, out: &Tensor<T>) -> Tensor<T> {
        let data = out
            .data()
            .iter()
            .zip(batch.weight.data())
            .zip(batch.context.data())
            .map(|((&o, &w), &c)| w * o + (T::one() - w) * c)
            .collect();
        Tensor::from_vec(out.shape(), data)
    }

    /// `λ_rec·recon + λ_adv·adv_g` and its gradient for the generator parameters.
    pub fn generator_loss(
        &self,
        batch: &InpaintBatch<T>,
        lambda_rec: f64,
        lambda_adv: f64,
    ) -> Result<GeneratorLoss<T>> {
        let target = batch
            .target
            .as_ref()
            .ok_or_else(|| Error::Invalid("training batch needs ground truth".into()))?;
        let g = &self.generator;
        let enc_tape = g.encoder.forward(&batch.input);
        let dec_tape = g.decoder.forward(enc_tape.output());
        let out = add_sigmoid(&batch.coarse_logit, dec_tape.output());

        let w = batch.weight.data();
        let recon = masked_l1(out.data(), target.data(), Some(w));
        let mut d_out: Vec<T> = masked_l1_grad(out.data(), target.data(), Some(w))
            .into_iter()
            .map(|v| v * T::of(lambda_rec))
            .collect();

        let fake = Self::composite_hole(batch, &out);
        let d_tape = self.discriminator.net.forward(&fake);
        let (adv_g, dlogits) = bce_with_logits(d_tape.output().data(), true);
        if lambda_adv != 0.0 {
            let dl = Tensor::from_vec(d_tape.output().shape(), dlogits);
            let mut scratch = self.discriminator.zero_grads();
            let d_fake = self.discriminator.net.backward(&d_tape, &dl, &mut scratch);
            for ((d, &df), &wv) in d_out.iter_mut().zip(d_fake.data()).zip(w) {
                *d += T::of(lambda_adv) * wv * df;
            }
        }
        // Through out = σ(coarse + r).
        let dr: Vec<T> = d_out
            .iter()
            .zip(out.data())
            .map(|(&d, &o)| d * o * (T::one() - o))
            .collect();
        let dr = Tensor::from_vec(out.shape(), dr);

        let mut grads = g.zero_grads();
        let n_enc = g.encoder.params().len();
        let (ge, gd) = grads.split_at_mut(n_enc);
        let d_latent = g.decoder.backward(&dec_tape, &dr, gd);
        g.encoder.backward(&enc_tape, &d_latent, ge);

        let (recon, adv_g) = (recon.f64(), adv_g.f64());
        Ok(GeneratorLoss {
            recon,
            adv_g,
            total: lambda_rec * recon + lambda_adv * adv_g,
            grads,
            fake,
        })
    }

    /// `adv_d = ½[BCE(D(real), 1) + BCE(D(fake), 0)]` and its discriminator gradient.
    pub fn discriminator_loss(&self, real: &Tensor<T>, fake: &Tensor<T>) -> (f64, Vec<Tensor<T>>) {
        let d = &self.discriminator;
        let mut grads = d.zero_grads();
        let half = T::of(0.5);
        let mut total = 0.0;
        for (x, label) in [(real, true), (fake, false)] {
            let tape = d.net.forward(x);
            let (l, dl) = bce_with_logits(tape.output().data(), label);
            total += 0.5 * l.f64();
            let dl = Tensor::from_vec(
                tape.output().shape(),
                dl.into_iter().map(|v| v * half).collect(),
            );
            d.net.backward(&tape, &dl, &mut grads);
        }
        (total, grads)
    }

    /// Discriminator logits for `[n,3,h,h]` hole windows.
    pub fn disc_logits(&self, x: &Tensor<T>) -> Vec<T> {
        self.discriminator.net.infer(x).into_data()
    }

    fn encode_tape(&self, batch: &InpaintBatch<T>) -> Tape<T> {
        self.generator.encoder.forward(&batch.input)
    }
}

fn add_sigmoid<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| sigmoid(x + y))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Coons-patch fill of `hole` from the ring of pixels around it; reproduces any
/// bilinear background exactly. Returns `h×h×3` values.
fn coons_fill(img: &Image, hole: Rect) -> Vec<f64> {
    let (x0, y0) = (hole.x as usize - 1, hole.y as usize - 1);
    let (x1, y1) = (hole.right() as usize, hole.bottom() as usize);
    let h = hole.w as usize;
    let span = (h + 1) as f64;
    let p = |x: usize, y: usize, c: usize| img.get(x, y, c) as f64;
    let mut out = Vec::with_capacity(h * h * 3);
    for j in 0..h {
        let y = y0 + 1 + j;
        let v = (j + 1) as f64 / span;
        for i in 0..h {
            let x = x0 + 1 + i;
            let u = (i + 1) as f64 / span;
            for c in 0..3 {
                let edges = (1.0 - v) * p(x, y0, c)
                    + v * p(x, y1, c)
                    + (1.0 - u) * p(x0, y, c)
                    + u * p(x1, y, c);
                let corners = (1.0 - u) * (1.0 - v) * p(x0, y0, c)
                    + u * (1.0 - v) * p(x1, y0, c)
                    + (1.0 - u) * v * p(x0, y1, c)
                    + u * v * p(x1, y1, c);
                out.push(edges - corners);
            }
        }
    }
    out
}

/// Latent code of one masked crop.
pub fn encode<T: Real>(model: &InpaintModel<T>, masked: &MaskedImage) -> Result<Vec<f64>> {
    let batch = model.batch(std::slice::from_ref(masked))?;
    Ok(model
        .encode_tape(&batch)
        .output()
        .data()
        .iter()
        .map(|v| v.f64())
        .collect())
}

/// Fills the masked pixels with the model's prediction; every unmasked pixel
/// is copied from the input unchanged.
pub fn inpaint<T: Real>(model: &InpaintModel<T>, masked: &MaskedImage) -> Result<Image> {
    let mut out = masked.image.clone();
    if masked.mask.count() == 0 {
        model.batch(std::slice::from_ref(masked))?;
        return Ok(out);
    }
    let batch = model.batch(std::slice::from_ref(masked))?;
    let pred = model.predict(&batch);
    if !pred.all_finite() {
        return Err(Error::Invalid(
            "inpainter produced non-finite values; the checkpoint is corrupt".into(),
        ));
    }
    let h = model.config.hole_size;
    let hole = model.config.hole_rect();
    for y in 0..h {
        for x in 0..h {
            let (ix, iy) = (hole.x as usize + x, hole.y as usize + y);
            if masked.mask.get(ix, iy) {
                for c in 0..3 {
                    out.set(ix, iy, c, pred.data()[(c * h + y) * h + x].f64() as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Erases and restores an arbitrary rectangle: the surrounding window is
/// resampled so that `rect` lands exactly on the model's hole, inpainted, and
/// the hole is resampled back into `rect`. Pixels outside `rect` are untouched.
pub fn inpaint_region<T: Real>(
    model: &InpaintModel<T>,
    image: &Image,
    rect: Rect,
) -> Result<Image> {
    if image.channels() != 3 {
        return Err(dim_err("inpainting needs an RGB image"));
    }
    if rect.is_empty() || !image.bounds().contains_rect(&rect) {
        return Err(Error::Invalid(format!(
            "region {rect:?} is not inside the {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let c = &model.config;
    let (s, h) = (c.input_size as f64, c.hole_size as f64);
    let (rw, rh) = (rect.w as f64, rect.h as f64);
    let cx = rect.x as f64 + rw / 2.0;
    let cy = rect.y as f64 + rh / 2.0;
    let (ww, wh) = (rw * s / h, rh * s / h);
    let crop = image.resample_window(
        (cx - ww / 2.0, cy - wh / 2.0, cx + ww / 2.0, cy + wh / 2.0),
        c.input_size,
        c.input_size,
    );
    let mask = RegionMask::from_rect(c.input_size, c.input_size, c.hole_rect());
    let masked = mask_region(&crop, &mask, model.fill)?;
    let restored = inpaint(model, &masked)?;
    let hole = restored.crop(c.hole_rect())?;
    let mut out = image.clone();
    for y in 0..rect.h {
        for x in 0..rect.w {
            let u = (x as f64 + 0.5) * h / rw - 0.5;
            let v = (y as f64 + 0.5) * h / rh - 0.5;
            for ch in 0..3 {
                out.set(
                    (rect.x + x) as usize,
                    (rect.y + y) as usize,
                    ch,
                    hole.sample(u, v, ch),
                );
            }
        }
    }
    Ok(out)
}

/// Non-saturating adversarial losses of the discriminator on hole windows:
/// `adv_g = mean softplus(−D(pred))`,
/// `adv_d = ½[mean softplus(−D(real)) + mean softplus(D(pred))]`.
pub fn adversarial_losses<T: Real>(
    model: &InpaintModel<T>,
    pred_region: &Image,
    real_region: &Image,
) -> Result<(f64, f64)> {
    pred_region.check_same_shape(real_region, "adversarial_losses")?;
    let h = model.config.hole_size;
    if pred_region.width() != h || pred_region.height() != h || pred_region.channels() != 3 {
        return Err(dim_err(format!("discriminator expects {h}x{h}x3 regions")));
    }
    let to_t = |img: &Image| {
        let mut v = Vec::with_capacity(3 * h * h);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..h {
                    v.push(T::of(img.get(x, y, c) as f64));
                }
            }
        }
        Tensor::from_vec(&[1, 3, h, h], v)
    };
    let fake = model.disc_logits(&to_t(pred_region));
    let real = model.disc_logits(&to_t(real_region));
    if !fake.iter().chain(&real).all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            what: "discriminator logits".into(),
        });
    }
    let adv_g = bce_with_logits(&fake, true).0.f64();
    let adv_d =
        0.5 * (bce_with_logits(&real, true).0.f64() + bce_with_logits(&fake, false).0.f64());
    Ok((adv_g, adv_d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(s: usize, k: f32) -> Image {
        Image::from_fn(s, s, 3, |x, y, c| {
            0.5 + 0.4 * ((x as f32 * k + y as f32 * 0.3 + c as f32).sin())
        })
    }

    #[test]
    fn coons_reproduces_bilinear() {
        let img = Image::from_fn(16, 16, 3, |x, y, c| {
            0.1 + 0.02 * x as f32 + 0.03 * y as f32 + 0.001 * (x * y) as f32 + 0.1 * c as f32
        });
        let hole = Rect::new(4, 4, 8, 8);
        let f = coons_fill(&img, hole);
        for j in 0..8 {
            for i in 0..8 {
                for c in 0..3 {
                    let want = img.get(4 + i, 4 + j, c) as f64;
                    assert!((f[(j * 8 + i) * 3 + c] - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let cfg = InpaintConfig::micro();
        let m = InpaintModel::<f64>::new(&cfg, 0.5, 3).unwrap();
        let m2 = InpaintModel::<f64>::new(&cfg, 0.5, 3).unwrap();
        assert_eq!(m.to_flat(), m2.to_flat());
        let masked =
            mask_region(&textured(16, 0.7), &RegionMask::centered(16, 16, 8), 0.5).unwrap();
        let code = encode(&m, &masked).unwrap();
        assert_eq!(code.len(), 8);
        assert_eq!(code, encode(&m, &masked).unwrap());
        let out = inpaint(&m, &masked).unwrap();
        assert!(out.in_unit_range());
    }

    #[test]
    fn mask_outside_hole_is_rejected() {
        let m = InpaintModel::<f64>::new(&InpaintConfig::micro(), 0.5, 0).unwrap();
        let masked = mask_region(
            &textured(16, 0.7),
            &RegionMask::from_rect(16, 16, Rect::new(0, 0, 3, 3)),
            0.5,
        )
        .unwrap();
        assert!(inpaint(&m, &masked).is_err());
        let wrong = mask_region(&textured(12, 0.7), &RegionMask::empty(12, 12), 0.5).unwrap();
        assert!(matches!(inpaint(&m, &wrong), Err(Error::Dimension(_))));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = InpaintConfig::micro();
        c.hole_size = 16;
        assert!(c.validate().is_err());
        let mut c = InpaintConfig::micro();
        c.enc_channels = vec![2, 2, 2, 2, 2];
        assert!(c.validate().is_err());
        assert!(InpaintConfig::default().validate().is_ok());
    }

    #[test]
    fn region_restore_touches_only_the_region() {
        let m = InpaintModel::<f32>::new(&InpaintConfig::micro(), 0.5, 1).unwrap();
        let img = textured(40, 0.3);
        let rect = Rect::new(10, 12, 14, 6);
        let out = inpaint_region(&m, &img, rect).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                if !rect.contains_point(x, y) {
                    assert_eq!(
                        out.pixel(x as usize, y as usize),
                        img.pixel(x as usize, y as usize)
                    );
                }
            }
        }
        assert!(inpaint_region(&m, &img, Rect::new(30, 30, 20, 5)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_rebuilds_model() {
        let m = InpaintModel::<f32>::new(&InpaintConfig::micro(), 0.42, 9).unwrap();
        let ck = m.to_checkpoint(9, 0, &[]);
        let back = InpaintModel::<f32>::from_checkpoint(&ck).unwrap();
        assert_eq!(back.to_flat(), m.to_flat());
        assert_eq!(back.fill, 0.42);
    }

    fn micro_batch(m: &InpaintModel<f64>) -> InpaintBatch<f64> {
        let items: Vec<_> = [0.7f32, 1.3]
            .iter()
            .map(|&k| {
                let img = textured(16, k);
                mask_region(&img, &RegionMask::centered(16, 16, 8), m.fill).unwrap()
            })
            .collect();
        m.batch(&items).unwrap()
    }

    fn grads_flat(g: &[Tensor<f64>]) -> Vec<f64> {
        crate::nn::flatten_grads(g)
    }

    #[test]
    fn micro_model_is_small() {
        let m = InpaintModel::<f64>::new(&InpaintConfig::micro(), 0.5, 0).unwrap();
        assert!(m.num_params() <= 5000, "{}", m.num_params());
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        use crate::eval::{gradcheck_params, GradcheckConfig};
        let m = InpaintModel::<f64>::new(&InpaintConfig::micro(), 0.5, 4).unwrap();
        let batch = micro_batch(&m);
        for (lr, la) in [(1.0, 0.0), (0.0, 1.0), (0.999, 0.001)] {
            let mut g = m.generator.clone();
            let r = gradcheck_params(
                &mut g,
                |g| {
                    let mut mm = m.clone();
                    mm.generator = g.clone();
                    let l = mm.generator_loss(&batch, lr, la).unwrap();
                    (l.total, grads_flat(&l.grads))
                },
                &GradcheckConfig::default(),
            )
            .unwrap();
            assert!(r.passed, "λ=({lr},{la}): {r:?}");
        }
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        use crate::eval::{gradcheck_params, GradcheckConfig};
        let m = InpaintModel::<f64>::new(&InpaintConfig::micro(), 0.5, 5).unwrap();
        let batch = micro_batch(&m);
        let fake = InpaintModel::composite_hole(&batch, &m.predict(&batch));
        let real = batch.target.clone().unwrap();
        let mut d = m.discriminator.clone();
        let r = gradcheck_params(
            &mut d,
            |d| {
                let mut mm = m.clone();
                mm.discriminator = d.clone();
                let (l, g) = mm.discriminator_loss(&real, &fake);
                (l, grads_flat(&g))
            },
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn adversarial_losses_at_chance() {
        let mut m = InpaintModel::<f64>::new(&InpaintConfig::micro(), 0.5, 0).unwrap();
        // Zeroing every parameter makes D output logit 0, i.e. p = 0.5.
        let n = m.num_params();
        m.set_flat(&vec![0.0; n]);
        let a = Image::filled(8, 8, &[0.2, 0.5, 0.9]);
        let (g, d) = adversarial_losses(&m, &a, &a).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((g - ln2).abs() < 1e-15);
        assert!((d - ln2).abs() < 1e-15);
        assert!(adversarial_losses(&m, &a, &Image::new(8, 7, 3)).is_err());
    }

    #[test]
    fn lambda_adv_zero_total_is_recon() {
        let m = InpaintModel::<f64>::new(&InpaintConfig::micro(), 0.5, 2).unwrap();
        let l = m.generator_loss(&micro_batch(&m), 0.7, 0.0).unwrap();
        assert_eq!(l.total, 0.7 * l.recon);
        assert!(l.adv_g > 0.0);
    }

    #[test]
    fn outputs_bounded_for_extreme_params() {
        let mut m = InpaintModel::<f64>::new(&InpaintConfig::micro(), 0.5, 2).unwrap();
        let flat: Vec<f64> = m.to_flat().iter().map(|v| v * 1e3).collect();
        m.set_flat(&flat);
        let masked =
            mask_region(&textured(16, 0.7), &RegionMask::centered(16, 16, 8), 0.5).unwrap();
        assert!(inpaint(&m, &masked).unwrap().in_unit_range());
    }

    #[test]
    fn code_depends_on_unmasked_pixels() {
        let m = InpaintModel::<f64>::new(&InpaintConfig::micro(), 0.5, 6).unwrap();
        let img = textured(16, 0.7);
        let mask = RegionMask::centered(16, 16, 8);
        let a = encode(&m, &mask_region(&img, &mask, 0.5).unwrap()).unwrap();
        let mut img2 = img.clone();
        img2.set(1, 2, 0, img.get(1, 2, 0) + 0.05);
        let b = encode(&m, &mask_region(&img2, &mask, 0.5).unwrap()).unwrap();
        assert_ne!(a, b);
        let mut img3 = img.clone();
        img3.set(8, 8, 0, 0.0);
        let c = encode(&m, &mask_region(&img3, &mask, 0.5).unwrap()).unwrap();
        assert_eq!(a, c);
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charset::NUM_CHARS;
use crate::error::{dim_err, Error, Result};
use crate::eval::{config_hash, Checkpoint, ModuleKind};
use crate::nn::{Layer, ParamSet, Real, Sequential, Tensor};
use crate::raster::Image;

use super::sampler::ObservedRange;
use super::GlyphStack;

const LEAK: f64 = 0.2;

/// Shape network over 62-channel glyph stacks: average pooling, stride-2
/// convolutions, a fully-connected bottleneck, stride-2 transposed
/// convolutions and a final `pool×pool` transposed convolution back to 62
/// sigmoid channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlyphNetConfig {
    pub glyph_size: usize,
    /// Input average-pooling factor (1 disables it).
    pub pool: usize,
    pub enc_channels: Vec<usize>,
    pub latent_dim: usize,
    /// One transposed convolution per entry; as many as encoder stages.
    pub dec_channels: Vec<usize>,
    /// Observed glyphs are binarized at this level before entering the
    /// network, so rendered and scene-extracted exemplars look alike.
    pub input_threshold: Option<f32>,
}

impl Default for GlyphNetConfig {
    fn default() -> Self {
        GlyphNetConfig {
            glyph_size: 64,
            pool: 2,
            enc_channels: vec![32, 64, 64],
            latent_dim: 128,
            dec_channels: vec![64, 64, 32],
            input_threshold: Some(0.5),
        }
    }
}

impl GlyphNetConfig {
    /// 8×8 glyphs, a few thousand parameters.
    pub fn micro() -> Self {
        GlyphNetConfig {
            glyph_size: 8,
            pool: 2,
            enc_channels: vec![2],
            latent_dim: 8,
            dec_channels: vec![4],
            input_threshold: Some(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.pool == 0 || self.glyph_size % self.pool != 0 {
            return bad(format!(
                "pool {} does not divide glyph size {}",
                self.pool, self.glyph_size
            ));
        }
        let p = self.glyph_size / self.pool;
        let depth = self.enc_channels.len();
        if depth == 0 || depth >= 16 || p % (1 << depth) != 0 || p >> depth == 0 {
            return bad(format!(
                "{p}px pooled glyphs cannot be halved {depth} times"
            ));
        }
        if self.dec_channels.len() != depth {
            return bad(format!(
                "{} decoder stages for {depth} encoder stages",
                self.dec_channels.len()
            ));
        }
        if self.latent_dim == 0
            || self
                .enc_channels
                .iter()
                .chain(&self.dec_channels)
                .any(|&c| c == 0)
        {
            return bad("zero-width layer".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    fn bottleneck_side(&self) -> usize {
        self.glyph_size / self.pool >> self.enc_channels.len()
    }
}

#[derive(Debug, Clone)]
pub struct GlyphNet<T> {
    pub config: GlyphNetConfig,
    pub net: Sequential<T>,
}

impl<T: Real> ParamSet<T> for GlyphNet<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }
}

impl<T: Real> GlyphNet<T> {
    pub fn new(config: &GlyphNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leak = || Layer::LeakyRelu(T::of(LEAK));
        let mut layers = Vec::new();
        if c.pool > 1 {
            layers.push(Layer::AvgPool(c.pool));
        }
        let mut ch = NUM_CHARS;
        for &co in &c.enc_channels {
            layers.push(Layer::conv(&mut rng, ch, co, 4, 2, 1));
            layers.push(leak());
            ch = co;
        }
        let b = c.bottleneck_side();
        layers.push(Layer::linear(&mut rng, ch * b * b, c.latent_dim));
        layers.push(leak());
        let d0 = c.dec_channels[0];
        layers.push(Layer::linear(&mut rng, c.latent_dim, d0 * b * b));
        layers.push(leak());
        layers.push(Layer::Reshape(vec![d0, b, b]));
        for (i, &ci) in c.dec_channels.iter().enumerate() {
            let last = i + 1 == c.dec_channels.len();
            let co = match c.dec_channels.get(i + 1) {
                Some(&n) => n,
                None if c.pool > 1 => ci,
                None => NUM_CHARS,
            };
            layers.push(Layer::deconv(&mut rng, ci, co, 4, 2, 1));
            if !(last && c.pool == 1) {
                layers.push(leak());
            }
        }
        if c.pool > 1 {
            let ci = *c.dec_channels.last().unwrap();
            layers.push(Layer::deconv(&mut rng, ci, NUM_CHARS, c.pool, c.pool, 0));
        }
        layers.push(Layer::Sigmoid);
        Ok(GlyphNet {
            config: c.clone(),
            net: Sequential::new(layers),
        })
    }

    pub fn to_checkpoint(
        &self,
        seed: u64,
        step: usize,
        range: ObservedRange,
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
        info.insert(
            "observed_count_range".into(),
            serde_json::to_value(range).expect("range serializes"),
        );
        for (k, v) in extra {
            info.insert((*k).into(), v.clone());
        }
        let params = self.to_flat().into_iter().map(|v| v.f64() as f32).collect();
        Checkpoint::new(
            ModuleKind::GlyphNet,
            self.config.hash(),
            seed,
            step,
            params,
            info,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.kind != ModuleKind::GlyphNet {
            return Err(Error::Incompatible(format!(
                "{} checkpoint is not a glyph network",
                ck.meta.kind
            )));
        }
        ck.info::<crate::CharSet>("char_set")?;
        let config: GlyphNetConfig = ck.info("config")?;
        ck.expect(ModuleKind::GlyphNet, &config.hash())?;
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

    /// `[n,62,g,g]` input tensor from grayscale stacks.
    pub fn input(&self, stacks: &[&GlyphStack]) -> Result<Tensor<T>> {
        let g = self.config.glyph_size;
        let mut data = Vec::with_capacity(stacks.len() * NUM_CHARS * g * g);
        for s in stacks {
            if s.size != g {
                return Err(dim_err(format!(
                    "network expects {g}px glyphs, stack holds {}px",
                    s.size
                )));
            }
            let t = self.config.input_threshold;
            data.extend(s.ink_planes().into_iter().map(|v| match t {
                Some(t) => T::of((v > t) as u8 as f64),
                None => T::of(v as f64),
            }));
        }
        Ok(Tensor::from_vec(&[stacks.len(), NUM_CHARS, g, g], data))
    }
}

/// Completes a grayscale stack: 62 masks of the configured size in `[0,1]`.
/// Observed slots are predicted too (not copied from the input).
pub fn predict_glyph_shapes<T: Real>(net: &GlyphNet<T>, input: &GlyphStack) -> Result<Vec<Image>> {
    if input.observed_count() == 0 {
        return Err(Error::Invalid("glyph stack has no observed slot".into()));
    }
    let x = net.input(&[input])?;
    let y = net.net.infer(&x);
    let g = net.config.glyph_size;
    Ok(y.data()
        .chunks_exact(g * g)
        .map(|plane| {
            Image::from_vec(g, g, 1, plane.iter().map(|v| v.f64() as f32).collect())
                .expect("plane size")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GlyphImage;
    use crate::glyph::assemble_input;

    #[test]
    fn shapes_and_param_budget() {
        let net = GlyphNet::<f32>::new(&GlyphNetConfig::default(), 0).unwrap();
        let glyph = GlyphImage::gray(
            'A',
            "f",
            Image::from_fn(64, 64, 1, |x, y, _| ((x ^ y) & 1) as f32),
        );
        let out = predict_glyph_shapes(&net, &assemble_input(&[glyph]).unwrap()).unwrap();
        assert_eq!(out.len(), 62);
        assert!(out
            .iter()
            .all(|im| im.width() == 64 && im.height() == 64 && im.in_unit_range()));
        let micro = GlyphNet::<f64>::new(&GlyphNetConfig::micro(), 0).unwrap();
        assert!(micro.num_params() <= 5000, "{}", micro.num_params());
    }

    #[test]
    fn size_mismatch_is_a_dimension_error() {
        let net = GlyphNet::<f32>::new(&GlyphNetConfig::micro(), 0).unwrap();
        let glyph = GlyphImage::gray('A', "f", Image::new(16, 16, 1));
        let r = predict_glyph_shapes(&net, &assemble_input(&[glyph]).unwrap());
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = GlyphNet::<f32>::new(&GlyphNetConfig::micro(), 7).unwrap();
        let ck = net.to_checkpoint(7, 3, ObservedRange::default(), &[]);
        assert_eq!(ck.info::<usize>("glyph_size").unwrap(), 8);
        let back = GlyphNet::<f32>::from_checkpoint(&ck).unwrap();
        assert_eq!(back.to_flat(), net.to_flat());
        let mut bad = ck.clone();
        bad.meta.kind = ModuleKind::OrnaNet;
        assert!(GlyphNet::<f32>::from_checkpoint(&bad).is_err());
    }

    #[test]
    fn bad_configs() {
        let mut c = GlyphNetConfig::default();
        c.dec_channels.pop();
        assert!(c.validate().is_err());
        let mut c = GlyphNetConfig::micro();
        c.pool = 3;
        assert!(c.validate().is_err());
    }
}

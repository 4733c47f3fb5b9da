//! Toy-scale ViT encoder and cross-attention decoder.

pub mod checkpoint;
pub mod flops;
mod forward;

pub use forward::{
    decode, embed_all, encode, forward_sample, reconstruction_loss, Bound, SampleOutput,
};

use rand_distr::{Distribution, Normal};
use smae_tensor::{Element, Tensor};

use crate::error::{Error, Result};
use crate::keyed;

pub const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Embedding width `d`, shared by encoder and decoder.
    pub d: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Patch side `p`.
    pub patch: usize,
    pub image_size: usize,
    pub channels: usize,
    pub norm_pix: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            encoder_depth: 2,
            decoder_depth: 12,
            heads: 4,
            mlp_ratio: 4,
            patch: 16,
            image_size: 224,
            channels: 3,
            norm_pix: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d={} must be a positive multiple of heads={}", self.d, self.heads));
        }
        if self.d % 4 != 0 {
            return bad(format!("d={} must be a multiple of 4 for 2-D sinusoidal positions", self.d));
        }
        if self.decoder_depth < 1 {
            return bad("decoder_depth must be at least 1".into());
        }
        if self.mlp_ratio < 1 {
            return bad("mlp_ratio must be at least 1".into());
        }
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return bad(format!(
                "image_size={} is not a multiple of patch={}",
                self.image_size, self.patch
            ));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels={} must be 1 or 3", self.channels));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// `p²·C`
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn hidden(&self) -> usize {
        self.d * self.mlp_ratio
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Names, shapes and initializers of every trainable array, in checkpoint order.
    pub fn layout(&self) -> Vec<ParamSpec> {
        let (d, h, pd) = (self.d, self.hidden(), self.patch_dim());
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| {
            out.push(ParamSpec { name, shape, init })
        };
        let ln = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
            push(format!("{prefix}.gamma"), vec![d], Init::Ones);
            push(format!("{prefix}.beta"), vec![d], Init::Zeros);
        };
        let linear = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str, i: usize, o: usize| {
            push(format!("{prefix}.weight"), vec![i, o], Init::TruncNormal);
            push(format!("{prefix}.bias"), vec![o], Init::Zeros);
        };
        linear(&mut push, "patch_embed", pd, d);
        for b in 0..self.encoder_depth {
            let p = format!("enc.{b}");
            ln(&mut push, &format!("{p}.ln1"));
            linear(&mut push, &format!("{p}.attn.qkv"), d, 3 * d);
            linear(&mut push, &format!("{p}.attn.proj"), d, d);
            ln(&mut push, &format!("{p}.ln2"));
            linear(&mut push, &format!("{p}.mlp.fc1"), d, h);
            linear(&mut push, &format!("{p}.mlp.fc2"), h, d);
        }
        ln(&mut push, "enc_norm");
        push("mask_token".into(), vec![1, d], Init::TruncNormal);
        for b in 0..self.decoder_depth {
            let p = format!("dec.{b}");
            ln(&mut push, &format!("{p}.ln_q"));
            ln(&mut push, &format!("{p}.ln_kv"));
            linear(&mut push, &format!("{p}.attn.q"), d, d);
            linear(&mut push, &format!("{p}.attn.kv"), d, 2 * d);
            linear(&mut push, &format!("{p}.attn.proj"), d, d);
            ln(&mut push, &format!("{p}.ln2"));
            linear(&mut push, &format!("{p}.mlp.fc1"), d, h);
            linear(&mut push, &format!("{p}.mlp.fc2"), h, d);
        }
        ln(&mut push, "dec_norm");
        linear(&mut push, "head", d, pd);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// MAE-style fixed 2-D sin-cos table, `side²×d`. The first half of each row
/// encodes the patch row, the second half the column.
pub fn sincos_pos_embed(side: usize, d: usize) -> Vec<f64> {
    let quarter = d / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
        .collect();
    let mut out = Vec::with_capacity(side * side * d);
    for r in 0..side {
        for c in 0..side {
            for pos in [r as f64, c as f64] {
                out.extend(omega.iter().map(|w| (pos * w).sin()));
                out.extend(omega.iter().map(|w| (pos * w).cos()));
            }
        }
    }
    out
}

/// Trainable arrays plus the fixed positional tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    pos_embed: Tensor<T>,
}

impl<T: Element> ModelParams<T> {
    /// Seeded initialization: truncated normal (σ = 0.02, cut at 2σ) for
    /// projections and the mask token, zeros for biases, ones for gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = config
            .layout()
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                    Init::TruncNormal => {
                        let mut rng = keyed::stream(keyed::derive(seed, &[keyed::hash_str(&spec.name)]));
                        (0..n)
                            .map(|_| loop {
                                let v: f64 = normal.sample(&mut rng);
                                if v.abs() <= 2.0 * INIT_STD {
                                    break T::of(v);
                                }
                            })
                            .collect()
                    }
                };
                Tensor::new(spec.shape.clone(), data).map_err(Error::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tensors(config, tensors)
    }

    /// Builds parameters from arrays in [`ModelConfig::layout`] order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::Contract(format!(
                "model needs {} arrays, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.iter().zip(&tensors) {
            if spec.shape != t.shape() {
                return Err(Error::Contract(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        let side = config.grid_side();
        let pos = sincos_pos_embed(side, config.d).into_iter().map(T::of).collect();
        Ok(Self {
            config: config.clone(),
            names: layout.into_iter().map(|s| s.name).collect(),
            tensors,
            pos_embed: Tensor::new(vec![side * side, config.d], pos)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn pos_embed(&self) -> &Tensor<T> {
        &self.pos_embed
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            pos_embed: self.pos_embed.cast(),
        }
    }
}

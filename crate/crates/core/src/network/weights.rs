//! Flat parameter storage with a named tensor layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ArchConfig, HAND_PROBES, NUM_LEVELS, NUM_STREAMS, NUM_TOKENS};
use crate::body_model::{NUM_HAND_JOINTS, NUM_SHAPE, NUM_SURFACE_PROBES};
use crate::error::{GraftError, Result};
use crate::io::container::{TensorContainer, TensorData};

pub const ARCH_TENSOR: &str = "arch.config";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Offsets of an affine map `out = W x + b`, `W` row-major `[out, inp]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gain: usize,
    pub bias: usize,
    pub dim: usize,
}

/// Two affine maps with a GELU in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub norm_self: Norm,
    pub self_attn: Attention,
    pub norm_cross: Norm,
    pub cross_attn: Attention,
    pub norm_ffn: Norm,
    pub ffn: Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub body: Mlp,
    pub hand: Mlp,
    pub global: Mlp,
    pub translation: Mlp,
    pub shape: Mlp,
    pub scale: Mlp,
}

impl Heads {
    pub fn all(&self) -> [(&'static str, Mlp); 6] {
        [
            ("body", self.body),
            ("hand", self.hand),
            ("global", self.global),
            ("translation", self.translation),
            ("shape", self.shape),
            ("scale", self.scale),
        ]
    }
}

/// Where every learnable tensor lives inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub specs: Vec<TensorSpec>,
    /// Frequency matrices `[f, 3]` for offsets, normals and body-relative positions.
    pub fourier: [usize; 3],
    pub probe_mlp: Mlp,
    pub tok_body: Mlp,
    pub tok_hand: Mlp,
    pub tok_full: Mlp,
    /// `[NUM_TOKENS, width]` learned token identities.
    pub token_embed: usize,
    pub blocks: Vec<Block>,
    /// `[NUM_STREAMS, width]`.
    pub stream_embed: usize,
    pub level_proj: [Linear; NUM_LEVELS],
    pub fuse: Linear,
    pub heads: Heads,
    pub total: usize,
}

struct Builder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.specs.push(TensorSpec { name, shape, offset });
        offset
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        let w = self.tensor(format!("{name}.weight"), vec![out, inp]);
        let b = self.tensor(format!("{name}.bias"), vec![out]);
        Linear { w, b, inp, out }
    }

    fn mlp(&mut self, name: &str, inp: usize, hidden: usize, out: usize) -> Mlp {
        Mlp {
            hidden: self.linear(&format!("{name}.hidden"), inp, hidden),
            output: self.linear(&format!("{name}.output"), hidden, out),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gain: self.tensor(format!("{name}.gain"), vec![dim]),
            bias: self.tensor(format!("{name}.bias"), vec![dim]),
            dim,
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ArchConfig) -> Self {
        let d = cfg.width;
        let e = cfg.encoding_dim();
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let fourier = ["offset", "normal", "position"].map(|n| b.tensor(format!("fourier.{n}"), vec![cfg.fourier_freqs, 3]));
        let probe_mlp = b.mlp("probe_mlp", 3 * e, cfg.probe_hidden, cfg.probe_out);
        let tok_body = b.mlp("tokenizer.body", 3 * e + 6, cfg.tokenizer_hidden, d);
        let tok_hand = b.mlp(
            "tokenizer.hand",
            HAND_PROBES * cfg.probe_out + NUM_HAND_JOINTS * 6,
            cfg.tokenizer_hidden,
            d,
        );
        let tok_full = b.mlp(
            "tokenizer.full_body",
            NUM_SURFACE_PROBES * cfg.probe_out + 6 + 3 + NUM_SHAPE,
            cfg.tokenizer_hidden,
            d,
        );
        let token_embed = b.tensor("token_embed".into(), vec![NUM_TOKENS, d]);
        let blocks = (0..cfg.layers)
            .map(|l| Block {
                norm_self: b.norm(&format!("layers.{l}.norm_self"), d),
                self_attn: b.attention(&format!("layers.{l}.self_attn"), d),
                norm_cross: b.norm(&format!("layers.{l}.norm_cross"), d),
                cross_attn: b.attention(&format!("layers.{l}.cross_attn"), d),
                norm_ffn: b.norm(&format!("layers.{l}.norm_ffn"), d),
                ffn: b.mlp(&format!("layers.{l}.ffn"), d, cfg.ffn_hidden, d),
            })
            .collect();
        let stream_embed = b.tensor("visual.stream_embed".into(), vec![NUM_STREAMS, d]);
        let level_proj = std::array::from_fn(|l| {
            b.linear(&format!("visual.level_proj.{l}"), cfg.level_channels[l], cfg.level_dim)
        });
        let fuse = b.linear("visual.fuse", NUM_LEVELS * cfg.level_dim, d);
        let hh = cfg.head_hidden;
        let heads = Heads {
            body: b.mlp("heads.body", d, hh, 6),
            hand: b.mlp("heads.hand", d, hh, NUM_HAND_JOINTS * 6),
            global: b.mlp("heads.global", d, hh, 6),
            translation: b.mlp("heads.translation", d, hh, 3),
            shape: b.mlp("heads.shape", d, hh, NUM_SHAPE),
            scale: b.mlp("heads.scale", d, hh, 1),
        };
        Layout {
            specs: b.specs,
            fourier,
            probe_mlp,
            tok_body,
            tok_hand,
            tok_full,
            token_embed,
            blocks,
            stream_embed,
            level_proj,
            fuse,
            heads,
            total: b.total,
        }
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Parameters of the visual-feature adapters, whose size depends on the
    /// channel count of the input feature grids.
    pub fn visual_adapter_count(&self) -> usize {
        self.specs
            .iter()
            .filter(|s| s.name.starts_with("visual."))
            .map(TensorSpec::numel)
            .sum()
    }
}

/// How to draw initial values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Every parameter zero; the network predicts a no-op update.
    Zeros,
    /// Scaled normal draws; with `zero_heads` the output layers of the
    /// decoder heads start at zero so the initial update is a no-op.
    Random { seed: u64, zero_heads: bool },
}

/// All learnable parameters of the refinement network.
#[derive(Clone, Debug, PartialEq)]
pub struct GraftWeights {
    config: ArchConfig,
    layout: Layout,
    data: Vec<f64>,
}

impl GraftWeights {
    pub fn new(config: ArchConfig, init: Init) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut data = vec![0.0; layout.total];
        if let Init::Random { seed, zero_heads } = init {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for spec in &layout.specs {
                let values = &mut data[spec.offset..spec.offset + spec.numel()];
                let name = spec.name.as_str();
                if name.ends_with(".gain") {
                    values.fill(1.0);
                    continue;
                }
                if name.ends_with(".bias") {
                    continue;
                }
                if zero_heads && name.starts_with("heads.") && name.contains(".output.") {
                    continue;
                }
                let std = if name.starts_with("fourier.") {
                    1.0
                } else if name == "token_embed" || name == "visual.stream_embed" {
                    0.02
                } else {
                    // Weight matrices: unit-variance activations for unit-variance inputs.
                    1.0 / (spec.shape[1] as f64).sqrt()
                };
                for v in values.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * std;
                }
            }
        }
        Ok(Self { config, layout, data })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.data[offset..offset + len]
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.spec(name).map(|s| self.slice(s.offset, s.numel()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.layout.spec(name)?.clone();
        Some(&mut self.data[s.offset..s.offset + s.numel()])
    }

    /// Flat indices of every tensor whose name passes `keep`.
    pub fn indices_where(&self, keep: impl Fn(&str) -> bool) -> Vec<usize> {
        self.layout
            .specs
            .iter()
            .filter(|s| keep(&s.name))
            .flat_map(|s| s.offset..s.offset + s.numel())
            .collect()
    }

    /// Serializes parameters as f32 (`double = false`) or f64 payloads.
    pub fn to_container(&self, double: bool) -> TensorContainer {
        let mut c = TensorContainer::new();
        c.insert(
            ARCH_TENSOR,
            vec![self.config.to_ints().len() as u64],
            TensorData::I64(self.config.to_ints()),
        )
        .expect("fresh container");
        for s in &self.layout.specs {
            let v = self.slice(s.offset, s.numel());
            let data = if double {
                TensorData::F64(v.to_vec())
            } else {
                TensorData::F32(v.iter().map(|&x| x as f32).collect())
            };
            c.insert(s.name.clone(), s.shape.iter().map(|&d| d as u64).collect(), data)
                .expect("layout names are unique");
        }
        c
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let arch = c
            .get(ARCH_TENSOR)
            .ok_or_else(|| GraftError::WeightShapeMismatch(format!("missing {ARCH_TENSOR}")))?;
        let config = ArchConfig::from_ints(arch.data.as_i64()?)?;
        let mut w = Self::new(config, Init::Zeros)?;
        for s in &w.layout.specs {
            let t = c
                .get(&s.name)
                .ok_or_else(|| GraftError::WeightShapeMismatch(format!("missing tensor {}", s.name)))?;
            let dims: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
            if dims != s.shape {
                return Err(GraftError::WeightShapeMismatch(format!(
                    "{}: expected {:?}, found {:?}",
                    s.name, s.shape, dims
                )));
            }
            let values = t.data.to_f64()?;
            w.data[s.offset..s.offset + s.numel()].copy_from_slice(&values);
        }
        let known = w.layout.specs.len() + 1;
        if c.len() != known {
            let extra: Vec<&str> = c
                .tensors()
                .iter()
                .map(|t| t.name.as_str())
                .filter(|n| *n != ARCH_TENSOR && w.layout.spec(n).is_none())
                .collect();
            return Err(GraftError::WeightShapeMismatch(format!("unexpected tensors {extra:?}")));
        }
        Ok(w)
    }
}

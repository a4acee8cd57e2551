use crate::error::{GraftError, Result};

pub const NUM_TOKENS: usize = 24;
pub const NUM_LEVELS: usize = 4;
pub const NUM_STREAMS: usize = 2;
/// Fingertip probes per hand token.
pub const HAND_PROBES: usize = 5;
/// Side of the grid-cell neighborhood sampled around joint and hand anchors.
pub const NEIGHBORHOOD: usize = 3;

/// Architecture constants. Everything that determines tensor shapes lives
/// here so a container can be validated against it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Rows of each Fourier frequency matrix; encodings are `2 * f + 3` long.
    pub fourier_freqs: usize,
    pub tokenizer_hidden: usize,
    pub probe_hidden: usize,
    pub probe_out: usize,
    pub head_hidden: usize,
    /// Input channels of each feature-grid level.
    pub level_channels: [usize; NUM_LEVELS],
    /// Per-level projection width before fusion.
    pub level_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ArchConfig {
    /// The deployed refinement network.
    pub fn full() -> Self {
        Self {
            width: 512,
            layers: 5,
            heads: 8,
            ffn_hidden: 1024,
            fourier_freqs: 32,
            tokenizer_hidden: 128,
            probe_hidden: 64,
            probe_out: 32,
            head_hidden: 256,
            level_channels: [256; NUM_LEVELS],
            level_dim: 128,
        }
    }

    /// Desk-scale network used for finite-difference training.
    pub fn micro() -> Self {
        Self {
            width: 32,
            layers: 2,
            heads: 4,
            ffn_hidden: 64,
            fourier_freqs: 8,
            tokenizer_hidden: 32,
            probe_hidden: 16,
            probe_out: 8,
            head_hidden: 16,
            level_channels: [8; NUM_LEVELS],
            level_dim: 8,
        }
    }

    pub fn encoding_dim(&self) -> usize {
        2 * self.fourier_freqs + 3
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.width,
            self.layers,
            self.heads,
            self.ffn_hidden,
            self.fourier_freqs,
            self.tokenizer_hidden,
            self.probe_hidden,
            self.probe_out,
            self.head_hidden,
            self.level_dim,
        ];
        if positive.contains(&0) || self.level_channels.contains(&0) {
            return Err(GraftError::WeightShapeMismatch("architecture sizes must be positive".into()));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(GraftError::WeightShapeMismatch(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    /// Flat integer encoding stored next to the weights.
    pub fn to_ints(&self) -> Vec<i64> {
        let mut v: Vec<i64> = [
            self.width,
            self.layers,
            self.heads,
            self.ffn_hidden,
            self.fourier_freqs,
            self.tokenizer_hidden,
            self.probe_hidden,
            self.probe_out,
            self.head_hidden,
            self.level_dim,
        ]
        .iter()
        .map(|&x| x as i64)
        .collect();
        v.extend(self.level_channels.iter().map(|&x| x as i64));
        v
    }

    pub fn from_ints(v: &[i64]) -> Result<Self> {
        if v.len() != 10 + NUM_LEVELS || v.iter().any(|&x| x <= 0) {
            return Err(GraftError::WeightShapeMismatch(format!("bad architecture record {v:?}")));
        }
        let u = |i: usize| v[i] as usize;
        let cfg = Self {
            width: u(0),
            layers: u(1),
            heads: u(2),
            ffn_hidden: u(3),
            fourier_freqs: u(4),
            tokenizer_hidden: u(5),
            probe_hidden: u(6),
            probe_out: u(7),
            head_hidden: u(8),
            level_dim: u(9),
            level_channels: std::array::from_fn(|l| u(10 + l)),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

//! Learnable components: adaptive attention mask, intra/inter-network
//! relation encoder, prototype classifier and decoder.

mod checkpoint;
mod forward;
pub mod layers;
pub(crate) mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{ForwardTrace, Model, UnmaskedEncoding};
pub use layers::{
    gumbel_sigmoid, intra_network_encoder, multi_head_self_attention, prototype_classify,
    self_attention, sinusoidal_table, ClassScores, IntraWeights, MhsaWeights,
};
pub use params::{BlockSlots, ClassifierSlots, IntraSlots, MlpSlots, ModelParams, ParamLayout};

use crate::error::{Error, Result};

/// Whether stochastic layers (Gumbel noise, dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architectural hyperparameters. `d` is the token width of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub r: usize,
    pub d: usize,
    pub hidden_enc: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub tau_gumbel: f64,
    pub softmax_temp: f64,
    pub dropout: f64,
    pub attn_hidden: usize,
    pub dec_hidden: usize,
    pub n_classes: usize,
}

/// `round(r(r-1)/4)`, the hidden width of the mask network and decoder.
pub fn quarter_edges(r: usize) -> usize {
    ((r * r.saturating_sub(1)) as f64 / 4.0).round() as usize
}

impl ModelConfig {
    /// Defaults for `r` ROIs: d = r, L = 2, H = 10, encoder hidden 128,
    /// τ = 5, softmax temperature 0.5, dropout 0.5.
    pub fn for_rois(r: usize) -> Self {
        ModelConfig {
            r,
            d: r,
            hidden_enc: 128,
            n_blocks: 2,
            n_heads: 10,
            tau_gumbel: 5.0,
            softmax_temp: 0.5,
            dropout: 0.5,
            attn_hidden: quarter_edges(r),
            dec_hidden: quarter_edges(r),
            n_classes: 2,
        }
    }

    pub fn n_edges(&self) -> usize {
        crate::data::n_edges(self.r)
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(Error::Config(format!("r must be at least 2, got {}", self.r)));
        }
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "feature dim {} is not divisible by {} heads",
                self.d, self.n_heads
            )));
        }
        if self.tau_gumbel <= 0.0 || self.softmax_temp <= 0.0 {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.attn_hidden == 0 || self.dec_hidden == 0 || self.hidden_enc == 0 || self.d == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablations {
    /// Replace the learned mask by all ones.
    pub no_mask: bool,
    /// Drop every intra-network MLP sub-layer.
    pub no_intra: bool,
    /// Linear classification head instead of cosine prototypes.
    pub no_prototype: bool,
    /// Skip the decoder-only counter-condition epochs.
    pub no_step2: bool,
    /// Drop the seed-network/prototype similarity penalty.
    pub no_reg: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 5] = ["no_mask", "no_intra", "no_prototype", "no_step2", "no_reg"];

    /// Parses a comma-separated list such as `no_step2,no_reg`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut a = Ablations::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            a.set(item, true)?;
        }
        Ok(a)
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        match name {
            "no_mask" => self.no_mask = on,
            "no_intra" => self.no_intra = on,
            "no_prototype" => self.no_prototype = on,
            "no_step2" => self.no_step2 = on,
            "no_reg" => self.no_reg = on,
            other => return Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> bool {
        match name {
            "no_mask" => self.no_mask,
            "no_intra" => self.no_intra,
            "no_prototype" => self.no_prototype,
            "no_step2" => self.no_step2,
            "no_reg" => self.no_reg,
            _ => false,
        }
    }

    pub fn to_list(&self) -> String {
        Self::NAMES.iter().filter(|n| self.get(n)).copied().collect::<Vec<_>>().join(",")
    }
}

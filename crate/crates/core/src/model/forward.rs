use ndarray::{Array1, Array2};
use rand::RngCore;

use super::layers::{
    argmax, cosine_graph, gumbel_difference, intra_graph, linear, mhsa_graph, no_rng,
    sinusoidal_table, ClassScores, Ctx, IntraVars, MhsaVars,
};
use super::params::{ClassifierSlots, IntraSlots};
use super::{Ablations, Mode, ModelConfig, ModelParams};
use crate::autograd::{softmax, Graph, Var};
use crate::data::{devectorize_symmetric, FcMatrix};
use crate::error::{Error, Result};

/// Parameters plus the fixed positional table, ready for forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub ablations: Ablations,
    pub params: ModelParams,
    positional: Array2<f64>,
}

/// Everything computed by one full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Symmetric connection weights in (0, 1), zero diagonal.
    pub mask: Array2<f64>,
    pub x_mask: FcMatrix,
    /// `Z⁰ … Z^L`, each `(R+1) × d`.
    pub z_blocks: Vec<Array2<f64>>,
    pub z_summary: Vec<f64>,
    pub z_bar: Vec<f64>,
    /// Cosine similarities to the prototypes (absent for a linear head).
    pub similarities: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub x_hat: FcMatrix,
}

/// Encoder and classifier outputs for an FC fed without masking.
#[derive(Debug, Clone, PartialEq)]
pub struct UnmaskedEncoding {
    pub z_summary: Vec<f64>,
    pub z_bar: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted: usize,
}

pub(crate) struct EncoderVars {
    pub blocks: Vec<Var>,
    pub summary: Var,
    pub z_bar: Var,
}

pub(crate) struct ClassVars {
    pub similarities: Option<Var>,
    pub logits: Var,
}

pub(crate) struct ForwardVars {
    pub mask: Option<Var>,
    pub x_mask: Var,
    pub encoder: EncoderVars,
    pub class: ClassVars,
    pub x_hat: Var,
}

fn row(v: &Array2<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

impl Model {
    pub fn new(config: ModelConfig, ablations: Ablations, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, &ablations, seed);
        Self::from_params(config, ablations, params)
    }

    /// Wraps existing parameters, checking they match the config's layout.
    pub fn from_params(config: ModelConfig, ablations: Ablations, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if ablations.no_intra && config.d != config.r {
            return Err(Error::Config("no_intra requires d == r".into()));
        }
        let reference = ModelParams::zeros(&config, &ablations);
        if reference.names() != params.names()
            || (0..params.len()).any(|s| reference.shape(s) != params.get(s).dim())
        {
            return Err(Error::Config("parameter layout does not match the configuration".into()));
        }
        let positional = sinusoidal_table(config.r + 1, config.d);
        Ok(Model { config, ablations, params, positional })
    }

    /// Fixed `(R+1) × d` positional table.
    pub fn positional(&self) -> &Array2<f64> {
        &self.positional
    }

    /// Places every parameter on the graph; `trainable(slot)` decides which
    /// ones receive gradients.
    pub(crate) fn bind(&self, g: &mut Graph, trainable: impl Fn(usize) -> bool) -> Vec<Var> {
        (0..self.params.len())
            .map(|s| {
                let v = self.params.get(s).clone();
                if trainable(s) {
                    g.param(s, v)
                } else {
                    g.constant(v)
                }
            })
            .collect()
    }

    fn intra_vars(pv: &[Var], s: &IntraSlots) -> IntraVars {
        IntraVars {
            ln_g: pv[s.ln_g],
            ln_b: pv[s.ln_b],
            fc1_w: pv[s.fc1_w],
            fc1_b: pv[s.fc1_b],
            fc2_w: pv[s.fc2_w],
            fc2_b: pv[s.fc2_b],
        }
    }

    /// Mask network on the upper-triangle input; returns (mask, masked input)
    /// as 1×P rows.
    pub(crate) fn mask_graph(
        &self,
        g: &mut Graph,
        pv: &[Var],
        x_upper: &[f64],
        ctx: &mut Ctx<'_>,
    ) -> Result<(Option<Var>, Var)> {
        let p = self.config.n_edges();
        if x_upper.len() != p {
            return Err(Error::Shape(format!("expected {p} connections, got {}", x_upper.len())));
        }
        let x = g.constant(Array2::from_shape_vec((1, p), x_upper.to_vec()).expect("row"));
        let Some(attn) = &self.params.layout().attn else {
            return Ok((None, x));
        };
        let h = linear(g, x, pv[attn.w1], pv[attn.b1]);
        let h = g.relu(h);
        let mut logits = linear(g, h, pv[attn.w2], pv[attn.b2]);
        if ctx.mode == Mode::Train {
            let noise = Array2::from_shape_vec((1, p), gumbel_difference(p, ctx.rng)).expect("row");
            logits = g.add_const(logits, &noise);
        }
        let scaled = g.scale(logits, 1.0 / self.config.tau_gumbel);
        let mask = g.sigmoid(scaled);
        let x_vals = g.value(x).clone();
        let x_mask = g.mul_const(mask, x_vals);
        Ok((Some(mask), x_mask))
    }

    /// Relation encoder on a 1×P (masked) upper-triangle row.
    pub(crate) fn encode_graph(
        &self,
        g: &mut Graph,
        pv: &[Var],
        x_upper: Var,
        ctx: &mut Ctx<'_>,
    ) -> EncoderVars {
        let layout = self.params.layout();
        let r = self.config.r;
        let xm = g.devectorize(x_upper, r);
        let z = match &layout.embed {
            Some(s) => intra_graph(g, xm, &Self::intra_vars(pv, s), ctx),
            None => xm,
        };
        let tokens = g.concat_rows(&[pv[layout.summary], z]);
        let mut z = g.add_const(tokens, &self.positional);
        let mut blocks = vec![z];
        for b in &layout.blocks {
            let w = MhsaVars {
                ln_g: pv[b.ln_g],
                ln_b: pv[b.ln_b],
                wq: pv[b.wq],
                bq: pv[b.bq],
                wk: pv[b.wk],
                bk: pv[b.bk],
                wv: pv[b.wv],
                bv: pv[b.bv],
                wo: pv[b.wo],
            };
            let (inter, _) = mhsa_graph(g, z, &w, self.config.n_heads, ctx);
            let z_prime = g.add(inter, z);
            z = match &b.intra {
                Some(s) => {
                    let local = intra_graph(g, z_prime, &Self::intra_vars(pv, s), ctx);
                    g.add(local, z_prime)
                }
                None => z_prime,
            };
            blocks.push(z);
        }
        let summary = g.slice_rows(z, 0, 1);
        let networks = g.slice_rows(z, 1, r + 1);
        let z_bar = g.mean_rows(networks);
        EncoderVars { blocks, summary, z_bar }
    }

    pub(crate) fn classify_graph(&self, g: &mut Graph, pv: &[Var], summary: Var) -> Result<ClassVars> {
        match self.params.layout().classifier {
            ClassifierSlots::Prototypes(p) => {
                let sims = cosine_graph(g, summary, pv[p])?;
                let logits = g.scale(sims, 1.0 / self.config.softmax_temp);
                Ok(ClassVars { similarities: Some(sims), logits })
            }
            ClassifierSlots::Linear { w, b } => {
                Ok(ClassVars { similarities: None, logits: linear(g, summary, pv[w], pv[b]) })
            }
        }
    }

    /// Decoder to a 1×P upper-triangle row.
    pub(crate) fn decode_graph(&self, g: &mut Graph, pv: &[Var], feature: Var) -> Var {
        let dec = &self.params.layout().decoder;
        let h = linear(g, feature, pv[dec.w1], pv[dec.b1]);
        let h = g.relu(h);
        linear(g, h, pv[dec.w2], pv[dec.b2])
    }

    pub(crate) fn forward_graph(
        &self,
        g: &mut Graph,
        pv: &[Var],
        x: &FcMatrix,
        ctx: &mut Ctx<'_>,
    ) -> Result<ForwardVars> {
        if x.r() != self.config.r {
            return Err(Error::Shape(format!("model expects {} ROIs, got {}", self.config.r, x.r())));
        }
        let (mask, x_mask) = self.mask_graph(g, pv, &x.upper(), ctx)?;
        let encoder = self.encode_graph(g, pv, x_mask, ctx);
        let class = self.classify_graph(g, pv, encoder.summary)?;
        let feature = g.add(encoder.z_bar, encoder.summary);
        let x_hat = self.decode_graph(g, pv, feature);
        Ok(ForwardVars { mask, x_mask, encoder, class, x_hat })
    }

    /// Full pass: mask → encoder → classifier, and the reconstruction from
    /// `z̄ + z_summary`.
    pub fn forward(&self, x: &FcMatrix, mode: Mode, rng: &mut dyn RngCore) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g, |_| false);
        let mut ctx = Ctx { mode, dropout: self.config.dropout, rng };
        let vars = self.forward_graph(&mut g, &pv, x, &mut ctx)?;
        let r = self.config.r;
        let mask = match vars.mask {
            Some(m) => devectorize_symmetric(&row(g.value(m)), r)?,
            None => devectorize_symmetric(&vec![1.0; self.config.n_edges()], r)?,
        };
        let logits = row(g.value(vars.class.logits));
        let probs = softmax(logits.iter().copied());
        let similarities = vars.class.similarities.map(|s| row(g.value(s)));
        let predicted = argmax(similarities.as_deref().unwrap_or(&logits));
        Ok(ForwardTrace {
            mask,
            x_mask: FcMatrix::from_upper(&row(g.value(vars.x_mask)), r)?,
            z_blocks: vars.encoder.blocks.iter().map(|b| g.value(*b).clone()).collect(),
            z_summary: row(g.value(vars.encoder.summary)),
            z_bar: row(g.value(vars.encoder.z_bar)),
            similarities,
            logits,
            probs,
            predicted,
            x_hat: FcMatrix::from_upper(&row(g.value(vars.x_hat)), r)?,
        })
    }

    /// Deterministic eval-mode [`Model::forward`].
    pub fn forward_eval(&self, x: &FcMatrix) -> Result<ForwardTrace> {
        self.forward(x, Mode::Eval, &mut no_rng())
    }

    /// Eval-mode attention mask alone.
    pub fn mask_eval(&self, x: &FcMatrix) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g, |_| false);
        let mut rng = no_rng();
        let mut ctx = Ctx { mode: Mode::Eval, dropout: 0.0, rng: &mut rng };
        let (mask, _) = self.mask_graph(&mut g, &pv, &x.upper(), &mut ctx)?;
        let upper = match mask {
            Some(m) => row(g.value(m)),
            None => vec![1.0; self.config.n_edges()],
        };
        devectorize_symmetric(&upper, self.config.r)
    }

    /// Decoder output for an arbitrary 1×d feature.
    pub fn decode(&self, feature: &[f64]) -> Result<FcMatrix> {
        if feature.len() != self.config.d {
            return Err(Error::Shape(format!("decoder expects width {}, got {}", self.config.d, feature.len())));
        }
        let mut g = Graph::new();
        let pv = self.bind(&mut g, |_| false);
        let f = g.constant(Array2::from_shape_vec((1, feature.len()), feature.to_vec()).expect("row"));
        let out = self.decode_graph(&mut g, &pv, f);
        FcMatrix::from_upper(&row(g.value(out)), self.config.r)
    }

    /// Eval-mode encoder and classifier on an FC without applying the mask,
    /// the path used for simulated FCs.
    pub fn encode_unmasked(&self, fc: &FcMatrix) -> Result<UnmaskedEncoding> {
        if fc.r() != self.config.r {
            return Err(Error::Shape(format!("model expects {} ROIs, got {}", self.config.r, fc.r())));
        }
        let mut g = Graph::new();
        let pv = self.bind(&mut g, |_| false);
        let mut rng = no_rng();
        let mut ctx = Ctx { mode: Mode::Eval, dropout: 0.0, rng: &mut rng };
        let p = self.config.n_edges();
        let x = g.constant(Array2::from_shape_vec((1, p), fc.upper()).expect("row"));
        let enc = self.encode_graph(&mut g, &pv, x, &mut ctx);
        let class = self.classify_graph(&mut g, &pv, enc.summary)?;
        let logits = row(g.value(class.logits));
        let sims = class.similarities.map(|s| row(g.value(s)));
        Ok(UnmaskedEncoding {
            z_summary: row(g.value(enc.summary)),
            z_bar: row(g.value(enc.z_bar)),
            predicted: argmax(sims.as_deref().unwrap_or(&logits)),
            probs: softmax(logits),
        })
    }

    /// Class prototypes, if the model has a prototype classifier.
    pub fn prototypes(&self) -> Option<&Array2<f64>> {
        match self.params.layout().classifier {
            ClassifierSlots::Prototypes(p) => Some(self.params.get(p)),
            ClassifierSlots::Linear { .. } => None,
        }
    }

    /// Classifier scores for a given summary vector.
    pub fn classify_summary(&self, summary: &[f64]) -> Result<ClassScores> {
        match self.prototypes() {
            Some(p) => super::layers::prototype_classify(summary, p, self.config.softmax_temp),
            None => {
                let ClassifierSlots::Linear { w, b } = self.params.layout().classifier else { unreachable!() };
                let z = Array1::from_vec(summary.to_vec());
                let logits: Vec<f64> =
                    (self.params.get(w).dot(&z) + self.params.get(b).row(0)).to_vec();
                let predicted = argmax(&logits);
                Ok(ClassScores { similarities: Vec::new(), probs: softmax(logits), predicted })
            }
        }
    }
}

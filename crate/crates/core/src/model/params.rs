use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Ablations, ModelConfig};

/// Slots of one pre-norm MLP applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraSlots {
    pub ln_g: usize,
    pub ln_b: usize,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSlots {
    pub ln_g: usize,
    pub ln_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub intra: Option<IntraSlots>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierSlots {
    Prototypes(usize),
    Linear { w: usize, b: usize },
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSlots {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where each learnable tensor lives in [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub attn: Option<MlpSlots>,
    pub embed: Option<IntraSlots>,
    pub blocks: Vec<BlockSlots>,
    pub summary: usize,
    pub classifier: ClassifierSlots,
    pub decoder: MlpSlots,
}

/// Every learnable tensor, in a fixed order with hierarchical names. Linear
/// weights are stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    tensors: Vec<Array2<f64>>,
    layout: ParamLayout,
}

enum Init {
    Ones,
    Zeros,
    FanIn(usize),
    SmallNormal,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn intra(&mut self, prefix: &str, d_in: usize, hidden: usize, d_out: usize) -> IntraSlots {
        IntraSlots {
            ln_g: self.add(format!("{prefix}.ln.weight"), (1, d_in), Init::Ones),
            ln_b: self.add(format!("{prefix}.ln.bias"), (1, d_in), Init::Zeros),
            fc1_w: self.add(format!("{prefix}.fc1.weight"), (hidden, d_in), Init::FanIn(d_in)),
            fc1_b: self.add(format!("{prefix}.fc1.bias"), (1, hidden), Init::FanIn(d_in)),
            fc2_w: self.add(format!("{prefix}.fc2.weight"), (d_out, hidden), Init::FanIn(hidden)),
            fc2_b: self.add(format!("{prefix}.fc2.bias"), (1, d_out), Init::FanIn(hidden)),
        }
    }

    fn mlp(&mut self, prefix: &str, d_in: usize, hidden: usize, d_out: usize) -> MlpSlots {
        MlpSlots {
            w1: self.add(format!("{prefix}.fc1.weight"), (hidden, d_in), Init::FanIn(d_in)),
            b1: self.add(format!("{prefix}.fc1.bias"), (1, hidden), Init::FanIn(d_in)),
            w2: self.add(format!("{prefix}.fc2.weight"), (d_out, hidden), Init::FanIn(hidden)),
            b2: self.add(format!("{prefix}.fc2.bias"), (1, d_out), Init::FanIn(hidden)),
        }
    }
}

fn plan(cfg: &ModelConfig, ablations: &Ablations) -> (Builder, ParamLayout) {
    let (p, d) = (cfg.n_edges(), cfg.d);
    let mut b = Builder { names: Vec::new(), shapes: Vec::new(), inits: Vec::new() };
    let attn = (!ablations.no_mask).then(|| b.mlp("attn", p, cfg.attn_hidden, p));
    let embed = (!ablations.no_intra).then(|| b.intra("encoder.embed", cfg.r, cfg.hidden_enc, d));
    let blocks = (0..cfg.n_blocks)
        .map(|l| {
            let pre = format!("encoder.block{l}");
            BlockSlots {
                ln_g: b.add(format!("{pre}.mhsa.ln.weight"), (1, d), Init::Ones),
                ln_b: b.add(format!("{pre}.mhsa.ln.bias"), (1, d), Init::Zeros),
                wq: b.add(format!("{pre}.mhsa.q.weight"), (d, d), Init::FanIn(d)),
                bq: b.add(format!("{pre}.mhsa.q.bias"), (1, d), Init::FanIn(d)),
                wk: b.add(format!("{pre}.mhsa.k.weight"), (d, d), Init::FanIn(d)),
                bk: b.add(format!("{pre}.mhsa.k.bias"), (1, d), Init::FanIn(d)),
                wv: b.add(format!("{pre}.mhsa.v.weight"), (d, d), Init::FanIn(d)),
                bv: b.add(format!("{pre}.mhsa.v.bias"), (1, d), Init::FanIn(d)),
                wo: b.add(format!("{pre}.mhsa.out.weight"), (d, d), Init::FanIn(d)),
                intra: (!ablations.no_intra).then(|| b.intra(&format!("{pre}.intra"), d, cfg.hidden_enc, d)),
            }
        })
        .collect();
    let summary = b.add("encoder.summary".into(), (1, d), Init::SmallNormal);
    let classifier = if ablations.no_prototype {
        ClassifierSlots::Linear {
            w: b.add("head.weight".into(), (cfg.n_classes, d), Init::FanIn(d)),
            b: b.add("head.bias".into(), (1, cfg.n_classes), Init::FanIn(d)),
        }
    } else {
        ClassifierSlots::Prototypes(b.add("prototypes".into(), (cfg.n_classes, d), Init::SmallNormal))
    };
    let decoder = b.mlp("decoder", d, cfg.dec_hidden, p);
    (b, ParamLayout { attn, embed, blocks, summary, classifier, decoder })
}

impl ModelParams {
    /// Fan-in uniform initialisation for linear layers, N(0, 0.02²) for the
    /// summary token and prototypes, identity layer norms.
    pub fn init(cfg: &ModelConfig, ablations: &Ablations, seed: u64) -> Self {
        let (b, layout) = plan(cfg, ablations);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&shape, init)| match init {
                Init::Ones => Array2::ones(shape),
                Init::Zeros => Array2::zeros(shape),
                Init::FanIn(n) => {
                    let bound = 1.0 / (*n as f64).sqrt();
                    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
                }
                Init::SmallNormal => Array2::from_shape_simple_fn(shape, || {
                    0.02 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                }),
            })
            .collect();
        ModelParams { names: b.names, shapes: b.shapes, tensors, layout }
    }

    /// Zero-valued parameters with the layout of `cfg`.
    pub fn zeros(cfg: &ModelConfig, ablations: &Ablations) -> Self {
        let (b, layout) = plan(cfg, ablations);
        let tensors = b.shapes.iter().map(|&s| Array2::zeros(s)).collect();
        ModelParams { names: b.names, shapes: b.shapes, tensors, layout }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, slot: usize) -> (usize, usize) {
        self.shapes[slot]
    }

    pub fn get(&self, slot: usize) -> &Array2<f64> {
        &self.tensors[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Array2<f64> {
        &mut self.tensors[slot]
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.slot_of(name).map(|s| &self.tensors[s])
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn is_decoder(&self, slot: usize) -> bool {
        self.names[slot].starts_with("decoder.")
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    /// Replaces a tensor, checking its shape.
    pub fn set(&mut self, slot: usize, value: Array2<f64>) -> Result<(), String> {
        if value.dim() != self.shapes[slot] {
            return Err(format!(
                "{}: expected shape {:?}, got {:?}",
                self.names[slot],
                self.shapes[slot],
                value.dim()
            ));
        }
        self.tensors[slot] = value;
        Ok(())
    }
}

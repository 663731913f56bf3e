//! Central finite-difference check of every parameter tensor's gradient.

use crate::autograd::{Graph, Var};
use crate::data::FcMatrix;
use crate::error::{Error, Result};
use crate::model::layers::{no_rng, Ctx};
use crate::model::params::ClassifierSlots;
use crate::model::{Mode, Model};

use super::losses::{recon_graph, reg_graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Recon,
    Class,
    Reg,
    /// Step-2 classification of an FC decoded with a donor's summary.
    CounterClass,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::Recon, LossTerm::Class, LossTerm::Reg, LossTerm::CounterClass];
}

/// One subject plus an opposite-class donor.
#[derive(Debug, Clone)]
pub struct Probe<'a> {
    pub x: &'a FcMatrix,
    pub label: usize,
    pub donor: &'a FcMatrix,
    pub donor_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`; the absolute difference when both
    /// gradients vanish.
    pub rel_error: f64,
    pub grad_norm: f64,
}

fn term_graph(model: &Model, g: &mut Graph, pv: &[Var], probe: &Probe<'_>, term: LossTerm) -> Result<Var> {
    let mut rng = no_rng();
    let mut ctx = Ctx { mode: Mode::Eval, dropout: 0.0, rng: &mut rng };
    let fv = model.forward_graph(g, pv, probe.x, &mut ctx)?;
    match term {
        LossTerm::Recon => Ok(recon_graph(g, fv.x_hat, fv.x_mask)),
        LossTerm::Class => Ok(g.cross_entropy(fv.class.logits, probe.label)),
        LossTerm::Reg => match model.params.layout().classifier {
            ClassifierSlots::Prototypes(p) => reg_graph(g, fv.encoder.z_bar, pv[p]),
            ClassifierSlots::Linear { .. } => Err(Error::Config("regulariser needs prototypes".into())),
        },
        LossTerm::CounterClass => {
            let donor = model.forward_graph(g, pv, probe.donor, &mut ctx)?;
            let feature = g.add(fv.encoder.z_bar, donor.encoder.summary);
            let simulated = model.decode_graph(g, pv, feature);
            let enc = model.encode_graph(g, pv, simulated, &mut ctx);
            let cls = model.classify_graph(g, pv, enc.summary)?;
            Ok(g.cross_entropy(cls.logits, probe.donor_label))
        }
    }
}

fn loss_value(model: &Model, probe: &Probe<'_>, term: LossTerm) -> Result<f64> {
    let mut g = Graph::new();
    let pv = model.bind(&mut g, |_| false);
    let root = term_graph(model, &mut g, &pv, probe, term)?;
    Ok(g.scalar(root))
}

fn l2(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares eval-mode analytic gradients with `(f(θ+h) − f(θ−h)) / 2h` for
/// every scalar of every tensor.
pub fn gradient_check(model: &Model, probe: &Probe<'_>, term: LossTerm, h: f64) -> Result<Vec<TensorCheck>> {
    let mut g = Graph::new();
    let pv = model.bind(&mut g, |_| true);
    let root = term_graph(model, &mut g, &pv, probe, term)?;
    let grads = g.backward(root, model.params.len());

    let mut work = model.clone();
    let mut out = Vec::with_capacity(model.params.len());
    for slot in 0..model.params.len() {
        let n = model.params.get(slot).len();
        let analytic: Vec<f64> = match grads.get(slot) {
            Some(a) => a.iter().copied().collect(),
            None => vec![0.0; n],
        };
        let mut numeric = Vec::with_capacity(n);
        for k in 0..n {
            let orig = model.params.get(slot).as_slice().expect("contiguous")[k];
            work.params.get_mut(slot).as_slice_mut().expect("contiguous")[k] = orig + h;
            let up = loss_value(&work, probe, term)?;
            work.params.get_mut(slot).as_slice_mut().expect("contiguous")[k] = orig - h;
            let down = loss_value(&work, probe, term)?;
            work.params.get_mut(slot).as_slice_mut().expect("contiguous")[k] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff = l2(analytic.iter().zip(&numeric).map(|(a, b)| a - b));
        let scale = l2(analytic.iter().copied()).max(l2(numeric.iter().copied()));
        out.push(TensorCheck {
            name: model.params.name(slot).to_string(),
            rel_error: if scale > 1e-10 { diff / scale } else { diff },
            grad_norm: l2(analytic.iter().copied()),
        });
    }
    Ok(out)
}

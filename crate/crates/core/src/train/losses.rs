use ndarray::Array2;
use rand::{Rng, RngCore};

use crate::autograd::{Graph, Var};
use crate::data::FcMatrix;
use crate::error::{Error, Result};
use crate::model::layers::{prototype_classify, MIN_NORM};

/// Mean absolute error over the upper triangle. The target is the masked
/// input, not the raw FC.
pub fn loss_recon(x_hat: &FcMatrix, x_mask: &FcMatrix) -> Result<f64> {
    if x_hat.r() != x_mask.r() {
        return Err(Error::Shape(format!("{} vs {} ROIs", x_hat.r(), x_mask.r())));
    }
    let (a, b) = (x_hat.upper(), x_mask.upper());
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64)
}

/// Cross-entropy `−ln probs[label]`.
pub fn loss_class(probs: &[f64], label: usize) -> Result<f64> {
    let p = *probs
        .get(label)
        .ok_or_else(|| Error::Shape(format!("label {label} outside {} classes", probs.len())))?;
    if p <= 0.0 {
        return Err(Error::Domain(p));
    }
    Ok(-p.ln())
}

/// `Σ_c |cos(z̄, p_c)|`: pushes the per-network average away from every
/// class prototype so class evidence concentrates in the summary token.
pub fn loss_reg(z_bar: &[f64], prototypes: &Array2<f64>) -> Result<f64> {
    let scores = prototype_classify(z_bar, prototypes, 1.0)?;
    Ok(scores.similarities.iter().map(|s| s.abs()).sum())
}

pub(crate) fn recon_graph(g: &mut Graph, x_hat: Var, target: Var) -> Var {
    let d = g.sub(x_hat, target);
    let a = g.abs(d);
    g.mean(a)
}

pub(crate) fn reg_graph(g: &mut Graph, z_bar: Var, prototypes: Var) -> Result<Var> {
    let zn = crate::model::layers::norm(g.value(z_bar).iter());
    if zn < MIN_NORM {
        return Err(Error::DegenerateVector(zn));
    }
    let c = g.cosine(z_bar, prototypes);
    let a = g.abs(c);
    Ok(g.sum(a))
}

/// Picks, for every sample, a uniformly random donor of a different label.
/// `None` marks samples with no opposite-class member in the batch; they
/// take no part in the counter-condition losses.
pub fn shuffle_opposite(labels: &[usize], rng: &mut dyn RngCore) -> Vec<Option<usize>> {
    labels
        .iter()
        .map(|&own| {
            let pool: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != own).collect();
            (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())])
        })
        .collect()
}

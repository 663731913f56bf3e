use rand::RngCore;

use super::losses::{recon_graph, reg_graph, shuffle_opposite};
use super::optim::AdamW;
use super::TrainConfig;
use crate::autograd::{Graph, Var};
use crate::data::SubjectRecord;
use crate::error::{Error, Result};
use crate::model::layers::{no_rng, Ctx};
use crate::model::params::ClassifierSlots;
use crate::model::{Mode, Model};

/// Batch-mean loss components of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub recon: f64,
    pub class: f64,
    pub reg: f64,
    pub total: f64,
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    g.scale(acc, 1.0 / terms.len() as f64)
}

/// Step-1 graph for a batch with every parameter trainable; returns the
/// batch-mean total and its components.
pub(crate) fn step1_objective(
    model: &Model,
    g: &mut Graph,
    pv: &[Var],
    batch: &[&SubjectRecord],
    use_reg: bool,
    ctx: &mut Ctx<'_>,
) -> Result<(Var, StepLosses)> {
    let prototypes = match model.params.layout().classifier {
        ClassifierSlots::Prototypes(p) if use_reg => Some(pv[p]),
        _ => None,
    };
    let mut totals = Vec::with_capacity(batch.len());
    let mut sums = StepLosses::default();
    for rec in batch {
        let fv = model.forward_graph(g, pv, &rec.fc, ctx)?;
        let recon = recon_graph(g, fv.x_hat, fv.x_mask);
        let class = g.cross_entropy(fv.class.logits, rec.label);
        let mut total = g.add(recon, class);
        sums.recon += g.scalar(recon);
        sums.class += g.scalar(class);
        if let Some(p) = prototypes {
            let reg = reg_graph(g, fv.encoder.z_bar, p)?;
            sums.reg += g.scalar(reg);
            total = g.add(total, reg);
        }
        totals.push(total);
    }
    let root = mean_of(g, &totals);
    let n = batch.len() as f64;
    let losses = StepLosses {
        recon: sums.recon / n,
        class: sums.class / n,
        reg: sums.reg / n,
        total: g.scalar(root),
    };
    Ok((root, losses))
}

/// Step 1: train-mode forward, `L_recon + L_class + L_reg`, one AdamW step on
/// all parameters.
pub fn step1_update(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &[&SubjectRecord],
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut g = Graph::new();
    let pv = model.bind(&mut g, |_| true);
    let mut ctx = Ctx { mode: Mode::Train, dropout: model.config.dropout, rng };
    let (root, losses) = step1_objective(model, &mut g, &pv, batch, !cfg.ablations.no_reg, &mut ctx)?;
    let grads = g.backward(root, model.params.len());
    opt.update(&mut model.params, &grads);
    Ok(losses)
}

/// Step-2 graph: frozen eval-mode encoder, decoder trainable through
/// `pv`. `donors[i]` is the batch index whose summary sample `i` borrows.
pub(crate) fn step2_objective(
    model: &Model,
    g: &mut Graph,
    pv: &[Var],
    batch: &[&SubjectRecord],
    donors: &[Option<usize>],
    cfg: &TrainConfig,
) -> Result<(Var, StepLosses)> {
    if donors.iter().all(Option::is_none) {
        return Err(Error::NoValidPairs);
    }
    let mut rng = no_rng();
    let mut ctx = Ctx { mode: Mode::Eval, dropout: 0.0, rng: &mut rng };
    let mut fwd = Vec::with_capacity(batch.len());
    for rec in batch {
        fwd.push(model.forward_graph(g, pv, &rec.fc, &mut ctx)?);
    }
    let mut totals = Vec::new();
    let (mut recon_sum, mut class_sum) = (0.0, 0.0);
    for (i, donor) in donors.iter().enumerate() {
        let Some(j) = *donor else { continue };
        let recon = recon_graph(g, fwd[i].x_hat, fwd[i].x_mask);
        let feature = g.add(fwd[i].encoder.z_bar, fwd[j].encoder.summary);
        let simulated = model.decode_graph(g, pv, feature);
        let enc = model.encode_graph(g, pv, simulated, &mut ctx);
        let cls = model.classify_graph(g, pv, enc.summary)?;
        let class = g.cross_entropy(cls.logits, batch[j].label);
        recon_sum += g.scalar(recon);
        class_sum += g.scalar(class);
        let a = g.scale(recon, cfg.lambda_recon);
        let b = g.scale(class, cfg.lambda_class);
        totals.push(g.add(a, b));
    }
    let root = mean_of(g, &totals);
    let n = totals.len() as f64;
    let losses = StepLosses { recon: recon_sum / n, class: class_sum / n, reg: 0.0, total: g.scalar(root) };
    Ok((root, losses))
}

/// Step 2: only the decoder learns. Each sample is decoded from its own
/// `z̄` plus an opposite-class summary, re-encoded without masking, and
/// must be classified as the donor's class; own reconstruction is kept.
pub fn step2_update(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &[&SubjectRecord],
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<StepLosses> {
    let labels: Vec<usize> = batch.iter().map(|r| r.label).collect();
    let donors = shuffle_opposite(&labels, rng);
    let mut g = Graph::new();
    let pv = model.bind(&mut g, |s| model.params.is_decoder(s));
    let (root, losses) = step2_objective(model, &mut g, &pv, batch, &donors, cfg)?;
    let grads = g.backward(root, model.params.len());
    opt.update(&mut model.params, &grads);
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Dataset, FcMatrix, SyntheticSpec};
    use crate::model::{Ablations, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(r: usize, n: usize, seed: u64) -> Dataset {
        let planted = crate::data::planted_module(r, 8, seed);
        generate_synthetic(&SyntheticSpec {
            r,
            n_per_class: n,
            planted_edges: planted,
            ..SyntheticSpec::benchmark(seed)
        })
        .unwrap()
    }

    fn small_model(r: usize, a: Ablations) -> Model {
        Model::new(ModelConfig { hidden_enc: 16, n_heads: 2, ..ModelConfig::for_rois(r) }, a, 3).unwrap()
    }

    #[test]
    fn zero_model_on_zero_input_reconstructs_exactly() {
        let mut model = small_model(6, Ablations::default());
        for s in 0..model.params.len() {
            if model.params.is_decoder(s) {
                model.params.get_mut(s).fill(0.0);
            }
        }
        let rec = SubjectRecord {
            subject_id: "z".into(),
            label: 0,
            fc: FcMatrix::zeros(6),
            site: None,
            clinical_score: None,
            subtype: None,
        };
        let cfg = TrainConfig::default();
        let mut opt = AdamW::new(&model.params, cfg.lr_step1, cfg.weight_decay);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = step1_update(&mut model, &mut opt, &[&rec], &cfg, &mut rng).unwrap();
        assert_eq!(l.recon, 0.0);
    }

    #[test]
    fn step1_loss_decreases() {
        let ds = data(10, 16, 2);
        let batch: Vec<&SubjectRecord> = ds.records().iter().collect();
        let mut model = small_model(10, Ablations::default());
        let cfg = TrainConfig { lr_step1: 2e-3, ..TrainConfig::default() };
        let mut opt = AdamW::new(&model.params, cfg.lr_step1, cfg.weight_decay);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let first = step1_update(&mut model, &mut opt, &batch, &cfg, &mut rng).unwrap().total;
        let mut last = first;
        for _ in 0..49 {
            last = step1_update(&mut model, &mut opt, &batch, &cfg, &mut rng).unwrap().total;
        }
        assert!(last < 0.8 * first, "{first} -> {last}");
    }

    #[test]
    fn linear_head_has_no_reg_term() {
        let ds = data(8, 4, 1);
        let batch: Vec<&SubjectRecord> = ds.records().iter().collect();
        let a = Ablations { no_prototype: true, ..Default::default() };
        let mut model = small_model(8, a);
        let cfg = TrainConfig { ablations: a, ..TrainConfig::default() };
        let mut opt = AdamW::new(&model.params, cfg.lr_step1, cfg.weight_decay);
        let l = step1_update(&mut model, &mut opt, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(l.reg, 0.0);
        assert!((l.total - (l.recon + l.class)).abs() < 1e-9);
    }

    #[test]
    fn step2_only_moves_decoder() {
        let ds = data(8, 6, 5);
        let batch: Vec<&SubjectRecord> = ds.records().iter().collect();
        let mut model = small_model(8, Ablations::default());
        let before = model.params.clone();
        let cfg = TrainConfig::default();
        let mut opt = AdamW::new(&model.params, cfg.lr_step2, cfg.weight_decay);
        let l = step2_update(&mut model, &mut opt, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((l.total - (cfg.lambda_recon * l.recon + cfg.lambda_class * l.class)).abs() < 1e-9);
        for s in 0..model.params.len() {
            if model.params.is_decoder(s) {
                assert_ne!(model.params.get(s), before.get(s));
            } else {
                assert_eq!(model.params.get(s), before.get(s), "{}", model.params.name(s));
            }
        }
    }

    #[test]
    fn step2_needs_pairs() {
        let ds = data(8, 3, 5);
        let patients: Vec<&SubjectRecord> = ds.records().iter().filter(|r| r.label == 1).collect();
        let mut model = small_model(8, Ablations::default());
        let cfg = TrainConfig::default();
        let mut opt = AdamW::new(&model.params, cfg.lr_step2, cfg.weight_decay);
        let err = step2_update(&mut model, &mut opt, &patients, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::NoValidPairs)));
    }
}

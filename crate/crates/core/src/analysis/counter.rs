use crate::data::{Dataset, FcMatrix, SubjectRecord, PATIENT};
use crate::error::{Error, Result};
use crate::model::layers::MIN_NORM;
use crate::model::Model;
use crate::train::{evaluate, metric_set, MetricSet};

/// How the extreme-|diff| connections of each individual are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtremeMode {
    /// Zero the top 1% as outliers.
    #[default]
    Exclude,
    /// Keep only the top 1%.
    Keep,
}

impl std::str::FromStr for ExtremeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(ExtremeMode::Exclude),
            "keep" => Ok(ExtremeMode::Keep),
            other => Err(Error::Config(format!("extreme mode must be exclude or keep, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for ExtremeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExtremeMode::Exclude => "exclude",
            ExtremeMode::Keep => "keep",
        })
    }
}

/// The other class of a two-class problem.
pub fn opposite(label: usize) -> usize {
    1 - label.min(1)
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn require_prototypes(model: &Model) -> Result<&ndarray::Array2<f64>> {
    model
        .prototypes()
        .ok_or_else(|| Error::Config("counter-condition analysis needs a prototype classifier".into()))
}

/// `decode(z̄ + p_c')` where `p_c'` is prototype `target` rescaled to
/// `summary_norm`. Only the norm of the subject's summary enters.
pub fn pfc_from_features(model: &Model, z_bar: &[f64], summary_norm: f64, target: usize) -> Result<FcMatrix> {
    let protos = require_prototypes(model)?;
    if target >= protos.nrows() {
        return Err(Error::Config(format!("no prototype for class {target}")));
    }
    let p = protos.row(target).to_vec();
    let pn = l2(&p);
    if pn < MIN_NORM {
        return Err(Error::DegeneratePrototype(pn));
    }
    let feature: Vec<f64> = z_bar.iter().zip(&p).map(|(z, q)| z + q * summary_norm / pn).collect();
    model.decode(&feature)
}

/// Prototype-guided FC of one subject toward `target` (eval mode).
pub fn generate_pfc(model: &Model, fc: &FcMatrix, target: usize) -> Result<FcMatrix> {
    require_prototypes(model)?;
    let t = model.forward_eval(fc)?;
    pfc_from_features(model, &t.z_bar, l2(&t.z_summary), target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterPrediction {
    pub subject_id: String,
    pub label: usize,
    /// The counter-condition class the pFC should be assigned to.
    pub target: usize,
    pub predicted: usize,
    pub prob_patient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterEvaluation {
    pub metrics: MetricSet,
    pub n_subjects: usize,
    /// Subjects correctly classified on their own FC, in dataset order.
    pub predictions: Vec<CounterPrediction>,
}

/// Counter-condition classification: among correctly classified subjects,
/// decode the opposite-class pFC, classify it without re-masking, and score
/// it against the opposite label.
pub fn counter_condition_classify(model: &Model, dataset: &Dataset) -> Result<CounterEvaluation> {
    require_prototypes(model)?;
    let conventional = evaluate(model, dataset)?;
    let mut predictions = Vec::new();
    for (rec, pred) in dataset.records().iter().zip(&conventional.predictions) {
        if pred.predicted != rec.label {
            continue;
        }
        let target = opposite(rec.label);
        let pfc = generate_pfc(model, &rec.fc, target)?;
        let enc = model.encode_unmasked(&pfc)?;
        predictions.push(CounterPrediction {
            subject_id: rec.subject_id.clone(),
            label: rec.label,
            target,
            predicted: enc.predicted,
            prob_patient: enc.probs[PATIENT],
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyFilter);
    }
    let targets: Vec<usize> = predictions.iter().map(|p| p.target).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.prob_patient).collect();
    Ok(CounterEvaluation { metrics: metric_set(&targets, &predicted, &scores), n_subjects: dataset.len(), predictions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterConditionReport {
    pub subject_id: String,
    pub label: usize,
    /// Reconstruction from the subject's own summary.
    pub own_recon: FcMatrix,
    /// pFC toward each class.
    pub pfc: Vec<FcMatrix>,
    /// Own reconstruction minus opposite-class pFC after the extreme rule;
    /// positive means the connection weakens in the counter-condition.
    pub diff: FcMatrix,
    /// The top `round(1%)` connections by |diff|: zeroed under
    /// [`ExtremeMode::Exclude`], the only ones kept under `Keep`.
    pub excluded: Vec<(usize, usize)>,
    /// Classifier probabilities of the opposite-class pFC.
    pub cc_probs: Vec<f64>,
    pub cc_correct: bool,
}

/// `round(0.01 · R(R−1)/2)`.
pub fn extreme_count(r: usize) -> usize {
    (0.01 * (r * (r.saturating_sub(1)) / 2) as f64).round() as usize
}

/// Indices of the `n` largest |values|, ties broken by lower index.
pub fn top_abs_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order.truncate(n);
    order.sort_unstable();
    order
}

/// Applies the extreme-1% rule to an upper-triangle difference vector.
pub fn apply_extreme_rule(diff: &[f64], r: usize, mode: ExtremeMode) -> (Vec<f64>, Vec<usize>) {
    let top = top_abs_indices(diff, extreme_count(r));
    let mut out = diff.to_vec();
    match mode {
        ExtremeMode::Exclude => top.iter().for_each(|&k| out[k] = 0.0),
        ExtremeMode::Keep => {
            out.iter_mut().for_each(|v| *v = 0.0);
            top.iter().for_each(|&k| out[k] = diff[k]);
        }
    }
    (out, top)
}

/// Counter-condition difference map of one subject, who must be classified
/// correctly both on their own FC and on their opposite-class pFC.
pub fn diff_map(model: &Model, rec: &SubjectRecord, mode: ExtremeMode) -> Result<CounterConditionReport> {
    require_prototypes(model)?;
    let r = model.config.r;
    let names = ["control", "patient"];
    let t = model.forward_eval(&rec.fc)?;
    if t.predicted != rec.label {
        return Err(Error::FilterFail {
            subject: rec.subject_id.clone(),
            reason: format!("own FC classified as {}", names.get(t.predicted).unwrap_or(&"?")),
        });
    }
    let norm = l2(&t.z_summary);
    let n_classes = model.config.n_classes;
    let pfc = (0..n_classes).map(|c| pfc_from_features(model, &t.z_bar, norm, c)).collect::<Result<Vec<_>>>()?;
    let target = opposite(rec.label);
    let enc = model.encode_unmasked(&pfc[target])?;
    if enc.predicted != target {
        return Err(Error::FilterFail {
            subject: rec.subject_id.clone(),
            reason: "counter-condition FC not assigned to the opposite class".into(),
        });
    }
    let raw: Vec<f64> = t.x_hat.upper().iter().zip(pfc[target].upper()).map(|(a, b)| a - b).collect();
    let (kept, top) = apply_extreme_rule(&raw, r, mode);
    let pairs = crate::data::edge_pairs(r);
    Ok(CounterConditionReport {
        subject_id: rec.subject_id.clone(),
        label: rec.label,
        own_recon: t.x_hat,
        pfc,
        diff: FcMatrix::from_upper(&kept, r)?,
        excluded: top.iter().map(|&k| pairs[k]).collect(),
        cc_probs: enc.probs,
        cc_correct: true,
    })
}

/// Diff maps for every subject that passes both classifications, plus the
/// `(subject, reason)` of those that do not.
pub fn diff_maps(
    model: &Model,
    dataset: &Dataset,
    mode: ExtremeMode,
) -> Result<(Vec<CounterConditionReport>, Vec<(String, String)>)> {
    let (mut reports, mut skipped) = (Vec::new(), Vec::new());
    for rec in dataset.records() {
        match diff_map(model, rec, mode) {
            Ok(rep) => reports.push(rep),
            Err(Error::FilterFail { subject, reason }) => skipped.push((subject, reason)),
            Err(e) => return Err(e),
        }
    }
    Ok((reports, skipped))
}

/// Elementwise mean diff of the reports with `label`; `None` if there are
/// none.
pub fn mean_diff(reports: &[CounterConditionReport], label: usize) -> Option<ndarray::Array2<f64>> {
    let sel: Vec<&CounterConditionReport> = reports.iter().filter(|r| r.label == label).collect();
    let first = sel.first()?;
    let mut acc = ndarray::Array2::zeros(first.diff.values().dim());
    for rep in &sel {
        acc += rep.diff.values();
    }
    Some(acc / sel.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablations, ModelConfig};

    fn model(r: usize) -> Model {
        Model::new(ModelConfig { hidden_enc: 16, n_heads: 2, ..ModelConfig::for_rois(r) }, Ablations::default(), 4)
            .unwrap()
    }

    #[test]
    fn exclusion_counts() {
        assert_eq!(extreme_count(200), 199);
        assert_eq!(extreme_count(20), 2);
        assert_eq!(extreme_count(10), 0);
        let v = [0.1, -0.9, 0.3, 0.9, 0.0];
        assert_eq!(top_abs_indices(&v, 2), vec![1, 3]);
        let v: Vec<f64> = (0..190).map(|k| (k as f64 * 0.37).sin()).collect();
        let (ex, top) = apply_extreme_rule(&v, 20, ExtremeMode::Exclude);
        let (kp, top2) = apply_extreme_rule(&v, 20, ExtremeMode::Keep);
        assert_eq!(top, top2);
        for k in 0..190 {
            assert_eq!(ex[k] + kp[k], v[k]);
        }
    }

    #[test]
    fn pfc_ignores_summary_direction() {
        let m = model(8);
        let z_bar: Vec<f64> = (0..8).map(|k| k as f64 * 0.1 - 0.3).collect();
        let a = pfc_from_features(&m, &z_bar, 2.0, 1).unwrap();
        let b = pfc_from_features(&m, &z_bar, 2.0, 1).unwrap();
        assert_eq!(a, b);
        let fc = FcMatrix::from_upper(&(0..28).map(|k| ((k * 7 % 11) as f64 - 5.0) / 10.0).collect::<Vec<_>>(), 8)
            .unwrap();
        let p = generate_pfc(&m, &fc, 0).unwrap();
        assert_eq!(p, generate_pfc(&m, &fc, 0).unwrap());
        for i in 0..8 {
            assert_eq!(p.values()[[i, i]], 0.0);
        }
    }

    #[test]
    fn degenerate_prototype_rejected() {
        let mut m = model(6);
        let slot = m.params.slot_of("prototypes").unwrap();
        m.params.get_mut(slot).row_mut(0).fill(0.0);
        let err = pfc_from_features(&m, &[0.1; 6], 1.0, 0);
        assert!(matches!(err, Err(Error::DegeneratePrototype(_))));
    }

    #[test]
    fn linear_head_refused() {
        let a = Ablations { no_prototype: true, ..Default::default() };
        let m = Model::new(ModelConfig { hidden_enc: 8, n_heads: 2, ..ModelConfig::for_rois(6) }, a, 1).unwrap();
        assert!(matches!(generate_pfc(&m, &FcMatrix::zeros(6), 0), Err(Error::Config(_))));
    }
}

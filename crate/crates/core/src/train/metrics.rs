use crate::data::{Dataset, PATIENT};
use crate::error::Result;
use crate::model::Model;

/// Binary diagnosis metrics; SEN is measured on patients, SPC on controls.
/// Undefined entries (e.g. AUC with one class present) are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub auc: f64,
    pub acc: f64,
    pub sen: f64,
    pub spc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub subject_id: String,
    pub label: usize,
    pub predicted: usize,
    /// Patient-class probability, the AUC score.
    pub prob_patient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricSet,
    pub predictions: Vec<Prediction>,
}

/// Mann–Whitney AUC: average ranks, ties sharing the mean rank.
pub fn auc_rank(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = mean_rank;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = (0..scores.len()).filter(|&k| positive[k]).map(|k| ranks[k]).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos * n_neg) as f64
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// AUC over `scores` (patient-class probabilities) plus ACC/SEN/SPC of the
/// hard predictions.
pub fn metric_set(labels: &[usize], predicted: &[usize], scores: &[f64]) -> MetricSet {
    let positive: Vec<bool> = labels.iter().map(|&l| l == PATIENT).collect();
    let correct = labels.iter().zip(predicted).filter(|(a, b)| a == b).count();
    let tp = (0..labels.len()).filter(|&k| positive[k] && predicted[k] == PATIENT).count();
    let tn = (0..labels.len()).filter(|&k| !positive[k] && predicted[k] != PATIENT).count();
    let n_pos = positive.iter().filter(|&&p| p).count();
    MetricSet {
        auc: auc_rank(scores, &positive),
        acc: ratio(correct, labels.len()),
        sen: ratio(tp, n_pos),
        spc: ratio(tn, labels.len() - n_pos),
    }
}

/// Eval-mode predictions for every subject and the resulting metrics.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(dataset.len());
    for rec in dataset.records() {
        let t = model.forward_eval(&rec.fc)?;
        predictions.push(Prediction {
            subject_id: rec.subject_id.clone(),
            label: rec.label,
            predicted: t.predicted,
            prob_patient: t.probs[PATIENT],
        });
    }
    let labels: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.prob_patient).collect();
    Ok(Evaluation { metrics: metric_set(&labels, &predicted, &scores), predictions })
}

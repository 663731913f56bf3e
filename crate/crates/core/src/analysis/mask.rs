use ndarray::Array2;

use super::stats::welch_t_test;
use crate::data::{Dataset, CONTROL, PATIENT};
use crate::error::{Error, Result};
use crate::model::Model;

/// Mask value at or above which a connection counts as selected.
pub const SELECT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskStats {
    /// Per class: elementwise mean of the eval-mode masks.
    pub mean_mask: Vec<Array2<f64>>,
    /// Per class: elementwise population standard deviation.
    pub std_mask: Vec<Array2<f64>>,
    /// Per class: group-mean degree centrality per ROI.
    pub degree_centrality: Vec<Vec<f64>>,
    /// Welch p per ROI on subject-level centralities (control vs patient);
    /// 1 when both groups are constant and equal, `NaN` if untestable.
    pub dc_pvalues: Vec<f64>,
    pub n_per_class: Vec<usize>,
}

impl MaskStats {
    /// `DC_patient − DC_control` per ROI.
    pub fn dc_difference(&self) -> Vec<f64> {
        self.degree_centrality[PATIENT].iter().zip(&self.degree_centrality[CONTROL]).map(|(p, c)| p - c).collect()
    }

    /// ROIs sorted by decreasing |group DC difference| (ties: lower index).
    pub fn dc_rank(&self) -> Vec<usize> {
        let d = self.dc_difference();
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[b].abs().total_cmp(&d[a].abs()).then(a.cmp(&b)));
        order
    }
}

/// Fraction of each ROI's connections with mask ≥ `threshold`.
pub fn degree_centrality(mask: &Array2<f64>, threshold: f64) -> Vec<f64> {
    let r = mask.nrows();
    (0..r)
        .map(|i| (0..r).filter(|&j| j != i && mask[[i, j]] >= threshold).count() as f64 / (r - 1) as f64)
        .collect()
}

fn dc_pvalue(a: &[f64], b: &[f64]) -> f64 {
    match welch_t_test(a, b) {
        Ok((_, p)) => p,
        Err(Error::DegenerateSample(_)) if a.len() >= 2 && b.len() >= 2 => {
            if a[0] == b[0] {
                1.0
            } else {
                0.0
            }
        }
        Err(_) => f64::NAN,
    }
}

/// Group summaries of eval-mode masks and their degree centralities.
pub fn mask_statistics(model: &Model, dataset: &Dataset) -> Result<MaskStats> {
    let r = dataset.r();
    let n_classes = dataset.class_names().len();
    let mut masks: Vec<Vec<Array2<f64>>> = vec![Vec::new(); n_classes];
    for rec in dataset.records() {
        masks[rec.label].push(model.mask_eval(&rec.fc)?);
    }
    let mut mean_mask = Vec::with_capacity(n_classes);
    let mut std_mask = Vec::with_capacity(n_classes);
    let mut subject_dc: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_classes);
    for group in &masks {
        let n = group.len().max(1) as f64;
        let mean = group.iter().fold(Array2::zeros((r, r)), |acc, m| acc + m) / n;
        let var = group.iter().fold(Array2::zeros((r, r)), |acc, m| acc + (m - &mean).mapv(|v| v * v)) / n;
        mean_mask.push(mean);
        std_mask.push(var.mapv(f64::sqrt));
        subject_dc.push(group.iter().map(|m| degree_centrality(m, SELECT_THRESHOLD)).collect());
    }
    let degree_centrality = subject_dc
        .iter()
        .map(|dcs| {
            (0..r).map(|i| dcs.iter().map(|d| d[i]).sum::<f64>() / dcs.len().max(1) as f64).collect()
        })
        .collect();
    let dc_pvalues = (0..r)
        .map(|i| {
            let col = |c: usize| subject_dc.get(c).map_or(Vec::new(), |g| g.iter().map(|d| d[i]).collect());
            dc_pvalue(&col(CONTROL), &col(PATIENT))
        })
        .collect();
    Ok(MaskStats { mean_mask, std_mask, degree_centrality, dc_pvalues, n_per_class: masks.iter().map(Vec::len).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_mask_centrality() {
        let mut m = Array2::ones((5, 5));
        for i in 0..5 {
            m[[i, i]] = 0.0;
        }
        assert_eq!(degree_centrality(&m, 0.5), vec![1.0; 5]);
        m[[0, 1]] = 0.2;
        m[[1, 0]] = 0.2;
        assert_eq!(degree_centrality(&m, 0.5)[0], 0.75);
        assert_eq!(dc_pvalue(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
    }
}

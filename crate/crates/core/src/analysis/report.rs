//! CSV outputs. Values are written with full round-trip precision.

use std::fmt::Write as _;
use std::path::Path;

use super::counter::{mean_diff, CounterConditionReport, CounterEvaluation};
use super::mask::MaskStats;
use super::subtype::SubtypeResult;
use crate::data::{edge_pairs, write_file};
use crate::error::Result;

/// Shortest round-trip formatting, switching to exponent notation for very
/// small or large magnitudes so p-values stay readable.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
            write!(f, "{:e}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

fn row_mean_offdiag(m: &ndarray::Array2<f64>, i: usize) -> f64 {
    let r = m.nrows();
    (0..r).filter(|&j| j != i).map(|j| m[[i, j]]).sum::<f64>() / (r - 1) as f64
}

/// `roi, mean_mask_<class>…, dc_<class>…, dc_diff, p_value`.
pub fn write_mask_stats(path: &Path, stats: &MaskStats, class_names: &[String]) -> Result<()> {
    let mut s = String::from("roi");
    for c in class_names {
        write!(s, ",mean_mask_{c}").unwrap();
    }
    for c in class_names {
        write!(s, ",dc_{c}").unwrap();
    }
    s.push_str(",dc_diff,p_value\n");
    let diff = stats.dc_difference();
    for i in 0..diff.len() {
        write!(s, "{i}").unwrap();
        for m in &stats.mean_mask {
            write!(s, ",{}", Num(row_mean_offdiag(m, i))).unwrap();
        }
        for dc in &stats.degree_centrality {
            write!(s, ",{}", Num(dc[i])).unwrap();
        }
        writeln!(s, ",{},{}", Num(diff[i]), Num(stats.dc_pvalues[i])).unwrap();
    }
    write_file(path, &s)
}

pub fn write_counter_metrics(path: &Path, eval: &CounterEvaluation) -> Result<()> {
    let m = &eval.metrics;
    let s = format!(
        "n_subjects,n_filtered,auc,acc,sen,spc\n{},{},{},{},{},{}\n",
        eval.n_subjects,
        eval.predictions.len(),
        Num(m.auc),
        Num(m.acc),
        Num(m.sen),
        Num(m.spc)
    );
    write_file(path, &s)
}

/// `subject, i, j, diff` over the upper triangle of every report.
pub fn write_diff_edges(path: &Path, reports: &[CounterConditionReport]) -> Result<()> {
    let mut s = String::from("subject,i,j,diff\n");
    for rep in reports {
        let r = rep.diff.r();
        for ((i, j), v) in edge_pairs(r).into_iter().zip(rep.diff.upper()) {
            writeln!(s, "{},{i},{j},{}", rep.subject_id, Num(v)).unwrap();
        }
    }
    write_file(path, &s)
}

pub fn write_subtypes(path: &Path, subjects: &[String], result: &SubtypeResult) -> Result<()> {
    let mut s = String::from("subject,cluster\n");
    for (id, c) in subjects.iter().zip(&result.assignments) {
        writeln!(s, "{id},{c}").unwrap();
    }
    write_file(path, &s)
}

/// Long-format mask means/STDs and degree centralities per group.
pub fn write_mask_plotdata(dir: &Path, stats: &MaskStats, class_names: &[String]) -> Result<()> {
    let mut s = String::from("group,i,j,mean,std\n");
    for (c, name) in class_names.iter().enumerate() {
        let r = stats.mean_mask[c].nrows();
        for (i, j) in edge_pairs(r) {
            writeln!(s, "{name},{i},{j},{},{}", Num(stats.mean_mask[c][[i, j]]), Num(stats.std_mask[c][[i, j]])).unwrap();
        }
    }
    write_file(&dir.join("mask_long.csv"), &s)?;
    let mut s = String::from("group,roi,dc\n");
    for (c, name) in class_names.iter().enumerate() {
        for (i, v) in stats.degree_centrality[c].iter().enumerate() {
            writeln!(s, "{name},{i},{}", Num(*v)).unwrap();
        }
    }
    write_file(&dir.join("dc_long.csv"), &s)
}

/// Group-mean difference maps (`own − counter`), one row per connection.
pub fn write_diff_plotdata(dir: &Path, reports: &[CounterConditionReport], class_names: &[String]) -> Result<()> {
    let mut s = String::from("group,i,j,mean_diff\n");
    for (c, name) in class_names.iter().enumerate() {
        if let Some(m) = mean_diff(reports, c) {
            for (i, j) in edge_pairs(m.nrows()) {
                writeln!(s, "{name},{i},{j},{}", Num(m[[i, j]])).unwrap();
            }
        }
    }
    write_file(&dir.join("diff_group_long.csv"), &s)
}

/// Dendrogram, per-cluster changed-connection centrality and ROI p-values.
pub fn write_subtype_plotdata(dir: &Path, result: &SubtypeResult) -> Result<()> {
    let mut s = String::from("step,a,b,height,size\n");
    for (k, m) in result.merges.iter().enumerate() {
        writeln!(s, "{k},{},{},{},{}", m.a, m.b, Num(m.height), m.size).unwrap();
    }
    write_file(&dir.join("dendrogram.csv"), &s)?;
    let r = result.changed_dc.first().map_or(0, Vec::len);
    let mut s = String::from("cluster,roi,mean_changed_dc,p_bonferroni\n");
    for c in 1..=result.k {
        let members: Vec<&Vec<f64>> =
            result.changed_dc.iter().zip(&result.assignments).filter(|(_, &a)| a == c).map(|(d, _)| d).collect();
        for i in 0..r {
            let mean = members.iter().map(|d| d[i]).sum::<f64>() / members.len().max(1) as f64;
            let p = result.roi_anova_pvalues.as_ref().map_or(f64::NAN, |p| p[i]);
            writeln!(s, "{c},{i},{},{}", Num(mean), Num(p)).unwrap();
        }
    }
    write_file(&dir.join("subtype_dc_long.csv"), &s)
}

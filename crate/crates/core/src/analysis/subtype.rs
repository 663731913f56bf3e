use super::stats::{anova_oneway, percentile};
use crate::error::{Error, Result};

/// One agglomeration step. Clusters `0..n` are the input points; the merge
/// at step `s` creates cluster `n + s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Ward distance `sqrt(2·ΔESS)`, comparable to scipy's `ward` heights.
    pub height: f64,
    pub size: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ward-linkage agglomerative clustering (Euclidean) via the Lance–Williams
/// update on squared distances. Ties go to the lowest `(i, j)` slot pair.
pub fn ward_linkage(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(&points[i], &points[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let mut active: Vec<bool> = vec![true; n];
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let nk = size[k] as f64;
            let v = ((ni + nk) * d[i][k] + (nj + nk) * d[j][k] - nk * dij) / (ni + nj + nk);
            d[i][k] = v;
            d[k][i] = v;
        }
        active[j] = false;
        size[i] += size[j];
        let (a, b) = (id[i].min(id[j]), id[i].max(id[j]));
        merges.push(Merge { a, b, height: dij.max(0.0).sqrt(), size: size[i] });
        id[i] = n + step;
    }
    merges
}

/// Flat clustering into `k` groups from a merge sequence; labels `0..k` are
/// numbered by first appearance in point order.
pub fn cut_tree(merges: &[Merge], n: usize, k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n + merges.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (s, m) in merges.iter().take(n.saturating_sub(k)).enumerate() {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra] = n + s;
        parent[rb] = n + s;
    }
    let mut labels = vec![usize::MAX; n];
    let mut roots: Vec<usize> = Vec::new();
    for (p, label) in labels.iter_mut().enumerate() {
        let root = find(&mut parent, p);
        *label = roots.iter().position(|&r| r == root).unwrap_or_else(|| {
            roots.push(root);
            roots.len() - 1
        });
    }
    labels
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtypeResult {
    /// Cluster of each patient, `1..=k`.
    pub assignments: Vec<usize>,
    pub k: usize,
    /// Bonferroni-adjusted ANOVA p per ROI on the degree centrality of
    /// changed connections; `None` when `k = 1`, `NaN` for untestable ROIs.
    pub roi_anova_pvalues: Option<Vec<f64>>,
    /// ANOVA p of clinical scores across clusters; `None` if not testable.
    pub score_anova_pvalue: Option<f64>,
    /// Per patient: degree centrality of changed connections.
    pub changed_dc: Vec<Vec<f64>>,
    pub merges: Vec<Merge>,
}

/// Per ROI, the fraction of its connections whose |diff| exceeds the
/// subject's 90th percentile of |diff|.
pub fn changed_degree_centrality(diff_upper: &[f64], r: usize) -> Vec<f64> {
    let abs: Vec<f64> = diff_upper.iter().map(|v| v.abs()).collect();
    let cut = percentile(&abs, 90.0);
    let mut dc = vec![0.0; r];
    for ((i, j), a) in crate::data::edge_pairs(r).into_iter().zip(&abs) {
        if *a > cut {
            dc[i] += 1.0;
            dc[j] += 1.0;
        }
    }
    dc.iter().map(|c| c / (r - 1) as f64).collect()
}

fn groups_of<'a>(values: &'a [f64], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut g = vec![Vec::new(); k];
    for (v, &l) in values.iter().zip(labels) {
        g[l].push(*v);
    }
    g
}

fn anova_p(groups: &[Vec<f64>]) -> f64 {
    let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    anova_oneway(&refs).map_or(f64::NAN, |(_, p)| p)
}

/// Ward clustering of patients' vectorised diff maps into `k` subtypes,
/// with per-ROI (Bonferroni) and clinical-score ANOVAs across clusters.
pub fn subtype_cluster(diffs: &[Vec<f64>], r: usize, k: usize, scores: &[Option<f64>]) -> Result<SubtypeResult> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if diffs.len() < k.max(2) {
        return Err(Error::TooFewPatients { needed: k.max(2), have: diffs.len() });
    }
    let merges = ward_linkage(diffs);
    let labels = cut_tree(&merges, diffs.len(), k);
    let changed_dc: Vec<Vec<f64>> = diffs.iter().map(|d| changed_degree_centrality(d, r)).collect();
    let roi_anova_pvalues = (k > 1).then(|| {
        (0..r)
            .map(|i| {
                let col: Vec<f64> = changed_dc.iter().map(|d| d[i]).collect();
                (anova_p(&groups_of(&col, &labels, k)) * r as f64).min(1.0)
            })
            .collect()
    });
    let score_anova_pvalue = if k > 1 {
        let (vals, labs): (Vec<f64>, Vec<usize>) =
            scores.iter().zip(&labels).filter_map(|(s, &l)| s.map(|v| (v, l))).unzip();
        let p = anova_p(&groups_of(&vals, &labs, k));
        (!p.is_nan()).then_some(p)
    } else {
        None
    };
    Ok(SubtypeResult {
        assignments: labels.iter().map(|l| l + 1).collect(),
        k,
        roi_anova_pvalues,
        score_anova_pvalue,
        changed_dc,
        merges,
    })
}

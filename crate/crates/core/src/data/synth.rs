use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::fc::{edge_index, n_edges, FcMatrix};
use super::{default_class_names, Dataset, SubjectRecord, CONTROL, PATIENT};
use crate::error::{Error, Result};

/// Magnitude bound for base correlations, chosen so that a ±0.6 shift stays
/// inside [-1, 1].
const BASE_RANGE: f64 = 0.3;

/// Parameters of a synthetic two-group cohort with planted group differences.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub r: usize,
    pub n_per_class: usize,
    /// Connections shifted in patients, `i < j`.
    pub planted_edges: Vec<(usize, usize)>,
    pub effect_size: f64,
    pub n_subtypes: usize,
    /// Fraction of planted edges shared by every subtype.
    pub subtype_edge_overlap: f64,
    pub noise_std: f64,
    pub n_sites: usize,
    /// Std of an additive per-site offset pattern.
    pub site_effect: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The desk-scale benchmark: R=20, 100 per class, 40 planted edges,
    /// effect 0.6, noise 0.05.
    pub fn benchmark(seed: u64) -> Self {
        SyntheticSpec {
            r: 20,
            n_per_class: 100,
            planted_edges: planted_module(20, 40, seed),
            effect_size: 0.6,
            n_subtypes: 1,
            subtype_edge_overlap: 0.0,
            noise_std: 0.05,
            n_sites: 1,
            site_effect: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(Error::Spec(format!("need at least 2 ROIs, got {}", self.r)));
        }
        if self.n_subtypes == 0 {
            return Err(Error::Spec("n_subtypes must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.subtype_edge_overlap) {
            return Err(Error::Spec("subtype_edge_overlap must lie in [0, 1]".into()));
        }
        if self.noise_std < 0.0 || self.site_effect < 0.0 {
            return Err(Error::Spec("noise_std and site_effect must be non-negative".into()));
        }
        for &(i, j) in &self.planted_edges {
            if i >= j || j >= self.r {
                return Err(Error::Spec(format!(
                    "planted edge ({i},{j}) is not an upper-triangular pair for r = {}",
                    self.r
                )));
            }
        }
        Ok(())
    }

    /// Planted-edge subset perturbed by each subtype. Edges are taken in
    /// row-major order: the first `overlap · n` are shared by every subtype
    /// and the rest are cut into contiguous blocks, so each subtype's change
    /// concentrates on its own few hub ROIs. With overlap 1 every subtype uses
    /// all planted edges; with overlap 0 the subsets are disjoint.
    pub fn subtype_edge_sets(&self) -> Vec<Vec<(usize, usize)>> {
        let k = self.n_subtypes;
        if k <= 1 {
            return vec![self.planted_edges.clone()];
        }
        let mut edges = self.planted_edges.clone();
        edges.sort_unstable();
        let n = edges.len();
        let shared = (self.subtype_edge_overlap * n as f64).round() as usize;
        let (common, rest) = edges.split_at(shared.min(n));
        let mut sets = Vec::with_capacity(k);
        for t in 0..k {
            let lo = t * rest.len() / k;
            let hi = (t + 1) * rest.len() / k;
            let mut set: Vec<_> = common.iter().chain(&rest[lo..hi]).copied().collect();
            set.sort_unstable();
            sets.push(set);
        }
        sets
    }
}

/// Picks `n_planted` connections confined to a randomly chosen ROI module
/// just large enough to hold them.
pub fn planted_module(r: usize, n_planted: usize, seed: u64) -> Vec<(usize, usize)> {
    let n_planted = n_planted.min(n_edges(r));
    let mut m = 2.min(r);
    while m < r && n_edges(m) < n_planted {
        m += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00c0_ffee);
    let mut rois: Vec<usize> = (0..r).collect();
    rois.shuffle(&mut rng);
    let mut module = rois[..m].to_vec();
    module.sort_unstable();
    let mut pairs: Vec<(usize, usize)> = module
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| module[a + 1..].iter().map(move |&j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(n_planted);
    pairs.sort_unstable();
    pairs
}

/// Draws a cohort around a shared base correlation pattern. Patients differ
/// from controls only on (their subtype's) planted edges.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let r = spec.r;
    let p = n_edges(r);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let base: Vec<f64> = (0..p).map(|_| rng.random_range(-BASE_RANGE..BASE_RANGE)).collect();
    let mut shift = vec![0.0; p];
    for &(i, j) in &spec.planted_edges {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        shift[edge_index(i, j, r)] = sign * spec.effect_size;
    }
    let site_offsets: Vec<Vec<f64>> = (0..spec.n_sites.max(1))
        .map(|_| {
            if spec.site_effect > 0.0 {
                let d = Normal::new(0.0, spec.site_effect).expect("finite std");
                (0..p).map(|_| d.sample(&mut rng)).collect()
            } else {
                vec![0.0; p]
            }
        })
        .collect();
    let subtype_masks: Vec<Vec<bool>> = spec
        .subtype_edge_sets()
        .iter()
        .map(|set| {
            let mut mask = vec![false; p];
            for &(i, j) in set {
                mask[edge_index(i, j, r)] = true;
            }
            mask
        })
        .collect();
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("std"));
    let score_noise = Normal::new(0.0, 1.0).expect("std");

    let mut records = Vec::with_capacity(2 * spec.n_per_class);
    for label in [CONTROL, PATIENT] {
        for n in 0..spec.n_per_class {
            let site_idx = n % site_offsets.len();
            let subtype = (label == PATIENT).then_some(n % spec.n_subtypes);
            let mut upper = Vec::with_capacity(p);
            for e in 0..p {
                let mut v = base[e] + site_offsets[site_idx][e];
                if let Some(t) = subtype {
                    if subtype_masks[t][e] {
                        v += shift[e];
                    }
                }
                if let Some(d) = &noise {
                    v += d.sample(&mut rng);
                }
                upper.push(v.clamp(-1.0, 1.0));
            }
            let clinical_score =
                subtype.map(|t| 10.0 + 4.0 * t as f64 + 1.5 * score_noise.sample(&mut rng));
            let prefix = if label == PATIENT { "pat" } else { "ctl" };
            records.push(SubjectRecord {
                subject_id: format!("{prefix}-{n:04}"),
                label,
                fc: FcMatrix::from_upper(&upper, r)?,
                site: (spec.n_sites > 1).then(|| format!("site{site_idx}")),
                clinical_score,
                subtype: if spec.n_subtypes > 1 { subtype } else { None },
            });
        }
    }
    Ok(Dataset::new(records, r, default_class_names())?.with_planted_edges(spec.planted_edges.clone()))
}

/// Elementwise group-mean matrix of a dataset's records with `label`.
pub fn group_mean(ds: &Dataset, label: usize) -> Array2<f64> {
    let mut acc = Array2::zeros((ds.r(), ds.r()));
    let mut n = 0.0;
    for rec in ds.records().iter().filter(|r| r.label == label) {
        acc += rec.fc.values();
        n += 1.0;
    }
    if n > 0.0 {
        acc /= n;
    }
    acc
}

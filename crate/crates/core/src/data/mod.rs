//! Subject records, FC construction, synthetic cohorts, splits and on-disk
//! dataset format.

mod fc;
mod io;
mod split;
mod synth;

pub use fc::{
    devectorize_symmetric, edge_index, edge_pairs, n_edges, pearson_fc, upper_of,
    vectorize_upper, FcMatrix, SYMMETRY_TOL,
};
pub use io::{load_dataset, load_dataset_counted, save_dataset, MANIFEST_FILE, PLANTED_FILE};
pub(crate) use io::write_file;
pub use split::{split, stratified_folds, Split};
pub use synth::{generate_synthetic, group_mean, planted_module, SyntheticSpec};

use std::collections::HashSet;

use crate::error::{Error, Result};

pub const CONTROL: usize = 0;
pub const PATIENT: usize = 1;

pub fn default_class_names() -> Vec<String> {
    vec!["control".to_string(), "patient".to_string()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: usize,
    pub fc: FcMatrix,
    pub site: Option<String>,
    pub clinical_score: Option<f64>,
    /// Planted subtype (0-based), only known for synthetic patients.
    pub subtype: Option<usize>,
}

/// An immutable collection of subjects sharing one ROI count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    r: usize,
    class_names: Vec<String>,
    planted_edges: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn new(records: Vec<SubjectRecord>, r: usize, class_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for rec in &records {
            if rec.fc.r() != r {
                return Err(Error::Shape(format!(
                    "subject {} has {} ROIs, dataset has {r}",
                    rec.subject_id,
                    rec.fc.r()
                )));
            }
            if rec.label >= class_names.len() {
                return Err(Error::Config(format!(
                    "subject {} has label {} but only {} classes",
                    rec.subject_id,
                    rec.label,
                    class_names.len()
                )));
            }
            if !seen.insert(rec.subject_id.as_str()) {
                return Err(Error::Config(format!("duplicate subject id {}", rec.subject_id)));
            }
        }
        Ok(Dataset { records, r, class_names, planted_edges: Vec::new() })
    }

    pub fn with_planted_edges(mut self, edges: Vec<(usize, usize)>) -> Self {
        self.planted_edges = edges;
        self
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Ground-truth planted connections (synthetic data only).
    pub fn planted_edges(&self) -> &[(usize, usize)] {
        &self.planted_edges
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn count_label(&self, label: usize) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Sub-dataset of the given record indices, keeping metadata.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            r: self.r,
            class_names: self.class_names.clone(),
            planted_edges: self.planted_edges.clone(),
        }
    }

    pub fn filter(&self, pred: impl Fn(&SubjectRecord) -> bool) -> Dataset {
        let idx: Vec<usize> =
            (0..self.records.len()).filter(|&i| pred(&self.records[i])).collect();
        self.subset(&idx)
    }

    pub fn label_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Errors unless both classes are represented.
    pub fn require_both_classes(&self) -> Result<()> {
        for (c, name) in self.class_names.iter().enumerate() {
            if self.count_label(c) == 0 {
                return Err(Error::TooSmall(format!("no subjects of class {name}")));
            }
        }
        Ok(())
    }
}

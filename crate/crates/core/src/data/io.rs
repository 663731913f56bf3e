//! Dataset directory format.
//!
//! ```text
//! data/
//!   manifest.csv        subject_id,label,site,clinical_score,fc_path[,subtype]
//!   fc/<subject>.csv    R rows of R comma-separated floats
//!   classes.csv         index,name  (optional; defaults to control,patient)
//!   planted_edges.csv   i,j         (synthetic ground truth only)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::fc::FcMatrix;
use super::{default_class_names, Dataset, SubjectRecord};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PLANTED_FILE: &str = "planted_edges.csv";
const CLASSES_FILE: &str = "classes.csv";
const BASE_HEADER: [&str; 5] = ["subject_id", "label", "site", "clinical_score", "fc_path"];

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Writes a dataset directory. Floats use Rust's shortest round-trip
/// formatting, so a save/load cycle is exact.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let fc_dir = dir.join("fc");
    fs::create_dir_all(&fc_dir).map_err(|e| Error::io(format!("creating {}", fc_dir.display()), e))?;
    let with_subtype = dataset.records().iter().any(|r| r.subtype.is_some());

    let mut manifest = BASE_HEADER.join(",");
    if with_subtype {
        manifest.push_str(",subtype");
    }
    manifest.push('\n');
    for rec in dataset.records() {
        let rel = format!("fc/{}.csv", rec.subject_id);
        write_matrix(&dir.join(&rel), rec.fc.values())?;
        manifest.push_str(&format!(
            "{},{},{},{},{}",
            rec.subject_id,
            dataset.class_names()[rec.label],
            rec.site.as_deref().unwrap_or(""),
            rec.clinical_score.map(|s| s.to_string()).unwrap_or_default(),
            rel
        ));
        if with_subtype {
            manifest.push(',');
            if let Some(t) = rec.subtype {
                manifest.push_str(&t.to_string());
            }
        }
        manifest.push('\n');
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    write_file(&manifest_path, &manifest)?;

    let classes: String = dataset
        .class_names()
        .iter()
        .enumerate()
        .map(|(i, n)| format!("{i},{n}\n"))
        .collect();
    write_file(&dir.join(CLASSES_FILE), &format!("index,name\n{classes}"))?;

    if !dataset.planted_edges().is_empty() {
        let body: String = dataset.planted_edges().iter().map(|(i, j)| format!("{i},{j}\n")).collect();
        write_file(&dir.join(PLANTED_FILE), &format!("i,j\n{body}"))?;
    }
    Ok(manifest_path)
}

/// Loads a dataset from its manifest, clamping out-of-range correlations.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let (ds, clamped) = load_dataset_counted(manifest_path)?;
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} entries into [-1, 1]", manifest_path.display());
    }
    Ok(ds)
}

/// As [`load_dataset`], also returning the number of clamped entries.
pub fn load_dataset_counted(manifest_path: &Path) -> Result<(Dataset, usize)> {
    let manifest_path =
        if manifest_path.is_dir() { manifest_path.join(MANIFEST_FILE) } else { manifest_path.to_path_buf() };
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let class_names = read_classes(&root.join(CLASSES_FILE))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&manifest_path)
        .map_err(|e| parse_err(&manifest_path, 1, e.to_string()))?;
    let header = reader.headers().map_err(|e| parse_err(&manifest_path, 1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 5 || cols[..5] != BASE_HEADER {
        return Err(parse_err(&manifest_path, 1, format!("unexpected header {:?}", cols)));
    }
    let subtype_col = cols.iter().position(|c| *c == "subtype");

    let mut records = Vec::new();
    let mut r = None;
    let mut clamped = 0;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(&manifest_path, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let label_name = field(1);
        let label = class_names
            .iter()
            .position(|c| c == label_name)
            .ok_or_else(|| parse_err(&manifest_path, line, format!("unknown class {label_name:?}")))?;
        let site = Some(field(2)).filter(|s| !s.is_empty()).map(str::to_string);
        let clinical_score = match field(3) {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| parse_err(&manifest_path, line, format!("clinical_score: {e}")))?),
        };
        let subtype = match subtype_col.map(field) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<usize>().map_err(|e| parse_err(&manifest_path, line, format!("subtype: {e}")))?),
        };
        let fc_path = root.join(field(4));
        let values = read_matrix(&fc_path)?;
        let expected = *r.get_or_insert(values.nrows());
        if values.nrows() != expected || values.ncols() != expected {
            return Err(Error::DimensionMismatch {
                path: fc_path,
                expected,
                rows: values.nrows(),
                cols: values.ncols(),
            });
        }
        let (fc, n) = FcMatrix::from_ingested(values).map_err(|e| parse_err(&fc_path, 0, e.to_string()))?;
        clamped += n;
        records.push(SubjectRecord {
            subject_id: field(0).to_string(),
            label,
            fc,
            site,
            clinical_score,
            subtype,
        });
    }
    let r = r.ok_or_else(|| parse_err(&manifest_path, 1, "manifest lists no subjects"))?;
    let mut ds = Dataset::new(records, r, class_names)?;
    let planted = root.join(PLANTED_FILE);
    if planted.exists() {
        ds = ds.with_planted_edges(read_pairs(&planted)?);
    }
    Ok((ds, clamped))
}

pub(crate) fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 8);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

pub(crate) fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, n + 1, e.to_string()))?;
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch { path: path.to_path_buf(), expected: nrows, rows: nrows, cols: bad.len() });
    }
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .map_err(|e| parse_err(path, 0, e.to_string()))
}

fn read_classes(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(default_class_names());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut names = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let (idx, name) = line.split_once(',').ok_or_else(|| parse_err(path, n + 1, "expected index,name"))?;
        let idx: usize = idx.trim().parse().map_err(|e| parse_err(path, n + 1, format!("{e}")))?;
        if idx != names.len() {
            return Err(parse_err(path, n + 1, "class indices must be 0,1,... in order"));
        }
        names.push(name.trim().to_string());
    }
    Ok(names)
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line == "i,j") {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| parse_err(path, n + 1, "expected i,j"))?;
        let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| parse_err(path, n + 1, e.to_string()));
        out.push((parse(a)?, parse(b)?));
    }
    Ok(out)
}

/// Writes `contents`, creating missing parent directories.
pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

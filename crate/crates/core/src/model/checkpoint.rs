//! Checkpoint directory:
//!
//! ```text
//! config.txt      key = value (model config, ablations, seed, class names, extras)
//! tensors.index   one line per tensor: <name> <dtype> <rows>,<cols>
//! <name>.bin      row-major little-endian values
//! ```
//!
//! Tensors are written as `f64` so that the float64 training state
//! round-trips bit-exactly; `f32` tensors are accepted on load.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Ablations, Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::kv::KvFile;

const CONFIG_FILE: &str = "config.txt";
const INDEX_FILE: &str = "tensors.index";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub class_names: Vec<String>,
    /// Free-form provenance (optimizer settings, selected epoch, ...).
    pub extra: KvFile,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn config_to_kv(c: &ModelConfig, a: &Ablations, kv: &mut KvFile) {
    kv.set("r", c.r);
    kv.set("d", c.d);
    kv.set("hidden_enc", c.hidden_enc);
    kv.set("n_blocks", c.n_blocks);
    kv.set("n_heads", c.n_heads);
    kv.set("tau_gumbel", c.tau_gumbel);
    kv.set("softmax_temp", c.softmax_temp);
    kv.set("dropout", c.dropout);
    kv.set("attn_hidden", c.attn_hidden);
    kv.set("dec_hidden", c.dec_hidden);
    kv.set("n_classes", c.n_classes);
    kv.set("ablations", a.to_list());
}

fn config_from_kv(kv: &KvFile) -> Result<(ModelConfig, Ablations)> {
    let config = ModelConfig {
        r: kv.require("r")?,
        d: kv.require("d")?,
        hidden_enc: kv.require("hidden_enc")?,
        n_blocks: kv.require("n_blocks")?,
        n_heads: kv.require("n_heads")?,
        tau_gumbel: kv.require("tau_gumbel")?,
        softmax_temp: kv.require("softmax_temp")?,
        dropout: kv.require("dropout")?,
        attn_hidden: kv.require("attn_hidden")?,
        dec_hidden: kv.require("dec_hidden")?,
        n_classes: kv.require("n_classes")?,
    };
    let ablations = Ablations::parse(kv.get("ablations").unwrap_or(""))?;
    Ok((config, ablations))
}

pub fn save_checkpoint(ck_: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut kv = ck_.extra.clone();
    config_to_kv(&ck_.model.config, &ck_.model.ablations, &mut kv);
    kv.set("seed", ck_.seed);
    kv.set("class_names", ck_.class_names.join(","));
    crate::data::write_file(&dir.join(CONFIG_FILE), &kv.render())?;

    let params = &ck_.model.params;
    let mut index = String::new();
    for slot in 0..params.len() {
        let name = params.name(slot);
        let t = params.get(slot);
        index.push_str(&format!("{name} f64 {},{}\n", t.nrows(), t.ncols()));
        let mut bytes = Vec::with_capacity(t.len() * 8);
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    crate::data::write_file(&dir.join(INDEX_FILE), &index)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mut kv = KvFile::read(&dir.join(CONFIG_FILE))?;
    let (config, ablations) = config_from_kv(&kv)?;
    let seed = kv.require("seed")?;
    let class_names: Vec<String> =
        kv.get("class_names").unwrap_or("control,patient").split(',').map(str::to_string).collect();
    let mut params = ModelParams::zeros(&config, &ablations);

    let index_path = dir.join(INDEX_FILE);
    let index = fs::read_to_string(&index_path)
        .map_err(|e| Error::io(format!("reading {}", index_path.display()), e))?;
    let mut seen = vec![false; params.len()];
    for line in index.lines().filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, dtype, shape] = parts[..] else {
            return Err(ck(format!("malformed index line {line:?}")));
        };
        let (rows, cols) = shape
            .split_once(',')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| ck(format!("bad shape {shape:?} for {name}")))?;
        let slot = params.slot_of(name).ok_or_else(|| ck(format!("unexpected tensor {name}")))?;
        let path = dir.join(format!("{name}.bin"));
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let values: Vec<f64> = match dtype {
            "f64" => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            "f32" => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            other => return Err(ck(format!("unsupported dtype {other}"))),
        };
        if values.len() != rows * cols {
            return Err(ck(format!("{name}: {} values for shape {rows}x{cols}", values.len())));
        }
        let t = Array2::from_shape_vec((rows, cols), values).map_err(|e| ck(e.to_string()))?;
        params.set(slot, t).map_err(ck)?;
        seen[slot] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(ck(format!("missing tensor {}", params.name(missing))));
    }
    for key in [
        "r", "d", "hidden_enc", "n_blocks", "n_heads", "tau_gumbel", "softmax_temp", "dropout",
        "attn_hidden", "dec_hidden", "n_classes", "ablations", "seed", "class_names",
    ] {
        kv.remove(key);
    }
    Ok(Checkpoint { model: Model::from_params(config, ablations, params)?, seed, class_names, extra: kv })
}

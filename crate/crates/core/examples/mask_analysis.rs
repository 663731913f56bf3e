//! Mask statistics after training: group-mean mask on planted versus other
//! connections, and the ROIs with the largest group difference in degree
//! centrality (fraction of connections with mask ≥ 0.5).

use std::collections::HashSet;

use ccfcnet::analysis::mask_statistics;
use ccfcnet::data::{edge_pairs, generate_synthetic, split, SyntheticSpec};
use ccfcnet::model::{Ablations, Model, ModelConfig};
use ccfcnet::train::{train, TrainConfig};

fn main() -> ccfcnet::Result<()> {
    let seed = 7;
    let data = generate_synthetic(&SyntheticSpec::benchmark(seed))?;
    let parts = split(&data, (0.6, 0.2, 0.2), seed)?;
    let model = Model::new(ModelConfig::for_rois(data.r()), Ablations::default(), seed)?;
    let model = train(&parts.train, &parts.val, model, &TrainConfig { seed, ..TrainConfig::default() })?.best;

    let stats = mask_statistics(&model, &data)?;
    let planted: HashSet<(usize, usize)> = data.planted_edges().iter().copied().collect();
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for (i, j) in edge_pairs(data.r()) {
        let m = stats.mean_mask.iter().map(|g| g[[i, j]]).sum::<f64>() / stats.mean_mask.len() as f64;
        if planted.contains(&(i, j)) { on.push(m) } else { off.push(m) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean mask: planted {:.3}, other {:.3}", mean(&on), mean(&off));

    let hubs: HashSet<usize> = planted.iter().flat_map(|&(i, j)| [i, j]).collect();
    let diff = stats.dc_difference();
    println!("roi  dc_diff   p      planted-ROI");
    for roi in stats.dc_rank().into_iter().take(10) {
        println!("{roi:>3} {:>+8.3} {:>7.4} {}", diff[roi], stats.dc_pvalues[roi], hubs.contains(&roi));
    }
    Ok(())
}

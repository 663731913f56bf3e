//! Builds a Pearson FC matrix from simulated regional time series with two
//! coupled ROI pairs and prints its strongest connections.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ccfcnet::data::{edge_pairs, pearson_fc, vectorize_upper};

fn main() -> ccfcnet::Result<()> {
    let (t, r) = (200, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ts = Array2::<f64>::zeros((t, r));
    for v in ts.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    // ROI 1 follows ROI 0; ROI 4 anti-follows ROI 3.
    for k in 0..t {
        ts[[k, 1]] = 0.8 * ts[[k, 0]] + 0.6 * ts[[k, 1]];
        ts[[k, 4]] = -0.7 * ts[[k, 3]] + 0.7 * ts[[k, 4]];
    }
    let fc = pearson_fc(ts.view())?;
    let mut edges: Vec<((usize, usize), f64)> = edge_pairs(r).into_iter().zip(vectorize_upper(&fc)).collect();
    edges.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    println!("strongest connections of a {r}-ROI FC from {t} time points:");
    for ((i, j), v) in &edges[..4] {
        println!("  ({i},{j}) r = {v:+.3}");
    }
    println!("diagonal: {:?}", (0..r).map(|i| fc.values()[[i, i]]).collect::<Vec<_>>());
    Ok(())
}

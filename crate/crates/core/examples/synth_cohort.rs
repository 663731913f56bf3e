//! Generates the synthetic benchmark, checks that the planted edges are
//! detectable with connection-wise Welch t-tests, and writes the dataset.
//!
//! `cargo run --release --example synth_cohort -- [out_dir] [n_subtypes]`

use ccfcnet::analysis::welch_t_test;
use ccfcnet::data::{edge_index, generate_synthetic, save_dataset, SyntheticSpec, CONTROL, PATIENT};

fn main() -> ccfcnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic_data".into());
    let n_subtypes = args.next().map_or(1, |a| a.parse().expect("n_subtypes"));

    let spec = SyntheticSpec { n_subtypes, ..SyntheticSpec::benchmark(7) };
    let data = generate_synthetic(&spec)?;
    let uppers: Vec<(usize, Vec<f64>)> = data.records().iter().map(|r| (r.label, r.fc.upper())).collect();
    let column = |label: usize, e: usize| -> Vec<f64> {
        uppers.iter().filter(|(l, _)| *l == label).map(|(_, u)| u[e]).collect()
    };

    let mut detected = 0;
    for &(i, j) in &spec.planted_edges {
        let e = edge_index(i, j, spec.r);
        let (_, p) = welch_t_test(&column(PATIENT, e), &column(CONTROL, e))?;
        detected += usize::from(p < 0.01);
    }
    println!(
        "{} subjects, R = {}, {} planted edges; {detected} significant at p < 0.01",
        data.len(),
        spec.r,
        spec.planted_edges.len()
    );
    for (t, set) in spec.subtype_edge_sets().iter().enumerate().filter(|_| n_subtypes > 1) {
        println!("subtype {t}: {} edges, first {:?}", set.len(), &set[..set.len().min(3)]);
    }
    let manifest = save_dataset(&data, std::path::Path::new(&out))?;
    println!("wrote {}", manifest.display());
    Ok(())
}

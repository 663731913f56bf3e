//! Trains on the benchmark, then simulates counter-condition FCs: each
//! correctly classified subject's summary is swapped for the opposite-class
//! prototype and the decoded FC is re-classified. Also compares the
//! patient→control diff map with the planted ground truth.
//!
//! `cargo run --release --example counter_condition -- [extreme_mode]`

use ccfcnet::analysis::{counter_condition_classify, diff_maps, mean_diff, pearson, ExtremeMode};
use ccfcnet::data::{generate_synthetic, group_mean, split, upper_of, SyntheticSpec, CONTROL, PATIENT};
use ccfcnet::model::{Ablations, Model, ModelConfig};
use ccfcnet::train::{train, TrainConfig};

fn main() -> ccfcnet::Result<()> {
    let mode: ExtremeMode = std::env::args().nth(1).map_or(Ok(ExtremeMode::Exclude), |a| a.parse())?;
    let seed = 7;
    let data = generate_synthetic(&SyntheticSpec::benchmark(seed))?;
    let parts = split(&data, (0.6, 0.2, 0.2), seed)?;
    let model = Model::new(ModelConfig::for_rois(data.r()), Ablations::default(), seed)?;
    let model = train(&parts.train, &parts.val, model, &TrainConfig { seed, ..TrainConfig::default() })?.best;

    let cc = counter_condition_classify(&model, &parts.test)?;
    println!(
        "counter-condition on the test split: {}/{} pass the filter, ACC {:.3} AUC {:.3}",
        cc.predictions.len(),
        cc.n_subjects,
        cc.metrics.acc,
        cc.metrics.auc
    );

    let (reports, skipped) = diff_maps(&model, &data, mode)?;
    println!("diff maps ({mode}): {} subjects, {} filtered out", reports.len(), skipped.len());
    if let Some(diff) = mean_diff(&reports, PATIENT) {
        // diff = own − simulated control, so the simulated change is −diff.
        let simulated: Vec<f64> = upper_of(diff.view()).iter().map(|v| -v).collect();
        let truth = group_mean(&data, CONTROL) - group_mean(&data, PATIENT);
        println!("r(simulated change, true control − patient) = {:.3}", pearson(&simulated, &upper_of(truth.view())));
        let first = &reports.iter().find(|r| r.label == PATIENT).expect("patient report");
        println!("{}: excluded {:?}", first.subject_id, first.excluded);
    }
    Ok(())
}

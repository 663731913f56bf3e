//! Compares analytic gradients with central finite differences for every
//! loss term and parameter tensor of a small model.

use ccfcnet::data::{generate_synthetic, planted_module, SyntheticSpec, CONTROL, PATIENT};
use ccfcnet::model::{Ablations, Model, ModelConfig};
use ccfcnet::train::{gradient_check, LossTerm, Probe};

fn main() -> ccfcnet::Result<()> {
    let spec = SyntheticSpec {
        r: 8,
        n_per_class: 2,
        planted_edges: planted_module(8, 6, 1),
        ..SyntheticSpec::benchmark(1)
    };
    let data = generate_synthetic(&spec)?;
    let config = ModelConfig { n_blocks: 1, n_heads: 2, hidden_enc: 16, ..ModelConfig::for_rois(8) };
    let model = Model::new(config, Ablations::default(), 5)?;
    let x = data.records().iter().find(|r| r.label == CONTROL).expect("control");
    let donor = data.records().iter().find(|r| r.label == PATIENT).expect("patient");
    let probe = Probe { x: &x.fc, label: CONTROL, donor: &donor.fc, donor_label: PATIENT };

    for term in LossTerm::ALL {
        let checks = gradient_check(&model, &probe, term, 1e-5)?;
        let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).expect("tensors");
        let touched = checks.iter().filter(|c| c.grad_norm > 0.0).count();
        println!(
            "{term:?}: {touched}/{} tensors with gradient, worst relative error {:.2e} ({})",
            checks.len(),
            worst.rel_error,
            worst.name
        );
    }
    Ok(())
}

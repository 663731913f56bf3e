//! Trains on the default synthetic benchmark and reports test metrics.
//!
//! `cargo run --release --example train_benchmark -- [epochs] [seed]`

use std::time::Instant;

use ccfcnet::data::{generate_synthetic, split, SyntheticSpec};
use ccfcnet::model::{Ablations, Model, ModelConfig};
use ccfcnet::train::{evaluate, train, TrainConfig};

fn main() -> ccfcnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(60, |a| a.parse().expect("epochs"));
    let seed = args.next().map_or(7, |a| a.parse().expect("seed"));

    let data = generate_synthetic(&SyntheticSpec::benchmark(seed))?;
    let parts = split(&data, (0.6, 0.2, 0.2), seed)?;
    let model = Model::new(ModelConfig::for_rois(data.r()), Ablations::default(), seed)?;
    let cfg = TrainConfig { epochs, seed, ..TrainConfig::default() };

    let start = Instant::now();
    let out = train(&parts.train, &parts.val, model, &cfg)?;
    let test = evaluate(&out.best, &parts.test)?.metrics;
    println!("best epoch {} (val auc {:.4})", out.best_epoch, out.best_val.auc);
    println!("test auc {:.4} acc {:.4} sen {:.4} spc {:.4}", test.auc, test.acc, test.sen, test.spc);
    println!("trained in {:.1?}", start.elapsed());
    Ok(())
}

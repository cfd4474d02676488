//! Desk-scale benchmark probe: synthetic dataset, the two baselines, and all
//! three archetypes, printing average masked MAE and wall time.

use std::time::Instant;

use stgf_core::data::{synth_traffic, Split, SplitSpec, SynthConfig, WindowedDataset};
use stgf_core::model::{Archetype, Model, ModelSpec};
use stgf_core::train::{evaluate, evaluate_baseline, train, BaselineKind, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let hidden: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);

    let ar: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let tau: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(300);
    let cfg = SynthConfig {
        nodes: 20,
        steps: 2880,
        seed: 42,
        missing_fraction: 0.02,
        ar_coeff: ar,
        ..Default::default()
    };
    let (series, adj) = synth_traffic(&cfg).unwrap();
    let ds = WindowedDataset::new(series, &SplitSpec::speed(), 12, 12).unwrap();

    for kind in [BaselineKind::Persistence, BaselineKind::HistoricalAverage] {
        let t0 = Instant::now();
        let report = evaluate_baseline(kind, &ds, Split::Test).unwrap();
        println!(
            "{:<22} avg mae {:>7.4} rmse {:>7.4} mape {:>6.2}%  h3 {:>6.4} h12 {:>6.4}  ({:.1}s)",
            kind.name(),
            report.average.mae,
            report.average.rmse,
            report.average.mape,
            report.per_horizon[2].mae,
            report.per_horizon[11].mae,
            t0.elapsed().as_secs_f64()
        );
    }

    let only: Option<String> = args.get(6).cloned();
    let batch: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(16);
    for archetype in [Archetype::Rnn, Archetype::Cnn, Archetype::Attention] {
        if let Some(filter) = &only {
            if filter != archetype.name() && filter != "all" {
                continue;
            }
        }
        let mut spec = ModelSpec::default_for(archetype, 20, 1, 12, 12);
        spec.hidden = hidden;
        if let Some(blocks) = args.get(8).and_then(|s| s.parse().ok()) {
            spec.attn_blocks = blocks;
        }
        let config = TrainConfig {
            max_epochs: epochs,
            patience: 15,
            batch_size: batch,
            learning_rate: lr,
            tau,
            seed: 42,
            ..Default::default()
        };
        let t0 = Instant::now();
        let mut model = Model::new(spec, &adj, config.seed).unwrap();
        let record = train(&mut model, &ds, &config, None).unwrap();
        let report = evaluate(&model, &ds, Split::Test, config.seed).unwrap();
        println!(
            "{:<22} avg mae {:>7.4} rmse {:>7.4} mape {:>6.2}%  h3 {:>6.4} h12 {:>6.4}  ({:.1}s, {} epochs, {} params, val {:.4})",
            archetype.name(),
            report.average.mae,
            report.average.rmse,
            report.average.mape,
            report.per_horizon[2].mae,
            report.per_horizon[11].mae,
            t0.elapsed().as_secs_f64(),
            record.epochs.len(),
            record.param_count,
            record.epochs.last().unwrap().val_loss,
        );
    }
}

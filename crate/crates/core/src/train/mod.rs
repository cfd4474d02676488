//! Training loop with masked-MAE loss, horizon curriculum, early stopping
//! and best-checkpoint tracking, plus per-horizon evaluation and the two
//! non-learned baselines used as yardsticks.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    MaskedMetrics, MetricAccumulator, Split, WindowedDataset, WindowedSample,
};
use crate::error::{Error, Result};
use crate::graph::derive_seed;
use crate::model::{Archetype, Model, ModelSpec, SampleCtx};
use crate::tensor::{clip_gradient_norm, Adam, Tape, Tensor};

/// Seed stream id separating evaluation draws from training draws.
const EVAL_STREAM: u64 = 0xE7A1;

/// Curriculum activation: `Auto` enables it for the recurrent archetype only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurriculumMode {
    Auto,
    On,
    Off,
}

impl std::str::FromStr for CurriculumMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "auto" => CurriculumMode::Auto,
            "on" | "true" => CurriculumMode::On,
            "off" | "false" => CurriculumMode::Off,
            other => return Err(Error::Config(format!("unknown curriculum mode '{other}'"))),
        })
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub curriculum: CurriculumMode,
    /// Optimizer steps between horizon increments.
    pub tau: u64,
    pub seed: u64,
    /// Weight of the graph-deviation regularizer (needs a prior graph).
    pub lambda_graph: f64,
    pub clip_norm: f64,
    pub teacher_forcing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            patience: 15,
            batch_size: 16,
            learning_rate: 1e-3,
            curriculum: CurriculumMode::Auto,
            tau: 300,
            seed: 1,
            lambda_graph: 0.0,
            clip_norm: 5.0,
            teacher_forcing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 || self.patience < 1 || self.tau < 1 {
            return Err(Error::Config(
                "max_epochs, patience and tau must be >= 1".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Config(
                "learning_rate and clip_norm must be positive".into(),
            ));
        }
        if self.lambda_graph < 0.0 {
            return Err(Error::Config("lambda_graph must be nonnegative".into()));
        }
        Ok(())
    }

    fn curriculum_enabled(&self, archetype: Archetype) -> bool {
        match self.curriculum {
            CurriculumMode::On => true,
            CurriculumMode::Off => false,
            CurriculumMode::Auto => archetype == Archetype::Rnn,
        }
    }
}

/// Active prediction-horizon prefix after `step` optimizer steps:
/// 1 + floor(step/tau), capped at q.
pub fn curriculum_horizon(step: u64, tau: u64, q: usize) -> usize {
    let h = 1 + (step / tau) as usize;
    h.min(q)
}

/// One epoch's losses and wall time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_secs: f64,
}

/// Per-horizon test metrics plus the all-horizon aggregate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TestReport {
    pub per_horizon: Vec<MaskedMetrics>,
    pub average: MaskedMetrics,
}

/// Complete record of one run: config snapshot, per-epoch losses, the best
/// epoch, test metrics (after evaluation) and cost figures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub param_count: usize,
    pub sec_per_epoch: f64,
    pub test: Option<TestReport>,
}

impl RunRecord {
    /// Copy with wall-clock fields zeroed; the rest is bit-reproducible
    /// under a fixed seed.
    pub fn without_timing(&self) -> RunRecord {
        let mut copy = self.clone();
        for e in &mut copy.epochs {
            e.wall_secs = 0.0;
        }
        copy.sec_per_epoch = 0.0;
        copy
    }
}

/// Tape-level masked absolute error: sum over horizons of
/// |pred - target| ⊙ mask, plus the unmasked-entry count. Entries whose mask
/// is zero cannot influence the sum (or its gradients).
pub fn masked_abs_error(
    tape: &Tape,
    preds: &[crate::tensor::Var],
    targets: &[Tensor],
    masks: &[Tensor],
) -> Result<(crate::tensor::Var, f64)> {
    if preds.is_empty() || preds.len() > targets.len() || targets.len() != masks.len() {
        return Err(Error::Contract(format!(
            "masked loss over {} predictions, {} targets, {} masks",
            preds.len(),
            targets.len(),
            masks.len()
        )));
    }
    let mut count = 0.0;
    let mut loss: Option<crate::tensor::Var> = None;
    for (h, pred) in preds.iter().enumerate() {
        count += masks[h].data().iter().sum::<f64>();
        let mask = tape.constant(masks[h].clone());
        let diff = pred.sub(&tape.constant(targets[h].clone()))?;
        let term = diff.abs()?.mul(&mask)?.reduce_sum(None)?;
        loss = Some(match loss {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok((loss.expect("horizon >= 1"), count))
}

struct SampleResult {
    abs_sum: f64,
    count: f64,
    grads: Vec<Tensor>,
}

/// Masked-MAE pieces of one window on its own tape, with gradients.
fn sample_pass(
    model: &Model,
    dataset: &WindowedDataset,
    w: &WindowedSample,
    horizon: usize,
    gumbel_seed: u64,
    teacher_forcing: bool,
) -> Result<SampleResult> {
    let tape = Tape::new();
    let leaves = model.store().leaves(&tape);
    let input = dataset.input_scaled(w);
    let targets = dataset.target_scaled(w);
    let masks = dataset.target_mask(w);
    let sample = SampleCtx {
        gumbel_seed,
        teacher: teacher_forcing.then_some(&targets[..]),
    };
    let preds = model.forward(&tape, &leaves, &input, &sample)?;
    let (loss, count) = masked_abs_error(&tape, &preds[..horizon], &targets, &masks)?;
    tape.backward(&loss)?;
    Ok(SampleResult {
        abs_sum: loss.value().scalar_value(),
        count,
        grads: leaves.iter().map(|l| tape.grad(l)).collect(),
    })
}

/// Pooled masked MAE (scaled units) of a whole split, no gradients.
fn split_loss(model: &Model, dataset: &WindowedDataset, split: Split, seed: u64) -> Result<f64> {
    let windows = dataset.windows(split);
    let sums: Vec<(f64, f64)> = windows
        .par_iter()
        .map(|w| -> Result<(f64, f64)> {
            let preds =
                model.forecast(&dataset.input_scaled(w), derive_seed(seed, EVAL_STREAM, w.start as u64))?;
            let targets = dataset.target_scaled(w);
            let masks = dataset.target_mask(w);
            let mut abs = 0.0;
            let mut count = 0.0;
            for h in 0..dataset.q() {
                for ((&p, &t), &m) in preds[h]
                    .data()
                    .iter()
                    .zip(targets[h].data())
                    .zip(masks[h].data())
                {
                    abs += (p - t).abs() * m;
                    count += m;
                }
            }
            Ok((abs, count))
        })
        .collect::<Result<_>>()?;
    let (abs, count) = sums
        .into_iter()
        .fold((0.0, 0.0), |(a, c), (a2, c2)| (a + a2, c + c2));
    if count == 0.0 {
        return Err(Error::Metric("every validation entry is masked".into()));
    }
    Ok(abs / count)
}

/// Train in place; on return the model holds the best-validation parameters.
///
/// The loss is masked MAE on scaled targets over the active curriculum
/// prefix; `prior` (plus a positive `lambda_graph`) adds the squared
/// deviation of the trainable graph from the prior.
pub fn train(
    model: &mut Model,
    dataset: &WindowedDataset,
    config: &TrainConfig,
    prior: Option<&Tensor>,
) -> Result<RunRecord> {
    config.validate()?;
    let curriculum_on = config.curriculum_enabled(model.spec().archetype);
    let q = dataset.q();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1, 0));
    let mut optimizer = Adam::new(config.learning_rate);
    let mut windows = dataset.windows(Split::Train);
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Vec<Tensor> = Vec::new();
    let mut step: u64 = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        // Fisher-Yates under the run seed.
        for i in (1..windows.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            windows.swap(i, j);
        }
        let mut epoch_abs = 0.0;
        let mut epoch_count = 0.0;
        for batch in windows.chunks(config.batch_size) {
            let horizon = if curriculum_on {
                curriculum_horizon(step, config.tau, q)
            } else {
                q
            };
            let results: Vec<SampleResult> = batch
                .par_iter()
                .map(|w| {
                    sample_pass(
                        model,
                        dataset,
                        w,
                        horizon,
                        derive_seed(config.seed, epoch as u64, w.start as u64),
                        config.teacher_forcing,
                    )
                })
                .collect::<Result<_>>()?;
            let total_count: f64 = results.iter().map(|r| r.count).sum();
            if total_count == 0.0 {
                continue; // every target in the batch is missing
            }
            let total_abs: f64 = results.iter().map(|r| r.abs_sum).sum();
            let mut batch_loss = total_abs / total_count;
            model.store_mut().clear_grads();
            for r in &results {
                model.store_mut().accumulate(&r.grads);
            }
            model.store_mut().scale_grads(1.0 / total_count);
            if config.lambda_graph > 0.0 && model.spec().graph_source.is_trainable() {
                if let Some(prior) = prior {
                    let tape = Tape::new();
                    let leaves = model.store().leaves(&tape);
                    if let Some(reg) = model.graph_deviation_var(&tape, &leaves, prior)? {
                        tape.backward(&reg)?;
                        let grads: Vec<Tensor> = leaves
                            .iter()
                            .map(|l| tape.grad(l).map(|v| v * config.lambda_graph))
                            .collect();
                        model.store_mut().accumulate(&grads);
                        batch_loss += config.lambda_graph * reg.value().scalar_value();
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged: non-finite loss at epoch {epoch}"
                )));
            }
            clip_gradient_norm(model.store_mut(), config.clip_norm)?;
            optimizer.step(model.store_mut())?;
            step += 1;
            epoch_abs += total_abs;
            epoch_count += total_count;
        }
        let train_loss = if epoch_count > 0.0 {
            epoch_abs / epoch_count
        } else {
            f64::NAN
        };
        let val_loss = split_loss(model, dataset, Split::Val, config.seed)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged: non-finite validation loss at epoch {epoch}"
            )));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = model
                .store()
                .params()
                .iter()
                .map(|p| p.value.clone())
                .collect();
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    for (i, value) in best_params.into_iter().enumerate() {
        model.store_mut().set_value(i, value);
    }
    let sec_per_epoch = if epochs.is_empty() {
        0.0
    } else {
        epochs.iter().map(|e| e.wall_secs).sum::<f64>() / epochs.len() as f64
    };
    Ok(RunRecord {
        name: String::new(),
        spec: model.spec().clone(),
        config: config.clone(),
        epochs,
        best_epoch,
        param_count: model.param_count(),
        sec_per_epoch,
        test: None,
    })
}

/// Per-horizon + pooled masked metrics of a checkpointed model on a split,
/// in original units.
pub fn evaluate(model: &Model, dataset: &WindowedDataset, split: Split, seed: u64) -> Result<TestReport> {
    let windows = dataset.windows(split);
    let q = dataset.q();
    let scaler = dataset.scaler();
    let accs: Vec<Vec<MetricAccumulator>> = windows
        .par_iter()
        .map(|w| -> Result<Vec<MetricAccumulator>> {
            let preds = model.forecast(
                &dataset.input_scaled(w),
                derive_seed(seed, EVAL_STREAM, w.start as u64),
            )?;
            let raw_targets = dataset.target_raw(w);
            let mut per_h = vec![MetricAccumulator::default(); q];
            for h in 0..q {
                let pred_raw = scaler.inverse_frame(&preds[h]);
                per_h[h].push_frames(&raw_targets[h], &pred_raw);
            }
            Ok(per_h)
        })
        .collect::<Result<_>>()?;
    finalize_report(accs, q)
}

/// Non-learned reference forecasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Repeat the last observation across the horizon.
    Persistence,
    /// Predict the training-split mean at the same time-of-day slot.
    HistoricalAverage,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Persistence => "persistence",
            BaselineKind::HistoricalAverage => "historical-average",
        }
    }
}

/// Masked per-(slot, node, channel) training means.
pub struct HistoricalAverageTable {
    slots: usize,
    means: Vec<f64>,
}

impl HistoricalAverageTable {
    pub fn build(dataset: &WindowedDataset) -> Result<Self> {
        let raw = dataset.raw();
        let day = 24 * 60;
        if day % raw.interval_minutes() != 0 {
            return Err(Error::Input(format!(
                "historical average needs the {}-minute interval to divide one day",
                raw.interval_minutes()
            )));
        }
        let slots = (day / raw.interval_minutes()) as usize;
        let (n, d) = (raw.nodes(), raw.channels());
        let mut sums = vec![0.0; slots * n * d];
        let mut counts = vec![0u64; slots * n * d];
        for t in 0..dataset.train_end() {
            let slot = t % slots;
            for node in 0..n {
                for c in 0..d {
                    let v = raw.at(t, node, c);
                    if v != 0.0 {
                        sums[(slot * n + node) * d + c] += v;
                        counts[(slot * n + node) * d + c] += 1;
                    }
                }
            }
        }
        // Node-level fallback for slots that never saw an observation.
        let mut node_mean = vec![0.0; n * d];
        let mut node_count = vec![0u64; n * d];
        for slot in 0..slots {
            for i in 0..n * d {
                node_mean[i] += sums[slot * n * d + i];
                node_count[i] += counts[slot * n * d + i];
            }
        }
        for i in 0..n * d {
            node_mean[i] = if node_count[i] > 0 {
                node_mean[i] / node_count[i] as f64
            } else {
                0.0
            };
        }
        let means = sums
            .iter()
            .zip(counts.iter())
            .enumerate()
            .map(|(idx, (&s, &c))| {
                if c > 0 {
                    s / c as f64
                } else {
                    node_mean[idx % (n * d)]
                }
            })
            .collect();
        Ok(HistoricalAverageTable { slots, means })
    }

    fn predict(&self, t: usize, n: usize, d: usize) -> Tensor {
        let slot = t % self.slots;
        Tensor::from_raw(
            vec![n, d],
            self.means[slot * n * d..(slot + 1) * n * d].to_vec(),
        )
    }
}

/// Q raw-unit forecast frames for one window.
pub fn baseline_forecast(
    kind: BaselineKind,
    dataset: &WindowedDataset,
    table: Option<&HistoricalAverageTable>,
    w: &WindowedSample,
) -> Result<Vec<Tensor>> {
    match kind {
        BaselineKind::Persistence => {
            let last = dataset
                .input_raw(w)
                .pop()
                .expect("windows have P >= 1 frames");
            Ok(vec![last; dataset.q()])
        }
        BaselineKind::HistoricalAverage => {
            let table = table.ok_or_else(|| {
                Error::Contract("historical-average needs its table".into())
            })?;
            let (n, d) = (dataset.nodes(), dataset.channels());
            Ok((0..dataset.q())
                .map(|h| table.predict(w.target_start() + h, n, d))
                .collect())
        }
    }
}

/// Evaluate a baseline with the same accumulation as [`evaluate`].
pub fn evaluate_baseline(
    kind: BaselineKind,
    dataset: &WindowedDataset,
    split: Split,
) -> Result<TestReport> {
    let table = match kind {
        BaselineKind::HistoricalAverage => Some(HistoricalAverageTable::build(dataset)?),
        BaselineKind::Persistence => None,
    };
    let windows = dataset.windows(split);
    let q = dataset.q();
    let accs: Vec<Vec<MetricAccumulator>> = windows
        .par_iter()
        .map(|w| -> Result<Vec<MetricAccumulator>> {
            let preds = baseline_forecast(kind, dataset, table.as_ref(), w)?;
            let raw_targets = dataset.target_raw(w);
            let mut per_h = vec![MetricAccumulator::default(); q];
            for h in 0..q {
                per_h[h].push_frames(&raw_targets[h], &preds[h]);
            }
            Ok(per_h)
        })
        .collect::<Result<_>>()?;
    finalize_report(accs, q)
}

fn finalize_report(accs: Vec<Vec<MetricAccumulator>>, q: usize) -> Result<TestReport> {
    let mut per_h = vec![MetricAccumulator::default(); q];
    let mut pooled = MetricAccumulator::default();
    for window_accs in &accs {
        for (h, acc) in window_accs.iter().enumerate() {
            per_h[h].merge(acc);
            pooled.merge(acc);
        }
    }
    Ok(TestReport {
        per_horizon: per_h
            .iter()
            .map(|a| a.finalize())
            .collect::<Result<_>>()?,
        average: pooled.finalize()?,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine {
    Epoch(EpochRecord),
    Summary(Box<RunRecord>),
}

/// Write the JSON-lines run log: one line per epoch plus a summary line.
pub fn write_run_log(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = String::new();
    for epoch in &record.epochs {
        out.push_str(&serde_json::to_string(&LogLine::Epoch(epoch.clone()))?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&LogLine::Summary(Box::new(
        record.clone(),
    )))?);
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a run log back (the summary line carries the full record).
pub fn read_run_log(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path)?;
    for line in text.lines().rev() {
        if line.trim().is_empty() {
            continue;
        }
        if let LogLine::Summary(record) = serde_json::from_str(line)? {
            return Ok(*record);
        }
    }
    Err(Error::Input(format!(
        "{}: no summary line found",
        path.display()
    )))
}

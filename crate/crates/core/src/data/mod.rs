//! Dataset handling: ingestion, chronological splitting, Z-score scaling,
//! stride-1 windowing, masked error metrics and a synthetic generator for
//! desk-scale runs.
//!
//! Exact zeros mark missing observations throughout: they are ignored by the
//! training loss and by every reported metric.

mod ingest;
mod synth;

pub use ingest::{ingest_csv, ChannelMeta, DatasetMetadata};
pub use synth::{synth_traffic, SynthConfig};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense T x N x D series with node/channel labels and sampling interval.
#[derive(Debug, Clone)]
pub struct RawSeries {
    data: Vec<f64>,
    steps: usize,
    nodes: usize,
    channels: usize,
    interval_minutes: u32,
    node_ids: Vec<String>,
    channel_names: Vec<String>,
}

impl RawSeries {
    pub fn new(
        data: Vec<f64>,
        steps: usize,
        nodes: usize,
        channels: usize,
        interval_minutes: u32,
        node_ids: Option<Vec<String>>,
        channel_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if data.len() != steps * nodes * channels {
            return Err(Error::Input(format!(
                "series of {steps} x {nodes} x {channels} needs {} values, got {}",
                steps * nodes * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite series value {bad}")));
        }
        if interval_minutes == 0 {
            return Err(Error::Input("sampling interval must be positive".into()));
        }
        let node_ids =
            node_ids.unwrap_or_else(|| (0..nodes).map(|i| format!("n{i}")).collect());
        if node_ids.len() != nodes {
            return Err(Error::Input(format!(
                "{} node ids for {nodes} nodes",
                node_ids.len()
            )));
        }
        let channel_names =
            channel_names.unwrap_or_else(|| (0..channels).map(|c| format!("c{c}")).collect());
        if channel_names.len() != channels {
            return Err(Error::Input(format!(
                "{} channel names for {channels} channels",
                channel_names.len()
            )));
        }
        Ok(RawSeries {
            data,
            steps,
            nodes,
            channels,
            interval_minutes,
            node_ids,
            channel_names,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn at(&self, t: usize, node: usize, channel: usize) -> f64 {
        self.data[(t * self.nodes + node) * self.channels + channel]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// One node's series along a channel.
    pub fn node_series(&self, node: usize, channel: usize) -> Vec<f64> {
        (0..self.steps).map(|t| self.at(t, node, channel)).collect()
    }

    /// The `[n, d]` frame at one time step.
    pub fn frame(&self, t: usize) -> Tensor {
        let lo = t * self.nodes * self.channels;
        let hi = lo + self.nodes * self.channels;
        Tensor::from_raw(vec![self.nodes, self.channels], self.data[lo..hi].to_vec())
    }

    /// Mean over time per node and channel; used as node features by the
    /// attention-based adaptive graph.
    pub fn node_feature_means(&self) -> Tensor {
        let mut acc = vec![0.0; self.nodes * self.channels];
        for t in 0..self.steps {
            for i in 0..self.nodes * self.channels {
                acc[i] += self.data[t * self.nodes * self.channels + i];
            }
        }
        for v in &mut acc {
            *v /= self.steps as f64;
        }
        Tensor::from_raw(vec![self.nodes, self.channels], acc)
    }
}

/// Table-style dataset summary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeriesStats {
    pub nodes: usize,
    pub steps: usize,
    pub channels: usize,
    pub interval_minutes: u32,
    /// Fraction of exact-zero entries.
    pub missing_ratio: f64,
}

/// Summarize node/step counts and the exact-zero missing ratio.
pub fn compute_stats(rs: &RawSeries) -> SeriesStats {
    let zeros = rs.data.iter().filter(|&&v| v == 0.0).count();
    SeriesStats {
        nodes: rs.nodes,
        steps: rs.steps,
        channels: rs.channels,
        interval_minutes: rs.interval_minutes,
        missing_ratio: zeros as f64 / rs.data.len() as f64,
    }
}

/// Chronological train/validation/test fractions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        if train <= 0.0 || val <= 0.0 || test <= 0.0 {
            return Err(Error::Input("split fractions must be positive".into()));
        }
        if ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "split fractions sum to {}, expected 1",
                train + val + test
            )));
        }
        Ok(SplitSpec { train, val, test })
    }

    /// Default split for speed-style datasets.
    pub fn speed() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }

    /// Default split for flow-style datasets.
    pub fn flow() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }

    /// (train_end, val_end) step boundaries for a series of length `t`.
    pub fn boundaries(&self, t: usize) -> (usize, usize) {
        let train_end = (t as f64 * self.train).floor() as usize;
        let val_end = (t as f64 * (self.train + self.val)).floor() as usize;
        (train_end, val_end)
    }
}

/// Per-channel training-split mean and standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fit on steps `[0, train_end)` only.
    pub fn fit(rs: &RawSeries, train_end: usize) -> Result<Self> {
        if train_end == 0 || train_end > rs.steps {
            return Err(Error::Input(format!(
                "training split [0, {train_end}) invalid for {} steps",
                rs.steps
            )));
        }
        let d = rs.channels;
        let count = (train_end * rs.nodes) as f64;
        let mut mean = vec![0.0; d];
        for t in 0..train_end {
            for n in 0..rs.nodes {
                for c in 0..d {
                    mean[c] += rs.at(t, n, c);
                }
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        let mut var = vec![0.0; d];
        for t in 0..train_end {
            for n in 0..rs.nodes {
                for c in 0..d {
                    let diff = rs.at(t, n, c) - mean[c];
                    var[c] += diff * diff;
                }
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / count).sqrt()).collect();
        if let Some(c) = std.iter().position(|&s| s == 0.0) {
            return Err(Error::Input(format!(
                "channel {c} has zero variance on the training split"
            )));
        }
        Ok(Scaler { mean, std })
    }

    pub fn transform_value(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn inverse_value(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }

    /// Scale a whole series (all channels).
    pub fn transform(&self, rs: &RawSeries) -> RawSeries {
        let d = rs.channels;
        let data = rs
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| self.transform_value(i % d, v))
            .collect();
        RawSeries {
            data,
            ..rs.clone()
        }
    }

    /// Invert an `[n, d]` frame back to original units.
    pub fn inverse_frame(&self, frame: &Tensor) -> Tensor {
        let d = self.mean.len();
        let data = frame
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.inverse_value(i % d, v))
            .collect();
        Tensor::from_raw(frame.shape().to_vec(), data)
    }
}

/// One input/target window pair addressed by index arithmetic; the input
/// covers `[start, start + p)` and the target `[start + p, start + p + q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowedSample {
    pub start: usize,
    pub p: usize,
    pub q: usize,
}

impl WindowedSample {
    pub fn target_start(&self) -> usize {
        self.start + self.p
    }
}

/// Stride-1 chronological windows over `[lo, hi)`; exactly
/// `(hi - lo) - p - q + 1` samples.
pub fn make_windows_in(lo: usize, hi: usize, p: usize, q: usize) -> Result<Vec<WindowedSample>> {
    if p == 0 || q == 0 {
        return Err(Error::Input("window lengths must be positive".into()));
    }
    let len = hi.saturating_sub(lo);
    if len < p + q {
        return Err(Error::Input(format!(
            "segment of {len} steps too short for windows of {p}+{q}"
        )));
    }
    Ok((lo..=(hi - p - q))
        .map(|start| WindowedSample { start, p, q })
        .collect())
}

/// Windows over a whole series.
pub fn make_windows(rs: &RawSeries, p: usize, q: usize) -> Result<Vec<WindowedSample>> {
    make_windows_in(0, rs.steps, p, q)
}

/// Which chronological segment a consumer wants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A split, scaled dataset serving lazily-addressed window pairs.
///
/// Inputs and training targets come from the scaled series; masks and
/// metric targets come from the raw series, where exact zeros mark missing
/// entries. Windows never straddle a split boundary.
#[derive(Clone)]
pub struct WindowedDataset {
    raw: Arc<RawSeries>,
    scaled: Arc<RawSeries>,
    scaler: Scaler,
    p: usize,
    q: usize,
    train_end: usize,
    val_end: usize,
}

impl WindowedDataset {
    pub fn new(raw: RawSeries, split: &SplitSpec, p: usize, q: usize) -> Result<Self> {
        let (train_end, val_end) = split.boundaries(raw.steps);
        if train_end < p + q || val_end - train_end < p + q || raw.steps - val_end < p + q {
            return Err(Error::Input(format!(
                "series of {} steps cannot hold {p}+{q} windows in every split",
                raw.steps
            )));
        }
        let scaler = Scaler::fit(&raw, train_end)?;
        let scaled = scaler.transform(&raw);
        Ok(WindowedDataset {
            raw: Arc::new(raw),
            scaled: Arc::new(scaled),
            scaler,
            p,
            q,
            train_end,
            val_end,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn nodes(&self) -> usize {
        self.raw.nodes
    }

    pub fn channels(&self) -> usize {
        self.raw.channels
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn raw(&self) -> &RawSeries {
        &self.raw
    }

    pub fn train_end(&self) -> usize {
        self.train_end
    }

    /// Window index list for one split; within-split, stride 1.
    pub fn windows(&self, split: Split) -> Vec<WindowedSample> {
        let (lo, hi) = match split {
            Split::Train => (0, self.train_end),
            Split::Val => (self.train_end, self.val_end),
            Split::Test => (self.val_end, self.raw.steps),
        };
        make_windows_in(lo, hi, self.p, self.q).expect("validated at construction")
    }

    /// Scaled input frames, one `[n, d]` tensor per input step.
    pub fn input_scaled(&self, w: &WindowedSample) -> Vec<Tensor> {
        (0..self.p).map(|t| self.scaled.frame(w.start + t)).collect()
    }

    /// Raw input frames (baselines work in original units).
    pub fn input_raw(&self, w: &WindowedSample) -> Vec<Tensor> {
        (0..self.p).map(|t| self.raw.frame(w.start + t)).collect()
    }

    /// Scaled target frames.
    pub fn target_scaled(&self, w: &WindowedSample) -> Vec<Tensor> {
        (0..self.q)
            .map(|t| self.scaled.frame(w.target_start() + t))
            .collect()
    }

    /// Raw target frames.
    pub fn target_raw(&self, w: &WindowedSample) -> Vec<Tensor> {
        (0..self.q)
            .map(|t| self.raw.frame(w.target_start() + t))
            .collect()
    }

    /// 1.0 where the raw target is observed (nonzero), 0.0 where missing.
    pub fn target_mask(&self, w: &WindowedSample) -> Vec<Tensor> {
        self.target_raw(w)
            .into_iter()
            .map(|f| f.map(|v| if v != 0.0 { 1.0 } else { 0.0 }))
            .collect()
    }
}

/// Masked error metrics; MAPE is reported in percent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MaskedMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

/// Running sums for masked metrics, mergeable across windows and horizons.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricAccumulator {
    sum_abs: f64,
    sum_sq: f64,
    sum_ape: f64,
    count: u64,
}

impl MetricAccumulator {
    pub fn push(&mut self, truth: f64, pred: f64) {
        if truth == 0.0 {
            return;
        }
        let err = truth - pred;
        self.sum_abs += err.abs();
        self.sum_sq += err * err;
        self.sum_ape += (err / truth).abs();
        self.count += 1;
    }

    pub fn push_frames(&mut self, truth: &Tensor, pred: &Tensor) {
        debug_assert_eq!(truth.shape(), pred.shape());
        for (&t, &p) in truth.data().iter().zip(pred.data().iter()) {
            self.push(t, p);
        }
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.sum_abs += other.sum_abs;
        self.sum_sq += other.sum_sq;
        self.sum_ape += other.sum_ape;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finalize(&self) -> Result<MaskedMetrics> {
        if self.count == 0 {
            return Err(Error::Metric("every entry is masked".into()));
        }
        let m = self.count as f64;
        Ok(MaskedMetrics {
            mae: self.sum_abs / m,
            rmse: (self.sum_sq / m).sqrt(),
            mape: 100.0 * self.sum_ape / m,
        })
    }
}

/// Masked MAE/RMSE/MAPE over entries where the ground truth is nonzero.
pub fn masked_metrics(truth: &[f64], pred: &[f64]) -> Result<MaskedMetrics> {
    if truth.len() != pred.len() {
        return Err(Error::Input(format!(
            "metric inputs differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut acc = MetricAccumulator::default();
    for (&t, &p) in truth.iter().zip(pred.iter()) {
        acc.push(t, p);
    }
    acc.finalize()
}

/// Write the per-horizon + average metric report (rows `1..Q` then `avg`).
pub fn write_metrics_csv(
    path: &std::path::Path,
    per_horizon: &[MaskedMetrics],
    average: &MaskedMetrics,
) -> Result<()> {
    let mut out = String::from("horizon,mae,rmse,mape\n");
    for (h, m) in per_horizon.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", h + 1, m.mae, m.rmse, m.mape));
    }
    out.push_str(&format!(
        "avg,{},{},{}\n",
        average.mae, average.rmse, average.mape
    ));
    std::fs::write(path, out)?;
    Ok(())
}

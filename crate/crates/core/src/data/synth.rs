//! Synthetic traffic generator: a random geometric sensor graph whose node
//! signals combine a daily sinusoid, graph-diffused autoregressive noise,
//! spatially smooth phase offsets and a configurable missing fraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RawSeries;
use crate::error::{Error, Result};
use crate::graph::{build_distance_graph, AdjMatrix, DistanceTable};

/// Generator knobs; the defaults produce a speed-like dataset where both the
/// seasonal component and the noise carry learnable structure.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub nodes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Fraction of entries zeroed out as missing.
    pub missing_fraction: f64,
    /// Geometric connection radius in the unit square.
    pub radius: f64,
    /// Gaussian kernel bandwidth for edge weights.
    pub sigma2: f64,
    pub base_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    /// Innovation standard deviation of the AR noise.
    pub noise_sd: f64,
    /// AR(1) coefficient applied after neighbor diffusion.
    pub ar_coeff: f64,
    pub interval_minutes: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            nodes: 20,
            steps: 2880,
            seed: 1,
            missing_fraction: 0.02,
            radius: 0.35,
            sigma2: 0.1,
            base_range: (55.0, 65.0),
            amplitude_range: (14.0, 22.0),
            noise_sd: 1.5,
            ar_coeff: 0.95,
            interval_minutes: 5,
        }
    }
}

/// Generate the series and its ground-truth distance graph, deterministic
/// under the seed.
pub fn synth_traffic(cfg: &SynthConfig) -> Result<(RawSeries, AdjMatrix)> {
    if cfg.nodes < 2 {
        return Err(Error::Input("synthetic generator needs >= 2 nodes".into()));
    }
    let period = (24 * 60 / cfg.interval_minutes) as usize;
    if cfg.steps < period {
        return Err(Error::Input(format!(
            "synthetic generator needs >= {period} steps (one day)"
        )));
    }
    if !(0.0..1.0).contains(&cfg.missing_fraction) {
        return Err(Error::Input("missing fraction must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes;

    let positions: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dx = positions[i].0 - positions[j].0;
            let dy = positions[i].1 - positions[j].1;
            d[i * n + j] = (dx * dx + dy * dy).sqrt();
        }
    }
    let dt = DistanceTable::new(n, d)?;
    // Kernel threshold at the connection radius: pairs farther than `radius`
    // fall below eps and drop to zero.
    let eps = (-(cfg.radius * cfg.radius) / cfg.sigma2).exp();
    let adj = build_distance_graph(&dt, cfg.sigma2, eps)?;

    // Row-normalized (A + I) mixing for the diffused noise.
    let mut mix = vec![0.0; n * n];
    for i in 0..n {
        let mut row_sum = 1.0;
        for j in 0..n {
            row_sum += adj.at(i, j);
        }
        for j in 0..n {
            let w = adj.at(i, j) + if i == j { 1.0 } else { 0.0 };
            mix[i * n + j] = w / row_sum;
        }
    }

    let base: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(cfg.base_range.0..cfg.base_range.1))
        .collect();
    let amp: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(cfg.amplitude_range.0..cfg.amplitude_range.1))
        .collect();
    // Phases follow position so nearby sensors share their daily profile.
    let phase: Vec<f64> = (0..n)
        .map(|i| {
            let (x, y) = positions[i];
            (x + y) / 2.0 * period as f64 / 2.0 + rng.gen_range(-6.0..6.0)
        })
        .collect();

    let normal = Normal::new(0.0, cfg.noise_sd).expect("positive sd");
    let mut noise = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut data = vec![0.0; cfg.steps * n];
    let two_pi = std::f64::consts::TAU;
    for t in 0..cfg.steps {
        for i in 0..n {
            let mut diffused = 0.0;
            for j in 0..n {
                diffused += mix[i * n + j] * noise[j];
            }
            next[i] = cfg.ar_coeff * diffused + normal.sample(&mut rng);
        }
        std::mem::swap(&mut noise, &mut next);
        for i in 0..n {
            let seasonal = amp[i] * (two_pi * (t as f64 - phase[i]) / period as f64).sin();
            data[t * n + i] = base[i] + seasonal + noise[i];
        }
    }
    if cfg.missing_fraction > 0.0 {
        for v in &mut data {
            if rng.gen::<f64>() < cfg.missing_fraction {
                *v = 0.0;
            }
        }
    }
    let series = RawSeries::new(
        data,
        cfg.steps,
        n,
        1,
        cfg.interval_minutes,
        None,
        Some(vec!["speed".into()]),
    )?;
    Ok((series, adj))
}

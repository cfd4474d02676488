//! Command implementations over a run directory laid out as cache/, logs/,
//! models/ and reports/, with a lock file guarding concurrent ownership.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use stgf_core::data::{
    compute_stats, ingest_csv, synth_traffic, ChannelMeta, DatasetMetadata, RawSeries,
    SeriesStats, Split, WindowedDataset,
};
use stgf_core::graph::{
    adaptive_graph, build_connectivity_graph, build_distance_graph, build_distribution_graph,
    build_functionality_graph, build_semantic_graph, io as graph_io, sample_graph_gumbel,
    AdaptiveVariant, AdjMatrix, EmbeddingPair, GraphKind, ProbabilityGraph,
};
use stgf_core::model::{Model, ModelSpec};
use stgf_core::tensor::Tensor;
use stgf_core::train::{
    evaluate, evaluate_baseline, read_run_log, train, write_run_log, BaselineKind, RunRecord,
    TestReport,
};
use stgf_core::{Error, Result};

use crate::config::{DataConfig, DataSource, GraphConfig, RunConfig};

/// Artifact layout inside one run directory.
pub struct RunDirs {
    pub root: PathBuf,
    pub cache: PathBuf,
    pub logs: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl RunDirs {
    pub fn at(root: &Path) -> Self {
        RunDirs {
            root: root.to_path_buf(),
            cache: root.join("cache"),
            logs: root.join("logs"),
            models: root.join("models"),
            reports: root.join("reports"),
        }
    }

    fn prepare(&self) -> Result<()> {
        for dir in [&self.root, &self.cache, &self.logs, &self.models, &self.reports] {
            fs::create_dir_all(dir)?;
        }
        Ok(())
    }
}

/// Exclusive ownership of a run directory for the life of one command.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let path = root.join(".stgf.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::State(format!(
                "run directory {} is owned by another command (lock {})",
                root.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn load_series(data: &DataConfig) -> Result<(RawSeries, Option<AdjMatrix>)> {
    match &data.source {
        DataSource::Synthetic(cfg) => {
            let (series, adj) = synth_traffic(cfg)?;
            Ok((series, Some(adj)))
        }
        DataSource::Csv(metadata) => Ok((ingest_csv(metadata)?, None)),
    }
}

fn cached_metadata(dirs: &RunDirs) -> PathBuf {
    dirs.cache.join("metadata.json")
}

fn cached_graph(dirs: &RunDirs) -> PathBuf {
    dirs.cache.join("graph.csv")
}

fn require_cache(dirs: &RunDirs) -> Result<()> {
    if !cached_metadata(dirs).exists() {
        return Err(Error::State(format!(
            "no ingested dataset under {}; run `stgf ingest` first",
            dirs.cache.display()
        )));
    }
    Ok(())
}

fn require_graph(dirs: &RunDirs) -> Result<()> {
    if !cached_graph(dirs).exists() {
        return Err(Error::State(format!(
            "no graph artifact under {}; run `stgf build-graph` first",
            dirs.cache.display()
        )));
    }
    Ok(())
}

fn load_cached_dataset(config: &RunConfig, dirs: &RunDirs) -> Result<WindowedDataset> {
    let data = config.data()?;
    let series = ingest_csv(&cached_metadata(dirs))?;
    WindowedDataset::new(series, &data.split, data.p, data.q)
}

fn write_series_cache(series: &RawSeries, stats: &SeriesStats, dir: &Path) -> Result<()> {
    let channels: Vec<ChannelMeta> = series
        .channel_names()
        .iter()
        .map(|name| ChannelMeta {
            name: name.clone(),
            csv: format!("channel_{name}.csv"),
        })
        .collect();
    for (c, meta) in channels.iter().enumerate() {
        let mut out = String::new();
        for t in 0..series.steps() {
            let row: Vec<String> = (0..series.nodes())
                .map(|n| format!("{}", series.at(t, n, c)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(dir.join(&meta.csv), out)?;
    }
    let metadata = DatasetMetadata {
        nodes: series.node_ids().to_vec(),
        interval_minutes: series.interval_minutes(),
        channels,
    };
    fs::write(
        dir.join("metadata.json"),
        serde_json::to_string_pretty(&metadata)?,
    )?;
    fs::write(dir.join("stats.json"), serde_json::to_string_pretty(stats)?)?;
    Ok(())
}

fn print_stats(stats: &SeriesStats) {
    println!(
        "nodes {}  steps {}  channels {}  interval {} min  missing {:.3}%",
        stats.nodes,
        stats.steps,
        stats.channels,
        stats.interval_minutes,
        stats.missing_ratio * 100.0
    );
}

/// Validate, ingest, print the dataset summary and atomically populate the
/// preprocessed cache.
pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let data = config.data()?;
    let dirs = RunDirs::at(&config.output_dir()?);
    let _lock = LockGuard::acquire(&dirs.root)?;
    // The cache directory only appears through the staging rename below, so
    // a failed ingest leaves nothing behind.
    let (series, generator_graph) = load_series(&data)?;
    let stats = compute_stats(&series);
    // Everything lands in a staging directory first; the rename publishes it.
    let staging = dirs.root.join("cache.tmp");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    write_series_cache(&series, &stats, &staging)?;
    if let Some(adj) = &generator_graph {
        let mut params = BTreeMap::new();
        params.insert("origin".to_string(), "synthetic-generator".to_string());
        graph_io::write_graph_csv(adj, &staging.join("generator_graph.csv"), params, None)?;
    }
    if dirs.cache.exists() {
        fs::remove_dir_all(&dirs.cache)?;
    }
    fs::rename(&staging, &dirs.cache)?;
    print_stats(&stats);
    Ok(())
}

fn build_graph_artifact(
    dirs: &RunDirs,
    graph: &GraphConfig,
) -> Result<(AdjMatrix, BTreeMap<String, String>, Option<u64>)> {
    let mut params = BTreeMap::new();
    let mut seed = None;
    let series = || ingest_csv(&cached_metadata(dirs));
    let n_known = series().map(|s| s.nodes()).ok();
    let adj = match graph.kind {
        GraphKind::Distance => {
            params.insert("sigma2".into(), graph.sigma2.to_string());
            params.insert("eps".into(), graph.eps.to_string());
            match &graph.distance_csv {
                Some(path) => {
                    let table = graph_io::read_distance_csv(path, n_known)?;
                    build_distance_graph(&table, graph.sigma2, graph.eps)?
                }
                None => {
                    let generated = dirs.cache.join("generator_graph.csv");
                    if !generated.exists() {
                        return Err(Error::Config(
                            "distance kind needs distance_csv (or a synthetic dataset)".into(),
                        ));
                    }
                    params.insert("origin".into(), "synthetic-generator".into());
                    graph_io::read_graph_csv(&generated)?
                }
            }
        }
        GraphKind::Connectivity => {
            let path = graph.edges_csv.as_ref().ok_or_else(|| {
                Error::Config("connectivity kind requires edges_csv".into())
            })?;
            let (edges, n) = graph_io::read_edge_list_csv(path, n_known)?;
            params.insert("directed".into(), graph.directed.to_string());
            build_connectivity_graph(&edges, n, graph.directed)?
        }
        GraphKind::Semantic => {
            params.insert("eps".into(), graph.eps.to_string());
            params.insert("channel".into(), graph.channel.to_string());
            if let Some(band) = graph.band {
                params.insert("band".into(), band.to_string());
            }
            build_semantic_graph(&series()?, graph.channel, graph.eps, graph.band)?
        }
        GraphKind::Functionality => {
            let path = graph.poi_csv.as_ref().ok_or_else(|| {
                Error::Config("functionality kind requires poi_csv".into())
            })?;
            build_functionality_graph(&graph_io::read_poi_csv(path, n_known)?)?
        }
        GraphKind::Distribution => {
            params.insert("bins".into(), graph.bins.to_string());
            params.insert("channel".into(), graph.channel.to_string());
            build_distribution_graph(&series()?, graph.channel, graph.bins)?
        }
        GraphKind::Sampled => {
            let n = n_known.ok_or_else(|| {
                Error::State("sampled kind needs an ingested dataset for its node count".into())
            })?;
            params.insert("theta".into(), graph.theta.to_string());
            params.insert("temperature".into(), graph.temperature.to_string());
            seed = Some(graph.seed);
            let pg = ProbabilityGraph::new(n, vec![graph.theta; n * n], graph.temperature)?;
            sample_graph_gumbel(&pg, graph.seed)?
        }
        kind => {
            // Adaptive snapshots from seeded random embeddings.
            let n = n_known.ok_or_else(|| {
                Error::State("adaptive kinds need an ingested dataset for their node count".into())
            })?;
            params.insert("embed_dim".into(), graph.embed_dim.to_string());
            params.insert("alpha".into(), graph.alpha.to_string());
            seed = Some(graph.seed);
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(graph.seed);
            let dim = graph.embed_dim;
            let mut random = |rows: usize, cols: usize| -> Tensor {
                let bound = 1.0 / (cols as f64).sqrt();
                Tensor::new(
                    vec![rows, cols],
                    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
                )
                .expect("finite init")
            };
            let variant = match kind {
                GraphKind::AdaptiveDirect => AdaptiveVariant::Direct,
                GraphKind::AdaptiveUndirected => AdaptiveVariant::Undirected,
                GraphKind::AdaptiveDirected => AdaptiveVariant::Directed,
                GraphKind::AdaptiveUnidirected => AdaptiveVariant::Unidirected,
                GraphKind::AdaptiveAttention => AdaptiveVariant::Attention,
                _ => unreachable!("non-adaptive kinds handled above"),
            };
            let (pair, features) = match variant {
                AdaptiveVariant::Direct => (
                    EmbeddingPair::new(random(n, n), random(n, n), graph.alpha)?,
                    None,
                ),
                AdaptiveVariant::Attention => {
                    let s = series()?;
                    let d = s.channels();
                    let pair = EmbeddingPair::new(random(n, dim), random(n, dim), graph.alpha)?
                        .with_attention(random(d + dim, dim), random(d + dim, dim));
                    (pair, Some(s.node_feature_means()))
                }
                _ => (
                    EmbeddingPair::new(random(n, dim), random(n, dim), graph.alpha)?,
                    None,
                ),
            };
            adaptive_graph(variant, &pair, features.as_ref())?
        }
    };
    Ok((adj, params, seed))
}

/// Build the configured graph and publish cache/graph.csv plus its sidecar.
pub fn cmd_build_graph(config: &RunConfig) -> Result<()> {
    let graph = config.graph()?;
    let dirs = RunDirs::at(&config.output_dir()?);
    let _lock = LockGuard::acquire(&dirs.root)?;
    require_cache(&dirs)?;
    let (adj, params, seed) = build_graph_artifact(&dirs, &graph)?;
    graph_io::write_graph_csv(&adj, &cached_graph(&dirs), params, seed)?;
    println!(
        "graph kind {} nodes {} directed {} -> {}",
        adj.kind().as_str(),
        adj.n(),
        adj.directed(),
        cached_graph(&dirs).display()
    );
    Ok(())
}

fn resolve_spec(mut spec: ModelSpec, dataset: &WindowedDataset) -> ModelSpec {
    spec.n = dataset.nodes();
    spec.d = dataset.channels();
    spec
}

fn checkpoint_paths(dirs: &RunDirs, name: &str) -> (PathBuf, PathBuf) {
    (
        dirs.models.join(format!("{name}.manifest.json")),
        dirs.models.join(format!("{name}.params.bin")),
    )
}

fn load_prior(config: &RunConfig, dirs: &RunDirs) -> Result<Option<Tensor>> {
    let graph = config.graph()?;
    match &graph.prior {
        Some(path) => Ok(Some(graph_io::read_graph_csv(path)?.to_tensor())),
        None => {
            // Fall back to the built graph when a regularizer weight is set.
            if config.train()?.lambda_graph > 0.0 {
                Ok(Some(graph_io::read_graph_csv(&cached_graph(dirs))?.to_tensor()))
            } else {
                Ok(None)
            }
        }
    }
}

fn run_one(
    config: &RunConfig,
    dirs: &RunDirs,
    name: &str,
    spec: ModelSpec,
    seed_override: Option<u64>,
) -> Result<(RunRecord, TestReport)> {
    let dataset = load_cached_dataset(config, dirs)?;
    let adj = graph_io::read_graph_csv(&cached_graph(dirs))?;
    let spec = resolve_spec(spec, &dataset);
    let mut train_config = config.train()?;
    if let Some(seed) = seed_override {
        train_config.seed = seed;
    }
    let prior = load_prior(config, dirs)?;
    let mut model = Model::new(spec, &adj, train_config.seed)?;
    let mut record = train(&mut model, &dataset, &train_config, prior.as_ref())?;
    record.name = name.to_string();
    let report = evaluate(&model, &dataset, Split::Test, train_config.seed)?;
    record.test = Some(report.clone());

    let (manifest, blob) = checkpoint_paths(dirs, name);
    model.store().save(&manifest, &blob)?;
    write_run_log(&dirs.logs.join(format!("{name}.jsonl")), &record)?;
    stgf_core::data::write_metrics_csv(
        &dirs.reports.join(format!("{name}_metrics.csv")),
        &report.per_horizon,
        &report.average,
    )?;
    Ok((record, report))
}

/// Train the configured model, checkpoint it, and report test metrics.
pub fn cmd_train(config: &RunConfig, seed_override: Option<u64>) -> Result<()> {
    let dirs = RunDirs::at(&config.output_dir()?);
    let _lock = LockGuard::acquire(&dirs.root)?;
    require_cache(&dirs)?;
    require_graph(&dirs)?;
    dirs.prepare()?;
    let data = config.data()?;
    let spec = config.model_spec(&data)?;
    let name = config.run_name();
    let (record, report) = run_one(config, &dirs, &name, spec, seed_override)?;
    println!(
        "run {} epochs {} best {} params {} | test mae {:.4} rmse {:.4} mape {:.2}%",
        name,
        record.epochs.len(),
        record.best_epoch,
        record.param_count,
        report.average.mae,
        report.average.rmse,
        report.average.mape
    );
    Ok(())
}

/// Load the checkpoint back under the configured spec and re-evaluate.
pub fn cmd_evaluate(config: &RunConfig, seed_override: Option<u64>) -> Result<()> {
    let dirs = RunDirs::at(&config.output_dir()?);
    let _lock = LockGuard::acquire(&dirs.root)?;
    require_cache(&dirs)?;
    require_graph(&dirs)?;
    let dataset = load_cached_dataset(config, &dirs)?;
    let adj = graph_io::read_graph_csv(&cached_graph(&dirs))?;
    let data = config.data()?;
    let spec = resolve_spec(config.model_spec(&data)?, &dataset);
    let name = config.run_name();
    let (manifest, blob) = checkpoint_paths(&dirs, &name);
    if !manifest.exists() || !blob.exists() {
        return Err(Error::State(format!(
            "no checkpoint for run '{name}' under {}",
            dirs.models.display()
        )));
    }
    let mut train_config = config.train()?;
    if let Some(seed) = seed_override {
        train_config.seed = seed;
    }
    let mut model = Model::new(spec, &adj, train_config.seed)?;
    model.store_mut().load(&manifest, &blob)?;
    let report = evaluate(&model, &dataset, Split::Test, train_config.seed)?;
    stgf_core::data::write_metrics_csv(
        &dirs.reports.join(format!("{name}_metrics.csv")),
        &report.per_horizon,
        &report.average,
    )?;
    for (h, m) in report.per_horizon.iter().enumerate() {
        println!("horizon {:>2}  mae {:.4}  rmse {:.4}  mape {:.2}%", h + 1, m.mae, m.rmse, m.mape);
    }
    println!(
        "average     mae {:.4}  rmse {:.4}  mape {:.2}%",
        report.average.mae, report.average.rmse, report.average.mape
    );
    Ok(())
}

fn metric_columns(report: &TestReport, q: usize) -> Vec<f64> {
    let mut cols = Vec::new();
    for h in [3usize, 6, 12] {
        let idx = h.min(q) - 1;
        let m = &report.per_horizon[idx];
        cols.extend([m.mae, m.rmse, m.mape]);
    }
    cols.extend([report.average.mae, report.average.rmse, report.average.mape]);
    cols
}

/// Train every configured (archetype x conv x source) triple plus the two
/// baselines on the same splits and seed; emit the comparison table and the
/// parameter/epoch-time summary.
pub fn cmd_benchmark(config: &RunConfig, seed_override: Option<u64>) -> Result<()> {
    let dirs = RunDirs::at(&config.output_dir()?);
    let _lock = LockGuard::acquire(&dirs.root)?;
    require_cache(&dirs)?;
    require_graph(&dirs)?;
    dirs.prepare()?;
    let data = config.data()?;
    let dataset = load_cached_dataset(config, &dirs)?;
    let q = dataset.q();

    let mut rows: Vec<(String, TestReport, Option<(usize, f64)>)> = Vec::new();
    if config.benchmark_baselines()? {
        for kind in [BaselineKind::Persistence, BaselineKind::HistoricalAverage] {
            let report = evaluate_baseline(kind, &dataset, Split::Test)?;
            println!("{:<28} mae {:.4}", kind.name(), report.average.mae);
            rows.push((kind.name().to_string(), report, None));
        }
    }
    for (archetype, conv, source) in config.benchmark_models()? {
        let name = format!("{}-{}-{}", archetype.name(), conv, source);
        let spec = config.spec_for(archetype, &conv, &data, Some(&source))?;
        let (record, report) = run_one(config, &dirs, &name, spec, seed_override)?;
        println!(
            "{:<28} mae {:.4} ({} epochs, {} params)",
            name,
            report.average.mae,
            record.epochs.len(),
            record.param_count
        );
        rows.push((
            name,
            report,
            Some((record.param_count, record.sec_per_epoch)),
        ));
    }
    if rows.is_empty() {
        return Err(Error::Config(
            "benchmark has no models and baselines are disabled".into(),
        ));
    }

    let mut table = String::from(
        "model,mae_h3,rmse_h3,mape_h3,mae_h6,rmse_h6,mape_h6,mae_h12,rmse_h12,mape_h12,mae_avg,rmse_avg,mape_avg,params\n",
    );
    for (name, report, cost) in &rows {
        let cols: Vec<String> = metric_columns(report, q)
            .into_iter()
            .map(|v| format!("{v}"))
            .collect();
        let params = cost.map(|(p, _)| p.to_string()).unwrap_or_default();
        table.push_str(&format!("{name},{},{params}\n", cols.join(",")));
    }
    fs::write(dirs.reports.join("benchmark.csv"), table)?;

    let mut efficiency = String::from("model,params,sec_per_epoch\n");
    for (name, _, cost) in &rows {
        if let Some((params, sec)) = cost {
            efficiency.push_str(&format!("{name},{params},{sec}\n"));
        }
    }
    fs::write(dirs.reports.join("efficiency.csv"), efficiency)?;
    println!("wrote {}", dirs.reports.join("benchmark.csv").display());
    Ok(())
}

/// Collect run logs into plot-ready CSVs: MAE per horizon per run, and
/// parameter count against epoch time.
pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let dirs = RunDirs::at(&config.output_dir()?);
    let _lock = LockGuard::acquire(&dirs.root)?;
    let mut log_paths: Vec<PathBuf> = match fs::read_dir(&dirs.logs) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
            .collect(),
        Err(_) => Vec::new(),
    };
    log_paths.sort();
    let mut records: Vec<RunRecord> = Vec::new();
    for path in &log_paths {
        records.push(read_run_log(path)?);
    }
    if records.is_empty() {
        return Err(Error::Input(format!(
            "no run logs under {}",
            dirs.logs.display()
        )));
    }
    dirs.prepare()?;

    let max_q = records
        .iter()
        .filter_map(|r| r.test.as_ref().map(|t| t.per_horizon.len()))
        .max()
        .unwrap_or(0);
    if max_q == 0 {
        return Err(Error::Input("no run log carries test metrics".into()));
    }
    let mut horizon = String::from("horizon");
    for r in &records {
        horizon.push(',');
        horizon.push_str(&r.name);
    }
    horizon.push('\n');
    for h in 0..max_q {
        horizon.push_str(&format!("{}", h + 1));
        for r in &records {
            horizon.push(',');
            if let Some(m) = r.test.as_ref().and_then(|t| t.per_horizon.get(h)) {
                horizon.push_str(&format!("{}", m.mae));
            }
        }
        horizon.push('\n');
    }
    fs::write(dirs.reports.join("horizon_mae.csv"), horizon)?;

    let mut cost = String::from("run,params,sec_per_epoch\n");
    for r in &records {
        cost.push_str(&format!("{},{},{}\n", r.name, r.param_count, r.sec_per_epoch));
    }
    fs::write(dirs.reports.join("params_time.csv"), cost)?;
    println!(
        "wrote {} and {}",
        dirs.reports.join("horizon_mae.csv").display(),
        dirs.reports.join("params_time.csv").display()
    );
    Ok(())
}

//! Sectioned key = value run configuration: parsing, whitelist validation
//! and typed views. Validation is total before any command does work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stgf_core::data::{SplitSpec, SynthConfig};
use stgf_core::graph::{AdaptiveVariant, GraphKind};
use stgf_core::model::{Archetype, GraphSourceSpec, ModelSpec};
use stgf_core::ops::{GraphConvKind, HopAggregation};
use stgf_core::train::{CurriculumMode, TrainConfig};
use stgf_core::{Error, Result};

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "source",
            "metadata",
            "nodes",
            "steps",
            "missing_fraction",
            "synth_seed",
            "ar_coeff",
            "split",
            "p",
            "q",
        ],
    ),
    (
        "graph",
        &[
            "kind",
            "sigma2",
            "eps",
            "distance_csv",
            "edges_csv",
            "directed",
            "poi_csv",
            "channel",
            "band",
            "bins",
            "embed_dim",
            "alpha",
            "theta",
            "temperature",
            "graph_seed",
            "prior",
        ],
    ),
    (
        "model",
        &[
            "name",
            "archetype",
            "conv",
            "hidden",
            "rnn_layers",
            "kernel",
            "dilations",
            "blocks",
            "heads",
            "positional_encoding",
            "cheb_k",
            "diffusion_k",
            "hops",
            "beta",
            "aggregation",
            "graph_source",
            "embed_dim",
            "alpha",
            "temperature",
        ],
    ),
    (
        "train",
        &[
            "max_epochs",
            "patience",
            "batch_size",
            "learning_rate",
            "curriculum",
            "tau",
            "seed",
            "lambda_graph",
            "clip_norm",
            "teacher_forcing",
        ],
    ),
    ("benchmark", &["models", "baselines"]),
    ("output", &["dir"]),
];

/// Raw parsed config: section -> key -> value.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    base_dir: PathBuf,
}

impl RunConfig {
    /// Parse and validate a config file. Unknown sections or keys are
    /// rejected; nothing is written anywhere.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_lowercase();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Config(format!(
                        "{} line {}: unknown section [{name}]",
                        path.display(),
                        lineno + 1
                    )));
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{} line {}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let section = current.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "{} line {}: key outside any [section]",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_lowercase();
            let allowed = SECTIONS
                .iter()
                .find(|(s, _)| s == section)
                .map(|(_, keys)| *keys)
                .unwrap();
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{} line {}: unknown key '{key}' in [{section}]",
                    path.display(),
                    lineno + 1
                )));
            }
            sections
                .get_mut(section)
                .unwrap()
                .insert(key, value.trim().to_string());
        }
        let config = RunConfig {
            sections,
            base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        config.validate()?;
        Ok(config)
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("[{section}] {key}: cannot parse '{raw}'"))
            }),
        }
    }

    fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.parse(section, key)?
            .ok_or_else(|| Error::Config(format!("[{section}] missing required key '{key}'")))
    }

    fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        self.get(section, key).map(|p| self.base_dir.join(p))
    }

    fn validate(&self) -> Result<()> {
        self.output_dir()?;
        self.data()?;
        if self.sections.contains_key("graph") {
            self.graph()?;
        }
        if self.sections.contains_key("model") {
            let data = self.data()?;
            self.model_spec(&data)?;
        }
        self.train()?;
        self.benchmark_models()?;
        // Referenced input files must exist up front.
        for (section, key) in [
            ("data", "metadata"),
            ("graph", "distance_csv"),
            ("graph", "edges_csv"),
            ("graph", "poi_csv"),
            ("graph", "prior"),
        ] {
            if let Some(path) = self.path(section, key) {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "[{section}] {key}: {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        Ok(self.base_dir.join(self.require::<String>("output", "dir")?))
    }

    pub fn data(&self) -> Result<DataConfig> {
        let source = self
            .get("data", "source")
            .unwrap_or("synthetic")
            .to_string();
        let split = match self.get("data", "split") {
            None => SplitSpec::speed(),
            Some(raw) => {
                let parts: Vec<f64> = raw
                    .split(':')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("[data] split: cannot parse '{raw}'")))?;
                if parts.len() != 3 {
                    return Err(Error::Config(
                        "[data] split needs three ratio parts like 7:1:2".into(),
                    ));
                }
                let total: f64 = parts.iter().sum();
                SplitSpec::new(parts[0] / total, parts[1] / total, parts[2] / total)
                    .map_err(|e| Error::Config(format!("[data] split: {e}")))?
            }
        };
        let p = self.parse("data", "p")?.unwrap_or(12);
        let q = self.parse("data", "q")?.unwrap_or(12);
        if p < 1 || q < 1 {
            return Err(Error::Config("[data] p and q must be >= 1".into()));
        }
        let config = match source.as_str() {
            "synthetic" => {
                let mut synth = SynthConfig {
                    nodes: self.parse("data", "nodes")?.unwrap_or(20),
                    steps: self.parse("data", "steps")?.unwrap_or(2880),
                    seed: self.parse("data", "synth_seed")?.unwrap_or(42),
                    missing_fraction: self.parse("data", "missing_fraction")?.unwrap_or(0.02),
                    ..Default::default()
                };
                if let Some(ar) = self.parse("data", "ar_coeff")? {
                    synth.ar_coeff = ar;
                }
                DataSource::Synthetic(synth)
            }
            "csv" => {
                let metadata = self.path("data", "metadata").ok_or_else(|| {
                    Error::Config("[data] source = csv requires 'metadata'".into())
                })?;
                DataSource::Csv(metadata)
            }
            other => {
                return Err(Error::Config(format!(
                    "[data] source must be 'synthetic' or 'csv', got '{other}'"
                )))
            }
        };
        Ok(DataConfig {
            source: config,
            split,
            p,
            q,
        })
    }

    pub fn graph(&self) -> Result<GraphConfig> {
        let kind: GraphKind = self.require::<String>("graph", "kind")?.parse()?;
        Ok(GraphConfig {
            kind,
            sigma2: self.parse("graph", "sigma2")?.unwrap_or(0.1),
            eps: self.parse("graph", "eps")?.unwrap_or(0.1),
            distance_csv: self.path("graph", "distance_csv"),
            edges_csv: self.path("graph", "edges_csv"),
            directed: self.parse("graph", "directed")?.unwrap_or(false),
            poi_csv: self.path("graph", "poi_csv"),
            channel: self.parse("graph", "channel")?.unwrap_or(0),
            band: self.parse("graph", "band")?,
            bins: self
                .parse("graph", "bins")?
                .unwrap_or(stgf_core::graph::DEFAULT_DISTRIBUTION_BINS),
            embed_dim: self.parse("graph", "embed_dim")?.unwrap_or(10),
            alpha: self.parse("graph", "alpha")?.unwrap_or(3.0),
            theta: self.parse("graph", "theta")?.unwrap_or(0.5),
            temperature: self.parse("graph", "temperature")?.unwrap_or(0.5),
            seed: self.parse("graph", "graph_seed")?.unwrap_or(7),
            prior: self.path("graph", "prior"),
        })
    }

    /// The [model] section resolved against the dataset dimensions.
    pub fn model_spec(&self, data: &DataConfig) -> Result<ModelSpec> {
        let archetype: Archetype = self
            .get("model", "archetype")
            .unwrap_or("rnn")
            .parse()?;
        self.spec_for(archetype, self.get("model", "conv").unwrap_or("gcn"), data, None)
    }

    /// Build a spec for one benchmark triple archetype:conv:source.
    pub fn spec_for(
        &self,
        archetype: Archetype,
        conv: &str,
        data: &DataConfig,
        source_override: Option<&str>,
    ) -> Result<ModelSpec> {
        let conv = match conv {
            "gcn" => GraphConvKind::Gcn,
            "cheb" => GraphConvKind::Cheb {
                k: self.parse("model", "cheb_k")?.unwrap_or(2),
            },
            "diffusion" => GraphConvKind::Diffusion {
                k: self.parse("model", "diffusion_k")?.unwrap_or(2),
            },
            "multihop" => GraphConvKind::MultiHop {
                k: self.parse("model", "hops")?.unwrap_or(2),
                beta: self.parse("model", "beta")?.unwrap_or(0.05),
                agg: self
                    .get("model", "aggregation")
                    .unwrap_or("linear")
                    .parse::<HopAggregation>()?,
            },
            "gat" => GraphConvKind::Gat {
                heads: self.parse("model", "heads")?.unwrap_or(4),
            },
            other => return Err(Error::Config(format!("unknown conv '{other}'"))),
        };
        let source_raw = match source_override {
            Some(s) => s.to_string(),
            None => self
                .get("model", "graph_source")
                .unwrap_or("fixed")
                .to_string(),
        };
        let graph_source = match source_raw.as_str() {
            "fixed" => GraphSourceSpec::Fixed,
            "sampled" => GraphSourceSpec::Sampled {
                temperature: self.parse("model", "temperature")?.unwrap_or(0.5),
            },
            other => match other.strip_prefix("adaptive-") {
                Some(variant) => GraphSourceSpec::Adaptive {
                    variant: variant.parse::<AdaptiveVariant>()?,
                    dim: self.parse("model", "embed_dim")?.unwrap_or(10),
                    alpha: self.parse("model", "alpha")?.unwrap_or(3.0),
                },
                None => {
                    return Err(Error::Config(format!(
                        "unknown graph_source '{other}'"
                    )))
                }
            },
        };
        let dilations = match self.get("model", "dilations") {
            None => vec![1, 2, 4, 8],
            Some(raw) => raw
                .split(',')
                .map(|d| d.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("[model] dilations: cannot parse '{raw}'")))?,
        };
        let spec = ModelSpec {
            archetype,
            conv,
            graph_source,
            hidden: self.parse("model", "hidden")?.unwrap_or(32),
            rnn_layers: self.parse("model", "rnn_layers")?.unwrap_or(1),
            kernel: self.parse("model", "kernel")?.unwrap_or(2),
            dilations,
            attn_blocks: self.parse("model", "blocks")?.unwrap_or(1),
            heads: self.parse("model", "heads")?.unwrap_or(4),
            positional_encoding: self.parse("model", "positional_encoding")?.unwrap_or(true),
            p: data.p,
            q: data.q,
            n: 0, // resolved against the dataset by the command
            d: 0,
        };
        Ok(spec)
    }

    pub fn run_name(&self) -> String {
        match self.get("model", "name") {
            Some(name) => name.to_string(),
            None => format!(
                "{}-{}-{}",
                self.get("model", "archetype").unwrap_or("rnn"),
                self.get("model", "conv").unwrap_or("gcn"),
                self.get("model", "graph_source").unwrap_or("fixed")
            ),
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        if let Some(v) = self.parse("train", "max_epochs")? {
            config.max_epochs = v;
        }
        if let Some(v) = self.parse("train", "patience")? {
            config.patience = v;
        }
        if let Some(v) = self.parse("train", "batch_size")? {
            config.batch_size = v;
        }
        if let Some(v) = self.parse("train", "learning_rate")? {
            config.learning_rate = v;
        }
        if let Some(v) = self.get("train", "curriculum") {
            config.curriculum = v.parse::<CurriculumMode>()?;
        }
        if let Some(v) = self.parse("train", "tau")? {
            config.tau = v;
        }
        if let Some(v) = self.parse("train", "seed")? {
            config.seed = v;
        }
        if let Some(v) = self.parse("train", "lambda_graph")? {
            config.lambda_graph = v;
        }
        if let Some(v) = self.parse("train", "clip_norm")? {
            config.clip_norm = v;
        }
        if let Some(v) = self.parse("train", "teacher_forcing")? {
            config.teacher_forcing = v;
        }
        config.validate()?;
        Ok(config)
    }

    /// Benchmark rows: (archetype, conv, source) triples.
    pub fn benchmark_models(&self) -> Result<Vec<(Archetype, String, String)>> {
        let raw = match self.get("benchmark", "models") {
            None => return Ok(Vec::new()),
            Some(raw) => raw,
        };
        let mut out = Vec::new();
        for item in raw.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let parts: Vec<&str> = item.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!(
                    "[benchmark] models entry '{item}' must be archetype:conv:source"
                )));
            }
            out.push((
                parts[0].parse::<Archetype>()?,
                parts[1].to_string(),
                parts[2].to_string(),
            ));
        }
        Ok(out)
    }

    pub fn benchmark_baselines(&self) -> Result<bool> {
        Ok(self.parse("benchmark", "baselines")?.unwrap_or(true))
    }
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Csv(PathBuf),
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub source: DataSource,
    pub split: SplitSpec,
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone)]
pub struct GraphConfig {
    pub kind: GraphKind,
    pub sigma2: f64,
    pub eps: f64,
    pub distance_csv: Option<PathBuf>,
    pub edges_csv: Option<PathBuf>,
    pub directed: bool,
    pub poi_csv: Option<PathBuf>,
    pub channel: usize,
    pub band: Option<usize>,
    pub bins: usize,
    pub embed_dim: usize,
    pub alpha: f64,
    pub theta: f64,
    pub temperature: f64,
    pub seed: u64,
    pub prior: Option<PathBuf>,
}

//! Named trainable parameters and their on-disk checkpoint format.
//!
//! A checkpoint is a JSON manifest (name, shape, byte offset per parameter)
//! next to one flat little-endian f64 blob; round-trips are bit-exact.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One named trainable tensor plus its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Ordered collection of parameters; ids are registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter with an explicit value; returns its id.
    pub fn register(&mut self, name: &str, value: Tensor) -> usize {
        debug_assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
        });
        self.params.len() - 1
    }

    /// Register a weight initialized uniformly in ±1/√fan_in.
    pub fn register_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        self.register(name, Tensor::from_raw(shape.to_vec(), data))
    }

    /// Register a zero-initialized parameter (biases).
    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.params[id].value
    }

    pub fn set_value(&mut self, id: usize, value: Tensor) {
        debug_assert_eq!(self.params[id].value.shape(), value.shape());
        self.params[id].value = value;
    }

    pub fn set_grad(&mut self, id: usize, grad: Tensor) {
        self.params[id].grad = Some(grad);
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Total count of scalar learnables.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Insert every parameter as a trainable leaf on `tape`, id-aligned.
    pub fn leaves(&self, tape: &Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }

    /// Add per-parameter gradient tensors into the store's accumulators.
    pub fn accumulate(&mut self, grads: &[Tensor]) {
        debug_assert_eq!(grads.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(grads.iter()) {
            match p.grad.as_mut() {
                Some(existing) => existing.add_assign(g),
                None => p.grad = Some(g.clone()),
            }
        }
    }

    /// Scale all accumulated gradients (e.g. by 1/batch).
    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                for v in g.data_mut() {
                    *v *= factor;
                }
            }
        }
    }

    /// Write the checkpoint manifest and blob.
    pub fn save(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.params.len());
        let mut blob: Vec<u8> = Vec::new();
        for p in &self.params {
            entries.push(ManifestEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset: blob.len() as u64,
            });
            for &v in p.value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest { params: entries };
        let mut f = fs::File::create(manifest_path)?;
        f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        fs::write(blob_path, blob)?;
        Ok(())
    }

    /// Load a checkpoint into this store; every parameter must be present
    /// with a matching shape.
    pub fn load(&mut self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        let blob = fs::read(blob_path)?;
        let by_name: HashMap<&str, &ManifestEntry> = manifest
            .params
            .iter()
            .map(|e| (e.name.as_str(), e))
            .collect();
        if manifest.params.len() != self.params.len() {
            return Err(Error::State(format!(
                "checkpoint holds {} parameters, model expects {}",
                manifest.params.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let entry = by_name.get(p.name.as_str()).ok_or_else(|| {
                Error::State(format!("checkpoint is missing parameter {}", p.name))
            })?;
            if entry.shape != p.value.shape() {
                return Err(Error::State(format!(
                    "parameter {} has shape {:?} in checkpoint, expected {:?}",
                    p.name,
                    entry.shape,
                    p.value.shape()
                )));
            }
            let numel: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + numel * 8;
            if end > blob.len() {
                return Err(Error::State(format!(
                    "checkpoint blob truncated for parameter {}",
                    p.name
                )));
            }
            let data: Vec<f64> = blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            p.value = Tensor::from_raw(entry.shape.clone(), data);
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, Tensor};

/// Named weights of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Indices of a convolution's weight and bias inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvRef {
    pub weight: usize,
    pub bias: usize,
}

/// Indices of a dense layer's weight and bias inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseRef {
    pub weight: usize,
    pub bias: usize,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    /// He-normal convolution kernel scaled by `gain`, zero bias.
    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> ConvRef {
        let std = gain * (2.0 / (cin * k * k) as f64).sqrt();
        let weight = self.push(
            format!("{name}.weight"),
            normal(&[cout, cin, k, k], std, rng),
        );
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        ConvRef { weight, bias }
    }

    pub fn dense(
        &mut self,
        name: &str,
        fin: usize,
        fout: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> DenseRef {
        let std = gain * (2.0 / fin as f64).sqrt();
        let weight = self.push(format!("{name}.weight"), normal(&[fout, fin], std, rng));
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(&[fout]));
        DenseRef { weight, bias }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor as a graph leaf.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.tensors
            .iter()
            .map(|t| graph.leaf(t.clone(), trainable))
            .collect()
    }

    pub fn snapshot(&self) -> ParameterSnapshot {
        ParameterSnapshot(
            self.names
                .iter()
                .cloned()
                .zip(self.tensors.iter().cloned())
                .collect(),
        )
    }

    /// Replaces every tensor from `snap`; names and shapes must match exactly.
    pub fn load(&mut self, snap: &ParameterSnapshot) -> Result<()> {
        if snap.0.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "snapshot has {} tensors, model has {}",
                snap.0.len(),
                self.names.len()
            )));
        }
        let mut staged = Vec::with_capacity(self.tensors.len());
        for (name, current) in self.names.iter().zip(&self.tensors) {
            let t = snap
                .0
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("snapshot lacks parameter {name}")))?;
            if t.shape() != current.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: snapshot shape {:?}, model shape {:?}",
                    t.shape(),
                    current.shape()
                )));
            }
            staged.push(t.clone());
        }
        self.tensors = staged;
        Ok(())
    }
}

fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..n).map(|_| dist.sample(rng) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Named weight arrays, ordered by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterSnapshot(pub BTreeMap<String, Tensor>);

impl ParameterSnapshot {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn count(&self) -> usize {
        self.0.values().map(Tensor::numel).sum()
    }

    /// SHA-256 over names, shapes and little-endian weight bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.0 {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.shape().len() as u64).to_le_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

//! Named parameter tensors and freeze masks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::de::Deserializer;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor. Rank 1 or 2 in practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of the 2-D view (all leading dimensions folded together).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Gradient buffers aligned with the tensor order of a [`ParameterSet`].
pub type Grads = Vec<Vec<f64>>;

/// Named tensors kept sorted by name, so iteration order is canonical.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParameterSet {
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Tensor)>,
    {
        let mut entries: Vec<(String, Tensor)> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArgument(format!("duplicate parameter name {}", w[0].0)));
            }
        }
        for (name, t) in &entries {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.clone()));
            }
        }
        let (names, tensors) = entries.into_iter().unzip();
        Ok(ParameterSet { names, tensors })
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

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * delta` on trainable tensors only.
    pub fn add_scaled(&mut self, delta: &[Vec<f64>], scale: f64, trainable: &TrainableMask) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if !trainable.is_trainable(i) {
                continue;
            }
            for (p, d) in t.data.iter_mut().zip(&delta[i]) {
                *p += scale * d;
            }
        }
    }

    /// FNV-1a over names and IEEE bit patterns. Equal fingerprints for
    /// bitwise-equal parameter sets.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            for d in &t.shape {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Names of tensors whose contents differ bitwise from `other`.
    pub fn changed_tensors(&self, other: &ParameterSet) -> Vec<String> {
        self.iter()
            .filter(|(name, t)| match other.get(name) {
                Some(o) => !bitwise_eq(&t.data, &o.data) || t.shape != o.shape,
                None => true,
            })
            .map(|(name, _)| name.to_string())
            .collect()
    }
}

pub fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl Serialize for ParameterSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.len()))?;
        for (name, t) in self.iter() {
            map.serialize_entry(name, t)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ParameterSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, Tensor>::deserialize(deserializer)?;
        for (name, t) in &map {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(serde::de::Error::custom(format!("tensor {name}: shape does not match data length")));
            }
        }
        ParameterSet::from_entries(map).map_err(serde::de::Error::custom)
    }
}

/// Parameter-name patterns excluded from updates.
///
/// `decoder.*` freezes every tensor under `decoder.`, `enc*` is a raw prefix,
/// and a bare name matches the tensor itself or anything nested below it
/// (`token_embeddings` matches `token_embeddings` and `token_embeddings.x`).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FreezeMask {
    pub patterns: Vec<String>,
}

impl FreezeMask {
    pub fn new<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        FreezeMask {
            patterns: patterns.into_iter().map(Into::into).collect(),
        }
    }

    pub fn none() -> Self {
        FreezeMask::default()
    }

    /// Token embeddings and the whole decoder stay fixed.
    pub fn embeddings_and_decoder() -> Self {
        FreezeMask::new(["token_embeddings", "decoder.*"])
    }

    pub fn matches(pattern: &str, name: &str) -> bool {
        if let Some(prefix) = pattern.strip_suffix(".*") {
            name.len() > prefix.len() + 1 && name.starts_with(prefix) && name.as_bytes()[prefix.len()] == b'.'
        } else if let Some(prefix) = pattern.strip_suffix('*') {
            name.starts_with(prefix)
        } else {
            name == pattern || (name.starts_with(pattern) && name.as_bytes().get(pattern.len()) == Some(&b'.'))
        }
    }

    /// Resolve against a parameter set. Every pattern must match something.
    pub fn resolve(&self, params: &ParameterSet) -> Result<TrainableMask> {
        let mut trainable = vec![true; params.len()];
        for pattern in &self.patterns {
            let mut hit = false;
            for (i, name) in params.names().iter().enumerate() {
                if FreezeMask::matches(pattern, name) {
                    trainable[i] = false;
                    hit = true;
                }
            }
            if !hit {
                return Err(Error::UnmatchedPattern(pattern.clone()));
            }
        }
        Ok(TrainableMask(trainable))
    }
}

/// Per-tensor trainable flags, aligned with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask(Vec<bool>);

impl TrainableMask {
    pub fn all(n: usize) -> Self {
        TrainableMask(vec![true; n])
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        TrainableMask(flags)
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.0.get(index).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn frozen_count(&self) -> usize {
        self.0.iter().filter(|t| !**t).count()
    }

    /// Zero the gradient buffers of frozen tensors.
    pub fn apply(&self, grads: &mut [Vec<f64>]) {
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.is_trainable(i) {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

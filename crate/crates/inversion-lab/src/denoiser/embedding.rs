//! Conditioning embeddings and the prompt-to-embedding map.
//!
//! An embedding is a vector of mixture logits; `softmax(logits)` gives the
//! component weights the conditioning induces. The empty prompt maps to the
//! all-zeros vector, i.e. uniform weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conditioning vector: logits over mixture components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Parameter("embedding must be non-empty".into()));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("embedding logits must be finite".into()));
        }
        Ok(Self(logits))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.0
    }

    /// Component weights induced by the logits, stabilized by max subtraction.
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.0)
    }

    /// Returns `self - lr * grad`, the plain gradient-descent update.
    pub fn descend(&self, grad: &[f64], lr: f64) -> Embedding {
        debug_assert_eq!(grad.len(), self.0.len());
        Embedding(
            self.0
                .iter()
                .zip(grad)
                .map(|(&v, &g)| v - lr * g)
                .collect(),
        )
    }

    /// Perturbs one coordinate; used by finite-difference probes.
    pub(crate) fn with_coord(&self, idx: usize, value: f64) -> Embedding {
        let mut logits = self.0.clone();
        logits[idx] = value;
        Embedding(logits)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Prompt-token to embedding map. Always contains the empty-string token,
/// which maps to the all-zeros embedding (uniform mixture weights).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PromptTable {
    embed_dim: usize,
    entries: BTreeMap<String, Embedding>,
}

impl PromptTable {
    /// Empty vocabulary apart from the mandatory null token.
    pub fn new(embed_dim: usize) -> Result<Self> {
        if embed_dim == 0 {
            return Err(Error::Parameter("embedding dimension must be positive".into()));
        }
        let mut entries = BTreeMap::new();
        entries.insert(String::new(), Embedding::zeros(embed_dim));
        Ok(Self { embed_dim, entries })
    }

    /// Vocabulary `class0..class{k-1}` where `class{i}` maps to the one-hot
    /// logits scaled by `kappa`, plus the null token.
    pub fn with_classes(k: usize, kappa: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::Parameter("kappa must be finite".into()));
        }
        let mut table = Self::new(k)?;
        for i in 0..k {
            let mut logits = vec![0.0; k];
            logits[i] = kappa;
            table.insert(format!("class{i}"), Embedding::from_logits(logits)?)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, token: String, embedding: Embedding) -> Result<()> {
        if embedding.dim() != self.embed_dim {
            return Err(Error::Shape(format!(
                "embedding has dimension {} but table expects {}",
                embedding.dim(),
                self.embed_dim
            )));
        }
        if token.is_empty() && embedding.logits().iter().any(|&v| v != 0.0) {
            return Err(Error::Parameter(
                "the null token must map to the all-zeros embedding".into(),
            ));
        }
        self.entries.insert(token, embedding);
        Ok(())
    }

    /// Pure lookup of a prompt token's stored embedding.
    pub fn embed(&self, token: &str) -> Result<Embedding> {
        self.entries
            .get(token)
            .cloned()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// The null-text embedding, `embed("")`.
    pub fn null(&self) -> Embedding {
        Embedding::zeros(self.embed_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Tokens in deterministic (lexicographic) order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

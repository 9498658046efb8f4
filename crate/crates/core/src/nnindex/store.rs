use crate::affordance::AffordanceVector;
use crate::corpus::{ContextSample, SampleSource};
use crate::error::{Error, Result};
use crate::{CHANNELS, TILE_PX};

/// What a stored embedding snaps to: a real tile and its affordances.
#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    /// 16×16×3 pixels in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub affordance: AffordanceVector,
    pub source: SampleSource,
}

impl Payload {
    pub fn from_sample(sample: &ContextSample) -> Self {
        Payload {
            pixels: sample.center_tile(),
            affordance: sample.center_affordance,
            source: sample.source.clone(),
        }
    }
}

/// Embeddings with their payloads, addressed by insertion id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    embeddings: Vec<f32>,
    payloads: Vec<Payload>,
}

pub const PAYLOAD_PIXELS: usize = TILE_PX * TILE_PX * CHANNELS;

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            embeddings: Vec::new(),
            payloads: Vec::new(),
        }
    }

    /// Pairs samples with their embeddings.
    pub fn from_samples(samples: &[ContextSample], embeddings: &[Vec<f32>]) -> Result<Self> {
        let dim = embeddings.first().map_or(0, Vec::len);
        let mut store = EmbeddingStore::new(dim);
        if samples.len() != embeddings.len() {
            return Err(Error::Geometry(format!(
                "{} samples but {} embeddings",
                samples.len(),
                embeddings.len()
            )));
        }
        for (s, e) in samples.iter().zip(embeddings) {
            store.push(e, Payload::from_sample(s))?;
        }
        Ok(store)
    }

    /// Appends an item and returns its id.
    pub fn push(&mut self, embedding: &[f32], payload: Payload) -> Result<usize> {
        if embedding.len() != self.dim || self.dim == 0 {
            return Err(Error::Geometry(format!(
                "embedding has {} values, store dimension is {}",
                embedding.len(),
                self.dim
            )));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        if payload.pixels.len() != PAYLOAD_PIXELS || payload.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Geometry(format!(
                "payload must be {PAYLOAD_PIXELS} pixel values in [0, 1]"
            )));
        }
        self.embeddings.extend_from_slice(embedding);
        self.payloads.push(payload);
        Ok(self.payloads.len() - 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn embedding(&self, id: usize) -> &[f32] {
        &self.embeddings[id * self.dim..(id + 1) * self.dim]
    }

    pub fn payload(&self, id: usize) -> &Payload {
        &self.payloads[id]
    }

    pub fn payloads(&self) -> &[Payload] {
        &self.payloads
    }

    pub(crate) fn raw_embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub(crate) fn from_parts(dim: usize, embeddings: Vec<f32>, payloads: Vec<Payload>) -> Self {
        EmbeddingStore {
            dim,
            embeddings,
            payloads,
        }
    }
}

/// Manhattan distance, accumulated in `f64`.
pub fn l1(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum()
}

/// Brute-force nearest item under L1; ties go to the lowest id.
pub fn exact_nn(store: &EmbeddingStore, query: &[f32]) -> Result<usize> {
    check_query(store, query)?;
    let mut best = (f64::INFINITY, 0);
    for id in 0..store.len() {
        let d = l1(store.embedding(id), query);
        if d < best.0 {
            best = (d, id);
        }
    }
    Ok(best.1)
}

pub(crate) fn check_query(store: &EmbeddingStore, query: &[f32]) -> Result<()> {
    if store.is_empty() {
        return Err(Error::Index("query against an empty store".into()));
    }
    if query.len() != store.dim() {
        return Err(Error::Geometry(format!(
            "query has {} values, store dimension is {}",
            query.len(),
            store.dim()
        )));
    }
    Ok(())
}

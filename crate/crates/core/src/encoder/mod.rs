//! Embedding providers.
//!
//! Every vector consumed by the alignment costs and the losses comes from an
//! [`EmbeddingProvider`]. Two families ship here: [`TableProvider`] looks up
//! precomputed vectors by namespaced key, and [`ToyEncoder`] computes them
//! from hashed text features and seeded image patches through a trainable
//! projection. [`RandomProvider`] is a chance-level baseline.

mod toy;

pub use toy::{Features, Token, TokenKind, ToyConfig, ToyEncoder, ToyGradient};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{CorpusRecord, EmbeddingTable};
use crate::error::{Error, Result};
use crate::types::{BBox, ImageInfo, Span};

/// A piece of text plus the key a lookup-based provider files it under.
#[derive(Debug, Clone, Copy)]
pub struct TextInput<'a> {
    pub key: &'a str,
    pub text: &'a str,
}

impl<'a> TextInput<'a> {
    pub fn new(key: &'a str, text: &'a str) -> Self {
        TextInput { key, text }
    }
}

/// Source of the five embedding roles used by alignment and training.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;
    fn sentence(&self, text: TextInput<'_>) -> Result<Vec<f64>>;
    /// Contextualized embedding of a character span of `text`.
    fn text_span(&self, text: TextInput<'_>, span: Span) -> Result<Vec<f64>>;
    fn image(&self, key: &str, image: &ImageInfo) -> Result<Vec<f64>>;
    /// Contextualized embedding of the `index`-th detected region.
    fn image_region(
        &self,
        key: &str,
        image: &ImageInfo,
        index: usize,
        bbox: &BBox,
    ) -> Result<Vec<f64>>;
    /// Standalone embedding of a type or role label. `id` keys the lookup,
    /// `phrase` is what text-based providers encode.
    fn type_label(&self, id: &str, phrase: &str) -> Result<Vec<f64>>;
}

/// Namespaced table keys.
pub mod keys {
    use crate::types::Span;

    pub fn sentence(key: &str) -> String {
        format!("txt:{key}")
    }
    pub fn image(key: &str) -> String {
        format!("img:{key}")
    }
    pub fn span(key: &str, span: Span) -> String {
        format!("span:{key}:{}-{}", span.start, span.end)
    }
    pub fn region(key: &str, index: usize) -> String {
        format!("bbox:{key}:{index}")
    }
    pub fn label(id: &str) -> String {
        format!("label:{id}")
    }
}

pub fn embed_sentence(p: &dyn EmbeddingProvider, record: &CorpusRecord) -> Result<Vec<f64>> {
    p.sentence(TextInput::new(&record.id, &record.caption))
}

pub fn embed_span(
    p: &dyn EmbeddingProvider,
    record: &CorpusRecord,
    span: Span,
) -> Result<Vec<f64>> {
    if span.slice(&record.caption).is_none() {
        return Err(Error::Precondition(format!(
            "span {}..{} invalid for record `{}`",
            span.start, span.end, record.id
        )));
    }
    p.text_span(TextInput::new(&record.id, &record.caption), span)
}

pub fn embed_image(p: &dyn EmbeddingProvider, record: &CorpusRecord) -> Result<Vec<f64>> {
    p.image(&record.id, &record.image)
}

pub fn embed_region(
    p: &dyn EmbeddingProvider,
    record: &CorpusRecord,
    index: usize,
) -> Result<Vec<f64>> {
    let obj = record.objects.get(index).ok_or_else(|| {
        Error::Precondition(format!("record `{}` has no object {index}", record.id))
    })?;
    p.image_region(&record.id, &record.image, index, &obj.bbox)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine(u, v)?)
}

/// Cosine similarity together with its gradients with respect to `u` and `v`.
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let c = dot / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - c * a / (nu * nu))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - c * b / (nv * nv))
        .collect();
    Ok((c, du, dv))
}

/// Provider backed by an [`EmbeddingTable`] using the [`keys`] scheme.
pub struct TableProvider {
    table: EmbeddingTable,
}

impl TableProvider {
    pub fn new(table: EmbeddingTable) -> Self {
        TableProvider { table }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    fn lookup(&self, key: String) -> Result<Vec<f64>> {
        self.table
            .get(&key)
            .map(|row| row.iter().map(|&v| v as f64).collect())
            .ok_or(Error::MissingEmbedding(key))
    }
}

impl EmbeddingProvider for TableProvider {
    fn dim(&self) -> usize {
        self.table.dim()
    }
    fn sentence(&self, text: TextInput<'_>) -> Result<Vec<f64>> {
        self.lookup(keys::sentence(text.key))
    }
    fn text_span(&self, text: TextInput<'_>, span: Span) -> Result<Vec<f64>> {
        self.lookup(keys::span(text.key, span))
    }
    fn image(&self, key: &str, _image: &ImageInfo) -> Result<Vec<f64>> {
        self.lookup(keys::image(key))
    }
    fn image_region(
        &self,
        key: &str,
        _image: &ImageInfo,
        index: usize,
        _bbox: &BBox,
    ) -> Result<Vec<f64>> {
        self.lookup(keys::region(key, index))
    }
    fn type_label(&self, id: &str, _phrase: &str) -> Result<Vec<f64>> {
        self.lookup(keys::label(id))
    }
}

/// Independent Gaussian vector per namespaced key; a chance-level baseline.
pub struct RandomProvider {
    dim: usize,
    seed: u64,
}

impl RandomProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        RandomProvider { dim, seed }
    }

    fn vector(&self, key: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(self.seed, key));
        (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

impl EmbeddingProvider for RandomProvider {
    fn dim(&self) -> usize {
        self.dim
    }
    fn sentence(&self, text: TextInput<'_>) -> Result<Vec<f64>> {
        Ok(self.vector(&keys::sentence(text.key)))
    }
    fn text_span(&self, text: TextInput<'_>, span: Span) -> Result<Vec<f64>> {
        Ok(self.vector(&keys::span(text.key, span)))
    }
    fn image(&self, key: &str, _image: &ImageInfo) -> Result<Vec<f64>> {
        Ok(self.vector(&keys::image(key)))
    }
    fn image_region(
        &self,
        key: &str,
        _image: &ImageInfo,
        index: usize,
        _bbox: &BBox,
    ) -> Result<Vec<f64>> {
        Ok(self.vector(&keys::region(key, index)))
    }
    fn type_label(&self, id: &str, _phrase: &str) -> Result<Vec<f64>> {
        Ok(self.vector(&keys::label(id)))
    }
}

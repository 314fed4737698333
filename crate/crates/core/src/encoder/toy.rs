use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EmbeddingProvider, TextInput};
use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::types::{BBox, ImageInfo, Span};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    /// Width of the hashed feature space.
    pub base_dim: usize,
    /// Output embedding width.
    pub dim: usize,
    pub seed: u64,
    /// Character n-gram length for token features.
    pub ngram: usize,
    /// Side length of the square image patch grid, in pixels.
    pub patch: u32,
    /// Number of reserved prompt tokens `[X0]..[Xk-1]`.
    pub reserved_tokens: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            base_dim: 64,
            dim: 32,
            seed: 7,
            ngram: 3,
            patch: 32,
            reserved_tokens: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Word(String),
    Reserved(usize),
}

/// Token with its character range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

/// Split text into lowercased alphanumeric runs. `[Xk]` is read as reserved
/// token `k`.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '[' && i + 1 < chars.len() && chars[i + 1] == 'X' {
            let mut j = i + 2;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 2 && j < chars.len() && chars[j] == ']' {
                let id: String = chars[i + 2..j].iter().collect();
                out.push(Token {
                    kind: TokenKind::Reserved(id.parse().expect("digits")),
                    span: Span::new(i, j + 1),
                });
                i = j + 1;
                continue;
            }
        }
        if chars[i].is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect::<String>().to_lowercase();
            out.push(Token {
                kind: TokenKind::Word(word),
                span: Span::new(start, i),
            });
        } else {
            i += 1;
        }
    }
    out
}

/// Pre-projection features: the pooled base vector and how much weight each
/// reserved token vector contributed to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub x: Vec<f64>,
    pub reserved: Vec<(usize, f64)>,
}

/// Gradient with respect to every trainable ToyEncoder parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGradient {
    pub projection: Vec<f64>,
    pub reserved: BTreeMap<usize, Vec<f64>>,
}

impl ToyGradient {
    pub fn norm(&self) -> f64 {
        self.projection
            .iter()
            .chain(self.reserved.values().flatten())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_scaled(&mut self, other: &ToyGradient, scale: f64) {
        for (a, b) in self.projection.iter_mut().zip(&other.projection) {
            *a += scale * b;
        }
        for (id, g) in &other.reserved {
            let mine = self
                .reserved
                .entry(*id)
                .or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in mine.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.projection.iter_mut().for_each(|v| *v *= s);
        self.reserved.values_mut().flatten().for_each(|v| *v *= s);
    }
}

/// Deterministic stand-in for the text and vision encoders.
///
/// Text: each token maps to a unit-norm signed hash of its character n-grams,
/// spans and sentences average their tokens. Images: each patch of a fixed
/// grid gets a Gaussian vector seeded by (seed, uri, row, col); regions
/// average the patches they touch, whole images average all patches. Every
/// pooled feature is projected by the trainable matrix `W` (`base_dim x dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    config: ToyConfig,
    projection: Vec<f64>,
    reserved: BTreeMap<usize, Vec<f64>>,
}

fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p);
        h.write_u8(0xff);
    }
    h.finish()
}

impl ToyEncoder {
    pub fn new(config: ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (config.base_dim as f64).sqrt();
        let projection = (0..config.base_dim * config.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        let reserved = (0..config.reserved_tokens)
            .map(|id| {
                let v = (0..config.base_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect();
                (id, v)
            })
            .collect();
        ToyEncoder {
            config,
            projection,
            reserved,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        &mut self.projection
    }

    pub fn reserved(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.reserved
    }

    pub fn reserved_mut(&mut self) -> &mut BTreeMap<usize, Vec<f64>> {
        &mut self.reserved
    }

    pub fn is_registered(&self, id: usize) -> bool {
        self.reserved.contains_key(&id)
    }

    pub fn zero_gradient(&self) -> ToyGradient {
        ToyGradient {
            projection: vec![0.0; self.projection.len()],
            reserved: self
                .reserved
                .keys()
                .map(|&k| (k, vec![0.0; self.config.base_dim]))
                .collect(),
        }
    }

    /// `params -= step * grad`.
    pub fn apply(&mut self, grad: &ToyGradient, step: f64) {
        for (w, g) in self.projection.iter_mut().zip(&grad.projection) {
            *w -= step * g;
        }
        for (id, g) in &grad.reserved {
            if let Some(v) = self.reserved.get_mut(id) {
                for (a, b) in v.iter_mut().zip(g) {
                    *a -= step * b;
                }
            }
        }
    }

    fn word_feature(&self, word: &str) -> Vec<f64> {
        let base = self.config.base_dim;
        let mut v = vec![0.0; base];
        let padded: Vec<char> = std::iter::once('<')
            .chain(word.chars())
            .chain(std::iter::once('>'))
            .collect();
        let n = self.config.ngram.max(1).min(padded.len());
        for gram in padded.windows(n) {
            let s: String = gram.iter().collect();
            let h = fnv(&[s.as_bytes()]);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % base as u64) as usize] += sign;
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 0.0 {
            v.iter_mut().for_each(|x| *x /= nrm);
        }
        v
    }

    fn pool_tokens<'a>(&self, tokens: impl Iterator<Item = &'a Token>) -> Result<Features> {
        let mut x = vec![0.0; self.config.base_dim];
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut n = 0usize;
        for tok in tokens {
            n += 1;
            match &tok.kind {
                TokenKind::Word(w) => {
                    for (a, b) in x.iter_mut().zip(self.word_feature(w)) {
                        *a += b;
                    }
                }
                TokenKind::Reserved(id) => {
                    let v = self.reserved.get(id).ok_or(Error::UnregisteredToken(*id))?;
                    for (a, b) in x.iter_mut().zip(v) {
                        *a += b;
                    }
                    *counts.entry(*id).or_default() += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::Precondition("text has no tokens to embed".into()));
        }
        let inv = 1.0 / n as f64;
        x.iter_mut().for_each(|v| *v *= inv);
        Ok(Features {
            x,
            reserved: counts
                .into_iter()
                .map(|(id, c)| (id, c as f64 * inv))
                .collect(),
        })
    }

    pub fn text_features(&self, text: &str) -> Result<Features> {
        self.pool_tokens(tokenize(text).iter())
    }

    /// Average of the features of every token overlapping `span`.
    pub fn span_features(&self, text: &str, span: Span) -> Result<Features> {
        let tokens = tokenize(text);
        self.pool_tokens(tokens.iter().filter(|t| t.span.overlaps(&span)))
    }

    fn grid(&self, image: &ImageInfo) -> (u32, u32) {
        let p = self.config.patch;
        (
            image.width.div_ceil(p).max(1),
            image.height.div_ceil(p).max(1),
        )
    }

    fn patch_feature(&self, uri: &str, row: u32, col: u32) -> Vec<f64> {
        let seed = fnv(&[
            &self.config.seed.to_le_bytes(),
            uri.as_bytes(),
            &row.to_le_bytes(),
            &col.to_le_bytes(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.config.base_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    fn pool_patches(&self, uri: &str, patches: &[(u32, u32)]) -> Features {
        let mut x = vec![0.0; self.config.base_dim];
        for &(r, c) in patches {
            for (a, b) in x.iter_mut().zip(self.patch_feature(uri, r, c)) {
                *a += b;
            }
        }
        let inv = 1.0 / patches.len() as f64;
        x.iter_mut().for_each(|v| *v *= inv);
        Features {
            x,
            reserved: Vec::new(),
        }
    }

    pub fn image_features(&self, image: &ImageInfo) -> Features {
        let (cols, rows) = self.grid(image);
        let patches: Vec<_> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .collect();
        self.pool_patches(&image.uri, &patches)
    }

    /// Patches whose area intersects `bbox`; at least the patch containing
    /// the box's top-left corner.
    pub fn region_patches(&self, image: &ImageInfo, bbox: &BBox) -> Vec<(u32, u32)> {
        let (cols, rows) = self.grid(image);
        let p = self.config.patch as f64;
        let mut out = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let (x0, y0) = (c as f64 * p, r as f64 * p);
                if x0 < bbox.x_max && x0 + p > bbox.x_min && y0 < bbox.y_max && y0 + p > bbox.y_min
                {
                    out.push((r, c));
                }
            }
        }
        if out.is_empty() {
            let c = ((bbox.x_min / p).floor().max(0.0) as u32).min(cols - 1);
            let r = ((bbox.y_min / p).floor().max(0.0) as u32).min(rows - 1);
            out.push((r, c));
        }
        out
    }

    pub fn region_features(&self, image: &ImageInfo, bbox: &BBox) -> Features {
        self.pool_patches(&image.uri, &self.region_patches(image, bbox))
    }

    /// `W^T x`.
    pub fn project(&self, f: &Features) -> Vec<f64> {
        let dim = self.config.dim;
        let mut y = vec![0.0; dim];
        for (b, xb) in f.x.iter().enumerate() {
            if *xb == 0.0 {
                continue;
            }
            let row = &self.projection[b * dim..(b + 1) * dim];
            for (yj, w) in y.iter_mut().zip(row) {
                *yj += xb * w;
            }
        }
        y
    }

    /// Add the pullback of `d_out` (gradient with respect to the projected
    /// vector) onto the parameters that produced `f`.
    pub fn accumulate(&self, grad: &mut ToyGradient, f: &Features, d_out: &[f64]) {
        let dim = self.config.dim;
        for (b, xb) in f.x.iter().enumerate() {
            if *xb == 0.0 {
                continue;
            }
            let row = &mut grad.projection[b * dim..(b + 1) * dim];
            for (g, d) in row.iter_mut().zip(d_out) {
                *g += xb * d;
            }
        }
        for &(id, weight) in &f.reserved {
            let g = grad
                .reserved
                .entry(id)
                .or_insert_with(|| vec![0.0; self.config.base_dim]);
            for (b, gb) in g.iter_mut().enumerate() {
                let wrow = &self.projection[b * dim..(b + 1) * dim];
                let dot: f64 = wrow.iter().zip(d_out).map(|(w, d)| w * d).sum();
                *gb += weight * dot;
            }
        }
    }

    /// Parameters as an embedding table: rows `w:<j>` hold column `j` of the
    /// projection, rows `reserved:<k>` the prompt token vectors, and two
    /// zero rows carry the seed and patch size in their keys.
    pub fn to_checkpoint(&self) -> Result<EmbeddingTable> {
        let base = self.config.base_dim;
        let dim = self.config.dim;
        let mut table = EmbeddingTable::new(base);
        table.push(format!("meta:seed={}", self.config.seed), &vec![0.0; base])?;
        table.push(
            format!(
                "meta:ngram={},patch={}",
                self.config.ngram, self.config.patch
            ),
            &vec![0.0; base],
        )?;
        for j in 0..dim {
            let col: Vec<f32> = (0..base)
                .map(|b| self.projection[b * dim + j] as f32)
                .collect();
            table.push(format!("w:{j}"), &col)?;
        }
        for (id, v) in &self.reserved {
            let row: Vec<f32> = v.iter().map(|&x| x as f32).collect();
            table.push(format!("reserved:{id}"), &row)?;
        }
        Ok(table)
    }

    pub fn from_checkpoint(table: &EmbeddingTable) -> Result<Self> {
        let base = table.dim();
        let mut seed = None;
        let mut ngram = 3;
        let mut patch = 32;
        let mut cols: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut reserved = BTreeMap::new();
        let bad = |k: &str| Error::Format(format!("unexpected checkpoint key `{k}`"));
        for key in table.keys() {
            let row: Vec<f64> = table.get(key).unwrap().iter().map(|&v| v as f64).collect();
            if let Some(s) = key.strip_prefix("meta:seed=") {
                seed = Some(s.parse().map_err(|_| bad(key))?);
            } else if let Some(s) = key.strip_prefix("meta:") {
                for kv in s.split(',') {
                    match kv.split_once('=') {
                        Some(("ngram", v)) => ngram = v.parse().map_err(|_| bad(key))?,
                        Some(("patch", v)) => patch = v.parse().map_err(|_| bad(key))?,
                        _ => return Err(bad(key)),
                    }
                }
            } else if let Some(j) = key.strip_prefix("w:") {
                cols.insert(j.parse().map_err(|_| bad(key))?, row);
            } else if let Some(id) = key.strip_prefix("reserved:") {
                reserved.insert(id.parse().map_err(|_| bad(key))?, row);
            } else {
                return Err(bad(key));
            }
        }
        let dim = cols.len();
        if dim == 0 || cols.keys().copied().ne(0..dim) {
            return Err(Error::Format(
                "checkpoint projection columns are not 0..dim".into(),
            ));
        }
        let mut projection = vec![0.0; base * dim];
        for (j, col) in &cols {
            for b in 0..base {
                projection[b * dim + j] = col[b];
            }
        }
        Ok(ToyEncoder {
            config: ToyConfig {
                base_dim: base,
                dim,
                seed: seed.ok_or_else(|| Error::Format("checkpoint lacks seed".into()))?,
                ngram,
                patch,
                reserved_tokens: reserved.len(),
            },
            projection,
            reserved,
        })
    }
}

impl EmbeddingProvider for ToyEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }
    fn sentence(&self, text: TextInput<'_>) -> Result<Vec<f64>> {
        Ok(self.project(&self.text_features(text.text)?))
    }
    fn text_span(&self, text: TextInput<'_>, span: Span) -> Result<Vec<f64>> {
        Ok(self.project(&self.span_features(text.text, span)?))
    }
    fn image(&self, _key: &str, image: &ImageInfo) -> Result<Vec<f64>> {
        Ok(self.project(&self.image_features(image)))
    }
    fn image_region(
        &self,
        _key: &str,
        image: &ImageInfo,
        _index: usize,
        bbox: &BBox,
    ) -> Result<Vec<f64>> {
        Ok(self.project(&self.region_features(image, bbox)))
    }
    fn type_label(&self, _id: &str, phrase: &str) -> Result<Vec<f64>> {
        Ok(self.project(&self.text_features(phrase)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ImageInfo {
        ImageInfo {
            uri: "img/0001.jpg".into(),
            width: 96,
            height: 64,
        }
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn tokenizer_lowercases_runs_and_reads_reserved_tokens() {
        let toks = tokenize("[X0]Transport [X1]agent, Protesters!");
        let kinds: Vec<_> = toks.iter().map(|t| t.kind.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                TokenKind::Reserved(0),
                TokenKind::Word("transport".into()),
                TokenKind::Reserved(1),
                TokenKind::Word("agent".into()),
                TokenKind::Word("protesters".into()),
            ]
        );
        assert_eq!(toks[1].span, Span::new(4, 13));
    }

    #[test]
    fn whole_caption_span_equals_sentence() {
        let enc = ToyEncoder::new(ToyConfig::default());
        let text = "Protesters carry an injured man.";
        let s = enc.sentence(TextInput::new("r", text)).unwrap();
        let sp = enc
            .text_span(
                TextInput::new("r", text),
                Span::new(0, text.chars().count()),
            )
            .unwrap();
        assert!(close(&s, &sp));
    }

    #[test]
    fn single_token_span_is_projected_token_feature() {
        let enc = ToyEncoder::new(ToyConfig::default());
        let text = "Protesters carry an injured man.";
        let sp = enc
            .text_span(TextInput::new("r", text), Span::new(11, 16))
            .unwrap();
        let direct = enc.project(&Features {
            x: enc.word_feature("carry"),
            reserved: vec![],
        });
        assert!(close(&sp, &direct));
    }

    #[test]
    fn identical_spans_identical_vectors() {
        let enc = ToyEncoder::new(ToyConfig::default());
        let text = "man meets man";
        let a = enc
            .text_span(TextInput::new("r", text), Span::new(0, 3))
            .unwrap();
        let b = enc
            .text_span(TextInput::new("r", text), Span::new(10, 13))
            .unwrap();
        assert!(close(&a, &b));
    }

    #[test]
    fn full_bbox_equals_image_embedding() {
        let enc = ToyEncoder::new(ToyConfig::default());
        let img = image();
        let full = enc
            .image_region("r", &img, 0, &BBox::new(0.0, 0.0, 96.0, 64.0))
            .unwrap();
        assert!(close(&full, &enc.image("r", &img).unwrap()));
    }

    #[test]
    fn distinct_patches_give_distinct_regions() {
        let enc = ToyEncoder::new(ToyConfig::default());
        let img = image();
        let a = enc
            .image_region("r", &img, 0, &BBox::new(0.0, 0.0, 32.0, 32.0))
            .unwrap();
        let b = enc
            .image_region("r", &img, 1, &BBox::new(32.0, 32.0, 64.0, 64.0))
            .unwrap();
        let again = enc
            .image_region("r", &img, 2, &BBox::new(0.0, 0.0, 32.0, 32.0))
            .unwrap();
        assert!(!close(&a, &b));
        assert!(close(&a, &again));
    }

    #[test]
    fn tiny_bbox_still_pools_one_patch() {
        let enc = ToyEncoder::new(ToyConfig::default());
        let img = image();
        assert_eq!(
            enc.region_patches(&img, &BBox::new(40.0, 40.0, 40.5, 40.5)),
            vec![(1, 1)]
        );
    }

    #[test]
    fn unregistered_reserved_token_errors() {
        let enc = ToyEncoder::new(ToyConfig::default());
        assert!(matches!(
            enc.sentence(TextInput::new("r", "[X9] hi")),
            Err(Error::UnregisteredToken(9))
        ));
    }

    #[test]
    fn changing_one_projection_entry_changes_an_output() {
        let enc = ToyEncoder::new(ToyConfig::default());
        let text = "Protesters carry an injured man.";
        let before = enc.sentence(TextInput::new("r", text)).unwrap();
        let f = enc.text_features(text).unwrap();
        let b = f.x.iter().position(|v| *v != 0.0).unwrap();
        let mut tweaked = enc.clone();
        tweaked.projection_mut()[b * enc.config().dim] += 0.5;
        assert!(!close(
            &before,
            &tweaked.sentence(TextInput::new("r", text)).unwrap()
        ));
    }

    #[test]
    fn accumulate_matches_finite_differences_for_reserved_tokens() {
        let enc = ToyEncoder::new(ToyConfig::default());
        let text = "[X0]Transport [X1]agent [X2]protesters [X3]";
        let f = enc.text_features(text).unwrap();
        let d_out: Vec<f64> = (0..enc.config().dim).map(|j| (j as f64).sin()).collect();
        let mut g = enc.zero_gradient();
        enc.accumulate(&mut g, &f, &d_out);
        let objective = |e: &ToyEncoder| -> f64 {
            let y = e.sentence(TextInput::new("r", text)).unwrap();
            y.iter().zip(&d_out).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for (id, b) in [(0usize, 3usize), (2, 10)] {
            let mut up = enc.clone();
            up.reserved_mut().get_mut(&id).unwrap()[b] += h;
            let mut dn = enc.clone();
            dn.reserved_mut().get_mut(&id).unwrap()[b] -= h;
            let fd = (objective(&up) - objective(&dn)) / (2.0 * h);
            assert!((fd - g.reserved[&id][b]).abs() < 1e-7);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let enc = ToyEncoder::new(ToyConfig {
            seed: 11,
            ..ToyConfig::default()
        });
        let table = enc.to_checkpoint().unwrap();
        let back = ToyEncoder::from_checkpoint(&table).unwrap();
        assert_eq!(back.config(), enc.config());
        for (a, b) in back.projection().iter().zip(enc.projection()) {
            assert!((a - b).abs() < 1e-6);
        }
        let bytes = table.to_bytes();
        let again =
            ToyEncoder::from_checkpoint(&EmbeddingTable::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(again.to_checkpoint().unwrap().to_bytes(), bytes);
    }
}

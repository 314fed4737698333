//! Readers and writers for corpora, confusion matrices and embedding tables.
//!
//! * Corpus: one JSON object per line. Arguments point at entities by index.
//! * Confusion matrix: CSV, header row of predicted labels, first column of
//!   gold labels.
//! * Embedding table: little-endian binary, see [`EmbeddingTable`].

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Argument, BBox, EntityMention, EventStructure, ImageInfo, ObjectDetection, Span, Trigger,
};

/// Gold visual event annotation, used by the evaluation harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEvent {
    pub event_type: String,
    pub arguments: Vec<ImageArgument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageArgument {
    pub role: String,
    pub bbox: BBox,
}

/// An image–caption pair with its extracted annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub id: String,
    pub caption: String,
    pub image: ImageInfo,
    pub entities: Vec<EntityMention>,
    pub events: Vec<EventStructure>,
    pub objects: Vec<ObjectDetection>,
    pub image_event: Option<ImageEvent>,
}

// On-disk shape of one corpus line.
#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    caption: String,
    image: ImageInfo,
    #[serde(default)]
    entities: Vec<RawEntity>,
    #[serde(default)]
    events: Vec<RawEvent>,
    #[serde(default)]
    objects: Vec<RawObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_event: Option<RawImageEvent>,
}

#[derive(Serialize, Deserialize)]
struct RawEntity {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    entity_type: String,
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    #[serde(rename = "type")]
    event_type: String,
    trigger: RawSpan,
    #[serde(default)]
    depth: u32,
    #[serde(default)]
    arguments: Vec<RawArgument>,
}

#[derive(Serialize, Deserialize)]
struct RawSpan {
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
struct RawArgument {
    role: String,
    entity: usize,
}

#[derive(Serialize, Deserialize)]
struct RawObject {
    bbox: [f64; 4],
    #[serde(rename = "type")]
    object_type: String,
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct RawImageEvent {
    #[serde(rename = "type")]
    event_type: String,
    #[serde(default)]
    arguments: Vec<RawImageArgument>,
}

#[derive(Serialize, Deserialize)]
struct RawImageArgument {
    role: String,
    bbox: [f64; 4],
}

fn bbox_from(raw: [f64; 4]) -> BBox {
    BBox::new(raw[0], raw[1], raw[2], raw[3])
}

fn bbox_to(b: &BBox) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

fn serde_field(message: &str) -> String {
    // serde_json reports "missing field `x`" / "unknown field `x`"
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "record".to_string())
}

fn resolve_span(
    caption: &str,
    len: usize,
    line: usize,
    field: &str,
    start: usize,
    end: usize,
) -> Result<Span> {
    let span = Span::new(start, end);
    if start >= end {
        return Err(Error::MalformedLine {
            line,
            field: field.to_string(),
            message: format!("span end {end} is not after start {start}"),
        });
    }
    if end > len {
        return Err(Error::MalformedLine {
            line,
            field: field.to_string(),
            message: format!("span {start}..{end} exceeds caption length {len}"),
        });
    }
    debug_assert!(span.slice(caption).is_some());
    Ok(span)
}

fn bad(line: usize, field: String, message: impl Into<String>) -> Error {
    Error::MalformedLine {
        line,
        field,
        message: message.into(),
    }
}

impl CorpusRecord {
    fn from_raw(raw: RawRecord, line: usize) -> Result<Self> {
        let len = raw.caption.chars().count();
        let caption = raw.caption;
        let mut entities = Vec::with_capacity(raw.entities.len());
        for (i, e) in raw.entities.into_iter().enumerate() {
            let span = resolve_span(
                &caption,
                len,
                line,
                &format!("entities[{i}]"),
                e.start,
                e.end,
            )?;
            entities.push(
                EntityMention::from_caption(&caption, span, e.entity_type).expect("checked span"),
            );
        }
        let mut events = Vec::with_capacity(raw.events.len());
        for (i, ev) in raw.events.into_iter().enumerate() {
            let span = resolve_span(
                &caption,
                len,
                line,
                &format!("events[{i}].trigger"),
                ev.trigger.start,
                ev.trigger.end,
            )?;
            let trigger = Trigger {
                span,
                text: span.slice(&caption).expect("checked span").to_string(),
            };
            let mut seen = HashSet::new();
            let mut arguments = Vec::with_capacity(ev.arguments.len());
            for a in ev.arguments {
                let entity =
                    entities
                        .get(a.entity)
                        .cloned()
                        .ok_or_else(|| Error::InvalidRecord {
                            record_id: raw.id.clone(),
                            message: format!(
                                "event {i} argument `{}` references missing entity {}",
                                a.role, a.entity
                            ),
                        })?;
                if !seen.insert(a.role.clone()) {
                    return Err(bad(
                        line,
                        format!("events[{i}].arguments"),
                        format!("duplicate role `{}`", a.role),
                    ));
                }
                arguments.push(Argument {
                    role: a.role,
                    entity,
                });
            }
            events.push(EventStructure {
                event_type: ev.event_type,
                trigger,
                arguments,
                dependency_depth: ev.depth,
            });
        }
        let mut objects = Vec::with_capacity(raw.objects.len());
        for (i, o) in raw.objects.into_iter().enumerate() {
            let bbox = bbox_from(o.bbox);
            if !bbox.is_valid() {
                return Err(bad(line, format!("objects[{i}].bbox"), "degenerate box"));
            }
            if !bbox.within(raw.image.width, raw.image.height) {
                return Err(bad(
                    line,
                    format!("objects[{i}].bbox"),
                    "box outside image bounds",
                ));
            }
            if !(0.0..=1.0).contains(&o.confidence) {
                return Err(bad(
                    line,
                    format!("objects[{i}].confidence"),
                    "outside [0,1]",
                ));
            }
            objects.push(ObjectDetection {
                bbox,
                object_type: o.object_type,
                confidence: o.confidence,
            });
        }
        let image_event = match raw.image_event {
            None => None,
            Some(ie) => {
                let mut arguments = Vec::new();
                for (i, a) in ie.arguments.into_iter().enumerate() {
                    let bbox = bbox_from(a.bbox);
                    if !bbox.is_valid() {
                        return Err(bad(
                            line,
                            format!("image_event.arguments[{i}].bbox"),
                            "degenerate box",
                        ));
                    }
                    arguments.push(ImageArgument { role: a.role, bbox });
                }
                Some(ImageEvent {
                    event_type: ie.event_type,
                    arguments,
                })
            }
        };
        Ok(CorpusRecord {
            id: raw.id,
            caption,
            image: raw.image,
            entities,
            events,
            objects,
            image_event,
        })
    }

    fn to_raw(&self) -> Result<RawRecord> {
        let entity_index = |m: &EntityMention| {
            self.entities
                .iter()
                .position(|e| e == m)
                .ok_or_else(|| Error::InvalidRecord {
                    record_id: self.id.clone(),
                    message: format!("argument mention `{}` is not in the entity list", m.text),
                })
        };
        let mut events = Vec::new();
        for ev in &self.events {
            let mut arguments = Vec::new();
            for a in &ev.arguments {
                arguments.push(RawArgument {
                    role: a.role.clone(),
                    entity: entity_index(&a.entity)?,
                });
            }
            events.push(RawEvent {
                event_type: ev.event_type.clone(),
                trigger: RawSpan {
                    start: ev.trigger.span.start,
                    end: ev.trigger.span.end,
                },
                depth: ev.dependency_depth,
                arguments,
            });
        }
        Ok(RawRecord {
            id: self.id.clone(),
            caption: self.caption.clone(),
            image: self.image.clone(),
            entities: self
                .entities
                .iter()
                .map(|e| RawEntity {
                    start: e.span.start,
                    end: e.span.end,
                    entity_type: e.entity_type.clone(),
                })
                .collect(),
            events,
            objects: self
                .objects
                .iter()
                .map(|o| RawObject {
                    bbox: bbox_to(&o.bbox),
                    object_type: o.object_type.clone(),
                    confidence: o.confidence,
                })
                .collect(),
            image_event: self.image_event.as_ref().map(|ie| RawImageEvent {
                event_type: ie.event_type.clone(),
                arguments: ie
                    .arguments
                    .iter()
                    .map(|a| RawImageArgument {
                        role: a.role.clone(),
                        bbox: bbox_to(&a.bbox),
                    })
                    .collect(),
            }),
        })
    }

    /// Serialize as one corpus line (no trailing newline).
    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(&self.to_raw()?).map_err(|e| Error::InvalidRecord {
            record_id: self.id.clone(),
            message: e.to_string(),
        })
    }

    /// Parse one corpus line; `line` is 1-based and only used in errors.
    pub fn from_json_line(text: &str, line: usize) -> Result<Self> {
        let raw: RawRecord = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            bad(line, serde_field(&msg), msg)
        })?;
        Self::from_raw(raw, line)
    }
}

/// Parse a corpus from any reader. Blank lines are skipped but still counted.
pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CorpusRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| bad(lineno, "record".into(), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = CorpusRecord::from_json_line(&line, lineno)?;
        if !ids.insert(record.id.clone()) {
            return Err(Error::InvalidRecord {
                record_id: record.id,
                message: format!("duplicate record id on line {lineno}"),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line()?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Square count matrix; rows are gold labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::Confusion(format!(
                "counts are not {n}x{n}",
                n = labels.len()
            )));
        }
        let unique: HashSet<_> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::Confusion("duplicate label".into()));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn zeros(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn row(&self, label: &str) -> Option<&[u64]> {
        self.index_of(label).map(|i| self.counts[i].as_slice())
    }

    pub fn record(&mut self, gold: &str, predicted: &str) -> Result<()> {
        let g = self
            .index_of(gold)
            .ok_or_else(|| Error::UnknownLabel(gold.into()))?;
        let p = self
            .index_of(predicted)
            .ok_or_else(|| Error::UnknownLabel(predicted.into()))?;
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows = reader.records();
        let header = rows
            .next()
            .ok_or_else(|| Error::Confusion("empty file".into()))?
            .map_err(|e| Error::Confusion(e.to_string()))?;
        let labels: Vec<String> = header
            .iter()
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        let mut counts = Vec::new();
        for (i, row) in rows.enumerate() {
            let row = row.map_err(|e| Error::Confusion(e.to_string()))?;
            let mut cells = row.iter();
            let gold = cells.next().unwrap_or("").trim();
            if labels.get(i).map(String::as_str) != Some(gold) {
                return Err(Error::Confusion(format!(
                    "row {} label `{gold}` does not match header order",
                    i + 1
                )));
            }
            let mut values = Vec::new();
            for cell in cells {
                let cell = cell.trim();
                let v: i64 = cell.parse().map_err(|_| {
                    Error::Confusion(format!("row `{gold}`: `{cell}` is not an integer"))
                })?;
                if v < 0 {
                    return Err(Error::Confusion(format!(
                        "row `{gold}`: negative entry {v}"
                    )));
                }
                values.push(v as u64);
            }
            if values.len() != labels.len() {
                return Err(Error::Confusion(format!(
                    "row `{gold}` has {} entries, expected {}",
                    values.len(),
                    labels.len()
                )));
            }
            counts.push(values);
        }
        if counts.len() != labels.len() {
            return Err(Error::Confusion(format!(
                "{} labels in header but {} rows",
                labels.len(),
                counts.len()
            )));
        }
        Self::new(labels, counts)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header =
            std::iter::once("gold\\predicted").chain(self.labels.iter().map(String::as_str));
        w.write_record(header).expect("writing to memory");
        for (l, row) in self.labels.iter().zip(&self.counts) {
            let cells = std::iter::once(l.clone()).chain(row.iter().map(u64::to_string));
            w.write_record(cells).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("labels are utf-8")
    }
}

pub fn load_confusion(path: impl AsRef<Path>) -> Result<ConfusionMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConfusionMatrix::from_csv(&text)
}

pub fn save_confusion(path: impl AsRef<Path>, cm: &ConfusionMatrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cm.to_csv()).map_err(|e| Error::io(path, e))
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EVAL";
pub const EMBEDDING_VERSION: u32 = 1;

/// Keyed matrix of `f32` rows.
///
/// Binary layout, all integers little-endian: magic `EVAL`, `u32` version,
/// `u64` key count, `u64` dim, then each key as `u32` byte length plus UTF-8
/// bytes, then the row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    keys: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            keys: Vec::new(),
            dim,
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_rows(
        dim: usize,
        rows: impl IntoIterator<Item = (String, Vec<f32>)>,
    ) -> Result<Self> {
        let mut table = Self::new(dim);
        for (k, v) in rows {
            table.push(k, &v)?;
        }
        Ok(table)
    }

    pub fn push(&mut self, key: String, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "key `{key}` has non-finite entry {bad}"
            )));
        }
        if self.index.contains_key(&key) {
            return Err(Error::Data(format!("duplicate key `{key}`")));
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.keys.len(), self.dim)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index
            .get(key)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.keys.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for k in &self.keys {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != EMBEDDING_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
        if version != EMBEDDING_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(cur.take(8, "key count")?.try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(cur.take(8, "dim")?.try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        let mut keys = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let len = u32::from_le_bytes(cur.take(4, "key length")?.try_into().unwrap()) as usize;
            let raw = cur.take(len, "key bytes")?;
            let key = std::str::from_utf8(raw)
                .map_err(|_| Error::Format(format!("key {i} is not UTF-8")))?;
            keys.push(key.to_string());
        }
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        let remaining = bytes.len() - cur.pos;
        if remaining != expected {
            return Err(Error::Format(format!(
                "matrix body: expected {expected} bytes, found {remaining}"
            )));
        }
        let mut table = Self::new(dim);
        for (i, key) in keys.into_iter().enumerate() {
            let row: Vec<f32> = bytes[cur.pos + i * dim * 4..cur.pos + (i + 1) * dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            table.push(key, &row)?;
        }
        Ok(table)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Format(format!(
                "truncated {what}: expected {n} bytes at offset {}, found {available}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_bytes(&bytes)
}

pub fn save_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&table.to_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LINE: &str = r#"{"id":"a","caption":"Protesters carry an injured man.","image":{"uri":"a.jpg","width":64,"height":64},"entities":[{"start":0,"end":10,"type":"PER"},{"start":17,"end":31,"type":"PER"},{"start":20,"end":31,"type":"PER"}],"events":[{"type":"Transport","trigger":{"start":11,"end":16},"depth":0,"arguments":[{"role":"agent","entity":0},{"role":"entity","entity":1}]}],"objects":[{"bbox":[0,0,32,40],"type":"person","confidence":0.9}]}"#;

    #[test]
    fn parses_record_and_decodes_spans() {
        let records = read_corpus(format!("{LINE}\n").as_bytes()).unwrap();
        let r = &records[0];
        assert_eq!(r.events[0].trigger.text, "carry");
        assert_eq!(r.events[0].arguments[1].entity.text, "an injured man");
        // overlapping mentions are fine
        assert_eq!(r.entities[2].text, "injured man");
    }

    #[test]
    fn reversed_span_rejected_with_line_number() {
        let broken = LINE.replace(r#""start":0,"end":10"#, r#""start":10,"end":2"#);
        let text = format!("{LINE}\n{}\n", broken.replace("\"a\"", "\"b\""));
        match read_corpus(text.as_bytes()) {
            Err(Error::MalformedLine { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "entities[0]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_names_field() {
        let text = r#"{"id":"x","image":{"uri":"a","width":1,"height":1}}"#;
        match read_corpus(text.as_bytes()) {
            Err(Error::MalformedLine { line: 1, field, .. }) => assert_eq!(field, "caption"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_entity_names_record() {
        let text = LINE.replace(r#""entity":1}"#, r#""entity":9}"#);
        match read_corpus(text.as_bytes()) {
            Err(Error::InvalidRecord { record_id, .. }) => assert_eq!(record_id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{LINE}\n{LINE}\n");
        assert!(matches!(
            read_corpus(text.as_bytes()),
            Err(Error::InvalidRecord { .. })
        ));
    }

    #[test]
    fn corpus_line_round_trip() {
        let r = CorpusRecord::from_json_line(LINE, 1).unwrap();
        let again = CorpusRecord::from_json_line(&r.to_json_line().unwrap(), 1).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn confusion_fixture_loads() {
        let cm =
            ConfusionMatrix::from_csv(",Transport,Arrest\nTransport,5,3\nArrest,1,7\n").unwrap();
        assert_eq!(cm.labels, ["Transport", "Arrest"]);
        assert_eq!(cm.counts, vec![vec![5, 3], vec![1, 7]]);
        assert_eq!(ConfusionMatrix::from_csv(&cm.to_csv()).unwrap(), cm);
    }

    #[test]
    fn confusion_negative_rejected() {
        let err = ConfusionMatrix::from_csv(",A,B\nA,5,-1\nB,1,7\n").unwrap_err();
        assert!(err.to_string().contains("negative"), "{err}");
    }

    #[test]
    fn confusion_shape_mismatch_rejected() {
        assert!(ConfusionMatrix::from_csv(",A,B,C\nA,5,1\nB,1,7\n").is_err());
        assert!(ConfusionMatrix::from_csv(",A,B\nA,5,1\n").is_err());
    }

    #[test]
    fn embeddings_header_echo() {
        let rows = (0..3).map(|i| (format!("k{i}"), vec![i as f32; 4]));
        let t = EmbeddingTable::from_rows(4, rows).unwrap();
        let back = EmbeddingTable::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.shape(), (3, 4));
        assert_eq!(back.get("k2").unwrap(), &[2.0; 4]);
    }

    #[test]
    fn empty_embedding_table_keeps_dim() {
        let t = EmbeddingTable::new(7);
        let back = EmbeddingTable::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.shape(), (0, 7));
    }

    #[test]
    fn truncated_body_reports_byte_counts() {
        let t = EmbeddingTable::from_rows(4, vec![("a".to_string(), vec![1.0; 4])]).unwrap();
        let mut bytes = t.to_bytes();
        bytes.truncate(bytes.len() - 3);
        let err = EmbeddingTable::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("expected 16 bytes, found 13"), "{err}");
    }

    #[test]
    fn nan_entry_is_data_error() {
        let t = EmbeddingTable::from_rows(2, vec![("a".to_string(), vec![1.0, 2.0])]).unwrap();
        let mut bytes = t.to_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingTable::from_bytes(&bytes),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let t = EmbeddingTable::from_rows(1, vec![("ab".to_string(), vec![1.0])]).unwrap();
        let mut expected = b"EVAL".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0, 0, 0, b'a', b'b']);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(t.to_bytes(), expected);
    }

    proptest! {
        #[test]
        fn embedding_bytes_round_trip(
            dim in 1usize..6,
            rows in proptest::collection::vec(proptest::collection::vec(-1e6f32..1e6, 5), 0..6),
        ) {
            let rows = rows.into_iter().enumerate().map(|(i, r)| (format!("key:{i}"), r[..dim].to_vec()));
            let t = EmbeddingTable::from_rows(dim, rows).unwrap();
            let bytes = t.to_bytes();
            let back = EmbeddingTable::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, t);
        }
    }
}

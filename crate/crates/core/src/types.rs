//! Domain vocabulary: spans, mentions, events, detections and the two flavors
//! of event graph.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ontology::Ontology;

/// Half-open character range `[start, end)` into a caption.
///
/// Offsets count Unicode scalar values, not bytes, so spans are independent
/// of any tokenizer and of the UTF-8 encoding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Slice `text` by character offsets. `None` when the span is empty or
    /// reaches past the end of the text.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        if self.is_empty() {
            return None;
        }
        let (b0, b1) = char_to_byte_range(text, self.start, self.end)?;
        Some(&text[b0..b1])
    }
}

/// Convert a character range into a byte range of `text`.
pub(crate) fn char_to_byte_range(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let mut b0 = None;
    let mut b1 = None;
    let mut count = 0;
    for (idx, (byte, _)) in text.char_indices().enumerate() {
        if idx == start {
            b0 = Some(byte);
        }
        if idx == end {
            b1 = Some(byte);
        }
        count = idx + 1;
    }
    if start == count {
        b0 = Some(text.len());
    }
    if end == count {
        b1 = Some(text.len());
    }
    Some((b0?, b1?))
}

/// A text mention of an entity: its character span, surface text and type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    pub span: Span,
    pub text: String,
    pub entity_type: String,
}

impl EntityMention {
    /// Resolve `span` against `caption`.
    pub fn from_caption(caption: &str, span: Span, entity_type: impl Into<String>) -> Option<Self> {
        let text = span.slice(caption)?.to_string();
        Some(EntityMention {
            span,
            text,
            entity_type: entity_type.into(),
        })
    }
}

/// The trigger word(s) of an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub span: Span,
    pub text: String,
}

/// One event argument: an entity playing a role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argument {
    pub role: String,
    pub entity: EntityMention,
}

/// A typed event with its arguments, extracted from a caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStructure {
    pub event_type: String,
    pub trigger: Trigger,
    pub arguments: Vec<Argument>,
    /// Distance of the trigger from the dependency-parse root.
    pub dependency_depth: u32,
}

impl EventStructure {
    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.arguments.iter().map(|a| a.role.as_str())
    }

    pub fn argument(&self, role: &str) -> Option<&Argument> {
        self.arguments.iter().find(|a| a.role == role)
    }

    /// Reorder arguments following the ontology's role order for this event
    /// type. Roles unknown to the type keep their relative order at the end.
    pub fn sort_arguments(&mut self, ont: &Ontology) {
        let order = ont.roles(&self.event_type).unwrap_or(&[]).to_vec();
        self.arguments.sort_by_key(|a| {
            order
                .iter()
                .position(|r| *r == a.role)
                .unwrap_or(usize::MAX)
        });
    }
}

/// Axis-aligned bounding box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= width as f64
            && self.y_max <= height as f64
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

/// An object found by the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDetection {
    pub bbox: BBox,
    pub object_type: String,
    pub confidence: f64,
}

/// Opaque image reference plus the pixel size needed for region pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

/// Text-side event graph: the event node at the center and one leaf per
/// argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextGraph {
    pub record_id: String,
    pub caption: String,
    pub event: EventStructure,
}

impl TextGraph {
    pub fn node_count(&self) -> usize {
        1 + self.event.arguments.len()
    }
}

/// Image-side event graph: the whole-image node at the center and one leaf
/// per detected object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGraph {
    pub record_id: String,
    pub image: ImageInfo,
    pub objects: Vec<ObjectDetection>,
}

impl ImageGraph {
    pub fn node_count(&self) -> usize {
        1 + self.objects.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventGraph {
    Text(TextGraph),
    Image(ImageGraph),
}

impl EventGraph {
    pub fn node_count(&self) -> usize {
        match self {
            EventGraph::Text(g) => g.node_count(),
            EventGraph::Image(g) => g.node_count(),
        }
    }
}

/// A single well-formedness violation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    UnknownEventType(String),
    DuplicateRole(String),
    UnknownRole {
        role: String,
        event_type: String,
    },
    RoleOrder {
        role: String,
        after: String,
    },
    EmptySpan {
        what: String,
    },
    SpanOutOfBounds {
        what: String,
        span: Span,
        caption_len: usize,
    },
    MentionTextMismatch {
        what: String,
    },
    InvalidBBox {
        index: usize,
    },
    BBoxOutOfBounds {
        index: usize,
    },
    ConfidenceOutOfRange {
        index: usize,
        confidence: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownEventType(t) => write!(f, "unknown event type `{t}`"),
            Violation::DuplicateRole(r) => write!(f, "duplicate role `{r}`"),
            Violation::UnknownRole { role, event_type } => {
                write!(f, "unknown role `{role}` for event type `{event_type}`")
            }
            Violation::RoleOrder { role, after } => {
                write!(
                    f,
                    "role `{role}` appears after `{after}`, against ontology order"
                )
            }
            Violation::EmptySpan { what } => write!(f, "{what}: empty span"),
            Violation::SpanOutOfBounds {
                what,
                span,
                caption_len,
            } => write!(
                f,
                "{what}: span {}..{} outside caption of length {caption_len}",
                span.start, span.end
            ),
            Violation::MentionTextMismatch { what } => {
                write!(f, "{what}: mention text does not match caption span")
            }
            Violation::InvalidBBox { index } => write!(f, "object {index}: degenerate bbox"),
            Violation::BBoxOutOfBounds { index } => {
                write!(f, "object {index}: bbox outside image bounds")
            }
            Violation::ConfidenceOutOfRange { index, confidence } => {
                write!(f, "object {index}: confidence {confidence} outside [0,1]")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_span(caption: &str, what: &str, span: Span, text: &str, out: &mut Vec<Violation>) {
    let caption_len = caption.chars().count();
    if span.is_empty() {
        out.push(Violation::EmptySpan { what: what.into() });
    } else if span.end > caption_len {
        out.push(Violation::SpanOutOfBounds {
            what: what.into(),
            span,
            caption_len,
        });
    } else if span.slice(caption) != Some(text) {
        out.push(Violation::MentionTextMismatch { what: what.into() });
    }
}

/// Check a graph against the ontology. Violations are returned as data; an
/// empty report means the graph is well-formed.
pub fn validate_graph(graph: &EventGraph, ont: &Ontology) -> ValidationReport {
    let mut violations = Vec::new();
    match graph {
        EventGraph::Text(g) => {
            let ev = &g.event;
            let roles = ont.roles(&ev.event_type);
            if roles.is_none() {
                violations.push(Violation::UnknownEventType(ev.event_type.clone()));
            }
            check_span(
                &g.caption,
                "trigger",
                ev.trigger.span,
                &ev.trigger.text,
                &mut violations,
            );
            let mut seen = HashSet::new();
            let mut last: Option<(usize, &str)> = None;
            for (i, arg) in ev.arguments.iter().enumerate() {
                if !seen.insert(arg.role.as_str()) {
                    violations.push(Violation::DuplicateRole(arg.role.clone()));
                }
                if let Some(roles) = roles {
                    match roles.iter().position(|r| *r == arg.role) {
                        None => violations.push(Violation::UnknownRole {
                            role: arg.role.clone(),
                            event_type: ev.event_type.clone(),
                        }),
                        Some(pos) => {
                            if let Some((prev, prev_role)) = last {
                                if pos < prev {
                                    violations.push(Violation::RoleOrder {
                                        role: arg.role.clone(),
                                        after: prev_role.to_string(),
                                    });
                                }
                            }
                            last = Some((pos, arg.role.as_str()));
                        }
                    }
                }
                check_span(
                    &g.caption,
                    &format!("argument {i}"),
                    arg.entity.span,
                    &arg.entity.text,
                    &mut violations,
                );
            }
        }
        EventGraph::Image(g) => {
            for (index, obj) in g.objects.iter().enumerate() {
                if !obj.bbox.is_valid() {
                    violations.push(Violation::InvalidBBox { index });
                } else if !obj.bbox.within(g.image.width, g.image.height) {
                    violations.push(Violation::BBoxOutOfBounds { index });
                }
                if !(0.0..=1.0).contains(&obj.confidence) {
                    violations.push(Violation::ConfidenceOutOfRange {
                        index,
                        confidence: obj.confidence,
                    });
                }
            }
        }
    }
    ValidationReport { violations }
}

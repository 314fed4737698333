//! Small synthetic corpora with a known text/image correspondence.
//!
//! Record `k` has one event of the `k`-th ontology type whose arguments are
//! short noun phrases. Every argument is paired with one detected object of
//! the matching entity type, placed on its own patch of the image, and the
//! gold image event lists those boxes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusRecord, ImageArgument, ImageEvent};
use crate::ontology::{capitalize, Ontology};
use crate::types::{
    Argument, BBox, EntityMention, EventStructure, ImageInfo, ObjectDetection, Span, Trigger,
};

const NOUNS: &[(&str, &[&str])] = &[
    (
        "PER",
        &[
            "soldiers",
            "refugees",
            "protesters",
            "medics",
            "reporters",
            "farmers",
            "students",
            "pilots",
            "miners",
            "nurses",
        ],
    ),
    (
        "VEH",
        &["truck", "ambulance", "boat", "helicopter", "tractor"],
    ),
    ("WEA", &["rifles", "batons", "rockets", "knives"]),
    ("LOC", &["square", "harbor", "village", "bridge", "valley"]),
    ("ORG", &["council", "agency", "union"]),
    ("FAC", &["hospital", "school", "factory", "stadium"]),
];

/// Entity type a synthetic argument of `role` is drawn from.
pub fn entity_type_for(role: &str) -> &'static str {
    match role {
        "place" => "LOC",
        "vehicle" => "VEH",
        "instrument" => "WEA",
        "artifact" => "FAC",
        _ => "PER",
    }
}

fn nouns(entity_type: &str) -> &'static [&'static str] {
    NOUNS
        .iter()
        .find(|(t, _)| *t == entity_type)
        .map(|(_, n)| *n)
        .unwrap_or(NOUNS[0].1)
}

struct CaptionBuilder {
    text: String,
    chars: usize,
}

impl CaptionBuilder {
    fn push(&mut self, s: &str) -> Span {
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        let start = self.chars;
        self.text.push_str(s);
        self.chars += s.chars().count();
        Span::new(start, self.chars)
    }
}

/// `n` records over the event types of `ont` (cycled), deterministic in
/// `seed`.
pub fn toy_corpus(ont: &Ontology, n: usize, seed: u64) -> Vec<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = |k: usize| ImageInfo {
        uri: format!("synth/{seed}/{k}.png"),
        width: 96,
        height: 64,
    };
    (0..n)
        .map(|k| {
            let def = &ont.event_types[k % ont.event_types.len()];
            let info = image(k);
            let mut caption = CaptionBuilder {
                text: String::new(),
                chars: 0,
            };
            let mut arguments = Vec::new();
            let mut trigger = None;
            let mut used: Vec<&str> = Vec::new();
            for (i, role) in def.roles.iter().enumerate() {
                let ty = entity_type_for(role);
                let pool: Vec<&str> = nouns(ty)
                    .iter()
                    .copied()
                    .filter(|w| !used.contains(w))
                    .collect();
                let noun = *pool.choose(&mut rng).expect("noun bank is large enough");
                used.push(noun);
                if i == 1 {
                    caption.push("near");
                }
                let phrase = if i == 0 {
                    capitalize(&format!("the {noun}"))
                } else {
                    format!("the {noun}")
                };
                let span = caption.push(&phrase);
                arguments.push(Argument {
                    role: role.clone(),
                    entity: EntityMention {
                        span,
                        text: phrase,
                        entity_type: ty.to_string(),
                    },
                });
                if i == 0 {
                    let verb = def
                        .verb_past
                        .clone()
                        .unwrap_or_else(|| def.label.to_lowercase());
                    let span = caption.push(&verb);
                    trigger = Some(Trigger { span, text: verb });
                }
            }
            caption.text.push('.');
            let objects: Vec<ObjectDetection> = arguments
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let (c, r) = ((i % 3) as f64, (i / 3) as f64);
                    ObjectDetection {
                        bbox: BBox::new(
                            32.0 * c + 2.0,
                            32.0 * r + 2.0,
                            32.0 * c + 30.0,
                            32.0 * r + 30.0,
                        ),
                        object_type: a.entity.entity_type.clone(),
                        confidence: 0.9,
                    }
                })
                .collect();
            let image_event = ImageEvent {
                event_type: def.id.clone(),
                arguments: arguments
                    .iter()
                    .zip(&objects)
                    .map(|(a, o)| ImageArgument {
                        role: a.role.clone(),
                        bbox: o.bbox,
                    })
                    .collect(),
            };
            CorpusRecord {
                id: format!("syn{k:03}"),
                caption: caption.text,
                image: info,
                entities: arguments.iter().map(|a| a.entity.clone()).collect(),
                events: vec![EventStructure {
                    event_type: def.id.clone(),
                    trigger: trigger.expect("every type has a role"),
                    arguments,
                    dependency_depth: 0,
                }],
                objects,
                image_event: Some(image_event),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_graph, EventGraph, ImageGraph, TextGraph};

    #[test]
    fn records_are_well_formed_and_deterministic() {
        let ont = Ontology::toy();
        let a = toy_corpus(&ont, 8, 3);
        assert_eq!(a, toy_corpus(&ont, 8, 3));
        assert_ne!(a, toy_corpus(&ont, 8, 4));
        for r in &a {
            let ev = &r.events[0];
            let tg = EventGraph::Text(TextGraph {
                record_id: r.id.clone(),
                caption: r.caption.clone(),
                event: ev.clone(),
            });
            assert!(
                validate_graph(&tg, &ont).is_empty(),
                "{:?}",
                validate_graph(&tg, &ont)
            );
            let ig = EventGraph::Image(ImageGraph {
                record_id: r.id.clone(),
                image: r.image.clone(),
                objects: r.objects.clone(),
            });
            assert!(validate_graph(&ig, &ont).is_empty());
            for a in &ev.arguments {
                assert_eq!(a.entity.span.slice(&r.caption).unwrap(), a.entity.text);
            }
            assert_eq!(ev.trigger.span.slice(&r.caption).unwrap(), ev.trigger.text);
        }
        assert_eq!(a[0].caption.split(' ').next(), Some("The"));
    }
}

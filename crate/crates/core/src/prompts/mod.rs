//! Text descriptions of event structures: the positive description and its
//! two hard negatives, rendered by one of five prompt kinds.

mod completion;
pub mod template;

pub use completion::{
    build_prompt, complete_all, event_lines, first_line, make_request, request_key,
    CompletionClient, CompletionRequest, Exemplar, HttpCompletion, MockCompletion, RetryPolicy,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::negatives::NegativePair;
use crate::ontology::{capitalize, decapitalize, Ontology};
use crate::types::{Argument, EventStructure, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    SingleTemplate,
    ComposedTemplate,
    Continuous,
    CaptionEdit,
    CompletionService,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::SingleTemplate,
        PromptKind::ComposedTemplate,
        PromptKind::Continuous,
        PromptKind::CaptionEdit,
        PromptKind::CompletionService,
    ];

    /// Short name used on the command line.
    pub fn short_name(&self) -> &'static str {
        match self {
            PromptKind::SingleTemplate => "single",
            PromptKind::ComposedTemplate => "composed",
            PromptKind::Continuous => "continuous",
            PromptKind::CaptionEdit => "edit",
            PromptKind::CompletionService => "completion",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for PromptKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.short_name() == s)
            .ok_or_else(|| Error::Format(format!("unknown prompt kind `{s}`")))
    }
}

/// A reserved token `[Xk]` occurring at `span` (character offsets) of a
/// rendered continuous prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservedSlot {
    pub id: usize,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPrompt {
    pub text: String,
    pub reserved: Vec<ReservedSlot>,
}

/// Positive description plus its event-type and argument-role negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionSet {
    pub record_id: String,
    pub kind: PromptKind,
    pub positive: String,
    pub negative_event: String,
    pub negative_args: String,
    /// Reserved-token positions of the three texts, continuous prompts only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reserved: Vec<Vec<ReservedSlot>>,
    /// The argument negative is identical to the positive.
    #[serde(default)]
    pub degenerate: bool,
    /// Some text came from a fallback renderer.
    #[serde(default)]
    pub fallback: bool,
}

impl DescriptionSet {
    pub fn texts(&self) -> [&str; 3] {
        [&self.positive, &self.negative_event, &self.negative_args]
    }
}

fn sorted(ev: &EventStructure, ont: &Ontology) -> EventStructure {
    let mut ev = ev.clone();
    ev.sort_arguments(ont);
    ev
}

// Mentions opening the caption lose their sentence-initial capital.
fn mention_text(arg: &Argument) -> String {
    if arg.entity.span.start == 0 {
        decapitalize(&arg.entity.text)
    } else {
        arg.entity.text.clone()
    }
}

/// Fill the event type's single-sentence template with mention texts.
pub fn render_single_template(ev: &EventStructure, ont: &Ontology) -> Result<String> {
    let def = ont
        .event_type(&ev.event_type)
        .ok_or_else(|| Error::UnknownLabel(ev.event_type.clone()))?;
    let tpl = def
        .template
        .as_deref()
        .ok_or_else(|| Error::TemplateNotFound(ev.event_type.clone()))?;
    let pieces = template::parse(tpl)?;
    let fill = |k: usize| -> Option<String> {
        let role = def.roles.get(k - 1)?;
        ev.argument(role).map(mention_text)
    };
    let text = template::render(&pieces, &fill);
    Ok(capitalize(&collapse_whitespace(&text)))
}

/// "The image is about X." then one "The role is mention." per argument.
pub fn render_composed_template(ev: &EventStructure, ont: &Ontology) -> String {
    let ev = sorted(ev, ont);
    let mut out = format!("The image is about {}.", ont.event_label(&ev.event_type));
    for arg in &ev.arguments {
        out.push_str(&format!(
            " The {} is {}.",
            ont.role_phrase(&arg.role),
            mention_text(arg)
        ));
    }
    out
}

/// Role → mention pairs read back from a composed description.
pub fn read_composed(text: &str) -> Option<(String, Vec<(String, String)>)> {
    let rest = text.strip_prefix("The image is about ")?;
    let (label, mut rest) = rest.split_once('.')?;
    let mut pairs = Vec::new();
    while !rest.is_empty() {
        let body = rest.strip_prefix(" The ")?;
        let (role, tail) = body.split_once(" is ")?;
        let (mention, tail) = tail.split_once('.')?;
        pairs.push((role.to_string(), mention.to_string()));
        rest = tail;
    }
    Some((label.to_string(), pairs))
}

const CONTINUOUS_TOKENS: usize = 4;

/// `[X0]Type [X1]` then `role [X2]mention [X3]` per argument. Every reserved
/// id must satisfy `is_registered`.
pub fn render_continuous(
    ev: &EventStructure,
    ont: &Ontology,
    is_registered: &dyn Fn(usize) -> bool,
) -> Result<ContinuousPrompt> {
    if let Some(k) = (0..CONTINUOUS_TOKENS).find(|&k| !is_registered(k)) {
        return Err(Error::UnregisteredToken(k));
    }
    let ev = sorted(ev, ont);
    let mut b = ContinuousBuilder::default();
    b.token(0);
    b.text(&format!("{} ", ont.event_label(&ev.event_type)));
    b.token(1);
    for arg in &ev.arguments {
        b.text(&format!("{} ", ont.role_phrase(&arg.role)));
        b.token(2);
        b.text(&format!("{} ", mention_text(arg)));
        b.token(3);
    }
    Ok(ContinuousPrompt {
        text: b.text,
        reserved: b.reserved,
    })
}

#[derive(Default)]
struct ContinuousBuilder {
    text: String,
    chars: usize,
    reserved: Vec<ReservedSlot>,
}

impl ContinuousBuilder {
    fn text(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn token(&mut self, id: usize) {
        let tok = format!("[X{id}]");
        let start = self.chars;
        self.text(&tok);
        self.reserved.push(ReservedSlot {
            id,
            span: Span::new(start, self.chars),
        });
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace normalization for comparing continuous prompts: no whitespace
/// on either side of an `[Xk]` token, other runs collapsed to one space.
pub fn normalize_continuous(text: &str) -> String {
    let collapsed = collapse_whitespace(text);
    let mut out = String::new();
    let mut rest = collapsed.as_str();
    while let Some(open) = rest.find("[X") {
        let close = match rest[open..].find(']') {
            Some(c) => open + c,
            None => break,
        };
        let is_token =
            rest[open + 2..close].chars().all(|c| c.is_ascii_digit()) && close > open + 2;
        if is_token {
            out.push_str(rest[..open].trim_end());
            out.push_str(&rest[open..=close]);
            rest = rest[close + 1..].trim_start();
        } else {
            out.push_str(&rest[..=close]);
            rest = &rest[close + 1..];
        }
    }
    out.push_str(rest);
    out
}

/// Edit positions of the caption: trigger plus argument spans.
fn check_disjoint(ev: &EventStructure) -> Result<()> {
    let mut spans: Vec<Span> = vec![ev.trigger.span];
    spans.extend(ev.arguments.iter().map(|a| a.entity.span));
    for (i, a) in spans.iter().enumerate() {
        for b in &spans[i + 1..] {
            if a.overlaps(b) {
                return Err(Error::CannotEdit(format!(
                    "spans {}..{} and {}..{} overlap",
                    a.start, a.end, b.start, b.end
                )));
            }
        }
    }
    Ok(())
}

fn splice(caption: &str, edits: &mut [(Span, String)]) -> Result<String> {
    edits.sort_by_key(|(s, _)| s.start);
    let chars: Vec<char> = caption.chars().collect();
    let mut out = String::new();
    let mut pos = 0;
    for (span, text) in edits.iter() {
        if span.end > chars.len() || span.start < pos {
            return Err(Error::CannotEdit(format!(
                "span {}..{} invalid for caption",
                span.start, span.end
            )));
        }
        out.extend(&chars[pos..span.start]);
        out.push_str(text);
        pos = span.end;
    }
    out.extend(&chars[pos..]);
    Ok(out)
}

fn case_for(text: &str, target_start: usize) -> String {
    if target_start == 0 {
        capitalize(text)
    } else {
        text.to_string()
    }
}

/// Replace the trigger with a verb form of the negative type.
pub fn edit_trigger(
    caption: &str,
    pos: &EventStructure,
    negative_type: &str,
    ont: &Ontology,
) -> Result<String> {
    check_disjoint(pos)?;
    let verb = ont.verb_form(negative_type, &pos.trigger.text);
    splice(
        caption,
        &mut [(pos.trigger.span, case_for(&verb, pos.trigger.span.start))],
    )
}

/// Put at each original argument span the mention that now holds that
/// argument's role. `None` when some role has no new holder, which happens
/// when a single argument was given a fresh role.
pub fn edit_arguments(
    caption: &str,
    pos: &EventStructure,
    neg: &EventStructure,
) -> Result<Option<String>> {
    check_disjoint(pos)?;
    let mut edits = Vec::new();
    for orig in &pos.arguments {
        let Some(mover) = neg.arguments.iter().find(|a| a.role == orig.role) else {
            return Ok(None);
        };
        let text = case_for(&mention_text(mover), orig.entity.span.start);
        edits.push((orig.entity.span, text));
    }
    splice(caption, &mut edits).map(Some)
}

/// Caption-edit description set for one negative pair.
pub fn edit_caption(
    record: &CorpusRecord,
    pair: &NegativePair,
    ont: &Ontology,
) -> Result<DescriptionSet> {
    let caption = &record.caption;
    let negative_event = edit_trigger(
        caption,
        &pair.positive,
        &pair.negative_event.event_type,
        ont,
    )?;
    let mut fallback = false;
    let (negative_args, degenerate) = match &pair.negative_args {
        None => (caption.clone(), true),
        Some(neg) => match edit_arguments(caption, &pair.positive, neg)? {
            Some(t) => (t, false),
            None => {
                fallback = true;
                (render_single_template(neg, ont)?, false)
            }
        },
    };
    Ok(DescriptionSet {
        record_id: record.id.clone(),
        kind: PromptKind::CaptionEdit,
        positive: caption.clone(),
        negative_event,
        negative_args,
        reserved: vec![],
        degenerate,
        fallback,
    })
}

/// Description from the completion service, falling back to the single
/// template when the service returns nothing. Returns the text and whether
/// the fallback fired.
pub fn render_via_completion(
    ev: &EventStructure,
    exemplars: &[Exemplar],
    client: &dyn CompletionClient,
    ont: &Ontology,
) -> Result<(String, bool)> {
    let request = make_request(exemplars, ev, ont, 64)?;
    finish_completion(client.complete(&request)?, ev, ont)
}

fn finish_completion(raw: String, ev: &EventStructure, ont: &Ontology) -> Result<(String, bool)> {
    let line = first_line(&raw);
    if line.is_empty() {
        log::warn!(
            "empty completion for `{}`; using single template",
            request_key(ev, ont)
        );
        return Ok((render_single_template(ev, ont)?, true));
    }
    Ok((line, false))
}

/// Settings shared by the renderers.
pub struct PromptContext<'a> {
    pub kind: PromptKind,
    pub ontology: &'a Ontology,
    /// Reserved-token registry for continuous prompts.
    pub is_registered: &'a dyn Fn(usize) -> bool,
    pub completion: Option<(&'a dyn CompletionClient, &'a [Exemplar])>,
}

/// Render the description set of one record's negative pair.
pub fn describe(
    record: &CorpusRecord,
    pair: &NegativePair,
    ctx: &PromptContext<'_>,
) -> Result<DescriptionSet> {
    let ont = ctx.ontology;
    let mut set = DescriptionSet {
        record_id: record.id.clone(),
        kind: ctx.kind,
        positive: String::new(),
        negative_event: String::new(),
        negative_args: String::new(),
        reserved: vec![],
        degenerate: pair.negative_args.is_none(),
        fallback: false,
    };
    let args = pair.negative_args.as_ref().unwrap_or(&pair.positive);
    match ctx.kind {
        PromptKind::CaptionEdit => return edit_caption(record, pair, ont),
        PromptKind::SingleTemplate => {
            set.positive = render_single_template(&pair.positive, ont)?;
            set.negative_event = render_single_template(&pair.negative_event, ont)?;
            set.negative_args = render_single_template(args, ont)?;
        }
        PromptKind::ComposedTemplate => {
            set.positive = render_composed_template(&pair.positive, ont);
            set.negative_event = render_composed_template(&pair.negative_event, ont);
            set.negative_args = render_composed_template(args, ont);
        }
        PromptKind::Continuous => {
            for (slot, ev) in [&pair.positive, &pair.negative_event, args]
                .into_iter()
                .enumerate()
            {
                let p = render_continuous(ev, ont, ctx.is_registered)?;
                match slot {
                    0 => set.positive = p.text,
                    1 => set.negative_event = p.text,
                    _ => set.negative_args = p.text,
                }
                set.reserved.push(p.reserved);
            }
        }
        PromptKind::CompletionService => {
            let (client, exemplars) = ctx
                .completion
                .ok_or_else(|| Error::Precondition("completion prompts need a client".into()))?;
            let mut texts = Vec::new();
            for ev in [&pair.positive, &pair.negative_event, args] {
                let (t, fb) = render_via_completion(ev, exemplars, client, ont)?;
                set.fallback |= fb;
                texts.push(t);
            }
            set.negative_args = texts.pop().expect("three texts");
            set.negative_event = texts.pop().expect("three texts");
            set.positive = texts.pop().expect("three texts");
        }
    }
    Ok(set)
}

/// Completion-backed description sets for many records with at most
/// `max_in_flight` concurrent requests.
pub fn describe_all_via_completion(
    items: &[(&CorpusRecord, &NegativePair)],
    exemplars: &[Exemplar],
    client: &dyn CompletionClient,
    ont: &Ontology,
    max_in_flight: usize,
) -> Result<Vec<DescriptionSet>> {
    let mut requests = Vec::new();
    let mut events = Vec::new();
    for (_, pair) in items {
        let args = pair.negative_args.as_ref().unwrap_or(&pair.positive);
        for ev in [&pair.positive, &pair.negative_event, args] {
            requests.push(make_request(exemplars, ev, ont, 64)?);
            events.push(ev.clone());
        }
    }
    let mut replies = complete_all(client, &requests, max_in_flight).into_iter();
    let mut out = Vec::new();
    for (record, pair) in items {
        let mut texts = Vec::new();
        let mut fallback = false;
        for _ in 0..3 {
            let ev = &events[out.len() * 3 + texts.len()];
            let (t, fb) =
                finish_completion(replies.next().expect("one reply per request")?, ev, ont)?;
            fallback |= fb;
            texts.push(t);
        }
        let [positive, negative_event, negative_args]: [String; 3] =
            texts.try_into().expect("three texts");
        out.push(DescriptionSet {
            record_id: record.id.clone(),
            kind: PromptKind::CompletionService,
            positive,
            negative_event,
            negative_args,
            reserved: vec![],
            degenerate: pair.negative_args.is_none(),
            fallback,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::negatives::{retype_event, rotate_arguments, Provenance, Rule};
    use crate::types::{EntityMention, Trigger};
    use proptest::prelude::*;

    const CAPTION: &str = "Protesters carry an injured man in a stretcher.";

    fn running() -> EventStructure {
        let m = |s, e, t| EntityMention::from_caption(CAPTION, Span::new(s, e), t).unwrap();
        EventStructure {
            event_type: "Transport".into(),
            trigger: Trigger {
                span: Span::new(11, 16),
                text: "carry".into(),
            },
            arguments: vec![
                Argument {
                    role: "agent".into(),
                    entity: m(0, 10, "PER"),
                },
                Argument {
                    role: "entity".into(),
                    entity: m(17, 31, "PER"),
                },
                Argument {
                    role: "instrument".into(),
                    entity: m(35, 46, "VEH"),
                },
            ],
            dependency_depth: 0,
        }
    }

    fn all_registered(_: usize) -> bool {
        true
    }

    #[test]
    fn single_template_elides_missing_arguments() {
        let ont = Ontology::running_example();
        let mut ev = running();
        ev.arguments.truncate(1);
        assert_eq!(
            render_single_template(&ev, &ont).unwrap(),
            "Protesters transported."
        );
        ev.arguments.clear();
        assert_eq!(render_single_template(&ev, &ont).unwrap(), "Transported.");
    }

    #[test]
    fn missing_template_is_named() {
        let mut ont = Ontology::running_example();
        ont.event_types[1].template = None;
        let ev = retype_event(&running(), "Arrest", &Ontology::running_example()).unwrap();
        match render_single_template(&ev, &ont) {
            Err(Error::TemplateNotFound(t)) => assert_eq!(t, "Arrest"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn composed_without_arguments() {
        let ont = Ontology::running_example();
        let mut ev = running();
        ev.arguments.clear();
        assert_eq!(
            render_composed_template(&ev, &ont),
            "The image is about Transport."
        );
    }

    #[test]
    fn continuous_token_positions_and_count() {
        let ont = Ontology::running_example();
        for k in 0..=3 {
            let mut ev = running();
            ev.arguments.truncate(k);
            let p = render_continuous(&ev, &ont, &all_registered).unwrap();
            assert_eq!(p.reserved.len(), 2 * k + 2);
            for slot in &p.reserved {
                assert_eq!(slot.span.slice(&p.text).unwrap(), format!("[X{}]", slot.id));
            }
        }
        let mut ev = running();
        ev.arguments.clear();
        let p = render_continuous(&ev, &ont, &all_registered).unwrap();
        assert_eq!(
            normalize_continuous(&p.text),
            normalize_continuous("[X0] Transport [X1]")
        );
        assert!(matches!(
            render_continuous(&ev, &ont, &|k| k < 2),
            Err(Error::UnregisteredToken(2))
        ));
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(
            normalize_continuous("  [X0] A  b [X1]c [X9] "),
            "[X0]A b[X1]c[X9]"
        );
        assert_eq!(normalize_continuous("a [Xq] b"), "a [Xq] b");
    }

    #[test]
    fn overlapping_spans_cannot_be_edited() {
        let mut ev = running();
        ev.arguments[1].entity.span = Span::new(14, 20);
        assert!(matches!(
            edit_trigger(CAPTION, &ev, "Arrest", &Ontology::running_example()),
            Err(Error::CannotEdit(_))
        ));
    }

    #[test]
    fn zero_argument_caption_edit_is_degenerate() {
        let ont = Ontology::running_example();
        let mut ev = running();
        ev.arguments.clear();
        let pair = NegativePair {
            positive: ev.clone(),
            negative_event: retype_event(&ev, "Arrest", &ont).unwrap(),
            negative_args: None,
            provenance: Provenance {
                event: Rule::Confusion,
                arguments: Rule::Degenerate,
            },
        };
        let record = CorpusRecord {
            id: "r".into(),
            caption: CAPTION.into(),
            image: crate::types::ImageInfo {
                uri: "u".into(),
                width: 1,
                height: 1,
            },
            entities: vec![],
            events: vec![ev],
            objects: vec![],
            image_event: None,
        };
        let set = edit_caption(&record, &pair, &ont).unwrap();
        assert!(set.degenerate);
        assert_eq!(set.negative_args, set.positive);
        assert_eq!(
            set.negative_event,
            "Protesters arrest an injured man in a stretcher."
        );
    }

    #[test]
    fn empty_completion_falls_back() {
        let ont = Ontology::running_example();
        let ex = Exemplar::from_event(&running(), &ont, "x");
        let (t, fb) =
            render_via_completion(&running(), &[ex], &MockCompletion::default(), &ont).unwrap();
        assert!(fb);
        assert_eq!(
            t,
            "Protesters transported an injured man in a stretcher instrument."
        );
    }

    #[test]
    fn prompt_kind_names_round_trip() {
        for k in PromptKind::ALL {
            assert_eq!(k.short_name().parse::<PromptKind>().unwrap(), k);
        }
        assert!("gpt".parse::<PromptKind>().is_err());
    }

    proptest! {
        #[test]
        fn composed_reading_recovers_rotation(k in 2usize..=3, times in 1usize..3) {
            let ont = Ontology::running_example();
            let mut ev = running();
            ev.arguments.truncate(k);
            let mut rot = ev.clone();
            for _ in 0..times {
                rot = rotate_arguments(&rot).unwrap();
            }
            let (label, pairs) = read_composed(&render_composed_template(&rot, &ont)).unwrap();
            prop_assert_eq!(label, "Transport");
            let mut expected: Vec<(String, String)> = sorted(&rot, &ont)
                .arguments
                .iter()
                .map(|a| (a.role.clone(), mention_text(a)))
                .collect();
            let mut got = pairs;
            expected.sort();
            got.sort();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn negative_event_never_shows_gold_label(idx in 1usize..4) {
            let ont = Ontology::running_example();
            let neg_type = ont.event_types[idx].id.clone();
            let neg = retype_event(&running(), &neg_type, &ont).unwrap();
            let composed = render_composed_template(&neg, &ont);
            let (label, _) = read_composed(&composed).unwrap();
            prop_assert_ne!(label.as_str(), "Transport");
            let cont = render_continuous(&neg, &ont, &all_registered).unwrap();
            prop_assert!(!cont.text.contains("[X0]Transport"));
            prop_assert!(!render_single_template(&neg, &ont).unwrap().contains("transported"));
        }
    }
}

//! Zero-shot event typing and argument labeling, grounded-situation metrics,
//! Recall@k, and image-conditioned ranking of candidate texts.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConfusionMatrix, CorpusRecord, ImageArgument, ImageEvent};
use crate::encoder::{cosine, EmbeddingProvider, TextInput};
use crate::error::{Error, Result};
use crate::ontology::Ontology;
use crate::otalign::{argument_label_id, graph_distance, SinkhornConfig};
use crate::types::{BBox, ImageGraph, ImageInfo, ObjectDetection, TextGraph};

/// Grounding threshold shared by every box-matching metric.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Zero-shot description of a bare event type.
pub fn type_description(type_id: &str, ont: &Ontology) -> String {
    format!("The image is about {}.", ont.event_label(type_id))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeRanking {
    /// Candidates with their similarity, best first.
    pub ranked: Vec<(String, f64)>,
    /// True when the top score was shared and candidate order decided.
    pub tie: bool,
}

impl TypeRanking {
    pub fn prediction(&self) -> &str {
        &self.ranked[0].0
    }
}

/// Rank `candidates` by cosine between the image and each type's
/// description, embedded through the provider's label lookup keyed by type
/// id.
pub fn zero_shot_type(
    key: &str,
    image: &ImageInfo,
    candidates: &[String],
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
) -> Result<TypeRanking> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate event types".into()));
    }
    let iv = p.image(key, image)?;
    let mut ranked = candidates
        .iter()
        .map(|c| {
            Ok((
                c.clone(),
                cosine(&iv, &p.type_label(c, &type_description(c, ont))?)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    // stable sort keeps candidate order among equal scores
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let tie = ranked.len() > 1 && ranked[1].1 == ranked[0].1;
    if tie {
        log::info!(
            "`{key}`: tie at the top between `{}` and `{}`",
            ranked[0].0,
            ranked[1].0
        );
    }
    Ok(TypeRanking { ranked, tie })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleAssignment {
    pub object: usize,
    /// `None` when every role scored below the threshold.
    pub role: Option<String>,
    pub score: f64,
}

/// Best role of `event_type` for each detected object, scored by cosine
/// between the region and the argument description. Objects whose best
/// score is below `threshold` stay unassigned.
pub fn zero_shot_arguments(
    key: &str,
    image: &ImageInfo,
    objects: &[ObjectDetection],
    event_type: &str,
    ont: &Ontology,
    p: &dyn EmbeddingProvider,
    threshold: Option<f64>,
) -> Result<Vec<RoleAssignment>> {
    let roles = ont
        .roles(event_type)
        .ok_or_else(|| Error::Ontology(format!("unknown event type `{event_type}`")))?;
    let role_vecs = roles
        .iter()
        .map(|r| {
            p.type_label(
                &argument_label_id(r, event_type),
                &ont.argument_description(r, event_type),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let rv = p.image_region(key, image, i, &o.bbox)?;
            let mut best: Option<(usize, f64)> = None;
            for (k, v) in role_vecs.iter().enumerate() {
                let s = cosine(&rv, v)?;
                if best.map_or(true, |(_, b)| s > b) {
                    best = Some((k, s));
                }
            }
            let (k, score) = match best {
                Some(b) => b,
                None => {
                    return Ok(RoleAssignment {
                        object: i,
                        role: None,
                        score: f64::NEG_INFINITY,
                    })
                }
            };
            let keep = threshold.map_or(true, |t| score >= t);
            Ok(RoleAssignment {
                object: i,
                role: keep.then(|| roles[k].clone()),
                score,
            })
        })
        .collect()
}

/// Smallest box containing every input box.
pub fn union_ground(boxes: &[BBox]) -> Result<BBox> {
    let first = boxes
        .first()
        .ok_or_else(|| Error::Empty("no boxes to merge".into()))?;
    Ok(boxes[1..].iter().fold(*first, |acc, b| acc.union(b)))
}

/// Zero-shot image event for one record: predicted type over `candidates`,
/// then one argument per assigned object.
pub fn predict_image_event(
    record: &CorpusRecord,
    candidates: &[String],
    ont: &Ontology,
    p: &dyn EmbeddingProvider,
    threshold: Option<f64>,
) -> Result<(TypeRanking, ImageEvent)> {
    let ranking = zero_shot_type(&record.id, &record.image, candidates, p, ont)?;
    let event_type = ranking.prediction().to_string();
    let assigned = zero_shot_arguments(
        &record.id,
        &record.image,
        &record.objects,
        &event_type,
        ont,
        p,
        threshold,
    )?;
    let arguments = assigned
        .into_iter()
        .filter_map(|a| {
            a.role.map(|role| ImageArgument {
                role,
                bbox: record.objects[a.object].bbox,
            })
        })
        .collect();
    Ok((
        ranking,
        ImageEvent {
            event_type,
            arguments,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

/// One record's prediction or gold annotation; `None` means no event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub event: Option<ImageEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordDiagnostics {
    pub id: String,
    pub gold_type: Option<String>,
    pub predicted_type: Option<String>,
    pub arguments_correct: usize,
    pub arguments_predicted: usize,
    pub arguments_gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionScores {
    pub event: Prf,
    pub argument: Prf,
    #[serde(skip)]
    pub per_record: Vec<RecordDiagnostics>,
}

impl ExtractionScores {
    pub fn diagnostics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        for r in &self.per_record {
            w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

/// Size of a maximum bipartite matching; `edges[i]` lists the right-hand
/// vertices left vertex `i` may take.
pub fn max_matching(edges: &[Vec<usize>], right: usize) -> usize {
    fn augment(
        i: usize,
        edges: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &j in &edges[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].map_or(true, |k| augment(k, edges, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; right];
    (0..edges.len())
        .filter(|&i| augment(i, edges, &mut vec![false; right], &mut owner))
        .count()
}

/// Correct arguments of one event pair: a one-to-one matching where a
/// predicted argument may take a gold one of the same role whose box it
/// overlaps at IoU ≥ 0.5. Zero when the event types differ.
pub fn matched_arguments(pred: &ImageEvent, gold: &ImageEvent) -> usize {
    if pred.event_type != gold.event_type {
        return 0;
    }
    let edges: Vec<Vec<usize>> = pred
        .arguments
        .iter()
        .map(|a| {
            gold.arguments
                .iter()
                .enumerate()
                .filter(|(_, g)| g.role == a.role && a.bbox.iou(&g.bbox) >= IOU_THRESHOLD)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    max_matching(&edges, gold.arguments.len())
}

/// Event-typing and argument P/R/F1 over records aligned by position.
pub fn score_event_extraction(
    preds: &[EventRecord],
    golds: &[EventRecord],
) -> Result<ExtractionScores> {
    check_ids(
        preds.iter().map(|r| r.id.as_str()),
        golds.iter().map(|r| r.id.as_str()),
        preds.len(),
        golds.len(),
    )?;
    let (mut ec, mut ep, mut eg) = (0, 0, 0);
    let (mut ac, mut ap, mut ag) = (0, 0, 0);
    let mut per_record = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(golds) {
        let np = p.event.as_ref().map_or(0, |e| e.arguments.len());
        let ng = g.event.as_ref().map_or(0, |e| e.arguments.len());
        let correct = match (&p.event, &g.event) {
            (Some(pe), Some(ge)) => matched_arguments(pe, ge),
            _ => 0,
        };
        let typed =
            matches!((&p.event, &g.event), (Some(pe), Some(ge)) if pe.event_type == ge.event_type);
        ep += usize::from(p.event.is_some());
        eg += usize::from(g.event.is_some());
        ec += usize::from(typed);
        ap += np;
        ag += ng;
        ac += correct;
        per_record.push(RecordDiagnostics {
            id: g.id.clone(),
            gold_type: g.event.as_ref().map(|e| e.event_type.clone()),
            predicted_type: p.event.as_ref().map(|e| e.event_type.clone()),
            arguments_correct: correct,
            arguments_predicted: np,
            arguments_gold: ng,
        });
    }
    Ok(ExtractionScores {
        event: Prf::from_counts(ec, ep, eg),
        argument: Prf::from_counts(ac, ap, ag),
        per_record,
    })
}

fn check_ids<'a>(
    a: impl Iterator<Item = &'a str>,
    b: impl Iterator<Item = &'a str>,
    na: usize,
    nb: usize,
) -> Result<()> {
    if na != nb {
        return Err(Error::IdMismatch(format!(
            "{na} predictions for {nb} gold records"
        )));
    }
    for (i, (x, y)) in a.zip(b).enumerate() {
        if x != y {
            return Err(Error::IdMismatch(format!(
                "position {i}: prediction `{x}` vs gold `{y}`"
            )));
        }
    }
    Ok(())
}

/// Confusion matrix of gold type (rows) against predicted type (columns).
pub fn typing_confusion(
    labels: Vec<String>,
    pairs: &[(String, String)],
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::zeros(labels);
    for (gold, pred) in pairs {
        cm.record(gold, pred)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct M2e2Report {
    pub scores: ExtractionScores,
    pub typing_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub ties: usize,
}

/// Zero-shot typing and argument extraction over every record that carries
/// a gold image event, scored against that event.
pub fn evaluate_m2e2(
    records: &[CorpusRecord],
    ont: &Ontology,
    p: &dyn EmbeddingProvider,
    threshold: Option<f64>,
) -> Result<M2e2Report> {
    let candidates = ont.event_type_ids();
    let mut preds = vec![];
    let mut golds = vec![];
    let mut pairs = vec![];
    let mut ties = 0;
    for r in records.iter().filter(|r| r.image_event.is_some()) {
        let gold = r.image_event.clone().expect("filtered");
        let (ranking, pred) = predict_image_event(r, &candidates, ont, p, threshold)?;
        ties += usize::from(ranking.tie);
        pairs.push((gold.event_type.clone(), pred.event_type.clone()));
        preds.push(EventRecord {
            id: r.id.clone(),
            event: Some(pred),
        });
        golds.push(EventRecord {
            id: r.id.clone(),
            event: Some(gold),
        });
    }
    if golds.is_empty() {
        return Err(Error::Empty("no record carries a gold image event".into()));
    }
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    Ok(M2e2Report {
        scores: score_event_extraction(&preds, &golds)?,
        typing_accuracy: correct as f64 / pairs.len() as f64,
        confusion: typing_confusion(candidates, &pairs)?,
        ties,
    })
}

/// One role slot of a grounded situation. `bbox` is `None` for roles not
/// visible in the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationRole {
    pub role: String,
    pub value: String,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Situation {
    pub id: String,
    pub verb: String,
    pub roles: Vec<SituationRole>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsrScores {
    pub verb: f64,
    pub value: f64,
    pub value_all: f64,
    pub ground: f64,
    pub ground_all: f64,
}

fn grounded(pred: Option<&BBox>, gold: Option<&BBox>) -> bool {
    match (pred, gold) {
        (None, None) => true,
        (Some(p), Some(g)) => p.iou(g) >= IOU_THRESHOLD,
        _ => false,
    }
}

/// Verb accuracy, per-role value and grounding accuracy averaged per image,
/// and the all-roles-correct variants. Every role metric of an image is 0
/// when its verb is wrong; an image with no gold roles scores 1 on the role
/// metrics when its verb is right.
pub fn score_gsr(preds: &[Situation], golds: &[Situation]) -> Result<GsrScores> {
    check_ids(
        preds.iter().map(|r| r.id.as_str()),
        golds.iter().map(|r| r.id.as_str()),
        preds.len(),
        golds.len(),
    )?;
    if golds.is_empty() {
        return Err(Error::Empty("no situations to score".into()));
    }
    let mut sums = [0.0; 5];
    for (p, g) in preds.iter().zip(golds) {
        if p.verb != g.verb {
            continue;
        }
        sums[0] += 1.0;
        let (mut value, mut ground) = (0usize, 0usize);
        for gr in &g.roles {
            let pr = p.roles.iter().find(|r| r.role == gr.role);
            let v = pr.is_some_and(|r| r.value == gr.value);
            value += usize::from(v);
            ground +=
                usize::from(v && grounded(pr.and_then(|r| r.bbox.as_ref()), gr.bbox.as_ref()));
        }
        let n = g.roles.len();
        let frac = |k: usize| if n == 0 { 1.0 } else { k as f64 / n as f64 };
        sums[1] += frac(value);
        sums[2] += f64::from(u8::from(value == n));
        sums[3] += frac(ground);
        sums[4] += f64::from(u8::from(ground == n));
    }
    let n = golds.len() as f64;
    Ok(GsrScores {
        verb: sums[0] / n,
        value: sums[1] / n,
        value_all: sums[2] / n,
        ground: sums[3] / n,
        ground_all: sums[4] / n,
    })
}

/// Zero-shot situation: verb over `verbs`, then per role the union box of
/// the objects assigned to it, named after its highest-scoring object.
pub fn predict_situation(
    record: &CorpusRecord,
    verbs: &[String],
    ont: &Ontology,
    p: &dyn EmbeddingProvider,
    threshold: Option<f64>,
) -> Result<Situation> {
    let ranking = zero_shot_type(&record.id, &record.image, verbs, p, ont)?;
    let verb = ranking.prediction().to_string();
    let assigned = zero_shot_arguments(
        &record.id,
        &record.image,
        &record.objects,
        &verb,
        ont,
        p,
        threshold,
    )?;
    let mut by_role: BTreeMap<String, Vec<&RoleAssignment>> = BTreeMap::new();
    for a in &assigned {
        if let Some(r) = &a.role {
            by_role.entry(r.clone()).or_default().push(a);
        }
    }
    let roles = ont
        .roles(&verb)
        .unwrap_or_default()
        .iter()
        .filter_map(|role| {
            let group = by_role.get(role)?;
            let best = group.iter().max_by(|a, b| a.score.total_cmp(&b.score))?;
            let boxes: Vec<BBox> = group
                .iter()
                .map(|a| record.objects[a.object].bbox)
                .collect();
            Some(SituationRole {
                role: role.clone(),
                value: record.objects[best.object].object_type.clone(),
                bbox: union_ground(&boxes).ok(),
            })
        })
        .collect();
    Ok(Situation {
        id: record.id.clone(),
        verb,
        roles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recall {
    /// `(k, recall)` for each requested cutoff after capping.
    pub at: Vec<(usize, f64)>,
    pub queries: usize,
}

impl Recall {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.at.iter().find(|(c, _)| *c == k).map(|(_, r)| *r)
    }
}

/// 1-based rank of candidate `target` in `scores`: one plus the number of
/// candidates scoring higher, plus tied candidates at lower indices.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Recall@k with rows as queries and columns as candidates. A query hits
/// at `k` when its best-ranked gold candidate is within the top `k`.
/// Queries without gold candidates are skipped; `k` above the candidate
/// count is capped.
pub fn score_retrieval(
    scores: &Array2<f64>,
    gold: &[(usize, usize)],
    ks: &[usize],
) -> Result<Recall> {
    let (n, m) = scores.dim();
    let mut by_query: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(q, c) in gold {
        if q >= n || c >= m {
            return Err(Error::Precondition(format!(
                "gold pair ({q}, {c}) outside a {n}x{m} score matrix"
            )));
        }
        by_query.entry(q).or_default().push(c);
    }
    if by_query.is_empty() {
        return Err(Error::Empty("no gold pairs".into()));
    }
    let best: Vec<usize> = by_query
        .iter()
        .map(|(&q, cs)| {
            let row = scores.row(q).to_vec();
            cs.iter()
                .map(|&c| rank_of(&row, c))
                .min()
                .expect("non-empty")
        })
        .collect();
    let at = ks
        .iter()
        .map(|&k| {
            let k = if k > m {
                log::warn!("Recall@{k} requested with {m} candidates; capping");
                m
            } else {
                k
            };
            (
                k,
                best.iter().filter(|&&r| r <= k).count() as f64 / best.len() as f64,
            )
        })
        .collect();
    Ok(Recall {
        at,
        queries: best.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub image_to_text: Recall,
    pub text_to_image: Recall,
}

/// Recall@{1,5,10} in both directions for an image × text score matrix.
pub fn score_retrieval_both(
    scores: &Array2<f64>,
    gold: &[(usize, usize)],
) -> Result<RetrievalReport> {
    let flipped: Vec<(usize, usize)> = gold.iter().map(|&(i, t)| (t, i)).collect();
    Ok(RetrievalReport {
        image_to_text: score_retrieval(scores, gold, &[1, 5, 10])?,
        text_to_image: score_retrieval(&scores.t().to_owned(), &flipped, &[1, 5, 10])?,
    })
}

/// Weights of the two distances in the retrieval and ranking scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreWeights {
    pub image_text: f64,
    pub graph: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            image_text: 1.0,
            graph: 1.0,
        }
    }
}

/// A candidate text, optionally with its event graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub key: String,
    pub text: String,
    pub graph: Option<TextGraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub index: usize,
    pub key: String,
    pub image_text: f64,
    pub graph: f64,
    pub distance: f64,
}

/// Image side of a ranking query.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageQuery {
    pub key: String,
    pub image: ImageInfo,
    pub graph: Option<ImageGraph>,
}

/// Weighted `d(i,t) + d(G_i,G_t)` for one candidate; the graph term is 0
/// when either side has no graph.
pub fn combined_distance(
    query: &ImageQuery,
    cand: &Candidate,
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
    cfg: &SinkhornConfig,
    w: ScoreWeights,
) -> Result<(f64, f64)> {
    let iv = p.image(&query.key, &query.image)?;
    let tv = p.sentence(TextInput::new(&cand.key, &cand.text))?;
    let it = 1.0 - cosine(&iv, &tv)?;
    let g = match (&query.graph, &cand.graph) {
        (Some(ig), Some(tg)) => graph_distance(tg, ig, p, ont, cfg)?.distance,
        _ => 0.0,
    };
    Ok((w.image_text * it, w.graph * g))
}

/// Candidates in ascending combined distance; ties keep input order.
pub fn rank_texts(
    query: &ImageQuery,
    candidates: &[Candidate],
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
    cfg: &SinkhornConfig,
    w: ScoreWeights,
) -> Result<Vec<RankedCandidate>> {
    if candidates.len() < 2 {
        return Err(Error::Precondition(format!(
            "ranking needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    let mut out = candidates
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let (image_text, graph) = combined_distance(query, c, p, ont, cfg, w)?;
            Ok(RankedCandidate {
                index,
                key: c.key.clone(),
                image_text,
                graph,
                distance: image_text + graph,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    Ok(out)
}

/// Image × text retrieval scores `-(w1 d(i,t) + w2 d(G_i,G_t))` over paired
/// queries and candidates.
pub fn retrieval_scores(
    images: &[ImageQuery],
    texts: &[Candidate],
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
    cfg: &SinkhornConfig,
    w: ScoreWeights,
) -> Result<Array2<f64>> {
    let mut s = Array2::zeros((images.len(), texts.len()));
    for (i, q) in images.iter().enumerate() {
        for (j, c) in texts.iter().enumerate() {
            let (a, b) = combined_distance(q, c, p, ont, cfg, w)?;
            s[[i, j]] = -(a + b);
        }
    }
    Ok(s)
}

/// Image query and caption candidate of a record; the text graph is built
/// from `event` when given.
pub fn retrieval_pair(record: &CorpusRecord, event: Option<usize>) -> (ImageQuery, Candidate) {
    let image_graph = ImageGraph {
        record_id: record.id.clone(),
        image: record.image.clone(),
        objects: record.objects.clone(),
    };
    let graph = event
        .and_then(|k| record.events.get(k))
        .map(|ev| TextGraph {
            record_id: record.id.clone(),
            caption: record.caption.clone(),
            event: ev.clone(),
        });
    (
        ImageQuery {
            key: record.id.clone(),
            image: record.image.clone(),
            graph: Some(image_graph),
        },
        Candidate {
            key: record.id.clone(),
            text: record.caption.clone(),
            graph,
        },
    )
}

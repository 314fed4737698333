//! Contrastive description loss plus event-graph transport loss, and a small
//! gradient-descent loop over the [`ToyEncoder`] parameters.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{ConfusionMatrix, CorpusRecord};
use crate::encoder::{
    cosine, cosine_with_grad, EmbeddingProvider, Features, ToyEncoder, ToyGradient,
};
use crate::error::{Error, Result};
use crate::negatives::negatives_for_record;
use crate::ontology::Ontology;
use crate::otalign::{
    cost_terms, image_nodes, sinkhorn_uniform, text_nodes, transport_cost_gradient, NodeKind,
    SinkhornConfig, TransportPlan, VectorRequest,
};
use crate::primary::select_primary;
use crate::prompts::{describe, DescriptionSet, PromptContext};
use crate::seed;
use crate::types::{ImageGraph, TextGraph};

/// Lower clamp of the mapped similarity in the cross-entropy terms.
pub const EPSILON: f64 = 1e-7;

/// One image with its descriptions and both event graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub record: CorpusRecord,
    pub descriptions: DescriptionSet,
    pub text_graph: TextGraph,
    pub image_graph: ImageGraph,
    /// Graphs of the negative structures, used when the graph loss also
    /// covers negatives.
    pub negative_graphs: Vec<TextGraph>,
    /// 0/1 text-node × image-node alignment for supervised transport.
    pub alignment: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    items: &'a [BatchItem],
}

impl<'a> Batch<'a> {
    pub fn new(items: &'a [BatchItem]) -> Result<Self> {
        if items.len() < 2 {
            return Err(Error::BatchTooSmall(items.len()));
        }
        Ok(Batch { items })
    }

    pub fn items(&self) -> &'a [BatchItem] {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossReport {
    pub fn new(l1: f64, l2: f64, lambda1: f64, lambda2: f64) -> Self {
        LossReport {
            l1,
            l2,
            total: lambda1 * l1 + lambda2 * l2,
            lambda1,
            lambda2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub sinkhorn: SinkhornConfig,
    /// Add the graph distances of the negative structures to the graph loss.
    pub graph_negatives: bool,
    /// Use each item's supplied alignment as the transport plan.
    pub supervised: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            sinkhorn: SinkhornConfig {
                max_iter: 2000,
                ..SinkhornConfig::default()
            },
            graph_negatives: false,
            supervised: false,
        }
    }
}

/// Cross-entropy of a cosine mapped to [0, 1] against a 0/1 target, with its
/// derivative with respect to the cosine. The derivative is 0 where the
/// clamp is active.
pub fn pair_term(cos: f64, positive: bool) -> (f64, f64) {
    let raw = (cos + 1.0) / 2.0;
    let s = raw.clamp(EPSILON, 1.0 - EPSILON);
    let live = raw == s;
    if positive {
        (-s.ln(), if live { -0.5 / s } else { 0.0 })
    } else {
        (-(1.0 - s).ln(), if live { 0.5 / (1.0 - s) } else { 0.0 })
    }
}

/// Source of vectors for the loss code. The gradient-tracking variant also
/// keeps pooled features and accumulates gradients per vector.
trait Resolver {
    fn resolve(&mut self, req: &VectorRequest) -> Result<usize>;
    fn vector(&self, idx: usize) -> &[f64];
    fn add_grad(&mut self, idx: usize, g: &[f64], scale: f64);
}

struct ProviderResolver<'a> {
    provider: &'a dyn EmbeddingProvider,
    vecs: Vec<Vec<f64>>,
}

impl Resolver for ProviderResolver<'_> {
    fn resolve(&mut self, req: &VectorRequest) -> Result<usize> {
        self.vecs.push(req.embed(self.provider)?);
        Ok(self.vecs.len() - 1)
    }
    fn vector(&self, idx: usize) -> &[f64] {
        &self.vecs[idx]
    }
    fn add_grad(&mut self, _: usize, _: &[f64], _: f64) {}
}

struct Tape<'a> {
    encoder: &'a ToyEncoder,
    features: Vec<Features>,
    vecs: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

pub(crate) fn request_features(req: &VectorRequest, enc: &ToyEncoder) -> Result<Features> {
    Ok(match req {
        VectorRequest::Sentence { text, .. } => enc.text_features(text)?,
        VectorRequest::Span { text, span, .. } => enc.span_features(text, *span)?,
        VectorRequest::Image { image, .. } => enc.image_features(image),
        VectorRequest::Region { image, bbox, .. } => enc.region_features(image, bbox),
        VectorRequest::Label { phrase, .. } => enc.text_features(phrase)?,
    })
}

impl Resolver for Tape<'_> {
    fn resolve(&mut self, req: &VectorRequest) -> Result<usize> {
        let f = request_features(req, self.encoder)?;
        let v = self.encoder.project(&f);
        self.grads.push(vec![0.0; v.len()]);
        self.vecs.push(v);
        self.features.push(f);
        Ok(self.vecs.len() - 1)
    }
    fn vector(&self, idx: usize) -> &[f64] {
        &self.vecs[idx]
    }
    fn add_grad(&mut self, idx: usize, g: &[f64], scale: f64) {
        for (a, b) in self.grads[idx].iter_mut().zip(g) {
            *a += scale * b;
        }
    }
}

impl Tape<'_> {
    fn backprop(&self) -> ToyGradient {
        let mut grad = self.encoder.zero_gradient();
        for (f, g) in self.features.iter().zip(&self.grads) {
            if g.iter().any(|v| *v != 0.0) {
                self.encoder.accumulate(&mut grad, f, g);
            }
        }
        grad
    }
}

fn description_key(record_id: &str, which: &str) -> String {
    format!("{record_id}/{which}")
}

fn check_finite(v: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged(format!("{} is {v}", what())))
    }
}

fn l1_on(batch: Batch<'_>, r: &mut dyn Resolver) -> Result<f64> {
    let items = batch.items();
    let mut images = Vec::with_capacity(items.len());
    let mut texts: Vec<[usize; 3]> = Vec::with_capacity(items.len());
    for it in items {
        let id = &it.record.id;
        images.push(r.resolve(&VectorRequest::Image {
            key: id.clone(),
            image: it.record.image.clone(),
        })?);
        let d = &it.descriptions;
        let mut t = [0; 3];
        for (slot, (which, text)) in [
            ("pos", &d.positive),
            ("neg_evt", &d.negative_event),
            ("neg_arg", &d.negative_args),
        ]
        .into_iter()
        .enumerate()
        {
            t[slot] = r.resolve(&VectorRequest::Sentence {
                key: description_key(id, which),
                text: text.clone(),
            })?;
        }
        texts.push(t);
    }
    let mut total = 0.0;
    for (b, it) in items.iter().enumerate() {
        let mut pairs = vec![(texts[b][0], true, "pos"), (texts[b][1], false, "neg_evt")];
        if !it.descriptions.degenerate {
            pairs.push((texts[b][2], false, "neg_arg"));
        }
        for (c, other) in texts.iter().enumerate() {
            if c != b {
                pairs.push((other[0], false, "in-batch"));
            }
        }
        for (t, positive, label) in pairs {
            let (cos, du, dv) = cosine_with_grad(r.vector(t), r.vector(images[b]))?;
            let (value, dcos) = pair_term(cos.clamp(-1.0, 1.0), positive);
            total += check_finite(value, || format!("L1 term ({}, {label})", it.record.id))?;
            if dcos != 0.0 {
                r.add_grad(t, &du, dcos);
                r.add_grad(images[b], &dv, dcos);
            }
        }
    }
    Ok(total)
}

/// Sum over items of `d(G_t, G_i)`, plus the negative graphs if configured.
fn l2_on(batch: Batch<'_>, r: &mut dyn Resolver, ont: &Ontology, cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for it in batch.items() {
        let mut graphs = vec![&it.text_graph];
        if cfg.graph_negatives {
            graphs.extend(&it.negative_graphs);
        }
        for tg in graphs {
            let d = graph_term(
                tg,
                &it.image_graph,
                it.alignment.as_ref().filter(|_| cfg.supervised),
                r,
                ont,
                cfg,
            )?;
            total += check_finite(d, || format!("L2 term for `{}`", it.record.id))?;
        }
    }
    Ok(total)
}

fn graph_term(
    tg: &TextGraph,
    ig: &ImageGraph,
    alignment: Option<&Array2<f64>>,
    r: &mut dyn Resolver,
    ont: &Ontology,
    cfg: &LossConfig,
) -> Result<f64> {
    let rows_n = text_nodes(tg, ont);
    let cols_n = image_nodes(ig, ont);
    let mut resolve_all =
        |nodes: &[crate::otalign::NodeVectors]| -> Result<Vec<(NodeKind, Vec<usize>)>> {
            nodes
                .iter()
                .map(|n| {
                    Ok((
                        n.kind,
                        n.requests
                            .iter()
                            .map(|q| r.resolve(q))
                            .collect::<Result<Vec<_>>>()?,
                    ))
                })
                .collect()
        };
    let rows = resolve_all(&rows_n)?;
    let cols = resolve_all(&cols_n)?;
    let (n, m) = (rows.len(), cols.len());
    let mut cost = Array2::zeros((n, m));
    for (i, (rk, rv)) in rows.iter().enumerate() {
        for (j, (ck, cv)) in cols.iter().enumerate() {
            for &(u, v) in cost_terms(*rk, *ck) {
                cost[[i, j]] += 1.0 - cosine(r.vector(rv[u]), r.vector(cv[v]))?;
            }
        }
    }
    let (distance, dcost) = match alignment {
        Some(al) => {
            let a = vec![1.0 / n as f64; n];
            let plan = TransportPlan::from_alignment(al, &a)?;
            (plan.cost(&cost), plan.plan)
        }
        None => {
            let plan = sinkhorn_uniform(&cost, &cfg.sinkhorn)?;
            (plan.cost(&cost), transport_cost_gradient(&cost, &plan)?)
        }
    };
    for (i, (rk, rv)) in rows.iter().enumerate() {
        for (j, (ck, cv)) in cols.iter().enumerate() {
            let g = dcost[[i, j]];
            if g == 0.0 {
                continue;
            }
            for &(u, v) in cost_terms(*rk, *ck) {
                let (_, du, dv) = cosine_with_grad(r.vector(rv[u]), r.vector(cv[v]))?;
                r.add_grad(rv[u], &du, -g);
                r.add_grad(cv[v], &dv, -g);
            }
        }
    }
    Ok(distance)
}

/// Sum of cross-entropy terms over each image against its own three
/// descriptions and the other items' positives.
pub fn contrastive_loss(batch: Batch<'_>, p: &dyn EmbeddingProvider) -> Result<f64> {
    l1_on(
        batch,
        &mut ProviderResolver {
            provider: p,
            vecs: vec![],
        },
    )
}

pub fn graph_loss(
    batch: Batch<'_>,
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
    cfg: &LossConfig,
) -> Result<f64> {
    l2_on(
        batch,
        &mut ProviderResolver {
            provider: p,
            vecs: vec![],
        },
        ont,
        cfg,
    )
}

pub fn loss(
    batch: Batch<'_>,
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let l1 = contrastive_loss(batch, p)?;
    let l2 = graph_loss(batch, p, ont, cfg)?;
    Ok(LossReport::new(l1, l2, cfg.lambda1, cfg.lambda2))
}

/// Analytic gradients of both losses with respect to the encoder
/// parameters, unweighted.
pub fn loss_gradients(
    batch: Batch<'_>,
    enc: &ToyEncoder,
    ont: &Ontology,
    cfg: &LossConfig,
) -> Result<(LossReport, ToyGradient, ToyGradient)> {
    let tape = |enc| Tape {
        encoder: enc,
        features: vec![],
        vecs: vec![],
        grads: vec![],
    };
    let mut t1 = tape(enc);
    let l1 = l1_on(batch, &mut t1)?;
    let mut t2 = tape(enc);
    let l2 = l2_on(batch, &mut t2, ont, cfg)?;
    Ok((
        LossReport::new(l1, l2, cfg.lambda1, cfg.lambda2),
        t1.backprop(),
        t2.backprop(),
    ))
}

/// `λ1 ∇L1 + λ2 ∇L2`; the graph term is skipped entirely when `λ2 = 0`.
pub fn loss_and_gradient(
    batch: Batch<'_>,
    enc: &ToyEncoder,
    ont: &Ontology,
    cfg: &LossConfig,
) -> Result<(LossReport, ToyGradient)> {
    let mut t1 = Tape {
        encoder: enc,
        features: vec![],
        vecs: vec![],
        grads: vec![],
    };
    let l1 = l1_on(batch, &mut t1)?;
    let mut grad = t1.backprop();
    grad.scale(cfg.lambda1);
    let l2 = if cfg.lambda2 != 0.0 {
        let mut t2 = Tape {
            encoder: enc,
            features: vec![],
            vecs: vec![],
            grads: vec![],
        };
        let l2 = l2_on(batch, &mut t2, ont, cfg)?;
        grad.add_scaled(&t2.backprop(), cfg.lambda2);
        l2
    } else {
        graph_loss(batch, enc, ont, cfg)?
    };
    Ok((LossReport::new(l1, l2, cfg.lambda1, cfg.lambda2), grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub step: f64,
    /// Heavy-ball momentum coefficient; 0 disables it.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            epochs: 50,
            batch_size: 4,
            step: 0.05,
            momentum: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: ToyEncoder,
    /// Loss over the fixed batching before each epoch and after the last.
    pub curve: Vec<LossPoint>,
}

pub fn curve_to_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("epoch,l1,l2,total\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.epoch, p.l1, p.l2, p.total));
    }
    out
}

/// Split `order` into batches of `size`; a trailing single item joins the
/// previous batch.
pub fn make_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let size = size.max(2);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn gather(items: &[BatchItem], idx: &[usize]) -> Vec<BatchItem> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Total loss over the items in their given order, batched by `size`.
pub fn evaluate_loss(
    items: &[BatchItem],
    enc: &ToyEncoder,
    ont: &Ontology,
    cfg: &LossConfig,
    size: usize,
) -> Result<LossReport> {
    let order: Vec<usize> = (0..items.len()).collect();
    let (mut l1, mut l2) = (0.0, 0.0);
    for b in make_batches(&order, size) {
        let chunk = gather(items, &b);
        let r = loss(Batch::new(&chunk)?, enc, ont, cfg)?;
        l1 += r.l1;
        l2 += r.l2;
    }
    Ok(LossReport::new(l1, l2, cfg.lambda1, cfg.lambda2))
}

/// Gradient descent on the encoder's projection and reserved-token vectors.
/// Batches are reshuffled each epoch from `cfg.seed`.
pub fn train(
    items: &[BatchItem],
    encoder: ToyEncoder,
    ont: &Ontology,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if items.len() < 2 {
        return Err(Error::BatchTooSmall(items.len()));
    }
    let mut enc = encoder;
    let mut velocity = enc.zero_gradient();
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let point = |epoch: usize, enc: &ToyEncoder| -> Result<LossPoint> {
        let r = evaluate_loss(items, enc, ont, &cfg.loss, cfg.batch_size)?;
        Ok(LossPoint {
            epoch,
            l1: r.l1,
            l2: r.l2,
            total: r.total,
        })
    };
    for epoch in 0..cfg.epochs {
        curve.push(point(epoch, &enc)?);
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &format!("epoch{epoch}")));
        order.shuffle(&mut rng);
        for b in make_batches(&order, cfg.batch_size) {
            let chunk = gather(items, &b);
            let (_, grad) = loss_and_gradient(Batch::new(&chunk)?, &enc, ont, &cfg.loss)?;
            velocity.scale(cfg.momentum);
            velocity.add_scaled(&grad, 1.0);
            if !velocity.norm().is_finite() {
                return Err(Error::Diverged(format!(
                    "gradient became non-finite in epoch {epoch}"
                )));
            }
            enc.apply(&velocity, cfg.step);
        }
        log::info!("epoch {epoch}: loss {:.4}", curve[epoch].total);
    }
    curve.push(point(cfg.epochs, &enc)?);
    Ok(TrainOutcome {
        encoder: enc,
        curve,
    })
}

/// Cosine between every item's image (rows) and every item's positive
/// description (columns).
pub fn in_batch_similarity(items: &[BatchItem], p: &dyn EmbeddingProvider) -> Result<Array2<f64>> {
    let mut r = ProviderResolver {
        provider: p,
        vecs: vec![],
    };
    let mut imgs = vec![];
    let mut txts = vec![];
    for it in items {
        imgs.push(r.resolve(&VectorRequest::Image {
            key: it.record.id.clone(),
            image: it.record.image.clone(),
        })?);
        txts.push(r.resolve(&VectorRequest::Sentence {
            key: description_key(&it.record.id, "pos"),
            text: it.descriptions.positive.clone(),
        })?);
    }
    let mut s = Array2::zeros((items.len(), items.len()));
    for (i, &a) in imgs.iter().enumerate() {
        for (j, &b) in txts.iter().enumerate() {
            s[[i, j]] = cosine(r.vector(a), r.vector(b))?;
        }
    }
    Ok(s)
}

/// Gold text-node × image-node alignment from the record's image event:
/// the event node goes to the whole image, and an argument goes to each
/// object overlapping (IoU ≥ 0.5) a gold box of the same role.
pub fn gold_alignment(
    record: &CorpusRecord,
    tg: &TextGraph,
    ig: &ImageGraph,
) -> Option<Array2<f64>> {
    let gold = record.image_event.as_ref()?;
    let mut al = Array2::zeros((tg.node_count(), ig.node_count()));
    al[[0, 0]] = 1.0;
    for (i, arg) in tg.event.arguments.iter().enumerate() {
        for g in gold.arguments.iter().filter(|g| g.role == arg.role) {
            for (j, o) in ig.objects.iter().enumerate() {
                if o.bbox.iou(&g.bbox) >= 0.5 {
                    al[[i + 1, j + 1]] = 1.0;
                }
            }
        }
    }
    Some(al)
}

/// Ingredients for turning corpus records into training items.
pub struct ItemSpec<'a> {
    pub ontology: &'a Ontology,
    pub event_cm: &'a ConfusionMatrix,
    pub arg_cm: &'a ConfusionMatrix,
    pub prompts: &'a PromptContext<'a>,
    /// Provider used for primary-event selection.
    pub provider: &'a dyn EmbeddingProvider,
    pub seed: u64,
}

/// Primary event, negatives, descriptions and graphs for every record.
pub fn prepare_items(records: &[CorpusRecord], spec: &ItemSpec<'_>) -> Result<Vec<BatchItem>> {
    let ont = spec.ontology;
    records
        .iter()
        .map(|record| {
            let primary = select_primary(record, ont, spec.provider)?;
            let pair = negatives_for_record(
                record,
                primary,
                spec.event_cm,
                spec.arg_cm,
                ont,
                spec.seed,
                1,
            )?
            .pop()
            .expect("one pair requested");
            let descriptions = describe(record, &pair, spec.prompts)?;
            let graph = |ev: &crate::types::EventStructure| TextGraph {
                record_id: record.id.clone(),
                caption: record.caption.clone(),
                event: ev.clone(),
            };
            let text_graph = graph(&pair.positive);
            let image_graph = ImageGraph {
                record_id: record.id.clone(),
                image: record.image.clone(),
                objects: record.objects.clone(),
            };
            let mut negative_graphs = vec![graph(&pair.negative_event)];
            negative_graphs.extend(pair.negative_args.as_ref().map(graph));
            let alignment = gold_alignment(record, &text_graph, &image_graph);
            Ok(BatchItem {
                record: record.clone(),
                descriptions,
                text_graph,
                image_graph,
                negative_graphs,
                alignment,
            })
        })
        .collect()
}

/// Confusion matrix with 1 everywhere off the diagonal.
pub fn uniform_confusion(labels: Vec<String>) -> ConfusionMatrix {
    let n = labels.len();
    let counts = (0..n)
        .map(|i| (0..n).map(|j| u64::from(i != j)).collect())
        .collect();
    ConfusionMatrix::new(labels, counts).expect("square by construction")
}

/// Role labels of every event type, deduplicated, in ontology order.
pub fn all_roles(ont: &Ontology) -> Vec<String> {
    let mut seen: HashMap<&str, ()> = HashMap::new();
    ont.event_types
        .iter()
        .flat_map(|e| e.roles.iter())
        .filter(|r| seen.insert(r.as_str(), ()).is_none())
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ToyConfig;
    use crate::prompts::PromptKind;
    use crate::synth::toy_corpus;
    use approx::assert_abs_diff_eq;

    fn items(n: usize, kind: PromptKind) -> (Vec<BatchItem>, Ontology, ToyEncoder) {
        let ont = Ontology::toy();
        let enc = ToyEncoder::new(ToyConfig::default());
        let records = toy_corpus(&ont, n, 5);
        let ecm = uniform_confusion(ont.event_type_ids());
        let acm = uniform_confusion(all_roles(&ont));
        let reg = |k: usize| enc.is_registered(k);
        let ctx = PromptContext {
            kind,
            ontology: &ont,
            is_registered: &reg,
            completion: None,
        };
        let spec = ItemSpec {
            ontology: &ont,
            event_cm: &ecm,
            arg_cm: &acm,
            prompts: &ctx,
            provider: &enc,
            seed: 1,
        };
        let items = prepare_items(&records, &spec).unwrap();
        (items, ont.clone(), enc.clone())
    }

    #[test]
    fn pair_term_values() {
        assert_abs_diff_eq!(pair_term(1.0, true).0, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(pair_term(0.0, true).0, 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(pair_term(-1.0, true).0, -(EPSILON.ln()), epsilon = 1e-9);
        assert_abs_diff_eq!(pair_term(1.0, false).0, -(EPSILON.ln()), epsilon = 1e-6);
        assert_abs_diff_eq!(-(EPSILON.ln()), 16.118, epsilon = 1e-3);
    }

    #[test]
    fn batch_needs_two_items() {
        let (items, _, _) = items(2, PromptKind::SingleTemplate);
        assert!(matches!(
            Batch::new(&items[..1]),
            Err(Error::BatchTooSmall(1))
        ));
        assert_eq!(Batch::new(&items).unwrap().len(), 2);
    }

    #[test]
    fn report_identity() {
        let (items, ont, enc) = items(3, PromptKind::ComposedTemplate);
        let cfg = LossConfig {
            lambda1: 0.7,
            lambda2: 1.9,
            ..Default::default()
        };
        let r = loss(Batch::new(&items).unwrap(), &enc, &ont, &cfg).unwrap();
        assert_eq!(r.total, 0.7 * r.l1 + 1.9 * r.l2);
        assert!(r.l1 > 0.0 && r.l2 > 0.0);
    }

    #[test]
    fn tape_and_provider_agree() {
        let (items, ont, enc) = items(3, PromptKind::Continuous);
        let cfg = LossConfig::default();
        let b = Batch::new(&items).unwrap();
        let direct = loss(b, &enc, &ont, &cfg).unwrap();
        let (taped, _) = loss_and_gradient(b, &enc, &ont, &cfg).unwrap();
        assert_abs_diff_eq!(direct.l1, taped.l1, epsilon = 1e-12);
        assert_abs_diff_eq!(direct.l2, taped.l2, epsilon = 1e-12);
    }

    fn perturbed(enc: &ToyEncoder, k: usize, h: f64) -> ToyEncoder {
        let mut e = enc.clone();
        e.projection_mut()[k] += h;
        e
    }

    #[test]
    fn l1_gradient_matches_central_differences() {
        let (items, ont, enc) = items(3, PromptKind::SingleTemplate);
        let cfg = LossConfig::default();
        let b = Batch::new(&items).unwrap();
        let (_, g1, _) = loss_gradients(b, &enc, &ont, &cfg).unwrap();
        let h = 1e-5;
        for k in (0..enc.projection().len()).step_by(97) {
            let up = contrastive_loss(b, &perturbed(&enc, k, h)).unwrap();
            let dn = contrastive_loss(b, &perturbed(&enc, k, -h)).unwrap();
            let fd = (up - dn) / (2.0 * h);
            let an = g1.projection[k];
            let err = (fd - an).abs();
            assert!(
                err < 1e-7 || err / fd.abs().max(an.abs()) < 0.01,
                "k {k}: fd {fd} an {an}"
            );
        }
    }

    #[test]
    fn l2_gradient_matches_central_differences() {
        let (items, ont, enc) = items(3, PromptKind::SingleTemplate);
        let cfg = LossConfig {
            sinkhorn: SinkhornConfig {
                tol: 1e-13,
                max_iter: 200_000,
                ..SinkhornConfig::default()
            },
            ..Default::default()
        };
        let b = Batch::new(&items).unwrap();
        let (_, _, g2) = loss_gradients(b, &enc, &ont, &cfg).unwrap();
        let h = 1e-5;
        for k in (0..enc.projection().len()).step_by(131) {
            let up = graph_loss(b, &perturbed(&enc, k, h), &ont, &cfg).unwrap();
            let dn = graph_loss(b, &perturbed(&enc, k, -h), &ont, &cfg).unwrap();
            let fd = (up - dn) / (2.0 * h);
            let an = g2.projection[k];
            let err = (fd - an).abs();
            assert!(
                err < 1e-7 || err / fd.abs().max(an.abs()) < 0.05,
                "k {k}: fd {fd} an {an}"
            );
        }
    }

    #[test]
    fn moving_positive_toward_image_lowers_l1() {
        // directional derivative along -grad of the positive's own term
        let (items, ont, enc) = items(2, PromptKind::SingleTemplate);
        let b = Batch::new(&items).unwrap();
        let cfg = LossConfig::default();
        let before = contrastive_loss(b, &enc).unwrap();
        let (_, g) = loss_and_gradient(
            b,
            &enc,
            &ont,
            &LossConfig {
                lambda2: 0.0,
                ..cfg
            },
        )
        .unwrap();
        let mut e = enc.clone();
        e.apply(&g, 1e-3);
        assert!(contrastive_loss(b, &e).unwrap() < before);
    }

    #[test]
    fn swapping_positive_and_event_negative_matches_closed_form() {
        let (mut items, _, enc) = items(2, PromptKind::SingleTemplate);
        let before = contrastive_loss(Batch::new(&items).unwrap(), &enc).unwrap();
        let s = |t: &str, it: &BatchItem| {
            let tv = enc
                .sentence(crate::encoder::TextInput::new("k", t))
                .unwrap();
            let iv = enc.image("k", &it.record.image).unwrap();
            (cosine(&tv, &iv).unwrap() + 1.0) / 2.0
        };
        let (pos, neg) = (
            &items[0].descriptions.positive,
            &items[0].descriptions.negative_event,
        );
        let (sp, sn) = (s(pos, &items[0]), s(neg, &items[0]));
        // item 1 sees item 0's positive as an in-batch negative
        let (op, on) = (s(pos, &items[1]), s(neg, &items[1]));
        let expected =
            (sp / sn).ln() + ((1.0 - sn) / (1.0 - sp)).ln() + ((1.0 - op) / (1.0 - on)).ln();
        let d = &mut items[0].descriptions;
        std::mem::swap(&mut d.positive, &mut d.negative_event);
        let after = contrastive_loss(Batch::new(&items).unwrap(), &enc).unwrap();
        assert_abs_diff_eq!(after - before, expected, epsilon = 1e-9);
    }

    #[test]
    fn zero_lambda2_keeps_graph_loss_out_of_gradient() {
        let (items, ont, enc) = items(2, PromptKind::SingleTemplate);
        let b = Batch::new(&items).unwrap();
        let cfg = LossConfig {
            lambda2: 0.0,
            ..Default::default()
        };
        let (r, g) = loss_and_gradient(b, &enc, &ont, &cfg).unwrap();
        let (_, g1, _) = loss_gradients(b, &enc, &ont, &cfg).unwrap();
        assert_eq!(g, g1);
        assert!(r.l2 > 0.0);
        assert_eq!(r.total, r.l1);
    }

    #[test]
    fn supervised_plan_uses_gold_alignment() {
        let (items, ont, enc) = items(2, PromptKind::SingleTemplate);
        let al = items[0].alignment.clone().unwrap();
        assert_eq!(al.sum() as usize, items[0].text_graph.node_count());
        let cfg = LossConfig {
            supervised: true,
            ..Default::default()
        };
        let b = Batch::new(&items).unwrap();
        let sup = graph_loss(b, &enc, &ont, &cfg).unwrap();
        let ent = graph_loss(b, &enc, &ont, &LossConfig::default()).unwrap();
        assert!(sup.is_finite() && ent.is_finite());
        assert_ne!(sup, ent);
    }

    #[test]
    fn batching_merges_trailing_singleton() {
        assert_eq!(
            make_batches(&[0, 1, 2, 3, 4], 2),
            vec![vec![0, 1], vec![2, 3, 4]]
        );
        assert_eq!(make_batches(&[0, 1, 2, 3], 4), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn short_run_is_deterministic_and_decreasing() {
        let (items, ont, enc) = items(4, PromptKind::SingleTemplate);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let a = train(&items, enc.clone(), &ont, &cfg).unwrap();
        let b = train(&items, enc, &ont, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.len(), 4);
        assert!(a.curve[3].total < a.curve[0].total);
        assert!(curve_to_csv(&a.curve).starts_with("epoch,l1,l2,total\n0,"));
    }
}

//! Cross-modal cost matrices and entropic transport between a text event
//! graph and an image event graph.
//!
//! Rows are text nodes (event node first, then one per argument), columns are
//! image nodes (whole image first, then one per detected object). Each cell
//! is a sum of cosine distances between embeddings of the two nodes:
//!
//! | row \ col | image                           | object                              |
//! |-----------|---------------------------------|-------------------------------------|
//! | event     | c(t_v,i) + c(φ_v,i)             | c(t_v,i_o) + c(φ_v,i_o)             |
//! | argument  | c(t_a,i) + c(t_e,i) + c(φ_e,i)  | c(t_a,i_o) + c(t_e,i_o) + c(φ_e,φ_o) |
//!
//! `t_v` is the trigger span, `φ_v` the event type label, `t_a` the argument
//! description ("Entity of Transport"), `t_e` the mention span, `φ_e`/`φ_o`
//! the entity/object type labels, `i` the image and `i_o` the region.

mod sinkhorn;

pub use sinkhorn::{
    envelope_gradient, sinkhorn, sinkhorn_uniform, transport_cost_gradient, uniform_marginals,
    SinkhornConfig, TransportPlan,
};

use ndarray::Array2;
use serde::Serialize;

use crate::encoder::{cosine_distance, EmbeddingProvider, TextInput};
use crate::error::{Error, Result};
use crate::ontology::Ontology;
use crate::types::{BBox, EntityMention, ImageGraph, ImageInfo, ObjectDetection, Span, TextGraph};

/// One embedding needed by a graph node.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorRequest {
    Sentence {
        key: String,
        text: String,
    },
    Span {
        key: String,
        text: String,
        span: Span,
    },
    Image {
        key: String,
        image: ImageInfo,
    },
    Region {
        key: String,
        image: ImageInfo,
        index: usize,
        bbox: BBox,
    },
    Label {
        id: String,
        phrase: String,
    },
}

impl VectorRequest {
    pub fn embed(&self, p: &dyn EmbeddingProvider) -> Result<Vec<f64>> {
        match self {
            VectorRequest::Sentence { key, text } => p.sentence(TextInput::new(key, text)),
            VectorRequest::Span { key, text, span } => {
                p.text_span(TextInput::new(key, text), *span)
            }
            VectorRequest::Image { key, image } => p.image(key, image),
            VectorRequest::Region {
                key,
                image,
                index,
                bbox,
            } => p.image_region(key, image, *index, bbox),
            VectorRequest::Label { id, phrase } => p.type_label(id, phrase),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Event,
    Argument,
    Image,
    Object,
}

/// A graph node and the embeddings its cost terms use, in the order of the
/// table in the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeVectors {
    pub kind: NodeKind,
    pub label: String,
    pub requests: Vec<VectorRequest>,
}

/// Index pairs `(row vector, column vector)` summed into one cost cell.
pub fn cost_terms(row: NodeKind, col: NodeKind) -> &'static [(usize, usize)] {
    match (row, col) {
        (NodeKind::Event, NodeKind::Image) | (NodeKind::Event, NodeKind::Object) => {
            &[(0, 0), (1, 0)]
        }
        (NodeKind::Argument, NodeKind::Image) => &[(0, 0), (1, 0), (2, 0)],
        (NodeKind::Argument, NodeKind::Object) => &[(0, 0), (1, 0), (2, 1)],
        _ => &[],
    }
}

/// Argument-description label id, e.g. `entity@Transport`.
pub fn argument_label_id(role: &str, event_type: &str) -> String {
    format!("{role}@{event_type}")
}

pub fn text_nodes(g: &TextGraph, ont: &Ontology) -> Vec<NodeVectors> {
    let ev = &g.event;
    let mut nodes = vec![NodeVectors {
        kind: NodeKind::Event,
        label: format!("{}:{}", ev.event_type, ev.trigger.text),
        requests: vec![
            VectorRequest::Span {
                key: g.record_id.clone(),
                text: g.caption.clone(),
                span: ev.trigger.span,
            },
            VectorRequest::Label {
                id: ev.event_type.clone(),
                phrase: ont.event_label(&ev.event_type).to_string(),
            },
        ],
    }];
    for arg in &ev.arguments {
        nodes.push(NodeVectors {
            kind: NodeKind::Argument,
            label: format!("{}:{}", arg.role, arg.entity.text),
            requests: vec![
                VectorRequest::Label {
                    id: argument_label_id(&arg.role, &ev.event_type),
                    phrase: ont.argument_description(&arg.role, &ev.event_type),
                },
                mention_request(&g.record_id, &g.caption, &arg.entity),
                entity_type_request(&arg.entity.entity_type, ont),
            ],
        });
    }
    nodes
}

pub fn image_nodes(g: &ImageGraph, ont: &Ontology) -> Vec<NodeVectors> {
    let mut nodes = vec![NodeVectors {
        kind: NodeKind::Image,
        label: "image".into(),
        requests: vec![VectorRequest::Image {
            key: g.record_id.clone(),
            image: g.image.clone(),
        }],
    }];
    for (index, obj) in g.objects.iter().enumerate() {
        nodes.push(NodeVectors {
            kind: NodeKind::Object,
            label: format!("{}#{index}", obj.object_type),
            requests: vec![
                region_request(&g.record_id, &g.image, index, obj),
                entity_type_request(&obj.object_type, ont),
            ],
        });
    }
    nodes
}

fn mention_request(key: &str, caption: &str, e: &EntityMention) -> VectorRequest {
    VectorRequest::Span {
        key: key.to_string(),
        text: caption.to_string(),
        span: e.span,
    }
}

fn region_request(
    key: &str,
    image: &ImageInfo,
    index: usize,
    o: &ObjectDetection,
) -> VectorRequest {
    VectorRequest::Region {
        key: key.to_string(),
        image: image.clone(),
        index,
        bbox: o.bbox,
    }
}

fn entity_type_request(type_id: &str, ont: &Ontology) -> VectorRequest {
    VectorRequest::Label {
        id: type_id.to_string(),
        phrase: ont.entity_label(type_id).to_string(),
    }
}

/// Cost matrix with the node labels of its rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMatrix {
    pub cost: Array2<f64>,
    pub row_nodes: Vec<String>,
    pub col_nodes: Vec<String>,
}

/// Assemble costs from already-embedded nodes; `rows[i][k]` is the k-th
/// vector of row node i.
pub fn cost_from_vectors(
    row_kinds: &[NodeKind],
    rows: &[Vec<Vec<f64>>],
    col_kinds: &[NodeKind],
    cols: &[Vec<Vec<f64>>],
) -> Result<Array2<f64>> {
    let mut c = Array2::zeros((rows.len(), cols.len()));
    for (i, rv) in rows.iter().enumerate() {
        for (j, cv) in cols.iter().enumerate() {
            let mut total = 0.0;
            for &(u, v) in cost_terms(row_kinds[i], col_kinds[j]) {
                total += cosine_distance(&rv[u], &cv[v])?;
            }
            c[[i, j]] = total;
        }
    }
    Ok(c)
}

fn embed_nodes(nodes: &[NodeVectors], p: &dyn EmbeddingProvider) -> Result<Vec<Vec<Vec<f64>>>> {
    nodes
        .iter()
        .map(|n| n.requests.iter().map(|r| r.embed(p)).collect())
        .collect()
}

pub fn build_cost(
    text: &TextGraph,
    image: &ImageGraph,
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
) -> Result<CostMatrix> {
    let tn = text_nodes(text, ont);
    let inodes = image_nodes(image, ont);
    let rows = embed_nodes(&tn, p)?;
    let cols = embed_nodes(&inodes, p)?;
    let row_kinds: Vec<NodeKind> = tn.iter().map(|n| n.kind).collect();
    let col_kinds: Vec<NodeKind> = inodes.iter().map(|n| n.kind).collect();
    Ok(CostMatrix {
        cost: cost_from_vectors(&row_kinds, &rows, &col_kinds, &cols)?,
        row_nodes: tn.into_iter().map(|n| n.label).collect(),
        col_nodes: inodes.into_iter().map(|n| n.label).collect(),
    })
}

/// Mention-to-object distance `c(t_e, i_o) + c(φ_e, φ_o)`.
pub fn entity_object_distance(
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
    record_id: &str,
    caption: &str,
    mention: &EntityMention,
    image: &ImageInfo,
    index: usize,
    object: &ObjectDetection,
) -> Result<f64> {
    let te = mention_request(record_id, caption, mention).embed(p)?;
    let io = region_request(record_id, image, index, object).embed(p)?;
    let fe = entity_type_request(&mention.entity_type, ont).embed(p)?;
    let fo = entity_type_request(&object.object_type, ont).embed(p)?;
    Ok(cosine_distance(&te, &io)? + cosine_distance(&fe, &fo)?)
}

/// Cost matrix, plan and distance for one text/image graph pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphAlignment {
    pub record_id: String,
    pub cost: CostMatrix,
    pub plan: TransportPlan,
    pub distance: f64,
}

impl GraphAlignment {
    /// Plan as CSV with node labels, for heat-map rendering.
    pub fn plan_csv(&self) -> String {
        let mut out = String::from("text\\image");
        for c in &self.cost.col_nodes {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (i, r) in self.cost.row_nodes.iter().enumerate() {
            out.push_str(&csv_field(r));
            for v in self.plan.plan.row(i) {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Transport the text graph onto the image graph with uniform marginals and
/// return `sum T * C` at the solved plan.
pub fn graph_distance(
    text: &TextGraph,
    image: &ImageGraph,
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
    cfg: &SinkhornConfig,
) -> Result<GraphAlignment> {
    if text.record_id != image.record_id {
        log::debug!(
            "aligning text graph `{}` against image graph `{}`",
            text.record_id,
            image.record_id
        );
    }
    let cost = build_cost(text, image, p, ont)?;
    let plan = sinkhorn_uniform(&cost.cost, cfg)?;
    if !plan.converged {
        log::info!(
            "sinkhorn stopped after {} iterations with marginal violation {:.2e}",
            plan.iterations,
            plan.marginal_violation
        );
    }
    let distance = plan.cost(&cost.cost);
    Ok(GraphAlignment {
        record_id: text.record_id.clone(),
        cost,
        plan,
        distance,
    })
}

/// Align every record pair on a scoped thread pool of `workers` threads.
pub fn align_all(
    pairs: &[(TextGraph, ImageGraph)],
    p: &dyn EmbeddingProvider,
    ont: &Ontology,
    cfg: &SinkhornConfig,
    workers: usize,
) -> Vec<Result<GraphAlignment>> {
    let workers = workers.max(1).min(pairs.len().max(1));
    let chunk = pairs.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|(t, i)| graph_distance(t, i, p, ont, cfg))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("alignment worker panicked"))
            .collect()
    })
}

/// Exact optimal transport cost with uniform marginals on a square matrix,
/// by minimizing over permutations (Birkhoff: an optimal plan is a scaled
/// permutation). Intended for small `n`.
pub fn exact_square_cost(cost: &Array2<f64>) -> Result<f64> {
    let n = cost.nrows();
    if n != cost.ncols() || n == 0 {
        return Err(Error::Precondition(
            "exact cost needs a non-empty square matrix".into(),
        ));
    }
    if n > 9 {
        return Err(Error::Precondition(format!(
            "{n}! permutations is too many"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let s: f64 = p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
        best = best.min(s);
    });
    Ok(best / n as f64)
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmbeddingTable;
    use crate::encoder::{keys, TableProvider, ToyConfig, ToyEncoder};
    use crate::types::{Argument, EventStructure, Trigger};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CAPTION: &str = "Protesters carry an injured man in a stretcher.";

    fn mention(s: usize, e: usize, ty: &str) -> EntityMention {
        EntityMention::from_caption(CAPTION, Span::new(s, e), ty).unwrap()
    }

    fn text_graph(n_args: usize) -> TextGraph {
        let args = [
            ("agent", mention(0, 10, "PER")),
            ("entity", mention(17, 31, "PER")),
            ("instrument", mention(35, 46, "VEH")),
        ];
        TextGraph {
            record_id: "r1".into(),
            caption: CAPTION.into(),
            event: EventStructure {
                event_type: "Transport".into(),
                trigger: Trigger {
                    span: Span::new(11, 16),
                    text: "carry".into(),
                },
                arguments: args[..n_args]
                    .iter()
                    .map(|(r, e)| Argument {
                        role: r.to_string(),
                        entity: e.clone(),
                    })
                    .collect(),
                dependency_depth: 0,
            },
        }
    }

    fn image_graph(n_obj: usize) -> ImageGraph {
        let objs = [
            ObjectDetection {
                bbox: BBox::new(0.0, 0.0, 40.0, 60.0),
                object_type: "PER".into(),
                confidence: 0.9,
            },
            ObjectDetection {
                bbox: BBox::new(30.0, 10.0, 80.0, 60.0),
                object_type: "PER".into(),
                confidence: 0.8,
            },
            ObjectDetection {
                bbox: BBox::new(20.0, 40.0, 90.0, 64.0),
                object_type: "VEH".into(),
                confidence: 0.7,
            },
        ];
        ImageGraph {
            record_id: "r1".into(),
            image: ImageInfo {
                uri: "img/r1.jpg".into(),
                width: 96,
                height: 64,
            },
            objects: objs[..n_obj].to_vec(),
        }
    }

    fn unit(dim: usize, k: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        v
    }

    #[test]
    fn single_node_graphs_give_one_cell() {
        let mut t = EmbeddingTable::new(4);
        t.push(keys::span("r1", Span::new(11, 16)), &[1.0, 0.0, 0.0, 0.0])
            .unwrap();
        t.push(keys::label("Transport"), &[1.0, 1.0, 0.0, 0.0])
            .unwrap();
        t.push(keys::image("r1"), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = TableProvider::new(t);
        let ont = Ontology::running_example();
        let c = build_cost(&text_graph(0), &image_graph(0), &p, &ont).unwrap();
        assert_eq!(c.cost.dim(), (1, 1));
        let expected = 0.0 + (1.0 - 1.0 / 2f64.sqrt());
        assert_abs_diff_eq!(c.cost[[0, 0]], expected, epsilon = 1e-7);
        let a = graph_distance(
            &text_graph(0),
            &image_graph(0),
            &p,
            &ont,
            &SinkhornConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(a.distance, expected, epsilon = 1e-7);
    }

    #[test]
    fn cost_matrix_entries_match_scalar_recomputation() {
        let ont = Ontology::running_example();
        let enc = ToyEncoder::new(ToyConfig::default());
        let tg = text_graph(3);
        let ig = image_graph(3);
        let c = build_cost(&tg, &ig, &enc, &ont).unwrap();
        assert_eq!(c.cost.dim(), (4, 4));
        let d = |a: &[f64], b: &[f64]| cosine_distance(a, b).unwrap();
        let info = &ig.image;
        let img = enc.image("r1", info).unwrap();
        let trig = enc
            .text_span(TextInput::new("r1", CAPTION), Span::new(11, 16))
            .unwrap();
        let ty = enc.type_label("Transport", "Transport").unwrap();
        let region = |k: usize| {
            enc.image_region("r1", info, k, &ig.objects[k].bbox)
                .unwrap()
        };
        let lab = |id: &str| enc.type_label(id, ont.entity_label(id)).unwrap();
        assert_abs_diff_eq!(
            c.cost[[0, 0]],
            d(&trig, &img) + d(&ty, &img),
            epsilon = 1e-12
        );
        for k in 0..3 {
            assert_abs_diff_eq!(
                c.cost[[0, k + 1]],
                d(&trig, &region(k)) + d(&ty, &region(k)),
                epsilon = 1e-12
            );
        }
        for (r, arg) in tg.event.arguments.iter().enumerate() {
            let ta = enc
                .type_label("", &ont.argument_description(&arg.role, "Transport"))
                .unwrap();
            let te = enc
                .text_span(TextInput::new("r1", CAPTION), arg.entity.span)
                .unwrap();
            let fe = lab(&arg.entity.entity_type);
            assert_abs_diff_eq!(
                c.cost[[r + 1, 0]],
                d(&ta, &img) + d(&te, &img) + d(&fe, &img),
                epsilon = 1e-12
            );
            for k in 0..3 {
                let fo = lab(&ig.objects[k].object_type);
                assert_abs_diff_eq!(
                    c.cost[[r + 1, k + 1]],
                    d(&ta, &region(k)) + d(&te, &region(k)) + d(&fe, &fo),
                    epsilon = 1e-12
                );
            }
        }
        assert!(c.cost.iter().all(|v| (0.0..=6.0).contains(v)));
        assert_eq!(c.row_nodes[1], "agent:Protesters");
        assert_eq!(c.col_nodes[3], "VEH#2");
    }

    #[test]
    fn entity_object_distance_trivial_cases() {
        let ont = Ontology::running_example();
        let m = mention(17, 31, "PER");
        let obj = image_graph(1).objects[0].clone();
        let info = image_graph(0).image;

        let mut t = EmbeddingTable::new(4);
        t.push(keys::span("r1", m.span), &[0.3, 1.0, 0.0, 0.0])
            .unwrap();
        t.push(keys::region("r1", 0), &[0.3, 1.0, 0.0, 0.0])
            .unwrap();
        t.push(keys::label("PER"), &[0.0, 0.0, 1.0, 0.0]).unwrap();
        let p = TableProvider::new(t);
        let d = entity_object_distance(&p, &ont, "r1", CAPTION, &m, &info, 0, &obj).unwrap();
        assert!(d.abs() < 1e-7);

        let mut t = EmbeddingTable::new(4);
        t.push(keys::span("r1", m.span), &unit(4, 0)).unwrap();
        t.push(keys::region("r1", 0), &unit(4, 1)).unwrap();
        t.push(keys::label("PER"), &unit(4, 2)).unwrap();
        t.push(keys::label("VEH"), &unit(4, 3)).unwrap();
        let p = TableProvider::new(t);
        let veh = ObjectDetection {
            object_type: "VEH".into(),
            ..obj
        };
        let d = entity_object_distance(&p, &ont, "r1", CAPTION, &m, &info, 0, &veh).unwrap();
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_embedding_propagates() {
        let p = TableProvider::new(EmbeddingTable::new(4));
        let err = build_cost(
            &text_graph(1),
            &image_graph(1),
            &p,
            &Ontology::running_example(),
        );
        assert!(matches!(err, Err(Error::MissingEmbedding(_))));
    }

    #[test]
    fn identical_twin_embeddings_give_zero_distance() {
        // every vector is the same direction, so every cosine distance is 0
        let mut t = EmbeddingTable::new(3);
        let v = [0.2f32, 0.5, 0.1];
        let tg = text_graph(2);
        let ig = image_graph(2);
        let ont = Ontology::running_example();
        for n in text_nodes(&tg, &ont).iter().chain(&image_nodes(&ig, &ont)) {
            for r in &n.requests {
                let key = match r {
                    VectorRequest::Sentence { key, .. } => keys::sentence(key),
                    VectorRequest::Span { key, span, .. } => keys::span(key, *span),
                    VectorRequest::Image { key, .. } => keys::image(key),
                    VectorRequest::Region { key, index, .. } => keys::region(key, *index),
                    VectorRequest::Label { id, .. } => keys::label(id),
                };
                if t.get(&key).is_none() {
                    t.push(key, &v).unwrap();
                }
            }
        }
        let a = graph_distance(
            &tg,
            &ig,
            &TableProvider::new(t),
            &ont,
            &SinkhornConfig::default(),
        )
        .unwrap();
        assert!(a.distance.abs() < 1e-6);
        assert!(a.plan_csv().starts_with("text\\image,image,PER#0,PER#1\n"));
    }

    #[test]
    fn three_by_three_small_gamma_approaches_permutation_optimum() {
        let c = ndarray::array![[0.9, 0.2, 1.4], [0.3, 1.1, 0.8], [1.6, 0.7, 0.1]];
        let cfg = SinkhornConfig {
            gamma: 0.01,
            max_iter: 200_000,
            ..Default::default()
        };
        let t = sinkhorn_uniform(&c, &cfg).unwrap();
        // brute force over the six permutations inline
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let best = perms
            .iter()
            .map(|p| (0..3).map(|i| c[[i, p[i]]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(t.cost(&c), best / 3.0, epsilon = 1e-2);
        assert_abs_diff_eq!(exact_square_cost(&c).unwrap(), best / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn align_all_matches_serial() {
        let ont = Ontology::running_example();
        let enc = ToyEncoder::new(ToyConfig::default());
        let pairs: Vec<_> = (0..4)
            .map(|k| (text_graph(k % 4), image_graph((k + 1) % 4)))
            .collect();
        let par = align_all(&pairs, &enc, &ont, &SinkhornConfig::default(), 3);
        for ((t, i), r) in pairs.iter().zip(par) {
            let s = graph_distance(t, i, &enc, &ont, &SinkhornConfig::default()).unwrap();
            assert_eq!(s.distance, r.unwrap().distance);
        }
    }

    fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, m), |_| rng.gen_range(0.0..2.0))
    }

    #[test]
    fn entropic_cost_decreases_with_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = random_cost(&mut rng, 4, 4);
            let mut prev = f64::INFINITY;
            for gamma in [1.0, 0.3, 0.1, 0.03] {
                let cfg = SinkhornConfig {
                    gamma,
                    tol: 1e-10,
                    max_iter: 100_000,
                    log_domain: false,
                    anneal: false,
                };
                let v = sinkhorn_uniform(&c, &cfg).unwrap().cost(&c);
                assert!(v <= prev + 1e-9, "{v} > {prev} at gamma {gamma}");
                prev = v;
            }
            assert!(prev >= exact_square_cost(&c).unwrap() - 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn permuting_rows_permutes_plan(seed in 0u64..10_000, shift in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_cost(&mut rng, 4, 3);
            let a = [0.1, 0.2, 0.3, 0.4];
            let b = [0.5, 0.25, 0.25];
            let cfg = SinkhornConfig { tol: 1e-12, max_iter: 10_000, ..Default::default() };
            let t = sinkhorn(&c, &a, &b, &cfg).unwrap();
            let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
            let pc = Array2::from_shape_fn((4, 3), |(i, j)| c[[perm[i], j]]);
            let pa: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
            let pt = sinkhorn(&pc, &pa, &b, &cfg).unwrap();
            for i in 0..4 {
                for j in 0..3 {
                    prop_assert!((pt.plan[[i, j]] - t.plan[[perm[i], j]]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn plan_is_nonnegative_with_matching_marginals(seed in 0u64..10_000, n in 1usize..6, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_cost(&mut rng, n, m);
            let t = sinkhorn_uniform(&c, &SinkhornConfig { max_iter: 1_000_000, ..Default::default() }).unwrap();
            prop_assert!(t.converged);
            prop_assert!(t.plan.iter().all(|v| *v >= 0.0));
            for s in &t.row_marginal { prop_assert!((s - 1.0 / n as f64).abs() < 1e-6); }
            for s in &t.col_marginal { prop_assert!((s - 1.0 / m as f64).abs() < 1e-6); }
        }
    }
}

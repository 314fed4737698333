use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use evalign::corpus::{
    load_confusion, load_corpus, load_embeddings, save_confusion, save_corpus, save_embeddings,
    CorpusRecord,
};
use evalign::encoder::{EmbeddingProvider, TableProvider, ToyConfig, ToyEncoder};
use evalign::evaluate::{
    evaluate_m2e2, rank_texts, retrieval_pair, retrieval_scores, score_gsr, score_retrieval_both,
    Candidate, ScoreWeights, Situation,
};
use evalign::negatives::{negatives_for_record, NegativePair};
use evalign::ontology::Ontology;
use evalign::otalign::{align_all, SinkhornConfig};
use evalign::primary::select_primary;
use evalign::prompts::{
    describe, describe_all_via_completion, CompletionClient, DescriptionSet, Exemplar,
    HttpCompletion, MockCompletion, PromptContext, PromptKind, RetryPolicy,
};
use evalign::synth::toy_corpus;
use evalign::training::{
    all_roles, curve_to_csv, prepare_items, train, uniform_confusion, ItemSpec, LossConfig,
    TrainConfig,
};
use evalign::types::{ImageGraph, TextGraph};
use evalign::{Error, Result};

#[derive(Parser)]
#[command(
    name = "evalign",
    version,
    about = "Event-structure negatives, prompts, graph alignment, training and evaluation"
)]
struct Cli {
    /// Ontology TOML, or `running` / `toy` for the bundled ones.
    #[arg(long, global = true, default_value = "running")]
    ontology: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ProviderArgs {
    /// Precomputed embedding table.
    #[arg(long, conflicts_with = "checkpoint")]
    embeddings: Option<PathBuf>,
    /// Toy encoder checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Seed of a fresh toy encoder when neither file is given.
    #[arg(long, default_value_t = 7)]
    encoder_seed: u64,
}

#[derive(Args, Clone)]
struct CompletionArgs {
    /// Key → completion map replayed instead of a live service.
    #[arg(long)]
    completions: Option<PathBuf>,
    /// Text-completion endpoint URL.
    #[arg(long, conflicts_with = "completions")]
    endpoint: Option<String>,
    /// JSON list of exemplars shown before each event.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with planted text/image correspondences.
    Synth {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record id → index of the event the image depicts.
    ExtractPrimary {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Negative event-type and argument structures per record.
    GenNegatives {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        event_cm: PathBuf,
        #[arg(long)]
        arg_cm: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Primary-event map from `extract-primary`; computed when absent.
        #[arg(long)]
        primary: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Positive and negative descriptions of each negative pair.
    GenPrompts {
        #[arg(long)]
        corpus: PathBuf,
        /// Output of `gen-negatives`.
        #[arg(long)]
        negatives: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: PromptKind,
        #[command(flatten)]
        completion: CompletionArgs,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimal-transport alignment of each record's text and image graphs.
    Align {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one plan CSV per record.
        #[arg(long)]
        heatmap_dir: Option<PathBuf>,
    },
    /// Train the toy encoder and write a checkpoint plus loss curve.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_kind, default_value = "single")]
        prompt_kind: PromptKind,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda1: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda2: f64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value_t = 0.0)]
        momentum: f64,
        /// Replace the solved plan with the gold alignment.
        #[arg(long)]
        supervised: bool,
        /// Include the negative structures' graphs in the graph loss.
        #[arg(long)]
        graph_negatives: bool,
        #[arg(long)]
        event_cm: Option<PathBuf>,
        #[arg(long)]
        arg_cm: Option<PathBuf>,
        #[command(flatten)]
        completion: CompletionArgs,
        #[arg(long, default_value_t = 7)]
        encoder_seed: u64,
        #[arg(long)]
        checkpoint_out: PathBuf,
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Zero-shot event typing and argument extraction against gold image events.
    EvalM2e2 {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Null-role threshold on cosine similarity.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[arg(long)]
        emit_confusion: Option<PathBuf>,
    },
    /// Verb, value and grounding accuracies of situation predictions.
    EvalGsr {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Image↔caption Recall@{1,5,10} over a corpus.
    EvalRetrieval {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        weight_image_text: f64,
        #[arg(long, default_value_t = 1.0)]
        weight_graph: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank candidate texts for one record's image.
    Rank {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        record: String,
        /// Corpus JSONL (caption plus first event) or one text per line.
        #[arg(long)]
        candidates: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<PromptKind, String> {
    s.parse::<PromptKind>().map_err(|e| e.to_string())
}

#[derive(Serialize, Deserialize)]
struct NegativeLine {
    record_id: String,
    event_index: usize,
    pairs: Vec<NegativePair>,
}

fn load_ontology(spec: &str) -> Result<Ontology> {
    match spec {
        "running" => Ok(Ontology::running_example()),
        "toy" => Ok(Ontology::toy()),
        path => Ontology::load(path),
    }
}

fn provider(args: &ProviderArgs) -> Result<Box<dyn EmbeddingProvider>> {
    if let Some(p) = &args.embeddings {
        return Ok(Box::new(TableProvider::new(load_embeddings(p)?)));
    }
    if let Some(p) = &args.checkpoint {
        return Ok(Box::new(ToyEncoder::from_checkpoint(&load_embeddings(p)?)?));
    }
    Ok(Box::new(ToyEncoder::new(ToyConfig {
        seed: args.encoder_seed,
        ..ToyConfig::default()
    })))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))
}

fn emit<T: Serialize>(v: &T, out: Option<&Path>) -> Result<()> {
    let text = to_json(v)?;
    match out {
        Some(p) => write_text(p, &text),
        None => print_stdout(&format!("{text}\n")),
    }
}

fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                line: i + 1,
                field: "record".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for it in items {
        text.push_str(&serde_json::to_string(it).map_err(|e| Error::Format(e.to_string()))?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn primaries(
    records: &[CorpusRecord],
    ont: &Ontology,
    p: &dyn EmbeddingProvider,
) -> Result<BTreeMap<String, usize>> {
    records
        .iter()
        .map(|r| Ok((r.id.clone(), select_primary(r, ont, p)?)))
        .collect()
}

fn completion_client(
    args: &CompletionArgs,
) -> Result<Option<(Box<dyn CompletionClient>, Vec<Exemplar>)>> {
    let client: Box<dyn CompletionClient> = match (&args.completions, &args.endpoint) {
        (Some(path), _) => Box::new(MockCompletion::load(path)?),
        (None, Some(url)) => {
            let mut c = HttpCompletion::new(
                url,
                Duration::from_secs(args.timeout_secs),
                RetryPolicy::default(),
            );
            if let Ok(token) = std::env::var("EVALIGN_COMPLETION_TOKEN") {
                c = c.with_bearer_token(&token);
            }
            Box::new(c)
        }
        (None, None) => return Ok(None),
    };
    let exemplars = match &args.exemplars {
        Some(p) => Exemplar::load_all(p)?,
        None => vec![],
    };
    Ok(Some((client, exemplars)))
}

fn record_graphs(r: &CorpusRecord, event: usize) -> (TextGraph, ImageGraph) {
    (
        TextGraph {
            record_id: r.id.clone(),
            caption: r.caption.clone(),
            event: r.events[event].clone(),
        },
        ImageGraph {
            record_id: r.id.clone(),
            image: r.image.clone(),
            objects: r.objects.clone(),
        },
    )
}

fn run(cli: Cli) -> Result<()> {
    let ont = load_ontology(&cli.ontology)?;
    match cli.command {
        Command::Synth { n, seed, out } => save_corpus(&out, &toy_corpus(&ont, n, seed)),
        Command::ExtractPrimary {
            corpus,
            provider: pa,
            out,
        } => {
            let records = load_corpus(&corpus)?;
            let p = provider(&pa)?;
            emit(&primaries(&records, &ont, p.as_ref())?, out.as_deref())
        }
        Command::GenNegatives {
            corpus,
            event_cm,
            arg_cm,
            seed,
            count,
            primary,
            provider: pa,
            out,
        } => {
            let records = load_corpus(&corpus)?;
            let ecm = load_confusion(&event_cm)?;
            let acm = load_confusion(&arg_cm)?;
            let map: BTreeMap<String, usize> = match primary {
                Some(p) => serde_json::from_str(&read_text(&p)?)
                    .map_err(|e| Error::Format(e.to_string()))?,
                None => primaries(&records, &ont, provider(&pa)?.as_ref())?,
            };
            let lines = records
                .iter()
                .map(|r| {
                    let k = *map.get(&r.id).ok_or_else(|| {
                        Error::IdMismatch(format!("no primary event for `{}`", r.id))
                    })?;
                    Ok(NegativeLine {
                        record_id: r.id.clone(),
                        event_index: k,
                        pairs: negatives_for_record(r, k, &ecm, &acm, &ont, seed, count)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&out, &lines)
        }
        Command::GenPrompts {
            corpus,
            negatives,
            kind,
            completion,
            provider: pa,
            out,
        } => {
            let records = load_corpus(&corpus)?;
            let by_id: BTreeMap<&str, &CorpusRecord> =
                records.iter().map(|r| (r.id.as_str(), r)).collect();
            let lines: Vec<NegativeLine> = read_jsonl(&negatives)?;
            let mut items = vec![];
            for l in &lines {
                let r = by_id.get(l.record_id.as_str()).ok_or_else(|| {
                    Error::IdMismatch(format!("`{}` is not in the corpus", l.record_id))
                })?;
                items.extend(l.pairs.iter().map(|p| (*r, p)));
            }
            let sets: Vec<DescriptionSet> = if kind == PromptKind::CompletionService {
                let (client, exemplars) = completion_client(&completion)?.ok_or_else(|| {
                    Error::Precondition(
                        "completion prompts need --completions or --endpoint".into(),
                    )
                })?;
                describe_all_via_completion(
                    &items,
                    &exemplars,
                    client.as_ref(),
                    &ont,
                    completion.max_in_flight,
                )?
            } else {
                let enc = ToyEncoder::new(ToyConfig::default());
                let toy_registry = |k: usize| enc.is_registered(k);
                let loaded = match &pa.checkpoint {
                    Some(p) => Some(ToyEncoder::from_checkpoint(&load_embeddings(p)?)?),
                    None => None,
                };
                let loaded_registry =
                    |k: usize| loaded.as_ref().is_some_and(|e| e.is_registered(k));
                let ctx = PromptContext {
                    kind,
                    ontology: &ont,
                    is_registered: if loaded.is_some() {
                        &loaded_registry
                    } else {
                        &toy_registry
                    },
                    completion: None,
                };
                items
                    .iter()
                    .map(|(r, p)| describe(r, p, &ctx))
                    .collect::<Result<_>>()?
            };
            write_jsonl(&out, &sets)
        }
        Command::Align {
            corpus,
            provider: pa,
            gamma,
            workers,
            out,
            heatmap_dir,
        } => {
            let records = load_corpus(&corpus)?;
            let p = provider(&pa)?;
            let map = primaries(&records, &ont, p.as_ref())?;
            let pairs: Vec<_> = records
                .iter()
                .map(|r| record_graphs(r, map[&r.id]))
                .collect();
            let cfg = SinkhornConfig::with_gamma(gamma);
            let results = align_all(&pairs, p.as_ref(), &ont, &cfg, workers)
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            if let Some(dir) = heatmap_dir {
                for a in &results {
                    write_text(&dir.join(format!("{}.csv", a.record_id)), &a.plan_csv())?;
                }
            }
            emit(&results, out.as_deref())
        }
        Command::Train {
            corpus,
            prompt_kind,
            gamma,
            lambda1,
            lambda2,
            epochs,
            seed,
            batch_size,
            step,
            momentum,
            supervised,
            graph_negatives,
            event_cm,
            arg_cm,
            completion,
            encoder_seed,
            checkpoint_out,
            curve_out,
        } => {
            let records = load_corpus(&corpus)?;
            let enc = ToyEncoder::new(ToyConfig {
                seed: encoder_seed,
                ..ToyConfig::default()
            });
            let ecm = match event_cm {
                Some(p) => load_confusion(&p)?,
                None => uniform_confusion(ont.event_type_ids()),
            };
            let acm = match arg_cm {
                Some(p) => load_confusion(&p)?,
                None => uniform_confusion(all_roles(&ont)),
            };
            let client = completion_client(&completion)?;
            let registry = |k: usize| enc.is_registered(k);
            let ctx = PromptContext {
                kind: prompt_kind,
                ontology: &ont,
                is_registered: &registry,
                completion: client.as_ref().map(|(c, ex)| (c.as_ref(), ex.as_slice())),
            };
            let spec = ItemSpec {
                ontology: &ont,
                event_cm: &ecm,
                arg_cm: &acm,
                prompts: &ctx,
                provider: &enc,
                seed,
            };
            let items = prepare_items(&records, &spec)?;
            let cfg = TrainConfig {
                loss: LossConfig {
                    lambda1,
                    lambda2,
                    sinkhorn: SinkhornConfig {
                        max_iter: LossConfig::default().sinkhorn.max_iter,
                        ..SinkhornConfig::with_gamma(gamma)
                    },
                    graph_negatives,
                    supervised,
                },
                epochs,
                batch_size,
                step,
                momentum,
                seed,
            };
            let outcome = train(&items, enc.clone(), &ont, &cfg)?;
            save_embeddings(&checkpoint_out, &outcome.encoder.to_checkpoint()?)?;
            let csv = curve_to_csv(&outcome.curve);
            match curve_out {
                Some(p) => write_text(&p, &csv),
                None => print_stdout(&csv),
            }
        }
        Command::EvalM2e2 {
            corpus,
            provider: pa,
            threshold,
            out,
            diagnostics,
            emit_confusion,
        } => {
            let records = load_corpus(&corpus)?;
            let p = provider(&pa)?;
            let report = evaluate_m2e2(&records, &ont, p.as_ref(), threshold)?;
            if let Some(path) = diagnostics {
                write_text(&path, &report.scores.diagnostics_csv()?)?;
            }
            if let Some(path) = emit_confusion {
                save_confusion(&path, &report.confusion)?;
            }
            #[derive(Serialize)]
            struct Metrics<'a> {
                event: &'a evalign::evaluate::Prf,
                argument: &'a evalign::evaluate::Prf,
                typing_accuracy: f64,
                ties: usize,
            }
            emit(
                &Metrics {
                    event: &report.scores.event,
                    argument: &report.scores.argument,
                    typing_accuracy: report.typing_accuracy,
                    ties: report.ties,
                },
                out.as_deref(),
            )
        }
        Command::EvalGsr { pred, gold, out } => {
            let preds: Vec<Situation> = read_jsonl(&pred)?;
            let golds: Vec<Situation> = read_jsonl(&gold)?;
            emit(&score_gsr(&preds, &golds)?, out.as_deref())
        }
        Command::EvalRetrieval {
            corpus,
            provider: pa,
            gamma,
            weight_image_text,
            weight_graph,
            out,
        } => {
            let records = load_corpus(&corpus)?;
            let p = provider(&pa)?;
            let map = primaries(&records, &ont, p.as_ref())?;
            let (images, texts): (Vec<_>, Vec<_>) = records
                .iter()
                .map(|r| retrieval_pair(r, Some(map[&r.id])))
                .unzip();
            let w = ScoreWeights {
                image_text: weight_image_text,
                graph: weight_graph,
            };
            let s = retrieval_scores(
                &images,
                &texts,
                p.as_ref(),
                &ont,
                &SinkhornConfig::with_gamma(gamma),
                w,
            )?;
            let gold: Vec<_> = (0..records.len()).map(|i| (i, i)).collect();
            emit(&score_retrieval_both(&s, &gold)?, out.as_deref())
        }
        Command::Rank {
            corpus,
            record,
            candidates,
            provider: pa,
            gamma,
            out,
        } => {
            let records = load_corpus(&corpus)?;
            let r = records
                .iter()
                .find(|r| r.id == record)
                .ok_or_else(|| Error::IdMismatch(format!("`{record}` is not in the corpus")))?;
            let (query, _) = retrieval_pair(r, None);
            let cands: Vec<Candidate> = if candidates.extension().is_some_and(|e| e == "jsonl") {
                load_corpus(&candidates)?
                    .iter()
                    .map(|c| retrieval_pair(c, (!c.events.is_empty()).then_some(0)).1)
                    .collect()
            } else {
                read_text(&candidates)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .enumerate()
                    .map(|(i, l)| Candidate {
                        key: format!("cand{i}"),
                        text: l.trim().to_string(),
                        graph: None,
                    })
                    .collect()
            };
            let p = provider(&pa)?;
            let ranked = rank_texts(
                &query,
                &cands,
                p.as_ref(),
                &ont,
                &SinkhornConfig::with_gamma(gamma),
                ScoreWeights::default(),
            )?;
            emit(&ranked, out.as_deref())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

//! Zero-shot event typing and argument extraction on held-out synthetic
//! records, before and after training the toy encoder, against random
//! embeddings.

use evalign::encoder::{EmbeddingProvider, RandomProvider, ToyConfig, ToyEncoder};
use evalign::evaluate::{evaluate_m2e2, predict_image_event};
use evalign::ontology::Ontology;
use evalign::prompts::{PromptContext, PromptKind};
use evalign::synth::toy_corpus;
use evalign::training::{
    all_roles, prepare_items, train, uniform_confusion, ItemSpec, TrainConfig,
};

fn main() -> evalign::Result<()> {
    let ont = Ontology::toy();
    let records = toy_corpus(&ont, 40, 2);
    let toy = ToyEncoder::new(ToyConfig::default());
    let random = RandomProvider::new(32, 2);

    let ecm = uniform_confusion(ont.event_type_ids());
    let acm = uniform_confusion(all_roles(&ont));
    let reg = |k: usize| toy.is_registered(k);
    let ctx = PromptContext {
        kind: PromptKind::ComposedTemplate,
        ontology: &ont,
        is_registered: &reg,
        completion: None,
    };
    let spec = ItemSpec {
        ontology: &ont,
        event_cm: &ecm,
        arg_cm: &acm,
        prompts: &ctx,
        provider: &toy,
        seed: 1,
    };
    let items = prepare_items(&toy_corpus(&ont, 20, 1), &spec)?;
    let trained = train(&items, toy.clone(), &ont, &TrainConfig::default())?.encoder;

    let (ranking, event) = predict_image_event(
        &records[0],
        &ont.event_type_ids(),
        &ont,
        &trained,
        Some(0.0),
    )?;
    println!("{}: top types {:?}", records[0].id, &ranking.ranked[..3]);
    println!("predicted {event:?}\n");

    let providers: [(&str, &dyn EmbeddingProvider); 3] = [
        ("untrained", &toy),
        ("trained", &trained),
        ("random", &random),
    ];
    for (name, p) in providers {
        let r = evaluate_m2e2(&records, &ont, p, None)?;
        println!(
            "{name:<12} typing acc {:.3}  event F1 {:.3}  argument P/R/F1 {:.3}/{:.3}/{:.3}  ties {}",
            r.typing_accuracy, r.scores.event.f1, r.scores.argument.precision, r.scores.argument.recall, r.scores.argument.f1, r.ties
        );
    }
    Ok(())
}

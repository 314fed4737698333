//! Every description kind for one negative pair of the running example.
//! The completion-service kind replays recorded completions.

use evalign::corpus::{load_confusion, load_corpus};
use evalign::negatives::negatives_for_record;
use evalign::ontology::Ontology;
use evalign::prompts::{describe, Exemplar, MockCompletion, PromptContext, PromptKind};

fn main() -> evalign::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let ont = Ontology::running_example();
    let records = load_corpus(format!("{dir}/running_example.jsonl"))?;
    let ecm = load_confusion(format!("{dir}/event_confusion.csv"))?;
    let acm = load_confusion(format!("{dir}/argument_confusion.csv"))?;
    let mock = MockCompletion::load(format!("{dir}/mock_completions.json"))?;
    let exemplars: Vec<Exemplar> = Exemplar::load_all(format!("{dir}/completion_exemplars.json"))?;
    let registered = |k: usize| k < 4;
    for kind in PromptKind::ALL {
        // caption editing needs the record whose caption carries the event
        let record = if kind == PromptKind::CaptionEdit {
            &records[1]
        } else {
            &records[0]
        };
        let pair = negatives_for_record(record, 0, &ecm, &acm, &ont, 0, 1)?.remove(0);
        let ctx = PromptContext {
            kind,
            ontology: &ont,
            is_registered: &registered,
            completion: Some((&mock, &exemplars)),
        };
        let set = describe(record, &pair, &ctx)?;
        println!("[{kind}]");
        for (label, text) in ["positive", "event negative", "argument negative"]
            .iter()
            .zip(set.texts())
        {
            println!("  {label:<18} {text}");
        }
    }
    Ok(())
}

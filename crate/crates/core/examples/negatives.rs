//! Negative event structures for the running example: a confusable event
//! type drawn from the confusion matrix and a rotation of the arguments.

use evalign::corpus::{load_confusion, load_corpus};
use evalign::negatives::negatives_for_record;
use evalign::ontology::Ontology;

fn main() -> evalign::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let ont = Ontology::running_example();
    let records = load_corpus(format!("{dir}/running_example.jsonl"))?;
    let ecm = load_confusion(format!("{dir}/event_confusion.csv"))?;
    let acm = load_confusion(format!("{dir}/argument_confusion.csv"))?;
    let show = |ev: &evalign::types::EventStructure| {
        let args: Vec<String> = ev
            .arguments
            .iter()
            .map(|a| format!("{}={}", a.role, a.entity.text))
            .collect();
        format!("{} [{}]", ev.event_type, args.join(", "))
    };
    for pair in records
        .iter()
        .map(|r| negatives_for_record(r, 0, &ecm, &acm, &ont, 0, 1))
        .collect::<evalign::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
    {
        println!("positive        {}", show(&pair.positive));
        println!(
            "negative event  {}  ({:?})",
            show(&pair.negative_event),
            pair.provenance.event
        );
        if let Some(neg) = &pair.negative_args {
            println!(
                "negative args   {}  ({:?})",
                show(neg),
                pair.provenance.arguments
            );
        }
        println!();
    }
    Ok(())
}

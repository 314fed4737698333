//! Pick the event an image depicts when its caption mentions several.

use evalign::corpus::load_corpus;
use evalign::encoder::{ToyConfig, ToyEncoder};
use evalign::negatives::retype_event;
use evalign::ontology::Ontology;
use evalign::primary::{vote, CRITERIA};

fn main() -> evalign::Result<()> {
    let ont = Ontology::running_example();
    let mut record = load_corpus(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/running_example.jsonl"
    ))?
    .remove(0);
    // a second reading of the same mentions, with one argument fewer
    let mut other = retype_event(&record.events[0], "Arrest", &ont)?;
    other.arguments.pop();
    other.dependency_depth = 1;
    record.events.push(other);

    let enc = ToyEncoder::new(ToyConfig::default());
    let v = vote(&record, &ont, &enc)?;
    for (name, ranks) in CRITERIA.iter().zip(&v.ranks) {
        println!("{name:<17} ranks {ranks:?}");
    }
    println!("first places {:?}", v.first_places);
    println!(
        "primary event: #{} ({}){}",
        v.winner,
        record.events[v.winner].event_type,
        if v.tie_broken { ", tie broken" } else { "" }
    );
    Ok(())
}

//! Align the text and image graphs of the bundled running example and print
//! the cost matrix, the transport plan and the resulting distance.

use evalign::corpus::load_corpus;
use evalign::encoder::{ToyConfig, ToyEncoder};
use evalign::ontology::Ontology;
use evalign::otalign::{graph_distance, SinkhornConfig};
use evalign::types::{ImageGraph, TextGraph};

fn main() -> evalign::Result<()> {
    let ont = Ontology::running_example();
    let records = load_corpus(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/running_example.jsonl"
    ))?;
    let enc = ToyEncoder::new(ToyConfig::default());
    let r = &records[0];
    let text = TextGraph {
        record_id: r.id.clone(),
        caption: r.caption.clone(),
        event: r.events[0].clone(),
    };
    let image = ImageGraph {
        record_id: r.id.clone(),
        image: r.image.clone(),
        objects: r.objects.clone(),
    };
    for gamma in [1.0, 0.1, 0.01] {
        let cfg = SinkhornConfig {
            anneal: gamma < 0.1,
            ..SinkhornConfig::with_gamma(gamma)
        };
        let a = graph_distance(&text, &image, &enc, &ont, &cfg)?;
        println!(
            "gamma {gamma}: distance {:.4} after {} iterations (converged: {})",
            a.distance, a.plan.iterations, a.plan.converged
        );
        if gamma == 0.1 {
            println!(
                "cost rows {:?}\ncost cols {:?}",
                a.cost.row_nodes, a.cost.col_nodes
            );
            println!("{:.3}", a.cost.cost);
            print!("{}", a.plan_csv());
        }
    }
    Ok(())
}

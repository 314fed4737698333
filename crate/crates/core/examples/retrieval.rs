//! Image-caption retrieval with and without the graph distance, and ranking
//! of a caption against its negatives for one image.

use evalign::encoder::{ToyConfig, ToyEncoder};
use evalign::evaluate::{
    rank_texts, retrieval_pair, retrieval_scores, score_retrieval_both, Candidate, ScoreWeights,
};
use evalign::negatives::rotate_arguments;
use evalign::ontology::Ontology;
use evalign::otalign::SinkhornConfig;
use evalign::synth::toy_corpus;
use evalign::types::TextGraph;

fn main() -> evalign::Result<()> {
    let ont = Ontology::toy();
    let records = toy_corpus(&ont, 12, 6);
    let enc = ToyEncoder::new(ToyConfig::default());
    let cfg = SinkhornConfig::default();
    let (images, texts): (Vec<_>, Vec<_>) =
        records.iter().map(|r| retrieval_pair(r, Some(0))).unzip();
    let gold: Vec<_> = (0..records.len()).map(|i| (i, i)).collect();
    for (name, w) in [
        (
            "image-text only",
            ScoreWeights {
                image_text: 1.0,
                graph: 0.0,
            },
        ),
        ("with graph term", ScoreWeights::default()),
    ] {
        let s = retrieval_scores(&images, &texts, &enc, &ont, &cfg, w)?;
        let r = score_retrieval_both(&s, &gold)?;
        println!(
            "{name}: image->text {:?}  text->image {:?}",
            r.image_to_text.at, r.text_to_image.at
        );
    }

    let r = &records[0];
    let rotated = rotate_arguments(&r.events[0])?;
    let candidates = vec![
        texts[0].clone(),
        Candidate {
            key: format!("{}-rotated", r.id),
            text: "arguments rotated".into(),
            graph: Some(TextGraph {
                record_id: r.id.clone(),
                caption: r.caption.clone(),
                event: rotated,
            }),
        },
        texts[1].clone(),
    ];
    for c in rank_texts(
        &images[0],
        &candidates,
        &enc,
        &ont,
        &cfg,
        ScoreWeights::default(),
    )? {
        println!(
            "{:<14} image-text {:.4}  graph {:.4}  total {:.4}",
            c.key, c.image_text, c.graph, c.distance
        );
    }
    Ok(())
}

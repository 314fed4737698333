//! Grounded situation recognition: predict a verb frame per image and score
//! verb, value and grounding accuracy against gold frames.

use evalign::encoder::{ToyConfig, ToyEncoder};
use evalign::evaluate::{predict_situation, score_gsr, Situation, SituationRole};
use evalign::ontology::Ontology;
use evalign::synth::toy_corpus;

fn main() -> evalign::Result<()> {
    let ont = Ontology::toy();
    let records = toy_corpus(&ont, 20, 4);
    let enc = ToyEncoder::new(ToyConfig::default());
    let verbs = ont.event_type_ids();
    let gold: Vec<Situation> = records
        .iter()
        .map(|r| {
            let ev = r
                .image_event
                .as_ref()
                .expect("synthetic records carry gold");
            Situation {
                id: r.id.clone(),
                verb: ev.event_type.clone(),
                roles: ev
                    .arguments
                    .iter()
                    .zip(&r.objects)
                    .map(|(a, o)| SituationRole {
                        role: a.role.clone(),
                        value: o.object_type.clone(),
                        bbox: Some(a.bbox),
                    })
                    .collect(),
            }
        })
        .collect();
    let pred = records
        .iter()
        .map(|r| predict_situation(r, &verbs, &ont, &enc, None))
        .collect::<evalign::Result<Vec<_>>>()?;
    println!("{} -> {} {:?}", pred[0].id, pred[0].verb, pred[0].roles);
    let s = score_gsr(&pred, &gold)?;
    println!(
        "verb {:.3}  value {:.3}  value-all {:.3}  grnd {:.3}  grnd-all {:.3}",
        s.verb, s.value, s.value_all, s.ground, s.ground_all
    );
    // scoring the gold against itself is the ceiling
    println!("gold vs gold: {:?}", score_gsr(&gold, &gold)?);
    Ok(())
}

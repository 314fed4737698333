//! Train the toy encoder on a synthetic corpus and report the loss curve and
//! in-batch retrieval before and after.

use evalign::encoder::{ToyConfig, ToyEncoder};
use evalign::evaluate::score_retrieval;
use evalign::ontology::Ontology;
use evalign::prompts::{PromptContext, PromptKind};
use evalign::synth::toy_corpus;
use evalign::training::{
    all_roles, in_batch_similarity, prepare_items, train, uniform_confusion, ItemSpec, TrainConfig,
};

fn recall_at_1(s: &ndarray::Array2<f64>) -> evalign::Result<f64> {
    let gold: Vec<_> = (0..s.nrows()).map(|i| (i, i)).collect();
    Ok(score_retrieval(s, &gold, &[1])?.at[0].1)
}

fn main() -> evalign::Result<()> {
    let ont = Ontology::toy();
    let enc = ToyEncoder::new(ToyConfig::default());
    let records = toy_corpus(&ont, 8, 11);
    let ecm = uniform_confusion(ont.event_type_ids());
    let acm = uniform_confusion(all_roles(&ont));
    let reg = |k: usize| enc.is_registered(k);
    let ctx = PromptContext {
        kind: PromptKind::SingleTemplate,
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
        seed: 11,
    };
    let items = prepare_items(&records, &spec)?;
    let cfg = TrainConfig::default();
    let before = recall_at_1(&in_batch_similarity(&items, &enc)?)?;
    let t = std::time::Instant::now();
    let out = train(&items, enc, &ont, &cfg)?;
    let after = recall_at_1(&in_batch_similarity(&items, &out.encoder)?)?;
    for p in out.curve.iter().step_by(5) {
        println!(
            "epoch {:>3}  L1 {:.4}  L2 {:.4}  L {:.4}",
            p.epoch, p.l1, p.l2, p.total
        );
    }
    let (first, last) = (out.curve[0].total, out.curve.last().unwrap().total);
    println!(
        "loss {first:.4} -> {last:.4} ({:.1}% lower)",
        100.0 * (1.0 - last / first)
    );
    println!("R@1 {before:.3} -> {after:.3} in {:.2?}", t.elapsed());
    Ok(())
}

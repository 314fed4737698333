use evalign::corpus::{
    load_confusion, load_corpus, load_embeddings, save_confusion, save_corpus, save_embeddings,
    ConfusionMatrix, EmbeddingTable,
};
use evalign::ontology::Ontology;
use evalign::synth::toy_corpus;
use evalign::Error;
use proptest::prelude::*;
use tempfile::TempDir;

#[test]
fn corpus_survives_a_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let records = toy_corpus(&Ontology::toy(), 12, 5);
    let path = dir.path().join("c.jsonl");
    save_corpus(&path, &records).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), records);
}

#[test]
fn malformed_line_reports_its_number() {
    let dir = TempDir::new().unwrap();
    let records = toy_corpus(&Ontology::toy(), 2, 5);
    let path = dir.path().join("c.jsonl");
    save_corpus(&path, &records).unwrap();
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&path, text).unwrap();
    match load_corpus(&path) {
        Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a malformed-line error, got {other:?}"),
    }
}

#[test]
fn confusion_fixture_round_trips() {
    let dir = TempDir::new().unwrap();
    let cm = load_confusion(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/argument_confusion.csv"
    ))
    .unwrap();
    let path = dir.path().join("cm.csv");
    save_confusion(&path, &cm).unwrap();
    assert_eq!(load_confusion(&path).unwrap(), cm);
}

proptest! {
    #[test]
    fn embedding_tables_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1e3f32..1e3, 4), 0..12)) {
        let mut table = EmbeddingTable::new(4);
        for (i, r) in rows.iter().enumerate() {
            table.push(format!("k{i}"), r).unwrap();
        }
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("e.bin");
        save_embeddings(&path, &table).unwrap();
        prop_assert_eq!(load_embeddings(&path).unwrap(), table);
    }

    #[test]
    fn confusion_csv_round_trips(counts in proptest::collection::vec(proptest::collection::vec(0u64..1000, 3), 3)) {
        let labels = vec!["a".to_string(), "b,c".to_string(), "d\"e".to_string()];
        let cm = ConfusionMatrix::new(labels, counts).unwrap();
        prop_assert_eq!(ConfusionMatrix::from_csv(&cm.to_csv()).unwrap(), cm);
    }
}

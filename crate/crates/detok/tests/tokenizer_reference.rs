//! Agreement with the reference byte-level BPE implementation on the frozen
//! fixture corpus, plus round-trip checks on the fixture vocabulary.

use std::path::Path;
use std::sync::OnceLock;

use detok::Tokenizer;

fn fixture_tokenizer() -> &'static Tokenizer {
    static TOK: OnceLock<Tokenizer> = OnceLock::new();
    TOK.get_or_init(|| {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        Tokenizer::from_files(&dir.join("vocab.json"), &dir.join("merges.txt")).unwrap()
    })
}

struct Fixture {
    text: String,
    ids: Vec<u32>,
}

fn fixtures() -> Vec<Fixture> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/encode_fixtures.jsonl");
    let data = std::fs::read_to_string(path).unwrap();
    data.lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            Fixture {
                text: v["text"].as_str().unwrap().to_string(),
                ids: v["ids"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_u64().unwrap() as u32)
                    .collect(),
            }
        })
        .collect()
}

#[test]
fn agrees_with_reference_on_all_fixtures() {
    let tok = fixture_tokenizer();
    let fixtures = fixtures();
    assert!(
        fixtures.len() >= 1000,
        "need at least 1000 fixture sentences, have {}",
        fixtures.len()
    );
    let mut failures = Vec::new();
    for f in &fixtures {
        let got = tok.encode(&f.text).unwrap();
        if got != f.ids {
            failures.push(format!("{:?}: got {:?}, want {:?}", f.text, got, f.ids));
        }
    }
    assert!(
        failures.is_empty(),
        "{} fixture mismatches, first: {}",
        failures.len(),
        failures[0]
    );
}

#[test]
fn decodes_every_fixture_back_to_its_text() {
    let tok = fixture_tokenizer();
    for f in fixtures() {
        assert_eq!(tok.decode(&f.ids).unwrap(), f.text);
    }
}

#[test]
fn named_examples_round_trip() {
    let tok = fixture_tokenizer();
    for text in ["Hello world", "Libertarian"] {
        let ids = tok.encode(text).unwrap();
        assert!(!ids.is_empty());
        assert_eq!(tok.decode(&ids).unwrap(), text);
    }
}

#[test]
fn encode_is_deterministic() {
    let tok = fixture_tokenizer();
    let text = "the quick brown fox 123 можно 東京 don't  stop";
    let a = tok.encode(text).unwrap();
    let b = tok.encode(text).unwrap();
    assert_eq!(a, b);
}

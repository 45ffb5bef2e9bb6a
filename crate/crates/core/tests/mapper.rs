mod common;

use std::collections::HashSet;

use common::{fixture, fixture_mapper, fixture_store};
use rectify_core::embedding::Lookup;
use rectify_core::{ClassCatalog, EmbeddingStore, TokenClassMapper};
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    class: String,
    similarity: f64,
    mapped: bool,
}

fn expected() -> std::collections::HashMap<String, Expected> {
    let text = std::fs::read_to_string(fixture("expected_mapping.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

const SIM_TOL: f64 = 1e-12;

#[test]
fn puppy_maps_to_dog_with_oracle_similarity() {
    let m = fixture_mapper(0.5).map_token("puppy").unwrap();
    assert_eq!(m.class, "dog");
    assert!((m.similarity - 0.9140968741811579).abs() < SIM_TOL, "{}", m.similarity);
}

#[test]
fn function_word_is_unmapped() {
    let mapper = fixture_mapper(0.5);
    assert!(mapper.map_token("the").is_none());
    match mapper.lookup("the") {
        Lookup::BelowThreshold { best: Some(b) } => {
            assert!((b.similarity - 0.30637712931951355).abs() < SIM_TOL);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn phrase_tokens_follow_oracle() {
    let mapper = fixture_mapper(0.5);
    let objs = mapper.extract_objects(&["puppy", "kitten", "table"], "x");
    let classes: Vec<&str> = objs.classes().iter().map(String::as_str).collect();
    assert_eq!(classes, ["cat", "dining table", "dog"]);
}

#[test]
fn every_fixture_token_matches_oracle() {
    let mapper = fixture_mapper(0.5);
    let store = fixture_store();
    let exp = expected();
    assert_eq!(exp.len(), store.vocab_size());
    for token in store.tokens() {
        let e = &exp[token];
        let lookup = mapper.lookup(token);
        let best = match &lookup {
            Lookup::Exact(c) => Some((c.clone(), 1.0)),
            Lookup::Similar(m) => Some((m.class.clone(), m.similarity)),
            Lookup::BelowThreshold { best } => best.as_ref().map(|m| (m.class.clone(), m.similarity)),
            Lookup::NoEmbedding => None,
        };
        let (class, sim) = best.unwrap_or_else(|| panic!("{token}: no candidate"));
        assert_eq!(class, e.class, "{token}");
        assert!((sim - e.similarity).abs() < SIM_TOL, "{token}: {sim} vs {}", e.similarity);
        assert_eq!(lookup.matched().is_some(), e.mapped, "{token}");
    }
}

#[test]
fn restrict_to_keeps_intersection() {
    let keep: HashSet<String> = (0..10).map(|i| format!("tok{:02}", i * 5)).chain(["absent".to_string()]).collect();
    let store = EmbeddingStore::load(fixture("embeddings_50.txt"), Some(&keep)).unwrap();
    assert_eq!(store.vocab_size(), 10);
    assert_eq!(store.dimension(), 8);
    let full = EmbeddingStore::load(fixture("embeddings_50.txt"), None).unwrap();
    assert_eq!(full.vocab_size(), 50);
}

#[test]
fn exact_dominance_over_catalog() {
    let mapper = fixture_mapper(0.99);
    for class in ClassCatalog::coco80().iter() {
        let m = mapper.map_token(class).unwrap();
        assert_eq!(m.class, class);
        assert_eq!(m.similarity, 1.0);
        let upper = mapper.map_token(&class.to_uppercase()).unwrap();
        assert_eq!(upper.class, class);
    }
}

#[test]
fn threshold_antitone_on_vocabulary() {
    let store = fixture_store();
    let thresholds = [0.0, 0.2, 0.35, 0.5, 0.7, 0.9, 0.95, 1.0];
    let mappers: Vec<TokenClassMapper> = thresholds.iter().map(|&t| fixture_mapper(t)).collect();
    for token in store.tokens() {
        let mapped: Vec<bool> = mappers.iter().map(|m| m.map_token(token).is_some()).collect();
        for w in mapped.windows(2) {
            assert!(w[0] || !w[1], "{token}: mapped at a higher threshold only");
        }
    }
}

#[test]
fn scaling_by_seven_preserves_decisions() {
    let base = fixture_mapper(0.5);
    let scaled =
        TokenClassMapper::new(fixture_store().scaled(7.0), ClassCatalog::coco80(), 0.5).unwrap();
    for token in fixture_store().tokens() {
        let a = base.lookup(token);
        let b = scaled.lookup(token);
        let class = |l: &Lookup| match l {
            Lookup::Exact(c) => Some(c.clone()),
            Lookup::Similar(m) => Some(m.class.clone()),
            Lookup::BelowThreshold { best } => best.as_ref().map(|m| m.class.clone()),
            Lookup::NoEmbedding => None,
        };
        assert_eq!(class(&a), class(&b), "{token}");
        assert_eq!(a.matched().is_some(), b.matched().is_some(), "{token}");
    }
}

#[test]
fn unknown_token_has_no_embedding() {
    assert_eq!(fixture_mapper(0.5).lookup("zzyzx"), Lookup::NoEmbedding);
    assert_eq!(fixture_mapper(0.5).map_token("puppies").unwrap().class, "dog");
}

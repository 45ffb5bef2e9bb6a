#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rectify_core::{ClassCatalog, EmbeddingStore, TokenClassMapper};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_store() -> EmbeddingStore {
    EmbeddingStore::load(fixture("embeddings.txt"), None).unwrap()
}

pub fn fixture_mapper(threshold: f64) -> TokenClassMapper {
    TokenClassMapper::new(fixture_store(), ClassCatalog::coco80(), threshold).unwrap()
}

pub fn exact_mapper() -> TokenClassMapper {
    TokenClassMapper::exact_only(ClassCatalog::coco80())
}

/// Random subset of the catalog with size in `lo..=hi`.
pub fn random_subset(rng: &mut ChaCha8Rng, catalog: &ClassCatalog, lo: usize, hi: usize) -> BTreeSet<String> {
    let n = rng.gen_range(lo..=hi);
    sample(rng, catalog.len(), n)
        .iter()
        .map(|i| catalog.classes()[i].clone())
        .collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rectify")
}

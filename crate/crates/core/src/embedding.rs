//! Word-embedding lookup and the token → catalog class mapping.
//!
//! Embeddings are read from the word2vec text format: a header line
//! `<vocab size> <dimension>` followed by one `token v1 ... vD` row per token.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::domain::{normalize_name, ClassCatalog, ExplanationObjects};
use crate::error::{Error, Result};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.5;

/// Lower edge of the near-miss band used for `unmapped_tokens` bookkeeping.
pub const NEAR_MISS_FLOOR: f64 = 0.35;

#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dimension: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    /// An empty store; a mapper built on it matches by exact name only.
    pub fn empty() -> Self {
        EmbeddingStore::default()
    }

    pub fn from_vectors<I>(dimension: usize, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut store = EmbeddingStore {
            dimension,
            ..Default::default()
        };
        for (i, (token, v)) in vectors.into_iter().enumerate() {
            if v.len() != dimension {
                return Err(Error::Embeddings {
                    line: i + 1,
                    message: format!("expected {dimension} components, found {}", v.len()),
                });
            }
            store.push(token, &v);
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>, restrict_to: Option<&HashSet<String>>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        EmbeddingStore::read_text_dims(BufReader::new(file), restrict_to)
    }

    /// Parse word2vec text format. Only rows whose token is in `restrict_to`
    /// are kept when it is given; every row is still validated.
    pub fn read_text_dims<R: BufRead>(reader: R, restrict_to: Option<&HashSet<String>>) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::Embeddings {
                line: 1,
                message: e.to_string(),
            })?,
            None => {
                return Err(Error::Embeddings {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        };
        let (vocab_len, dimension) = parse_header(&header)?;

        let mut store = EmbeddingStore {
            dimension,
            ..Default::default()
        };
        let mut rows = 0usize;
        let mut components = Vec::with_capacity(dimension);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::Embeddings {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line has a token");
            components.clear();
            for part in parts {
                let v: f32 = part.parse().map_err(|_| Error::Embeddings {
                    line: line_no,
                    message: format!("non-numeric component {part:?}"),
                })?;
                components.push(v);
            }
            if components.len() != dimension {
                return Err(Error::Embeddings {
                    line: line_no,
                    message: format!(
                        "expected {dimension} components, found {}",
                        components.len()
                    ),
                });
            }
            if restrict_to.is_some_and(|keep| !keep.contains(token)) {
                continue;
            }
            store.push(token.to_string(), &components);
        }
        if rows != vocab_len {
            return Err(Error::Embeddings {
                line: 1,
                message: format!("header declares {vocab_len} rows, file has {rows}"),
            });
        }
        Ok(store)
    }

    fn push(&mut self, token: String, v: &[f32]) {
        if self.index.contains_key(&token) {
            return;
        }
        self.index.insert(token, self.index.len());
        self.data.extend_from_slice(v);
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vocab_size(&self) -> usize {
        self.index.len()
    }

    /// `None` when the token has no vector.
    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index.get(token).map(|&i| {
            let start = i * self.dimension;
            &self.data[start..start + self.dimension]
        })
    }

    /// Tokens in file order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = vec![""; self.index.len()];
        for (t, &i) in &self.index {
            out[i] = t.as_str();
        }
        out
    }

    /// Copy with every component multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        EmbeddingStore {
            dimension: self.dimension,
            index: self.index.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let malformed = || Error::Embeddings {
        line: 1,
        message: format!("malformed header {header:?}, expected \"<rows> <dimension>\""),
    };
    let mut parts = header.split_whitespace();
    let rows = parts.next().and_then(|p| p.parse().ok()).ok_or_else(malformed)?;
    let dim: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(malformed)?;
    if parts.next().is_some() || dim == 0 {
        return Err(malformed());
    }
    Ok((rows, dim))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMatch {
    pub class: String,
    pub similarity: f64,
}

/// Full outcome of looking a token up, including why it failed to map.
#[derive(Debug, Clone, PartialEq)]
pub enum Lookup {
    /// Token equals a catalog class name.
    Exact(String),
    /// Nearest class by cosine similarity, at or above the threshold.
    Similar(ClassMatch),
    /// Token has a vector but its nearest class is below the threshold.
    /// `best` is `None` when no class has a vector.
    BelowThreshold { best: Option<ClassMatch> },
    /// No vector for the token or its singular forms.
    NoEmbedding,
}

impl Lookup {
    pub fn matched(&self) -> Option<ClassMatch> {
        match self {
            Lookup::Exact(class) => Some(ClassMatch {
                class: class.clone(),
                similarity: 1.0,
            }),
            Lookup::Similar(m) => Some(m.clone()),
            _ => None,
        }
    }
}

/// Maps free-vocabulary tokens onto catalog classes by nearest class vector.
#[derive(Debug, Clone)]
pub struct TokenClassMapper {
    store: EmbeddingStore,
    catalog: ClassCatalog,
    threshold: f64,
    /// Unit-length class vectors, sorted by class name so the first maximum
    /// found is the lexicographically smallest.
    class_vectors: Vec<(String, Vec<f64>)>,
}

impl TokenClassMapper {
    pub fn new(store: EmbeddingStore, catalog: ClassCatalog, threshold: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(Error::param(format!(
                "similarity threshold {threshold} outside [-1, 1]"
            )));
        }
        let mut class_vectors: Vec<(String, Vec<f64>)> = catalog
            .iter()
            .filter_map(|class| class_vector(&store, class).map(|v| (class.to_string(), v)))
            .collect();
        class_vectors.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(TokenClassMapper {
            store,
            catalog,
            threshold,
            class_vectors,
        })
    }

    /// Mapper that recognizes catalog names only.
    pub fn exact_only(catalog: ClassCatalog) -> Self {
        TokenClassMapper::new(EmbeddingStore::empty(), catalog, DEFAULT_SIMILARITY_THRESHOLD)
            .expect("default threshold is in range")
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(Error::param(format!(
                "similarity threshold {threshold} outside [-1, 1]"
            )));
        }
        let mut m = self.clone();
        m.threshold = threshold;
        Ok(m)
    }

    pub fn map_token(&self, token: &str) -> Option<ClassMatch> {
        self.lookup(token).matched()
    }

    pub fn lookup(&self, token: &str) -> Lookup {
        let norm = normalize_name(token);
        if norm.is_empty() {
            return Lookup::NoEmbedding;
        }
        if let Some(found) = self.lookup_form(&norm) {
            return found;
        }
        for suffix in ["s", "es"] {
            if let Some(stem) = norm.strip_suffix(suffix) {
                if stem.is_empty() {
                    continue;
                }
                if let Some(found) = self.lookup_form(stem) {
                    return found;
                }
            }
        }
        Lookup::NoEmbedding
    }

    /// `None` when the form is neither a class name nor in the store.
    fn lookup_form(&self, form: &str) -> Option<Lookup> {
        if self.catalog.contains(form) {
            return Some(Lookup::Exact(form.to_string()));
        }
        let vector = self
            .store
            .get(form)
            .or_else(|| self.store.get(&form.replace(' ', "_")))?;
        let best = self.nearest_class(vector);
        Some(match best {
            Some(m) if m.similarity >= self.threshold => Lookup::Similar(m),
            best => Lookup::BelowThreshold { best },
        })
    }

    fn nearest_class(&self, vector: &[f32]) -> Option<ClassMatch> {
        let norm = l2_norm(vector);
        if norm == 0.0 {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, class_vec)) in self.class_vectors.iter().enumerate() {
            let dot: f64 = vector
                .iter()
                .zip(class_vec)
                .map(|(&a, &b)| f64::from(a) * b)
                .sum();
            let sim = dot / norm;
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((i, sim));
            }
        }
        best.map(|(i, similarity)| ClassMatch {
            class: self.class_vectors[i].0.clone(),
            similarity,
        })
    }

    /// Whether a failed lookup is close enough to a class to be worth logging.
    pub fn is_near_miss(&self, lookup: &Lookup) -> bool {
        match lookup {
            Lookup::BelowThreshold { best: Some(m) } => {
                m.similarity >= NEAR_MISS_FLOOR && m.similarity < self.threshold
            }
            _ => false,
        }
    }

    /// Map every token and collect the distinct classes hit.
    pub fn extract_objects<S: AsRef<str>>(&self, tokens: &[S], image_id: &str) -> ExplanationObjects {
        let mut classes = BTreeSet::new();
        let mut unmapped = Vec::new();
        for token in tokens {
            let lookup = self.lookup(token.as_ref());
            if let Some(m) = lookup.matched() {
                classes.insert(m.class);
            } else if self.is_near_miss(&lookup) {
                unmapped.push(token.as_ref().to_string());
            }
        }
        ExplanationObjects::from_parts(image_id.to_string(), classes, unmapped)
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Unit vector for a class: its own vector for single words, the mean of the
/// member-word vectors present in the store for multiword names.
fn class_vector(store: &EmbeddingStore, class: &str) -> Option<Vec<f64>> {
    let words: Vec<&[f32]> = class.split(' ').filter_map(|w| store.get(w)).collect();
    if words.is_empty() {
        return None;
    }
    let mut mean = vec![0.0f64; store.dimension()];
    for w in &words {
        for (m, &x) in mean.iter_mut().zip(w.iter()) {
            *m += f64::from(x);
        }
    }
    let n = words.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    mean.iter_mut().for_each(|m| *m /= norm);
    Some(mean)
}

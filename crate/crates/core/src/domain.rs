//! Shared data types: the detector's class universe, per-image detections,
//! and the class sets the metrics are computed over.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COCO_80: &str = include_str!("../data/coco80.txt");

/// Lowercase, trim and collapse runs of internal whitespace to one space.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The closed, ordered set of classes the detector can recognize.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    classes: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassCatalog {
    /// Build a catalog from names in load order. Line numbers in errors are
    /// 1-based positions in `names`.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut classes = Vec::new();
        let mut index = HashMap::new();
        for (i, raw) in names.into_iter().enumerate() {
            let line = i + 1;
            let name = normalize_name(raw.as_ref());
            if name.is_empty() {
                return Err(Error::Catalog {
                    line,
                    message: "empty class name".into(),
                });
            }
            if let Some(first) = index.get(&name) {
                return Err(Error::Catalog {
                    line,
                    message: format!(
                        "duplicate class {name:?} (first defined on line {})",
                        first + 1
                    ),
                });
            }
            index.insert(name.clone(), classes.len());
            classes.push(name);
        }
        if classes.is_empty() {
            return Err(Error::Catalog {
                line: 0,
                message: "catalog is empty".into(),
            });
        }
        Ok(ClassCatalog { classes, index })
    }

    /// Parse catalog text: one class per line. Blank lines are rejected so that
    /// reported line numbers always match the file.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        // A single trailing newline yields no extra line from `lines()`, but a
        // trailing blank line is tolerated.
        let trimmed_len = lines
            .iter()
            .rposition(|l| !l.trim().is_empty())
            .map_or(0, |p| p + 1);
        ClassCatalog::from_names(&lines[..trimmed_len])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ClassCatalog::parse(&text)
    }

    /// The 80 COCO detection classes, in the usual category order.
    pub fn coco80() -> Self {
        ClassCatalog::parse(COCO_80).expect("bundled catalog is valid")
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Membership test on an already-normalized name.
    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(String::as_str)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }
}

/// One detector output for an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "class")]
    pub class_name: String,
    pub score: f64,
    pub area_frac: f64,
}

impl Detection {
    /// Validate and normalize a raw detection against the catalog.
    pub fn new(catalog: &ClassCatalog, class_name: &str, score: f64, area_frac: f64) -> Result<Self> {
        let class_name = normalize_name(class_name);
        if !catalog.contains(&class_name) {
            return Err(Error::Contract(format!(
                "class {class_name:?} is not in the catalog"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Contract(format!("score {score} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&area_frac) {
            return Err(Error::Contract(format!(
                "area_frac {area_frac} outside [0, 1]"
            )));
        }
        Ok(Detection {
            class_name,
            score,
            area_frac,
        })
    }
}

/// The detector's view of one image: its detections and the distinct classes
/// among them.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifierSet {
    image_id: String,
    detections: Vec<Detection>,
    class_set: BTreeSet<String>,
}

impl RectifierSet {
    pub fn new(image_id: impl Into<String>, detections: Vec<Detection>) -> Self {
        let class_set = detections.iter().map(|d| d.class_name.clone()).collect();
        RectifierSet {
            image_id: image_id.into(),
            detections,
            class_set,
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    /// Distinct detected classes, sorted.
    pub fn class_set(&self) -> &BTreeSet<String> {
        &self.class_set
    }

    pub fn contains(&self, class: &str) -> bool {
        self.class_set.contains(class)
    }

    /// Largest area fraction among the detections of each class.
    pub fn effective_areas(&self) -> BTreeMap<&str, f64> {
        let mut areas: BTreeMap<&str, f64> = BTreeMap::new();
        for d in &self.detections {
            let entry = areas.entry(d.class_name.as_str()).or_insert(d.area_frac);
            if d.area_frac > *entry {
                *entry = d.area_frac;
            }
        }
        areas
    }

    pub fn effective_area(&self, class: &str) -> Option<f64> {
        self.detections
            .iter()
            .filter(|d| d.class_name == class)
            .map(|d| d.area_frac)
            .reduce(f64::max)
    }

    pub(crate) fn retain_classes(&self, keep: impl Fn(&str) -> bool) -> RectifierSet {
        let detections = self
            .detections
            .iter()
            .filter(|d| keep(&d.class_name))
            .cloned()
            .collect();
        RectifierSet::new(self.image_id.clone(), detections)
    }
}

/// The catalog classes asserted by an explanation, plus tokens that looked
/// object-like but did not map to any class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExplanationObjects {
    image_id: String,
    classes: BTreeSet<String>,
    unmapped_tokens: Vec<String>,
}

impl ExplanationObjects {
    /// Build from class names, normalizing and checking catalog membership.
    pub fn new<I, S>(image_id: impl Into<String>, classes: I, catalog: &ClassCatalog) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for raw in classes {
            let name = normalize_name(raw.as_ref());
            if !catalog.contains(&name) {
                return Err(Error::Contract(format!(
                    "class {name:?} is not in the catalog"
                )));
            }
            set.insert(name);
        }
        Ok(ExplanationObjects {
            image_id: image_id.into(),
            classes: set,
            unmapped_tokens: Vec::new(),
        })
    }

    /// Callers guarantee every class is a catalog member.
    pub(crate) fn from_parts(
        image_id: String,
        classes: BTreeSet<String>,
        unmapped_tokens: Vec<String>,
    ) -> Self {
        ExplanationObjects {
            image_id,
            classes,
            unmapped_tokens,
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn classes(&self) -> &BTreeSet<String> {
        &self.classes
    }

    pub fn unmapped_tokens(&self) -> &[String] {
        &self.unmapped_tokens
    }
}

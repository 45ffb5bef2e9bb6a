//! JSONL record formats, streaming ingestion with line-numbered validation,
//! and report emission.
//!
//! | stream       | one line per | shape |
//! |--------------|--------------|-------|
//! | detections   | image        | `{"image_id", "detections": [{"class", "score", "area_frac"}]}` |
//! | caption beams| branch       | `{"image_id", "steps": [{"chosen", "topk": [{"token", "p"}]}]}` |
//! | answers      | image        | `{"image_id", "question", "answers": [{"answer", "p"}]}` |
//! | transcript   | exchange     | `{"image_id", "prompt", "objects": [str]}` |
//! | objects      | image        | `{"image_id", "objects": [str]}` |

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::caption::BeamRecord;
use crate::config::Parameters;
use crate::domain::{normalize_name, ClassCatalog, Detection, ExplanationObjects, RectifierSet};
use crate::embedding::TokenClassMapper;
use crate::error::{Error, Result};
use crate::metrics::{big_to_f64, ratio_to_big, render_3dp, AggregateReport, AggregationMode};
use crate::prompt::{TranscriptAgent, TranscriptEntry};
use crate::vqa::RankedAnswers;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsRecord {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

impl From<&RectifierSet> for DetectionsRecord {
    fn from(r: &RectifierSet) -> Self {
        DetectionsRecord {
            image_id: r.image_id().to_string(),
            detections: r.detections().to_vec(),
        }
    }
}

/// Object names asserted by an explainer for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectsRecord {
    pub image_id: String,
    pub objects: Vec<String>,
}

impl From<&ExplanationObjects> for ObjectsRecord {
    fn from(e: &ExplanationObjects) -> Self {
        ObjectsRecord {
            image_id: e.image_id().to_string(),
            objects: e.classes().iter().cloned().collect(),
        }
    }
}

/// Line-by-line JSONL decoder. Blank lines are skipped; errors carry the
/// 1-based line number.
pub struct JsonlReader<R, T> {
    reader: R,
    source_name: String,
    line_no: usize,
    buf: String,
    _marker: PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> JsonlReader<R, T> {
    pub fn new(reader: R, source_name: impl Into<String>) -> Self {
        JsonlReader {
            reader,
            source_name: source_name.into(),
            line_no: 0,
            buf: String::new(),
            _marker: PhantomData,
        }
    }

    pub fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Record {
            source_name: self.source_name.clone(),
            line,
            message: message.into(),
        }
    }
}

impl<T: DeserializeOwned> JsonlReader<BufReader<File>, T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlReader::new(BufReader::new(file), path.display().to_string()))
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonlReader<R, T> {
    /// `(line number, record)`
    type Item = Result<(usize, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(self.error(self.line_no, e.to_string()))),
            }
            let trimmed = self.buf.trim();
            if trimmed.is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(trimmed)
                    .map(|record| (self.line_no, record))
                    .map_err(|e| self.error(self.line_no, format!("malformed record: {e}"))),
            );
        }
    }
}

fn record_error(source_name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Record {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

/// Rejects repeated image ids within one stream.
struct UniqueIds {
    seen: HashSet<String>,
}

impl UniqueIds {
    fn new() -> Self {
        UniqueIds { seen: HashSet::new() }
    }

    fn check(&mut self, source: &str, line: usize, id: &str) -> Result<()> {
        if !self.seen.insert(id.to_string()) {
            return Err(record_error(source, line, format!("duplicate image_id {id:?}")));
        }
        Ok(())
    }
}

fn validate_detections(
    record: DetectionsRecord,
    catalog: &ClassCatalog,
    source: &str,
    line: usize,
) -> Result<RectifierSet> {
    let mut detections = Vec::with_capacity(record.detections.len());
    for d in &record.detections {
        let class = normalize_name(&d.class_name);
        if !catalog.contains(&class) {
            return Err(record_error(
                source,
                line,
                format!("class {:?} is not in the catalog", d.class_name),
            ));
        }
        let det = Detection::new(catalog, &class, d.score, d.area_frac)
            .map_err(|e| record_error(source, line, e.to_string()))?;
        detections.push(det);
    }
    Ok(RectifierSet::new(record.image_id, detections))
}

/// Read detections from any reader, validating each line.
pub fn read_detections<R: BufRead>(
    reader: R,
    source_name: &str,
    catalog: &ClassCatalog,
) -> Result<Vec<RectifierSet>> {
    let mut ids = UniqueIds::new();
    JsonlReader::<R, DetectionsRecord>::new(reader, source_name)
        .map(|item| {
            let (line, record) = item?;
            ids.check(source_name, line, &record.image_id)?;
            validate_detections(record, catalog, source_name, line)
        })
        .collect()
}

pub fn ingest_detections(path: impl AsRef<Path>, catalog: &ClassCatalog) -> Result<Vec<RectifierSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_detections(BufReader::new(file), &path.display().to_string(), catalog)
}

pub fn read_caption_beams<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<BeamRecord>> {
    JsonlReader::<R, BeamRecord>::new(reader, source_name)
        .map(|item| {
            let (line, beam) = item?;
            beam.validate()
                .map_err(|m| record_error(source_name, line, m))?;
            Ok(beam)
        })
        .collect()
}

pub fn ingest_caption_beams(path: impl AsRef<Path>) -> Result<Vec<BeamRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_caption_beams(BufReader::new(file), &path.display().to_string())
}

/// Group branches by image id, keeping first-seen image order.
pub fn group_beams(beams: Vec<BeamRecord>) -> Vec<(String, Vec<BeamRecord>)> {
    let mut groups: Vec<(String, Vec<BeamRecord>)> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for beam in beams {
        match index.get(&beam.image_id) {
            Some(&i) => groups[i].1.push(beam),
            None => {
                index.insert(beam.image_id.clone(), groups.len());
                groups.push((beam.image_id.clone(), vec![beam]));
            }
        }
    }
    groups
}

pub fn read_ranked_answers<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<RankedAnswers>> {
    let mut ids = UniqueIds::new();
    JsonlReader::<R, RankedAnswers>::new(reader, source_name)
        .map(|item| {
            let (line, answers) = item?;
            ids.check(source_name, line, &answers.image_id)?;
            answers
                .validate()
                .map_err(|m| record_error(source_name, line, m))?;
            Ok(answers)
        })
        .collect()
}

pub fn ingest_ranked_answers(path: impl AsRef<Path>) -> Result<Vec<RankedAnswers>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ranked_answers(BufReader::new(file), &path.display().to_string())
}

pub fn read_transcript<R: BufRead>(reader: R, source_name: &str) -> Result<TranscriptAgent> {
    let mut agent = TranscriptAgent::new();
    for item in JsonlReader::<R, TranscriptEntry>::new(reader, source_name) {
        let (line, entry) = item?;
        agent
            .insert(entry)
            .map_err(|m| record_error(source_name, line, m))?;
    }
    Ok(agent)
}

pub fn ingest_transcript(path: impl AsRef<Path>) -> Result<TranscriptAgent> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_transcript(BufReader::new(file), &path.display().to_string())
}

/// Read object lists and map their names onto catalog classes.
pub fn read_objects<R: BufRead>(
    reader: R,
    source_name: &str,
    mapper: &TokenClassMapper,
) -> Result<Vec<ExplanationObjects>> {
    let mut ids = UniqueIds::new();
    JsonlReader::<R, ObjectsRecord>::new(reader, source_name)
        .map(|item| {
            let (line, record) = item?;
            ids.check(source_name, line, &record.image_id)?;
            Ok(mapper.extract_objects(&record.objects, &record.image_id))
        })
        .collect()
}

pub fn ingest_objects(path: impl AsRef<Path>, mapper: &TokenClassMapper) -> Result<Vec<ExplanationObjects>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_objects(BufReader::new(file), &path.display().to_string(), mapper)
}

pub fn write_jsonl<W: Write, T: Serialize>(mut writer: W, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, &item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_jsonl_file<T: Serialize>(path: impl AsRef<Path>, items: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(BufWriter::new(file), items).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub image_id: String,
    pub rectifier_count: usize,
    pub detected_count: usize,
    pub skipped: bool,
    /// Three decimals; `None` when skipped.
    pub inconsistency: Option<String>,
    pub completeness: Option<String>,
    pub inconsistency_exact: Option<f64>,
    pub completeness_exact: Option<f64>,
}

/// Serialized form of an [`AggregateReport`] together with the parameters
/// that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub parameters: Parameters,
    pub aggregation_mode: AggregationMode,
    pub prominence_threshold: Option<f64>,
    pub n_images: usize,
    pub n_scored: usize,
    pub n_skipped: usize,
    pub mean_inconsistency: Option<String>,
    pub mean_completeness: Option<String>,
    pub mean_inconsistency_exact: Option<f64>,
    pub mean_completeness_exact: Option<f64>,
    /// Exact value as `numerator/denominator`.
    pub mean_inconsistency_ratio: Option<String>,
    pub mean_completeness_ratio: Option<String>,
    pub per_image: Vec<ImageRow>,
}

impl ReportDocument {
    pub fn new(report: &AggregateReport, parameters: &Parameters) -> Self {
        let per_image = report
            .per_image
            .iter()
            .map(|r| {
                let inc = r.inconsistency().map(ratio_to_big);
                let comp = r.completeness().map(ratio_to_big);
                ImageRow {
                    image_id: r.image_id.clone(),
                    rectifier_count: r.rectifier_count,
                    detected_count: r.detected_count,
                    skipped: r.skipped(),
                    inconsistency: inc.as_ref().map(render_3dp),
                    completeness: comp.as_ref().map(render_3dp),
                    inconsistency_exact: inc.as_ref().map(big_to_f64),
                    completeness_exact: comp.as_ref().map(big_to_f64),
                }
            })
            .collect();
        ReportDocument {
            parameters: parameters.clone(),
            aggregation_mode: report.mode,
            prominence_threshold: report.prominence.map(|p| p.threshold()),
            n_images: report.per_image.len(),
            n_scored: report.n_scored,
            n_skipped: report.n_skipped,
            mean_inconsistency: report.mean_inconsistency.as_ref().map(render_3dp),
            mean_completeness: report.mean_completeness.as_ref().map(render_3dp),
            mean_inconsistency_exact: report.mean_inconsistency.as_ref().map(big_to_f64),
            mean_completeness_exact: report.mean_completeness.as_ref().map(big_to_f64),
            mean_inconsistency_ratio: report.mean_inconsistency.as_ref().map(|r| r.to_string()),
            mean_completeness_ratio: report.mean_completeness.as_ref().map(|r| r.to_string()),
            per_image,
        }
    }
}

pub const CSV_HEADER: [&str; 7] = [
    "image_id",
    "prominence",
    "rectifier_count",
    "detected_count",
    "skipped",
    "inconsistency",
    "completeness",
];

/// Row id used for the corpus-level line in CSV output.
pub const CSV_AGGREGATE_ID: &str = "__aggregate__";

/// Write one or more reports. JSON: a single object for one report, an array
/// otherwise. CSV: one row per image per report plus one aggregate row each.
pub fn write_reports<W: Write>(mut writer: W, docs: &[ReportDocument], format: ReportFormat) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<report>", e);
    match format {
        ReportFormat::Json => {
            let text = if docs.len() == 1 {
                serde_json::to_string_pretty(&docs[0])
            } else {
                serde_json::to_string_pretty(docs)
            }
            .expect("report serializes");
            writer.write_all(text.as_bytes()).map_err(io_err)?;
            writer.write_all(b"\n").map_err(io_err)?;
        }
        ReportFormat::Csv => {
            let mut csv = csv::Writer::from_writer(&mut writer);
            let csv_err = |e: csv::Error| Error::Contract(format!("csv write failed: {e}"));
            csv.write_record(CSV_HEADER).map_err(csv_err)?;
            for doc in docs {
                let prominence = doc
                    .prominence_threshold
                    .map(|t| t.to_string())
                    .unwrap_or_default();
                for row in &doc.per_image {
                    csv.write_record([
                        row.image_id.as_str(),
                        &prominence,
                        &row.rectifier_count.to_string(),
                        &row.detected_count.to_string(),
                        &row.skipped.to_string(),
                        row.inconsistency.as_deref().unwrap_or(""),
                        row.completeness.as_deref().unwrap_or(""),
                    ])
                    .map_err(csv_err)?;
                }
                let rect_total: usize = doc.per_image.iter().map(|r| r.rectifier_count).sum();
                let det_total: usize = doc.per_image.iter().map(|r| r.detected_count).sum();
                csv.write_record([
                    CSV_AGGREGATE_ID,
                    &prominence,
                    &rect_total.to_string(),
                    &det_total.to_string(),
                    &doc.n_skipped.to_string(),
                    doc.mean_inconsistency.as_deref().unwrap_or(""),
                    doc.mean_completeness.as_deref().unwrap_or(""),
                ])
                .map_err(csv_err)?;
            }
            csv.flush().map_err(io_err)?;
        }
    }
    writer.flush().map_err(io_err)
}

pub fn emit_report(
    report: &AggregateReport,
    parameters: &Parameters,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_reports(BufWriter::new(file), &[ReportDocument::new(report, parameters)], format)
}

//! The `rectify` command line. Exit codes: 0 success, 1 input or validation
//! error, 2 usage error. Diagnostics go to stderr; data goes to `--out` or
//! stdout.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::caption::{build_caption_tree, rectify_beams, top_beam, BeamRecord, RectifiedCaption, TableProvider};
use crate::config::Parameters;
use crate::domain::{ClassCatalog, ExplanationObjects, RectifierSet};
use crate::embedding::{EmbeddingStore, Lookup, TokenClassMapper};
use crate::error::{Error, Result};
use crate::io::{
    group_beams, ingest_caption_beams, ingest_detections, ingest_objects, ingest_ranked_answers,
    ingest_transcript, write_jsonl, write_jsonl_file, write_reports, DetectionsRecord, ObjectsRecord,
    ReportDocument, ReportFormat,
};
use crate::metrics::{evaluate_corpus, AggregationMode, ProminenceSpec};
use crate::prompt::run_session;
use crate::synth::{simulate, ExplainerOutput, ExplainerShape, NoiseSpec, SceneSpec};
use crate::vqa::{baseline_objects, rectify_answers, vqa_objects};

#[derive(Debug, Parser)]
#[command(name = "rectify", version, about = "Rectify model explanations against detector output and score them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML parameter file; command-line flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Class catalog, one name per line (default: the built-in 80 COCO classes)
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// word2vec text-format embeddings used to map tokens onto classes
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub similarity_threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Map tokens onto catalog classes and report each outcome
    MapVocab {
        #[command(flatten)]
        common: Common,
        /// Tokens to map, one per line (default: the embedding vocabulary)
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rectify captions from recorded beams or a next-token table
    RectifyCaption {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detections: PathBuf,
        /// Recorded branches, one JSON line each
        #[arg(long, conflicts_with = "provider", required_unless_present = "provider")]
        beams: Option<PathBuf>,
        /// JSON next-token table used to build caption trees
        #[arg(long)]
        provider: Option<PathBuf>,
        #[arg(long)]
        branching: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        beam_cap: Option<usize>,
        /// Rectified captions, one JSON line per branch
        #[arg(long)]
        out: Option<PathBuf>,
        /// Objects of each image's top rectified caption
        #[arg(long)]
        objects_out: Option<PathBuf>,
        /// Objects of each image's top unrectified caption
        #[arg(long)]
        baseline_out: Option<PathBuf>,
    },
    /// Keep the top-k ranked answers that agree with the detector
    RectifyVqa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        answers: PathBuf,
        #[arg(long, visible_alias = "topk")]
        top_k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        objects_out: Option<PathBuf>,
        #[arg(long)]
        baseline_out: Option<PathBuf>,
    },
    /// Replay a prompt-rectification dialogue from a transcript
    RectifyPrompt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        max_rounds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        objects_out: Option<PathBuf>,
    },
    /// Score explanation objects against detections
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        objects: PathBuf,
        #[arg(long, value_enum, visible_alias = "mode")]
        aggregation: Option<AggregationMode>,
        /// Drop detected classes whose largest area fraction is below this
        #[arg(long)]
        prominence: Option<f64>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score against detections filtered at each prominence threshold
    Prominence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        objects: PathBuf,
        #[arg(long = "threshold", num_args = 1..)]
        thresholds: Vec<f64>,
        #[arg(long, value_enum, visible_alias = "mode")]
        aggregation: Option<AggregationMode>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus
    Simulate {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SceneSpec::default().n_images)]
        images: usize,
        #[arg(long, default_value_t = SceneSpec::default().min_classes)]
        min_classes: usize,
        #[arg(long, default_value_t = SceneSpec::default().max_classes)]
        max_classes: usize,
        #[arg(long, default_value_t = SceneSpec::default().area_min)]
        area_min: f64,
        #[arg(long, default_value_t = SceneSpec::default().area_max)]
        area_max: f64,
        #[arg(long, default_value_t = SceneSpec::default().max_instances)]
        max_instances: usize,
        #[arg(long, visible_alias = "halluc", default_value_t = 0.0)]
        hallucination_rate: f64,
        #[arg(long, visible_alias = "omit", default_value_t = 0.0)]
        omission_rate: f64,
        #[arg(long, visible_alias = "jitter", default_value_t = 0.0)]
        rank_jitter: f64,
        #[arg(long, value_enum, default_value_t = ExplainerShape::ObjectList)]
        shape: ExplainerShape,
        /// Scene detections
        #[arg(long)]
        detections_out: PathBuf,
        /// Explainer outputs in the chosen shape
        #[arg(long)]
        out: PathBuf,
    },
}

/// One line of `map-vocab` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token: String,
    /// `exact`, `similar`, `below_threshold` or `no_embedding`.
    pub status: String,
    pub class: Option<String>,
    pub similarity: Option<f64>,
}

impl VocabEntry {
    pub fn from_lookup(token: &str, lookup: &Lookup) -> Self {
        let (status, class, similarity) = match lookup {
            Lookup::Exact(c) => ("exact", Some(c.clone()), Some(1.0)),
            Lookup::Similar(m) => ("similar", Some(m.class.clone()), Some(m.similarity)),
            Lookup::BelowThreshold { best } => (
                "below_threshold",
                best.as_ref().map(|m| m.class.clone()),
                best.as_ref().map(|m| m.similarity),
            ),
            Lookup::NoEmbedding => ("no_embedding", None, None),
        };
        VocabEntry {
            token: token.to_string(),
            status: status.to_string(),
            class,
            similarity,
        }
    }
}

/// Parse `args` and run. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
                2
            } else {
                let _ = write!(stdout, "{rendered}");
                0
            };
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

struct Context {
    params: Parameters,
    mapper: TokenClassMapper,
}

impl Context {
    fn load(common: &Common, adjust: impl FnOnce(&mut Parameters)) -> Result<Self> {
        let mut params = match &common.config {
            Some(path) => Parameters::load(path)?,
            None => Parameters::default(),
        };
        if let Some(t) = common.similarity_threshold {
            params.similarity_threshold = t;
        }
        adjust(&mut params);
        params.validate()?;
        let catalog = load_catalog(common.catalog.as_deref())?;
        let store = match &common.embeddings {
            Some(path) => EmbeddingStore::load(path, None)?,
            None => EmbeddingStore::empty(),
        };
        let mapper = TokenClassMapper::new(store, catalog, params.similarity_threshold)?;
        Ok(Context { params, mapper })
    }

    fn catalog(&self) -> &ClassCatalog {
        self.mapper.catalog()
    }
}

fn load_catalog(path: Option<&Path>) -> Result<ClassCatalog> {
    match path {
        Some(p) => ClassCatalog::load(p),
        None => Ok(ClassCatalog::coco80()),
    }
}

fn with_output<F>(path: Option<&Path>, stdout: &mut dyn Write, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(file);
            body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(p, e))
        }
        None => body(stdout).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn write_objects(path: Option<&Path>, objects: &[ExplanationObjects]) -> Result<()> {
    match path {
        Some(p) => write_jsonl_file(p, objects.iter().map(ObjectsRecord::from)),
        None => Ok(()),
    }
}

fn rect_index(rects: &[RectifierSet]) -> HashMap<&str, &RectifierSet> {
    rects.iter().map(|r| (r.image_id(), r)).collect()
}

/// Every explainer image needs detections, and every detection record needs
/// an explainer output.
fn check_matched<'a>(explainer_ids: impl IntoIterator<Item = &'a str>, rects: &[RectifierSet]) -> Result<()> {
    let explainer: std::collections::BTreeSet<&str> = explainer_ids.into_iter().collect();
    let detected: std::collections::BTreeSet<&str> = rects.iter().map(|r| r.image_id()).collect();
    let unmatched: Vec<String> = explainer
        .symmetric_difference(&detected)
        .map(|s| s.to_string())
        .collect();
    if unmatched.is_empty() {
        Ok(())
    } else {
        Err(Error::UnmatchedImages(unmatched))
    }
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match command {
        Command::MapVocab { common, tokens, out } => {
            let ctx = Context::load(&common, |_| {})?;
            let tokens: Vec<String> = match tokens {
                Some(path) => {
                    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
                    let mut list = Vec::new();
                    for line in BufReader::new(file).lines() {
                        let line = line.map_err(|e| Error::io(&path, e))?;
                        let t = line.trim();
                        if !t.is_empty() {
                            list.push(t.to_string());
                        }
                    }
                    list
                }
                None => ctx.mapper.store().tokens().into_iter().map(str::to_string).collect(),
            };
            let entries: Vec<VocabEntry> = tokens
                .iter()
                .map(|t| VocabEntry::from_lookup(t, &ctx.mapper.lookup(t)))
                .collect();
            let mapped = entries.iter().filter(|e| e.status == "exact" || e.status == "similar").count();
            with_output(out.as_deref(), stdout, |w| write_jsonl(w, &entries))?;
            let _ = writeln!(stderr, "mapped {mapped} of {} tokens", entries.len());
            Ok(())
        }

        Command::RectifyCaption {
            common,
            detections,
            beams,
            provider,
            branching,
            top_k,
            max_len,
            beam_cap,
            out,
            objects_out,
            baseline_out,
        } => {
            let ctx = Context::load(&common, |p| {
                p.branching = branching.unwrap_or(p.branching);
                p.top_k = top_k.unwrap_or(p.top_k);
                p.max_len = max_len.unwrap_or(p.max_len);
                p.beam_cap = beam_cap.unwrap_or(p.beam_cap);
            })?;
            let rects = ingest_detections(&detections, ctx.catalog())?;
            let index = rect_index(&rects);
            let groups: Vec<(String, Vec<BeamRecord>)> = match (&beams, &provider) {
                (Some(path), _) => {
                    let groups = group_beams(ingest_caption_beams(path)?);
                    check_matched(groups.iter().map(|g| g.0.as_str()), &rects)?;
                    groups
                }
                (None, Some(path)) => {
                    let table = TableProvider::load(path)?;
                    let params = ctx.params.tree_params();
                    rects
                        .iter()
                        .map(|r| {
                            let tree = build_caption_tree(&table, r.image_id(), params)?;
                            Ok((r.image_id().to_string(), tree.to_beam_records()))
                        })
                        .collect::<Result<_>>()?
                }
                (None, None) => unreachable!("clap requires one source"),
            };

            let mut all: Vec<RectifiedCaption> = Vec::new();
            let mut rectified_objects = Vec::new();
            let mut baseline = Vec::new();
            for (image_id, branches) in &groups {
                let rect = index[image_id.as_str()];
                let captions = rectify_beams(branches, rect, &ctx.mapper);
                rectified_objects.push(match captions.first() {
                    Some(c) => ctx.mapper.extract_objects(&c.tokens, image_id),
                    None => ctx.mapper.extract_objects::<&str>(&[], image_id),
                });
                let top = top_beam(branches).map(|b| b.tokens()).unwrap_or_default();
                baseline.push(ctx.mapper.extract_objects(&top, image_id));
                all.extend(captions);
            }
            with_output(out.as_deref(), stdout, |w| write_jsonl(w, &all))?;
            write_objects(objects_out.as_deref(), &rectified_objects)?;
            write_objects(baseline_out.as_deref(), &baseline)?;
            let replaced: usize = all.iter().map(|c| c.replacements.len()).sum();
            let flagged: usize = all.iter().map(|c| c.flags.len()).sum();
            let _ = writeln!(
                stderr,
                "rectified {} captions over {} images: {replaced} replacements, {flagged} flagged tokens",
                all.len(),
                groups.len()
            );
            Ok(())
        }

        Command::RectifyVqa {
            common,
            detections,
            answers,
            top_k,
            out,
            objects_out,
            baseline_out,
        } => {
            let ctx = Context::load(&common, |p| p.vqa_top_k = top_k.unwrap_or(p.vqa_top_k))?;
            let rects = ingest_detections(&detections, ctx.catalog())?;
            let ranked = ingest_ranked_answers(&answers)?;
            check_matched(ranked.iter().map(|r| r.image_id.as_str()), &rects)?;
            let index = rect_index(&rects);
            let k = ctx.params.vqa_top_k;
            let results = ranked
                .iter()
                .map(|r| rectify_answers(r, k, index[r.image_id.as_str()], &ctx.mapper))
                .collect::<Result<Vec<_>>>()?;
            let objects: Vec<_> = results.iter().map(|r| vqa_objects(r, &ctx.mapper)).collect();
            let base: Vec<_> = ranked.iter().map(|r| baseline_objects(r, k, &ctx.mapper)).collect();
            with_output(out.as_deref(), stdout, |w| write_jsonl(w, &results))?;
            write_objects(objects_out.as_deref(), &objects)?;
            write_objects(baseline_out.as_deref(), &base)?;
            let short = results.iter().filter(|r| r.has_shortfall()).count();
            let _ = writeln!(stderr, "rectified {} answer lists; {short} fell short of {k}", results.len());
            Ok(())
        }

        Command::RectifyPrompt {
            common,
            detections,
            transcript,
            max_rounds,
            out,
            objects_out,
        } => {
            let ctx = Context::load(&common, |p| p.max_rounds = max_rounds.unwrap_or(p.max_rounds))?;
            let rects = ingest_detections(&detections, ctx.catalog())?;
            let mut agent = ingest_transcript(&transcript)?;
            let sessions = rects
                .iter()
                .map(|r| run_session(&mut agent, r.image_id(), r, &ctx.mapper, ctx.params.max_rounds))
                .collect::<Result<Vec<_>>>()?;
            let objects: Vec<_> = sessions.iter().map(|s| s.final_objects()).collect();
            with_output(out.as_deref(), stdout, |w| write_jsonl(w, &sessions))?;
            write_objects(objects_out.as_deref(), &objects)?;
            let converged = sessions.iter().filter(|s| s.converged()).count();
            let _ = writeln!(stderr, "{converged} of {} sessions converged", sessions.len());
            for s in sessions.iter().filter(|s| !s.converged()) {
                let _ = writeln!(stderr, "image {:?}: {:?} after {} rounds", s.image_id, s.terminal, s.rounds.len());
            }
            Ok(())
        }

        Command::Evaluate {
            common,
            detections,
            objects,
            aggregation,
            prominence,
            format,
            out,
        } => {
            let ctx = Context::load(&common, |p| p.aggregation = aggregation.unwrap_or(p.aggregation))?;
            let prominence = prominence.map(ProminenceSpec::new).transpose()?;
            let rects = ingest_detections(&detections, ctx.catalog())?;
            let explanations = ingest_objects(&objects, &ctx.mapper)?;
            let report = evaluate_corpus(&explanations, &rects, ctx.params.aggregation, prominence)?;
            let doc = ReportDocument::new(&report, &ctx.params);
            summarize(stderr, &doc);
            emit(out.as_deref(), stdout, &[doc], format)
        }

        Command::Prominence {
            common,
            detections,
            objects,
            thresholds,
            aggregation,
            format,
            out,
        } => {
            let ctx = Context::load(&common, |p| {
                p.aggregation = aggregation.unwrap_or(p.aggregation);
                if !thresholds.is_empty() {
                    p.prominence_thresholds = thresholds;
                }
            })?;
            if ctx.params.prominence_thresholds.is_empty() {
                return Err(Error::param("at least one prominence threshold is required"));
            }
            let rects = ingest_detections(&detections, ctx.catalog())?;
            let explanations = ingest_objects(&objects, &ctx.mapper)?;
            let docs = ctx
                .params
                .prominence_thresholds
                .iter()
                .map(|&t| {
                    let report = evaluate_corpus(
                        &explanations,
                        &rects,
                        ctx.params.aggregation,
                        Some(ProminenceSpec::new(t)?),
                    )?;
                    Ok(ReportDocument::new(&report, &ctx.params))
                })
                .collect::<Result<Vec<_>>>()?;
            for d in &docs {
                summarize(stderr, d);
            }
            emit(out.as_deref(), stdout, &docs, format)
        }

        Command::Simulate {
            catalog,
            seed,
            images,
            min_classes,
            max_classes,
            area_min,
            area_max,
            max_instances,
            hallucination_rate,
            omission_rate,
            rank_jitter,
            shape,
            detections_out,
            out,
        } => {
            let catalog = load_catalog(catalog.as_deref())?;
            let scene = SceneSpec {
                seed,
                n_images: images,
                min_classes,
                max_classes,
                area_min,
                area_max,
                max_instances,
            };
            let noise = NoiseSpec {
                hallucination_rate,
                omission_rate,
                rank_jitter,
            };
            let corpus = simulate(&scene, &noise, shape, &catalog)?;
            write_jsonl_file(&detections_out, corpus.scenes.iter().map(DetectionsRecord::from))?;
            write_synthetic(&out, &corpus.outputs)?;
            let _ = writeln!(stderr, "simulated {} images", corpus.scenes.len());
            Ok(())
        }
    }
}

fn write_synthetic(path: &Path, outputs: &[ExplainerOutput]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let result = (|| {
        for o in outputs {
            match o {
                ExplainerOutput::CaptionBeam(b) => serde_json::to_writer(&mut w, b)?,
                ExplainerOutput::RankedAnswers(a) => serde_json::to_writer(&mut w, a)?,
                ExplainerOutput::ObjectList(r) => serde_json::to_writer(&mut w, r)?,
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    })();
    result.map_err(|e: std::io::Error| Error::io(path, e))
}

fn summarize(stderr: &mut dyn Write, doc: &ReportDocument) {
    let label = doc
        .prominence_threshold
        .map(|t| format!(" (prominence {t})"))
        .unwrap_or_default();
    let _ = writeln!(
        stderr,
        "scored {} images, skipped {}{label}: inconsistency {}, completeness {}",
        doc.n_scored,
        doc.n_skipped,
        doc.mean_inconsistency.as_deref().unwrap_or("n/a"),
        doc.mean_completeness.as_deref().unwrap_or("n/a"),
    );
}

fn emit(path: Option<&Path>, stdout: &mut dyn Write, docs: &[ReportDocument], format: ReportFormat) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            write_reports(BufWriter::new(file), docs, format)
        }
        None => write_reports(stdout, docs, format),
    }
}

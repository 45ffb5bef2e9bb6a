mod common;

use std::fmt::Debug;

use common::exact_mapper;
use rectify_core::caption::{rectify_beams, BeamRecord, RectifiedCaption};
use rectify_core::cli::VocabEntry;
use rectify_core::io::{
    read_caption_beams, read_detections, read_objects, read_ranked_answers, read_transcript, write_jsonl,
    write_reports, DetectionsRecord, JsonlReader, ObjectsRecord, ReportDocument, ReportFormat,
};
use rectify_core::metrics::evaluate_corpus;
use rectify_core::prompt::{run_session, PromptAgent, RectificationSession, ScriptedAgent, TranscriptEntry};
use rectify_core::synth::{simulate, ExplainerOutput, ExplainerShape, NoiseSpec, SceneSpec};
use rectify_core::vqa::{rectify_answers, RankedAnswers, VqaRectification};
use rectify_core::{AggregationMode, ClassCatalog, Parameters};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn emit<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, items).unwrap();
    buf
}

fn reread<T: DeserializeOwned>(bytes: &[u8]) -> Vec<T> {
    JsonlReader::<_, T>::new(bytes, "mem").map(|r| r.unwrap().1).collect()
}

fn assert_roundtrip<T: Serialize + DeserializeOwned + PartialEq + Debug>(items: &[T]) {
    let bytes = emit(items);
    let back: Vec<T> = reread(&bytes);
    assert_eq!(back, items);
    assert_eq!(emit(&back), bytes);
}

fn corpus(shape: ExplainerShape) -> rectify_core::synth::SyntheticCorpus {
    let spec = SceneSpec {
        seed: 5,
        n_images: 25,
        ..SceneSpec::default()
    };
    let noise = NoiseSpec {
        hallucination_rate: 0.3,
        omission_rate: 0.2,
        rank_jitter: 0.3,
    };
    simulate(&spec, &noise, shape, &ClassCatalog::coco80()).unwrap()
}

#[test]
fn detections_roundtrip() {
    let c = corpus(ExplainerShape::ObjectList);
    let records: Vec<DetectionsRecord> = c.scenes.iter().map(DetectionsRecord::from).collect();
    assert_roundtrip(&records);
    let back = read_detections(&emit(&records)[..], "mem", &ClassCatalog::coco80()).unwrap();
    assert_eq!(back, c.scenes);
}

#[test]
fn objects_roundtrip() {
    let c = corpus(ExplainerShape::ObjectList);
    let records: Vec<ObjectsRecord> = c
        .outputs
        .iter()
        .map(|o| match o {
            ExplainerOutput::ObjectList(r) => r.clone(),
            _ => unreachable!(),
        })
        .collect();
    assert_roundtrip(&records);
    let mapper = exact_mapper();
    let parsed = read_objects(&emit(&records)[..], "mem", &mapper).unwrap();
    let reemitted: Vec<ObjectsRecord> = parsed.iter().map(ObjectsRecord::from).collect();
    let again = read_objects(&emit(&reemitted)[..], "mem", &mapper).unwrap();
    assert_eq!(parsed, again);
}

#[test]
fn beams_and_rectified_captions_roundtrip() {
    let c = corpus(ExplainerShape::CaptionBeam);
    let beams: Vec<BeamRecord> = c
        .outputs
        .iter()
        .map(|o| match o {
            ExplainerOutput::CaptionBeam(b) => b.clone(),
            _ => unreachable!(),
        })
        .collect();
    assert_roundtrip(&beams);
    assert_eq!(read_caption_beams(&emit(&beams)[..], "mem").unwrap(), beams);
    let mapper = exact_mapper();
    let rectified: Vec<RectifiedCaption> = beams
        .iter()
        .zip(&c.scenes)
        .flat_map(|(b, s)| rectify_beams(std::slice::from_ref(b), s, &mapper))
        .collect();
    assert_roundtrip(&rectified);
}

#[test]
fn answers_and_vqa_results_roundtrip() {
    let c = corpus(ExplainerShape::RankedAnswers);
    let ranked: Vec<RankedAnswers> = c
        .outputs
        .iter()
        .map(|o| match o {
            ExplainerOutput::RankedAnswers(r) => r.clone(),
            _ => unreachable!(),
        })
        .collect();
    assert_roundtrip(&ranked);
    assert_eq!(read_ranked_answers(&emit(&ranked)[..], "mem").unwrap(), ranked);
    let mapper = exact_mapper();
    let results: Vec<VqaRectification> = ranked
        .iter()
        .zip(&c.scenes)
        .map(|(r, s)| rectify_answers(r, 10, s, &mapper).unwrap())
        .collect();
    assert_roundtrip(&results);
}

/// Records every exchange so it can be written as a transcript.
struct Recorder<'a> {
    inner: &'a mut ScriptedAgent,
    log: Vec<TranscriptEntry>,
}

impl PromptAgent for Recorder<'_> {
    fn ask(&mut self, image_id: &str, prompt: &str) -> Result<Vec<String>, rectify_core::prompt::AgentFailure> {
        let objects = self.inner.ask(image_id, prompt)?;
        self.log.push(TranscriptEntry {
            image_id: image_id.to_string(),
            prompt: prompt.to_string(),
            objects: objects.clone(),
        });
        Ok(objects)
    }
}

#[test]
fn transcripts_and_sessions_roundtrip() {
    let c = corpus(ExplainerShape::ObjectList);
    let mapper = exact_mapper();
    let mut scripted = ScriptedAgent::new();
    for o in &c.outputs {
        let ExplainerOutput::ObjectList(r) = o else { unreachable!() };
        scripted.set_answers(&r.image_id, r.objects.clone());
    }
    let mut recorder = Recorder {
        inner: &mut scripted,
        log: Vec::new(),
    };
    let live: Vec<RectificationSession> = c
        .scenes
        .iter()
        .map(|s| run_session(&mut recorder, s.image_id(), s, &mapper, 3).unwrap())
        .collect();
    assert_roundtrip(&recorder.log);
    assert_roundtrip(&live);

    let mut replay = read_transcript(&emit(&recorder.log)[..], "mem").unwrap();
    let replayed: Vec<RectificationSession> = c
        .scenes
        .iter()
        .map(|s| run_session(&mut replay, s.image_id(), s, &mapper, 3).unwrap())
        .collect();
    assert_eq!(replayed, live);
}

#[test]
fn report_json_roundtrip() {
    let c = corpus(ExplainerShape::ObjectList);
    let mapper = exact_mapper();
    let explanations: Vec<_> = c
        .outputs
        .iter()
        .map(|o| match o {
            ExplainerOutput::ObjectList(r) => mapper.extract_objects(&r.objects, &r.image_id),
            _ => unreachable!(),
        })
        .collect();
    for mode in [AggregationMode::Macro, AggregationMode::Micro] {
        let report = evaluate_corpus(&explanations, &c.scenes, mode, None).unwrap();
        let doc = ReportDocument::new(&report, &Parameters::default());
        let mut bytes = Vec::new();
        write_reports(&mut bytes, std::slice::from_ref(&doc), ReportFormat::Json).unwrap();
        let back: ReportDocument = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, doc);
    }
}

#[test]
fn vocab_entries_roundtrip() {
    let mapper = common::fixture_mapper(0.5);
    let entries: Vec<VocabEntry> = ["puppy", "the", "dog", "zzz", "table"]
        .iter()
        .map(|t| VocabEntry::from_lookup(t, &mapper.lookup(t)))
        .collect();
    assert_roundtrip(&entries);
}

//! Seeded synthetic scenes and noisy explainer outputs, for exercising the
//! rectifiers and metrics without trained models.
//!
//! All randomness comes from ChaCha8 streams: scene `i` uses stream `i` of
//! the scene seed, and each explainer output uses the stream given by the
//! FNV-1a hash of its image id. Only IEEE basic arithmetic is applied to the
//! drawn values, so outputs are identical across platforms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caption::{BeamRecord, Step, TokenProb, DEFAULT_END_TOKEN};
use crate::domain::{ClassCatalog, Detection, RectifierSet};
use crate::error::{Error, Result};
use crate::io::ObjectsRecord;
use crate::vqa::{Answer, RankedAnswers, BASE_QUESTION};

pub mod oracle;

pub use oracle::oracle_metrics;

/// Filler alternative offered at every object step; names no class.
pub const NON_OBJECT_FILLER: &str = "thing";

const ANSWER_LIST_LEN: usize = 20;
const EXPLAINER_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_images: usize,
    pub min_classes: usize,
    pub max_classes: usize,
    /// Area fractions are `area_min + (area_max - area_min) * u^2`, `u`
    /// uniform in [0, 1), rounded to 4 decimals and clipped to [0, 1].
    pub area_min: f64,
    pub area_max: f64,
    /// Detections per class are uniform in `1..=max_instances`.
    pub max_instances: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            n_images: 200,
            min_classes: 2,
            max_classes: 6,
            area_min: 0.005,
            area_max: 0.6,
            max_instances: 3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        if catalog.is_empty() {
            return Err(Error::param("catalog is empty"));
        }
        if self.min_classes > self.max_classes {
            return Err(Error::param(format!(
                "classes per image range {}..={} is empty",
                self.min_classes, self.max_classes
            )));
        }
        if self.max_classes > catalog.len() {
            return Err(Error::param(format!(
                "max classes per image {} exceeds catalog size {}",
                self.max_classes,
                catalog.len()
            )));
        }
        if !(0.0 <= self.area_min && self.area_min <= self.area_max && self.area_max <= 1.0) {
            return Err(Error::param(format!(
                "area range [{}, {}] must lie within [0, 1]",
                self.area_min, self.area_max
            )));
        }
        if self.max_instances < 1 {
            return Err(Error::param("max instances must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per scene class, probability that an off-scene class is also asserted.
    pub hallucination_rate: f64,
    /// Per scene class, probability that it is left out.
    pub omission_rate: f64,
    /// Per adjacent pair in a ranked list, probability the two are swapped.
    pub rank_jitter: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hallucination rate", self.hallucination_rate),
            ("omission rate", self.omission_rate),
            ("rank jitter", self.rank_jitter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerShape {
    CaptionBeam,
    RankedAnswers,
    ObjectList,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExplainerOutput {
    CaptionBeam(BeamRecord),
    RankedAnswers(RankedAnswers),
    ObjectList(ObjectsRecord),
}

impl ExplainerOutput {
    pub fn image_id(&self) -> &str {
        match self {
            ExplainerOutput::CaptionBeam(b) => &b.image_id,
            ExplainerOutput::RankedAnswers(a) => &a.image_id,
            ExplainerOutput::ObjectList(o) => &o.image_id,
        }
    }
}

pub fn image_id(index: usize) -> String {
    format!("synth-{index:06}")
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

pub fn generate_scenes(spec: &SceneSpec, catalog: &ClassCatalog) -> Result<Vec<RectifierSet>> {
    spec.validate(catalog)?;
    (0..spec.n_images)
        .map(|i| generate_scene(spec, catalog, i))
        .collect()
}

fn generate_scene(spec: &SceneSpec, catalog: &ClassCatalog, index: usize) -> Result<RectifierSet> {
    let mut rng = stream_rng(spec.seed, index as u64);
    let n = rng.gen_range(spec.min_classes..=spec.max_classes);
    let picks = rand::seq::index::sample(&mut rng, catalog.len(), n);
    let mut detections = Vec::new();
    for class_index in picks.iter() {
        let class = &catalog.classes()[class_index];
        let instances = rng.gen_range(1..=spec.max_instances);
        for _ in 0..instances {
            let score = round4(rng.gen_range(0.5..1.0));
            let u: f64 = rng.gen();
            let area = round4(spec.area_min + (spec.area_max - spec.area_min) * u * u).clamp(0.0, 1.0);
            detections.push(Detection::new(catalog, class, score, area)?);
        }
    }
    Ok(RectifierSet::new(image_id(index), detections))
}

fn dedup_in_order(items: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(items.len());
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// Strictly decreasing probabilities starting at `first`.
fn descending_probs(rng: &mut ChaCha8Rng, n: usize, first: f64) -> Vec<f64> {
    let ratio = rng.gen_range(0.5..0.9);
    let mut p = first;
    (0..n)
        .map(|_| {
            let v = p;
            p *= ratio;
            v
        })
        .collect()
}

fn jitter<T>(rng: &mut ChaCha8Rng, items: &mut [T], rate: f64) {
    for i in 1..items.len() {
        if rng.gen_bool(rate) {
            items.swap(i - 1, i);
        }
    }
}

/// Simulate an explainer's output for a scene. With zero noise the asserted
/// classes are exactly the scene's classes.
pub fn noisy_explainer(
    scene: &RectifierSet,
    catalog: &ClassCatalog,
    noise: &NoiseSpec,
    shape: ExplainerShape,
    seed: u64,
) -> Result<ExplainerOutput> {
    noise.validate()?;
    let mut rng = stream_rng(seed ^ EXPLAINER_SEED_MIX, fnv1a64(scene.image_id().as_bytes()));
    let scene_classes: Vec<&String> = scene.class_set().iter().collect();
    let off_scene: Vec<&str> = catalog.iter().filter(|c| !scene.contains(c)).collect();

    let mut asserted = Vec::new();
    for class in &scene_classes {
        if !rng.gen_bool(noise.omission_rate) {
            asserted.push(class.to_string());
        }
        if rng.gen_bool(noise.hallucination_rate) {
            if let Some(h) = off_scene.choose(&mut rng) {
                asserted.push(h.to_string());
            }
        }
    }
    let mut asserted = dedup_in_order(asserted);
    asserted.shuffle(&mut rng);
    let image_id = scene.image_id().to_string();

    Ok(match shape {
        ExplainerShape::ObjectList => ExplainerOutput::ObjectList(ObjectsRecord {
            image_id,
            objects: asserted,
        }),
        ExplainerShape::RankedAnswers => {
            let mut omitted: Vec<String> = scene_classes
                .iter()
                .filter(|c| !asserted.contains(c))
                .map(|c| c.to_string())
                .collect();
            omitted.shuffle(&mut rng);
            let mut ranking = asserted;
            ranking.extend(omitted);
            let mut distractors: Vec<&str> = off_scene
                .iter()
                .copied()
                .filter(|c| !ranking.iter().any(|r| r == c))
                .collect();
            distractors.shuffle(&mut rng);
            let room = ANSWER_LIST_LEN.saturating_sub(ranking.len());
            ranking.extend(distractors.into_iter().take(room).map(str::to_string));
            jitter(&mut rng, &mut ranking, noise.rank_jitter);
            let first = rng.gen_range(0.3..0.9);
            let probs = descending_probs(&mut rng, ranking.len(), first);
            ExplainerOutput::RankedAnswers(RankedAnswers {
                image_id,
                question: BASE_QUESTION.to_string(),
                answers: ranking
                    .into_iter()
                    .zip(probs)
                    .map(|(answer, p)| Answer { answer, p })
                    .collect(),
            })
        }
        ExplainerShape::CaptionBeam => {
            let steps = caption_steps(&mut rng, scene, &scene_classes, &off_scene, &asserted, noise);
            ExplainerOutput::CaptionBeam(BeamRecord { image_id, steps })
        }
    })
}

fn filler_step(chosen: &str, others: &[&str]) -> Step {
    let mut topk = vec![TokenProb::new(chosen, 0.7)];
    let mut p = 0.2;
    for o in others {
        topk.push(TokenProb::new(*o, p));
        p /= 2.0;
    }
    Step {
        chosen: chosen.to_string(),
        topk,
    }
}

/// "a <obj> and a <obj> ... <end>", where each object step carries a few
/// alternatives: scene classes, off-scene classes and a non-object filler.
fn caption_steps(
    rng: &mut ChaCha8Rng,
    scene: &RectifierSet,
    scene_classes: &[&String],
    off_scene: &[&str],
    asserted: &[String],
    noise: &NoiseSpec,
) -> Vec<Step> {
    let mut steps = Vec::new();
    if asserted.is_empty() {
        steps.push(filler_step("a", &["the"]));
        steps.push(filler_step("picture", &["photo"]));
    }
    for (i, object) in asserted.iter().enumerate() {
        if i > 0 {
            steps.push(filler_step("and", &["with"]));
        }
        steps.push(filler_step("a", &["the", "one"]));

        let mut in_scene: Vec<&str> = scene_classes
            .iter()
            .map(|c| c.as_str())
            .filter(|c| c != object)
            .collect();
        in_scene.shuffle(rng);
        let mut alternatives: Vec<String> = in_scene.iter().take(2).map(|c| c.to_string()).collect();
        for c in off_scene.choose_multiple(rng, 2) {
            if c != object && !scene.contains(c) {
                alternatives.push(c.to_string());
            }
        }
        alternatives.push(NON_OBJECT_FILLER.to_string());
        alternatives.shuffle(rng);

        let mut ranking = vec![object.clone()];
        ranking.extend(alternatives);
        let mut ranking = dedup_in_order(ranking);
        jitter(rng, &mut ranking, noise.rank_jitter);
        let first = rng.gen_range(0.4..0.9);
        let probs = descending_probs(rng, ranking.len(), first);
        let topk: Vec<TokenProb> = ranking
            .into_iter()
            .zip(probs)
            .map(|(t, p)| TokenProb::new(t, p))
            .collect();
        steps.push(Step {
            chosen: topk[0].token.clone(),
            topk,
        });
    }
    steps.push(filler_step(DEFAULT_END_TOKEN, &["and"]));
    steps
}

/// Scenes plus one explainer output per scene, in image order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub scenes: Vec<RectifierSet>,
    pub outputs: Vec<ExplainerOutput>,
}

pub fn simulate(
    scene_spec: &SceneSpec,
    noise: &NoiseSpec,
    shape: ExplainerShape,
    catalog: &ClassCatalog,
) -> Result<SyntheticCorpus> {
    let scenes = generate_scenes(scene_spec, catalog)?;
    let outputs = scenes
        .iter()
        .map(|s| noisy_explainer(s, catalog, noise, shape, scene_spec.seed))
        .collect::<Result<_>>()?;
    Ok(SyntheticCorpus { scenes, outputs })
}

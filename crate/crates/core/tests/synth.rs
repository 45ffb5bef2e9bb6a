use rectify_core::io::ObjectsRecord;
use rectify_core::metrics::evaluate_corpus;
use rectify_core::synth::{
    generate_scenes, oracle_metrics, simulate, ExplainerOutput, ExplainerShape, NoiseSpec, SceneSpec,
};
use rectify_core::{AggregationMode, ClassCatalog, TokenClassMapper};

/// 0.1% and 99.9% quantiles of chi-square with 79 degrees of freedom.
const CHI2_79_LOW: f64 = 45.76422169444206;
const CHI2_79_HIGH: f64 = 123.59436550758484;

#[test]
fn class_frequencies_are_uniform() {
    let catalog = ClassCatalog::coco80();
    let scenes = generate_scenes(&SceneSpec::default(), &catalog).unwrap();
    assert_eq!(scenes.len(), 200);
    let mut counts = vec![0usize; catalog.len()];
    for s in &scenes {
        for c in s.class_set() {
            counts[catalog.position(c).unwrap()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let expected = total as f64 / catalog.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    assert!((CHI2_79_LOW..=CHI2_79_HIGH).contains(&stat), "chi-square {stat}");
}

#[test]
fn zero_noise_object_list_is_exact() {
    let catalog = ClassCatalog::coco80();
    let spec = SceneSpec {
        seed: 3,
        n_images: 20,
        ..SceneSpec::default()
    };
    let corpus = simulate(&spec, &NoiseSpec::default(), ExplainerShape::ObjectList, &catalog).unwrap();
    for (scene, out) in corpus.scenes.iter().zip(&corpus.outputs) {
        let ExplainerOutput::ObjectList(ObjectsRecord { objects, .. }) = out else {
            panic!("wrong shape");
        };
        let (inc, comp) = oracle_metrics(objects, &scene.class_set().iter().cloned().collect::<Vec<_>>()).unwrap();
        assert_eq!(inc, 0.into());
        assert_eq!(comp, 1.into());
    }
}

#[test]
fn noisy_corpus_mean_matches_oracle() {
    let catalog = ClassCatalog::coco80();
    let spec = SceneSpec {
        seed: 7,
        ..SceneSpec::default()
    };
    let noise = NoiseSpec {
        hallucination_rate: 0.3,
        omission_rate: 0.2,
        rank_jitter: 0.0,
    };
    let corpus = simulate(&spec, &noise, ExplainerShape::ObjectList, &catalog).unwrap();
    let mapper = TokenClassMapper::exact_only(catalog);
    let mut oracle_sum = 0.0;
    let mut explanations = Vec::new();
    for (scene, out) in corpus.scenes.iter().zip(&corpus.outputs) {
        let ExplainerOutput::ObjectList(rec) = out else { panic!() };
        let r: Vec<String> = scene.class_set().iter().cloned().collect();
        let (inc, _) = oracle_metrics(&rec.objects, &r).unwrap();
        oracle_sum += *inc.numer() as f64 / *inc.denom() as f64;
        explanations.push(mapper.extract_objects(&rec.objects, &rec.image_id));
    }
    let oracle_mean = oracle_sum / corpus.scenes.len() as f64;
    let report = evaluate_corpus(&explanations, &corpus.scenes, AggregationMode::Macro, None).unwrap();
    let engine = rectify_core::metrics::big_to_f64(report.mean_inconsistency.as_ref().unwrap());
    assert!((engine - oracle_mean).abs() <= 0.05);
    assert!((engine - oracle_mean).abs() < 1e-12);
    // Roughly 0.3 hallucinations per scene class, less a few collisions.
    assert!(engine > 0.15 && engine < 0.4, "{engine}");
}

#[test]
fn every_shape_is_deterministic() {
    let catalog = ClassCatalog::coco80();
    let spec = SceneSpec {
        seed: 11,
        n_images: 30,
        ..SceneSpec::default()
    };
    let noise = NoiseSpec {
        hallucination_rate: 0.4,
        omission_rate: 0.3,
        rank_jitter: 0.2,
    };
    for shape in [ExplainerShape::CaptionBeam, ExplainerShape::RankedAnswers, ExplainerShape::ObjectList] {
        let a = simulate(&spec, &noise, shape, &catalog).unwrap();
        let b = simulate(&spec, &noise, shape, &catalog).unwrap();
        assert_eq!(a, b);
        for out in &a.outputs {
            match out {
                ExplainerOutput::CaptionBeam(beam) => beam.validate().unwrap(),
                ExplainerOutput::RankedAnswers(r) => r.validate().unwrap(),
                ExplainerOutput::ObjectList(_) => {}
            }
        }
    }
}

//! Inconsistency and completeness of an explanation against the rectifier's
//! class set, corpus aggregation, and the prominence (area) filter.
//!
//! For detected classes `D` and rectifier classes `R`:
//!
//! * inconsistency = |D \ R| / |R|
//! * completeness  = |D ∩ R| / |R|
//!
//! Both are undefined when `R` is empty; such images are marked skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::domain::{ExplanationObjects, RectifierSet};
use crate::error::{Error, Result};

/// Per-image counts. The ratios are derived from them on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsRecord {
    pub image_id: String,
    pub rectifier_count: usize,
    pub detected_count: usize,
    /// |D \ R|
    pub hallucinated_count: usize,
    /// |D ∩ R|
    pub matched_count: usize,
}

impl MetricsRecord {
    pub fn skipped(&self) -> bool {
        self.rectifier_count == 0
    }

    pub fn inconsistency(&self) -> Option<Ratio<u64>> {
        ratio(self.hallucinated_count, self.rectifier_count)
    }

    pub fn completeness(&self) -> Option<Ratio<u64>> {
        ratio(self.matched_count, self.rectifier_count)
    }

    /// |D| / |R|, which equals inconsistency + completeness.
    pub fn coverage_ratio(&self) -> Option<Ratio<u64>> {
        ratio(self.detected_count, self.rectifier_count)
    }
}

fn ratio(num: usize, den: usize) -> Option<Ratio<u64>> {
    (den > 0).then(|| Ratio::new(num as u64, den as u64))
}

pub fn inconsistency(detected: &ExplanationObjects, rect: &RectifierSet) -> Option<Ratio<u64>> {
    score_image(detected, rect).inconsistency()
}

pub fn completeness(detected: &ExplanationObjects, rect: &RectifierSet) -> Option<Ratio<u64>> {
    score_image(detected, rect).completeness()
}

pub fn score_image(detected: &ExplanationObjects, rect: &RectifierSet) -> MetricsRecord {
    score_sets(rect.image_id(), detected.classes(), rect.class_set())
}

pub fn score_sets(image_id: &str, detected: &BTreeSet<String>, rect: &BTreeSet<String>) -> MetricsRecord {
    let matched = detected.intersection(rect).count();
    MetricsRecord {
        image_id: image_id.to_string(),
        rectifier_count: rect.len(),
        detected_count: detected.len(),
        hallucinated_count: detected.difference(rect).count(),
        matched_count: matched,
    }
}

/// Minimum per-class area fraction that survives the prominence filter.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProminenceSpec(f64);

impl ProminenceSpec {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::param(format!(
                "prominence threshold {threshold} outside [0, 1]"
            )));
        }
        Ok(ProminenceSpec(threshold))
    }

    pub fn threshold(self) -> f64 {
        self.0
    }
}

/// Drop every class whose largest detection covers less than the threshold.
pub fn prominence_filter(rect: &RectifierSet, spec: ProminenceSpec) -> RectifierSet {
    let areas = rect.effective_areas();
    rect.retain_classes(|class| areas[class] >= spec.threshold())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Mean of per-image ratios.
    #[default]
    Macro,
    /// Ratio of summed numerators to summed denominators.
    Micro,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Macro => "macro",
            AggregationMode::Micro => "micro",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(AggregationMode::Macro),
            "micro" => Ok(AggregationMode::Micro),
            other => Err(Error::param(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    /// Sorted by image id.
    pub per_image: Vec<MetricsRecord>,
    pub mean_inconsistency: Option<BigRational>,
    pub mean_completeness: Option<BigRational>,
    pub n_scored: usize,
    pub n_skipped: usize,
    pub mode: AggregationMode,
    pub prominence: Option<ProminenceSpec>,
}

impl AggregateReport {
    pub fn from_records(
        mut per_image: Vec<MetricsRecord>,
        mode: AggregationMode,
        prominence: Option<ProminenceSpec>,
    ) -> Self {
        per_image.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let scored: Vec<&MetricsRecord> = per_image.iter().filter(|r| !r.skipped()).collect();
        let n_scored = scored.len();
        let (mean_inconsistency, mean_completeness) = if n_scored == 0 {
            (None, None)
        } else {
            match mode {
                AggregationMode::Macro => (
                    Some(macro_mean(scored.iter().map(|r| r.inconsistency().unwrap()))),
                    Some(macro_mean(scored.iter().map(|r| r.completeness().unwrap()))),
                ),
                AggregationMode::Micro => {
                    let den: u64 = scored.iter().map(|r| r.rectifier_count as u64).sum();
                    let hall: u64 = scored.iter().map(|r| r.hallucinated_count as u64).sum();
                    let matched: u64 = scored.iter().map(|r| r.matched_count as u64).sum();
                    (
                        Some(BigRational::new(hall.into(), den.into())),
                        Some(BigRational::new(matched.into(), den.into())),
                    )
                }
            }
        };
        AggregateReport {
            n_skipped: per_image.len() - n_scored,
            per_image,
            mean_inconsistency,
            mean_completeness,
            n_scored,
            mode,
            prominence,
        }
    }
}

fn macro_mean(values: impl Iterator<Item = Ratio<u64>>) -> BigRational {
    let mut sum = BigRational::zero();
    let mut n = 0u64;
    for v in values {
        sum += BigRational::new(BigInt::from(*v.numer()), BigInt::from(*v.denom()));
        n += 1;
    }
    sum / BigRational::from_integer(BigInt::from(n))
}

/// Score every image, pairing explanations with rectifier sets by image id.
/// With `prominence`, each rectifier set is filtered first.
pub fn evaluate_corpus(
    explanations: &[ExplanationObjects],
    rects: &[RectifierSet],
    mode: AggregationMode,
    prominence: Option<ProminenceSpec>,
) -> Result<AggregateReport> {
    let mut by_id: BTreeMap<&str, &RectifierSet> = BTreeMap::new();
    for r in rects {
        if by_id.insert(r.image_id(), r).is_some() {
            return Err(Error::Contract(format!(
                "duplicate image id {:?} in rectifier stream",
                r.image_id()
            )));
        }
    }
    let mut seen = BTreeSet::new();
    let mut unmatched = Vec::new();
    let mut records = Vec::with_capacity(explanations.len());
    for e in explanations {
        if !seen.insert(e.image_id()) {
            return Err(Error::Contract(format!(
                "duplicate image id {:?} in explanation stream",
                e.image_id()
            )));
        }
        match by_id.get(e.image_id()) {
            Some(r) => {
                let record = match prominence {
                    Some(spec) => score_image(e, &prominence_filter(r, spec)),
                    None => score_image(e, r),
                };
                records.push(record);
            }
            None => unmatched.push(e.image_id().to_string()),
        }
    }
    unmatched.extend(
        by_id
            .keys()
            .filter(|id| !seen.contains(*id))
            .map(|id| id.to_string()),
    );
    if !unmatched.is_empty() {
        unmatched.sort();
        return Err(Error::UnmatchedImages(unmatched));
    }
    Ok(AggregateReport::from_records(records, mode, prominence))
}

/// Round half up to three decimals, rendered with exactly three places.
pub fn render_3dp(value: &BigRational) -> String {
    let scaled = value * BigRational::from_integer(BigInt::from(1000));
    let rounded = (scaled + BigRational::new(BigInt::from(1), BigInt::from(2))).floor();
    let n = rounded.to_integer();
    let negative = n < BigInt::zero();
    let digits = if negative { -n } else { n };
    let int_part = &digits / BigInt::from(1000);
    let frac_part = (&digits % BigInt::from(1000)).to_u32().unwrap_or(0);
    format!("{}{int_part}.{frac_part:03}", if negative { "-" } else { "" })
}

pub fn ratio_to_big(r: Ratio<u64>) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

pub fn big_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ClassCatalog, Detection};

    fn rect(id: &str, classes: &[(&str, f64)]) -> RectifierSet {
        let cat = ClassCatalog::coco80();
        RectifierSet::new(
            id,
            classes
                .iter()
                .map(|(c, a)| Detection::new(&cat, c, 0.9, *a).unwrap())
                .collect(),
        )
    }

    fn objs(id: &str, classes: &[&str]) -> ExplanationObjects {
        ExplanationObjects::new(id, classes, &ClassCatalog::coco80()).unwrap()
    }

    fn r(n: u64, d: u64) -> Ratio<u64> {
        Ratio::new(n, d)
    }

    #[test]
    fn hand_enumerated_example() {
        let d = objs("a", &["person", "dog", "frisbee"]);
        let rs = rect("a", &[("person", 0.1), ("frisbee", 0.1), ("car", 0.1), ("bench", 0.1)]);
        assert_eq!(inconsistency(&d, &rs), Some(r(1, 4)));
        assert_eq!(completeness(&d, &rs), Some(r(2, 4)));
    }

    #[test]
    fn identical_and_empty_sets() {
        let rs = rect("a", &[("person", 0.1)]);
        assert_eq!(inconsistency(&objs("a", &["person"]), &rs), Some(r(0, 1)));
        assert_eq!(completeness(&objs("a", &["person"]), &rs), Some(r(1, 1)));
        let rs = rect("a", &[("cat", 0.1), ("chair", 0.1)]);
        assert_eq!(inconsistency(&objs("a", &[]), &rs), Some(r(0, 1)));
        assert_eq!(completeness(&objs("a", &["dog", "car"]), &rs), Some(r(0, 1)));
    }

    #[test]
    fn empty_rectifier_is_skipped() {
        let rec = score_image(&objs("a", &["dog"]), &rect("a", &[]));
        assert!(rec.skipped());
        assert_eq!(rec.inconsistency(), None);
        assert_eq!(rec.completeness(), None);
    }

    #[test]
    fn inconsistency_can_exceed_one() {
        let d = objs("v", &["dog", "cat", "car", "person"]);
        let rs = rect("v", &[("person", 0.2)]);
        assert_eq!(inconsistency(&d, &rs), Some(r(3, 1)));
    }

    #[test]
    fn prominence_examples() {
        let rs = rect("p", &[("person", 0.30), ("cup", 0.02)]);
        let kept = prominence_filter(&rs, ProminenceSpec::new(0.05).unwrap());
        assert_eq!(kept.class_set().iter().collect::<Vec<_>>(), ["person"]);
        assert_eq!(prominence_filter(&rs, ProminenceSpec::new(0.0).unwrap()), rs);

        let rs = rect("q", &[("dog", 0.12), ("cat", 0.07), ("bird", 0.04)]);
        let sweep: Vec<Vec<String>> = [0.05, 0.10, 0.15]
            .iter()
            .map(|&t| {
                prominence_filter(&rs, ProminenceSpec::new(t).unwrap())
                    .class_set()
                    .iter()
                    .cloned()
                    .collect()
            })
            .collect();
        assert_eq!(sweep, vec![vec!["cat", "dog"], vec!["dog"], vec![]]);
    }

    #[test]
    fn prominence_uses_max_area_per_class() {
        let rs = rect("m", &[("dog", 0.01), ("dog", 0.20), ("cat", 0.03)]);
        let kept = prominence_filter(&rs, ProminenceSpec::new(0.1).unwrap());
        assert_eq!(kept.class_set().iter().collect::<Vec<_>>(), ["dog"]);
        assert_eq!(kept.detections().len(), 2);
    }

    #[test]
    fn prominence_spec_range() {
        assert!(ProminenceSpec::new(-0.1).is_err());
        assert!(ProminenceSpec::new(1.1).is_err());
    }

    #[test]
    fn macro_average_of_two() {
        let e = [objs("1", &["dog"]), objs("2", &["cat"])];
        let rs = [rect("1", &[("dog", 0.1), ("car", 0.1)]), rect("2", &[("cat", 0.1)])];
        let rep = evaluate_corpus(&e, &rs, AggregationMode::Macro, None).unwrap();
        assert_eq!(rep.mean_completeness, Some(BigRational::new(3.into(), 4.into())));
        assert_eq!(rep.n_scored, 2);
    }

    #[test]
    fn micro_average() {
        let e = [objs("1", &["dog"]), objs("2", &["cat", "bus"])];
        let rs = [
            rect("1", &[("dog", 0.1), ("car", 0.1), ("cup", 0.1)]),
            rect("2", &[("cat", 0.1)]),
        ];
        let rep = evaluate_corpus(&e, &rs, AggregationMode::Micro, None).unwrap();
        assert_eq!(rep.mean_completeness, Some(BigRational::new(2.into(), 4.into())));
        assert_eq!(rep.mean_inconsistency, Some(BigRational::new(1.into(), 4.into())));
    }

    #[test]
    fn singleton_corpus_equals_record() {
        let e = [objs("1", &["dog", "bus"])];
        let rs = [rect("1", &[("dog", 0.1), ("car", 0.1), ("cup", 0.1)])];
        let rep = evaluate_corpus(&e, &rs, AggregationMode::Macro, None).unwrap();
        let rec = &rep.per_image[0];
        assert_eq!(rep.mean_inconsistency, rec.inconsistency().map(ratio_to_big));
        assert_eq!(rep.mean_completeness, rec.completeness().map(ratio_to_big));
    }

    #[test]
    fn all_empty_rectifiers() {
        let e = [objs("1", &["dog"]), objs("2", &[])];
        let rs = [rect("1", &[]), rect("2", &[])];
        let rep = evaluate_corpus(&e, &rs, AggregationMode::Macro, None).unwrap();
        assert_eq!((rep.n_scored, rep.n_skipped), (0, 2));
        assert!(rep.mean_inconsistency.is_none() && rep.mean_completeness.is_none());
    }

    #[test]
    fn mismatched_ids_rejected() {
        let e = [objs("1", &["dog"]), objs("3", &[])];
        let rs = [rect("1", &[]), rect("2", &[])];
        match evaluate_corpus(&e, &rs, AggregationMode::Macro, None) {
            Err(Error::UnmatchedImages(ids)) => assert_eq!(ids, ["2", "3"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn records_sorted_by_image_id() {
        let e = [objs("b", &[]), objs("a", &[])];
        let rs = [rect("a", &[("dog", 0.1)]), rect("b", &[("dog", 0.1)])];
        let rep = evaluate_corpus(&e, &rs, AggregationMode::Macro, None).unwrap();
        let ids: Vec<_> = rep.per_image.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn rendering() {
        let q = |n: i64, d: i64| BigRational::new(n.into(), d.into());
        assert_eq!(render_3dp(&q(1, 4)), "0.250");
        assert_eq!(render_3dp(&q(2, 3)), "0.667");
        assert_eq!(render_3dp(&q(1, 3)), "0.333");
        assert_eq!(render_3dp(&q(2130, 1000)), "2.130");
        assert_eq!(render_3dp(&q(1, 2000)), "0.001");
        assert_eq!(render_3dp(&q(0, 1)), "0.000");
    }
}

//! Reconciliation of a ranked VQA answer list with the rectifier's classes:
//! keep the most probable answers that both the answer model and the
//! detector agree on.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{ExplanationObjects, RectifierSet};
use crate::embedding::TokenClassMapper;
use crate::error::{Error, Result};

pub const BASE_QUESTION: &str = "What are the objects in the image?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub answer: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswers {
    pub image_id: String,
    pub question: String,
    pub answers: Vec<Answer>,
}

impl RankedAnswers {
    /// Probabilities in (0, 1], non-increasing; answers distinct.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, a) in self.answers.iter().enumerate() {
            if !(a.p > 0.0 && a.p <= 1.0) {
                return Err(format!(
                    "image {:?} answer {i}: probability {} outside (0, 1]",
                    self.image_id, a.p
                ));
            }
            if i > 0 && a.p > self.answers[i - 1].p {
                return Err(format!(
                    "image {:?} answer {i}: probabilities increase ({} after {})",
                    self.image_id,
                    a.p,
                    self.answers[i - 1].p
                ));
            }
            if self.answers[..i].iter().any(|o| o.answer == a.answer) {
                return Err(format!(
                    "image {:?} answer {i}: duplicate answer {:?}",
                    self.image_id, a.answer
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreedAnswer {
    pub answer: String,
    pub p: f64,
    pub class: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Mapped to a class the rectifier did not detect.
    OutsideRectifier,
    /// Mapped to no catalog class.
    Unmapped,
    /// Its class was already emitted by a higher-ranked answer.
    DuplicateClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedAnswer {
    pub answer: String,
    pub p: f64,
    pub class: Option<String>,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRectification {
    pub image_id: String,
    pub question: String,
    pub k: usize,
    pub answers: Vec<AgreedAnswer>,
    /// Answers passed over before the k-th agreed answer was found, each
    /// effectively replaced by a lower-ranked successor.
    pub skipped: Vec<SkippedAnswer>,
    /// How many of the k slots could not be filled; 0 means none.
    pub shortfall: usize,
}

impl VqaRectification {
    pub fn has_shortfall(&self) -> bool {
        self.shortfall > 0
    }
}

/// Scan the ranking in order, emitting answers whose class the rectifier
/// detected, one per class, until `k` are emitted or the list runs out.
pub fn rectify_answers(
    ranked: &RankedAnswers,
    k: usize,
    rect: &RectifierSet,
    mapper: &TokenClassMapper,
) -> Result<VqaRectification> {
    if k == 0 {
        return Err(Error::param("top-k must be at least 1"));
    }
    let mut answers = Vec::new();
    let mut skipped = Vec::new();
    let mut emitted = BTreeSet::new();
    for a in &ranked.answers {
        if answers.len() == k {
            break;
        }
        let class = mapper.map_token(&a.answer).map(|m| m.class);
        let reason = match &class {
            None => Some(SkipReason::Unmapped),
            Some(c) if !rect.contains(c) => Some(SkipReason::OutsideRectifier),
            Some(c) if emitted.contains(c) => Some(SkipReason::DuplicateClass),
            Some(_) => None,
        };
        match reason {
            Some(reason) => skipped.push(SkippedAnswer {
                answer: a.answer.clone(),
                p: a.p,
                class,
                reason,
            }),
            None => {
                let class = class.expect("agreed answers have a class");
                emitted.insert(class.clone());
                answers.push(AgreedAnswer {
                    answer: a.answer.clone(),
                    p: a.p,
                    class,
                });
            }
        }
    }
    Ok(VqaRectification {
        image_id: ranked.image_id.clone(),
        question: ranked.question.clone(),
        k,
        shortfall: k - answers.len(),
        answers,
        skipped,
    })
}

/// Classes asserted by the rectified answers.
pub fn vqa_objects(rectified: &VqaRectification, mapper: &TokenClassMapper) -> ExplanationObjects {
    let tokens: Vec<&str> = rectified.answers.iter().map(|a| a.answer.as_str()).collect();
    mapper.extract_objects(&tokens, &rectified.image_id)
}

/// Classes asserted by the unrectified top-k answers.
pub fn baseline_objects(ranked: &RankedAnswers, k: usize, mapper: &TokenClassMapper) -> ExplanationObjects {
    let tokens: Vec<&str> = ranked
        .answers
        .iter()
        .take(k)
        .map(|a| a.answer.as_str())
        .collect();
    mapper.extract_objects(&tokens, &ranked.image_id)
}

//! Iterative re-prompting of a conversational agent until the objects it
//! lists agree with the rectifier.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::domain::{ExplanationObjects, RectifierSet};
use crate::embedding::TokenClassMapper;
use crate::error::{Error, Result};
pub use crate::vqa::BASE_QUESTION;

pub const DEFAULT_MAX_ROUNDS: usize = 3;

const REPROMPT_PHRASE: &str = " does not exist in the image. ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("agent has no response for image {image_id:?} and prompt {prompt:?}")]
pub struct AgentFailure {
    pub image_id: String,
    pub prompt: String,
}

pub trait PromptAgent {
    /// Object names the agent lists in reply to `prompt` about `image_id`.
    fn ask(&mut self, image_id: &str, prompt: &str) -> std::result::Result<Vec<String>, AgentFailure>;
}

/// `"<o1>, <o2> does not exist in the image. <base question>"`.
pub fn make_reprompt<S: AsRef<str>>(inconsistent: &[S], base_question: &str) -> Result<String> {
    if inconsistent.is_empty() {
        return Err(Error::Contract(
            "re-prompt requires at least one inconsistent object".into(),
        ));
    }
    let names: Vec<&str> = inconsistent.iter().map(AsRef::as_ref).collect();
    Ok(format!("{}{REPROMPT_PHRASE}{base_question}", names.join(", ")))
}

/// Inverse of [`make_reprompt`] for a known base question.
pub fn parse_reprompt(prompt: &str, base_question: &str) -> Option<Vec<String>> {
    let names = prompt
        .strip_suffix(base_question)?
        .strip_suffix(REPROMPT_PHRASE)?;
    Some(names.split(", ").map(str::to_string).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalState {
    Converged,
    MaxRoundsReached,
    AgentFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub prompt: String,
    pub objects: Vec<String>,
    /// Agent surface names whose class the rectifier did not detect, one per
    /// class, in first-seen order.
    pub inconsistent: Vec<String>,
    /// Names that map to no catalog class; excluded from both sets.
    pub unmapped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectificationSession {
    pub image_id: String,
    pub rounds: Vec<Round>,
    pub terminal: TerminalState,
    /// Classes of the last answered round, sorted.
    pub classes: Vec<String>,
}

impl RectificationSession {
    pub fn final_objects(&self) -> ExplanationObjects {
        ExplanationObjects::from_parts(
            self.image_id.clone(),
            self.classes.iter().cloned().collect(),
            Vec::new(),
        )
    }

    pub fn converged(&self) -> bool {
        self.terminal == TerminalState::Converged
    }
}

/// Ask, compare against the rectifier, re-prompt with the inconsistent
/// names, and repeat until nothing is inconsistent or `max_rounds` is spent.
pub fn run_session<A: PromptAgent + ?Sized>(
    agent: &mut A,
    image_id: &str,
    rect: &RectifierSet,
    mapper: &TokenClassMapper,
    max_rounds: usize,
) -> Result<RectificationSession> {
    if max_rounds < 1 {
        return Err(Error::param("max rounds must be at least 1"));
    }
    let mut rounds = Vec::new();
    let mut classes = BTreeSet::new();
    let mut prompt = BASE_QUESTION.to_string();
    let terminal = loop {
        let objects = match agent.ask(image_id, &prompt) {
            Ok(objects) => objects,
            Err(_) => break TerminalState::AgentFailure,
        };
        classes.clear();
        let mut inconsistent = Vec::new();
        let mut inconsistent_classes = HashSet::new();
        let mut unmapped = Vec::new();
        for name in &objects {
            match mapper.map_token(name) {
                Some(m) => {
                    if !rect.contains(&m.class) && inconsistent_classes.insert(m.class.clone()) {
                        inconsistent.push(name.clone());
                    }
                    classes.insert(m.class);
                }
                None => unmapped.push(name.clone()),
            }
        }
        let next = (!inconsistent.is_empty()).then(|| make_reprompt(&inconsistent, BASE_QUESTION));
        rounds.push(Round {
            prompt,
            objects,
            inconsistent,
            unmapped,
        });
        match next {
            None => break TerminalState::Converged,
            Some(_) if rounds.len() == max_rounds => break TerminalState::MaxRoundsReached,
            Some(p) => prompt = p?,
        }
    };
    Ok(RectificationSession {
        image_id: image_id.to_string(),
        rounds,
        terminal,
        classes: classes.into_iter().collect(),
    })
}

/// Replays recorded exchanges keyed by exact (image id, prompt).
#[derive(Debug, Clone, Default)]
pub struct TranscriptAgent {
    responses: HashMap<(String, String), Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub image_id: String,
    pub prompt: String,
    pub objects: Vec<String>,
}

impl TranscriptAgent {
    pub fn new() -> Self {
        TranscriptAgent::default()
    }

    /// Errors on a duplicate (image id, prompt) key.
    pub fn insert(&mut self, entry: TranscriptEntry) -> std::result::Result<(), String> {
        let key = (entry.image_id, entry.prompt);
        if self.responses.contains_key(&key) {
            return Err(format!(
                "duplicate transcript key (image {:?}, prompt {:?})",
                key.0, key.1
            ));
        }
        self.responses.insert(key, entry.objects);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl PromptAgent for TranscriptAgent {
    fn ask(&mut self, image_id: &str, prompt: &str) -> std::result::Result<Vec<String>, AgentFailure> {
        self.responses
            .get(&(image_id.to_string(), prompt.to_string()))
            .cloned()
            .ok_or_else(|| AgentFailure {
                image_id: image_id.to_string(),
                prompt: prompt.to_string(),
            })
    }
}

/// Scripted stand-in for a live agent. It answers the base question with a
/// fixed list per image and drops every name it has been told does not
/// exist, except names marked stubborn, which it keeps repeating.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAgent {
    initial: HashMap<String, Vec<String>>,
    stubborn: HashSet<String>,
    excluded: HashMap<String, HashSet<String>>,
}

impl ScriptedAgent {
    pub fn new() -> Self {
        ScriptedAgent::default()
    }

    pub fn with_answers(mut self, image_id: &str, objects: &[&str]) -> Self {
        self.initial.insert(
            image_id.to_string(),
            objects.iter().map(|s| s.to_string()).collect(),
        );
        self
    }

    pub fn set_answers(&mut self, image_id: &str, objects: Vec<String>) {
        self.initial.insert(image_id.to_string(), objects);
    }

    pub fn with_stubborn(mut self, name: &str) -> Self {
        self.stubborn.insert(name.to_string());
        self
    }
}

impl PromptAgent for ScriptedAgent {
    fn ask(&mut self, image_id: &str, prompt: &str) -> std::result::Result<Vec<String>, AgentFailure> {
        let failure = || AgentFailure {
            image_id: image_id.to_string(),
            prompt: prompt.to_string(),
        };
        let initial = self.initial.get(image_id).ok_or_else(failure)?;
        let excluded = self.excluded.entry(image_id.to_string()).or_default();
        if prompt == BASE_QUESTION {
            excluded.clear();
        } else {
            let names = parse_reprompt(prompt, BASE_QUESTION).ok_or_else(failure)?;
            excluded.extend(names.into_iter().filter(|n| !self.stubborn.contains(n)));
        }
        Ok(initial
            .iter()
            .filter(|o| !excluded.contains(*o))
            .cloned()
            .collect())
    }
}

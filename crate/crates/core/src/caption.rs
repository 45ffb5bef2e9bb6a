//! Multi-branch caption decoding and per-step object token rectification.
//!
//! A [`NextTokenProvider`] stands in for the caption decoder: given an image
//! and the tokens emitted so far it returns a ranked next-token distribution.
//! [`build_caption_tree`] expands the top `b` tokens at every step depth-first
//! and keeps the `beam_cap` most probable completed captions. Each retained
//! caption keeps its per-step top-k alternatives so it can be rectified
//! without re-querying the decoder.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::RectifierSet;
use crate::embedding::TokenClassMapper;
use crate::error::{Error, Result};

pub const DEFAULT_END_TOKEN: &str = "<end>";
pub const BEGIN_TOKEN: &str = "<start>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub p: f64,
}

impl TokenProb {
    pub fn new(token: impl Into<String>, p: f64) -> Self {
        TokenProb {
            token: token.into(),
            p,
        }
    }
}

/// One decoding step: the token that was emitted and the ranked alternatives
/// it was chosen from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub chosen: String,
    pub topk: Vec<TokenProb>,
}

impl Step {
    pub fn chosen_prob(&self) -> Option<f64> {
        self.topk.iter().find(|t| t.token == self.chosen).map(|t| t.p)
    }
}

/// A single recorded caption branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamRecord {
    pub image_id: String,
    pub steps: Vec<Step>,
}

impl BeamRecord {
    pub fn tokens(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.chosen.clone()).collect()
    }

    /// Sum of the log-probabilities of the chosen tokens.
    pub fn log_prob(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.chosen_prob().map_or(f64::NEG_INFINITY, f64::ln))
            .sum()
    }

    /// Check the ranking contract of every step. Errors name the step index.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, step) in self.steps.iter().enumerate() {
            validate_distribution(&step.topk).map_err(|m| {
                format!("image {:?} step {i}: {m}", self.image_id)
            })?;
            if step.chosen_prob().is_none() {
                return Err(format!(
                    "image {:?} step {i}: chosen token {:?} is not among the top-k",
                    self.image_id, step.chosen
                ));
            }
        }
        Ok(())
    }
}

/// Probabilities in (0, 1], non-increasing, tokens distinct, non-empty.
pub(crate) fn validate_distribution(dist: &[TokenProb]) -> std::result::Result<(), String> {
    if dist.is_empty() {
        return Err("empty top-k list".into());
    }
    for (j, t) in dist.iter().enumerate() {
        if !(t.p > 0.0 && t.p <= 1.0) {
            return Err(format!("probability {} of {:?} outside (0, 1]", t.p, t.token));
        }
        if j > 0 && t.p > dist[j - 1].p {
            return Err(format!(
                "probabilities increase at position {j} ({} after {})",
                t.p,
                dist[j - 1].p
            ));
        }
        if dist[..j].iter().any(|o| o.token == t.token) {
            return Err(format!("duplicate token {:?}", t.token));
        }
    }
    Ok(())
}

/// Probability descending, then token ascending.
fn rank_order(a: &TokenProb, b: &TokenProb) -> Ordering {
    b.p.total_cmp(&a.p).then_with(|| a.token.cmp(&b.token))
}

pub trait NextTokenProvider {
    /// Ranked next-token distribution after `prefix` (which excludes the
    /// begin token). Must be deterministic for a fixed image and prefix.
    fn next_tokens(&self, image_id: &str, prefix: &[String]) -> Vec<TokenProb>;

    fn end_token(&self) -> &str {
        DEFAULT_END_TOKEN
    }
}

/// Provider backed by a prefix → distribution table. Prefixes are the emitted
/// tokens joined by single spaces; the empty string is the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableProvider {
    #[serde(default = "default_end_token")]
    pub end_token: String,
    pub table: HashMap<String, Vec<TokenProb>>,
}

fn default_end_token() -> String {
    DEFAULT_END_TOKEN.to_string()
}

impl TableProvider {
    pub fn from_json(text: &str) -> Result<Self> {
        let provider: TableProvider = serde_json::from_str(text).map_err(|e| Error::Record {
            source_name: "provider table".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        for (prefix, dist) in &provider.table {
            if dist.is_empty() {
                continue;
            }
            validate_distribution(dist).map_err(|m| {
                Error::Contract(format!("provider table prefix {prefix:?}: {m}"))
            })?;
        }
        Ok(provider)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TableProvider::from_json(&text)
    }
}

impl NextTokenProvider for TableProvider {
    fn next_tokens(&self, _image_id: &str, prefix: &[String]) -> Vec<TokenProb> {
        self.table
            .get(&prefix.join(" "))
            .cloned()
            .unwrap_or_default()
    }

    fn end_token(&self) -> &str {
        &self.end_token
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub branching: usize,
    pub top_k: usize,
    pub max_len: usize,
    pub beam_cap: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            branching: 3,
            top_k: 10,
            max_len: 20,
            beam_cap: 16,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.branching < 1 {
            return Err(Error::param("branching factor must be at least 1"));
        }
        if self.top_k < self.branching {
            return Err(Error::param(format!(
                "top-k width {} is smaller than branching factor {}",
                self.top_k, self.branching
            )));
        }
        if self.max_len < 1 {
            return Err(Error::param("max length must be at least 1"));
        }
        if self.beam_cap < 1 {
            return Err(Error::param("beam cap must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub token: String,
    /// Cumulative log-probability from the root.
    pub log_prob: f64,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub steps: Vec<Step>,
    pub log_prob: f64,
    pub node: usize,
}

impl Leaf {
    pub fn tokens(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.chosen.clone()).collect()
    }
}

/// Trie of the retained caption branches. `nodes[0]` is the begin token.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionTree {
    pub image_id: String,
    pub nodes: Vec<TreeNode>,
    /// Ordered by log-probability descending, ties by token sequence.
    pub leaves: Vec<Leaf>,
}

impl CaptionTree {
    pub fn to_beam_records(&self) -> Vec<BeamRecord> {
        self.leaves
            .iter()
            .map(|l| BeamRecord {
                image_id: self.image_id.clone(),
                steps: l.steps.clone(),
            })
            .collect()
    }
}

struct Candidate {
    steps: Vec<Step>,
    tokens: Vec<String>,
    log_prob: f64,
}

fn leaf_order(a_lp: f64, a_tokens: &[String], b_lp: f64, b_tokens: &[String]) -> Ordering {
    b_lp.total_cmp(&a_lp).then_with(|| a_tokens.cmp(b_tokens))
}

struct Expansion<'a, P: ?Sized> {
    provider: &'a P,
    image_id: &'a str,
    params: TreeParams,
    leaves: Vec<Candidate>,
}

impl<P: NextTokenProvider + ?Sized> Expansion<'_, P> {
    /// Whether no descendant of a node with this score and prefix can enter
    /// a full leaf set. Descendants never score higher and always sort after
    /// their prefix.
    fn dominated(&self, log_prob: f64, tokens: &[String]) -> bool {
        if self.leaves.len() < self.params.beam_cap {
            return false;
        }
        let worst = self.leaves.last().expect("beam_cap >= 1");
        leaf_order(log_prob, tokens, worst.log_prob, &worst.tokens) == Ordering::Greater
    }

    fn push_leaf(&mut self, cand: Candidate) {
        let pos = self
            .leaves
            .partition_point(|l| leaf_order(l.log_prob, &l.tokens, cand.log_prob, &cand.tokens) != Ordering::Greater);
        self.leaves.insert(pos, cand);
        self.leaves.truncate(self.params.beam_cap);
    }

    fn expand(&mut self, steps: &mut Vec<Step>, tokens: &mut Vec<String>, log_prob: f64) -> Result<()> {
        let mut dist = self.provider.next_tokens(self.image_id, tokens);
        if dist.is_empty() {
            return Err(Error::EmptyDistribution {
                prefix: tokens.clone(),
            });
        }
        if let Some(bad) = dist.iter().find(|t| !(t.p > 0.0 && t.p <= 1.0)) {
            return Err(Error::Contract(format!(
                "provider probability {} for {:?} outside (0, 1] at prefix {tokens:?}",
                bad.p, bad.token
            )));
        }
        dist.sort_by(rank_order);
        dist.truncate(self.params.top_k);
        let end = self.provider.end_token().to_string();

        for choice in dist.iter().take(self.params.branching) {
            let child_lp = log_prob + choice.p.ln();
            tokens.push(choice.token.clone());
            if !self.dominated(child_lp, tokens) {
                steps.push(Step {
                    chosen: choice.token.clone(),
                    topk: dist.clone(),
                });
                if choice.token == end || steps.len() == self.params.max_len {
                    self.push_leaf(Candidate {
                        steps: steps.clone(),
                        tokens: tokens.clone(),
                        log_prob: child_lp,
                    });
                } else {
                    self.expand(steps, tokens, child_lp)?;
                }
                steps.pop();
            }
            tokens.pop();
        }
        Ok(())
    }
}

/// Depth-first expansion of the top-`branching` tokens of each top-`top_k`
/// distribution, keeping the `beam_cap` highest-scoring completed captions.
pub fn build_caption_tree<P: NextTokenProvider + ?Sized>(
    provider: &P,
    image_id: &str,
    params: TreeParams,
) -> Result<CaptionTree> {
    params.validate()?;
    let mut expansion = Expansion {
        provider,
        image_id,
        params,
        leaves: Vec::new(),
    };
    expansion.expand(&mut Vec::new(), &mut Vec::new(), 0.0)?;

    let mut nodes = vec![TreeNode {
        token: BEGIN_TOKEN.to_string(),
        log_prob: 0.0,
        children: Vec::new(),
    }];
    let mut leaves = Vec::with_capacity(expansion.leaves.len());
    for cand in expansion.leaves {
        let mut at = 0usize;
        let mut lp = 0.0;
        for step in &cand.steps {
            lp += step.chosen_prob().expect("chosen is drawn from topk").ln();
            let existing = nodes[at]
                .children
                .iter()
                .copied()
                .find(|&c| nodes[c].token == step.chosen);
            at = match existing {
                Some(c) => c,
                None => {
                    nodes.push(TreeNode {
                        token: step.chosen.clone(),
                        log_prob: lp,
                        children: Vec::new(),
                    });
                    let id = nodes.len() - 1;
                    nodes[at].children.push(id);
                    id
                }
            };
        }
        leaves.push(Leaf {
            steps: cand.steps,
            log_prob: cand.log_prob,
            node: at,
        });
    }
    Ok(CaptionTree {
        image_id: image_id.to_string(),
        nodes,
        leaves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub position: usize,
    pub original: String,
    pub replacement: String,
    pub original_class: String,
    /// `None` when the fallback substituted a token that names no object.
    pub replacement_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifiedCaption {
    pub image_id: String,
    pub tokens: Vec<String>,
    pub replacements: Vec<Replacement>,
    /// Positions whose object token names a class outside the rectifier set
    /// and had no usable alternative.
    pub flags: Vec<usize>,
    pub log_prob: f64,
}

/// Markers such as `<end>` or `<unk>`; never used as substitutes.
fn is_marker(token: &str) -> bool {
    token.len() > 2 && token.starts_with('<') && token.ends_with('>')
}

/// Replace every chosen token whose class is outside the rectifier set with
/// the most probable alternative at that step whose class is inside it. When
/// none exists, fall back to the most probable alternative that names no
/// object; otherwise keep the token and flag the position.
pub fn rectify_branch(
    image_id: &str,
    steps: &[Step],
    rect: &RectifierSet,
    mapper: &TokenClassMapper,
) -> RectifiedCaption {
    let mut tokens = Vec::with_capacity(steps.len());
    let mut replacements = Vec::new();
    let mut flags = Vec::new();
    let log_prob = steps
        .iter()
        .map(|s| s.chosen_prob().map_or(f64::NEG_INFINITY, f64::ln))
        .sum();

    for (position, step) in steps.iter().enumerate() {
        let outside = match mapper.map_token(&step.chosen) {
            Some(m) if !rect.contains(&m.class) => Some(m.class),
            _ => None,
        };
        let Some(original_class) = outside else {
            tokens.push(step.chosen.clone());
            continue;
        };

        let mut alternatives: Vec<&TokenProb> =
            step.topk.iter().filter(|t| t.token != step.chosen).collect();
        alternatives.sort_by(|a, b| rank_order(a, b));
        let mapped: Vec<(&TokenProb, Option<String>)> = alternatives
            .into_iter()
            .map(|t| (t, mapper.map_token(&t.token).map(|m| m.class)))
            .collect();

        let agreed = mapped
            .iter()
            .find(|(_, c)| c.as_deref().is_some_and(|c| rect.contains(c)));
        let neutral = || {
            mapped
                .iter()
                .find(|(t, c)| c.is_none() && !is_marker(&t.token))
        };
        match agreed.or_else(neutral) {
            Some((alt, class)) => {
                replacements.push(Replacement {
                    position,
                    original: step.chosen.clone(),
                    replacement: alt.token.clone(),
                    original_class,
                    replacement_class: class.clone(),
                });
                tokens.push(alt.token.clone());
            }
            None => {
                flags.push(position);
                tokens.push(step.chosen.clone());
            }
        }
    }

    RectifiedCaption {
        image_id: image_id.to_string(),
        tokens,
        replacements,
        flags,
        log_prob,
    }
}

/// Rectify every retained branch, in leaf order.
pub fn rectify_tree(
    tree: &CaptionTree,
    rect: &RectifierSet,
    mapper: &TokenClassMapper,
) -> Vec<RectifiedCaption> {
    tree.leaves
        .iter()
        .map(|leaf| rectify_branch(&tree.image_id, &leaf.steps, rect, mapper))
        .collect()
}

/// Rectify recorded branches of one image, ordered by log-probability
/// descending and then by original token sequence.
pub fn rectify_beams(
    beams: &[BeamRecord],
    rect: &RectifierSet,
    mapper: &TokenClassMapper,
) -> Vec<RectifiedCaption> {
    let mut ordered: Vec<(f64, Vec<String>, &BeamRecord)> =
        beams.iter().map(|b| (b.log_prob(), b.tokens(), b)).collect();
    ordered.sort_by(|a, b| leaf_order(a.0, &a.1, b.0, &b.1));
    ordered
        .into_iter()
        .map(|(_, _, b)| rectify_branch(&b.image_id, &b.steps, rect, mapper))
        .collect()
}

/// The most probable recorded branch, ties broken by token sequence.
pub fn top_beam(beams: &[BeamRecord]) -> Option<&BeamRecord> {
    beams
        .iter()
        .map(|b| (b.log_prob(), b.tokens(), b))
        .min_by(|a, b| leaf_order(a.0, &a.1, b.0, &b.1))
        .map(|(_, _, b)| b)
}

//! Greedy prompt selection.
//!
//! The current prompt's fragments and the new candidates form one pool (current first, then
//! candidates in generation order, deduplicated). Starting from an empty selection, each round
//! scores `selection + p` for every remaining pool fragment `p`, takes the best (lowest index on
//! ties) and accepts it while its score is at least the running maximum. The running maximum
//! starts at the score of the current prompt, so whatever is accepted never scores below it; if
//! nothing is accepted the current prompt is returned unchanged.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::ImageRef;
use crate::prompt::{Fragment, TagPrompt};
use crate::scoring::{PromptScorer, ScoreValue};

/// Which update rule the optimizer applies. The non-default variants exist for ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Greedy,
    /// Greedy over the new candidates only; current fragments cannot be re-selected.
    NoCombination,
    /// No selection: every candidate is appended to the current prompt.
    AcceptAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub fragment: String,
    pub score: ScoreValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selected: TagPrompt,
    /// `None` only when the selection is empty.
    pub final_score: Option<ScoreValue>,
    pub picks: Vec<Pick>,
    pub fell_back: bool,
}

/// The deduplicated pool: current fragments first, then candidates.
pub fn build_pool(current: &TagPrompt, candidates: &[Fragment]) -> TagPrompt {
    TagPrompt::from_fragments(current.fragments().iter().cloned().chain(candidates.iter().cloned()))
}

pub fn greedy_select(
    current: &TagPrompt,
    candidates: &[Fragment],
    reference: &ImageRef,
    scorer: &dyn PromptScorer,
) -> Result<SelectionOutcome> {
    let pool = build_pool(current, candidates);
    greedy_over_pool(current, pool, reference, scorer)
}

pub fn select(
    mode: SelectionMode,
    current: &TagPrompt,
    candidates: &[Fragment],
    reference: &ImageRef,
    scorer: &dyn PromptScorer,
) -> Result<SelectionOutcome> {
    match mode {
        SelectionMode::Greedy => greedy_select(current, candidates, reference, scorer),
        SelectionMode::NoCombination => {
            let pool = TagPrompt::from_fragments(candidates.iter().cloned());
            greedy_over_pool(current, pool, reference, scorer)
        }
        SelectionMode::AcceptAll => {
            let selected = build_pool(current, candidates);
            let final_score = if selected.is_empty() {
                None
            } else {
                Some(scorer.score(reference, &selected)?)
            };
            Ok(SelectionOutcome {
                selected,
                final_score,
                picks: Vec::new(),
                fell_back: false,
            })
        }
    }
}

fn greedy_over_pool(
    current: &TagPrompt,
    pool: TagPrompt,
    reference: &ImageRef,
    scorer: &dyn PromptScorer,
) -> Result<SelectionOutcome> {
    let baseline = if current.is_empty() {
        None
    } else {
        Some(scorer.score(reference, current)?)
    };
    let mut s_max = baseline.map_or(f64::NEG_INFINITY, |s| s.raw_cosine);
    let mut remaining: Vec<Fragment> = pool.fragments().to_vec();
    let mut selection = TagPrompt::empty();
    let mut picks: Vec<Pick> = Vec::new();

    while !remaining.is_empty() {
        let mut best: Option<(usize, ScoreValue)> = None;
        for (i, fragment) in remaining.iter().enumerate() {
            let mut trial = selection.clone();
            trial.push(fragment.clone());
            let s = scorer.score(reference, &trial)?;
            if best.is_none_or(|(_, b)| s.raw_cosine > b.raw_cosine) {
                best = Some((i, s));
            }
        }
        let (index, score) = best.expect("pool is non-empty");
        if score.raw_cosine.is_nan() || score.raw_cosine < s_max {
            break;
        }
        let fragment = remaining.remove(index);
        picks.push(Pick {
            fragment: fragment.text.clone(),
            score,
        });
        selection.push(fragment);
        s_max = score.raw_cosine;
    }

    let regressed = match (baseline, picks.last()) {
        (Some(b), Some(last)) => last.score.raw_cosine < b.raw_cosine,
        _ => false,
    };
    if selection.is_empty() || regressed {
        return Ok(SelectionOutcome {
            selected: current.clone(),
            final_score: baseline,
            picks,
            fell_back: true,
        });
    }
    Ok(SelectionOutcome {
        selected: selection,
        final_score: picks.last().map(|p| p.score),
        picks,
        fell_back: false,
    })
}

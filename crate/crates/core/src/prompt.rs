//! Prompt text and output-token budgets for every VLM call.

use serde::{Deserialize, Serialize};

use crate::error::{PromptError, ValidationError};
use crate::types::TokenBudgetSchedule;

pub const BASE_PROMPT: &str = "Compose a descriptive narrative.";
pub const FOLLOWUP_PREFIX: &str = "The image describes [";
pub const FOLLOWUP_SUFFIX: &str = "]. Describe the undetected objects.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    Base,
    Followup,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub role: PromptRole,
}

impl PromptText {
    /// Bracketed context of a follow-up prompt, if this is one.
    pub fn followup_context(&self) -> Option<&str> {
        self.text
            .strip_prefix(FOLLOWUP_PREFIX)?
            .strip_suffix(FOLLOWUP_SUFFIX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccumulationMode {
    /// Follow-up cameras see only the base camera's text.
    BaseOnly,
    /// Follow-up cameras see the base text plus every earlier follow-up.
    Accumulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct AccumulationPolicy {
    mode: AccumulationMode,
    max_context_chars: usize,
}

impl AccumulationPolicy {
    pub fn new(mode: AccumulationMode, max_context_chars: usize) -> Result<Self, ValidationError> {
        if max_context_chars < 200 {
            return Err(ValidationError::Config(format!(
                "max_context_chars {max_context_chars} is below 200"
            )));
        }
        Ok(Self {
            mode,
            max_context_chars,
        })
    }

    pub fn mode(&self) -> AccumulationMode {
        self.mode
    }

    pub fn max_context_chars(&self) -> usize {
        self.max_context_chars
    }
}

impl Default for AccumulationPolicy {
    fn default() -> Self {
        Self {
            mode: AccumulationMode::Accumulate,
            max_context_chars: 2000,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawPolicy {
    #[serde(default = "default_mode")]
    mode: AccumulationMode,
    #[serde(default = "default_chars")]
    max_context_chars: usize,
}

fn default_mode() -> AccumulationMode {
    AccumulationMode::Accumulate
}

fn default_chars() -> usize {
    2000
}

impl TryFrom<RawPolicy> for AccumulationPolicy {
    type Error = ValidationError;

    fn try_from(raw: RawPolicy) -> Result<Self, Self::Error> {
        Self::new(raw.mode, raw.max_context_chars)
    }
}

impl From<AccumulationPolicy> for RawPolicy {
    fn from(p: AccumulationPolicy) -> Self {
        RawPolicy {
            mode: p.mode,
            max_context_chars: p.max_context_chars,
        }
    }
}

/// Ingestion strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Every camera, every clip, full prompt at the baseline budget.
    #[serde(rename = "baseline")]
    Baseline,
    /// Base camera first, then incremental follow-ups under reduced budgets
    /// with redundant clips skipped.
    #[serde(rename = "trafficlens")]
    TrafficLens,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::TrafficLens => "trafficlens",
        })
    }
}

pub fn base_prompt() -> PromptText {
    PromptText {
        text: BASE_PROMPT.to_owned(),
        role: PromptRole::Base,
    }
}

/// Same text as [`base_prompt`], tagged as a baseline-mode call.
pub fn baseline_prompt() -> PromptText {
    PromptText {
        text: BASE_PROMPT.to_owned(),
        role: PromptRole::Baseline,
    }
}

pub fn followup_prompt(
    prior_text: &str,
    policy: &AccumulationPolicy,
) -> Result<PromptText, PromptError> {
    if prior_text.trim().is_empty() {
        return Err(PromptError::EmptyPriorText);
    }
    let context = truncate_at_word(prior_text, policy.max_context_chars);
    Ok(PromptText {
        text: format!("{FOLLOWUP_PREFIX}{context}{FOLLOWUP_SUFFIX}"),
        role: PromptRole::Followup,
    })
}

/// Longest prefix of at most `max_chars` characters that ends at a word
/// boundary, with trailing whitespace removed. A single word longer than
/// the limit is cut hard.
pub fn truncate_at_word(text: &str, max_chars: usize) -> &str {
    let Some((cut, _)) = text.char_indices().nth(max_chars) else {
        return text;
    };
    let head = &text[..cut];
    let next_is_space = text[cut..].starts_with(char::is_whitespace);
    if next_is_space {
        return head.trim_end();
    }
    match head.rfind(char::is_whitespace) {
        Some(ws) if !head[..ws].trim_end().is_empty() => head[..ws].trim_end(),
        _ => head,
    }
}

/// Output budget for a camera at `rank` (0 = base camera).
pub fn budget_for(rank: usize, schedule: &TokenBudgetSchedule, mode: Mode) -> u32 {
    match mode {
        Mode::Baseline => schedule.baseline_limit(),
        Mode::TrafficLens if rank == 0 => schedule.base_limit(),
        Mode::TrafficLens => schedule.followup_limit(),
    }
}

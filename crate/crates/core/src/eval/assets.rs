//! Versioned prompt tables shipped with the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text_negation::{contains_negation, NegationLexicon};

const CELEBA_PROMPTS: &str = include_str!("../../assets/celeba_attribute_prompts.jsonl");
const NEG_SCORE_PROMPTS: &str = include_str!("../../assets/neg_score_prompts.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributePromptPair {
    pub attribute: String,
    pub positive_prompt: String,
    pub negative_prompt: String,
}

impl AttributePromptPair {
    /// Prompts must differ and at least one must carry a negation term.
    pub fn check(&self, lexicon: &NegationLexicon) -> std::result::Result<(), String> {
        if self.positive_prompt == self.negative_prompt {
            return Err(format!("{}: prompts are identical", self.attribute));
        }
        if !contains_negation(&self.positive_prompt, lexicon).found()
            && !contains_negation(&self.negative_prompt, lexicon).found()
        {
            return Err(format!("{}: neither prompt is negated", self.attribute));
        }
        Ok(())
    }
}

/// A generation prompt with its two VQA questions: the first expects `yes`
/// (subject present), the second `no` (negated content absent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegPrompt {
    pub prompt: String,
    pub question1: String,
    pub question2: String,
}

fn parse_lines<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{name}:{}", i + 1), e)))
        .collect()
}

/// The 40-attribute face prompt table.
pub fn celeba_prompts() -> Vec<AttributePromptPair> {
    parse_lines(CELEBA_PROMPTS, "celeba_attribute_prompts.jsonl").expect("bundled asset parses")
}

/// The 107-prompt generation table.
pub fn neg_score_prompts() -> Vec<NegPrompt> {
    parse_lines(NEG_SCORE_PROMPTS, "neg_score_prompts.jsonl").expect("bundled asset parses")
}

pub fn load_attribute_prompts(path: &std::path::Path) -> Result<Vec<AttributePromptPair>> {
    crate::jsonl::read_jsonl(path)
}

pub fn load_neg_prompts(path: &std::path::Path) -> Result<Vec<NegPrompt>> {
    crate::jsonl::read_jsonl(path)
}

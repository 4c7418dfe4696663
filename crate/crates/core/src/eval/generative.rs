//! Protocols that judge generated images through adapters and a VQA model.

use rayon::prelude::*;
use serde_json::json;

use super::adapters::{ImageGenerator, ObjectDetector};
use super::assets::NegPrompt;
use super::{BenchmarkReport, Excluded, ItemResult};
use crate::error::Result;
use crate::model_clients::templates::{bindings, IMAGE_BINDING};
use crate::model_clients::{ask, parse_yes_no, ChatClient, PromptTemplate, YesNo};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegScoreOutcome {
    pub score: f64,
    /// Set when either answer was neither yes nor no.
    pub flagged: bool,
}

/// 1 iff the subject is confirmed and the negated content denied.
pub fn neg_score_item(answer1: YesNo, answer2: YesNo) -> NegScoreOutcome {
    NegScoreOutcome {
        score: if answer1 == YesNo::Yes && answer2 == YesNo::No { 1.0 } else { 0.0 },
        flagged: answer1 == YesNo::Ambiguous || answer2 == YesNo::Ambiguous,
    }
}

fn item_id(index: usize, seed: u64) -> String {
    format!("{index:04}-s{seed}")
}

/// Generates one image per (prompt, seed) and asks both questions about it.
/// Generation and transport failures exclude the item.
pub fn neg_score(
    prompts: &[NegPrompt],
    generator: &dyn ImageGenerator,
    mllm: &dyn ChatClient,
    seeds: &[u64],
) -> Result<BenchmarkReport> {
    let template = PromptTemplate::vqa_judge();
    let jobs: Vec<(usize, u64)> = (0..prompts.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes: Vec<(String, Result<ItemResult>)> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let p = &prompts[i];
            let id = item_id(i, seed);
            let result = (|| {
                let image = generator.generate(&p.prompt, seed)?;
                let image = image.to_string_lossy();
                let reply1 = ask(mllm, &template, &bindings([("question", &p.question1), (IMAGE_BINDING, &image)]), 0)?;
                let reply2 = ask(mllm, &template, &bindings([("question", &p.question2), (IMAGE_BINDING, &image)]), 0)?;
                let (a1, a2) = (parse_yes_no(&reply1), parse_yes_no(&reply2));
                let outcome = neg_score_item(a1, a2);
                let mut item = ItemResult::new(
                    &id,
                    outcome.score,
                    json!({"prompt": p.prompt, "seed": seed, "image": image, "answers": [reply1, reply2]}),
                );
                item.flagged = outcome.flagged;
                Ok(item)
            })();
            (id, result)
        })
        .collect();
    let mut items = Vec::new();
    let mut excluded = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(item) => items.push(item),
            Err(e) => excluded.push(Excluded { id, reason: format!("{}: {e}", e.class()) }),
        }
    }
    Ok(BenchmarkReport::new("neg-score", items, 1.0, excluded)
        .with_config("seeds", seeds)
        .with_config("prompts", prompts.len())
        .with_config("mllm", mllm.model()))
}

pub fn absence_prompt(object: &str) -> String {
    format!("a realistic photo of a scene without {object}")
}

/// Scores 1 when the detector does not find `object` in the generated image.
pub fn absence_check(
    objects: &[String],
    generator: &dyn ImageGenerator,
    detector: &dyn ObjectDetector,
    seeds: &[u64],
) -> Result<BenchmarkReport> {
    let jobs: Vec<(usize, u64)> = (0..objects.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes: Vec<(String, Result<ItemResult>)> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let object = &objects[i];
            let id = item_id(i, seed);
            let result = (|| {
                let prompt = absence_prompt(object);
                let image = generator.generate(&prompt, seed)?;
                let detected = detector.detect(&image, object)?;
                Ok(ItemResult::new(
                    &id,
                    if detected { 0.0 } else { 1.0 },
                    json!({"prompt": prompt, "object": object, "seed": seed, "detected": detected}),
                ))
            })();
            (id, result)
        })
        .collect();
    let mut items = Vec::new();
    let mut excluded = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(item) => items.push(item),
            Err(e) => excluded.push(Excluded { id, reason: format!("{}: {e}", e.class()) }),
        }
    }
    Ok(BenchmarkReport::new("absence-check", items, 100.0, excluded).with_config("seeds", seeds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model_clients::StubClient;
    use std::path::{Path, PathBuf};

    struct FakeGenerator;

    impl ImageGenerator for FakeGenerator {
        fn generate(&self, prompt: &str, seed: u64) -> Result<PathBuf> {
            if prompt.contains("broken") {
                return Err(Error::Adapter("generator crashed".into()));
            }
            Ok(PathBuf::from(format!("/gen/{}-{seed}.png", prompt.replace(' ', "_"))))
        }
    }

    struct FakeDetector;

    impl ObjectDetector for FakeDetector {
        fn detect(&self, image: &Path, object: &str) -> Result<bool> {
            // The seed-1 image of "cat" still contains a cat.
            Ok(object == "cat" && image.to_string_lossy().ends_with("-1.png"))
        }
    }

    #[test]
    fn item_rule() {
        assert_eq!(neg_score_item(YesNo::Yes, YesNo::No).score, 1.0);
        assert_eq!(neg_score_item(YesNo::Yes, YesNo::Yes).score, 0.0);
        assert_eq!(neg_score_item(YesNo::No, YesNo::No).score, 0.0);
        let amb = neg_score_item(YesNo::Yes, YesNo::Ambiguous);
        assert_eq!((amb.score, amb.flagged), (0.0, true));
    }

    fn prompt(p: &str, q1: &str, q2: &str) -> NegPrompt {
        NegPrompt { prompt: p.into(), question1: q1.into(), question2: q2.into() }
    }

    #[test]
    fn neg_score_over_stubbed_answers() {
        let prompts = vec![
            prompt("a dog not running", "Is this a dog?", "Is the dog running?"),
            prompt("a cat with no hat", "Is this a cat?", "Does the cat have a hat?"),
            prompt("a broken prompt", "Is this a thing?", "Is it broken?"),
        ];
        let mllm = StubClient::new("judge")
            .on("Is this a dog?", &["Yes."])
            .on("Is the dog running?", &["No, it is sitting."])
            .on("Is this a cat?", &["yes"])
            .on("Does the cat have a hat?", &["Perhaps"]);
        let report = neg_score(&prompts, &FakeGenerator, &mllm, &[0, 1]).unwrap();
        assert_eq!(report.items.len(), 4);
        assert_eq!(report.excluded.len(), 2);
        assert_eq!(report.aggregate, 0.5);
        assert_eq!(report.flagged(), 2);
        assert_eq!(report.items[0].id, "0000-s0");
        report.verify().unwrap();
    }

    #[test]
    fn absence_scores_undetected_objects() {
        let objects = vec!["cat".to_string(), "dog".to_string()];
        let report = absence_check(&objects, &FakeGenerator, &FakeDetector, &[0, 1]).unwrap();
        let scores: Vec<f64> = report.items.iter().map(|i| i.score).collect();
        assert_eq!(scores, vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(report.aggregate, 75.0);
        assert_eq!(absence_prompt("cat"), "a realistic photo of a scene without cat");
    }
}

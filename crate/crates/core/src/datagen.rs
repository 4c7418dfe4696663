//! Negation-inclusive caption generation.
//!
//! Two pipelines feed the fine-tuning data:
//!
//! * **object absence** (`P1`): ask a text model for an object that is likely
//!   but unmentioned, confirm with an image model that it is absent, then ask
//!   the text model to fold the absence into the caption. The `RandP1`
//!   ablation replaces the first step with a uniform draw from a fixed
//!   vocabulary.
//! * **question-derived** (`P2`): keep VQA triplets answered "no" and ask the
//!   text model to rewrite the caption given that answer.
//!
//! Every emitted caption is re-checked for a negation term (and, for object
//! pipelines, a mention of the object). Failures are counted per reason and
//! never abort a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_clients::templates::{bindings, IMAGE_BINDING};
use crate::model_clients::{ask, parse_object, parse_yes_no, ChatClient, PromptTemplate, YesNo};
use crate::text_negation::{contains_negation, tokenize, NegationLexicon};

/// The 80 object categories of the COCO detection set, used by `RandP1`.
pub const COCO_CATEGORIES: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
];

/// Each model step is tried once more before the item is dropped.
const MAX_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    P1,
    P2,
    RandP1,
    OriginalCaption,
}

impl std::str::FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "p1" => Ok(Pipeline::P1),
            "p2" => Ok(Pipeline::P2),
            "randp1" => Ok(Pipeline::RandP1),
            "originalcaption" | "original" => Ok(Pipeline::OriginalCaption),
            other => Err(Error::Config(format!("unknown pipeline `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Object { object: String },
    Question { question: String, answer: String },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Absence {
    Absent,
    Present,
    Ambiguous,
}

/// What the image model said, raw replies included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub verdict: Absence,
    pub replies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedPair {
    pub id: String,
    pub image: ImageRef,
    pub original_caption: String,
    pub augmented_caption: String,
    pub pipeline: Pipeline,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<Verification>,
    pub matched_terms: Vec<String>,
}

impl GeneratedPair {
    /// Checks the pair invariants against `lexicon`.
    pub fn validate(&self, lexicon: &NegationLexicon) -> std::result::Result<(), String> {
        if self.augmented_caption.trim().is_empty() {
            return Err("augmented caption is empty".into());
        }
        match self.pipeline {
            Pipeline::OriginalCaption => {
                if self.augmented_caption != self.original_caption {
                    return Err("original-caption pair must keep the caption".into());
                }
            }
            _ => {
                let found = contains_negation(&self.augmented_caption, lexicon);
                if !found.found() || self.matched_terms.is_empty() {
                    return Err("augmented caption has no negation term".into());
                }
                if found.matched != self.matched_terms {
                    return Err("matched_terms disagree with the caption".into());
                }
            }
        }
        if matches!(self.pipeline, Pipeline::P1 | Pipeline::RandP1) {
            let Provenance::Object { object } = &self.provenance else {
                return Err("object pipeline without object provenance".into());
            };
            if !mentions(&self.augmented_caption, object) {
                return Err(format!("caption does not mention `{object}`"));
            }
        }
        Ok(())
    }

    /// The `OriginalCaption` ablation counterpart of this pair.
    pub fn to_original_caption(&self, lexicon: &NegationLexicon) -> GeneratedPair {
        GeneratedPair {
            id: self.id.clone(),
            image: self.image.clone(),
            original_caption: self.original_caption.clone(),
            augmented_caption: self.original_caption.clone(),
            pipeline: Pipeline::OriginalCaption,
            provenance: Provenance::None,
            verification: None,
            matched_terms: contains_negation(&self.original_caption, lexicon).matched,
        }
    }
}

/// Whether every token of `phrase` appears contiguously in `text`'s tokens.
pub fn mentions(text: &str, phrase: &str) -> bool {
    let hay = tokenize(text);
    let needle = tokenize(phrase);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    ObjectPresent,
    Ambiguous,
    ParseReject,
    MissingNegation,
    Io,
    ModelError,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTotals {
    pub attempted: u64,
    pub emitted: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRunReport {
    pub attempted: u64,
    pub emitted: u64,
    pub dropped_by_reason: BTreeMap<DropReason, u64>,
    pub per_pipeline: BTreeMap<Pipeline, PipelineTotals>,
    /// Inputs filtered out by selection rules before any model call; not
    /// part of `attempted`.
    #[serde(default)]
    pub not_selected: u64,
}

impl PipelineRunReport {
    pub fn dropped(&self, reason: DropReason) -> u64 {
        self.dropped_by_reason.get(&reason).copied().unwrap_or(0)
    }

    pub fn total_dropped(&self) -> u64 {
        self.dropped_by_reason.values().sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.attempted == self.emitted + self.total_dropped()
    }

    pub fn merge(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.attempted += other.attempted;
        out.emitted += other.emitted;
        out.not_selected += other.not_selected;
        for (reason, n) in &other.dropped_by_reason {
            *out.dropped_by_reason.entry(*reason).or_default() += n;
        }
        for (pipeline, totals) in &other.per_pipeline {
            let entry = out.per_pipeline.entry(*pipeline).or_default();
            entry.attempted += totals.attempted;
            entry.emitted += totals.emitted;
        }
        out
    }

    fn record(&mut self, pipeline: Pipeline, outcome: &std::result::Result<GeneratedPair, Drop>) {
        self.attempted += 1;
        let totals = self.per_pipeline.entry(pipeline).or_default();
        totals.attempted += 1;
        match outcome {
            Ok(_) => {
                self.emitted += 1;
                totals.emitted += 1;
            }
            Err(drop) => *self.dropped_by_reason.entry(drop.reason).or_default() += 1,
        }
    }
}

/// A per-item failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Drop {
    pub reason: DropReason,
    pub detail: String,
}

impl Drop {
    fn new(reason: DropReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
        }
    }

    fn model(err: Error) -> Self {
        Self::new(DropReason::ModelError, err.to_string())
    }
}

type Step<T> = std::result::Result<T, Drop>;

/// A captioned image from a captioning dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionItem {
    #[serde(default)]
    pub id: Option<String>,
    pub image: String,
    pub caption: String,
}

/// A VQA triplet joined with a caption of the same image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaItem {
    #[serde(default)]
    pub id: Option<String>,
    pub image: String,
    pub question: String,
    pub answer: String,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectSource {
    Plausible,
    Random,
}

#[derive(Debug, Clone)]
pub struct DatagenConfig {
    pub seed: u64,
    pub max_items: Option<usize>,
    /// Worker threads for per-item processing.
    pub width: usize,
    /// Base directory for relative image paths.
    pub image_root: Option<PathBuf>,
    pub lexicon: NegationLexicon,
    /// Object vocabulary for the random-object variant.
    pub vocabulary: Vec<String>,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_items: None,
            width: 1,
            image_root: None,
            lexicon: NegationLexicon::default(),
            vocabulary: COCO_CATEGORIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Wires a text model and an image model to the pipeline steps.
pub struct Generator<'a> {
    pub llm: &'a dyn ChatClient,
    pub mllm: &'a dyn ChatClient,
    pub config: DatagenConfig,
}

fn clean_caption(raw: &str) -> String {
    let trimmed = raw.trim();
    let unquoted = trimmed
        .strip_prefix(['"', '\'', '“'])
        .and_then(|s| s.strip_suffix(['"', '\'', '”']))
        .unwrap_or(trimmed);
    unquoted.trim().to_owned()
}

impl<'a> Generator<'a> {
    pub fn new(llm: &'a dyn ChatClient, mllm: &'a dyn ChatClient, config: DatagenConfig) -> Self {
        Self { llm, mllm, config }
    }

    fn resolve(&self, image: &str) -> PathBuf {
        match &self.config.image_root {
            Some(root) if Path::new(image).is_relative() => root.join(image),
            _ => PathBuf::from(image),
        }
    }

    fn image_ref(&self, image: &str) -> Step<(ImageRef, PathBuf)> {
        let path = self.resolve(image);
        let (width, height) = image::image_dimensions(&path)
            .map_err(|e| Drop::new(DropReason::Io, format!("{}: {e}", path.display())))?;
        Ok((
            ImageRef {
                path: image.to_owned(),
                width,
                height,
            },
            path,
        ))
    }

    /// Asks for an unmentioned but likely object; one re-query on a bad or
    /// already-mentioned answer.
    pub fn extract_plausible_object(&self, caption: &str) -> Step<String> {
        let template = PromptTemplate::pipeline1_step1();
        let b = bindings([("caption", caption)]);
        let mut last = Drop::new(DropReason::ParseReject, "no attempt made");
        for attempt in 0..MAX_ATTEMPTS {
            let raw = ask(self.llm, &template, &b, attempt).map_err(Drop::model)?;
            match parse_object(&raw) {
                None => last = Drop::new(DropReason::ParseReject, format!("unparseable object reply `{raw}`")),
                Some(object) if mentions(caption, &object) => {
                    last = Drop::new(DropReason::ParseReject, format!("object `{object}` already in caption"))
                }
                Some(object) => return Ok(object),
            }
        }
        Err(last)
    }

    /// Uniform draw from the vocabulary, excluding anything the caption names.
    pub fn random_object(&self, caption: &str, rng: &mut ChaCha8Rng) -> Step<String> {
        let candidates: Vec<&String> = self
            .config
            .vocabulary
            .iter()
            .filter(|obj| !mentions(caption, obj))
            .collect();
        candidates
            .choose(rng)
            .map(|s| (*s).clone())
            .ok_or_else(|| Drop::new(DropReason::ParseReject, "vocabulary exhausted by caption"))
    }

    pub fn verify_absence(&self, image: &Path, object: &str) -> Step<Verification> {
        if let Err(e) = image::image_dimensions(image) {
            return Err(Drop::new(DropReason::Io, format!("{}: {e}", image.display())));
        }
        let template = PromptTemplate::pipeline1_step2();
        let image_str = image.to_string_lossy();
        let b = bindings([("object", object), (IMAGE_BINDING, &image_str)]);
        let mut replies = Vec::new();
        for attempt in 0..MAX_ATTEMPTS {
            let raw = ask(self.mllm, &template, &b, attempt).map_err(Drop::model)?;
            let answer = parse_yes_no(&raw);
            replies.push(raw);
            let verdict = match answer {
                YesNo::No => Absence::Absent,
                YesNo::Yes => Absence::Present,
                YesNo::Ambiguous => continue,
            };
            return Ok(Verification { verdict, replies });
        }
        Ok(Verification {
            verdict: Absence::Ambiguous,
            replies,
        })
    }

    /// Rewrites the caption to state the object's absence. The reply must
    /// carry a negation term and mention the object.
    pub fn augment_with_absence(&self, caption: &str, object: &str) -> Step<(String, Vec<String>)> {
        let template = PromptTemplate::pipeline1_step3();
        let b = bindings([("object", object), ("caption", caption)]);
        self.rewrite(&template, &b, Some(object))
    }

    fn augment_from_question(&self, caption: &str, question: &str) -> Step<(String, Vec<String>)> {
        let template = PromptTemplate::pipeline2_step2();
        let b = bindings([("question", question), ("caption", caption)]);
        self.rewrite(&template, &b, None)
    }

    fn rewrite(
        &self,
        template: &PromptTemplate,
        b: &BTreeMap<String, String>,
        object: Option<&str>,
    ) -> Step<(String, Vec<String>)> {
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            let raw = ask(self.llm, template, b, attempt).map_err(Drop::model)?;
            let caption = clean_caption(&raw);
            let found = contains_negation(&caption, &self.config.lexicon);
            let has_object = object.is_none_or(|o| mentions(&caption, o));
            if !caption.is_empty() && found.found() && has_object {
                return Ok((caption, found.matched));
            }
            last = caption;
        }
        Err(Drop::new(
            DropReason::MissingNegation,
            format!("rewrite failed validation: `{last}`"),
        ))
    }

    fn p1_item(&self, index: usize, item: &CaptionItem, source: ObjectSource) -> Step<GeneratedPair> {
        let (image, path) = self.image_ref(&item.image)?;
        let object = match source {
            ObjectSource::Plausible => self.extract_plausible_object(&item.caption)?,
            ObjectSource::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                rng.set_stream(index as u64);
                self.random_object(&item.caption, &mut rng)?
            }
        };
        let verification = self.verify_absence(&path, &object)?;
        match verification.verdict {
            Absence::Absent => {}
            Absence::Present => {
                return Err(Drop::new(DropReason::ObjectPresent, format!("`{object}` is present")))
            }
            Absence::Ambiguous => {
                return Err(Drop::new(DropReason::Ambiguous, format!("no clear answer for `{object}`")))
            }
        }
        let (augmented, matched) = self.augment_with_absence(&item.caption, &object)?;
        Ok(GeneratedPair {
            id: item.id.clone().unwrap_or_else(|| index.to_string()),
            image,
            original_caption: item.caption.clone(),
            augmented_caption: augmented,
            pipeline: match source {
                ObjectSource::Plausible => Pipeline::P1,
                ObjectSource::Random => Pipeline::RandP1,
            },
            provenance: Provenance::Object { object },
            verification: Some(verification),
            matched_terms: matched,
        })
    }

    fn p2_item(&self, index: usize, item: &VqaItem) -> Step<GeneratedPair> {
        let (image, _) = self.image_ref(&item.image)?;
        let (augmented, matched) = self.augment_from_question(&item.caption, &item.question)?;
        Ok(GeneratedPair {
            id: item.id.clone().unwrap_or_else(|| index.to_string()),
            image,
            original_caption: item.caption.clone(),
            augmented_caption: augmented,
            pipeline: Pipeline::P2,
            provenance: Provenance::Question {
                question: item.question.clone(),
                answer: item.answer.clone(),
            },
            verification: None,
            matched_terms: matched,
        })
    }

    fn run_items<T, F>(&self, items: &[T], pipeline: Pipeline, work: F) -> Result<RunOutput>
    where
        T: Sync,
        F: Fn(usize, &T) -> Step<GeneratedPair> + Sync,
    {
        let limit = self.config.max_items.unwrap_or(usize::MAX).min(items.len());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.width.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let outcomes: Vec<Step<GeneratedPair>> = pool.install(|| {
            items[..limit]
                .par_iter()
                .enumerate()
                .map(|(i, item)| work(i, item))
                .collect()
        });
        let mut report = PipelineRunReport::default();
        let mut pairs = Vec::new();
        let mut drops = Vec::new();
        for (i, outcome) in outcomes.into_iter().enumerate() {
            report.record(pipeline, &outcome);
            match outcome {
                Ok(pair) => pairs.push(pair),
                Err(drop) => {
                    log::info!("item {i} dropped ({:?}): {}", drop.reason, drop.detail);
                    drops.push((i, drop));
                }
            }
        }
        Ok(RunOutput {
            pairs,
            report,
            drops,
        })
    }

    pub fn run_pipeline1(&self, items: &[CaptionItem], source: ObjectSource) -> Result<RunOutput> {
        if source == ObjectSource::Random && self.config.vocabulary.is_empty() {
            return Err(Error::Config("random-object variant needs a vocabulary".into()));
        }
        let pipeline = match source {
            ObjectSource::Plausible => Pipeline::P1,
            ObjectSource::Random => Pipeline::RandP1,
        };
        self.run_items(items, pipeline, |i, item| self.p1_item(i, item, source))
    }

    pub fn run_pipeline2(&self, items: &[VqaItem]) -> Result<RunOutput> {
        let selected: Vec<(usize, &VqaItem)> = items
            .iter()
            .enumerate()
            .filter(|(_, item)| is_no_answer(&item.answer))
            .collect();
        let not_selected = (items.len() - selected.len()) as u64;
        let mut out = self.run_items(&selected, Pipeline::P2, |_, (orig, item)| self.p2_item(*orig, item))?;
        out.report.not_selected = not_selected;
        Ok(out)
    }
}

/// Whether a VQA answer is a plain "no".
pub fn is_no_answer(answer: &str) -> bool {
    answer
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .eq_ignore_ascii_case("no")
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub pairs: Vec<GeneratedPair>,
    pub report: PipelineRunReport,
    /// Dropped input indices with reasons.
    pub drops: Vec<(usize, Drop)>,
}

impl RunOutput {
    /// Writes `pairs` as JSON Lines and the report to `<out>.report.json`.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        crate::jsonl::write_jsonl(out, &self.pairs)?;
        let report_path = report_path(out);
        crate::jsonl::write_json(&report_path, &self.report)?;
        Ok(report_path)
    }
}

pub fn report_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

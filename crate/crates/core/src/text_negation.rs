//! Negation-term detection and caption corpus statistics.
//!
//! This is the reference implementation of the counting rules. Any faster
//! scanner must reproduce [`scan_corpus`] exactly, so the tokenizer rules here
//! are deliberately small:
//!
//! * split on Unicode whitespace,
//! * strip Unicode punctuation (`\p{P}`) from both edges of each token,
//! * lowercase,
//! * drop tokens that end up empty.
//!
//! Inner punctuation survives (`o'clock`, `t-shirt`), and matching against the
//! lexicon is always whole-token.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static EDGE_PUNCT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\p{P}+|\p{P}+$").expect("static regex"));

/// The default negation terms.
pub const DEFAULT_TERMS: [&str; 3] = ["no", "not", "without"];

/// An ordered set of lowercase negation words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct NegationLexicon {
    terms: BTreeSet<String>,
}

impl NegationLexicon {
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for term in terms {
            let term = term.into();
            if term.is_empty() {
                return Err(Error::Lexicon("empty term".into()));
            }
            if term.chars().any(char::is_whitespace) {
                return Err(Error::Lexicon(format!("term `{term}` contains whitespace")));
            }
            if term.to_lowercase() != term {
                return Err(Error::Lexicon(format!("term `{term}` is not lowercase")));
            }
            set.insert(term);
        }
        if set.is_empty() {
            return Err(Error::Lexicon("lexicon must not be empty".into()));
        }
        Ok(Self { terms: set })
    }

    /// Parses a comma-separated list such as `no,not,without`.
    pub fn parse_list(list: &str) -> Result<Self> {
        Self::new(list.split(',').map(str::trim).filter(|t| !t.is_empty()))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.terms.contains(token)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }
}

impl Default for NegationLexicon {
    fn default() -> Self {
        Self::new(DEFAULT_TERMS).expect("default lexicon is valid")
    }
}

impl TryFrom<Vec<String>> for NegationLexicon {
    type Error = Error;

    fn try_from(value: Vec<String>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<NegationLexicon> for Vec<String> {
    fn from(value: NegationLexicon) -> Self {
        value.terms.into_iter().collect()
    }
}

/// A raw caption with its corpus id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
}

/// Normalizes a single whitespace-delimited chunk into a token.
fn normalize_token(raw: &str) -> Option<String> {
    let stripped = EDGE_PUNCT.replace_all(raw, "");
    if stripped.is_empty() {
        None
    } else {
        Some(stripped.to_lowercase())
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(normalize_token).collect()
}

/// Result of [`contains_negation`]: the matched terms in order of appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NegationMatch {
    pub matched: Vec<String>,
}

impl NegationMatch {
    pub fn found(&self) -> bool {
        !self.matched.is_empty()
    }
}

pub fn contains_negation(text: &str, lexicon: &NegationLexicon) -> NegationMatch {
    NegationMatch {
        matched: tokenize(text)
            .into_iter()
            .filter(|t| lexicon.contains(t))
            .collect(),
    }
}

/// Caption- and word-level negation counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NegationStats {
    pub caption_total: u64,
    pub caption_neg: u64,
    pub word_total: u64,
    pub word_neg: u64,
    pub caption_ratio: f64,
    pub word_ratio: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl NegationStats {
    pub fn from_counts(caption_total: u64, caption_neg: u64, word_total: u64, word_neg: u64) -> Self {
        Self {
            caption_total,
            caption_neg,
            word_total,
            word_neg,
            caption_ratio: ratio(caption_neg, caption_total),
            word_ratio: ratio(word_neg, word_total),
        }
    }

    /// Combines the statistics of two disjoint shards.
    pub fn merge(&self, other: &Self) -> Self {
        Self::from_counts(
            self.caption_total + other.caption_total,
            self.caption_neg + other.caption_neg,
            self.word_total + other.word_total,
            self.word_neg + other.word_neg,
        )
    }
}

/// Streaming accumulator behind [`scan_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusScanner {
    lexicon: NegationLexicon,
    caption_total: u64,
    caption_neg: u64,
    word_total: u64,
    word_neg: u64,
    skipped: u64,
}

impl CorpusScanner {
    pub fn new(lexicon: NegationLexicon) -> Self {
        Self {
            lexicon,
            caption_total: 0,
            caption_neg: 0,
            word_total: 0,
            word_neg: 0,
            skipped: 0,
        }
    }

    pub fn push_text(&mut self, text: &str) {
        let mut words = 0u64;
        let mut neg = 0u64;
        for raw in text.split_whitespace() {
            if let Some(token) = normalize_token(raw) {
                words += 1;
                if self.lexicon.contains(&token) {
                    neg += 1;
                }
            }
        }
        self.caption_total += 1;
        self.word_total += words;
        self.word_neg += neg;
        if neg > 0 {
            self.caption_neg += 1;
        }
    }

    pub fn push_skipped(&mut self) {
        self.skipped += 1;
    }

    pub fn stats(&self) -> NegationStats {
        NegationStats::from_counts(
            self.caption_total,
            self.caption_neg,
            self.word_total,
            self.word_neg,
        )
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn into_report(self) -> ScanReport {
        ScanReport {
            stats: self.stats(),
            skipped: self.skipped,
            lexicon: self.lexicon.terms().map(str::to_owned).collect(),
        }
    }
}

/// Scans a finite stream of well-formed records.
pub fn scan_corpus<I>(records: I, lexicon: &NegationLexicon) -> NegationStats
where
    I: IntoIterator,
    I::Item: AsRef<CaptionRecord>,
{
    let mut scanner = CorpusScanner::new(lexicon.clone());
    for record in records {
        scanner.push_text(&record.as_ref().text);
    }
    scanner.stats()
}

impl AsRef<CaptionRecord> for CaptionRecord {
    fn as_ref(&self) -> &CaptionRecord {
        self
    }
}

/// On-disk caption corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One JSON object per line with `id` and `text` keys.
    Jsonl,
    /// Two tab-separated columns: id, text.
    Tsv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct JsonCaption {
    id: serde_json::Value,
    text: String,
    #[serde(default)]
    source: Option<String>,
}

/// Parses one corpus line. Blank lines yield `Ok(None)`; malformed lines an error.
pub fn parse_line(line: &str, format: CorpusFormat) -> std::result::Result<Option<CaptionRecord>, String> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.trim().is_empty() {
        return Ok(None);
    }
    match format {
        CorpusFormat::Jsonl => {
            let parsed: JsonCaption = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let id = match parsed.id {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                other => return Err(format!("id must be a string or number, got {other}")),
            };
            Ok(Some(CaptionRecord {
                id,
                text: parsed.text,
                source: parsed.source.unwrap_or_default(),
            }))
        }
        CorpusFormat::Tsv => {
            let mut cols = line.split('\t');
            let (Some(id), Some(text), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err("expected exactly two tab-separated columns".into());
            };
            Ok(Some(CaptionRecord {
                id: id.to_owned(),
                text: text.to_owned(),
                source: String::new(),
            }))
        }
    }
}

/// Stats plus bookkeeping, as written by the `stats` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    #[serde(flatten)]
    pub stats: NegationStats,
    pub skipped: u64,
    pub lexicon: Vec<String>,
}

pub fn scan_reader<R: BufRead>(
    reader: R,
    format: CorpusFormat,
    lexicon: &NegationLexicon,
) -> Result<ScanReport> {
    let mut scanner = CorpusScanner::new(lexicon.clone());
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<line {}>", lineno + 1), e))?;
        match parse_line(&line, format) {
            Ok(Some(record)) => scanner.push_text(&record.text),
            Ok(None) => {}
            Err(reason) => {
                log::debug!("skipping malformed line {}: {reason}", lineno + 1);
                scanner.push_skipped();
            }
        }
    }
    Ok(scanner.into_report())
}

pub fn scan_file(path: &Path, format: CorpusFormat, lexicon: &NegationLexicon) -> Result<ScanReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    scan_reader(std::io::BufReader::new(file), format, lexicon)
}

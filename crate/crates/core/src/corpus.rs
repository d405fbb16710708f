//! Human/GPT paired text corpus: ingestion, statistics, balanced sampling,
//! stratified splits, and supervision-pair construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::provenance::{derive_seed, sha256_hex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub mod synth;

/// Class of a text sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "HUMAN")]
    Human,
    #[serde(rename = "GPT")]
    Gpt,
    #[serde(rename = "T5GEN")]
    T5Gen,
    #[serde(rename = "BARTGEN")]
    BartGen,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Human, Label::Gpt, Label::T5Gen, Label::BartGen];

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HUMAN" => Some(Label::Human),
            "GPT" => Some(Label::Gpt),
            "T5GEN" => Some(Label::T5Gen),
            "BARTGEN" => Some(Label::BartGen),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Human => "HUMAN",
            Label::Gpt => "GPT",
            Label::T5Gen => "T5GEN",
            Label::BartGen => "BARTGEN",
        }
    }

    /// Generated labels carry a source link back to the GPT sample they transformed.
    pub fn is_generated(&self) -> bool {
        matches!(self, Label::T5Gen | Label::BartGen)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One paragraph with its class label and optional source linkage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub text: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

/// Supervision pair for humanizer fine-tuning: prefixed GPT text in, human text out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedExample {
    pub input: String,
    pub target: String,
    pub gpt_id: String,
    pub human_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no samples")]
    NoSamples,
    #[error("rejected {rejected} of {total} records, above threshold {threshold}")]
    RejectThreshold {
        rejected: usize,
        total: usize,
        threshold: f64,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("class {label} has {have} samples, need {need}")]
    ClassTooSmall {
        label: Label,
        have: usize,
        need: usize,
    },
    #[error("train ratio {0} outside (0,1)")]
    BadRatio(f64),
    #[error("{count} of {total} GPT samples have dangling source ids (>{threshold:.0}% aborts)")]
    DanglingPairs {
        count: usize,
        total: usize,
        threshold: f64,
    },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("generated sample {0} is missing its source_id")]
    MissingSourceId(String),
    #[error("invalid corpus: {0}")]
    Invalid(String),
}

/// Ordered collection of samples plus a per-class count that always matches a recount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    samples: Vec<TextSample>,
    class_counts: BTreeMap<Label, usize>,
}

impl Corpus {
    pub fn from_samples(samples: Vec<TextSample>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
            if s.text.trim().is_empty() {
                return Err(CorpusError::Invalid(format!("sample {} has empty text", s.id)));
            }
            if s.label.is_generated() && s.source_id.is_none() {
                return Err(CorpusError::MissingSourceId(s.id.clone()));
            }
        }
        let class_counts = recount(&samples);
        Ok(Self {
            samples,
            class_counts,
        })
    }

    pub fn samples(&self) -> &[TextSample] {
        &self.samples
    }

    pub fn class_counts(&self) -> &BTreeMap<Label, usize> {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples of one class, preserving corpus order.
    pub fn filter_label(&self, label: Label) -> Corpus {
        let samples: Vec<_> = self
            .samples
            .iter()
            .filter(|s| s.label == label)
            .cloned()
            .collect();
        let class_counts = recount(&samples);
        Corpus {
            samples,
            class_counts,
        }
    }

    pub fn get(&self, id: &str) -> Option<&TextSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Concatenate corpora; ids must stay unique across the inputs.
    pub fn merge(parts: &[&Corpus]) -> Result<Corpus, CorpusError> {
        let mut samples = Vec::new();
        for p in parts {
            samples.extend(p.samples.iter().cloned());
        }
        Corpus::from_samples(samples)
    }

    /// Canonical JSONL encoding, one sample per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    /// Content hash over the canonical JSONL encoding.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = std::fs::File::create(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| CorpusError::Io {
                path: path.display().to_string(),
                source: e,
            })
    }
}

fn recount(samples: &[TextSample]) -> BTreeMap<Label, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.label).or_insert(0) += 1;
    }
    counts
}

/// On-disk ingestion format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    #[serde(rename = "CSV")]
    Csv,
    #[serde(rename = "JSONL")]
    Jsonl,
}

/// Ingestion knobs; `reject_threshold` is the tolerated fraction of bad records.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub reject_threshold: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            reject_threshold: 0.01,
        }
    }
}

/// A loaded corpus plus descriptions of every rejected record.
#[derive(Debug)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub rejects: Vec<String>,
}

/// Load a corpus, skipping (and counting) invalid records.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let loaded = load_corpus_with(path, format, &LoadOptions::default())?;
    if !loaded.rejects.is_empty() {
        log::warn!(
            "load_corpus: rejected {} record(s): {}",
            loaded.rejects.len(),
            loaded.rejects.join("; ")
        );
    }
    Ok(loaded.corpus)
}

pub fn load_corpus_with(
    path: &Path,
    format: CorpusFormat,
    opts: &LoadOptions,
) -> Result<LoadedCorpus, CorpusError> {
    let raw: Vec<RawRecord> = match format {
        CorpusFormat::Jsonl => read_jsonl(path)?,
        CorpusFormat::Csv => read_csv(path)?,
    };
    if raw.is_empty() {
        return Err(CorpusError::NoSamples);
    }
    let total = raw.len();

    let mut samples = Vec::with_capacity(total);
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (idx, rec) in raw.into_iter().enumerate() {
        match validate_record(rec, idx, &mut seen) {
            Ok(sample) => samples.push(sample),
            Err(reason) => rejects.push(reason),
        }
    }

    if rejects.len() as f64 > opts.reject_threshold * total as f64 {
        return Err(CorpusError::RejectThreshold {
            rejected: rejects.len(),
            total,
            threshold: opts.reject_threshold,
        });
    }
    if samples.is_empty() {
        return Err(CorpusError::NoSamples);
    }
    let corpus = Corpus::from_samples(samples)?;
    Ok(LoadedCorpus { corpus, rejects })
}

#[derive(Debug, Default, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    source_id: Option<String>,
}

fn validate_record(
    rec: RawRecord,
    idx: usize,
    seen: &mut HashSet<String>,
) -> Result<TextSample, String> {
    let text = match rec.text {
        Some(t) if !t.trim().is_empty() => t,
        _ => return Err(format!("record {idx}: missing or empty text")),
    };
    let label = match rec.label.as_deref().and_then(Label::parse) {
        Some(l) => l,
        None => {
            return Err(format!(
                "record {idx}: bad label {:?}",
                rec.label.unwrap_or_default()
            ))
        }
    };
    let source_id = rec.source_id.filter(|s| !s.trim().is_empty());
    if label.is_generated() && source_id.is_none() {
        return Err(format!("record {idx}: {label} sample without source_id"));
    }
    let id = rec.id.filter(|s| !s.is_empty()).unwrap_or_else(|| format!("row{idx}"));
    if !seen.insert(id.clone()) {
        return Err(format!("record {idx}: duplicate id {id}"));
    }
    Ok(TextSample {
        id,
        text,
        label,
        source_id,
    })
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(&line) {
            Ok(rec) => out.push(rec),
            // keep a placeholder so the reject accounting sees the bad line
            Err(_) => out.push(RawRecord::default()),
        }
    }
    Ok(out)
}

fn read_csv(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (id_col, text_col, label_col, source_col) =
        (col("id"), col("text"), col("label"), col("source_id"));

    let mut out = Vec::new();
    for rec in reader.records() {
        match rec {
            Ok(r) => {
                let field = |c: Option<usize>| c.and_then(|i| r.get(i)).map(|s| s.to_string());
                out.push(RawRecord {
                    id: field(id_col),
                    text: field(text_col),
                    label: field(label_col),
                    source_id: field(source_col),
                });
            }
            Err(_) => out.push(RawRecord::default()),
        }
    }
    Ok(out)
}

/// Per-class corpus statistics; a word is a whitespace-delimited token and a
/// character is one unicode scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub paragraphs: u64,
    pub words: u64,
    pub characters: u64,
    pub avg_words_per_paragraph: f64,
    pub token_len_min: u64,
    pub token_len_max: u64,
    pub token_len_mean: f64,
}

impl ClassStats {
    /// Derive the average from raw counts; used both by `compute_stats` and by
    /// table-arithmetic checks on published counts.
    pub fn from_counts(
        paragraphs: u64,
        words: u64,
        characters: u64,
        token_len_min: u64,
        token_len_max: u64,
        token_len_mean: f64,
    ) -> Self {
        Self {
            paragraphs,
            words,
            characters,
            avg_words_per_paragraph: words as f64 / paragraphs as f64,
            token_len_min,
            token_len_max,
            token_len_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_class: BTreeMap<Label, ClassStats>,
    /// Sequence lengths are whitespace-token counts, not model tokens; this
    /// field flags that assumption in every stats artifact.
    pub token_unit: String,
}

/// Per-class paragraph/word/character counts and token-length distribution.
pub fn compute_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut per_class: BTreeMap<Label, (u64, u64, u64, u64, u64, u64)> = BTreeMap::new();
    // (paragraphs, words, characters, min, max, token_sum)
    for s in corpus.samples() {
        let words = s.text.split_whitespace().count() as u64;
        let chars = s.text.chars().count() as u64;
        let e = per_class
            .entry(s.label)
            .or_insert((0, 0, 0, u64::MAX, 0, 0));
        e.0 += 1;
        e.1 += words;
        e.2 += chars;
        e.3 = e.3.min(words);
        e.4 = e.4.max(words);
        e.5 += words;
    }
    let per_class = per_class
        .into_iter()
        .map(|(label, (p, w, c, min, max, sum))| {
            (
                label,
                ClassStats::from_counts(p, w, c, min, max, sum as f64 / p as f64),
            )
        })
        .collect();
    Ok(CorpusStats {
        per_class,
        token_unit: "whitespace".to_string(),
    })
}

/// Sampling/split recipe: 80:20 split over 5,000 samples per class by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
    pub per_class_n: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            seed: 0,
            per_class_n: 5000,
        }
    }
}

/// Draw exactly `per_class_n` samples per present class, without replacement,
/// deterministically for a fixed seed.
pub fn balanced_sample(corpus: &Corpus, spec: &SplitSpec) -> Result<Corpus, CorpusError> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(spec.seed, "balanced_sample"));
    let mut picked = Vec::with_capacity(spec.per_class_n * corpus.class_counts().len());
    for label in Label::ALL {
        let Some(&have) = corpus.class_counts().get(&label) else {
            continue;
        };
        if have < spec.per_class_n {
            return Err(CorpusError::ClassTooSmall {
                label,
                have,
                need: spec.per_class_n,
            });
        }
        let mut idx: Vec<usize> = corpus
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        idx.truncate(spec.per_class_n);
        picked.extend(idx.into_iter().map(|i| corpus.samples()[i].clone()));
    }
    Corpus::from_samples(picked)
}

/// Stratified train/test split: |test| = round((1-ratio)*|corpus|), allocated
/// across classes by largest remainder.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus), CorpusError> {
    if !(spec.train_ratio > 0.0 && spec.train_ratio < 1.0) {
        return Err(CorpusError::BadRatio(spec.train_ratio));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let test_ratio = 1.0 - spec.train_ratio;
    let total_test = (test_ratio * corpus.len() as f64).round() as usize;

    // largest-remainder allocation of the test budget over classes
    let classes: Vec<(Label, usize)> = corpus
        .class_counts()
        .iter()
        .map(|(&l, &n)| (l, n))
        .collect();
    let mut alloc: Vec<usize> = Vec::with_capacity(classes.len());
    let mut rems: Vec<(f64, usize)> = Vec::with_capacity(classes.len());
    let mut assigned = 0usize;
    for (ci, &(_, n)) in classes.iter().enumerate() {
        let quota = test_ratio * n as f64;
        let base = (quota.floor() as usize).min(n);
        alloc.push(base);
        assigned += base;
        rems.push((quota - base as f64, ci));
    }
    rems.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut leftover = total_test.saturating_sub(assigned);
    for &(_, ci) in rems.iter().cycle().take(rems.len() * 2) {
        if leftover == 0 {
            break;
        }
        if alloc[ci] < classes[ci].1 {
            alloc[ci] += 1;
            leftover -= 1;
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(spec.seed, "split"));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, &(label, _)) in classes.iter().enumerate() {
        let mut idx: Vec<usize> = corpus
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let (test_idx, train_idx) = idx.split_at(alloc[ci]);
        test.extend(test_idx.iter().map(|&i| corpus.samples()[i].clone()));
        train.extend(train_idx.iter().map(|&i| corpus.samples()[i].clone()));
    }
    Ok((Corpus::from_samples(train)?, Corpus::from_samples(test)?))
}

/// Pairing outcome: supervision pairs plus the GPT ids that failed to resolve.
#[derive(Debug)]
pub struct PairingOutcome {
    pub pairs: Vec<PairedExample>,
    pub dangling: Vec<String>,
}

const DANGLE_ABORT_FRACTION: f64 = 0.05;

/// Build (prefix + GPT text, human text) supervision pairs keyed by source_id.
///
/// When no GPT sample carries a source_id the two corpora are aligned by row
/// order, loudly: the upstream dataset's pairing is implied, not explicit.
pub fn pair_examples(
    gpt: &Corpus,
    human: &Corpus,
    prefix: &str,
) -> Result<Vec<PairedExample>, CorpusError> {
    let outcome = pair_examples_full(gpt, human, prefix)?;
    if !outcome.dangling.is_empty() {
        log::warn!(
            "pair_examples: excluded {} dangling GPT sample(s): {}",
            outcome.dangling.len(),
            outcome.dangling.join(", ")
        );
    }
    Ok(outcome.pairs)
}

pub fn pair_examples_full(
    gpt: &Corpus,
    human: &Corpus,
    prefix: &str,
) -> Result<PairingOutcome, CorpusError> {
    let make_input = |text: &str| {
        if prefix.is_empty() {
            text.to_string()
        } else {
            format!("{prefix} {text}")
        }
    };

    let any_links = gpt.samples().iter().any(|s| s.source_id.is_some());
    let mut pairs = Vec::new();
    let mut dangling = Vec::new();

    if any_links {
        let by_id: HashMap<&str, &TextSample> =
            human.samples().iter().map(|s| (s.id.as_str(), s)).collect();
        for g in gpt.samples() {
            match g.source_id.as_deref().and_then(|sid| by_id.get(sid)) {
                Some(h) => pairs.push(PairedExample {
                    input: make_input(&g.text),
                    target: h.text.clone(),
                    gpt_id: g.id.clone(),
                    human_id: h.id.clone(),
                }),
                None => dangling.push(g.id.clone()),
            }
        }
    } else {
        log::warn!(
            "pair_examples: no source_id linkage present; aligning {} GPT to {} human samples by row order",
            gpt.len(),
            human.len()
        );
        for (g, h) in gpt.samples().iter().zip(human.samples()) {
            pairs.push(PairedExample {
                input: make_input(&g.text),
                target: h.text.clone(),
                gpt_id: g.id.clone(),
                human_id: h.id.clone(),
            });
        }
        for g in gpt.samples().iter().skip(human.len()) {
            dangling.push(g.id.clone());
        }
    }

    if !gpt.is_empty() && dangling.len() as f64 > DANGLE_ABORT_FRACTION * gpt.len() as f64 {
        return Err(CorpusError::DanglingPairs {
            count: dangling.len(),
            total: gpt.len(),
            threshold: DANGLE_ABORT_FRACTION * 100.0,
        });
    }
    Ok(PairingOutcome { pairs, dangling })
}

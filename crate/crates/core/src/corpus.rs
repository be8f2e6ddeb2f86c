//! Annotated sentences, JSON-lines corpus loading, document-level folds and
//! BIO span encoding.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open token interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Index of the last token in the span.
    pub fn last(&self) -> usize {
        self.end - 1
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub gold_events: Vec<Span>,
    /// `(cause_event_index, effect_event_index)` into `gold_events`.
    pub gold_pairs: Vec<(usize, usize)>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold causal pairs as `(cause_span, effect_span)`.
    pub fn gold_span_pairs(&self) -> Vec<(Span, Span)> {
        self.gold_pairs
            .iter()
            .map(|&(c, e)| (self.gold_events[c], self.gold_events[e]))
            .collect()
    }

    /// Checks every structural invariant; the message names the violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("empty token list".into());
        }
        for span in &self.gold_events {
            if span.start >= span.end || span.end > n {
                return Err(format!("span {span} out of bounds for {n} tokens"));
            }
        }
        let mut sorted = self.gold_events.clone();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0].overlaps(&w[1]) {
                return Err(format!("overlapping events {} and {}", w[0], w[1]));
            }
        }
        let mut seen = HashSet::new();
        for &(c, e) in &self.gold_pairs {
            if c >= self.gold_events.len() || e >= self.gold_events.len() {
                return Err(format!("pair ({c},{e}) references a missing event"));
            }
            if c == e {
                return Err(format!("self-pair ({c},{e})"));
            }
            if !seen.insert((c, e)) {
                return Err(format!("duplicate pair ({c},{e})"));
            }
        }
        Ok(())
    }
}

/// Loads and validates a JSON-lines corpus. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let load_err = |message: String| Error::Load {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let sentence: Sentence =
            serde_json::from_str(&line).map_err(|e| load_err(format!("malformed record: {e}")))?;
        sentence.validate().map_err(load_err)?;
        out.push(sentence);
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    for s in corpus {
        let line = serde_json::to_string(s)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fold_id: usize,
    pub train_doc_ids: BTreeSet<String>,
    pub test_doc_ids: BTreeSet<String>,
}

impl Fold {
    /// Splits `corpus` into (train, test) sentences by document membership.
    pub fn split<'a>(&self, corpus: &'a [Sentence]) -> (Vec<&'a Sentence>, Vec<&'a Sentence>) {
        corpus.iter().partition(|s| self.train_doc_ids.contains(&s.doc_id))
    }
}

/// Partitions documents (not sentences) into `k` folds after a seeded shuffle.
pub fn make_folds(corpus: &[Sentence], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Argument(format!("k must be at least 2, got {k}")));
    }
    let docs: BTreeSet<&str> = corpus.iter().map(|s| s.doc_id.as_str()).collect();
    if docs.len() < k {
        return Err(Error::Argument(format!(
            "{} documents cannot fill {k} folds",
            docs.len()
        )));
    }
    let mut docs: Vec<&str> = docs.into_iter().collect();
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = (0..k)
        .map(|fold_id| {
            let (test, train): (Vec<_>, Vec<_>) = docs
                .iter()
                .enumerate()
                .partition(|(i, _)| i % k == fold_id);
            Fold {
                fold_id,
                train_doc_ids: train.into_iter().map(|(_, d)| d.to_string()).collect(),
                test_doc_ids: test.into_iter().map(|(_, d)| d.to_string()).collect(),
            }
        })
        .collect();
    Ok(folds)
}

/// Single-class BIO tag. The ordering `B < I < O` is the decoder tie-break.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    B,
    I,
    O,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::B, Tag::I, Tag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Tag {
        Tag::ALL[i]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioSequence {
    pub tags: Vec<Tag>,
}

impl BioSequence {
    pub fn new(tags: Vec<Tag>) -> Self {
        Self { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// No `I` at position 0 or directly after `O`.
    pub fn is_well_formed(&self) -> bool {
        let mut prev = Tag::O;
        for &t in &self.tags {
            if t == Tag::I && prev == Tag::O {
                return false;
            }
            prev = t;
        }
        true
    }
}

pub fn bio_encode(sentence: &Sentence) -> Result<BioSequence> {
    let n = sentence.tokens.len();
    let mut tags = vec![Tag::O; n];
    let mut owner: Vec<Option<Span>> = vec![None; n];
    for span in &sentence.gold_events {
        if span.is_empty() || span.end > n {
            return Err(Error::Data(format!(
                "sentence {}: span {span} out of bounds",
                sentence.id
            )));
        }
        for t in span.start..span.end {
            if let Some(other) = owner[t] {
                return Err(Error::Data(format!(
                    "sentence {}: overlapping events {other} and {span}",
                    sentence.id
                )));
            }
            owner[t] = Some(*span);
            tags[t] = if t == span.start { Tag::B } else { Tag::I };
        }
    }
    Ok(BioSequence { tags })
}

/// Maximal `B I*` runs as spans sorted by start. A leading `I` (at position
/// 0 or after `O`) opens a new span as if it were `B`.
pub fn bio_decode(tags: &BioSequence) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.tags.iter().enumerate() {
        match t {
            Tag::B => {
                if let Some(s) = open.take() {
                    spans.push(Span::new(s, i));
                }
                open = Some(i);
            }
            Tag::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            Tag::O => {
                if let Some(s) = open.take() {
                    spans.push(Span::new(s, i));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(Span::new(s, tags.tags.len()));
    }
    spans
}

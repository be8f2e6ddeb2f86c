//! Precision/recall/F1 over extracted cause→effect span pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Span};
use crate::error::{Error, Result};

/// Cause→effect pairs per sentence id.
pub type PairSets = BTreeMap<String, Vec<(Span, Span)>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted_count: usize,
    pub gold_count: usize,
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl PrfResult {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
            true_positives: tp,
            predicted_count: predicted,
            gold_count: gold,
        }
    }
}

fn check_keys(pred: &PairSets, gold: &PairSets) -> Result<()> {
    if pred.keys().ne(gold.keys()) {
        let p: BTreeSet<_> = pred.keys().collect();
        let g: BTreeSet<_> = gold.keys().collect();
        let missing = g.difference(&p).next();
        let extra = p.difference(&g).next();
        return Err(Error::Argument(format!(
            "prediction and gold sentence ids differ (first missing: {missing:?}, first unexpected: {extra:?})"
        )));
    }
    Ok(())
}

fn dedup(pairs: &[(Span, Span)]) -> Vec<(Span, Span)> {
    let mut seen = BTreeSet::new();
    pairs.iter().copied().filter(|p| seen.insert(*p)).collect()
}

/// One-to-one matching count: exact matches first, then (if `relaxed`)
/// greedy token-overlap matches on both sides in prediction order.
fn match_sentence(pred: &[(Span, Span)], gold: &[(Span, Span)], relaxed: bool) -> usize {
    let pred = dedup(pred);
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut tp = 0;
    for (pi, p) in pred.iter().enumerate() {
        if let Some(gi) = (0..gold.len()).find(|&g| !gold_used[g] && gold[g] == *p) {
            gold_used[gi] = true;
            pred_used[pi] = true;
            tp += 1;
        }
    }
    if relaxed {
        for (pi, p) in pred.iter().enumerate() {
            if pred_used[pi] {
                continue;
            }
            if let Some(gi) = (0..gold.len()).find(|&g| !gold_used[g] && gold[g].0.overlaps(&p.0) && gold[g].1.overlaps(&p.1)) {
                gold_used[gi] = true;
                tp += 1;
            }
        }
    }
    tp
}

fn prf(pred: &PairSets, gold: &PairSets, relaxed: bool) -> Result<PrfResult> {
    check_keys(pred, gold)?;
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (id, g) in gold {
        let p = &pred[id];
        tp += match_sentence(p, g, relaxed);
        np += dedup(p).len();
        ng += g.len();
    }
    Ok(PrfResult::from_counts(tp, np, ng))
}

/// Exact-span, direction-respecting matching.
pub fn strict_prf(pred: &PairSets, gold: &PairSets) -> Result<PrfResult> {
    prf(pred, gold, false)
}

/// Pairs match when both the causes and the effects share at least one token.
pub fn relaxed_prf(pred: &PairSets, gold: &PairSets) -> Result<PrfResult> {
    prf(pred, gold, true)
}

pub const BUCKETS: [&str; 4] = ["1", "2", "3", "4+"];

pub fn bucket_of(gold_pairs: usize) -> Option<&'static str> {
    match gold_pairs {
        0 => None,
        1..=3 => Some(BUCKETS[gold_pairs - 1]),
        _ => Some(BUCKETS[3]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketResult {
    pub sentences: usize,
    #[serde(flatten)]
    pub prf: PrfResult,
}

/// Strict PRF per bucket of gold-pair count; sentences without gold pairs
/// are left out. Only non-empty buckets are reported.
pub fn breakdown_by_pair_count(pred: &PairSets, gold: &PairSets) -> Result<BTreeMap<String, BucketResult>> {
    check_keys(pred, gold)?;
    let mut split: BTreeMap<&str, (PairSets, PairSets)> = BTreeMap::new();
    for (id, g) in gold {
        if let Some(b) = bucket_of(g.len()) {
            let entry = split.entry(b).or_default();
            entry.0.insert(id.clone(), pred[id].clone());
            entry.1.insert(id.clone(), g.clone());
        }
    }
    split
        .into_iter()
        .map(|(b, (p, g))| {
            Ok((
                b.to_string(),
                BucketResult {
                    sentences: g.len(),
                    prf: strict_prf(&p, &g)?,
                },
            ))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FoldAggregate {
    /// Pooled counts across folds.
    pub micro: PrfResult,
    /// Unweighted mean of per-fold P, R and F1 (counts are pooled).
    pub macro_avg: PrfResult,
}

pub fn aggregate_folds(folds: &[PrfResult]) -> Result<FoldAggregate> {
    if folds.is_empty() {
        return Err(Error::Argument("no fold results to aggregate".into()));
    }
    let tp = folds.iter().map(|f| f.true_positives).sum();
    let np = folds.iter().map(|f| f.predicted_count).sum();
    let ng = folds.iter().map(|f| f.gold_count).sum();
    let micro = PrfResult::from_counts(tp, np, ng);
    let k = folds.len() as f64;
    let macro_avg = PrfResult {
        precision: folds.iter().map(|f| f.precision).sum::<f64>() / k,
        recall: folds.iter().map(|f| f.recall).sum::<f64>() / k,
        f1: folds.iter().map(|f| f.f1).sum::<f64>() / k,
        ..micro
    };
    Ok(FoldAggregate { micro, macro_avg })
}

/// Gold pairs of a corpus keyed by sentence id.
pub fn gold_pair_sets<'a>(corpus: impl IntoIterator<Item = &'a Sentence>) -> PairSets {
    corpus.into_iter().map(|s| (s.id.clone(), s.gold_span_pairs())).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub cause: Span,
    pub effect: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub pairs: Vec<PairRecord>,
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &PairSets) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (id, pairs) in preds {
        let rec = PredictionRecord {
            id: id.clone(),
            pairs: pairs.iter().map(|&(cause, effect)| PairRecord { cause, effect }).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PairSets> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = PairSets::new();
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
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| load_err(e.to_string()))?;
        if let Some(p) = rec.pairs.iter().find(|p| p.cause.is_empty() || p.effect.is_empty()) {
            return Err(load_err(format!("empty span in pair {} -> {}", p.cause, p.effect)));
        }
        let pairs = rec.pairs.into_iter().map(|p| (p.cause, p.effect)).collect();
        if out.insert(rec.id.clone(), pairs).is_some() {
            return Err(load_err(format!("duplicate sentence id '{}'", rec.id)));
        }
    }
    Ok(out)
}

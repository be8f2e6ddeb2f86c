//! Linear-chain CRF over the single-class BIO tag set with the BIO
//! constraint built into the transition structure.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::corpus::{BioSequence, Tag};
use crate::error::{Error, Result};

pub const NUM_TAGS: usize = 3;
#[cfg(test)]
const B: usize = 0;
const I: usize = 1;
const O: usize = 2;

/// Whether `prev → cur` is a legal BIO transition.
pub fn transition_allowed(prev: usize, cur: usize) -> bool {
    !(prev == O && cur == I)
}

pub fn start_allowed(cur: usize) -> bool {
    cur != I
}

/// Raw CRF scores: emissions `n×3`, transitions `3×3` (row = previous tag),
/// start and stop vectors.
#[derive(Clone, Debug)]
pub struct CrfScores {
    pub emissions: Array2<f64>,
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
}

fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl CrfScores {
    fn trans(&self, prev: usize, cur: usize) -> f64 {
        if transition_allowed(prev, cur) {
            self.transitions[[prev, cur]]
        } else {
            f64::NEG_INFINITY
        }
    }

    fn start_score(&self, cur: usize) -> f64 {
        if start_allowed(cur) {
            self.start[cur]
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn len(&self) -> usize {
        self.emissions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.nrows() == 0
    }

    /// Unnormalised log score of a tag sequence (−∞ when it breaks BIO).
    pub fn score(&self, tags: &[usize]) -> f64 {
        let mut s = self.start_score(tags[0]) + self.emissions[[0, tags[0]]];
        for t in 1..tags.len() {
            s += self.trans(tags[t - 1], tags[t]) + self.emissions[[t, tags[t]]];
        }
        s + self.end[tags[tags.len() - 1]]
    }

    fn forward(&self) -> Array2<f64> {
        let n = self.len();
        let mut alpha = Array2::from_elem((n, NUM_TAGS), f64::NEG_INFINITY);
        for y in 0..NUM_TAGS {
            alpha[[0, y]] = self.start_score(y) + self.emissions[[0, y]];
        }
        for t in 1..n {
            for y in 0..NUM_TAGS {
                alpha[[t, y]] = logsumexp((0..NUM_TAGS).map(|p| alpha[[t - 1, p]] + self.trans(p, y)))
                    + self.emissions[[t, y]];
            }
        }
        alpha
    }

    fn backward(&self) -> Array2<f64> {
        let n = self.len();
        let mut beta = Array2::from_elem((n, NUM_TAGS), f64::NEG_INFINITY);
        for y in 0..NUM_TAGS {
            beta[[n - 1, y]] = self.end[y];
        }
        for t in (0..n - 1).rev() {
            for y in 0..NUM_TAGS {
                beta[[t, y]] = logsumexp(
                    (0..NUM_TAGS).map(|c| self.trans(y, c) + self.emissions[[t + 1, c]] + beta[[t + 1, c]]),
                );
            }
        }
        beta
    }

    pub fn log_partition(&self) -> f64 {
        let alpha = self.forward();
        let n = self.len();
        logsumexp((0..NUM_TAGS).map(|y| alpha[[n - 1, y]] + self.end[y]))
    }

    /// Viterbi decoding; ties resolve to the lower tag index (B < I < O).
    pub fn viterbi(&self) -> Vec<usize> {
        let n = self.len();
        let mut delta = Array2::from_elem((n, NUM_TAGS), f64::NEG_INFINITY);
        let mut back = Array2::<usize>::zeros((n, NUM_TAGS));
        for y in 0..NUM_TAGS {
            delta[[0, y]] = self.start_score(y) + self.emissions[[0, y]];
        }
        for t in 1..n {
            for y in 0..NUM_TAGS {
                let mut best = (f64::NEG_INFINITY, 0);
                for p in 0..NUM_TAGS {
                    let s = delta[[t - 1, p]] + self.trans(p, y);
                    if s > best.0 {
                        best = (s, p);
                    }
                }
                delta[[t, y]] = best.0 + self.emissions[[t, y]];
                back[[t, y]] = best.1;
            }
        }
        let mut last = (f64::NEG_INFINITY, O);
        for y in 0..NUM_TAGS {
            let s = delta[[n - 1, y]] + self.end[y];
            if s > last.0 {
                last = (s, y);
            }
        }
        let mut tags = vec![last.1; n];
        for t in (1..n).rev() {
            tags[t - 1] = back[[t, tags[t]]];
        }
        tags
    }

    /// Negative log-likelihood of `gold` and its gradients w.r.t. emissions,
    /// transitions, start and end scores.
    pub fn nll_with_grads(&self, gold: &[usize]) -> (f64, Array2<f64>, Array2<f64>, Array1<f64>, Array1<f64>) {
        let n = self.len();
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = logsumexp((0..NUM_TAGS).map(|y| alpha[[n - 1, y]] + self.end[y]));
        let loss = log_z - self.score(gold);

        let mut d_em = Array2::zeros((n, NUM_TAGS));
        let mut d_tr = Array2::zeros((NUM_TAGS, NUM_TAGS));
        let mut d_start = Array1::zeros(NUM_TAGS);
        let mut d_end = Array1::zeros(NUM_TAGS);
        for t in 0..n {
            for y in 0..NUM_TAGS {
                let p = (alpha[[t, y]] + beta[[t, y]] - log_z).exp();
                d_em[[t, y]] += p;
                if t == 0 && start_allowed(y) {
                    d_start[y] += p;
                }
                if t == n - 1 {
                    d_end[y] += p;
                }
            }
            if t > 0 {
                for p in 0..NUM_TAGS {
                    for y in 0..NUM_TAGS {
                        if !transition_allowed(p, y) {
                            continue;
                        }
                        let pr = (alpha[[t - 1, p]] + self.transitions[[p, y]] + self.emissions[[t, y]]
                            + beta[[t, y]]
                            - log_z)
                            .exp();
                        d_tr[[p, y]] += pr;
                    }
                }
            }
        }
        for t in 0..n {
            d_em[[t, gold[t]]] -= 1.0;
            if t > 0 {
                d_tr[[gold[t - 1], gold[t]]] -= 1.0;
            }
        }
        d_start[gold[0]] -= 1.0;
        d_end[gold[n - 1]] -= 1.0;
        (loss, d_em, d_tr, d_start, d_end)
    }
}

/// Exhaustive argmax over BIO-valid sequences; the lexicographically first
/// sequence wins ties.
pub fn brute_force_decode(scores: &CrfScores) -> Vec<usize> {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for_each_valid_sequence(scores.len(), |seq| {
        let s = scores.score(seq);
        if s > best.0 {
            best = (s, seq.to_vec());
        }
    });
    best.1
}

/// Exhaustive log-sum over BIO-valid sequences.
pub fn brute_force_log_partition(scores: &CrfScores) -> f64 {
    let mut all = Vec::new();
    for_each_valid_sequence(scores.len(), |seq| all.push(scores.score(seq)));
    logsumexp(all)
}

fn for_each_valid_sequence(n: usize, mut f: impl FnMut(&[usize])) {
    let total = NUM_TAGS.pow(n as u32);
    let mut seq = vec![0; n];
    for code in 0..total {
        let mut c = code;
        for t in (0..n).rev() {
            seq[t] = c % NUM_TAGS;
            c /= NUM_TAGS;
        }
        if BioSequence::new(seq.iter().map(|&i| Tag::from_index(i)).collect()).is_well_formed() {
            f(&seq);
        }
    }
}

/// Random scores with entries uniform in `[-scale, scale]`.
pub fn random_scores(n: usize, scale: f64, rng: &mut impl Rng) -> CrfScores {
    let mut draw = || rng.gen_range(-scale..scale);
    CrfScores {
        emissions: Array2::from_shape_simple_fn((n, NUM_TAGS), &mut draw),
        transitions: Array2::from_shape_simple_fn((NUM_TAGS, NUM_TAGS), &mut draw),
        start: Array1::from_shape_simple_fn(NUM_TAGS, &mut draw),
        end: Array1::from_shape_simple_fn(NUM_TAGS, &mut draw),
    }
}

/// Emission projection plus transition structure for one decoder.
#[derive(Clone, Copy, Debug)]
pub struct CrfHead {
    pub emit_w: ParamId,
    pub emit_b: ParamId,
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

impl CrfHead {
    pub fn new(store: &mut ParamStore, prefix: &str, d_enc: usize, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Other;
        Self {
            emit_w: store.add_glorot(format!("{prefix}.emit_w"), g, (d_enc, NUM_TAGS), rng),
            emit_b: store.add_zeros(format!("{prefix}.emit_b"), g, (1, NUM_TAGS)),
            transitions: store.add_zeros(format!("{prefix}.transitions"), g, (NUM_TAGS, NUM_TAGS)),
            start: store.add_zeros(format!("{prefix}.start"), g, (1, NUM_TAGS)),
            end: store.add_zeros(format!("{prefix}.end"), g, (1, NUM_TAGS)),
        }
    }

    /// Emission scores `n×3` for token representations `h`.
    pub fn emissions(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Var {
        let w = tape.param(store, self.emit_w);
        let b = tape.param(store, self.emit_b);
        tape.affine(h, w, b)
    }

    fn scores(&self, tape: &Tape, store: &ParamStore, emissions: Var) -> CrfScores {
        CrfScores {
            emissions: tape.value(emissions).clone(),
            transitions: store.value(self.transitions).clone(),
            start: store.value(self.start).row(0).to_owned(),
            end: store.value(self.end).row(0).to_owned(),
        }
    }

    pub fn decode(&self, tape: &Tape, store: &ParamStore, emissions: Var) -> BioSequence {
        let tags = self.scores(tape, store, emissions).viterbi();
        BioSequence::new(tags.into_iter().map(Tag::from_index).collect())
    }

    /// `−log p(gold | emissions)` recorded on the tape.
    pub fn nll(&self, tape: &mut Tape, store: &ParamStore, emissions: Var, gold: &BioSequence) -> Result<Var> {
        let scores = self.scores(tape, store, emissions);
        let gold = gold_indices(gold, scores.len())?;
        let (loss, d_em, d_tr, d_start, d_end) = scores.nll_with_grads(&gold);
        let tr = tape.param(store, self.transitions);
        let st = tape.param(store, self.start);
        let en = tape.param(store, self.end);
        Ok(tape.scalar_custom(
            loss,
            vec![
                (emissions, d_em),
                (tr, d_tr),
                (st, d_start.insert_axis(ndarray::Axis(0))),
                (en, d_end.insert_axis(ndarray::Axis(0))),
            ],
        ))
    }
}

fn gold_indices(gold: &BioSequence, n: usize) -> Result<Vec<usize>> {
    if gold.len() != n {
        return Err(Error::Argument(format!("gold has {} tags for {n} tokens", gold.len())));
    }
    if n == 0 {
        return Err(Error::Argument("empty tag sequence".into()));
    }
    if !gold.is_well_formed() {
        return Err(Error::Argument("gold tag sequence is not BIO well-formed".into()));
    }
    Ok(gold.tags.iter().map(|t| t.index()).collect())
}

/// Decodes token representations `h` (`n×d_enc`) with `head`.
pub fn crf_decode(h: &Array2<f64>, head: &CrfHead, store: &ParamStore) -> Result<BioSequence> {
    if h.nrows() == 0 {
        return Err(Error::Argument("cannot decode an empty sentence".into()));
    }
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let em = head.emissions(&mut tape, store, hv);
    Ok(head.decode(&tape, store, em))
}

/// Standalone NLL of `gold` given token representations `h`.
pub fn crf_nll(h: &Array2<f64>, head: &CrfHead, store: &ParamStore, gold: &BioSequence) -> Result<f64> {
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let em = head.emissions(&mut tape, store, hv);
    let loss = head.nll(&mut tape, store, em, gold)?;
    Ok(tape.scalar(loss))
}

//! Deterministic synthetic corpus and toy KG built from causal templates.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sentence, Span};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

const EVENTS: &[&str] = &[
    "earthquake", "flood", "fire", "storm", "explosion", "collapse", "outage", "famine", "drought", "riot",
    "strike", "crash", "injury", "death", "panic", "shortage", "evacuation", "damage", "delay", "closure",
    "protest", "layoff", "recession", "blackout", "landslide", "tsunami", "epidemic", "accident", "inflation",
    "eruption",
];
const MODIFIERS: &[&str] = &["massive", "sudden", "severe", "major", "deadly", "minor"];
const DETERMINERS: &[&str] = &["the", "a", ""];
const CONNECTIVES: &[&[&str]] = &[&["caused"], &["led", "to"], &["resulted", "in"]];
const PREFIXES: &[&str] = &["", "yesterday", "officials said", "reports say", "last week", "in the region"];
const SUFFIXES: &[&str] = &["", "in the city", "last night", "near the coast", "according to officials"];
const CATEGORIES: &[&str] = &["disaster", "hazard", "incident", "problem"];
const PLACES: &[&str] = &["city", "coast", "region", "village"];

pub const CAUSES: &str = "CAUSES";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub num_sentences: usize,
    pub seed: u64,
    /// Fraction of gold pairs whose head words get a CAUSES edge.
    pub kg_signal: f64,
    pub sentences_per_doc: usize,
    /// Largest number of gold pairs per sentence (1 to 3).
    pub max_pairs: usize,
    /// Random KG node embeddings of this width, if any.
    pub embedding_dim: Option<usize>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            num_sentences: 64,
            seed: 7,
            kg_signal: 0.7,
            sentences_per_doc: 4,
            max_pairs: 3,
            embedding_dim: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<Sentence>,
    pub triples: Vec<(String, String, String)>,
    /// One row per KG node surface, in first-appearance order of `triples`.
    pub embeddings: Option<Vec<(String, Vec<f64>)>>,
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    tokens: Vec<String>,
    events: Vec<Span>,
    heads: Vec<String>,
}

impl Builder<'_> {
    fn words(&mut self, text: &str) {
        self.tokens.extend(text.split_whitespace().map(String::from));
    }

    fn connective(&mut self) {
        let c = CONNECTIVES.choose(self.rng).expect("non-empty");
        self.tokens.extend(c.iter().map(|w| w.to_string()));
    }

    /// Pushes an optional determiner and the event, returning its index.
    fn event(&mut self, noun: &str) -> usize {
        let det = *DETERMINERS.choose(self.rng).expect("non-empty");
        self.words(det);
        let start = self.tokens.len();
        if self.rng.gen_bool(0.3) {
            let m = *MODIFIERS.choose(self.rng).expect("non-empty");
            self.words(m);
        }
        self.words(noun);
        self.events.push(Span::new(start, self.tokens.len()));
        self.heads.push(noun.to_string());
        self.events.len() - 1
    }
}

fn instantiate(rng: &mut ChaCha8Rng, k: usize) -> (Vec<String>, Vec<Span>, Vec<(usize, usize)>, Vec<String>) {
    let nouns: Vec<&str> = EVENTS.choose_multiple(rng, 5).copied().collect();
    let prefix = *PREFIXES.choose(rng).expect("non-empty");
    let suffix = *SUFFIXES.choose(rng).expect("non-empty");
    let variant = rng.gen_range(0..3);
    let mut b = Builder {
        rng,
        tokens: Vec::new(),
        events: Vec::new(),
        heads: Vec::new(),
    };
    b.words(prefix);
    let mut pairs = Vec::new();
    match (k, variant) {
        (1, 0) | (1, 1) => {
            let c = b.event(nouns[0]);
            b.connective();
            let e = b.event(nouns[1]);
            pairs.push((c, e));
        }
        (1, _) => {
            let e = b.event(nouns[1]);
            b.words("was caused by");
            let c = b.event(nouns[0]);
            pairs.push((c, e));
        }
        (2, 0) => {
            let c1 = b.event(nouns[0]);
            b.connective();
            let e1 = b.event(nouns[1]);
            b.words("and");
            let c2 = b.event(nouns[2]);
            b.connective();
            let e2 = b.event(nouns[3]);
            pairs.extend([(c1, e1), (c2, e2)]);
        }
        (2, 1) => {
            let c = b.event(nouns[0]);
            b.connective();
            let e1 = b.event(nouns[1]);
            b.words("and");
            let e2 = b.event(nouns[2]);
            pairs.extend([(c, e1), (c, e2)]);
        }
        (2, _) => {
            let c = b.event(nouns[0]);
            b.connective();
            let m = b.event(nouns[1]);
            b.words(", which");
            b.connective();
            let e = b.event(nouns[2]);
            pairs.extend([(c, m), (m, e)]);
        }
        (_, 0) => {
            let a = b.event(nouns[0]);
            b.connective();
            let c = b.event(nouns[1]);
            b.words(", which");
            b.connective();
            let d = b.event(nouns[2]);
            b.words(", which");
            b.connective();
            let e = b.event(nouns[3]);
            pairs.extend([(a, c), (c, d), (d, e)]);
        }
        (_, 1) => {
            let c = b.event(nouns[0]);
            b.connective();
            let e1 = b.event(nouns[1]);
            b.words(",");
            let e2 = b.event(nouns[2]);
            b.words("and");
            let e3 = b.event(nouns[3]);
            pairs.extend([(c, e1), (c, e2), (c, e3)]);
        }
        (_, _) => {
            let c1 = b.event(nouns[0]);
            b.connective();
            let e1 = b.event(nouns[1]);
            b.words("and");
            let e2 = b.event(nouns[2]);
            b.words(", while");
            let c2 = b.event(nouns[3]);
            b.connective();
            let e3 = b.event(nouns[4]);
            pairs.extend([(c1, e1), (c1, e2), (c2, e3)]);
        }
    }
    b.words(suffix);
    (b.tokens, b.events, pairs, b.heads)
}

/// Generates `opts.num_sentences` sentences; sentence `i` carries
/// `1 + i % max_pairs` gold pairs.
pub fn generate(opts: &SynthOptions) -> Result<SyntheticData> {
    if opts.num_sentences == 0 {
        return Err(Error::Argument("num_sentences must be at least 1".into()));
    }
    if !(1..=3).contains(&opts.max_pairs) {
        return Err(Error::Argument("max_pairs must lie in 1..=3".into()));
    }
    if !(0.0..=1.0).contains(&opts.kg_signal) {
        return Err(Error::Argument("kg_signal must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let per_doc = opts.sentences_per_doc.max(1);
    let mut corpus = Vec::with_capacity(opts.num_sentences);
    let mut triples: Vec<(String, String, String)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut add = |t: (String, String, String), triples: &mut Vec<_>| {
        if seen.insert(t.clone()) {
            triples.push(t);
        }
    };
    for i in 0..opts.num_sentences {
        let k = 1 + i % opts.max_pairs;
        let (tokens, events, pairs, heads) = instantiate(&mut rng, k);
        for &(c, e) in &pairs {
            if rng.gen_bool(opts.kg_signal) {
                add((heads[c].clone(), CAUSES.into(), heads[e].clone()), &mut triples);
            }
        }
        let subject = heads.choose(&mut rng).expect("events exist").clone();
        let distractor = match rng.gen_range(0..3) {
            0 => (subject, "ISA".to_string(), CATEGORIES.choose(&mut rng).expect("non-empty").to_string()),
            1 => {
                let other = EVENTS.choose(&mut rng).expect("non-empty").to_string();
                if other == subject {
                    (subject, "ISA".to_string(), CATEGORIES[0].to_string())
                } else {
                    (subject, "RELATEDTO".to_string(), other)
                }
            }
            _ => (subject, "ATLOCATION".to_string(), PLACES.choose(&mut rng).expect("non-empty").to_string()),
        };
        add(distractor, &mut triples);
        let sentence = Sentence {
            id: format!("s{i:05}"),
            doc_id: format!("d{:04}", i / per_doc),
            tokens,
            gold_events: events,
            gold_pairs: pairs,
        };
        sentence
            .validate()
            .map_err(|m| Error::Data(format!("generator produced an invalid sentence: {m}")))?;
        corpus.push(sentence);
    }
    let embeddings = opts.embedding_dim.map(|d| {
        let mut surfaces = Vec::new();
        let mut known = BTreeSet::new();
        for (h, _, t) in &triples {
            for s in [h, t] {
                if known.insert(s.clone()) {
                    surfaces.push(s.clone());
                }
            }
        }
        surfaces
            .into_iter()
            .map(|s| {
                let v = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (s, v)
            })
            .collect()
    });
    Ok(SyntheticData {
        corpus,
        triples,
        embeddings,
    })
}

impl SyntheticData {
    pub fn knowledge_graph(&self) -> Result<KnowledgeGraph> {
        let mut kg = KnowledgeGraph::new();
        for (h, r, t) in &self.triples {
            kg.add_triple(h, r, t);
        }
        if let Some(rows) = &self.embeddings {
            let d = rows.first().map_or(0, |r| r.1.len());
            let mut table = Array2::zeros((kg.num_nodes(), d));
            for (s, v) in rows {
                let id = kg.node_id(s).expect("embedding rows cover KG nodes");
                table.row_mut(id).assign(&ndarray::ArrayView1::from(v.as_slice()));
            }
            kg.set_embeddings(table)?;
        }
        Ok(kg)
    }

    pub fn write_triples(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for (h, r, t) in &self.triples {
            text.push_str(&format!("{h}\t{r}\t{t}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_embeddings(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rows = self
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::State("no embeddings were generated".into()))?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for (s, v) in rows {
            let nums: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{s}\t{}", nums.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

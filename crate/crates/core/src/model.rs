//! The layered joint model: N plain encoder layers followed by M joint
//! layers, each running event extraction, graph insertion, relation
//! reasoning and the two aggregators.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::config::{InsertionVariant, UniceConfig};
use crate::corpus::{bio_decode, bio_encode, BioSequence, Sentence, Span};
use crate::crf::CrfHead;
use crate::error::{Error, Result};
use crate::event::{event_reps, EncoderDims, EncoderStack};
use crate::fusion::{k_aggregate, t_aggregate, KAggregator, KGates, TAggregator};
use crate::graph::{build_initial, insert_events, BackgroundGraph};
use crate::insertion::{smooth_scores, tree_marginals_var, EdgeScorer};
use crate::kg::KnowledgeGraph;
use crate::nn::{Dropout, Linear};
use crate::relation::{
    causal_probabilities, relation_supervision, GnnLayer, NodeInit, PairClassifier, RelationSlots,
};

/// Probability above which an ordered pair is declared causal.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub const UNK: &str = "[UNK]";

/// Lower-cased token vocabulary; id 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut words = std::collections::BTreeSet::new();
        for s in sentences {
            words.extend(s.tokens.iter().map(|t| t.to_lowercase()));
        }
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(words.into_iter().filter(|w| w != UNK));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_tokens(self.tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(&token.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Outputs of one joint layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerPrediction {
    /// 1-based joint-layer index.
    pub layer: usize,
    pub tags: BioSequence,
    /// `bio_decode(tags)`.
    pub spans: Vec<Span>,
    /// Events the relation module reasoned over: `spans`, or the gold events
    /// when training without stack propagation.
    pub relation_spans: Vec<Span>,
    /// `(i, j, p)` over ordered pairs of `relation_spans`.
    pub pair_scores: Vec<(usize, usize, f64)>,
    /// Pairs with `p > 0.5`.
    pub pair_decisions: Vec<(usize, usize)>,
}

impl LayerPrediction {
    pub fn span_pairs(&self) -> Vec<(Span, Span)> {
        self.pair_decisions
            .iter()
            .map(|&(i, j)| (self.relation_spans[i], self.relation_spans[j]))
            .collect()
    }
}

/// Cached internals of one joint layer.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub prediction: LayerPrediction,
    /// Background graph after insertion, with its dynamic weights.
    pub graph: BackgroundGraph,
    pub crf_loss: Option<Var>,
    pub relation_loss: Option<Var>,
    /// Supervision labels over ordered pairs of `relation_spans`.
    pub pair_labels: Vec<((usize, usize), bool)>,
    /// Pairs entering the relation loss after negative sampling.
    pub kept_pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub initial_graph_nodes: usize,
    /// Mean over layers of `L_e + L_r` (training mode only).
    pub loss: Option<Var>,
}

impl ForwardTrace {
    pub fn last(&self) -> &LayerPrediction {
        &self.layers.last().expect("at least one joint layer").prediction
    }

    /// `(L_e, L_r)` per layer as plain numbers; `L_r` is 0 when absent.
    pub fn layer_losses(&self, tape: &Tape) -> Vec<(f64, f64)> {
        self.layers
            .iter()
            .map(|l| {
                (
                    l.crf_loss.map_or(0.0, |v| tape.scalar(v)),
                    l.relation_loss.map_or(0.0, |v| tape.scalar(v)),
                )
            })
            .collect()
    }
}

/// Training-mode switches for one forward pass.
pub struct TrainStep<'a> {
    /// Drives dropout masks and negative sampling.
    pub rng: &'a mut ChaCha8Rng,
    /// Feed gold events to the relation module.
    pub gold_events: bool,
}

#[derive(Clone, Debug)]
struct DotAttention {
    query: Linear,
    key: Linear,
}

#[derive(Clone, Debug)]
pub struct UniceModel {
    pub config: UniceConfig,
    pub vocab: Vocab,
    pub relation_names: Vec<String>,
    pub store: ParamStore,
    encoder: EncoderStack,
    crf: Vec<CrfHead>,
    event_projection: Linear,
    node_init: NodeInit,
    scorers: Vec<EdgeScorer>,
    dot: Vec<DotAttention>,
    gnn: Vec<GnnLayer>,
    classifiers: Vec<PairClassifier>,
    t_aggs: Vec<TAggregator>,
    k_aggs: Vec<KAggregator>,
}

impl UniceModel {
    /// Builds a freshly initialised model. `relation_names` are the KG
    /// relations known at training time.
    pub fn new(config: UniceConfig, vocab: Vocab, relation_names: Vec<String>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let m = config.joint_layers;
        let (de, dg) = (config.d_enc, config.d_gnn);
        let encoder = EncoderStack::new(
            &mut store,
            EncoderDims {
                vocab: vocab.len().max(1),
                max_len: config.max_len,
                d_enc: de,
                heads: config.heads,
                d_ff: config.d_ff,
                plain_layers: config.plain_layers,
                joint_layers: m,
            },
            &mut rng,
        )?;
        let crf_count = if config.share_crf { 1 } else { m };
        let crf = (0..crf_count)
            .map(|l| CrfHead::new(&mut store, &format!("crf{}", l + 1), de, &mut rng))
            .collect();
        let g = crate::autodiff::ParamGroup::Other;
        let event_projection = Linear::new(&mut store, "event_projection", g, de, dg, &mut rng);
        let node_init = NodeInit::new(&mut store, dg, Some(config.d_kg), &mut rng);
        let slots = RelationSlots {
            kg_relations: relation_names.len(),
        };
        let mut scorers = Vec::new();
        let mut dot = Vec::new();
        let mut gnn = Vec::new();
        let mut classifiers = Vec::new();
        for l in 1..=m {
            scorers.push(EdgeScorer::new(&mut store, &format!("insertion{l}"), dg, &mut rng));
            dot.push(DotAttention {
                query: Linear::new(&mut store, &format!("dot{l}.query"), g, dg, dg, &mut rng),
                key: Linear::new(&mut store, &format!("dot{l}.key"), g, dg, dg, &mut rng),
            });
            gnn.push(GnnLayer::new(&mut store, &format!("gnn{l}"), dg, slots, config.gnn_variant, &mut rng));
            classifiers.push(PairClassifier::new(
                &mut store,
                &format!("classifier{l}"),
                dg,
                config.classifier_hidden,
                &mut rng,
            ));
        }
        let agg_count = if config.share_aggregators { 1 } else { m };
        let t_aggs = (1..=agg_count)
            .map(|l| TAggregator::new(&mut store, &format!("t_aggregator{l}"), de, dg, &mut rng))
            .collect();
        let k_aggs = (1..=agg_count)
            .map(|l| KAggregator::new(&mut store, &format!("k_aggregator{l}"), de, dg, &mut rng))
            .collect();
        Ok(Self {
            config,
            vocab,
            relation_names,
            store,
            encoder,
            crf,
            event_projection,
            node_init,
            scorers,
            dot,
            gnn,
            classifiers,
            t_aggs,
            k_aggs,
        })
    }

    pub fn t_aggregator_params(&self) -> Vec<ParamId> {
        self.t_aggs.iter().flat_map(|a| a.params()).collect()
    }

    pub fn k_aggregator_params(&self) -> Vec<ParamId> {
        self.k_aggs.iter().flat_map(|a| a.params()).collect()
    }

    pub fn token_embedding(&self) -> ParamId {
        self.encoder.token_embedding()
    }

    /// Checks that a KG's embedding table fits this model.
    pub fn check_kg(&self, kg: &KnowledgeGraph) -> Result<()> {
        match kg.embedding_dim() {
            Some(d) if d != self.config.d_kg => Err(Error::Config(format!(
                "KG embeddings have dimension {d} but d_kg = {}",
                self.config.d_kg
            ))),
            _ => Ok(()),
        }
    }

    /// G⁰ for a sentence under this configuration (empty without knowledge
    /// fusion).
    pub fn initial_graph(&self, sentence: &Sentence, kg: &KnowledgeGraph) -> BackgroundGraph {
        if self.config.use_knowledge_fusion {
            build_initial(sentence, kg, self.config.node_cap, self.config.max_path_len)
        } else {
            BackgroundGraph::empty()
        }
    }

    fn relation_slots(&self, kg: &KnowledgeGraph) -> Vec<usize> {
        let unknown = RelationSlots {
            kg_relations: self.relation_names.len(),
        }
        .unknown();
        kg.relation_names()
            .iter()
            .map(|n| self.relation_names.iter().position(|r| r == n).unwrap_or(unknown))
            .collect()
    }

    fn dynamic_weights(
        &self,
        tape: &mut Tape,
        layer: usize,
        graph: &BackgroundGraph,
        dyn_rows: Var,
    ) -> Result<Var> {
        let dyn_nodes = graph.dynamic_nodes();
        let n = dyn_nodes.len();
        let spans: Vec<Span> = dyn_nodes
            .iter()
            .map(|&i| graph.nodes[i].span.expect("event and mention nodes carry spans"))
            .collect();
        let fixed = |f: &dyn Fn(usize, usize) -> bool| Array2::from_shape_fn((n, n), |(i, j)| f64::from(u8::from(i != j && f(i, j))));
        let a = match self.config.insertion_variant {
            InsertionVariant::NoLink => tape.leaf(Array2::zeros((n, n))),
            InsertionVariant::FullLink => tape.leaf(fixed(&|_, _| true)),
            InsertionVariant::SpanMatch => tape.leaf(fixed(&|i, j| spans[i].overlaps(&spans[j]))),
            InsertionVariant::DotProduct => {
                if n < 2 {
                    tape.leaf(Array2::zeros((n, n)))
                } else {
                    let att = &self.dot[layer - 1];
                    let q = att.query.forward(tape, &self.store, dyn_rows);
                    let k = att.key.forward(tape, &self.store, dyn_rows);
                    let kt = tape.transpose(k);
                    let logits = tape.matmul(q, kt);
                    let logits = tape.scale(logits, 1.0 / (self.config.d_gnn as f64).sqrt());
                    let mask = tape.leaf(Array2::from_shape_fn((n, n), |(i, j)| if i == j { -1e30 } else { 0.0 }));
                    let masked = tape.add(logits, mask);
                    tape.softmax_rows(masked)
                }
            }
            InsertionVariant::MatrixTree => {
                let (mut p, mut r) = self.scorers[layer - 1].scores(tape, &self.store, dyn_rows)?;
                if self.config.insertion_smoothing > 0.0 {
                    (p, r) = smooth_scores(tape, p, r, self.config.insertion_smoothing);
                }
                tree_marginals_var(tape, p, r)?.0
            }
        };
        if self.config.dynamic_threshold > 0.0 {
            let thr = self.config.dynamic_threshold;
            let keep = tape.value(a).mapv(|w| f64::from(u8::from(w >= thr)));
            let keep = tape.leaf(keep);
            return Ok(tape.mul(a, keep));
        }
        Ok(a)
    }

    /// Runs all layers on one sentence. With `train`, dropout is active and
    /// the per-layer losses and their mean are recorded on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        kg: &KnowledgeGraph,
        g0: &BackgroundGraph,
        train: Option<TrainStep<'_>>,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let (training, gold_events) = match &train {
            Some(t) => (true, t.gold_events),
            None => (false, false),
        };
        let mut drop = match train {
            Some(t) => Dropout::train(cfg.dropout, t.rng),
            None => Dropout::eval(),
        };
        let gold_bio = if training { Some(bio_encode(sentence)?) } else { None };
        let slots = self.relation_slots(kg);
        let slot_of = |r: usize| slots.get(r).copied().unwrap_or(self.gnn[0].slots.unknown());

        let ids = self.vocab.ids(&sentence.tokens);
        let mut h = self.encoder.embed(tape, &self.store, &ids, &mut drop)?;
        for l in 1..=cfg.plain_layers {
            h = self.encoder.encode_layer(tape, &self.store, h, l, &mut drop)?;
        }

        let mut persistent: Option<Var> = None;
        let mut layers = Vec::with_capacity(cfg.joint_layers);
        for l in 1..=cfg.joint_layers {
            let h_tilde = self.encoder.encode_layer(tape, &self.store, h, cfg.plain_layers + l, &mut drop)?;
            let crf = &self.crf[if cfg.share_crf { 0 } else { l - 1 }];
            let emissions = crf.emissions(tape, &self.store, h_tilde);
            let tags = crf.decode(tape, &self.store, emissions);
            let spans = bio_decode(&tags);
            let crf_loss = match &gold_bio {
                Some(g) => Some(crf.nll(tape, &self.store, emissions, g)?),
                None => None,
            };

            let relation_spans = if gold_events { sentence.gold_events.clone() } else { spans.clone() };
            let ev_tokens = event_reps(tape, h_tilde, &relation_spans)?;
            let ev_init = self.event_projection.forward(tape, &self.store, ev_tokens);

            let placeholder = {
                let n = g0.mention_indices().len() + relation_spans.len();
                Array2::zeros((n, n))
            };
            let mut graph = insert_events(g0, &relation_spans, tape.value(ev_init), placeholder)?;
            let nodes = self.node_init.init_node_embeddings(tape, &self.store, &graph, kg, persistent, ev_init)?;
            let dyn_nodes = graph.dynamic_nodes();
            let weights = if dyn_nodes.is_empty() {
                None
            } else {
                let dyn_rows = tape.select_rows(nodes, &dyn_nodes);
                Some(self.dynamic_weights(tape, l, &graph, dyn_rows)?)
            };
            graph.dynamic_weights = weights.map(|w| tape.value(w).clone());
            let e_tilde = self.gnn[l - 1].step(tape, &self.store, &graph, nodes, weights, &slot_of)?;

            let event_idx = graph.event_indices();
            let ev_tilde = tape.select_rows(e_tilde, &event_idx);
            let scored = self.classifiers[l - 1].logits(tape, &self.store, ev_tilde, &mut drop);
            let (pair_scores, pair_decisions) = match &scored {
                None => (Vec::new(), Vec::new()),
                Some((pairs, logits)) => {
                    let probs = causal_probabilities(tape.value(*logits));
                    let scores: Vec<(usize, usize, f64)> =
                        pairs.iter().zip(&probs).map(|(&(i, j), &p)| (i, j, p)).collect();
                    let decisions = scores
                        .iter()
                        .filter(|s| s.2 > DECISION_THRESHOLD)
                        .map(|s| (s.0, s.1))
                        .collect();
                    (scores, decisions)
                }
            };

            let mut pair_labels = Vec::new();
            let mut kept_pairs = Vec::new();
            let mut relation_loss = None;
            if training {
                let labels = relation_supervision(
                    &relation_spans,
                    &sentence.gold_events,
                    &sentence.gold_pairs,
                    cfg.relation_match,
                );
                let rng = drop.rng().expect("training forward owns a generator");
                let mut kept_rows = Vec::new();
                if let Some((pairs, _)) = &scored {
                    for (row, pair) in pairs.iter().enumerate() {
                        let causal = labels[pair];
                        let u: f64 = rng.gen();
                        if causal || u < cfg.negative_keep_rate {
                            kept_rows.push((row, usize::from(causal)));
                            kept_pairs.push(*pair);
                        }
                    }
                }
                pair_labels = labels.into_iter().collect();
                if let (Some((_, logits)), false) = (&scored, kept_rows.is_empty()) {
                    relation_loss = Some(pair_cross_entropy(tape, *logits, &kept_rows));
                }
            }

            let mut h_post = h_tilde;
            if cfg.t_enabled() {
                let t = &self.t_aggs[if cfg.share_aggregators { 0 } else { l - 1 }];
                h_post = t_aggregate(tape, &self.store, t, h_tilde, ev_tilde, &relation_spans, &mut drop)?;
            }
            let mut e_post = e_tilde;
            let gates = KGates {
                kg_to_plm: cfg.kg_to_plm_enabled(),
                plm_to_kg: cfg.plm_to_kg_enabled(),
            };
            let mentions: Vec<(usize, Span)> = graph.mentions().into_iter().map(|(i, m)| (i, m.span)).collect();
            if !mentions.is_empty() {
                let k = &self.k_aggs[if cfg.share_aggregators { 0 } else { l - 1 }];
                (h_post, e_post) = k_aggregate(tape, &self.store, k, h_tilde, h_post, e_tilde, &mentions, gates, &mut drop)?;
            }
            let base: Vec<usize> = (0..graph.base_len()).collect();
            persistent = Some(tape.select_rows(e_post, &base));
            h = h_post;

            layers.push(LayerTrace {
                prediction: LayerPrediction {
                    layer: l,
                    tags,
                    spans,
                    relation_spans,
                    pair_scores,
                    pair_decisions,
                },
                graph,
                crf_loss,
                relation_loss,
                pair_labels,
                kept_pairs,
            });
        }

        let loss = if training {
            let mut terms = Vec::new();
            for layer in &layers {
                terms.extend(layer.crf_loss);
                terms.extend(layer.relation_loss);
            }
            let mut total = tape.scalar_leaf(0.0);
            for t in terms {
                total = tape.add(total, t);
            }
            Some(tape.scale(total, 1.0 / cfg.joint_layers as f64))
        } else {
            None
        };

        Ok(ForwardTrace {
            layers,
            initial_graph_nodes: g0.node_count(),
            loss,
        })
    }

    /// Evaluation-mode forward pass on a fresh tape.
    pub fn infer(&self, sentence: &Sentence, kg: &KnowledgeGraph) -> Result<Vec<LayerPrediction>> {
        let g0 = self.initial_graph(sentence, kg);
        let mut tape = Tape::new();
        let trace = self.forward(&mut tape, sentence, kg, &g0, None)?;
        Ok(trace.layers.into_iter().map(|l| l.prediction).collect())
    }

    /// Causal pairs from the last layer.
    pub fn predict(&self, sentence: &Sentence, kg: &KnowledgeGraph) -> Result<Vec<(Span, Span)>> {
        let layers = self.infer(sentence, kg)?;
        Ok(layers.last().expect("at least one joint layer").span_pairs())
    }
}

/// Mean cross-entropy of the selected `(row, class)` targets under row-wise
/// softmax of `logits`.
pub fn pair_cross_entropy(tape: &mut Tape, logits: Var, targets: &[(usize, usize)]) -> Var {
    let lv = tape.value(logits);
    let k = targets.len() as f64;
    let mut grad = Array2::zeros(lv.dim());
    let mut loss = 0.0;
    for &(row, class) in targets {
        let r = lv.row(row);
        let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = r.iter().map(|x| (x - m).exp()).sum();
        let log_z = m + z.ln();
        loss += log_z - r[class];
        for c in 0..r.len() {
            let p = (r[c] - log_z).exp();
            grad[[row, c]] += (p - f64::from(u8::from(c == class))) / k;
        }
    }
    tape.scalar_custom(loss / k, vec![(logits, grad)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::param_grads;

    pub(crate) fn fixture_kg() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        kg.add_triple("earthquake", "CAUSES", "collapse");
        kg.add_triple("collapse", "CAUSES", "death");
        kg.add_triple("aftershock", "ISA", "earthquake");
        kg.add_triple("earthquake", "RELATEDTO", "disaster");
        kg
    }

    fn sentence() -> Sentence {
        Sentence {
            id: "s1".into(),
            doc_id: "d1".into(),
            tokens: "the earthquake tremor caused severe damage near the collapse".split(' ').map(String::from).collect(),
            gold_events: vec![Span::new(2, 3), Span::new(4, 6)],
            gold_pairs: vec![(0, 1)],
        }
    }

    fn tiny(cfg: impl FnOnce(&mut UniceConfig)) -> UniceModel {
        let mut c = UniceConfig::tiny();
        c.d_enc = 8;
        c.heads = 2;
        c.d_ff = 8;
        c.d_gnn = 6;
        c.d_kg = 6;
        c.classifier_hidden = 5;
        c.plain_layers = 1;
        cfg(&mut c);
        let s = sentence();
        let kg = fixture_kg();
        UniceModel::new(c, Vocab::build([&s]), kg.relation_names().to_vec()).unwrap()
    }

    #[test]
    fn vocab_lowercases_and_reserves_unk() {
        let v = Vocab::build([&sentence()]);
        assert_eq!(v.id("[UNK]"), 0);
        assert_eq!(v.id("zebra"), 0);
        assert_eq!(v.id("Earthquake"), v.id("earthquake"));
        assert_ne!(v.id("earthquake"), 0);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str::<Vocab>(&json).unwrap().reindex();
        assert_eq!(back, v);
    }

    #[test]
    fn eval_is_deterministic_and_well_formed() {
        let model = tiny(|_| {});
        let kg = fixture_kg();
        let a = model.infer(&sentence(), &kg).unwrap();
        let b = model.infer(&sentence(), &kg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        for p in &a {
            assert_eq!(p.spans, bio_decode(&p.tags));
            assert!(p.tags.is_well_formed());
            for &(i, j) in &p.pair_decisions {
                assert!(p.pair_scores.iter().any(|s| (s.0, s.1) == (i, j) && s.2 > 0.5));
            }
        }
        let one = tiny(|c| c.joint_layers = 1);
        assert_eq!(one.infer(&sentence(), &kg).unwrap().len(), 1);
    }

    #[test]
    fn loss_is_mean_of_layer_sums() {
        let model = tiny(|_| {});
        let kg = fixture_kg();
        let s = sentence();
        let g0 = model.initial_graph(&s, &kg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let trace = model
            .forward(&mut tape, &s, &kg, &g0, Some(TrainStep { rng: &mut rng, gold_events: true }))
            .unwrap();
        let parts = trace.layer_losses(&tape);
        let expect: f64 = parts.iter().map(|(e, r)| e + r).sum::<f64>() / parts.len() as f64;
        assert!((tape.scalar(trace.loss.unwrap()) - expect).abs() < 1e-12);
        assert!(parts.iter().all(|(_, r)| *r > 0.0));
    }

    #[test]
    fn no_link_weights_vanish() {
        let model = tiny(|c| c.insertion_variant = InsertionVariant::NoLink);
        let kg = fixture_kg();
        let s = sentence();
        let g0 = model.initial_graph(&s, &kg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let trace = model
            .forward(&mut tape, &s, &kg, &g0, Some(TrainStep { rng: &mut rng, gold_events: true }))
            .unwrap();
        for l in &trace.layers {
            assert!(l.graph.dynamic_weights.as_ref().unwrap().iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn ablations_zero_aggregator_gradients() {
        let kg = fixture_kg();
        let s = sentence();
        for (setting, t_zero, k_zero) in [("full", false, false), ("wo_si", true, false), ("wo_kf", false, true)] {
            let model = tiny(|c| *c = c.ablated(setting).unwrap());
            let g0 = model.initial_graph(&s, &kg);
            assert_eq!(g0.node_count() == 0, k_zero);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut tape = Tape::new();
            let trace = model
                .forward(&mut tape, &s, &kg, &g0, Some(TrainStep { rng: &mut rng, gold_events: true }))
                .unwrap();
            let grads = param_grads(&tape, trace.loss.unwrap(), &model.store);
            let t_norm: f64 = model.t_aggregator_params().iter().map(|&p| grads.norm(p)).sum();
            let k_norm: f64 = model.k_aggregator_params().iter().map(|&p| grads.norm(p)).sum();
            assert_eq!(t_norm == 0.0, t_zero, "{setting}");
            assert_eq!(k_norm == 0.0, k_zero, "{setting}");
        }
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        use crate::autodiff::gradcheck::{check_params, DEFAULT_STEP};
        let model = tiny(|_| {});
        let kg = fixture_kg();
        let s = sentence();
        let g0 = model.initial_graph(&s, &kg);
        let mut ids = vec![model.token_embedding()];
        ids.extend(["insertion1.bilinear", "insertion2.root"].iter().map(|n| model.store.find(n).unwrap()));
        let r = check_params(&model.store, &ids, DEFAULT_STEP, |tape, store| {
            let mut m = model.clone();
            m.store = store.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let trace = m.forward(tape, &s, &kg, &g0, Some(TrainStep { rng: &mut rng, gold_events: true }))?;
            Ok(trace.loss.unwrap())
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn cross_entropy_gradient() {
        let mut tape = Tape::new();
        let logits = Array2::from_shape_vec((3, 2), vec![0.3, -0.2, 1.5, 0.1, -0.4, 0.9]).unwrap();
        let lv = tape.leaf(logits.clone());
        let targets = [(0, 1), (2, 0)];
        let loss = pair_cross_entropy(&mut tape, lv, &targets);
        let g = tape.backward(loss).get(lv).unwrap().clone();
        let eps = 1e-6;
        for r in 0..3 {
            for c in 0..2 {
                let mut plus = logits.clone();
                plus[[r, c]] += eps;
                let mut minus = logits.clone();
                minus[[r, c]] -= eps;
                let f = |m: Array2<f64>| {
                    let mut t = Tape::new();
                    let v = t.leaf(m);
                    let l = pair_cross_entropy(&mut t, v, &targets);
                    t.scalar(l)
                };
                let fd = (f(plus) - f(minus)) / (2.0 * eps);
                assert!((fd - g[[r, c]]).abs() < 1e-8);
            }
        }
    }
}

//! Relation module: node initialisation, relation-aware message passing over
//! the background graph, ordered-pair causal classification and the
//! supervision labels derived from predicted spans.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::graph::{BackgroundGraph, NodeRole};
use crate::kg::KnowledgeGraph;
use crate::nn::{Dropout, Linear, Mlp2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnVariant {
    /// Attention over static neighbours.
    Attention,
    /// Uniform averaging over static neighbours.
    Mean,
}

/// Relation-type slots beyond the KG's own relations.
#[derive(Clone, Copy, Debug)]
pub struct RelationSlots {
    pub kg_relations: usize,
}

impl RelationSlots {
    pub fn mention_edge(&self) -> usize {
        self.kg_relations
    }

    pub fn dynamic_edge(&self) -> usize {
        self.kg_relations + 1
    }

    /// Relations present in a KG at inference time but unseen at training.
    pub fn unknown(&self) -> usize {
        self.kg_relations + 2
    }

    pub fn total(&self) -> usize {
        self.kg_relations + 3
    }
}

/// One attention-weighted, relation-typed message-passing layer.
#[derive(Clone, Debug)]
pub struct GnnLayer {
    pub slots: RelationSlots,
    pub variant: GnnVariant,
    relation_embedding: ParamId,
    query: ParamId,
    key: ParamId,
    value: ParamId,
    self_w: ParamId,
    message_w: ParamId,
    bias: ParamId,
}

impl GnnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        slots: RelationSlots,
        variant: GnnVariant,
        rng: &mut impl Rng,
    ) -> Self {
        let g = ParamGroup::Other;
        Self {
            slots,
            variant,
            relation_embedding: store.add_normal(format!("{name}.relation_embedding"), g, (slots.total(), d), 0.1, rng),
            query: store.add_glorot(format!("{name}.query"), g, (d, d), rng),
            key: store.add_glorot(format!("{name}.key"), g, (d, d), rng),
            value: store.add_glorot(format!("{name}.value"), g, (d, d), rng),
            self_w: store.add_glorot(format!("{name}.self"), g, (d, d), rng),
            message_w: store.add_glorot(format!("{name}.message"), g, (d, d), rng),
            bias: store.add_zeros(format!("{name}.bias"), g, (1, d)),
        }
    }

    /// One round of message passing producing `Ẽ` (`J×d`).
    ///
    /// Static KG edges carry messages in both directions, typed by their
    /// relation. Every pair of EVENT/MENTION nodes exchanges a message scaled
    /// by `A_ij + A_ji` where `weights` (`A`, over
    /// [`BackgroundGraph::dynamic_nodes`]) is required whenever the graph has
    /// EVENT nodes. `relation_slot` maps KG relation ids to embedding rows.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &BackgroundGraph,
        nodes: Var,
        weights: Option<Var>,
        relation_slot: &dyn Fn(usize) -> usize,
    ) -> Result<Var> {
        let (j, d) = tape.shape(nodes);
        if j != graph.node_count() {
            return Err(Error::Argument(format!(
                "{j} node rows for a graph with {} nodes",
                graph.node_count()
            )));
        }
        let dyn_nodes = graph.dynamic_nodes();
        let has_events = graph.nodes.iter().any(|n| n.role == NodeRole::Event);
        if has_events && weights.is_none() {
            return Err(Error::State("graph has event nodes but no dynamic weights".into()));
        }
        if let Some(w) = weights {
            if tape.shape(w) != (dyn_nodes.len(), dyn_nodes.len()) {
                return Err(Error::Argument(format!(
                    "dynamic weights {:?} for {} event/mention nodes",
                    tape.shape(w),
                    dyn_nodes.len()
                )));
            }
        }

        let self_w = tape.param(store, self.self_w);
        let mut pre = tape.matmul(nodes, self_w);
        let mut incoming: Option<Var> = None;

        if !graph.static_edges.is_empty() {
            let mut src = Vec::new();
            let mut dst = Vec::new();
            let mut rel = Vec::new();
            for e in &graph.static_edges {
                let slot = relation_slot(e.relation);
                src.push(e.from);
                dst.push(e.to);
                rel.push(slot);
                if e.from != e.to {
                    src.push(e.to);
                    dst.push(e.from);
                    rel.push(slot);
                }
            }
            let rel_table = tape.param(store, self.relation_embedding);
            let rel_rows = tape.select_rows(rel_table, &rel);
            let value_w = tape.param(store, self.value);
            let values = tape.matmul(nodes, value_w);
            let edge_values = tape.select_rows(values, &src);
            let edge_values = tape.add(edge_values, rel_rows);
            let alpha = match self.variant {
                GnnVariant::Attention => {
                    let query_w = tape.param(store, self.query);
                    let key_w = tape.param(store, self.key);
                    let queries = tape.matmul(nodes, query_w);
                    let keys = tape.matmul(nodes, key_w);
                    let edge_q = tape.select_rows(queries, &dst);
                    let edge_k = tape.select_rows(keys, &src);
                    let edge_k = tape.add(edge_k, rel_rows);
                    let prod = tape.mul(edge_q, edge_k);
                    let logits = tape.sum_cols(prod);
                    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
                    tape.segment_softmax(logits, &dst)
                }
                GnnVariant::Mean => {
                    let mut deg = vec![0.0; j];
                    for &t in &dst {
                        deg[t] += 1.0;
                    }
                    tape.leaf(Array2::from_shape_fn((dst.len(), 1), |(k, _)| 1.0 / deg[dst[k]]))
                }
            };
            let messages = tape.mul_col(edge_values, alpha);
            incoming = Some(tape.index_add(messages, &dst, j));
        }

        if let Some(a) = weights {
            if !dyn_nodes.is_empty() {
                let n = dyn_nodes.len();
                let a_t = tape.transpose(a);
                let sym = tape.add(a, a_t);
                let value_w = tape.param(store, self.value);
                let values = tape.matmul(nodes, value_w);
                let dyn_values = tape.select_rows(values, &dyn_nodes);
                let mut agg = tape.matmul(sym, dyn_values);

                let is_mention: Vec<bool> = dyn_nodes.iter().map(|&i| graph.nodes[i].role == NodeRole::Mention).collect();
                let rel_table = tape.param(store, self.relation_embedding);
                for (slot, both_mentions) in [(self.slots.mention_edge(), true), (self.slots.dynamic_edge(), false)] {
                    let mask = tape.leaf(Array2::from_shape_fn((n, n), |(r, c)| {
                        f64::from(u8::from((is_mention[r] && is_mention[c]) == both_mentions))
                    }));
                    let masked = tape.mul(sym, mask);
                    let mass = tape.sum_cols(masked);
                    let rel_row = tape.select_rows(rel_table, &[slot]);
                    let typed = tape.matmul(mass, rel_row);
                    agg = tape.add(agg, typed);
                }
                let scattered = tape.index_add(agg, &dyn_nodes, j);
                incoming = Some(match incoming {
                    Some(s) => tape.add(s, scattered),
                    None => scattered,
                });
            }
        }

        if let Some(m) = incoming {
            let message_w = tape.param(store, self.message_w);
            let projected = tape.matmul(m, message_w);
            pre = tape.add(pre, projected);
        }
        let bias = tape.param(store, self.bias);
        let pre = tape.add_row(pre, bias);
        let update = tape.tanh(pre);
        Ok(tape.add(nodes, update))
    }
}

/// Initial node states for MENTION/OTHER nodes at the first joint layer.
#[derive(Clone, Debug)]
pub struct NodeInit {
    /// Used for every KG node when no embedding table is available.
    pub default_node: ParamId,
    /// Maps KG embeddings to `d_gnn` when their dimensions differ.
    pub kg_projection: Option<Linear>,
}

impl NodeInit {
    pub fn new(store: &mut ParamStore, d_gnn: usize, d_kg: Option<usize>, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Other;
        Self {
            default_node: store.add_normal("node_init.default", g, (1, d_gnn), 0.1, rng),
            kg_projection: d_kg
                .filter(|&dk| dk != d_gnn)
                .map(|dk| Linear::new(store, "node_init.kg_projection", g, dk, d_gnn, rng)),
        }
    }

    /// Node matrix `J×d_gnn`: persistent rows from `prev` (later layers) or
    /// the KG table / default vector (first layer), then the event rows.
    pub fn init_node_embeddings(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &BackgroundGraph,
        kg: &KnowledgeGraph,
        prev: Option<Var>,
        events: Var,
    ) -> Result<Var> {
        let d = store.value(self.default_node).ncols();
        let base: Vec<usize> = graph
            .nodes
            .iter()
            .filter(|n| n.role != NodeRole::Event)
            .map(|n| n.kg_node.expect("non-event nodes reference the KG"))
            .collect();
        let n_events = graph.nodes.len() - base.len();
        if tape.shape(events) != (n_events, d) {
            return Err(Error::Argument(format!(
                "event rows {:?} do not match {n_events} event nodes of width {d}",
                tape.shape(events)
            )));
        }
        let base_rows = match prev {
            Some(p) => {
                if tape.shape(p) != (base.len(), d) {
                    return Err(Error::Argument(format!(
                        "previous node matrix {:?} does not match {} persistent nodes",
                        tape.shape(p),
                        base.len()
                    )));
                }
                p
            }
            None => match kg.embeddings() {
                Some(table) if !base.is_empty() => {
                    let rows = Array2::from_shape_fn((base.len(), table.ncols()), |(r, c)| table[[base[r], c]]);
                    let leaf = tape.leaf(rows);
                    match &self.kg_projection {
                        Some(proj) => proj.forward(tape, store, leaf),
                        None if table.ncols() == d => leaf,
                        None => {
                            return Err(Error::Argument(format!(
                                "KG embeddings have dimension {} but the model expects {d}",
                                table.ncols()
                            )))
                        }
                    }
                }
                _ => {
                    let default = tape.param(store, self.default_node);
                    tape.select_rows(default, &vec![0; base.len()])
                }
            },
        };
        Ok(tape.concat_rows(&[base_rows, events], d))
    }
}

/// Two-layer classifier over concatenated ordered pair embeddings.
#[derive(Clone, Copy, Debug)]
pub struct PairClassifier {
    pub mlp: Mlp2,
}

impl PairClassifier {
    pub fn new(store: &mut ParamStore, name: &str, d_gnn: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp2::new(store, name, ParamGroup::Other, (2 * d_gnn, hidden, 2), rng),
        }
    }

    /// Logits (`K×2`, class 1 = causal) for every ordered pair `(i, j)`,
    /// `i ≠ j`, in row-major order.
    pub fn logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        events: Var,
        drop: &mut Dropout,
    ) -> Option<(Vec<(usize, usize)>, Var)> {
        let n = tape.shape(events).0;
        let pairs: Vec<(usize, usize)> = ordered_pairs(n);
        if pairs.is_empty() {
            return None;
        }
        let heads: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let tails: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let left = tape.select_rows(events, &heads);
        let right = tape.select_rows(events, &tails);
        let joined = tape.concat_cols(&[left, right]);
        Some((pairs, self.mlp.forward(tape, store, joined, drop)))
    }
}

pub fn ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Row-wise softmax probability of the causal class.
pub fn causal_probabilities(logits: &Array2<f64>) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let m = r[0].max(r[1]);
            let e0 = (r[0] - m).exp();
            let e1 = (r[1] - m).exp();
            e1 / (e0 + e1)
        })
        .collect()
}

/// Probability of causality for every ordered pair of event rows.
pub fn classify_pairs(events: &Array2<f64>, clf: &PairClassifier, store: &ParamStore) -> BTreeMap<(usize, usize), f64> {
    let mut tape = Tape::new();
    let ev = tape.leaf(events.clone());
    match clf.logits(&mut tape, store, ev, &mut Dropout::eval()) {
        None => BTreeMap::new(),
        Some((pairs, logits)) => pairs.into_iter().zip(causal_probabilities(tape.value(logits))).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationMatch {
    Exact,
    Overlap,
}

/// Labels every ordered pair of extracted spans: causal iff the spans match a
/// gold cause/effect pair in that direction.
pub fn relation_supervision(
    extracted: &[Span],
    gold_events: &[Span],
    gold_pairs: &[(usize, usize)],
    mode: RelationMatch,
) -> BTreeMap<(usize, usize), bool> {
    let matches = |a: &Span, b: &Span| match mode {
        RelationMatch::Exact => a == b,
        RelationMatch::Overlap => a.overlaps(b),
    };
    ordered_pairs(extracted.len())
        .into_iter()
        .map(|(i, j)| {
            let causal = gold_pairs.iter().any(|&(c, e)| {
                matches(&extracted[i], &gold_events[c]) && matches(&extracted[j], &gold_events[e])
            });
            ((i, j), causal)
        })
        .collect()
}

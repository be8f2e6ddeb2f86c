//! Per-sentence background graph: initial construction from the KG and the
//! per-layer insertion of extracted event nodes.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::Serialize;

use crate::corpus::{Sentence, Span};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Mention, NodeId, RelationId};

pub const DEFAULT_NODE_CAP: usize = 50;
pub const DEFAULT_MAX_PATH_LEN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeRole {
    Mention,
    Other,
    Event,
}

/// Why an OTHER node was retrieved. Ordered by retrieval priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Justification {
    PathInterior,
    OneHop,
    TwoHop,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphNode {
    /// KG node for MENTION/OTHER nodes, `None` for EVENT nodes.
    pub kg_node: Option<NodeId>,
    pub role: NodeRole,
    pub span: Option<Span>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub justification: Option<Justification>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StaticEdge {
    pub from: usize,
    pub to: usize,
    pub relation: RelationId,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BackgroundGraph {
    pub nodes: Vec<GraphNode>,
    pub static_edges: Vec<StaticEdge>,
    /// Weights over [`dynamic_nodes`](Self::dynamic_nodes), set by insertion.
    pub dynamic_weights: Option<Array2<f64>>,
}

impl BackgroundGraph {
    pub fn empty() -> Self {
        Self {
            nodes: Vec::new(),
            static_edges: Vec::new(),
            dynamic_weights: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn indices_with(&self, role: NodeRole) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn mention_indices(&self) -> Vec<usize> {
        self.indices_with(NodeRole::Mention)
    }

    pub fn event_indices(&self) -> Vec<usize> {
        self.indices_with(NodeRole::Event)
    }

    /// Indices of non-EVENT nodes (the persistent part of the graph).
    pub fn base_len(&self) -> usize {
        self.nodes.iter().filter(|n| n.role != NodeRole::Event).count()
    }

    /// Node indices that take part in dynamic edges: mentions first, then
    /// events, each in graph order.
    pub fn dynamic_nodes(&self) -> Vec<usize> {
        let mut v = self.mention_indices();
        v.extend(self.event_indices());
        v
    }

    /// Mentions that made it into the graph, with their node index.
    pub fn mentions(&self) -> Vec<(usize, Mention)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == NodeRole::Mention)
            .map(|(i, n)| {
                (
                    i,
                    Mention {
                        node_id: n.kg_node.expect("mention nodes reference the KG"),
                        span: n.span.expect("mention nodes carry spans"),
                    },
                )
            })
            .collect()
    }
}

/// Builds G⁰ for a sentence.
///
/// Mentions come first, then interior nodes of shortest mention-to-mention
/// paths, then 1-hop and 2-hop neighbours; each tier is ordered by KG node id
/// and the whole list is truncated to `node_cap`. A KG node mentioned more
/// than once keeps its first span.
pub fn build_initial(sentence: &Sentence, kg: &KnowledgeGraph, node_cap: usize, max_path_len: usize) -> BackgroundGraph {
    let mut first_span: Vec<(NodeId, Span)> = Vec::new();
    for m in kg.link_mentions(&sentence.tokens) {
        if !first_span.iter().any(|(id, _)| *id == m.node_id) {
            first_span.push((m.node_id, m.span));
        }
    }
    first_span.sort_by_key(|(id, _)| *id);
    let mention_ids: BTreeSet<NodeId> = first_span.iter().map(|(id, _)| *id).collect();

    let mut taken = mention_ids.clone();
    let mut tiers: Vec<(Justification, BTreeSet<NodeId>)> = Vec::new();

    let mut path_nodes = BTreeSet::new();
    let ids: Vec<NodeId> = mention_ids.iter().copied().collect();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            path_nodes.extend(kg.shortest_path_nodes(a, b, max_path_len).expect("linked nodes exist"));
        }
    }
    path_nodes.retain(|n| !taken.contains(n));
    taken.extend(&path_nodes);
    tiers.push((Justification::PathInterior, path_nodes));

    let mut one_hop = kg.k_hop_neighbors(&mention_ids, 1).expect("linked nodes exist");
    one_hop.retain(|n| !taken.contains(n));
    taken.extend(&one_hop);
    tiers.push((Justification::OneHop, one_hop));

    let mut two_hop = kg.k_hop_neighbors(&mention_ids, 2).expect("linked nodes exist");
    two_hop.retain(|n| !taken.contains(n));
    tiers.push((Justification::TwoHop, two_hop));

    let mut nodes: Vec<GraphNode> = first_span
        .iter()
        .map(|&(id, span)| GraphNode {
            kg_node: Some(id),
            role: NodeRole::Mention,
            span: Some(span),
            justification: None,
        })
        .collect();
    for (why, tier) in tiers {
        nodes.extend(tier.into_iter().map(|id| GraphNode {
            kg_node: Some(id),
            role: NodeRole::Other,
            span: None,
            justification: Some(why),
        }));
    }
    nodes.truncate(node_cap);

    let mut local = std::collections::HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        local.insert(n.kg_node.expect("KG-backed node"), i);
    }
    let static_edges = kg
        .edges()
        .iter()
        .filter_map(|e| {
            Some(StaticEdge {
                from: *local.get(&e.head)?,
                to: *local.get(&e.tail)?,
                relation: e.relation,
            })
        })
        .collect();

    BackgroundGraph {
        nodes,
        static_edges,
        dynamic_weights: None,
    }
}

/// Appends EVENT nodes to `g0` and attaches the dynamic weight matrix.
///
/// Any EVENT nodes already present in `g0` are discarded first, so the result
/// always reflects only `event_spans`.
pub fn insert_events(
    g0: &BackgroundGraph,
    event_spans: &[Span],
    event_embeddings: &Array2<f64>,
    weights: Array2<f64>,
) -> Result<BackgroundGraph> {
    let mut g = BackgroundGraph {
        nodes: g0.nodes.iter().filter(|n| n.role != NodeRole::Event).cloned().collect(),
        static_edges: g0.static_edges.clone(),
        dynamic_weights: None,
    };
    if event_embeddings.nrows() != event_spans.len() {
        return Err(Error::Argument(format!(
            "{} event embeddings for {} events",
            event_embeddings.nrows(),
            event_spans.len()
        )));
    }
    let dyn_n = g.mention_indices().len() + event_spans.len();
    if weights.dim() != (dyn_n, dyn_n) {
        return Err(Error::Argument(format!(
            "weight matrix is {:?}, expected {dyn_n}x{dyn_n}",
            weights.dim()
        )));
    }
    g.nodes.extend(event_spans.iter().map(|&span| GraphNode {
        kg_node: None,
        role: NodeRole::Event,
        span: Some(span),
        justification: None,
    }));
    g.dynamic_weights = Some(weights);
    Ok(g)
}

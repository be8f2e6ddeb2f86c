//! Cross-module aggregators: T (relation → tokens at event-final positions)
//! and K (tokens ↔ KG nodes at mention anchors).

use rand::Rng;

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::nn::{Dropout, Mlp2};

#[derive(Clone, Copy, Debug)]
pub struct TAggregator {
    pub mlp: Mlp2,
}

impl TAggregator {
    pub fn new(store: &mut ParamStore, name: &str, d_enc: usize, d_gnn: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp2::new(store, name, ParamGroup::Other, (d_enc + d_gnn, d_enc, d_enc), rng),
        }
    }

    pub fn params(&self) -> [ParamId; 4] {
        self.mlp.params()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KAggregator {
    pub mlp: Mlp2,
    pub d_enc: usize,
    pub d_gnn: usize,
}

impl KAggregator {
    pub fn new(store: &mut ParamStore, name: &str, d_enc: usize, d_gnn: usize, rng: &mut impl Rng) -> Self {
        let d = d_enc + d_gnn;
        Self {
            mlp: Mlp2::new(store, name, ParamGroup::Other, (d, d, d), rng),
            d_enc,
            d_gnn,
        }
    }

    pub fn params(&self) -> [ParamId; 4] {
        self.mlp.params()
    }
}

/// Replaces the last-token row of every event in `h` with
/// `T([h̃_last; ẽ_event])`.
pub fn t_aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    agg: &TAggregator,
    h: Var,
    events: Var,
    spans: &[Span],
    drop: &mut Dropout,
) -> Result<Var> {
    if tape.shape(events).0 != spans.len() {
        return Err(Error::Argument(format!(
            "{} event rows for {} event spans",
            tape.shape(events).0,
            spans.len()
        )));
    }
    if spans.is_empty() {
        return Ok(h);
    }
    let n = tape.shape(h).0;
    if let Some(bad) = spans.iter().find(|s| s.is_empty() || s.end > n) {
        return Err(Error::Argument(format!("span {bad} out of bounds for {n} tokens")));
    }
    let anchors: Vec<usize> = spans.iter().map(Span::last).collect();
    let token_rows = tape.select_rows(h, &anchors);
    let joined = tape.concat_cols(&[token_rows, events]);
    let fused = agg.mlp.forward(tape, store, joined, drop);
    Ok(tape.scatter_rows(h, fused, &anchors))
}

/// Which halves of the K-aggregator output are written back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KGates {
    pub kg_to_plm: bool,
    pub plm_to_kg: bool,
}

/// Fuses each mention's anchor token (read from the pre-fused `h_pre`) with
/// its node row. The token half overwrites the anchor row of `h_target`
/// (after T, so K wins on collisions) and the node half overwrites the
/// mention's row of `nodes`. `mentions` pairs a node index with its span.
#[allow(clippy::too_many_arguments)]
pub fn k_aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    agg: &KAggregator,
    h_pre: Var,
    h_target: Var,
    nodes: Var,
    mentions: &[(usize, Span)],
    gates: KGates,
    drop: &mut Dropout,
) -> Result<(Var, Var)> {
    if mentions.is_empty() || !(gates.kg_to_plm || gates.plm_to_kg) {
        return Ok((h_target, nodes));
    }
    let n = tape.shape(h_pre).0;
    let j = tape.shape(nodes).0;
    if let Some((idx, _)) = mentions.iter().find(|(i, _)| *i >= j) {
        return Err(Error::State(format!("mention node {idx} has no row among {j} nodes")));
    }
    if let Some((_, bad)) = mentions.iter().find(|(_, s)| s.is_empty() || s.end > n) {
        return Err(Error::Argument(format!("mention span {bad} out of bounds for {n} tokens")));
    }
    let anchors: Vec<usize> = mentions.iter().map(|(_, s)| s.last()).collect();
    let node_idx: Vec<usize> = mentions.iter().map(|(i, _)| *i).collect();
    let token_rows = tape.select_rows(h_pre, &anchors);
    let node_rows = tape.select_rows(nodes, &node_idx);
    let joined = tape.concat_cols(&[token_rows, node_rows]);
    let fused = agg.mlp.forward(tape, store, joined, drop);
    let h = if gates.kg_to_plm {
        let part = tape.slice_cols(fused, 0, agg.d_enc);
        tape.scatter_rows(h_target, part, &anchors)
    } else {
        h_target
    };
    let e = if gates.plm_to_kg {
        let part = tape.slice_cols(fused, agg.d_enc, agg.d_gnn);
        tape.scatter_rows(nodes, part, &node_idx)
    } else {
        nodes
    };
    Ok((h, e))
}

use std::path::PathBuf;

use unice_core::config::UniceConfig;
use unice_core::corpus::{bio_decode, bio_encode, load_corpus};
use unice_core::graph::{build_initial, Justification, NodeRole};
use unice_core::kg::load_kg;

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn fixture_corpus_counts() {
    let corpus = load_corpus(repo("fixtures/corpus.jsonl")).unwrap();
    assert_eq!(corpus.len(), 4);
    assert_eq!(corpus.iter().map(|s| s.gold_events.len()).sum::<usize>(), 6);
    assert_eq!(corpus.iter().map(|s| s.gold_pairs.len()).sum::<usize>(), 3);
    for s in &corpus {
        assert_eq!(bio_decode(&bio_encode(s).unwrap()), s.gold_events);
    }
}

#[test]
fn fixture_kg_and_graph() {
    let kg = load_kg(repo("fixtures/kg.tsv"), None).unwrap();
    assert_eq!((kg.num_nodes(), kg.num_edges()), (5, 4));
    let corpus = load_corpus(repo("fixtures/corpus.jsonl")).unwrap();
    let s2 = corpus.iter().find(|s| s.id == "s2").unwrap();
    let g = build_initial(s2, &kg, 50, 10);
    let mentions: Vec<&str> = g
        .nodes
        .iter()
        .filter(|n| n.role == NodeRole::Mention)
        .map(|n| kg.surface(n.kg_node.unwrap()))
        .collect();
    assert_eq!(mentions, ["collapse", "death"]);
    let earthquake = g.nodes.iter().find(|n| n.kg_node == kg.node_id("earthquake")).unwrap();
    assert_eq!(earthquake.justification, Some(Justification::OneHop));
}

#[test]
fn shipped_configs_parse() {
    assert_eq!(UniceConfig::load(repo("configs/tiny.conf")).unwrap(), UniceConfig::tiny());
    assert_eq!(UniceConfig::load(repo("configs/full.conf")).unwrap(), UniceConfig::default());
}

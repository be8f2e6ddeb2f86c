//! Knowledge-graph snapshot: TSV loading, lexical mention linking and
//! undirected neighbourhood queries.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::corpus::Span;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type RelationId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub head: NodeId,
    pub relation: RelationId,
    pub tail: NodeId,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    surfaces: Vec<String>,
    index: HashMap<String, NodeId>,
    edges: Vec<Edge>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    /// Undirected adjacency: `(neighbour, edge index)`.
    adjacency: Vec<Vec<(NodeId, usize)>>,
    embeddings: Option<Array2<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Mention {
    pub node_id: NodeId,
    pub span: Span,
}

/// Splits a surface form into case-folded tokens. Underscores separate
/// tokens as in ConceptNet surface forms.
pub fn surface_tokens(surface: &str) -> Vec<String> {
    surface
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `surface`, creating the node on first appearance.
    pub fn intern_node(&mut self, surface: &str) -> NodeId {
        if let Some(&id) = self.index.get(surface) {
            return id;
        }
        let id = self.surfaces.len();
        self.surfaces.push(surface.to_string());
        self.index.insert(surface.to_string(), id);
        self.adjacency.push(Vec::new());
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relations.len();
        self.relations.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        id
    }

    pub fn add_edge(&mut self, head: NodeId, relation: RelationId, tail: NodeId) -> Result<()> {
        let n = self.surfaces.len();
        if head >= n || tail >= n {
            return Err(Error::Argument(format!("dangling edge endpoint ({head}, {tail})")));
        }
        if relation >= self.relations.len() {
            return Err(Error::Argument(format!("unknown relation id {relation}")));
        }
        let e = self.edges.len();
        self.edges.push(Edge { head, relation, tail });
        self.adjacency[head].push((tail, e));
        if head != tail {
            self.adjacency[tail].push((head, e));
        }
        Ok(())
    }

    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str) {
        let h = self.intern_node(head);
        let r = self.intern_relation(relation);
        let t = self.intern_node(tail);
        self.add_edge(h, r, t).expect("interned endpoints exist");
    }

    /// Attaches a node embedding table (one row per node).
    pub fn set_embeddings(&mut self, table: Array2<f64>) -> Result<()> {
        if table.nrows() != self.surfaces.len() {
            return Err(Error::Argument(format!(
                "missing embedding: table has {} rows for {} nodes",
                table.nrows(),
                self.surfaces.len()
            )));
        }
        self.embeddings = Some(table);
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.surfaces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn surface(&self, id: NodeId) -> &str {
        &self.surfaces[id]
    }

    pub fn node_id(&self, surface: &str) -> Option<NodeId> {
        self.index.get(surface).copied()
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id]
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn embeddings(&self) -> Option<&Array2<f64>> {
        self.embeddings.as_ref()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embeddings.as_ref().map(|e| e.ncols())
    }

    /// Undirected neighbours with the index of the connecting edge.
    pub fn neighbors(&self, id: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[id]
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id >= self.surfaces.len() {
            Err(Error::Argument(format!("unknown node id {id}")))
        } else {
            Ok(())
        }
    }

    /// Undirected BFS distances from `source`, exploring at most `limit` hops.
    fn bfs(&self, sources: &[NodeId], limit: usize) -> HashMap<NodeId, usize> {
        let mut dist = HashMap::new();
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist.insert(s, 0).is_none() {
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == limit {
                continue;
            }
            for &(v, _) in &self.adjacency[u] {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                    slot.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Nodes within `k` undirected hops of any seed, seeds excluded.
    pub fn k_hop_neighbors(&self, seeds: &BTreeSet<NodeId>, k: usize) -> Result<BTreeSet<NodeId>> {
        for &s in seeds {
            self.check_node(s)?;
        }
        let seeds_vec: Vec<NodeId> = seeds.iter().copied().collect();
        Ok(self
            .bfs(&seeds_vec, k)
            .into_keys()
            .filter(|n| !seeds.contains(n))
            .collect())
    }

    /// Interior nodes of every shortest undirected path between `a` and `b`,
    /// or the empty set when the distance (in edges) exceeds `max_len`.
    pub fn shortest_path_nodes(&self, a: NodeId, b: NodeId, max_len: usize) -> Result<BTreeSet<NodeId>> {
        self.check_node(a)?;
        self.check_node(b)?;
        if a == b {
            return Ok(BTreeSet::new());
        }
        let from_a = self.bfs(&[a], max_len);
        let Some(&d) = from_a.get(&b) else {
            return Ok(BTreeSet::new());
        };
        let from_b = self.bfs(&[b], d);
        Ok(from_a
            .iter()
            .filter(|&(&v, &da)| v != a && v != b && from_b.get(&v).is_some_and(|&db| da + db == d))
            .map(|(&v, _)| v)
            .collect())
    }

    /// Greedy left-to-right longest match of node surface forms against the
    /// token sequence, case-folded.
    pub fn link_mentions(&self, tokens: &[String]) -> Vec<Mention> {
        self.link_mentions_with(tokens, &|t: &str| t.to_lowercase())
    }

    /// As [`link_mentions`](Self::link_mentions) with a custom token
    /// normaliser applied to sentence tokens (surface forms are only
    /// case-folded).
    pub fn link_mentions_with(&self, tokens: &[String], normalize: &dyn Fn(&str) -> String) -> Vec<Mention> {
        let mut table: HashMap<Vec<String>, NodeId> = HashMap::new();
        let mut longest = 0;
        for (id, s) in self.surfaces.iter().enumerate() {
            let toks = surface_tokens(s);
            if toks.is_empty() {
                continue;
            }
            longest = longest.max(toks.len());
            table.entry(toks).or_insert(id);
        }
        let norm: Vec<String> = tokens.iter().map(|t| normalize(t)).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < norm.len() {
            let max_len = longest.min(norm.len() - i);
            let hit = (1..=max_len)
                .rev()
                .find_map(|len| table.get(&norm[i..i + len]).map(|&id| (id, len)));
            match hit {
                Some((node_id, len)) => {
                    out.push(Mention {
                        node_id,
                        span: Span::new(i, i + len),
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Loads a TSV triples file and an optional embeddings file.
pub fn load_kg(triples_path: impl AsRef<Path>, embeddings_path: Option<&Path>) -> Result<KnowledgeGraph> {
    let path = triples_path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kg = KnowledgeGraph::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Load {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected head<TAB>relation<TAB>tail, got {} fields", fields.len()),
            });
        }
        kg.add_triple(fields[0].trim(), fields[1].trim(), fields[2].trim());
    }
    if let Some(ep) = embeddings_path {
        let table = load_embeddings(&kg, ep)?;
        kg.set_embeddings(table)?;
    }
    Ok(kg)
}

fn load_embeddings(kg: &KnowledgeGraph, path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; kg.num_nodes()];
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Load {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (surface, vec) = line
            .split_once('\t')
            .ok_or_else(|| err("expected surface<TAB>vector".into()))?;
        let id = kg
            .node_id(surface.trim())
            .ok_or_else(|| err(format!("embedding for unknown node {surface:?}")))?;
        let values = vec
            .split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(format!("bad float: {e}")))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(format!(
                    "embedding-dimension mismatch: expected {d}, found {}",
                    values.len()
                )))
            }
            _ => {}
        }
        if rows[id].is_some() {
            return Err(err(format!("duplicate node id {surface:?}")));
        }
        rows[id] = Some(values);
    }
    let d = dim.unwrap_or(0);
    let mut table = Array2::zeros((kg.num_nodes(), d));
    for (id, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| {
            Error::Load {
                path: path.to_path_buf(),
                line: 0,
                message: format!("missing embedding for node {:?}", kg.surface(id)),
            }
        })?;
        for (c, v) in row.into_iter().enumerate() {
            table[[id, c]] = v;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const FIXTURE: &str = "earthquake\tCAUSES\tcollapse\ncollapse\tCAUSES\tdeath\naftershock\tISA\tearthquake\nearthquake\tRELATEDTO\tdisaster\n";

    fn fixture() -> KnowledgeGraph {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.tsv");
        std::fs::write(&p, FIXTURE).unwrap();
        load_kg(&p, None).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn ids(kg: &KnowledgeGraph, names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|n| kg.node_id(n).unwrap()).collect()
    }

    #[test]
    fn loads_fixture_and_empty() {
        let kg = fixture();
        assert_eq!((kg.num_nodes(), kg.num_edges()), (5, 4));
        assert_eq!(kg.node_id("earthquake"), Some(0));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.tsv");
        std::fs::write(&p, "").unwrap();
        let empty = load_kg(&p, None).unwrap();
        assert_eq!((empty.num_nodes(), empty.num_edges()), (0, 0));
    }

    #[test]
    fn embedding_errors() {
        let dir = tempfile::tempdir().unwrap();
        let kp = dir.path().join("kg.tsv");
        std::fs::write(&kp, FIXTURE).unwrap();
        let ep = dir.path().join("emb.tsv");
        std::fs::write(&ep, "earthquake\t1 2\ncollapse\t1 2\ndeath\t0 0\naftershock\t3 3\n").unwrap();
        let err = load_kg(&kp, Some(&ep)).unwrap_err();
        assert!(err.to_string().contains("missing embedding"), "{err}");

        std::fs::write(&ep, "earthquake\t1 2\ncollapse\t1 2 3\n").unwrap();
        assert!(load_kg(&kp, Some(&ep)).unwrap_err().to_string().contains("dimension mismatch"));

        std::fs::write(&ep, "earthquake\t1\nearthquake\t1\n").unwrap();
        assert!(load_kg(&kp, Some(&ep)).unwrap_err().to_string().contains("duplicate"));

        std::fs::write(&ep, "earthquake\t1\ncollapse\t2\ndeath\t3\naftershock\t4\ndisaster\t5\n").unwrap();
        let kg = load_kg(&kp, Some(&ep)).unwrap();
        assert_eq!(kg.embeddings().unwrap()[[4, 0]], 5.0);
    }

    #[test]
    fn links_fixture_sentence() {
        let kg = fixture();
        let m = kg.link_mentions(&toks("the Earthquake caused death"));
        assert_eq!(
            m,
            vec![
                Mention { node_id: 0, span: Span::new(1, 2) },
                Mention { node_id: 2, span: Span::new(3, 4) },
            ]
        );
        assert!(kg.link_mentions(&toks("nothing here")).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let mut kg = KnowledgeGraph::new();
        kg.add_triple("disaster", "RELATEDTO", "natural_disaster");
        let m = kg.link_mentions(&toks("a natural disaster"));
        assert_eq!(m, vec![Mention { node_id: 1, span: Span::new(1, 3) }]);
    }

    #[test]
    fn neighborhood_queries() {
        let kg = fixture();
        let eq = ids(&kg, &["earthquake"]);
        assert_eq!(
            kg.k_hop_neighbors(&eq, 1).unwrap(),
            ids(&kg, &["collapse", "aftershock", "disaster"])
        );
        assert!(kg.k_hop_neighbors(&BTreeSet::new(), 2).unwrap().is_empty());
        let all: BTreeSet<_> = (0..kg.num_nodes()).collect();
        assert!(kg.k_hop_neighbors(&all, 3).unwrap().is_empty());
        assert!(kg.k_hop_neighbors(&[99].into(), 1).is_err());

        let e = kg.node_id("earthquake").unwrap();
        let d = kg.node_id("death").unwrap();
        assert_eq!(kg.shortest_path_nodes(e, d, 10).unwrap(), ids(&kg, &["collapse"]));
        assert!(kg.shortest_path_nodes(e, d, 1).unwrap().is_empty());
        assert!(kg.shortest_path_nodes(e, e, 10).unwrap().is_empty());
        assert!(kg.shortest_path_nodes(e, 42, 10).is_err());
    }

    #[test]
    fn disconnected_and_all_shortest_paths() {
        let mut kg = KnowledgeGraph::new();
        kg.add_triple("a", "R", "x");
        kg.add_triple("x", "R", "b");
        kg.add_triple("a", "R", "y");
        kg.add_triple("y", "R", "b");
        kg.add_triple("lonely", "R", "other");
        let (a, b) = (kg.node_id("a").unwrap(), kg.node_id("b").unwrap());
        assert_eq!(kg.shortest_path_nodes(a, b, 10).unwrap(), ids(&kg, &["x", "y"]));
        let l = kg.node_id("lonely").unwrap();
        assert!(kg.shortest_path_nodes(a, l, 10).unwrap().is_empty());
    }

    fn random_kg(edges: &[(usize, usize, usize)], n: usize) -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        for i in 0..n {
            kg.intern_node(&format!("n{i}"));
        }
        for r in 0..3 {
            kg.intern_relation(&format!("r{r}"));
        }
        for &(h, r, t) in edges {
            kg.add_edge(h % n, r % 3, t % n).unwrap();
        }
        kg
    }

    proptest! {
        #[test]
        fn path_symmetry_and_hop_monotonicity(
            edges in prop::collection::vec((0usize..12, 0usize..3, 0usize..12), 0..30),
            a in 0usize..12, b in 0usize..12, k in 1usize..4,
        ) {
            let kg = random_kg(&edges, 12);
            prop_assert_eq!(kg.shortest_path_nodes(a, b, 10).unwrap(), kg.shortest_path_nodes(b, a, 10).unwrap());
            let seeds: BTreeSet<_> = [a].into();
            let small = kg.k_hop_neighbors(&seeds, k).unwrap();
            let big = kg.k_hop_neighbors(&seeds, k + 1).unwrap();
            prop_assert!(small.is_subset(&big));
        }

        #[test]
        fn mentions_are_disjoint_and_sorted(words in prop::collection::vec(0usize..8, 0..20)) {
            let mut kg = KnowledgeGraph::new();
            kg.add_triple("w1", "R", "w2 w3");
            kg.add_triple("w3", "R", "w4_w5_w6");
            let tokens: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
            let m = kg.link_mentions(&tokens);
            for w in m.windows(2) {
                prop_assert!(w[0].span.end <= w[1].span.start);
            }
            prop_assert_eq!(m.clone(), kg.link_mentions(&tokens));
        }
    }
}

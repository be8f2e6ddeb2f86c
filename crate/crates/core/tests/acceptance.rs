//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unice_core::autodiff::gradcheck::{check_params, DEFAULT_STEP};
use unice_core::autodiff::{ParamGroup, ParamStore, Tape, Var};
use unice_core::config::{UniceConfig, ABLATIONS};
use unice_core::corpus::{BioSequence, Sentence, Span, Tag};
use unice_core::crf::CrfHead;
use unice_core::exec::Exec;
use unice_core::fusion::{k_aggregate, t_aggregate, KAggregator, KGates, TAggregator};
use unice_core::graph::{build_initial, insert_events, BackgroundGraph, Justification, NodeRole};
use unice_core::insertion::{tree_marginals_var, EdgeScorer};
use unice_core::kg::KnowledgeGraph;
use unice_core::metrics::{breakdown_by_pair_count, f1_score, gold_pair_sets, strict_prf, write_predictions};
use unice_core::model::{TrainStep, UniceModel, Vocab};
use unice_core::nn::Dropout;
use unice_core::oracle::{crf_check, run as oracle_run};
use unice_core::relation::{GnnLayer, GnnVariant, RelationSlots};
use unice_core::synth::{generate, SynthOptions};
use unice_core::train::{batch_gradients, predict_corpus, train, TrainOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<(&str, &str, fn() -> Outcome)> = vec![
        ("1", "matrix-tree equals brute force (n=2..5, 100 each, < 1e-6)", c1_matrix_tree_oracle),
        ("2", "head-or-root identity (± 1e-6)", c2_head_or_root),
        ("3", "crf viterbi and log-partition equal enumeration (n<=6, 200 draws, 1e-6)", c3_crf_oracle),
        ("4", "finite-difference gradients (rel err < 1e-4)", c4_gradients),
        ("5", "training loss equals mean of per-layer sums (1e-9, 20 batches)", c5_loss_identity),
        ("6", "overfit 64 synthetic sentences to strict F1 >= 0.95 within 200 epochs, < 10 min", c6_overfit),
        ("7", "held-out strict F1 >= 0.8 in every bucket {1,2,3}", c7_complex_causality),
        ("8", "ablation structural checks", c8_ablations),
        ("9", "F1 identity on 0.5419/0.4363 gives 0.4834 ± 0.0005", c9_f1_identity),
        ("10", "graph construction over 500 random builds", c10_graph_properties),
        ("11", "two seeded train+predict runs give byte-identical predictions", c11_determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let started = Instant::now();
        let o = f();
        let secs = started.elapsed().as_secs_f64();
        println!(
            "{} criterion {id}: {name} | {} ({secs:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn c1_matrix_tree_oracle() -> Outcome {
    match oracle_run(5, 100, 1, Exec::default()) {
        Ok(r) => outcome(
            r.tree_instances == 400 && r.tree_max_deviation < 1e-6,
            format!("{} instances, max deviation {:.3e}", r.tree_instances, r.tree_max_deviation),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c2_head_or_root() -> Outcome {
    match oracle_run(5, 100, 1, Exec::default()) {
        Ok(r) => outcome(
            r.head_or_root_max_violation < 1e-6,
            format!("max violation {:.3e}", r.head_or_root_max_violation),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c3_crf_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n in 1..=6 {
        for trial in 0..200 {
            let (same, dev) = crf_check(n, trial, 3);
            mismatches += usize::from(!same);
            worst = worst.max(dev);
            count += 1;
        }
    }
    outcome(
        mismatches == 0 && worst < 1e-6,
        format!("{count} draws, {mismatches} decode mismatches, max log Z deviation {worst:.3e}"),
    )
}

fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.leaf(Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0)));
    let p = tape.mul(x, w);
    tape.sum_all(p)
}

fn fixture_kg() -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::new();
    kg.add_triple("earthquake", "CAUSES", "collapse");
    kg.add_triple("collapse", "CAUSES", "death");
    kg.add_triple("aftershock", "ISA", "earthquake");
    kg.add_triple("earthquake", "RELATEDTO", "disaster");
    kg
}

fn sentence(id: &str, text: &str, events: &[(usize, usize)], pairs: &[(usize, usize)]) -> Sentence {
    Sentence {
        id: id.into(),
        doc_id: format!("doc-{id}"),
        tokens: text.split(' ').map(String::from).collect(),
        gold_events: events.iter().map(|&(s, e)| Span::new(s, e)).collect(),
        gold_pairs: pairs.to_vec(),
    }
}

fn c4_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut results: Vec<(&str, f64)> = Vec::new();
    let mut errors = Vec::new();
    let mut record = |name: &'static str, r: unice_core::Result<unice_core::autodiff::gradcheck::GradCheck>| match r {
        Ok(g) => results.push((name, g.max_relative_error)),
        Err(e) => errors.push(format!("{name}: {e}")),
    };

    // Insertion induction: node embeddings -> scores -> Laplacian inverse -> marginals.
    {
        let mut store = ParamStore::new();
        let scorer = EdgeScorer::new(&mut store, "ins", 4, &mut rng);
        let e = store.add_normal("nodes", ParamGroup::Other, (5, 4), 0.5, &mut rng);
        record(
            "insertion",
            check_params(&store, &[], DEFAULT_STEP, |t, s| {
                let ev = t.param(s, e);
                let (p, r) = scorer.scores(t, s, ev)?;
                let (a, root) = tree_marginals_var(t, p, r)?;
                let la = weighted_sum(t, a, 1);
                let lr = weighted_sum(t, root, 2);
                Ok(t.add(la, lr))
            }),
        );
    }
    // CRF negative log-likelihood.
    {
        let mut store = ParamStore::new();
        let head = CrfHead::new(&mut store, "crf", 4, &mut rng);
        let h = store.add_normal("h", ParamGroup::Other, (6, 4), 1.0, &mut rng);
        let gold = BioSequence::new(vec![Tag::B, Tag::I, Tag::O, Tag::B, Tag::O, Tag::O]);
        record(
            "crf_nll",
            check_params(&store, &[], DEFAULT_STEP, |t, s| {
                let hv = t.param(s, h);
                let em = head.emissions(t, s, hv);
                head.nll(t, s, em, &gold)
            }),
        );
    }
    // One GNN step over a graph with static and dynamic edges, both variants.
    {
        let kg = fixture_kg();
        let s = sentence("g", "the earthquake caused death and fear", &[(2, 3), (5, 6)], &[]);
        let g0 = build_initial(&s, &kg, 50, 10);
        let dyn_n = g0.mention_indices().len() + 2;
        let graph = insert_events(&g0, &s.gold_events, &Array2::zeros((2, 3)), Array2::zeros((dyn_n, dyn_n)))
            .expect("event insertion");
        for (name, variant) in [("gnn_step_attention", GnnVariant::Attention), ("gnn_step_mean", GnnVariant::Mean)] {
            let mut store = ParamStore::new();
            let slots = RelationSlots { kg_relations: kg.num_relations() };
            let layer = GnnLayer::new(&mut store, "gnn", 3, slots, variant, &mut rng);
            let nodes = store.add_normal("nodes", ParamGroup::Other, (graph.node_count(), 3), 0.7, &mut rng);
            let w = store.add(
                "weights",
                ParamGroup::Other,
                Array2::from_shape_simple_fn((dyn_n, dyn_n), || rng.gen_range(0.05..0.95)),
            );
            record(
                name,
                check_params(&store, &[], DEFAULT_STEP, |t, s| {
                    let nv = t.param(s, nodes);
                    let wv = t.param(s, w);
                    let out = layer.step(t, s, &graph, nv, Some(wv), &|r| r)?;
                    Ok(weighted_sum(t, out, 3))
                }),
            );
        }
    }
    // T-aggregator.
    {
        let mut store = ParamStore::new();
        let agg = TAggregator::new(&mut store, "t", 4, 3, &mut rng);
        let h = store.add_normal("h", ParamGroup::Other, (7, 4), 1.0, &mut rng);
        let ev = store.add_normal("events", ParamGroup::Other, (2, 3), 1.0, &mut rng);
        let spans = [Span::new(1, 3), Span::new(4, 5)];
        record(
            "t_aggregator",
            check_params(&store, &[], DEFAULT_STEP, |t, s| {
                let hv = t.param(s, h);
                let evv = t.param(s, ev);
                let out = t_aggregate(t, s, &agg, hv, evv, &spans, &mut Dropout::eval())?;
                Ok(weighted_sum(t, out, 4))
            }),
        );
    }
    // K-aggregator, both outputs.
    {
        let mut store = ParamStore::new();
        let agg = KAggregator::new(&mut store, "k", 4, 3, &mut rng);
        let h = store.add_normal("h", ParamGroup::Other, (7, 4), 1.0, &mut rng);
        let nodes = store.add_normal("nodes", ParamGroup::Other, (5, 3), 1.0, &mut rng);
        let mentions = [(0, Span::new(1, 2)), (2, Span::new(5, 7))];
        let gates = KGates { kg_to_plm: true, plm_to_kg: true };
        record(
            "k_aggregator",
            check_params(&store, &[], DEFAULT_STEP, |t, s| {
                let hv = t.param(s, h);
                let target = t.tanh(hv);
                let nv = t.param(s, nodes);
                let (ht, nt) = k_aggregate(t, s, &agg, hv, target, nv, &mentions, gates, &mut Dropout::eval())?;
                let a = weighted_sum(t, ht, 5);
                let b = weighted_sum(t, nt, 6);
                Ok(t.add(a, b))
            }),
        );
    }
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail: Vec<String> = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        errors.is_empty() && results.len() == 6 && worst < 1e-4,
        format!("{}{}", detail.join(", "), if errors.is_empty() { String::new() } else { format!("; errors: {}", errors.join("; ")) }),
    )
}

fn small_config() -> UniceConfig {
    let mut c = UniceConfig::tiny();
    c.d_enc = 16;
    c.heads = 2;
    c.d_ff = 32;
    c.d_gnn = 12;
    c.d_kg = 12;
    c.classifier_hidden = 12;
    c.plain_layers = 1;
    c.batch_size = 4;
    c
}

fn small_data(n: usize, seed: u64) -> (Vec<Sentence>, KnowledgeGraph) {
    let data = generate(&SynthOptions {
        num_sentences: n,
        seed,
        embedding_dim: Some(12),
        ..SynthOptions::default()
    })
    .expect("synthetic data");
    let kg = data.knowledge_graph().expect("synthetic KG");
    (data.corpus, kg)
}

fn c5_loss_identity() -> Outcome {
    let (corpus, kg) = small_data(40, 5);
    let model = match UniceModel::new(small_config(), Vocab::build(&corpus), kg.relation_names().to_vec()) {
        Ok(m) => m,
        Err(e) => return outcome(false, e.to_string()),
    };
    let graphs: Vec<BackgroundGraph> = corpus.iter().map(|s| model.initial_graph(s, &kg)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let size = rng.gen_range(1..=6);
        let batch: Vec<(&Sentence, &BackgroundGraph, u64)> = (0..size)
            .map(|_| {
                let i = rng.gen_range(0..corpus.len());
                (&corpus[i], &graphs[i], rng.gen())
            })
            .collect();
        let out = match batch_gradients(&model, &batch, &kg, rng.gen_bool(0.5), Exec::default()) {
            Ok(o) => o,
            Err(e) => return outcome(false, e.to_string()),
        };
        let per_sentence: Vec<f64> = out
            .layer_losses
            .iter()
            .map(|layers| layers.iter().map(|(e, r)| e + r).sum::<f64>() / layers.len() as f64)
            .collect();
        let expected = per_sentence.iter().sum::<f64>() / per_sentence.len() as f64;
        worst = worst.max((out.loss - expected).abs());
    }
    outcome(worst < 1e-9, format!("max |loss - mean of layer sums| = {worst:.3e}"))
}

fn c6_overfit() -> Outcome {
    let data = generate(&SynthOptions {
        num_sentences: 64,
        embedding_dim: Some(64),
        ..SynthOptions::default()
    })
    .expect("synthetic data");
    let kg = data.knowledge_graph().expect("synthetic KG");
    let corpus = data.corpus;
    let started = Instant::now();
    let mut model = UniceModel::new(UniceConfig::tiny(), Vocab::build(&corpus), kg.relation_names().to_vec())
        .expect("model");
    let opts = TrainOptions {
        target_f1: Some(0.95),
        ..TrainOptions::default()
    };
    let report = match train(&mut model, &corpus, None, &kg, &opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = started.elapsed().as_secs_f64();
    let pred = predict_corpus(&model, &corpus, &kg, Exec::default()).expect("prediction");
    let f1 = strict_prf(&pred, &gold_pair_sets(&corpus)).expect("metrics").f1;
    outcome(
        f1 >= 0.95 && report.history.len() <= 200 && secs < 600.0,
        format!("train strict F1 {f1:.4} after {} epochs in {secs:.0}s", report.history.len()),
    )
}

fn c7_complex_causality() -> Outcome {
    let data = generate(&SynthOptions {
        num_sentences: 510,
        seed: 11,
        embedding_dim: Some(64),
        ..SynthOptions::default()
    })
    .expect("synthetic data");
    let kg = data.knowledge_graph().expect("synthetic KG");
    let (train_set, rest) = data.corpus.split_at(300);
    let (dev, test) = rest.split_at(60);
    let mut cfg = UniceConfig::tiny();
    cfg.max_epochs = 60;
    cfg.patience = 15;
    let mut model = UniceModel::new(cfg, Vocab::build(train_set), kg.relation_names().to_vec()).expect("model");
    let report = match train(&mut model, train_set, Some(dev), &kg, &TrainOptions::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let pred = predict_corpus(&model, test, &kg, Exec::default()).expect("prediction");
    let buckets = breakdown_by_pair_count(&pred, &gold_pair_sets(test)).expect("breakdown");
    let wanted = ["1", "2", "3"];
    let pass = wanted
        .iter()
        .all(|b| buckets.get(*b).is_some_and(|r| r.sentences > 0 && r.prf.f1 >= 0.8));
    let detail: Vec<String> = buckets
        .iter()
        .map(|(k, v)| format!("bucket {k} (n={}) F1 {:.4}", v.sentences, v.prf.f1))
        .collect();
    outcome(
        pass,
        format!("{}; best dev epoch {}", detail.join(", "), report.best_epoch),
    )
}

fn c8_ablations() -> Outcome {
    let (corpus, kg) = small_data(16, 8);
    let mut problems = Vec::new();
    for setting in ABLATIONS {
        let mut cfg = small_config().ablated(setting).expect("known ablation");
        cfg.max_epochs = 1;
        let mut model = match UniceModel::new(cfg.clone(), Vocab::build(&corpus), kg.relation_names().to_vec()) {
            Ok(m) => m,
            Err(e) => {
                problems.push(format!("{setting}: {e}"));
                continue;
            }
        };
        match train(&mut model, &corpus, None, &kg, &TrainOptions::default()) {
            Ok(r) if !r.history.is_empty() => {}
            Ok(_) => problems.push(format!("{setting}: no epoch ran")),
            Err(e) => problems.push(format!("{setting}: {e}")),
        }
        let graphs: Vec<BackgroundGraph> = corpus.iter().map(|s| model.initial_graph(s, &kg)).collect();
        let batch: Vec<(&Sentence, &BackgroundGraph, u64)> =
            corpus.iter().zip(&graphs).enumerate().map(|(i, (s, g))| (s, g, i as u64)).collect();
        let out = match batch_gradients(&model, &batch, &kg, false, Exec::default()) {
            Ok(o) => o,
            Err(e) => {
                problems.push(format!("{setting}: {e}"));
                continue;
            }
        };
        let norm = |ids: Vec<_>| ids.into_iter().map(|id| out.grads.norm(id)).sum::<f64>();
        if matches!(setting, "wo_si" | "wo_both") && norm(model.t_aggregator_params()) != 0.0 {
            problems.push(format!("{setting}: T-aggregator gradient is non-zero"));
        }
        if matches!(setting, "wo_kf" | "wo_both") {
            if graphs.iter().any(|g| g.node_count() != 0) {
                problems.push(format!("{setting}: G0 not empty"));
            }
            if norm(model.k_aggregator_params()) != 0.0 {
                problems.push(format!("{setting}: K-aggregator gradient is non-zero"));
            }
        }
        if matches!(setting, "variant_no_link" | "wo_insertion") {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for (s, g) in corpus.iter().zip(&graphs) {
                let mut tape = Tape::new();
                let trace = model
                    .forward(&mut tape, s, &kg, g, Some(TrainStep { rng: &mut rng, gold_events: true }))
                    .expect("forward");
                let nonzero = trace
                    .layers
                    .iter()
                    .filter_map(|l| l.graph.dynamic_weights.as_ref())
                    .any(|w| w.iter().any(|&x| x != 0.0));
                if nonzero {
                    problems.push(format!("{setting}: dynamic weights not zero on {}", s.id));
                    break;
                }
            }
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} settings trained; gradient and graph checks hold", ABLATIONS.len())
        } else {
            problems.join("; ")
        },
    )
}

fn c9_f1_identity() -> Outcome {
    let f1 = f1_score(0.5419, 0.4363);
    outcome((f1 - 0.4834).abs() <= 0.0005, format!("F1 = {f1:.6}"))
}

/// All-pairs undirected hop distances by Floyd-Warshall.
fn distances(kg: &KnowledgeGraph) -> Vec<Vec<usize>> {
    let n = kg.num_nodes();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for e in kg.edges() {
        if e.head != e.tail {
            d[e.head][e.tail] = 1;
            d[e.tail][e.head] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Tier a node should land in, from distances alone.
fn expected_tier(v: usize, mentions: &[usize], d: &[Vec<usize>], max_path_len: usize) -> Option<Justification> {
    let on_path = mentions.iter().enumerate().any(|(i, &a)| {
        mentions[i + 1..].iter().any(|&b| {
            let ab = d[a][b];
            ab <= max_path_len && v != a && v != b && d[a][v] + d[v][b] == ab
        })
    });
    let nearest = mentions.iter().map(|&m| d[m][v]).min()?;
    if on_path {
        Some(Justification::PathInterior)
    } else if nearest == 1 {
        Some(Justification::OneHop)
    } else if nearest == 2 {
        Some(Justification::TwoHop)
    } else {
        None
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (Sentence, KnowledgeGraph) {
    let vocab = rng.gen_range(5..90);
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    let relations = ["CAUSES", "ISA", "RELATEDTO", "ATLOCATION"];
    let mut kg = KnowledgeGraph::new();
    let edges = rng.gen_range(1..vocab * 3);
    for _ in 0..edges {
        let h = &words[rng.gen_range(0..vocab)];
        let t = &words[rng.gen_range(0..vocab)];
        let head = if rng.gen_bool(0.1) { format!("{h} {t}") } else { h.clone() };
        kg.add_triple(&head, relations[rng.gen_range(0..relations.len())], t);
    }
    let len = rng.gen_range(1..20);
    let tokens = (0..len)
        .map(|_| if rng.gen_bool(0.4) { "filler".to_string() } else { words[rng.gen_range(0..vocab)].clone() })
        .collect();
    let s = Sentence {
        id: "r".into(),
        doc_id: "r".into(),
        tokens,
        gold_events: vec![],
        gold_pairs: vec![],
    };
    (s, kg)
}

fn c10_graph_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut problems = Vec::new();
    let mut capped = 0;
    let mut max_nodes = 0;
    for case in 0..500 {
        let (s, kg) = random_case(&mut rng);
        let max_path_len = rng.gen_range(1..6);
        let g = build_initial(&s, &kg, 50, max_path_len);
        let again = build_initial(&s, &kg, 50, max_path_len);
        let mut fail = |m: String| problems.push(format!("case {case}: {m}"));
        if g != again {
            fail("repeated builds differ".into());
        }
        max_nodes = max_nodes.max(g.node_count());
        if g.node_count() > 50 {
            fail(format!("{} nodes", g.node_count()));
        }
        let d = distances(&kg);
        let linked: BTreeSet<usize> = kg.link_mentions(&s.tokens).iter().map(|m| m.node_id).collect();
        let mention_ids: Vec<usize> = g
            .nodes
            .iter()
            .filter(|n| n.role == NodeRole::Mention)
            .map(|n| n.kg_node.expect("mention has KG node"))
            .collect();
        if mention_ids.iter().copied().collect::<BTreeSet<_>>() != linked {
            fail("mention nodes differ from linked mentions".into());
        }
        let mut seen = BTreeSet::new();
        let mut last_tier = None;
        let mut included: BTreeMap<Justification, usize> = BTreeMap::new();
        for n in &g.nodes {
            let id = n.kg_node.expect("G0 nodes are KG-backed");
            if !seen.insert(id) {
                fail(format!("node {id} appears twice"));
            }
            if n.role != NodeRole::Other {
                continue;
            }
            let want = expected_tier(id, &mention_ids, &d, max_path_len);
            if n.justification != want || want.is_none() {
                fail(format!("node {id} tagged {:?}, oracle says {want:?}", n.justification));
            }
            if last_tier.is_some_and(|t| Some(t) > n.justification) {
                fail("tiers out of priority order".into());
            }
            last_tier = n.justification;
            *included.entry(n.justification.expect("checked")).or_default() += 1;
        }
        let candidates: usize = (0..kg.num_nodes())
            .filter(|v| !mention_ids.contains(v) && expected_tier(*v, &mention_ids, &d, max_path_len).is_some())
            .count();
        if mention_ids.len() + candidates <= 50 {
            if g.node_count() != mention_ids.len() + candidates {
                fail(format!("{} nodes, oracle expects {}", g.node_count(), mention_ids.len() + candidates));
            }
        } else {
            capped += 1;
            if g.node_count() != 50.min(mention_ids.len() + candidates) {
                fail("cap not filled".into());
            }
        }
        let expected_edges = kg
            .edges()
            .iter()
            .filter(|e| seen.contains(&e.head) && seen.contains(&e.tail))
            .count();
        if g.static_edges.len() != expected_edges {
            fail(format!("{} static edges, expected {expected_edges}", g.static_edges.len()));
        }
    }
    problems.truncate(5);
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("500 builds, max {max_nodes} nodes, {capped} hit the cap")
        } else {
            problems.join("; ")
        },
    )
}

fn c11_determinism() -> Outcome {
    let (corpus, kg) = small_data(24, 12);
    let dir = tempfile::tempdir().expect("temp dir");
    let mut bytes = Vec::new();
    for run in 0..2 {
        let mut cfg = small_config();
        cfg.max_epochs = 4;
        cfg.seed = 2024;
        let mut model = UniceModel::new(cfg, Vocab::build(&corpus), kg.relation_names().to_vec()).expect("model");
        if let Err(e) = train(&mut model, &corpus, None, &kg, &TrainOptions::default()) {
            return outcome(false, e.to_string());
        }
        let pred = predict_corpus(&model, &corpus, &kg, Exec::default()).expect("prediction");
        let path = dir.path().join(format!("run{run}.jsonl"));
        write_predictions(&path, &pred).expect("write predictions");
        bytes.push(std::fs::read(&path).expect("read predictions"));
    }
    outcome(
        bytes[0] == bytes[1] && !bytes[0].is_empty(),
        format!("prediction files of {} and {} bytes", bytes[0].len(), bytes[1].len()),
    )
}

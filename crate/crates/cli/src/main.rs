use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use unice_core::config::{UniceConfig, ABLATIONS};
use unice_core::corpus::{load_corpus, make_folds, write_corpus, Sentence};
use unice_core::exec::Exec;
use unice_core::graph::{build_initial, DEFAULT_MAX_PATH_LEN, DEFAULT_NODE_CAP};
use unice_core::kg::{load_kg, KnowledgeGraph};
use unice_core::metrics::{
    aggregate_folds, breakdown_by_pair_count, gold_pair_sets, load_predictions, relaxed_prf, strict_prf,
    write_predictions, PairSets,
};
use unice_core::model::{UniceModel, Vocab};
use unice_core::synth::{generate, SynthOptions};
use unice_core::train::{
    load_checkpoint, predict_corpus, save_checkpoint, train, CheckpointMeta, TrainOptions, TrainReport,
};
use unice_core::{oracle, Error, Result};

const KG_FILE: &str = "kg.tsv";
const KG_EMBEDDINGS_FILE: &str = "kg_embeddings.tsv";

#[derive(Parser)]
#[command(name = "unice", version, about = "Joint event and causality extraction over knowledge-augmented graphs")]
struct Cli {
    /// Run per-sentence work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and KG.
    GenData(GenDataArgs),
    /// Print the initial background graph of one sentence as JSON.
    GraphDump(GraphDumpArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Predict causal pairs with a checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold pairs.
    Eval(EvalArgs),
    /// Train the full model plus each requested ablation and compare.
    Ablate(AblateArgs),
    /// Compare closed-form routines with exhaustive enumeration.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    num_sentences: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.7)]
    kg_signal: f64,
    #[arg(long, default_value_t = 3)]
    max_pairs: usize,
    /// Also write random KG node embeddings of this width.
    #[arg(long)]
    embedding_dim: Option<usize>,
}

#[derive(Args)]
struct KgArgs {
    #[arg(long)]
    kg: PathBuf,
    #[arg(long)]
    kg_embeddings: Option<PathBuf>,
}

impl KgArgs {
    fn load(&self) -> Result<KnowledgeGraph> {
        load_kg(&self.kg, self.kg_embeddings.as_deref())
    }
}

#[derive(Args)]
struct GraphDumpArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    kg: KgArgs,
    #[arg(long)]
    sentence_id: String,
    /// Takes node_cap and max_path_len from this config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    kg: KgArgs,
    #[arg(long)]
    out: PathBuf,
    /// Model selection corpus; defaults to the held-out fold, or the training set.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, requires = "fold")]
    folds: Option<usize>,
    #[arg(long, requires = "folds")]
    fold: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the KG stored with the checkpoint.
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long, requires = "kg")]
    kg_embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions file; repeat together with --gold to report folds.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Corpus or predictions file holding the reference pairs.
    #[arg(long, required = true)]
    gold: Vec<PathBuf>,
    #[arg(long)]
    relaxed: bool,
    #[arg(long)]
    breakdown: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    kg: KgArgs,
    /// Comma-separated ablation names.
    #[arg(long, value_delimiter = ',', required = true)]
    settings: Vec<String>,
    /// Evaluation corpus; defaults to fold 0 of a 5-fold document split.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Writes one checkpoint per setting here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 5)]
    n_max: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(2);
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::GraphDump(a) => graph_dump(a),
        Command::Train(a) => train_cmd(a, exec),
        Command::Predict(a) => predict(a, exec),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a, exec),
        Command::OracleCheck(a) => oracle_check(a, exec),
    };
    match result {
        Ok(out) => {
            if let Some(v) = out {
                println!("{}", serde_json::to_string_pretty(&v).expect("JSON values always serialize"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

/// `--seed` beats `UNICE_SEED`, which beats the config file.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(unice_core::config::SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{} must be an integer, got '{s}'", unice_core::config::SEED_ENV))),
        Err(_) => Ok(fallback),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<UniceConfig> {
    let mut cfg = UniceConfig::load(path)?.with_env_seed()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn gen_data(a: GenDataArgs) -> Result<Option<Value>> {
    let opts = SynthOptions {
        num_sentences: a.num_sentences,
        seed: resolve_seed(a.seed, SynthOptions::default().seed)?,
        kg_signal: a.kg_signal,
        max_pairs: a.max_pairs,
        embedding_dim: a.embedding_dim,
        ..SynthOptions::default()
    };
    let data = generate(&opts)?;
    create_dir(&a.out)?;
    write_corpus(a.out.join("corpus.jsonl"), &data.corpus)?;
    data.write_triples(a.out.join(KG_FILE))?;
    if data.embeddings.is_some() {
        data.write_embeddings(a.out.join(KG_EMBEDDINGS_FILE))?;
    }
    log::info!("wrote {} sentences and {} triples to {}", data.corpus.len(), data.triples.len(), a.out.display());
    Ok(Some(json!({
        "sentences": data.corpus.len(),
        "triples": data.triples.len(),
        "seed": opts.seed,
        "out": a.out,
    })))
}

fn find_sentence<'a>(corpus: &'a [Sentence], id: &str) -> Result<&'a Sentence> {
    corpus
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::Argument(format!("no sentence with id '{id}'")))
}

fn graph_dump(a: GraphDumpArgs) -> Result<Option<Value>> {
    let corpus = load_corpus(&a.corpus)?;
    let kg = a.kg.load()?;
    let (cap, path_len) = match &a.config {
        Some(p) => {
            let c = UniceConfig::load(p)?;
            (c.node_cap, c.max_path_len)
        }
        None => (DEFAULT_NODE_CAP, DEFAULT_MAX_PATH_LEN),
    };
    let sentence = find_sentence(&corpus, &a.sentence_id)?;
    let graph = build_initial(sentence, &kg, cap, path_len);
    let relation_names: Vec<&str> = graph.static_edges.iter().map(|e| kg.relation_name(e.relation)).collect();
    let mut v = serde_json::to_value(&graph)?;
    v["sentence_id"] = json!(sentence.id);
    v["tokens"] = json!(sentence.tokens);
    v["static_edge_relations"] = json!(relation_names);
    Ok(Some(v))
}

/// Copies the KG files next to a checkpoint so `predict` needs only the directory.
fn store_kg(dir: &Path, kg: &KgArgs) -> Result<()> {
    let copy = |from: &Path, name: &str| {
        std::fs::copy(from, dir.join(name)).map(|_| ()).map_err(|e| Error::Io { path: from.to_path_buf(), source: e })
    };
    copy(&kg.kg, KG_FILE)?;
    if let Some(e) = &kg.kg_embeddings {
        copy(e, KG_EMBEDDINGS_FILE)?;
    }
    Ok(())
}

fn report_json(setting: &str, report: &TrainReport) -> Value {
    let best = &report.history[report.best_epoch.saturating_sub(1).min(report.history.len() - 1)];
    json!({
        "setting": setting,
        "epochs_run": report.history.len(),
        "best_epoch": report.best_epoch,
        "stopped_early": report.stopped_early,
        "dev": best.dev,
        "final_train_loss": report.history.last().map(|h| h.train_loss),
    })
}

struct Fit {
    model: UniceModel,
    report: TrainReport,
}

fn fit(cfg: UniceConfig, train_set: &[Sentence], dev: Option<&[Sentence]>, kg: &KnowledgeGraph, opts: &TrainOptions) -> Result<Fit> {
    let vocab = Vocab::build(train_set);
    let mut model = UniceModel::new(cfg, vocab, kg.relation_names().to_vec())?;
    let report = train(&mut model, train_set, dev, kg, opts)?;
    Ok(Fit { model, report })
}

fn save(dir: &Path, fit: &Fit, fold_id: Option<usize>, kg: &KgArgs) -> Result<()> {
    let meta = CheckpointMeta {
        vocab: fit.model.vocab.clone(),
        relation_names: fit.model.relation_names.clone(),
        fold_id,
        epoch: fit.report.best_epoch,
        best_dev_f1: fit.report.best_dev_f1,
    };
    save_checkpoint(dir, &fit.model, &fit.report.optimizer, &meta)?;
    store_kg(dir, kg)
}

fn train_cmd(a: TrainArgs, exec: Exec) -> Result<Option<Value>> {
    let cfg = load_config(&a.config, a.seed)?;
    let corpus = load_corpus(&a.corpus)?;
    let kg = a.kg.load()?;
    let (train_set, mut dev): (Vec<Sentence>, Option<Vec<Sentence>>) = match (a.folds, a.fold) {
        (Some(k), Some(i)) => {
            let folds = make_folds(&corpus, k, cfg.seed)?;
            let fold = folds
                .get(i)
                .ok_or_else(|| Error::Argument(format!("fold {i} out of range for {k} folds")))?;
            let (tr, te) = fold.split(&corpus);
            (tr.into_iter().cloned().collect(), Some(te.into_iter().cloned().collect()))
        }
        _ => (corpus, None),
    };
    if let Some(p) = &a.dev {
        dev = Some(load_corpus(p)?);
    }
    create_dir(&a.out)?;
    let opts = TrainOptions {
        exec,
        log_path: Some(a.out.join("train_log.jsonl")),
        target_f1: None,
        fold_id: a.fold,
    };
    log::info!("training on {} sentences (seed {})", train_set.len(), cfg.seed);
    let fit = fit(cfg, &train_set, dev.as_deref(), &kg, &opts)?;
    save(&a.out, &fit, a.fold, &a.kg)?;
    let mut v = report_json("full", &fit.report);
    v["checkpoint"] = json!(a.out);
    v["fold"] = json!(a.fold);
    Ok(Some(v))
}

fn predict(a: PredictArgs, exec: Exec) -> Result<Option<Value>> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let kg = match &a.kg {
        Some(p) => load_kg(p, a.kg_embeddings.as_deref())?,
        None => {
            let emb = a.checkpoint.join(KG_EMBEDDINGS_FILE);
            load_kg(a.checkpoint.join(KG_FILE), emb.exists().then_some(emb.as_path()))?
        }
    };
    let corpus = load_corpus(&a.corpus)?;
    let preds = predict_corpus(&ckpt.model, &corpus, &kg, exec)?;
    write_predictions(&a.out, &preds)?;
    let pairs: usize = preds.values().map(Vec::len).sum();
    log::info!("wrote {pairs} pairs for {} sentences to {}", preds.len(), a.out.display());
    Ok(None)
}

/// Gold pairs from either a corpus file or a predictions file.
fn load_gold(path: &Path) -> Result<PairSets> {
    match load_corpus(path) {
        Ok(c) => Ok(gold_pair_sets(&c)),
        Err(corpus_err) => load_predictions(path).map_err(|_| corpus_err),
    }
}

fn eval(a: EvalArgs) -> Result<Option<Value>> {
    if a.pred.len() != a.gold.len() {
        return Err(Error::Argument(format!(
            "{} --pred files but {} --gold files",
            a.pred.len(),
            a.gold.len()
        )));
    }
    let mut folds = Vec::new();
    let mut strict = Vec::new();
    let mut relaxed = Vec::new();
    for (p, g) in a.pred.iter().zip(&a.gold) {
        let pred = load_predictions(p)?;
        let gold = load_gold(g)?;
        let s = strict_prf(&pred, &gold)?;
        let mut fold = json!({ "pred": p, "gold": g, "strict": s });
        if a.relaxed {
            let r = relaxed_prf(&pred, &gold)?;
            fold["relaxed"] = json!(r);
            relaxed.push(r);
        }
        if a.breakdown {
            fold["buckets"] = serde_json::to_value(breakdown_by_pair_count(&pred, &gold)?)?;
        }
        strict.push(s);
        folds.push(fold);
    }
    if folds.len() == 1 {
        let mut only = folds.pop().expect("one fold");
        if let Some(o) = only.as_object_mut() {
            o.remove("pred");
            o.remove("gold");
        }
        return Ok(Some(only));
    }
    let mut v = json!({ "strict": aggregate_folds(&strict)?, "folds": folds });
    if a.relaxed {
        v["relaxed"] = json!(aggregate_folds(&relaxed)?);
    }
    Ok(Some(v))
}

fn ablate(a: AblateArgs, exec: Exec) -> Result<Option<Value>> {
    let base = load_config(&a.config, a.seed)?;
    for s in &a.settings {
        if s != "full" && !ABLATIONS.contains(&s.as_str()) {
            return Err(Error::Argument(format!(
                "unknown ablation '{s}'; expected one of {}",
                ABLATIONS.join(",")
            )));
        }
    }
    let corpus = load_corpus(&a.corpus)?;
    let kg = a.kg.load()?;
    let (train_set, dev): (Vec<Sentence>, Vec<Sentence>) = match &a.dev {
        Some(p) => (corpus, load_corpus(p)?),
        None => {
            let (tr, te) = make_folds(&corpus, 5, base.seed)?[0].split(&corpus);
            (tr.into_iter().cloned().collect(), te.into_iter().cloned().collect())
        }
    };
    let mut settings = vec!["full".to_string()];
    for s in &a.settings {
        if !settings.contains(s) {
            settings.push(s.clone());
        }
    }
    let mut rows = Vec::new();
    for setting in &settings {
        let cfg = base.ablated(setting)?;
        log::info!("ablation {setting}: training");
        let opts = TrainOptions { exec, ..TrainOptions::default() };
        let fit = fit(cfg, &train_set, Some(&dev), &kg, &opts)?;
        if let Some(out) = &a.out {
            save(&out.join(setting), &fit, None, &a.kg)?;
        }
        rows.push(report_json(setting, &fit.report));
    }
    eprintln!("{:<22} {:>9} {:>9} {:>9} {:>6}", "setting", "P", "R", "F1", "epoch");
    for r in &rows {
        let d = &r["dev"];
        eprintln!(
            "{:<22} {:>9.4} {:>9.4} {:>9.4} {:>6}",
            r["setting"].as_str().unwrap_or(""),
            d["precision"].as_f64().unwrap_or(f64::NAN),
            d["recall"].as_f64().unwrap_or(f64::NAN),
            d["f1"].as_f64().unwrap_or(f64::NAN),
            r["best_epoch"]
        );
    }
    Ok(Some(json!({ "seed": base.seed, "dev_sentences": dev.len(), "results": rows })))
}

fn oracle_check(a: OracleArgs, exec: Exec) -> Result<Option<Value>> {
    let seed = resolve_seed(a.seed, 0)?;
    let report = oracle::run(a.n_max, a.trials, seed, exec)?;
    let passed = report.passed();
    let mut v = serde_json::to_value(&report)?;
    v["passed"] = json!(passed);
    if !passed {
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Err(Error::Numerical(format!(
            "oracle deviation above {}: tree {:.3e}, crf {:.3e}, decode mismatches {}",
            oracle::ORACLE_TOLERANCE,
            report.tree_max_deviation,
            report.crf_log_partition_max_deviation,
            report.crf_decode_mismatches
        )));
    }
    Ok(Some(v))
}

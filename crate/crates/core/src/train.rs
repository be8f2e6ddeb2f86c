//! Optimisation: batched gradients, Adam with linear warmup/decay, early
//! stopping on dev F1, checkpoints and the JSON-lines training log.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{param_grads, ParamGrads, ParamGroup, ParamStore, Tape};
use crate::config::UniceConfig;
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::BackgroundGraph;
use crate::kg::KnowledgeGraph;
use crate::metrics::{gold_pair_sets, strict_prf, PairSets, PrfResult};
use crate::model::{TrainStep, UniceModel, Vocab};

/// Adam moments for every parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Parameters without a gradient are left untouched;
    /// `weight_decay` is applied decoupled from the moments.
    pub fn update(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: [f64; 2], weight_decay: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let k = id.index();
            let rate = match store.group(id) {
                ParamGroup::Encoder => lr[0],
                ParamGroup::Other => lr[1],
            };
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            self.m[k].zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            self.v[k].zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (&self.m[k], &self.v[k]);
            let value = store.value_mut(id);
            ndarray::Zip::from(value).and(m).and(v).for_each(|w, &m, &v| {
                *w -= rate * ((m / c1) / ((v / c2).sqrt() + eps) + weight_decay * *w);
            });
        }
    }
}

/// Learning-rate multiplier: linear warmup over `warmup` steps, then linear
/// decay to zero at `total`.
pub fn lr_scale(step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return (step + 1) as f64 / warmup as f64;
    }
    if total <= warmup {
        return 1.0;
    }
    ((total - step.min(total)) as f64 / (total - warmup) as f64).max(0.0)
}

/// Loss and gradient of one batch, averaged over its sentences.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub loss: f64,
    pub sentence_losses: Vec<f64>,
    /// `(L_e, L_r)` per joint layer, per sentence.
    pub layer_losses: Vec<Vec<(f64, f64)>>,
    pub grads: ParamGrads,
}

/// Computes per-sentence gradients with `exec` and reduces them in input
/// order. `seeds[i]` drives dropout and negative sampling for sentence `i`.
pub fn batch_gradients(
    model: &UniceModel,
    batch: &[(&Sentence, &BackgroundGraph, u64)],
    kg: &KnowledgeGraph,
    gold_events: bool,
    exec: Exec,
) -> Result<BatchOutcome> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let per = exec.try_map(batch, |&(s, g0, seed)| -> Result<(f64, Vec<(f64, f64)>, ParamGrads)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let trace = model.forward(&mut tape, s, kg, g0, Some(TrainStep { rng: &mut rng, gold_events }))?;
        let loss = trace.loss.expect("training forward records a loss");
        let value = tape.scalar(loss);
        let layers = trace.layer_losses(&tape);
        let grads = if value.is_finite() {
            param_grads(&tape, loss, &model.store)
        } else {
            ParamGrads::empty(model.store.len())
        };
        Ok((value, layers, grads))
    })?;
    let n = per.len() as f64;
    let mut grads = ParamGrads::empty(model.store.len());
    let mut sentence_losses = Vec::with_capacity(per.len());
    let mut layer_losses = Vec::with_capacity(per.len());
    for (loss, layers, g) in per {
        grads.accumulate(&g);
        sentence_losses.push(loss);
        layer_losses.push(layers);
    }
    grads.scale(1.0 / n);
    Ok(BatchOutcome {
        loss: sentence_losses.iter().sum::<f64>() / n,
        sentence_losses,
        layer_losses,
        grads,
    })
}

/// Last-layer causal pairs for every sentence.
pub fn predict_corpus(model: &UniceModel, sentences: &[Sentence], kg: &KnowledgeGraph, exec: Exec) -> Result<PairSets> {
    let preds = exec.try_map(sentences, |s| model.predict(s, kg).map(|p| (s.id.clone(), p)))?;
    Ok(preds.into_iter().collect())
}

pub fn evaluate(model: &UniceModel, sentences: &[Sentence], kg: &KnowledgeGraph, exec: Exec) -> Result<PrfResult> {
    let pred = predict_corpus(model, sentences, kg, exec)?;
    strict_prf(&pred, &gold_pair_sets(sentences))
}

const NEGATIVE_SAMPLING_NOTE: &str =
    "each non-causal ordered pair is kept independently with probability negative_keep_rate, redrawn every epoch";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: PrfResult,
    pub lr_scale: f64,
    pub gold_events: bool,
    pub seconds: f64,
    pub negative_keep_rate: f64,
    pub negative_sampling: String,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub exec: Exec,
    pub log_path: Option<PathBuf>,
    /// Stop as soon as dev F1 reaches this value.
    pub target_f1: Option<f64>,
    pub fold_id: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub stopped_early: bool,
    pub optimizer: Adam,
}

/// Trains `model` in place and leaves it holding the parameters of the best
/// dev epoch. Without a dev set the training sentences are used for model
/// selection.
pub fn train(
    model: &mut UniceModel,
    train_set: &[Sentence],
    dev: Option<&[Sentence]>,
    kg: &KnowledgeGraph,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    model.check_kg(kg)?;
    let cfg = model.config.clone();
    let dev = dev.unwrap_or(train_set);
    let graphs: Vec<BackgroundGraph> = opts.exec.map(train_set, |s| model.initial_graph(s, kg));
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.max_epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut optimizer = Adam::new(&model.store);
    let mut log = match &opts.log_path {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    log::info!("negative sampling: {NEGATIVE_SAMPLING_NOTE} (rate {})", cfg.negative_keep_rate);

    let mut history = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, model.store.clone());
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let gold_events = !cfg.stack_propagation() || epoch <= cfg.gold_event_warmup_epochs;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut scale = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Sentence, &BackgroundGraph, u64)> =
                chunk.iter().map(|&i| (&train_set[i], &graphs[i], rng.gen())).collect();
            let mut out = batch_gradients(model, &batch, kg, gold_events, opts.exec)?;
            if !out.loss.is_finite() || !out.grads.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|b| b.0.id.as_str()).collect();
                return Err(Error::Training(format!(
                    "non-finite loss {} at epoch {epoch}, step {}; batch sentences: {}; per-sentence losses: {:?}",
                    out.loss,
                    optimizer.step + 1,
                    ids.join(","),
                    out.sentence_losses
                )));
            }
            if cfg.grad_clip > 0.0 {
                let norm = out.grads.global_norm();
                if norm > cfg.grad_clip {
                    out.grads.scale(cfg.grad_clip / norm);
                }
            }
            scale = lr_scale(optimizer.step as usize, cfg.warmup_steps, total_steps);
            optimizer.update(
                &mut model.store,
                &out.grads,
                [cfg.lr_encoder * scale, cfg.lr_other * scale],
                cfg.weight_decay,
            );
            epoch_loss += out.loss * chunk.len() as f64;
        }
        let dev_prf = evaluate(model, dev, kg, opts.exec)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            dev: dev_prf,
            lr_scale: scale,
            gold_events,
            seconds: started.elapsed().as_secs_f64(),
            negative_keep_rate: cfg.negative_keep_rate,
            negative_sampling: NEGATIVE_SAMPLING_NOTE.into(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} dev P {:.4} R {:.4} F1 {:.4} ({:.1}s)",
            record.train_loss,
            dev_prf.precision,
            dev_prf.recall,
            dev_prf.f1,
            record.seconds
        );
        if let (Some(f), Some(p)) = (log.as_mut(), &opts.log_path) {
            serde_json::to_writer(&mut *f, &record)?;
            writeln!(f).map_err(|e| Error::io(p, e))?;
        }
        history.push(record);
        if dev_prf.f1 > best.1 {
            best = (epoch, dev_prf.f1, model.store.clone());
        }
        if opts.target_f1.is_some_and(|t| dev_prf.f1 >= t) {
            break;
        }
        if epoch - best.0 >= cfg.patience {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.store.load_values(&best.2)?;
    Ok(TrainReport {
        history,
        best_epoch: best.0,
        best_dev_f1: best.1,
        stopped_early,
        optimizer,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab: Vocab,
    pub relation_names: Vec<String>,
    pub fold_id: Option<usize>,
    pub epoch: usize,
    pub best_dev_f1: f64,
}

pub struct Checkpoint {
    pub model: UniceModel,
    pub optimizer: Adam,
    pub meta: CheckpointMeta,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `config`, `params`, `optimizer` and `meta` into `dir`.
pub fn save_checkpoint(dir: impl AsRef<Path>, model: &UniceModel, optimizer: &Adam, meta: &CheckpointMeta) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config"), model.config.to_text().as_bytes())?;
    write_file(&dir.join("params"), &serde_json::to_vec(&model.store)?)?;
    write_file(&dir.join("optimizer"), &serde_json::to_vec(optimizer)?)?;
    write_file(&dir.join("meta"), &serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let config = UniceConfig::parse_str(&read_file(&dir.join("config"))?)?;
    let meta: CheckpointMeta = serde_json::from_str(&read_file(&dir.join("meta"))?)?;
    let meta = CheckpointMeta {
        vocab: meta.vocab.reindex(),
        ..meta
    };
    let stored: ParamStore = serde_json::from_str(&read_file(&dir.join("params"))?)?;
    let optimizer: Adam = serde_json::from_str(&read_file(&dir.join("optimizer"))?)?;
    let mut model = UniceModel::new(config, meta.vocab.clone(), meta.relation_names.clone())?;
    model.store.load_values(&stored)?;
    Ok(Checkpoint { model, optimizer, meta })
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{BestMetrics, Checkpoint};
use super::loss::student_loss_terms;
use super::prepare::{PreparedData, PreparedSample};
use super::{Ablation, DistillationWeights, TrainError};
use crate::evaluation::{compute_metrics, MetricsReport, PredictionRecord};
use crate::frontend::StructureMode;
use crate::models::{
    Attention, ModelConfig, ModelKind, ModelRng, Student, StudentConfig, TeacherA, TeacherAConfig, TeacherB,
    TeacherBConfig, NUM_CLASSES,
};
use crate::numerics::{adam_step, softmax_rows, AdamState, ParamStore, Tape, Tensor, Var};

/// Batch size of every inference pass, so a stored validation score is
/// reproduced exactly by a later evaluation.
pub const EVAL_BATCH: usize = 32;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub structure_mode: StructureMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            ablation: Ablation::WithBoth,
            structure_mode: StructureMode::Ast,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-batch losses.
    pub train_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub probs: [f64; NUM_CLASSES],
}

/// Softmax at temperature 1; label 1 only when its probability is strictly
/// larger, so exact ties go to 0.
pub fn predict_from_logits(logits: [f64; NUM_CLASSES]) -> Prediction {
    let p = softmax_rows(&Tensor::new(vec![1, NUM_CLASSES], logits.to_vec()).expect("1x2"), 1.0);
    let probs = [p.data()[0], p.data()[1]];
    Prediction {
        label: u8::from(probs[1] > probs[0]),
        probs,
    }
}

fn rng_stream(seed: u64, stream: u64) -> ModelRng {
    let mut r = ModelRng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn rows2(t: &Tensor) -> Vec<[f64; NUM_CLASSES]> {
    t.data().chunks(NUM_CLASSES).map(|r| [r[0], r[1]]).collect()
}

/// Inference logits of any model kind over prepared samples, in
/// [`EVAL_BATCH`] chunks without dropout.
fn logits_for(config: &ModelConfig, store: &ParamStore, samples: &[PreparedSample]) -> Result<Vec<[f64; NUM_CLASSES]>, TrainError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let mut tape = Tape::new(store);
        let v = match config {
            ModelConfig::TeacherA(c) => {
                let batch: Vec<&[u32]> = chunk.iter().map(|s| s.code_ids.as_slice()).collect();
                TeacherA::bind(c, store)?.forward(&mut tape, &batch, None)?
            }
            ModelConfig::TeacherB(c) => {
                let batch: Vec<_> = chunk.iter().map(|s| &s.graph).collect();
                TeacherB::bind(c, store)?.forward(&mut tape, &batch, None)?
            }
            ModelConfig::Student(c) => {
                let batch: Vec<_> = chunk.iter().map(|s| &s.sequence).collect();
                Student::bind(c, store)?.forward(&mut tape, &batch, Attention::Compact, None)?.cls
            }
        };
        out.extend(rows2(tape.value(v)));
    }
    Ok(out)
}

/// Logits of a frozen model over `samples`.
pub fn teacher_logits(ckpt: &Checkpoint, samples: &[PreparedSample]) -> Result<Vec<[f64; NUM_CLASSES]>, TrainError> {
    logits_for(&ckpt.config, &ckpt.store()?, samples)
}

pub fn predict(ckpt: &Checkpoint, samples: &[PreparedSample]) -> Result<Vec<Prediction>, TrainError> {
    Ok(teacher_logits(ckpt, samples)?.into_iter().map(predict_from_logits).collect())
}

fn vocab_hash_for(kind: ModelKind, data: &PreparedData) -> String {
    match kind {
        ModelKind::TeacherB => data.structure_vocab.hash(),
        ModelKind::TeacherA | ModelKind::Student => data.code_vocab.hash(),
    }
}

/// The checkpoint must have been trained on this data's vocabulary for its kind.
pub fn check_vocab(ckpt: &Checkpoint, data: &PreparedData) -> Result<(), TrainError> {
    let found = vocab_hash_for(ckpt.kind(), data);
    if ckpt.vocab_hash != found {
        let what = if ckpt.kind() == ModelKind::TeacherB { "structure" } else { "code" };
        return Err(TrainError::VocabMismatch {
            what,
            expected: ckpt.vocab_hash.clone(),
            found,
        });
    }
    Ok(())
}

/// Metrics and per-sample predictions of a checkpoint on one split.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &PreparedData, split: &str) -> Result<MetricsReport, TrainError> {
    let samples = data
        .split(split)
        .ok_or_else(|| TrainError::Config(format!("unknown split {split:?} (valid splits: train, val, test)")))?;
    check_vocab(ckpt, data)?;
    let preds = predict(ckpt, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let pred_labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    let mut report = compute_metrics(&pred_labels, &labels)?.with_names(&data.dataset, split, ckpt.kind().as_str());
    report.predictions = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| PredictionRecord {
            id: s.id.clone(),
            label: s.label,
            pred: p.label,
            p_vulnerable: p.probs[1],
        })
        .collect();
    Ok(report)
}

fn check_splits(data: &PreparedData) -> Result<(), TrainError> {
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    if data.train.iter().all(|s| s.label == data.train[0].label) {
        log::warn!("training split holds only label {}", data.train[0].label);
    }
    Ok(())
}

fn labels_of(samples: &[PreparedSample], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| usize::from(samples[i].label)).collect()
}

fn ce_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var, TrainError> {
    let p = tape.softmax_t(logits, 1.0)?;
    Ok(tape.cross_entropy(p, labels)?)
}

/// Seeded minibatch Adam with per-epoch validation; leaves the store at
/// the epoch of highest validation F1, then recall, then the earliest.
fn fit<S>(
    config: &ModelConfig,
    store: &mut ParamStore,
    data: &PreparedData,
    cfg: &TrainConfig,
    mut step: S,
    mut on_epoch: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<(Vec<EpochLog>, BestMetrics), TrainError>
where
    S: FnMut(&ParamStore, &[usize], &mut ModelRng) -> Result<f64, TrainError>,
{
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut shuffle = rng_stream(cfg.seed, STREAM_SHUFFLE);
    let mut dropout = rng_stream(cfg.seed, STREAM_DROPOUT);
    let val_labels: Vec<u8> = data.val.iter().map(|s| s.label).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(BestMetrics, Vec<Tensor>)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut shuffle);
        let (mut total, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            store.zero_grad();
            total += step(store, idx, &mut dropout)?;
            adam_step(store, &mut adam)?;
            batches += 1;
        }
        let preds: Vec<u8> = logits_for(config, store, &data.val)?
            .into_iter()
            .map(|l| predict_from_logits(l).label)
            .collect();
        let m = compute_metrics(&preds, &val_labels)?;
        let log = EpochLog {
            epoch,
            train_loss: total / batches as f64,
            val_precision: m.precision,
            val_recall: m.recall,
            val_f1: m.f1,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} val P {:.4} R {:.4} F1 {:.4}",
            config.kind(),
            log.train_loss,
            m.precision,
            m.recall,
            m.f1
        );
        let better = best
            .as_ref()
            .is_none_or(|(b, _)| m.f1 > b.f1 || (m.f1 == b.f1 && m.recall > b.recall));
        if better {
            let metrics = BestMetrics {
                epoch,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            };
            best = Some((metrics, store.snapshot()));
        }
        if let Some(cb) = on_epoch.as_mut() {
            cb(&log);
        }
        history.push(log);
    }
    let (metrics, values) = best.expect("at least one epoch");
    store.restore(&values)?;
    Ok((history, metrics))
}

fn finish(
    config: ModelConfig,
    store: &ParamStore,
    data: &PreparedData,
    history: Vec<EpochLog>,
    metrics: BestMetrics,
) -> Result<TrainOutcome, TrainError> {
    let hash = vocab_hash_for(config.kind(), data);
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_store(config, store, hash, Some(metrics))?,
        history,
    })
}

fn check_vocab_size(what: &str, model: usize, vocab: usize) -> Result<(), TrainError> {
    if model != vocab {
        return Err(TrainError::Config(format!("{what} vocab_size {model} differs from the prepared vocabulary ({vocab})")));
    }
    Ok(())
}

/// Phase one, semantic teacher: cross-entropy on code ids.
pub fn train_teacher_a(
    data: &PreparedData,
    model_cfg: &TeacherAConfig,
    cfg: &TrainConfig,
    on_epoch: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_splits(data)?;
    check_vocab_size("teacher A", model_cfg.vocab_size, data.code_vocab.len())?;
    let config = ModelConfig::TeacherA(model_cfg.clone());
    let mut store = config.init_store(&mut rng_stream(cfg.seed, STREAM_INIT))?;
    let model = TeacherA::bind(model_cfg, &store)?;
    let step = |store: &ParamStore, idx: &[usize], rng: &mut ModelRng| {
        let mut tape = Tape::new(store);
        let batch: Vec<&[u32]> = idx.iter().map(|&i| data.train[i].code_ids.as_slice()).collect();
        let logits = model.forward(&mut tape, &batch, Some(rng))?;
        let loss = ce_loss(&mut tape, logits, &labels_of(&data.train, idx))?;
        tape.backward(loss)?;
        Ok(tape.value(loss).data()[0])
    };
    let (history, metrics) = fit(&config, &mut store, data, cfg, step, on_epoch)?;
    finish(config, &store, data, history, metrics)
}

/// Phase one, syntactic teacher: cross-entropy on structure graphs.
pub fn train_teacher_b(
    data: &PreparedData,
    model_cfg: &TeacherBConfig,
    cfg: &TrainConfig,
    on_epoch: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_splits(data)?;
    check_vocab_size("teacher B", model_cfg.vocab_size, data.structure_vocab.len())?;
    if cfg.structure_mode != data.config.structure_mode {
        return Err(TrainError::Config(format!(
            "structure mode {} differs from the prepared data ({})",
            cfg.structure_mode, data.config.structure_mode
        )));
    }
    if model_cfg.window != data.config.window {
        return Err(TrainError::Config(format!(
            "teacher B window {} differs from the prepared graphs ({})",
            model_cfg.window, data.config.window
        )));
    }
    let config = ModelConfig::TeacherB(model_cfg.clone());
    let mut store = config.init_store(&mut rng_stream(cfg.seed, STREAM_INIT))?;
    let model = TeacherB::bind(model_cfg, &store)?;
    let step = |store: &ParamStore, idx: &[usize], rng: &mut ModelRng| {
        let mut tape = Tape::new(store);
        let batch: Vec<_> = idx.iter().map(|&i| &data.train[i].graph).collect();
        let logits = model.forward(&mut tape, &batch, Some(rng))?;
        let loss = ce_loss(&mut tape, logits, &labels_of(&data.train, idx))?;
        tape.backward(loss)?;
        Ok(tape.value(loss).data()[0])
    };
    let (history, metrics) = fit(&config, &mut store, data, cfg, step, on_epoch)?;
    finish(config, &store, data, history, metrics)
}

fn check_teacher(slot: &'static str, expected: ModelKind, ckpt: &Checkpoint, data: &PreparedData) -> Result<(), TrainError> {
    if ckpt.kind() != expected {
        return Err(TrainError::KindMismatch {
            slot,
            expected,
            found: ckpt.kind(),
        });
    }
    check_vocab(ckpt, data)
}

fn teacher_rows(cache: &[[f64; NUM_CLASSES]], idx: &[usize]) -> Tensor {
    let data = idx.iter().flat_map(|&i| cache[i]).collect();
    Tensor::new(vec![idx.len(), NUM_CLASSES], data).expect("[B, 2]")
}

/// Phase two: the student against frozen teachers. Teacher logits on the
/// training split are computed once; a teacher whose effective weight is
/// zero is never run and may be absent.
pub fn train_student(
    data: &PreparedData,
    teacher_a: Option<&Checkpoint>,
    teacher_b: Option<&Checkpoint>,
    weights: DistillationWeights,
    model_cfg: &StudentConfig,
    cfg: &TrainConfig,
    on_epoch: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_splits(data)?;
    let w = cfg.ablation.apply(weights)?;
    check_vocab_size("student", model_cfg.vocab_size, data.code_vocab.len())?;
    if model_cfg.seq_len != data.config.seq_len {
        return Err(TrainError::Config(format!(
            "student seq_len {} differs from the prepared sequences ({})",
            model_cfg.seq_len, data.config.seq_len
        )));
    }
    if let Some(t) = teacher_a {
        check_teacher("teacher A", ModelKind::TeacherA, t, data)?;
    }
    if let Some(t) = teacher_b {
        check_teacher("teacher B", ModelKind::TeacherB, t, data)?;
    }
    let cache = |weight: f64, t: Option<&Checkpoint>, name: &str| -> Result<Option<Vec<[f64; NUM_CLASSES]>>, TrainError> {
        if weight == 0.0 {
            return Ok(None);
        }
        let t = t.ok_or_else(|| {
            TrainError::Precondition(format!("teacher {name} checkpoint (its distillation weight is {weight})"))
        })?;
        Ok(Some(teacher_logits(t, &data.train)?))
    };
    let logits_a = cache(w.delta, teacher_a, "A")?;
    let logits_b = cache(w.eta, teacher_b, "B")?;

    let config = ModelConfig::Student(model_cfg.clone());
    let mut store = config.init_store(&mut rng_stream(cfg.seed, STREAM_INIT))?;
    let model = Student::bind(model_cfg, &store)?;
    let step = |store: &ParamStore, idx: &[usize], rng: &mut ModelRng| {
        let mut tape = Tape::new(store);
        let batch: Vec<_> = idx.iter().map(|&i| &data.train[i].sequence).collect();
        let out = model.forward(&mut tape, &batch, Attention::Compact, Some(rng))?;
        let ta = logits_a.as_deref().map(|c| teacher_rows(c, idx));
        let tb = logits_b.as_deref().map(|c| teacher_rows(c, idx));
        let loss = student_loss_terms(&mut tape, &out, &labels_of(&data.train, idx), ta.as_ref(), tb.as_ref(), &w)?;
        tape.backward(loss)?;
        Ok(tape.value(loss).data()[0])
    };
    let (history, metrics) = fit(&config, &mut store, data, cfg, step, on_epoch)?;
    finish(config, &store, data, history, metrics)
}

#[cfg(test)]
mod tests;

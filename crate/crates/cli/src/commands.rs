//! One function per subcommand. Progress lines go to the given writer;
//! artifacts go under the output directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vulndistill::corpusgen::{from_jsonl, generate, split_samples, to_jsonl, CodeSample, Dataset, SPLIT_NAMES};
use vulndistill::evaluation::{emit_report, predictions_jsonl, MetricsReport};
use vulndistill::frontend::import_ast_file;
use vulndistill::models::{StudentConfig, TeacherAConfig, TeacherBConfig};
use vulndistill::tokenizer::{decode, Vocab};
use vulndistill::training::{
    check_vocab, evaluate_checkpoint, hyper_grid_points, predict, prepare, prepare_samples, train_student,
    train_teacher_a, train_teacher_b, AstOverrides, Checkpoint, DistillationWeights, EpochLog, PrepareConfig,
    PreparedData, PreparedSample, Prediction, TrainOutcome,
};

use crate::{PipelineError, RunConfig};

pub const DATASET_META: &str = "dataset.json";
pub const PREPARE_META: &str = "prepare.json";
pub const CODE_VOCAB: &str = "code_vocab.json";
pub const STRUCTURE_VOCAB: &str = "structure_vocab.json";
pub const RUN_CONFIG: &str = "run_config.json";

fn data_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| data_err(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf, PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| data_err(path, e))?;
    Ok(path.to_path_buf())
}

fn say(log: &mut dyn Write, line: impl AsRef<str>) {
    // Progress output is best effort.
    let _ = writeln!(log, "{}", line.as_ref());
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    name: String,
    seed: u64,
    n: usize,
    vulnerable_ratio: f64,
}

/// Writes `train.jsonl`, `val.jsonl` and `test.jsonl` of a synthetic corpus.
pub fn gen_corpus(rc: &RunConfig, out: &Path, log: &mut dyn Write) -> Result<Vec<PathBuf>, PipelineError> {
    let data = generate(rc.seed, rc.corpus_n, rc.corpus_ratio).map_err(|e| PipelineError::Usage(e.to_string()))?;
    let mut written = Vec::new();
    for split in SPLIT_NAMES {
        let samples = data.split(split).expect("known split");
        written.push(write(&out.join(format!("{split}.jsonl")), to_jsonl(samples))?);
    }
    let meta = DatasetMeta {
        name: data.name.clone(),
        seed: rc.seed,
        n: rc.corpus_n,
        vulnerable_ratio: rc.corpus_ratio,
    };
    written.push(write(&out.join(DATASET_META), json_pretty(&meta))?);
    let vulnerable = data.all().filter(|s| s.label == 1).count();
    say(
        log,
        format!(
            "generated {} samples ({vulnerable} vulnerable): train {}, val {}, test {}",
            data.len(),
            data.train.len(),
            data.val.len(),
            data.test.len()
        ),
    );
    Ok(written)
}

fn parse_samples(path: &Path) -> Result<Vec<CodeSample>, PipelineError> {
    from_jsonl(&read(path)?).map_err(|e| data_err(path, e))
}

/// A directory of `train/val/test.jsonl`, or a single JSONL file split
/// 70/15/15 by a seeded shuffle.
pub fn load_dataset(path: &Path, seed: u64) -> Result<Dataset, PipelineError> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    if path.is_dir() {
        let meta = path.join(DATASET_META);
        let name = if meta.exists() {
            serde_json::from_str::<DatasetMeta>(&read(&meta)?).map_err(|e| data_err(&meta, e))?.name
        } else {
            stem(path)
        };
        let mut splits = Vec::with_capacity(3);
        for split in SPLIT_NAMES {
            let file = path.join(format!("{split}.jsonl"));
            if !file.exists() {
                return Err(PipelineError::Data(format!("missing {split} split: {} not found", file.display())));
            }
            splits.push(parse_samples(&file)?);
        }
        let test = splits.pop().expect("3 splits");
        let val = splits.pop().expect("3 splits");
        let train = splits.pop().expect("3 splits");
        Ok(Dataset { name, train, val, test })
    } else if path.is_file() {
        Ok(split_samples(&stem(path), parse_samples(path)?, seed))
    } else {
        Err(PipelineError::Data(format!("dataset {} not found", path.display())))
    }
}

fn load_overrides(path: &Path) -> Result<AstOverrides, PipelineError> {
    let trees = import_ast_file(&read(path)?).map_err(|e| data_err(path, e))?;
    Ok(trees.into_iter().collect::<HashMap<_, _>>())
}

#[derive(Serialize, Deserialize)]
struct PrepareMeta {
    dataset: String,
    config: PrepareConfig,
    code_vocab_hash: String,
    structure_vocab_hash: String,
    run_config: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    id: String,
    label: u8,
    code_ids: Vec<u32>,
    input_ids: Vec<u32>,
    attn_len: usize,
}

#[derive(Serialize, Deserialize)]
struct StructureRecord {
    id: String,
    label: u8,
    structure: String,
    structure_ids: Vec<u32>,
}

fn jsonl<T: Serialize>(rows: impl Iterator<Item = T>) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r).expect("serializable"));
        out.push('\n');
    }
    out
}

fn graph_dump(samples: &[PreparedSample]) -> String {
    let mut out = String::new();
    for s in samples {
        writeln!(out, "# {} nodes={} ids={:?}", s.id, s.graph.num_nodes(), s.graph.node_ids).expect("write to string");
        out.push_str(&s.graph.edge_list());
    }
    out
}

/// Trains both vocabularies and writes, per split, token sequences,
/// structure sequences and token-graph edge lists.
pub fn cmd_prepare(
    rc: &RunConfig,
    data: &Path,
    out: &Path,
    ast: Option<&Path>,
    log: &mut dyn Write,
) -> Result<PreparedData, PipelineError> {
    let dataset = load_dataset(data, rc.seed)?;
    let overrides = ast.map(load_overrides).transpose()?;
    let prepared = prepare(&dataset, &rc.prepare_config(), overrides.as_ref())?;
    write(&out.join(CODE_VOCAB), prepared.code_vocab.to_json())?;
    write(&out.join(STRUCTURE_VOCAB), prepared.structure_vocab.to_json())?;
    for split in SPLIT_NAMES {
        let samples = prepared.split(split).expect("known split");
        write(
            &out.join(format!("{split}.tokens.jsonl")),
            jsonl(samples.iter().map(|s| TokenRecord {
                id: s.id.clone(),
                label: s.label,
                code_ids: s.code_ids.clone(),
                input_ids: s.sequence.ids.clone(),
                attn_len: s.sequence.attn_len,
            })),
        )?;
        write(
            &out.join(format!("{split}.structure.jsonl")),
            jsonl(samples.iter().map(|s| StructureRecord {
                id: s.id.clone(),
                label: s.label,
                structure: decode(&prepared.structure_vocab, &s.structure_ids),
                structure_ids: s.structure_ids.clone(),
            })),
        )?;
        write(&out.join(format!("{split}.graphs.txt")), graph_dump(samples))?;
    }
    let meta = PrepareMeta {
        dataset: prepared.dataset.clone(),
        config: prepared.config.clone(),
        code_vocab_hash: prepared.code_vocab.hash(),
        structure_vocab_hash: prepared.structure_vocab.hash(),
        run_config: rc.to_flat(),
    };
    write(&out.join(PREPARE_META), json_pretty(&meta))?;
    say(
        log,
        format!(
            "prepared {} ({} mode): code vocab {}, structure vocab {}, splits {}/{}/{}",
            prepared.dataset,
            prepared.config.structure_mode,
            prepared.code_vocab.len(),
            prepared.structure_vocab.len(),
            prepared.train.len(),
            prepared.val.len(),
            prepared.test.len()
        ),
    );
    Ok(prepared)
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| data_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn load_vocab(path: &Path) -> Result<Vocab, PipelineError> {
    Vocab::from_json(&read(path)?).map_err(|e| data_err(path, e))
}

/// Reads the artifacts written by [`cmd_prepare`].
pub fn load_prepared(dir: &Path) -> Result<PreparedData, PipelineError> {
    let meta_path = dir.join(PREPARE_META);
    if !meta_path.exists() {
        return Err(PipelineError::Data(format!(
            "no prepared data in {} (run `prepare` first)",
            dir.display()
        )));
    }
    let meta: PrepareMeta = serde_json::from_str(&read(&meta_path)?).map_err(|e| data_err(&meta_path, e))?;
    let code_vocab = load_vocab(&dir.join(CODE_VOCAB))?;
    let structure_vocab = load_vocab(&dir.join(STRUCTURE_VOCAB))?;
    if code_vocab.hash() != meta.code_vocab_hash || structure_vocab.hash() != meta.structure_vocab_hash {
        return Err(data_err(&meta_path, "vocabulary files do not match the recorded hashes"));
    }
    let mut splits = Vec::with_capacity(3);
    for split in SPLIT_NAMES {
        let tpath = dir.join(format!("{split}.tokens.jsonl"));
        let spath = dir.join(format!("{split}.structure.jsonl"));
        let tokens: Vec<TokenRecord> = parse_jsonl(&tpath)?;
        let structure: Vec<StructureRecord> = parse_jsonl(&spath)?;
        if tokens.len() != structure.len() {
            return Err(data_err(&spath, format!("{} rows, token file has {}", structure.len(), tokens.len())));
        }
        let mut samples = Vec::with_capacity(tokens.len());
        for (t, s) in tokens.into_iter().zip(structure) {
            if t.id != s.id {
                return Err(data_err(&spath, format!("sample {:?} does not line up with {:?}", s.id, t.id)));
            }
            let sample = PreparedSample::from_ids(t.id, t.label, t.code_ids, s.structure_ids, &meta.config)?;
            if sample.sequence.ids != t.input_ids {
                return Err(data_err(&tpath, format!("input_ids of {:?} disagree with code_ids", sample.id)));
            }
            samples.push(sample);
        }
        splits.push(samples);
    }
    let test = splits.pop().expect("3 splits");
    let val = splits.pop().expect("3 splits");
    let train = splits.pop().expect("3 splits");
    Ok(PreparedData {
        dataset: meta.dataset,
        config: meta.config,
        code_vocab,
        structure_vocab,
        train,
        val,
        test,
    })
}

/// Run settings as used with this data: preparation fields come from it.
fn adopt(rc: &RunConfig, data: &PreparedData) -> RunConfig {
    let mut rc = rc.clone();
    rc.vocab_size = data.config.vocab_size;
    rc.seq_len = data.config.seq_len;
    rc.structure = data.config.structure_mode;
    rc.window = data.config.window;
    rc.max_structure_len = data.config.max_structure_len;
    rc
}

fn provenance(rc: &RunConfig, data: &PreparedData) -> BTreeMap<String, String> {
    let mut p = rc.to_flat();
    p.insert("dataset".into(), data.dataset.clone());
    p
}

fn epoch_line(name: &str, total: usize, e: &EpochLog) -> String {
    format!(
        "{name} epoch {}/{total}  loss {:.4}  val P {:.4} R {:.4} F1 {:.4}",
        e.epoch, e.train_loss, e.val_precision, e.val_recall, e.val_f1
    )
}

fn save_outcome(
    mut outcome: TrainOutcome,
    prov: BTreeMap<String, String>,
    out: &Path,
    name: &str,
    log: &mut dyn Write,
) -> Result<PathBuf, PipelineError> {
    outcome.checkpoint.provenance = prov;
    let path = out.join(format!("{name}.ckpt"));
    std::fs::create_dir_all(out).map_err(|e| data_err(out, e))?;
    outcome.checkpoint.save(&path).map_err(|e| PipelineError::Data(e.to_string()))?;
    write(&out.join(format!("{name}.history.jsonl")), jsonl(outcome.history.iter()))?;
    if let Some(m) = outcome.checkpoint.metrics {
        say(log, format!("{name}: best epoch {} val F1 {:.4} -> {}", m.epoch, m.f1, path.display()));
    }
    Ok(path)
}

fn teacher_a_config(rc: &RunConfig, data: &PreparedData) -> TeacherAConfig {
    TeacherAConfig {
        vocab_size: data.code_vocab.len(),
        ..rc.teacher_a.clone()
    }
}

fn teacher_b_config(rc: &RunConfig, data: &PreparedData) -> TeacherBConfig {
    TeacherBConfig {
        vocab_size: data.structure_vocab.len(),
        window: data.config.window,
        ..rc.teacher_b.clone()
    }
}

fn student_config(rc: &RunConfig, data: &PreparedData) -> StudentConfig {
    StudentConfig {
        vocab_size: data.code_vocab.len(),
        seq_len: data.config.seq_len,
        ..rc.student.clone()
    }
}

pub fn cmd_train_teacher_a(rc: &RunConfig, prepared: &Path, out: &Path, log: &mut dyn Write) -> Result<PathBuf, PipelineError> {
    let data = load_prepared(prepared)?;
    let rc = adopt(rc, &data);
    let epochs = rc.epochs;
    let mut cb = |e: &EpochLog| say(log, epoch_line("teacher_a", epochs, e));
    let outcome = train_teacher_a(&data, &teacher_a_config(&rc, &data), &rc.train_config(), Some(&mut cb))?;
    save_outcome(outcome, provenance(&rc, &data), out, "teacher_a", log)
}

pub fn cmd_train_teacher_b(rc: &RunConfig, prepared: &Path, out: &Path, log: &mut dyn Write) -> Result<PathBuf, PipelineError> {
    let data = load_prepared(prepared)?;
    let rc = adopt(rc, &data);
    let epochs = rc.epochs;
    let mut cb = |e: &EpochLog| say(log, epoch_line("teacher_b", epochs, e));
    let outcome = train_teacher_b(&data, &teacher_b_config(&rc, &data), &rc.train_config(), Some(&mut cb))?;
    save_outcome(outcome, provenance(&rc, &data), out, "teacher_b", log)
}

fn load_teacher(path: Option<&Path>) -> Result<Option<(Checkpoint, String)>, PipelineError> {
    let Some(path) = path else { return Ok(None) };
    if !path.exists() {
        return Err(PipelineError::Data(format!("teacher checkpoint {} not found", path.display())));
    }
    let bytes = std::fs::read(path).map_err(|e| data_err(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes).map_err(|e| data_err(path, e))?;
    Ok(Some((ckpt, hex::encode(Sha256::digest(&bytes)))))
}

fn require_teachers(
    w: DistillationWeights,
    rc: &RunConfig,
    teacher_a: Option<&Path>,
    teacher_b: Option<&Path>,
) -> Result<(), PipelineError> {
    let w = rc.ablation.apply(w)?;
    for (weight, given, flag) in [(w.delta, teacher_a, "--teacher-a"), (w.eta, teacher_b, "--teacher-b")] {
        if weight > 0.0 && given.is_none() {
            return Err(PipelineError::Data(format!(
                "missing prerequisite: {flag} checkpoint is required with ablation {}",
                rc.ablation
            )));
        }
    }
    Ok(())
}

/// Trains one student, or with `grid` one per hyper-grid point plus a
/// comparison report of their test scores.
pub fn cmd_train_student(
    rc: &RunConfig,
    prepared: &Path,
    out: &Path,
    teacher_a: Option<&Path>,
    teacher_b: Option<&Path>,
    grid: bool,
    log: &mut dyn Write,
) -> Result<Vec<PathBuf>, PipelineError> {
    let points: Vec<(Option<(f64, f64)>, DistillationWeights)> = if grid {
        hyper_grid_points()
            .into_iter()
            .map(|p| (Some((p.gamma, p.kappa)), DistillationWeights { temperature: rc.temperature, ..p.weights }))
            .collect()
    } else {
        vec![(None, rc.weights()?)]
    };
    for (_, w) in &points {
        require_teachers(*w, rc, teacher_a, teacher_b)?;
    }
    let data = load_prepared(prepared)?;
    let base = adopt(rc, &data);
    let ta = load_teacher(teacher_a)?;
    let tb = load_teacher(teacher_b)?;
    let mut written = Vec::new();
    let mut reports: Vec<MetricsReport> = Vec::new();
    for (gk, w) in points {
        let mut rc = base.clone();
        let name = match gk {
            Some((g, k)) => {
                rc.gamma = g;
                rc.kappa = k;
                format!("student-g{g}-k{k}")
            }
            None => "student".to_string(),
        };
        let epochs = rc.epochs;
        let mut cb = |e: &EpochLog| say(log, epoch_line(&name, epochs, e));
        let outcome = train_student(
            &data,
            ta.as_ref().map(|t| &t.0),
            tb.as_ref().map(|t| &t.0),
            w,
            &student_config(&rc, &data),
            &rc.train_config(),
            Some(&mut cb),
        )?;
        let mut prov = provenance(&rc, &data);
        for (key, t) in [("teacher_a.sha256", &ta), ("teacher_b.sha256", &tb)] {
            if let Some((_, digest)) = t {
                prov.insert(key.into(), digest.clone());
            }
        }
        if grid {
            let report = evaluate_checkpoint(&outcome.checkpoint, &data, "test")?;
            reports.push(report.with_names(&data.dataset, "test", &name));
        }
        written.push(save_outcome(outcome, prov, out, &name, log)?);
    }
    if grid {
        let path = out.join(format!("grid.{}", base.format.extension()));
        written.push(write(&path, emit_report(&reports, base.format))?);
        say(log, format!("grid comparison ({} points) -> {}", reports.len(), path.display()));
    }
    Ok(written)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Data(format!("checkpoint {} not found", path.display())));
    }
    Checkpoint::load(path).map_err(|e| PipelineError::Data(e.to_string()))
}

/// Writes `<stem>.<split>.<format>`, the per-sample predictions and the
/// run settings next to them.
pub fn cmd_evaluate(
    rc: &RunConfig,
    checkpoint: &Path,
    prepared: &Path,
    split: &str,
    out: &Path,
    log: &mut dyn Write,
) -> Result<(MetricsReport, Vec<PathBuf>), PipelineError> {
    if !SPLIT_NAMES.contains(&split) {
        return Err(PipelineError::Usage(format!(
            "unknown split {split:?} (valid splits: {})",
            SPLIT_NAMES.join(", ")
        )));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let data = load_prepared(prepared)?;
    let rc = adopt(rc, &data);
    let report = evaluate_checkpoint(&ckpt, &data, split)?;
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let base = format!("{stem}.{split}");
    let written = vec![
        write(&out.join(format!("{base}.{}", rc.format.extension())), emit_report(std::slice::from_ref(&report), rc.format))?,
        write(&out.join(format!("{base}.predictions.jsonl")), predictions_jsonl(&report.predictions))?,
        write(&out.join(format!("{base}.{RUN_CONFIG}")), json_pretty(&provenance(&rc, &data)))?,
    ];
    say(
        log,
        format!(
            "{} on {split}: P {:.4} R {:.4} F1 {:.4} ({} samples)",
            ckpt.kind(),
            report.precision,
            report.recall,
            report.f1,
            report.total()
        ),
    );
    Ok((report, written))
}

#[derive(Serialize)]
pub struct PredictionLine {
    pub id: String,
    pub label: u8,
    pub p_safe: f64,
    pub p_vulnerable: f64,
}

/// Input is JSONL with `id` and `code` (other fields ignored), or a source
/// file holding one function.
fn read_inputs(path: &Path) -> Result<Vec<CodeSample>, PipelineError> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        #[derive(Deserialize)]
        struct Input {
            id: serde_json::Value,
            code: String,
        }
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let r: Input = serde_json::from_str(l).map_err(|e| data_err(path, format!("line {}: {e}", i + 1)))?;
                let id = match r.id {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                Ok(CodeSample { id, code: r.code, label: 0 })
            })
            .collect()
    } else {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(vec![CodeSample { id, code: text, label: 0 }])
    }
}

pub fn cmd_predict(
    checkpoint: &Path,
    prepared: &Path,
    input: &Path,
    log: &mut dyn Write,
) -> Result<Vec<PredictionLine>, PipelineError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let data = load_prepared(prepared)?;
    check_vocab(&ckpt, &data)?;
    let inputs = read_inputs(input)?;
    let samples = prepare_samples(&inputs, &data.code_vocab, &data.structure_vocab, &data.config, None)?;
    let preds: Vec<Prediction> = predict(&ckpt, &samples)?;
    let lines: Vec<PredictionLine> = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| PredictionLine {
            id: s.id.clone(),
            label: p.label,
            p_safe: p.probs[0],
            p_vulnerable: p.probs[1],
        })
        .collect();
    for l in &lines {
        say(log, serde_json::to_string(l).expect("serializable"));
    }
    Ok(lines)
}

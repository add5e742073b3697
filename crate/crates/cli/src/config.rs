//! Resolved run settings. Every setting has a flat dotted key; a config
//! file is a JSON object of such keys, and flags are applied on top.

use std::collections::BTreeMap;
use std::path::Path;

use vulndistill::evaluation::ReportFormat;
use vulndistill::frontend::StructureMode;
use vulndistill::models::{StudentConfig, TeacherAConfig, TeacherBConfig};
use vulndistill::training::{Ablation, DistillationWeights, PrepareConfig, TrainConfig};

use crate::PipelineError;

pub const SEED_ENV: &str = "SAFE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub structure: StructureMode,
    pub format: ReportFormat,
    pub corpus_n: usize,
    pub corpus_ratio: f64,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub window: usize,
    pub max_structure_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ablation: Ablation,
    pub gamma: f64,
    pub kappa: f64,
    pub temperature: f64,
    pub teacher_a: TeacherAConfig,
    pub teacher_b: TeacherBConfig,
    pub student: StudentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PrepareConfig::default();
        let t = TrainConfig::default();
        Self {
            seed: t.seed,
            structure: p.structure_mode,
            format: ReportFormat::Json,
            corpus_n: 2000,
            corpus_ratio: 0.3,
            vocab_size: p.vocab_size,
            seq_len: p.seq_len,
            window: p.window,
            max_structure_len: p.max_structure_len,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.learning_rate,
            ablation: t.ablation,
            gamma: 0.5,
            kappa: 0.5,
            temperature: 1.0,
            teacher_a: TeacherAConfig::new(0),
            teacher_b: TeacherBConfig::new(0),
            student: StudentConfig::new(0),
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_flat`] lists them.
pub const KEYS: &[&str] = &[
    "seed",
    "structure",
    "format",
    "corpus.n",
    "corpus.ratio",
    "prepare.vocab_size",
    "prepare.seq_len",
    "prepare.window",
    "prepare.max_structure_len",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.ablation",
    "distill.gamma",
    "distill.kappa",
    "distill.temperature",
    "teacher_a.embed_dim",
    "teacher_a.filters_per_width",
    "teacher_a.dropout",
    "teacher_b.embed_dim",
    "teacher_b.hidden_dim",
    "teacher_b.gnn_layers",
    "teacher_b.dropout",
    "student.embed_dim",
    "student.layers",
    "student.heads",
    "student.ffn_dim",
    "student.dropout",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| PipelineError::Usage(format!("bad value {value:?} for {key}: {e}")))
}

impl RunConfig {
    /// Defaults, then the config file, then `SAFE_SEED` if the file left the
    /// seed unset, then flag overrides.
    pub fn resolve(
        config_file: Option<&Path>,
        env_seed: Option<&str>,
        overrides: &[(&str, String)],
    ) -> Result<Self, PipelineError> {
        let mut rc = Self::default();
        let mut seed_from_file = false;
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (key, value) in parse_config_json(&text)? {
                seed_from_file |= key == "seed";
                rc.set(&key, &value)?;
            }
        }
        if let (false, Some(s)) = (seed_from_file, env_seed) {
            rc.seed = parse(SEED_ENV, s)?;
        }
        for (key, value) in overrides {
            rc.set(key, value)?;
        }
        rc.validate()?;
        Ok(rc)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), PipelineError> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "structure" => self.structure = parse(key, v)?,
            "format" => self.format = parse(key, v)?,
            "corpus.n" => self.corpus_n = parse(key, v)?,
            "corpus.ratio" => self.corpus_ratio = parse(key, v)?,
            "prepare.vocab_size" => self.vocab_size = parse(key, v)?,
            "prepare.seq_len" => self.seq_len = parse(key, v)?,
            "prepare.window" => self.window = parse(key, v)?,
            "prepare.max_structure_len" => self.max_structure_len = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.ablation" => self.ablation = parse(key, v)?,
            "distill.gamma" => self.gamma = parse(key, v)?,
            "distill.kappa" => self.kappa = parse(key, v)?,
            "distill.temperature" => self.temperature = parse(key, v)?,
            "teacher_a.embed_dim" => self.teacher_a.embed_dim = parse(key, v)?,
            "teacher_a.filters_per_width" => self.teacher_a.filters_per_width = parse(key, v)?,
            "teacher_a.dropout" => self.teacher_a.dropout_rate = parse(key, v)?,
            "teacher_b.embed_dim" => self.teacher_b.embed_dim = parse(key, v)?,
            "teacher_b.hidden_dim" => self.teacher_b.hidden_dim = parse(key, v)?,
            "teacher_b.gnn_layers" => self.teacher_b.gnn_layers = parse(key, v)?,
            "teacher_b.dropout" => self.teacher_b.dropout_rate = parse(key, v)?,
            "student.embed_dim" => self.student.embed_dim = parse(key, v)?,
            "student.layers" => self.student.layers = parse(key, v)?,
            "student.heads" => self.student.heads = parse(key, v)?,
            "student.ffn_dim" => self.student.ffn_dim = parse(key, v)?,
            "student.dropout" => self.student.dropout_rate = parse(key, v)?,
            _ => return Err(PipelineError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.prepare_config().validate()?;
        self.train_config().validate()?;
        self.weights()?;
        Ok(())
    }

    /// All settings as strings under their keys; feeding this map back as
    /// a config file reproduces `self`.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let values: Vec<String> = vec![
            self.seed.to_string(),
            self.structure.to_string(),
            self.format.extension().to_string(),
            self.corpus_n.to_string(),
            self.corpus_ratio.to_string(),
            self.vocab_size.to_string(),
            self.seq_len.to_string(),
            self.window.to_string(),
            self.max_structure_len.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.lr.to_string(),
            self.ablation.to_string(),
            self.gamma.to_string(),
            self.kappa.to_string(),
            self.temperature.to_string(),
            self.teacher_a.embed_dim.to_string(),
            self.teacher_a.filters_per_width.to_string(),
            self.teacher_a.dropout_rate.to_string(),
            self.teacher_b.embed_dim.to_string(),
            self.teacher_b.hidden_dim.to_string(),
            self.teacher_b.gnn_layers.to_string(),
            self.teacher_b.dropout_rate.to_string(),
            self.student.embed_dim.to_string(),
            self.student.layers.to_string(),
            self.student.heads.to_string(),
            self.student.ffn_dim.to_string(),
            self.student.dropout_rate.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn prepare_config(&self) -> PrepareConfig {
        PrepareConfig {
            vocab_size: self.vocab_size,
            seq_len: self.seq_len,
            structure_mode: self.structure,
            window: self.window,
            max_structure_len: self.max_structure_len,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed: self.seed,
            ablation: self.ablation,
            structure_mode: self.structure,
        }
    }

    pub fn weights(&self) -> Result<DistillationWeights, PipelineError> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(PipelineError::Usage(format!("kappa {} outside [0, 1]", self.kappa)));
        }
        Ok(DistillationWeights::from_gamma_kappa(self.gamma, self.kappa, self.temperature)?)
    }
}

/// A flat JSON object; values may be strings, numbers or booleans.
fn parse_config_json(text: &str) -> Result<Vec<(String, String)>, PipelineError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PipelineError::Usage(format!("config is not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| PipelineError::Usage("config must be a JSON object of dotted keys".into()))?;
    obj.iter()
        .map(|(k, v)| {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                _ => return Err(PipelineError::Usage(format!("config key {k:?} must hold a scalar"))),
            };
            Ok((k.clone(), s))
        })
        .collect()
}

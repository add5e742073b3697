use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpusgen::{CodeSample, Dataset};
use crate::frontend::{lex, parse, structure_sequence_from_ast, AstNode, StructureMode};
use crate::graphs::{build_token_graph, TokenGraph, DEFAULT_WINDOW};
use crate::tokenizer::{assemble, encode, train_bpe, TokenSequence, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    /// Target size of each of the two vocabularies.
    pub vocab_size: usize,
    /// Student sequence length `l`.
    pub seq_len: usize,
    pub structure_mode: StructureMode,
    /// Co-occurrence window of the token graph.
    pub window: usize,
    /// Structure ids beyond this are dropped before graph building.
    pub max_structure_len: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            seq_len: 512,
            structure_mode: StructureMode::Ast,
            window: DEFAULT_WINDOW,
            max_structure_len: 512,
        }
    }
}

impl PrepareConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.seq_len < 5 {
            return Err(TrainError::Config(format!("seq_len {} below 5", self.seq_len)));
        }
        if self.window < 2 {
            return Err(TrainError::Config(format!("window {} below 2", self.window)));
        }
        if self.max_structure_len == 0 {
            return Err(TrainError::Config("max_structure_len must be positive".into()));
        }
        Ok(())
    }
}

/// One sample in every input form the three models consume.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub label: u8,
    /// Code ids truncated to `seq_len - 4`; teacher A sees exactly the
    /// student's body.
    pub code_ids: Vec<u32>,
    pub sequence: TokenSequence,
    /// Structure-vocabulary ids, truncated to `max_structure_len`.
    pub structure_ids: Vec<u32>,
    pub graph: TokenGraph,
}

impl PreparedSample {
    /// Rebuilds the derived forms from stored ids.
    pub fn from_ids(
        id: String,
        label: u8,
        code_ids: Vec<u32>,
        structure_ids: Vec<u32>,
        cfg: &PrepareConfig,
    ) -> Result<Self, TrainError> {
        let mut code_ids = code_ids;
        code_ids.truncate(cfg.seq_len.saturating_sub(4));
        let mut structure_ids = structure_ids;
        structure_ids.truncate(cfg.max_structure_len);
        let sequence = assemble(&code_ids, cfg.seq_len)?;
        let graph = build_token_graph(&structure_ids, cfg.window)?;
        Ok(Self {
            id,
            label,
            code_ids,
            sequence,
            structure_ids,
            graph,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub dataset: String,
    pub config: PrepareConfig,
    pub code_vocab: Vocab,
    pub structure_vocab: Vocab,
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
}

impl PreparedData {
    pub fn split(&self, name: &str) -> Option<&[PreparedSample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Externally produced trees keyed by sample id; samples without an entry
/// are parsed from their code.
pub type AstOverrides = HashMap<String, AstNode>;

fn tree_of(sample: &CodeSample, overrides: Option<&AstOverrides>) -> AstNode {
    overrides
        .and_then(|o| o.get(&sample.id).cloned())
        .unwrap_or_else(|| parse(&lex(&sample.code)))
}

/// Trains both vocabularies on the training split and encodes every split.
pub fn prepare(data: &Dataset, cfg: &PrepareConfig, overrides: Option<&AstOverrides>) -> Result<PreparedData, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let lines = |split: &[CodeSample]| -> Vec<String> {
        split
            .iter()
            .map(|s| structure_sequence_from_ast(&tree_of(s, overrides), cfg.structure_mode).to_line())
            .collect()
    };
    let train_lines = lines(&data.train);
    let codes: Vec<&str> = data.train.iter().map(|s| s.code.as_str()).collect();
    let code_vocab = train_bpe(&codes, cfg.vocab_size)?;
    let structure_vocab = train_bpe(&train_lines, cfg.vocab_size)?;

    let encode_split = |split: &[CodeSample], lines: &[String]| -> Result<Vec<PreparedSample>, TrainError> {
        split
            .iter()
            .zip(lines)
            .map(|(s, line)| {
                PreparedSample::from_ids(
                    s.id.clone(),
                    s.label,
                    encode(&code_vocab, &s.code),
                    encode(&structure_vocab, line),
                    cfg,
                )
            })
            .collect()
    };
    let train = encode_split(&data.train, &train_lines)?;
    let val = encode_split(&data.val, &lines(&data.val))?;
    let test = encode_split(&data.test, &lines(&data.test))?;
    Ok(PreparedData {
        dataset: data.name.clone(),
        config: cfg.clone(),
        code_vocab,
        structure_vocab,
        train,
        val,
        test,
    })
}

/// Encodes new samples with already trained vocabularies.
pub fn prepare_samples(
    samples: &[CodeSample],
    code_vocab: &Vocab,
    structure_vocab: &Vocab,
    cfg: &PrepareConfig,
    overrides: Option<&AstOverrides>,
) -> Result<Vec<PreparedSample>, TrainError> {
    cfg.validate()?;
    samples
        .iter()
        .map(|s| {
            let line = structure_sequence_from_ast(&tree_of(s, overrides), cfg.structure_mode).to_line();
            PreparedSample::from_ids(
                s.id.clone(),
                s.label,
                encode(code_vocab, &s.code),
                encode(structure_vocab, &line),
                cfg,
            )
        })
        .collect()
}

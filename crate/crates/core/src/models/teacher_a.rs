use serde::{Deserialize, Serialize};

use super::layout::{bind, Ids, Init, ParamSpec};
use super::{ModelError, ModelRng, NUM_CLASSES};
use crate::numerics::{Axis, ParamId, ParamStore, Tape, Var};
use crate::tokenizer::PAD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherAConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub dropout_rate: f64,
}

impl TeacherAConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            filter_widths: vec![3, 4, 5],
            filters_per_width: 32,
            dropout_rate: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.filters_per_width == 0 {
            return Err(ModelError::Config("teacher A dimensions must be positive".into()));
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(ModelError::Config("teacher A needs filter widths >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (d, f) = (self.embed_dim, self.filters_per_width);
        let mut specs = vec![ParamSpec::new("embed", &[self.vocab_size, d], Init::Normal(0.1))];
        for &w in &self.filter_widths {
            specs.push(ParamSpec::new(format!("conv{w}.w"), &[w * d, f], Init::Xavier));
            specs.push(ParamSpec::new(format!("conv{w}.b"), &[f], Init::Zeros));
        }
        let feat = f * self.filter_widths.len();
        specs.push(ParamSpec::new("out.w", &[feat, NUM_CLASSES], Init::Xavier));
        specs.push(ParamSpec::new("out.b", &[NUM_CLASSES], Init::Zeros));
        specs
    }

    fn max_width(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }
}

/// Embedding, parallel 1-D convolutions, tanh, max-over-time, concatenation,
/// dropout and an affine map to two logits.
#[derive(Debug, Clone)]
pub struct TeacherA {
    cfg: TeacherAConfig,
    embed: ParamId,
    convs: Vec<(usize, ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

impl TeacherA {
    pub fn bind(cfg: &TeacherAConfig, store: &ParamStore) -> Result<Self, ModelError> {
        cfg.validate()?;
        let ids = Ids(bind(&cfg.param_specs(), store)?);
        Ok(Self {
            cfg: cfg.clone(),
            embed: ids.get("embed"),
            convs: cfg
                .filter_widths
                .iter()
                .map(|&w| (w, ids.get(&format!("conv{w}.w")), ids.get(&format!("conv{w}.b"))))
                .collect(),
            out_w: ids.get("out.w"),
            out_b: ids.get("out.b"),
        })
    }

    pub fn config(&self) -> &TeacherAConfig {
        &self.cfg
    }

    /// Pooled features `[1, filters * widths]` for one id sequence, padded
    /// with `[pad]` up to the widest filter.
    fn features(&self, tape: &mut Tape, table: Var, ids: &[u32]) -> Result<Var, ModelError> {
        let mut rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.cfg.vocab_size) {
            return Err(ModelError::Input(format!("token id {bad} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        while rows.len() < self.cfg.max_width() {
            rows.push(PAD as usize);
        }
        let x = tape.gather(table, &rows)?;
        let mut pooled = Vec::with_capacity(self.convs.len());
        for &(w, cw, cb) in &self.convs {
            let (cw, cb) = (tape.param(cw), tape.param(cb));
            let c = tape.conv1d(x, cw, cb, w)?;
            let c = tape.tanh(c)?;
            pooled.push(tape.max_rows(c)?);
        }
        let cat = tape.concat(&pooled, Axis::Last)?;
        let n = tape.shape(cat)[0];
        Ok(tape.reshape(cat, vec![1, n])?)
    }

    /// Logits `[B, 2]` for a batch of id sequences. Dropout is applied only
    /// when `rng` is given.
    pub fn forward(&self, tape: &mut Tape, batch: &[&[u32]], rng: Option<&mut ModelRng>) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        let table = tape.param(self.embed);
        let rows = batch
            .iter()
            .map(|ids| self.features(tape, table, ids))
            .collect::<Result<Vec<_>, _>>()?;
        let mut h = tape.concat(&rows, Axis::Rows)?;
        if let Some(rng) = rng {
            h = tape.dropout(h, self.cfg.dropout_rate, rng)?;
        }
        let (w, b) = (tape.param(self.out_w), tape.param(self.out_b));
        Ok(tape.linear(h, w, b)?)
    }
}

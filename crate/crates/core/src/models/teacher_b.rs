use serde::{Deserialize, Serialize};

use super::layout::{bind, Ids, Init, ParamSpec};
use super::{ModelError, ModelRng, NUM_CLASSES};
use crate::graphs::{TokenGraph, DEFAULT_WINDOW};
use crate::numerics::{Axis, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// `[mean; max]` over nodes.
    #[default]
    MeanMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherBConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub gnn_layers: usize,
    pub hidden_dim: usize,
    pub readout: Readout,
    pub window: usize,
    pub dropout_rate: f64,
}

impl TeacherBConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            gnn_layers: 2,
            hidden_dim: 32,
            readout: Readout::MeanMax,
            window: DEFAULT_WINDOW,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::Config("teacher B dimensions must be positive".into()));
        }
        if self.gnn_layers == 0 {
            return Err(ModelError::Config("teacher B needs at least one layer".into()));
        }
        if self.window < 2 {
            return Err(ModelError::Config(format!("graph window {} below 2", self.window)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    fn projects(&self) -> bool {
        self.embed_dim != self.hidden_dim
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let h = self.hidden_dim;
        let mut specs = vec![ParamSpec::new("embed", &[self.vocab_size, self.embed_dim], Init::Normal(0.1))];
        if self.projects() {
            specs.push(ParamSpec::new("proj.w", &[self.embed_dim, h], Init::Xavier));
            specs.push(ParamSpec::new("proj.b", &[h], Init::Zeros));
        }
        for i in 0..self.gnn_layers {
            specs.push(ParamSpec::new(format!("gnn{i}.w"), &[h, h], Init::Xavier));
        }
        specs.push(ParamSpec::new("out.w", &[2 * h, NUM_CLASSES], Init::Xavier));
        specs.push(ParamSpec::new("out.b", &[NUM_CLASSES], Init::Zeros));
        specs
    }
}

/// Graph network over token co-occurrence graphs: per layer
/// `H <- relu(Â H W + H)`, then `[mean; max]` readout and an affine map.
#[derive(Debug, Clone)]
pub struct TeacherB {
    cfg: TeacherBConfig,
    embed: ParamId,
    proj: Option<(ParamId, ParamId)>,
    layers: Vec<ParamId>,
    out_w: ParamId,
    out_b: ParamId,
}

impl TeacherB {
    pub fn bind(cfg: &TeacherBConfig, store: &ParamStore) -> Result<Self, ModelError> {
        cfg.validate()?;
        let ids = Ids(bind(&cfg.param_specs(), store)?);
        Ok(Self {
            cfg: cfg.clone(),
            embed: ids.get("embed"),
            proj: cfg.projects().then(|| (ids.get("proj.w"), ids.get("proj.b"))),
            layers: (0..cfg.gnn_layers).map(|i| ids.get(&format!("gnn{i}.w"))).collect(),
            out_w: ids.get("out.w"),
            out_b: ids.get("out.b"),
        })
    }

    pub fn config(&self) -> &TeacherBConfig {
        &self.cfg
    }

    /// Readout `[1, 2 * hidden]` for one graph; an empty graph reads out
    /// zeros.
    fn readout(&self, tape: &mut Tape, table: Var, g: &TokenGraph) -> Result<Var, ModelError> {
        let h = self.cfg.hidden_dim;
        if g.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[1, 2 * h])));
        }
        let rows: Vec<usize> = g.feature_init().iter().map(|&i| i as usize).collect();
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.cfg.vocab_size) {
            return Err(ModelError::Input(format!("token id {bad} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        let mut x = tape.gather(table, &rows)?;
        if let Some((pw, pb)) = self.proj {
            let (pw, pb) = (tape.param(pw), tape.param(pb));
            x = tape.linear(x, pw, pb)?;
        }
        let a = tape.constant(g.normalized_adjacency());
        for &w in &self.layers {
            let w = tape.param(w);
            let ax = tape.matmul(a, x)?;
            let axw = tape.matmul(ax, w)?;
            let s = tape.add(axw, x)?;
            x = tape.relu(s)?;
        }
        let mean = tape.mean_rows(x)?;
        let max = tape.max_rows(x)?;
        let cat = tape.concat(&[mean, max], Axis::Last)?;
        Ok(tape.reshape(cat, vec![1, 2 * h])?)
    }

    /// Logits `[B, 2]` for a batch of graphs.
    pub fn forward(&self, tape: &mut Tape, batch: &[&TokenGraph], rng: Option<&mut ModelRng>) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        let table = tape.param(self.embed);
        let rows = batch
            .iter()
            .map(|g| self.readout(tape, table, g))
            .collect::<Result<Vec<_>, _>>()?;
        let mut h = tape.concat(&rows, Axis::Rows)?;
        if let Some(rng) = rng {
            h = tape.dropout(h, self.cfg.dropout_rate, rng)?;
        }
        let (w, b) = (tape.param(self.out_w), tape.param(self.out_b));
        Ok(tape.linear(h, w, b)?)
    }
}

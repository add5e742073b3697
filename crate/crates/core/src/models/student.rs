use serde::{Deserialize, Serialize};

use super::layout::{bind, Ids, Init, ParamSpec};
use super::{ModelError, ModelRng, NUM_CLASSES};
use crate::numerics::{Axis, ParamId, ParamStore, Tape, Tensor, Var};
use crate::tokenizer::TokenSequence;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub seq_len: usize,
    pub dropout_rate: f64,
}

impl StudentConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            layers: 4,
            heads: 4,
            ffn_dim: 128,
            seq_len: 512,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(ModelError::Config("student dimensions must be positive".into()));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.seq_len < 5 {
            return Err(ModelError::Config(format!("seq_len {} below 5", self.seq_len)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (d, f) = (self.embed_dim, self.ffn_dim);
        let mut specs = vec![
            ParamSpec::new("tok_embed", &[self.vocab_size, d], Init::Normal(0.1)),
            ParamSpec::new("pos_embed", &[self.seq_len, d], Init::Normal(0.1)),
        ];
        for i in 0..self.layers {
            let p = |s: &str| format!("layer{i}.{s}");
            for m in ["q", "k", "v", "o"] {
                specs.push(ParamSpec::new(p(&format!("w{m}")), &[d, d], Init::Xavier));
                specs.push(ParamSpec::new(p(&format!("b{m}")), &[d], Init::Zeros));
            }
            specs.push(ParamSpec::new(p("ln1.g"), &[d], Init::Ones));
            specs.push(ParamSpec::new(p("ln1.b"), &[d], Init::Zeros));
            specs.push(ParamSpec::new(p("ffn.w1"), &[d, f], Init::Xavier));
            specs.push(ParamSpec::new(p("ffn.b1"), &[f], Init::Zeros));
            specs.push(ParamSpec::new(p("ffn.w2"), &[f, d], Init::Xavier));
            specs.push(ParamSpec::new(p("ffn.b2"), &[d], Init::Zeros));
            specs.push(ParamSpec::new(p("ln2.g"), &[d], Init::Ones));
            specs.push(ParamSpec::new(p("ln2.b"), &[d], Init::Zeros));
        }
        for head in ["cls", "dia", "dib"] {
            specs.push(ParamSpec::new(format!("head.{head}.w"), &[d, NUM_CLASSES], Init::Xavier));
            specs.push(ParamSpec::new(format!("head.{head}.b"), &[NUM_CLASSES], Init::Zeros));
        }
        specs
    }
}

/// How pad positions are kept out of attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Attention {
    /// Only the first `attn_len` positions are computed at all.
    #[default]
    Compact,
    /// All `seq_len` positions are computed and pad keys get a `-inf` score.
    Masked,
}

#[derive(Debug, Clone)]
struct Layer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct StudentOutputs {
    /// `[B, 2]` logits of each head.
    pub cls: Var,
    pub dia: Var,
    pub dib: Var,
    /// Attention weights per layer, per sample, per head.
    pub attention: Vec<Var>,
}

/// Post-norm transformer encoder with learned positions and affine heads at
/// the `[cls]`, `[dia]` and `[dib]` positions.
#[derive(Debug, Clone)]
pub struct Student {
    cfg: StudentConfig,
    tok: ParamId,
    pos: ParamId,
    layers: Vec<Layer>,
    heads: [(ParamId, ParamId); 3],
}

impl Student {
    pub fn bind(cfg: &StudentConfig, store: &ParamStore) -> Result<Self, ModelError> {
        cfg.validate()?;
        let ids = Ids(bind(&cfg.param_specs(), store)?);
        let layers = (0..cfg.layers)
            .map(|i| {
                let g = |s: &str| ids.get(&format!("layer{i}.{s}"));
                Layer {
                    wq: g("wq"),
                    bq: g("bq"),
                    wk: g("wk"),
                    bk: g("bk"),
                    wv: g("wv"),
                    bv: g("bv"),
                    wo: g("wo"),
                    bo: g("bo"),
                    ln1: (g("ln1.g"), g("ln1.b")),
                    w1: g("ffn.w1"),
                    b1: g("ffn.b1"),
                    w2: g("ffn.w2"),
                    b2: g("ffn.b2"),
                    ln2: (g("ln2.g"), g("ln2.b")),
                }
            })
            .collect();
        let head = |h: &str| (ids.get(&format!("head.{h}.w")), ids.get(&format!("head.{h}.b")));
        Ok(Self {
            cfg: cfg.clone(),
            tok: ids.get("tok_embed"),
            pos: ids.get("pos_embed"),
            layers,
            heads: [head("cls"), head("dia"), head("dib")],
        })
    }

    pub fn config(&self) -> &StudentConfig {
        &self.cfg
    }

    /// Names of the parameters of one output head (`"cls"`, `"dia"`,
    /// `"dib"`).
    pub fn head_param_names(head: &str) -> [String; 2] {
        [format!("head.{head}.w"), format!("head.{head}.b")]
    }

    fn check(&self, s: &TokenSequence) -> Result<(), ModelError> {
        let l = self.cfg.seq_len;
        if s.ids.len() != l {
            return Err(ModelError::Input(format!("sequence length {} differs from seq_len {l}", s.ids.len())));
        }
        if s.attn_len > l || s.attn_len == 0 {
            return Err(ModelError::Input(format!("attn_len {} outside 1..={l}", s.attn_len)));
        }
        for (what, p) in [("cls", s.cls_pos), ("dia", s.dia_pos), ("dib", s.dib_pos), ("sep", s.sep_pos)] {
            if p >= s.attn_len {
                return Err(ModelError::Input(format!("{what} position {p} outside attended length {}", s.attn_len)));
            }
        }
        if let Some(&bad) = s.ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(ModelError::Input(format!("token id {bad} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &[&TokenSequence],
        attention: Attention,
        mut rng: Option<&mut ModelRng>,
    ) -> Result<StudentOutputs, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        for s in batch {
            self.check(s)?;
        }
        let (d, nh) = (self.cfg.embed_dim, self.cfg.heads);
        let dk = d / nh;
        let rate = self.cfg.dropout_rate;

        let mut spans = Vec::with_capacity(batch.len());
        let (mut tok_rows, mut pos_rows) = (Vec::new(), Vec::new());
        for s in batch {
            let n = match attention {
                Attention::Compact => s.attn_len,
                Attention::Masked => self.cfg.seq_len,
            };
            spans.push((tok_rows.len(), n));
            tok_rows.extend(s.ids[..n].iter().map(|&i| i as usize));
            pos_rows.extend(0..n);
        }
        let masks: Vec<Option<Var>> = batch
            .iter()
            .zip(&spans)
            .map(|(s, &(_, n))| {
                (attention == Attention::Masked).then(|| {
                    let mut m = vec![0.0; n * n];
                    for row in m.chunks_mut(n) {
                        row[s.attn_len..].fill(f64::NEG_INFINITY);
                    }
                    tape.constant(Tensor::new(vec![n, n], m).expect("square mask"))
                })
            })
            .collect();

        let tok = tape.param(self.tok);
        let pos = tape.param(self.pos);
        let e = tape.gather(tok, &tok_rows)?;
        let p = tape.gather(pos, &pos_rows)?;
        let mut h = tape.add(e, p)?;
        if let Some(r) = rng.as_deref_mut() {
            h = tape.dropout(h, rate, r)?;
        }

        let scale = 1.0 / (dk as f64).sqrt();
        let mut maps = Vec::new();
        for layer in &self.layers {
            let proj = |w: ParamId, b: ParamId, tape: &mut Tape, x: Var| -> Result<Var, ModelError> {
                let (w, b) = (tape.param(w), tape.param(b));
                Ok(tape.linear(x, w, b)?)
            };
            let q = proj(layer.wq, layer.bq, tape, h)?;
            let k = proj(layer.wk, layer.bk, tape, h)?;
            let v = proj(layer.wv, layer.bv, tape, h)?;
            let mut ctxs = Vec::with_capacity(batch.len());
            for (&(off, n), mask) in spans.iter().zip(&masks) {
                let (qs, ks, vs) = if batch.len() == 1 {
                    (q, k, v)
                } else {
                    let rows: Vec<usize> = (off..off + n).collect();
                    (tape.gather(q, &rows)?, tape.gather(k, &rows)?, tape.gather(v, &rows)?)
                };
                let mut heads = Vec::with_capacity(nh);
                for hd in 0..nh {
                    let qh = tape.slice_last(qs, hd * dk, dk)?;
                    let kh = tape.slice_last(ks, hd * dk, dk)?;
                    let vh = tape.slice_last(vs, hd * dk, dk)?;
                    let kt = tape.transpose(kh)?;
                    let sc = tape.matmul(qh, kt)?;
                    let mut sc = tape.scale(sc, scale)?;
                    if let Some(m) = *mask {
                        sc = tape.add(sc, m)?;
                    }
                    let a = tape.softmax_t(sc, 1.0)?;
                    maps.push(a);
                    heads.push(tape.matmul(a, vh)?);
                }
                ctxs.push(if nh == 1 { heads[0] } else { tape.concat(&heads, Axis::Last)? });
            }
            let ctx = if ctxs.len() == 1 { ctxs[0] } else { tape.concat(&ctxs, Axis::Rows)? };
            let mut o = proj(layer.wo, layer.bo, tape, ctx)?;
            if let Some(r) = rng.as_deref_mut() {
                o = tape.dropout(o, rate, r)?;
            }
            let res = tape.add(o, h)?;
            let (g1, b1) = (tape.param(layer.ln1.0), tape.param(layer.ln1.1));
            let m = tape.layer_norm(res, g1, b1, LN_EPS)?;

            let f = proj(layer.w1, layer.b1, tape, m)?;
            let f = tape.relu(f)?;
            let mut f = proj(layer.w2, layer.b2, tape, f)?;
            if let Some(r) = rng.as_deref_mut() {
                f = tape.dropout(f, rate, r)?;
            }
            let res = tape.add(f, m)?;
            let (g2, b2) = (tape.param(layer.ln2.0), tape.param(layer.ln2.1));
            h = tape.layer_norm(res, g2, b2, LN_EPS)?;
        }

        let mut outs = [h; 3];
        let picks: [fn(&TokenSequence) -> usize; 3] = [|s| s.cls_pos, |s| s.dia_pos, |s| s.dib_pos];
        for ((out, &(w, b)), pick) in outs.iter_mut().zip(&self.heads).zip(picks) {
            let rows: Vec<usize> = batch.iter().zip(&spans).map(|(s, &(off, _))| off + pick(s)).collect();
            let x = tape.gather(h, &rows)?;
            let (w, b) = (tape.param(w), tape.param(b));
            *out = tape.linear(x, w, b)?;
        }
        Ok(StudentOutputs {
            cls: outs[0],
            dia: outs[1],
            dib: outs[2],
            attention: maps,
        })
    }
}

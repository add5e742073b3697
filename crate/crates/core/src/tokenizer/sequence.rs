use serde::{Deserialize, Serialize};

use super::{TokenizerError, CLS, DIA, DIB, PAD, SEP};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub cls_pos: usize,
    pub dia_pos: usize,
    pub dib_pos: usize,
    pub sep_pos: usize,
    pub attn_len: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids of the body between `[cls]` and `[dia]`.
    pub fn body(&self) -> &[u32] {
        &self.ids[self.cls_pos + 1..self.dia_pos]
    }
}

/// Lays out `[cls] body [dia] [dib] [sep]` and pads to `l`, truncating the
/// body to `l - 4` ids.
pub fn assemble(body_ids: &[u32], l: usize) -> Result<TokenSequence, TokenizerError> {
    if l < 5 {
        return Err(TokenizerError::SeqLenTooShort(l));
    }
    let body = &body_ids[..body_ids.len().min(l - 4)];
    let mut ids = Vec::with_capacity(l);
    ids.push(CLS);
    ids.extend_from_slice(body);
    ids.extend_from_slice(&[DIA, DIB, SEP]);
    let attn_len = ids.len();
    ids.resize(l, PAD);
    Ok(TokenSequence {
        ids,
        cls_pos: 0,
        dia_pos: attn_len - 3,
        dib_pos: attn_len - 2,
        sep_pos: attn_len - 1,
        attn_len,
    })
}

//! Character-level byte-pair encoding with reserved special tokens, plus the
//! fixed-length `[cls] body [dia] [dib] [sep] [pad]...` layout.

mod bpe;
mod sequence;

pub use bpe::{decode, encode, pre_split, train_bpe, Vocab};
pub use sequence::{assemble, TokenSequence};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const DIA: u32 = 3;
pub const DIB: u32 = 4;
pub const UNK: u32 = 5;
pub const NUM_SPECIALS: u32 = 6;

pub const SPECIAL_NAMES: [&str; 6] = ["[pad]", "[cls]", "[sep]", "[dia]", "[dib]", "[unk]"];

pub const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("vocab_size {requested} is below the {minimum} ids needed for specials and the alphabet")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("sequence length {0} is below the minimum of 5")]
    SeqLenTooShort(usize),
    #[error("unsupported vocabulary version {0}")]
    Version(u32),
    #[error("malformed vocabulary: {0}")]
    Malformed(String),
}

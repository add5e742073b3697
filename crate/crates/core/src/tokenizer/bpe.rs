use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

type Pair = (String, String);

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TokenizerError, NUM_SPECIALS, SPECIAL_NAMES, UNK, VOCAB_VERSION};

/// Trained vocabulary. Ids: specials `0..6`, then the alphabet in sorted
/// order, then each merge result in merge order (skipping strings already
/// present).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    id_of: HashMap<String, u32>,
    tokens: Vec<String>,
    ranks: HashMap<(String, String), usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    specials: BTreeMap<String, u32>,
    alphabet: Vec<String>,
    merges: Vec<[String; 2]>,
}

impl Vocab {
    fn build(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Self {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut id_of = HashMap::new();
        let push = |s: String, tokens: &mut Vec<String>, id_of: &mut HashMap<String, u32>| {
            if !id_of.contains_key(&s) {
                id_of.insert(s.clone(), tokens.len() as u32);
                tokens.push(s);
            }
        };
        for c in &alphabet {
            push(c.to_string(), &mut tokens, &mut id_of);
        }
        for (a, b) in &merges {
            push(format!("{a}{b}"), &mut tokens, &mut id_of);
        }
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Self {
            alphabet,
            merges,
            id_of,
            tokens,
            ranks,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        SPECIAL_NAMES
            .iter()
            .position(|s| *s == token)
            .map(|i| i as u32)
            .or_else(|| self.id_of.get(token).copied())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: VOCAB_VERSION,
            specials: SPECIAL_NAMES.iter().enumerate().map(|(i, s)| (s.to_string(), i as u32)).collect(),
            alphabet: self.alphabet.iter().map(|c| c.to_string()).collect(),
            merges: self.merges.iter().map(|(a, b)| [a.clone(), b.clone()]).collect(),
        };
        serde_json::to_string(&file).expect("vocab serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, TokenizerError> {
        let file: VocabFile = serde_json::from_str(json).map_err(|e| TokenizerError::Malformed(e.to_string()))?;
        if file.version != VOCAB_VERSION {
            return Err(TokenizerError::Version(file.version));
        }
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            if file.specials.get(*name) != Some(&(i as u32)) {
                return Err(TokenizerError::Malformed(format!("special {name} must have id {i}")));
            }
        }
        let mut alphabet = Vec::with_capacity(file.alphabet.len());
        for s in &file.alphabet {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => alphabet.push(c),
                _ => return Err(TokenizerError::Malformed(format!("alphabet entry {s:?} is not one character"))),
            }
        }
        let merges = file.merges.into_iter().map(|[a, b]| (a, b)).collect();
        Ok(Self::build(alphabet, merges))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Splits `word` into symbols by replaying merges, lowest rank first.
    fn segment(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == a && &syms[i + 1] == b {
                    out.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }
}

/// Words are a (possibly empty) run of whitespace followed by a run of
/// non-whitespace, so concatenating the words gives back the text.
pub fn pre_split(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    let mut start = 0;
    let mut seen_body = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() && seen_body {
            words.push(&text[start..i]);
            start = i;
            seen_body = false;
        } else if !c.is_whitespace() {
            seen_body = true;
        }
    }
    if start < text.len() {
        words.push(&text[start..]);
    }
    words
}

/// Greedy BPE: repeatedly merge the most frequent adjacent pair (ties to the
/// lexicographically smallest pair) until `vocab_size` ids exist or no pair
/// occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Vocab, TokenizerError> {
    if corpus.iter().all(|s| s.as_ref().is_empty()) {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for text in corpus {
        for w in pre_split(text.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut alphabet: Vec<char> = counts.keys().flat_map(|w| w.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    let minimum = NUM_SPECIALS as usize + alphabet.len();
    if vocab_size < minimum {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            minimum,
        });
    }

    let mut words: Vec<(Vec<String>, u64)> =
        counts.into_iter().map(|(w, n)| (w.chars().map(String::from).collect(), n)).collect();

    // Pair counts, the words each pair occurs in, and a max-heap keyed by
    // (count, reversed pair) whose stale entries are skipped on pop.
    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, (syms, n)) in words.iter().enumerate() {
        for w in syms.windows(2) {
            let p = (w[0].clone(), w[1].clone());
            *pair_counts.entry(p.clone()).or_default() += n;
            where_.entry(p).or_default().insert(wi);
        }
    }
    let mut heap: BinaryHeap<(u64, Reverse<Pair>)> =
        pair_counts.iter().map(|(p, &c)| (c, Reverse(p.clone()))).collect();

    let mut merges = Vec::new();
    let mut size = minimum;
    let mut known: HashSet<String> = alphabet.iter().map(|c| c.to_string()).collect();
    while size < vocab_size {
        let Some((count, Reverse(pair))) = heap.pop() else { break };
        if pair_counts.get(&pair) != Some(&count) {
            continue;
        }
        if count < 2 {
            break;
        }
        let joined = format!("{}{}", pair.0, pair.1);
        let mut touched: BTreeMap<Pair, ()> = BTreeMap::new();
        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let (syms, n) = &mut words[wi];
            let n = *n;
            for w in syms.windows(2) {
                let p = (w[0].clone(), w[1].clone());
                if let Some(c) = pair_counts.get_mut(&p) {
                    *c -= n;
                }
                touched.insert(p, ());
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = out;
            for w in syms.windows(2) {
                let p = (w[0].clone(), w[1].clone());
                *pair_counts.entry(p.clone()).or_default() += n;
                where_.entry(p.clone()).or_default().insert(wi);
                touched.insert(p, ());
            }
        }
        pair_counts.remove(&pair);
        for (p, ()) in touched {
            match pair_counts.get(&p) {
                Some(&0) => {
                    pair_counts.remove(&p);
                }
                Some(&c) if p != pair => heap.push((c, Reverse(p))),
                _ => {}
            }
        }
        if known.insert(joined) {
            size += 1;
        }
        merges.push(pair);
    }
    Ok(Vocab::build(alphabet, merges))
}

pub fn encode(v: &Vocab, text: &str) -> Vec<u32> {
    let mut ids = Vec::new();
    for w in pre_split(text) {
        ids.extend(v.segment(w).iter().map(|s| v.id_of.get(s).copied().unwrap_or(UNK)));
    }
    ids
}

/// Concatenates token strings. Specials other than `[unk]` decode to nothing;
/// `[unk]` decodes to U+FFFD.
pub fn decode(v: &Vocab, ids: &[u32]) -> String {
    let mut out = String::new();
    for &id in ids {
        if id == UNK {
            out.push('\u{FFFD}');
        } else if id >= NUM_SPECIALS {
            if let Some(t) = v.token(id) {
                out.push_str(t);
            }
        }
    }
    out
}

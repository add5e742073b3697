//! Seeded synthetic corpus of small C functions with planted vulnerability
//! patterns, plus JSONL I/O and a token-rule baseline detector.
//!
//! Families: loop bound (`<=` vs `<`), index guard, pointer offset clamp,
//! release on early return, NULL-initialised pointer used on one branch.
//! Identifiers and filler statements are drawn independently of the label.

mod rules;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use rules::rule_matcher;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSample {
    pub id: String,
    pub code: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<CodeSample>,
    pub val: Vec<CodeSample>,
    pub test: Vec<CodeSample>,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[CodeSample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &CodeSample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("n must be at least 10, got {0}")]
    TooFew(usize),
    #[error("vulnerable ratio must lie in (0, 1), got {0}")]
    Ratio(f64),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    LoopBound,
    IndexGuard,
    PointerOffset,
    ReleaseOnReturn,
    NullBranch,
}

const FAMILIES: [Family; 5] = [
    Family::LoopBound,
    Family::IndexGuard,
    Family::PointerOffset,
    Family::ReleaseOnReturn,
    Family::NullBranch,
];

const STEMS: &[&str] = &[
    "buf", "len", "idx", "cnt", "val", "ptr", "tmp", "data", "node", "item", "pos", "off", "size", "cap",
    "res", "key", "ctx", "num", "acc", "cur", "slot", "head", "tail", "mark", "hdr", "blk", "seg", "row",
];

const VERBS: &[&str] = &[
    "fill", "load", "store", "scan", "copy", "read", "write", "parse", "fetch", "update", "init", "reset",
    "probe", "emit", "pack", "sync",
];

/// Acquire/release pairs for the early-return family.
pub const RESOURCE_PAIRS: &[(&str, &str)] = &[
    ("malloc", "free"),
    ("open_stream", "close_stream"),
    ("acquire_buf", "release_buf"),
    ("lock_table", "unlock_table"),
    ("alloc_node", "drop_node"),
];

const HELPERS: &[&str] = &["consume", "log_value", "touch", "emit_value", "record"];
const LOOKUPS: &[&str] = &["lookup", "find_entry", "get_slot", "resolve"];

/// Distinct random identifiers for one function.
struct Names {
    used: Vec<String>,
}

impl Names {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let a = STEMS[rng.random_range(0..STEMS.len())];
            let name = match rng.random_range(0..3) {
                0 => a.to_string(),
                1 => format!("{a}_{}", STEMS[rng.random_range(0..STEMS.len())]),
                _ => format!("{a}{}", rng.random_range(0..10)),
            };
            if !self.used.contains(&name) {
                self.used.push(name.clone());
                return name;
            }
        }
    }

    fn function(&mut self, rng: &mut ChaCha8Rng) -> String {
        let v = VERBS[rng.random_range(0..VERBS.len())];
        let s = self.fresh(rng);
        format!("{v}_{s}")
    }
}

/// Label-neutral statements placed at the top of a body.
fn filler(rng: &mut ChaCha8Rng, names: &mut Names, out: &mut String) {
    let t = names.fresh(rng);
    let k = rng.random_range(1..50);
    match rng.random_range(0..4) {
        0 => {
            writeln!(out, "    int {t} = {k};").unwrap();
            writeln!(out, "    {t} = {t} * {} + 1;", rng.random_range(2..9)).unwrap();
        }
        1 => {
            let h = HELPERS[rng.random_range(0..HELPERS.len())];
            writeln!(out, "    {h}({k});").unwrap();
        }
        2 => {
            writeln!(out, "    int {t} = 0;").unwrap();
            writeln!(out, "    while ({t} < {k}) {{").unwrap();
            writeln!(out, "        {t} = {t} + 2;").unwrap();
            writeln!(out, "    }}").unwrap();
        }
        _ => {
            writeln!(out, "    int {t} = {k};").unwrap();
            writeln!(out, "    if ({t} > {}) {{", rng.random_range(1..50)).unwrap();
            writeln!(out, "        {t} = {t} - 1;").unwrap();
            writeln!(out, "    }}").unwrap();
        }
    }
}

fn render(family: Family, vulnerable: bool, rng: &mut ChaCha8Rng) -> String {
    let mut names = Names { used: Vec::new() };
    let f = names.function(rng);
    let mut body = String::new();
    for _ in 0..rng.random_range(0..2) {
        filler(rng, &mut names, &mut body);
    }
    let mut s = String::new();
    match family {
        Family::LoopBound => {
            let (buf, len, v, i) = (names.fresh(rng), names.fresh(rng), names.fresh(rng), names.fresh(rng));
            let cmp = if vulnerable { "<=" } else { "<" };
            writeln!(s, "void {f}(int *{buf}, int {len}, int {v}) {{").unwrap();
            s.push_str(&body);
            writeln!(s, "    int {i};").unwrap();
            writeln!(s, "    for ({i} = 0; {i} {cmp} {len}; {i}++) {{").unwrap();
            writeln!(s, "        {buf}[{i}] = {v} + {i};").unwrap();
            writeln!(s, "    }}").unwrap();
        }
        Family::IndexGuard => {
            let (buf, len, idx) = (names.fresh(rng), names.fresh(rng), names.fresh(rng));
            let guard = match (vulnerable, rng.random_range(0..2)) {
                (false, 0) => format!("{idx} < 0 || {idx} >= {len}"),
                (false, _) => format!("{idx} >= {len} || {idx} < 0"),
                (true, 0) => format!("{len} <= 0"),
                (true, _) => format!("{buf} == NULL"),
            };
            writeln!(s, "int {f}(int *{buf}, int {len}, int {idx}) {{").unwrap();
            s.push_str(&body);
            writeln!(s, "    if ({guard}) {{").unwrap();
            writeln!(s, "        return -1;").unwrap();
            writeln!(s, "    }}").unwrap();
            writeln!(s, "    return {buf}[{idx}];").unwrap();
        }
        Family::PointerOffset => {
            let (base, off, v, p) = (names.fresh(rng), names.fresh(rng), names.fresh(rng), names.fresh(rng));
            let cap = [16, 32, 64, 128][rng.random_range(0..4)];
            writeln!(s, "void {f}(int *{base}, int {off}, int {v}) {{").unwrap();
            s.push_str(&body);
            if vulnerable {
                writeln!(s, "    int *{p} = {base} + {off};").unwrap();
            } else {
                writeln!(s, "    int *{p} = {base} + ({off} % {cap});").unwrap();
            }
            writeln!(s, "    *{p} = {v};").unwrap();
        }
        Family::ReleaseOnReturn => {
            let (n, r) = (names.fresh(rng), names.fresh(rng));
            let (acquire, release) = RESOURCE_PAIRS[rng.random_range(0..RESOURCE_PAIRS.len())];
            let helper = HELPERS[rng.random_range(0..HELPERS.len())];
            let limit = rng.random_range(8..200);
            writeln!(s, "int {f}(int {n}) {{").unwrap();
            s.push_str(&body);
            writeln!(s, "    char *{r} = {acquire}({n});").unwrap();
            writeln!(s, "    if ({n} > {limit}) {{").unwrap();
            if !vulnerable {
                writeln!(s, "        {release}({r});").unwrap();
            }
            writeln!(s, "        return -1;").unwrap();
            writeln!(s, "    }}").unwrap();
            writeln!(s, "    {helper}({r});").unwrap();
            writeln!(s, "    {release}({r});").unwrap();
            writeln!(s, "    return 0;").unwrap();
        }
        Family::NullBranch => {
            let (flag, key, p) = (names.fresh(rng), names.fresh(rng), names.fresh(rng));
            let lookup = LOOKUPS[rng.random_range(0..LOOKUPS.len())];
            writeln!(s, "int {f}(int {flag}, int {key}) {{").unwrap();
            s.push_str(&body);
            writeln!(s, "    int *{p} = NULL;").unwrap();
            writeln!(s, "    if ({flag} > 0) {{").unwrap();
            writeln!(s, "        {p} = {lookup}({key});").unwrap();
            writeln!(s, "    }}").unwrap();
            if vulnerable {
                writeln!(s, "    return *{p};").unwrap();
            } else {
                writeln!(s, "    if ({p} != NULL) {{").unwrap();
                writeln!(s, "        return *{p};").unwrap();
                writeln!(s, "    }}").unwrap();
                writeln!(s, "    return 0;").unwrap();
            }
        }
    }
    s.push_str("}\n");
    s
}

pub const DATASET_NAME: &str = "synthetic";

/// `round(n * ratio)` vulnerable samples, families drawn uniformly, then a
/// seeded 70/15/15 split.
pub fn generate(seed: u64, n: usize, vulnerable_ratio: f64) -> Result<Dataset, CorpusError> {
    if n < 10 {
        return Err(CorpusError::TooFew(n));
    }
    if !(vulnerable_ratio > 0.0 && vulnerable_ratio < 1.0) {
        return Err(CorpusError::Ratio(vulnerable_ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_vuln = (n as f64 * vulnerable_ratio).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_vuln)).collect();
    labels.shuffle(&mut rng);
    let mut samples: Vec<CodeSample> = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let family = FAMILIES[rng.random_range(0..FAMILIES.len())];
            CodeSample {
                id: format!("{DATASET_NAME}-{i:05}"),
                code: render(family, label == 1, &mut rng),
                label,
            }
        })
        .collect();
    samples.shuffle(&mut rng);
    Ok(split_in_order(DATASET_NAME, samples))
}

/// Seeded shuffle then a 70/15/15 split, for samples supplied as one file.
pub fn split_samples(name: &str, mut samples: Vec<CodeSample>, seed: u64) -> Dataset {
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    split_in_order(name, samples)
}

fn split_in_order(name: &str, mut samples: Vec<CodeSample>) -> Dataset {
    let n = samples.len();
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    Dataset {
        name: name.to_string(),
        train: samples,
        val,
        test,
    }
}

pub fn to_jsonl(samples: &[CodeSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

/// Parses `{"id", "code", "label"}` lines; blank lines are skipped. Errors
/// carry the 1-based line number.
pub fn from_jsonl(text: &str) -> Result<Vec<CodeSample>, CorpusError> {
    #[derive(Deserialize)]
    struct Raw {
        id: Option<serde_json::Value>,
        code: Option<String>,
        label: Option<serde_json::Value>,
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| CorpusError::Line { line: line_no, message };
        let raw: Raw = serde_json::from_str(line).map_err(|e| err(format!("invalid JSON: {e}")))?;
        let id = match raw.id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(_) => return Err(err("\"id\" must be a string".into())),
            None => return Err(err("missing \"id\" field".into())),
        };
        let code = raw.code.ok_or_else(|| err("missing \"code\" field".into()))?;
        let label = match raw.label {
            None => return Err(err("missing \"label\" field".into())),
            Some(v) => match v.as_u64() {
                Some(l @ (0 | 1)) => l as u8,
                _ => return Err(err(format!("\"label\" must be 0 or 1, got {v}"))),
            },
        };
        out.push(CodeSample { id, code, label });
    }
    Ok(out)
}

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Vocab;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Lowercases and splits on whitespace, with every punctuation character
/// emitted as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if c.is_alphanumeric() || c == '_' {
            cur.extend(c.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Guesses the split from a file name such as `toefl.dev.jsonl`.
    pub fn infer(path: &Path) -> Option<Split> {
        let stem = path.file_name()?.to_str()?.to_lowercase();
        let parts: Vec<&str> = stem.split(|c: char| !c.is_alphanumeric()).collect();
        [("train", Split::Train), ("dev", Split::Dev), ("test", Split::Test)]
            .into_iter()
            .find(|(k, _)| parts.contains(k))
            .map(|(_, s)| s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// One record of the canonical line-delimited JSON format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawExample {
    pub story: Vec<String>,
    pub question: String,
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtype: Option<u8>,
}

impl RawExample {
    pub(crate) fn all_tokens(&self) -> impl Iterator<Item = String> + '_ {
        self.story
            .iter()
            .chain(std::iter::once(&self.question))
            .chain(&self.choices)
            .flat_map(|s| tokenize(s))
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.choices.len() < 2 {
            return Err(format!("need at least 2 choices, got {}", self.choices.len()));
        }
        if let Some(a) = self.answer {
            if a >= self.choices.len() {
                return Err(format!("answer {a} out of range for {} choices", self.choices.len()));
            }
        }
        if let Some(q) = self.qtype {
            if !(1..=3).contains(&q) {
                return Err(format!("qtype {q} not in 1..=3"));
            }
        }
        if self.story.is_empty() {
            return Err("empty story".into());
        }
        if let Some(i) = self.story.iter().position(|s| tokenize(s).is_empty()) {
            return Err(format!("story sentence {i} is empty"));
        }
        if tokenize(&self.question).is_empty() {
            return Err("empty question".into());
        }
        if let Some(i) = self.choices.iter().position(|s| tokenize(s).is_empty()) {
            return Err(format!("choice {i} is empty"));
        }
        Ok(())
    }
}

/// A named split of raw examples with a uniform choice count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub choice_count: usize,
    pub examples: Vec<RawExample>,
}

/// Train/dev/test splits of one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetTriple {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

/// Truncation bounds applied when encoding stories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    pub max_sentences: usize,
    pub max_sentence_len: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_sentences: 60,
            max_sentence_len: 40,
        }
    }
}

/// Encoded example: story sentences, question, and choices as token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaExample {
    pub story: Vec<Vec<usize>>,
    pub question: Vec<usize>,
    pub choices: Vec<Vec<usize>>,
    pub answer: Option<usize>,
    pub qtype: Option<u8>,
}

impl McqaExample {
    pub fn without_answer(&self) -> Self {
        McqaExample {
            answer: None,
            ..self.clone()
        }
    }

    /// Applies `perm` to the choices: new choice `i` is old choice `perm[i]`.
    pub fn permute_choices(&self, perm: &[usize]) -> Self {
        let choices = perm.iter().map(|&p| self.choices[p].clone()).collect();
        let answer = self.answer.map(|a| perm.iter().position(|&p| p == a).expect("perm is a permutation"));
        McqaExample {
            choices,
            answer,
            ..self.clone()
        }
    }

    pub fn permute_sentences(&self, perm: &[usize]) -> Self {
        McqaExample {
            story: perm.iter().map(|&p| self.story[p].clone()).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDataset {
    pub name: String,
    pub split: Split,
    pub choice_count: usize,
    pub examples: Vec<McqaExample>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: Split, examples: Vec<RawExample>) -> Result<Self> {
        let choice_count = examples.first().map_or(0, |e| e.choices.len());
        let ds = Dataset {
            name: name.into(),
            split,
            choice_count,
            examples,
        };
        for (i, ex) in ds.examples.iter().enumerate() {
            ds.check(ex).map_err(|msg| Error::Validation {
                path: PathBuf::from(&ds.name),
                line: i + 1,
                msg,
            })?;
        }
        Ok(ds)
    }

    fn check(&self, ex: &RawExample) -> std::result::Result<(), String> {
        ex.validate()?;
        if ex.choices.len() != self.choice_count {
            return Err(format!(
                "expected {} choices like the rest of the dataset, got {}",
                self.choice_count,
                ex.choices.len()
            ));
        }
        if matches!(self.split, Split::Train | Split::Dev) && ex.answer.is_none() {
            return Err(format!("{} examples must carry an answer", self.split));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Writes the canonical one-record-per-line format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for ex in &self.examples {
            serde_json::to_writer(&mut w, ex)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn encode(&self, vocab: &Vocab, bounds: Bounds) -> EncodedDataset {
        let ids = |s: &str| tokenize(s).iter().map(|t| vocab.id(t)).collect::<Vec<_>>();
        let examples = self
            .examples
            .iter()
            .map(|ex| McqaExample {
                story: ex
                    .story
                    .iter()
                    .take(bounds.max_sentences)
                    .map(|s| {
                        let mut v = ids(s);
                        v.truncate(bounds.max_sentence_len);
                        v
                    })
                    .collect(),
                question: ids(&ex.question),
                choices: ex.choices.iter().map(|c| ids(c)).collect(),
                answer: ex.answer,
                qtype: ex.qtype,
            })
            .collect();
        EncodedDataset {
            name: self.name.clone(),
            split: self.split,
            choice_count: self.choice_count,
            examples,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

/// Loads a canonical dataset file, inferring the split from its file name
/// (`*.train.jsonl`, `*_dev.jsonl`, ...). Unrecognized names load as test.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    load_dataset_as(path, Split::infer(path).unwrap_or(Split::Test))
}

pub fn load_dataset_as(path: &Path, split: Split) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.split('.').next().unwrap_or(s).to_string())
        .unwrap_or_default();
    let mut ds = Dataset {
        name,
        split,
        choice_count: 0,
        examples: Vec::new(),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: RawExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if ds.examples.is_empty() {
            ds.choice_count = ex.choices.len();
        }
        ds.check(&ex).map_err(|msg| Error::Validation {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        ds.examples.push(ex);
    }
    Ok(ds)
}

/// `floor(fraction * N)` training examples drawn without replacement, kept in
/// their original order. Samples are nested: for a fixed seed the sample at a
/// smaller fraction is a subset of the sample at any larger one.
pub fn subsample(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    let keep = subsample_indices(ds.split, ds.examples.len(), fraction, seed)?;
    Ok(Dataset {
        examples: keep.into_iter().map(|i| ds.examples[i].clone()).collect(),
        ..ds.clone()
    })
}

impl EncodedDataset {
    /// Same selection as [`subsample`] on the raw dataset.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<EncodedDataset> {
        let keep = subsample_indices(self.split, self.examples.len(), fraction, seed)?;
        Ok(EncodedDataset {
            examples: keep.into_iter().map(|i| self.examples[i].clone()).collect(),
            ..self.clone()
        })
    }
}

/// A prefix of one seeded permutation, so smaller fractions nest inside
/// larger ones. Original order is kept.
fn subsample_indices(split: Split, n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain(format!("subsample fraction {fraction} not in [0, 1]")));
    }
    if split != Split::Train {
        return Err(Error::Contract(format!("subsample expects a train split, got {split}")));
    }
    let k = ((fraction * n as f64) + 1e-9).floor() as usize;
    let k = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedStream::new(seed).derive("subsample").rng());
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

const KNOWN_SPLITS: &[(&str, [usize; 3])] = &[
    ("toefl", [717, 124, 122]),
    ("mc160", [280, 120, 240]),
    ("mc500", [1200, 200, 600]),
];

/// Checks user-converted copies of the published datasets against their
/// documented train/dev/test sizes. Unknown names pass.
pub fn check_known_split_sizes(name: &str, triple: &DatasetTriple) -> Result<()> {
    let key = name.to_lowercase();
    let Some((_, expect)) = KNOWN_SPLITS.iter().find(|(n, _)| key.starts_with(n)) else {
        return Ok(());
    };
    let got = [triple.train.len(), triple.dev.len(), triple.test.len()];
    if got != *expect {
        return Err(Error::Validation {
            path: PathBuf::from(name),
            line: 0,
            msg: format!("expected train/dev/test sizes {expect:?}, got {got:?}"),
        });
    }
    Ok(())
}

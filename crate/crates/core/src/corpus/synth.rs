//! Synthetic entity/attribute reading task with a controllable surface shift.
//!
//! Each story sentence reads `lead entity attribute` among filler words. The
//! question names one entity and the correct choice carries the token right
//! after it. Question types grade the distractors:
//!
//! * type 1: distractor attributes never occur in the story;
//! * type 2: distractors are attributes of other story sentences;
//! * type 3: as type 2, plus the lead token right before the entity, so only
//!   word order separates it from the answer.
//!
//! The target side is generated by the same process, after which each
//! occurrence of a content token is swapped for its target-only synonym with
//! probability `shift`. Synonym vectors in the emitted pretrained file have
//! cosine `synonym_similarity` with the original, so a source-trained model
//! transfers but sees weaker matches.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{write_vectors, Dataset, DatasetTriple, RawExample, Split};
use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Filler, question and choice-word tokens used identically on both sides.
    pub shared_pool: usize,
    /// Content tokens (entities and attributes) in their source surface form.
    pub source_pool: usize,
    /// Target-only synonyms; synonym `i` shadows content token `i`.
    pub target_pool: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    pub source_choices: usize,
    pub target_choices: usize,
    pub source_sizes: SplitSizes,
    pub target_sizes: SplitSizes,
    /// Question types drawn uniformly on each side.
    pub source_qtypes: Vec<u8>,
    pub target_qtypes: Vec<u8>,
    /// Per-occurrence probability of replacing a content token by its synonym
    /// on the target side.
    pub shift: f64,
    pub embed_dim: usize,
    pub synonym_similarity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            shared_pool: 40,
            source_pool: 120,
            target_pool: 120,
            sentences: 5,
            sentence_len: 6,
            source_choices: 5,
            target_choices: 4,
            source_sizes: SplitSizes {
                train: 2000,
                dev: 200,
                test: 500,
            },
            target_sizes: SplitSizes {
                train: 50,
                dev: 100,
                test: 500,
            },
            source_qtypes: vec![1, 2],
            target_qtypes: vec![1, 2, 3],
            shift: 0.3,
            embed_dim: 32,
            synonym_similarity: 0.35,
            seed: 0,
        }
    }
}

const QUESTION_WORDS: usize = 4;
const CHOICE_WORDS: usize = 4;

impl SynthConfig {
    fn fillers(&self) -> usize {
        self.shared_pool - QUESTION_WORDS - CHOICE_WORDS
    }

    fn validate(&self) -> Result<()> {
        let max_choices = self.source_choices.max(self.target_choices);
        let bad = |m: String| Err(Error::Config(m));
        if self.source_choices < 2 || self.target_choices < 2 {
            return bad("choice counts must be at least 2".into());
        }
        if self.sentences < max_choices {
            return bad(format!(
                "{} sentences cannot supply {} distinct story attributes",
                self.sentences, max_choices
            ));
        }
        for q in self.source_qtypes.iter().chain(&self.target_qtypes) {
            if !(1..=3).contains(q) {
                return bad(format!("question type {q} not in 1..=3"));
            }
        }
        if self.source_qtypes.is_empty() || self.target_qtypes.is_empty() {
            return bad("question type lists must be non-empty".into());
        }
        if self.sentence_len < 3 {
            return bad("sentence_len must be at least 3".into());
        }
        if self.shared_pool <= QUESTION_WORDS + CHOICE_WORDS {
            return bad(format!("shared_pool must exceed {}", QUESTION_WORDS + CHOICE_WORDS));
        }
        if self.source_pool / 2 < 2 * self.sentences + max_choices {
            return bad(format!(
                "source_pool {} too small for {} sentences and {} choices",
                self.source_pool, self.sentences, max_choices
            ));
        }
        if self.target_pool > self.source_pool {
            return bad("target_pool cannot exceed source_pool".into());
        }
        if !(0.0..=1.0).contains(&self.shift) {
            return bad(format!("shift {} not in [0, 1]", self.shift));
        }
        if !(-1.0..=1.0).contains(&self.synonym_similarity) {
            return bad("synonym_similarity must lie in [-1, 1]".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        Ok(())
    }
}

fn filler(i: usize) -> String {
    format!("f{i}")
}
fn question_word(i: usize) -> String {
    format!("q{i}")
}
fn choice_word(i: usize) -> String {
    format!("c{i}")
}
fn content(i: usize) -> String {
    format!("s{i}")
}
fn synonym(i: usize) -> String {
    format!("x{i}")
}

/// Generated datasets plus the pretrained vectors covering every token.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub source: DatasetTriple,
    pub target: DatasetTriple,
    pub vectors: Vec<(String, Vec<f64>)>,
    /// Target-only synonym → source content token.
    pub synonyms: BTreeMap<String, String>,
}

impl SynthCorpus {
    /// Maps a synonym back to its source content token.
    pub fn canonical<'a>(&'a self, token: &'a str) -> &'a str {
        self.synonyms.get(token).map_or(token, String::as_str)
    }

    /// Writes `{source,target}.{train,dev,test}.jsonl` and `vectors.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (side, triple) in [("source", &self.source), ("target", &self.target)] {
            for ds in [&triple.train, &triple.dev, &triple.test] {
                ds.save(&dir.join(format!("{side}.{}.jsonl", ds.split)))?;
            }
        }
        write_vectors(&dir.join("vectors.txt"), &self.vectors)
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    choices: usize,
    qtypes: &'a [u8],
}

impl Generator<'_> {
    /// Each sentence reads `... lead entity attribute ...`; the answer is the
    /// token right after the questioned entity. Type 1 distractors are absent
    /// from the story, type 2 distractors are other sentences' attributes and
    /// type 3 distractors include the token right before the entity.
    fn example(&self, rng: &mut StreamRng) -> RawExample {
        let cfg = self.cfg;
        let half = cfg.source_pool / 2;
        let mut entities: Vec<usize> = (0..half).collect();
        entities.shuffle(rng);
        entities.truncate(cfg.sentences);
        let mut attributes: Vec<usize> = (half..2 * half).collect();
        attributes.shuffle(rng);
        let (story_attrs, rest) = attributes.split_at(cfg.sentences);
        let (leads, spare_attrs) = rest.split_at(cfg.sentences);

        let story: Vec<String> = (0..cfg.sentences)
            .map(|s| {
                let pos = rng.gen_range(1..cfg.sentence_len - 1);
                let words: Vec<String> = (0..cfg.sentence_len)
                    .map(|w| match w {
                        w if w + 1 == pos => content(leads[s]),
                        w if w == pos => content(entities[s]),
                        w if w == pos + 1 => content(story_attrs[s]),
                        _ => filler(rng.gen_range(0..cfg.fillers())),
                    })
                    .collect();
                words.join(" ")
            })
            .collect();

        let target = rng.gen_range(0..cfg.sentences);
        let qtype = self.qtypes[rng.gen_range(0..self.qtypes.len())];
        let question = format!(
            "{} {} {}",
            question_word(rng.gen_range(0..QUESTION_WORDS)),
            question_word(rng.gen_range(0..QUESTION_WORDS)),
            content(entities[target])
        );

        let others = (0..cfg.sentences).filter(|&s| s != target);
        let mut distractors: Vec<usize> = match qtype {
            1 => spare_attrs[..self.choices - 1].to_vec(),
            2 => others.map(|s| story_attrs[s]).collect(),
            _ => {
                let mut d: Vec<usize> = others.map(|s| story_attrs[s]).collect();
                d.shuffle(rng);
                d.truncate(self.choices - 2);
                d.push(leads[target]);
                d
            }
        };
        distractors.shuffle(rng);
        distractors.truncate(self.choices - 1);
        let answer = rng.gen_range(0..self.choices);
        let mut attrs = distractors;
        attrs.insert(answer, story_attrs[target]);
        let choices = attrs
            .into_iter()
            .map(|a| format!("{} {}", choice_word(rng.gen_range(0..CHOICE_WORDS)), content(a)))
            .collect();

        RawExample {
            story,
            question,
            choices,
            answer: Some(answer),
            qtype: Some(qtype),
        }
    }
}

fn shift_text(text: &str, cfg: &SynthConfig, rng: &mut StreamRng) -> String {
    text.split(' ')
        .map(|tok| {
            let idx = tok.strip_prefix('s').and_then(|n| n.parse::<usize>().ok());
            match idx {
                Some(i) if i < cfg.target_pool && rng.gen::<f64>() < cfg.shift => synonym(i),
                _ => tok.to_string(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn shift_example(ex: RawExample, cfg: &SynthConfig, rng: &mut StreamRng) -> RawExample {
    RawExample {
        story: ex.story.iter().map(|s| shift_text(s, cfg, rng)).collect(),
        question: shift_text(&ex.question, cfg, rng),
        choices: ex.choices.iter().map(|c| shift_text(c, cfg, rng)).collect(),
        ..ex
    }
}

fn gaussian(rng: &mut StreamRng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_vector(d: usize, rng: &mut StreamRng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn vectors(cfg: &SynthConfig, stream: &SeedStream) -> Vec<(String, Vec<f64>)> {
    let mut rng = stream.rng();
    let d = cfg.embed_dim;
    let mut out = Vec::new();
    for i in 0..cfg.fillers() {
        out.push((filler(i), unit_vector(d, &mut rng)));
    }
    for i in 0..QUESTION_WORDS {
        out.push((question_word(i), unit_vector(d, &mut rng)));
    }
    for i in 0..CHOICE_WORDS {
        out.push((choice_word(i), unit_vector(d, &mut rng)));
    }
    let base: Vec<Vec<f64>> = (0..cfg.source_pool).map(|_| unit_vector(d, &mut rng)).collect();
    let rho = cfg.synonym_similarity;
    for (i, b) in base.iter().enumerate() {
        out.push((content(i), b.clone()));
    }
    for (i, b) in base.iter().enumerate().take(cfg.target_pool) {
        // component of a fresh direction orthogonal to the base vector
        let r = unit_vector(d, &mut rng);
        let proj = r.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let orth: Vec<f64> = r.iter().zip(b).map(|(x, y)| x - proj * y).collect();
        let on = orth.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let perp = (1.0 - rho * rho).max(0.0).sqrt();
        let v = b.iter().zip(&orth).map(|(x, o)| rho * x + perp * o / on).collect();
        out.push((synonym(i), v));
    }
    out
}

/// Generates source and target train/dev/test splits and a pretrained vector
/// table. Output is a pure function of `cfg`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let root = SeedStream::new(cfg.seed).derive("synth");
    let build = |side: &str, choices: usize, qtypes: &[u8], sizes: SplitSizes, shifted: bool| -> Result<DatasetTriple> {
        let gen = Generator { cfg, choices, qtypes };
        let stream = root.derive(side);
        let split = |split: Split, n: usize| -> Result<Dataset> {
            let mut rng = stream.derive(&split.to_string()).rng();
            let mut shift_rng = stream.derive(&format!("{split}-shift")).rng();
            let examples = (0..n)
                .map(|_| {
                    let ex = gen.example(&mut rng);
                    if shifted {
                        shift_example(ex, cfg, &mut shift_rng)
                    } else {
                        ex
                    }
                })
                .collect();
            Dataset::new(format!("synth-{side}"), split, examples)
        };
        Ok(DatasetTriple {
            train: split(Split::Train, sizes.train)?,
            dev: split(Split::Dev, sizes.dev)?,
            test: split(Split::Test, sizes.test)?,
        })
    };
    let source = build("source", cfg.source_choices, &cfg.source_qtypes, cfg.source_sizes, false)?;
    let target = build("target", cfg.target_choices, &cfg.target_qtypes, cfg.target_sizes, true)?;
    let synonyms = (0..cfg.target_pool).map(|i| (synonym(i), content(i))).collect();
    Ok(SynthCorpus {
        source,
        target,
        vectors: vectors(cfg, &root.derive("vectors")),
        synonyms,
    })
}

//! End-to-end memory network baseline with bag-of-words sentence encoding.
//!
//! Story sentences are embedded twice (A for addressing, C for output), the
//! question with B and the choices with F. Each hop attends over memories
//! with the current query and adds the read vector to it.

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingMatrix, McqaExample, PAD};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::SeedStream;
use crate::tensor::{softmax, Graph, ParamStore, Tensor, Var};

pub const EMBED_A: &str = "memn2n.embed_a";
pub const EMBED_B: &str = "memn2n.embed_b";
pub const EMBED_C: &str = "memn2n.embed_c";
pub const EMBED_F: &str = "memn2n.embed_f";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Memn2nHyper {
    pub hops: usize,
    /// Initialize A and B from the pretrained vectors when they are given.
    /// Off by default: all four tables start random.
    pub pretrained_init: bool,
}

impl Default for Memn2nHyper {
    fn default() -> Self {
        Memn2nHyper {
            hops: 1,
            pretrained_init: false,
        }
    }
}

pub(crate) fn init_params(
    config: &ModelConfig,
    vocab_len: usize,
    pretrained: Option<&EmbeddingMatrix>,
    stream: &SeedStream,
) -> Result<(ParamStore, Vec<String>)> {
    if config.memn2n.hops == 0 {
        return Err(Error::Config("memn2n.hops must be at least 1".into()));
    }
    let d = config.embed_dim;
    let mut store = ParamStore::new();
    let mut from_vectors = Vec::new();
    for name in [EMBED_A, EMBED_B, EMBED_C, EMBED_F] {
        let takes_vectors = config.memn2n.pretrained_init && (name == EMBED_A || name == EMBED_B);
        match pretrained {
            Some(p) if takes_vectors => {
                store.insert(name, p.matrix.clone(), config.freeze_pretrained)?;
                from_vectors.push(name.to_string());
            }
            _ => {
                let e = EmbeddingMatrix::random(vocab_len, d, &stream.derive(name));
                store.insert(name, e.matrix, false)?;
            }
        }
    }
    Ok((store, from_vectors))
}

/// Mean of the embeddings of the non-PAD tokens.
pub fn encode_sentence(ids: &[usize], table: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let mut g = Graph::inference();
    let t = g.leaf_ref(&table.matrix);
    let v = encode(&mut g, t, ids)?;
    Ok(g.value(v).to_vec())
}

pub(crate) fn encode(g: &mut Graph<'_>, table: Var, ids: &[usize]) -> Result<Var> {
    let kept: Vec<usize> = ids.iter().copied().filter(|i| *i != PAD).collect();
    if kept.is_empty() {
        return Err(Error::Contract("cannot encode a sentence with no tokens".into()));
    }
    let rows = g.embed(table, &kept)?;
    g.mean_rows(rows)
}

/// Graph nodes produced by one forward pass.
pub struct Memn2nRecord {
    pub scores: Var,
    /// Memory attention per hop.
    pub attention: Vec<Var>,
}

pub fn record<'a>(
    g: &mut Graph<'a>,
    params: &'a ParamStore,
    hyper: &Memn2nHyper,
    ex: &McqaExample,
) -> Result<Memn2nRecord> {
    if ex.story.is_empty() {
        return Err(Error::Contract("story has no sentences".into()));
    }
    let a = g.param(params, EMBED_A)?;
    let b = g.param(params, EMBED_B)?;
    let c = g.param(params, EMBED_C)?;
    let f = g.param(params, EMBED_F)?;

    let mut mem_in = Vec::with_capacity(ex.story.len());
    let mut mem_out = Vec::with_capacity(ex.story.len());
    for s in &ex.story {
        mem_in.push(encode(g, a, s)?);
        mem_out.push(encode(g, c, s)?);
    }
    let m = g.stack(&mem_in)?;
    let cm = g.stack(&mem_out)?;
    let n = ex.story.len();

    let mut u = encode(g, b, &ex.question)?;
    let d = g.shape(u)[0];
    let mut attention = Vec::with_capacity(hyper.hops);
    for _ in 0..hyper.hops {
        let col = g.reshape(u, vec![d, 1])?;
        let logits = g.matmul(m, col)?;
        let logits = g.reshape(logits, vec![n])?;
        let p = g.softmax(logits)?;
        let o = g.weighted_sum(p, cm)?;
        u = g.add(u, o)?;
        attention.push(p);
    }

    let mut scores = Vec::with_capacity(ex.choices.len());
    for ch in &ex.choices {
        let e = encode(g, f, ch)?;
        scores.push(g.dot(u, e)?);
    }
    let scores = g.stack(&scores)?;
    Ok(Memn2nRecord { scores, attention })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Memn2nOutput {
    pub choice_probs: Vec<f64>,
    pub attention: Vec<Vec<f64>>,
}

pub fn forward(params: &ParamStore, hyper: &Memn2nHyper, ex: &McqaExample) -> Result<Memn2nOutput> {
    let mut g = Graph::inference();
    let r = record(&mut g, params, hyper, ex)?;
    Ok(Memn2nOutput {
        choice_probs: softmax(g.value(r.scores))?,
        attention: r.attention.iter().map(|p| g.value(*p).to_vec()).collect(),
    })
}

/// Bag-of-words table built from explicit rows, for tests and tools.
pub fn table_from_rows(rows: &[Vec<f64>]) -> Result<EmbeddingMatrix> {
    Ok(EmbeddingMatrix {
        matrix: Tensor::from_rows(rows)?,
        frozen: false,
    })
}

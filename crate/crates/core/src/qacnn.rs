//! Query-based attention CNN.
//!
//! The compare layer builds cosine similarity maps between story words and
//! question words (SQ) and between story words and each choice's words (SC).
//! SQ drives two attention maps: word level (per sentence) and sentence
//! level. Stage 1 convolves each sentence's SC rows and pools positions with
//! the word attention; stage 2 convolves the resulting sentence sequence and
//! pools it with the sentence attention. A shared two-layer scorer turns each
//! choice feature into one logit.
//!
//! Story sentences are processed at their true length rather than padded, so
//! PAD positions never receive attention. Choices are padded or truncated to
//! `max_choice_len` because that width is the stage-1 input dimension.

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingMatrix, McqaExample, PAD};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::SeedStream;
use crate::tensor::{softmax, Activation, Graph, ParamStore, Tensor, Var};

pub const EMBED: &str = "qacnn.embed";
pub const CNN1_W: &str = "qacnn.cnn1.weight";
pub const CNN1_B: &str = "qacnn.cnn1.bias";
pub const CNN2_W: &str = "qacnn.cnn2.weight";
pub const CNN2_B: &str = "qacnn.cnn2.bias";
pub const FC1_W: &str = "qacnn.fc1.weight";
pub const FC1_B: &str = "qacnn.fc1.bias";
pub const FC2_W: &str = "qacnn.fc2.weight";
pub const FC2_B: &str = "qacnn.fc2.bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QacnnHyper {
    pub window1: usize,
    pub filters1: usize,
    pub window2: usize,
    pub filters2: usize,
    pub hidden: usize,
    pub max_choice_len: usize,
    /// Multiplier on the max-pooled similarities before each attention softmax.
    pub attention_scale: f64,
}

impl Default for QacnnHyper {
    fn default() -> Self {
        QacnnHyper {
            window1: 3,
            filters1: 32,
            window2: 3,
            filters2: 32,
            hidden: 64,
            max_choice_len: 8,
            attention_scale: 5.0,
        }
    }
}

impl QacnnHyper {
    fn validate(&self) -> Result<()> {
        for (name, w) in [("window1", self.window1), ("window2", self.window2)] {
            if w % 2 == 0 {
                return Err(Error::Config(format!("qacnn.{name} must be odd, got {w}")));
            }
        }
        for (name, n) in [
            ("filters1", self.filters1),
            ("filters2", self.filters2),
            ("hidden", self.hidden),
            ("max_choice_len", self.max_choice_len),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("qacnn.{name} must be positive")));
            }
        }
        if !(self.attention_scale.is_finite() && self.attention_scale > 0.0) {
            return Err(Error::Config("qacnn.attention_scale must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn init_params(
    config: &ModelConfig,
    vocab_len: usize,
    pretrained: Option<&EmbeddingMatrix>,
    stream: &SeedStream,
) -> Result<(ParamStore, Vec<String>)> {
    let h = &config.qacnn;
    h.validate()?;
    let mut store = ParamStore::new();
    let mut from_vectors = Vec::new();
    match pretrained {
        Some(p) => {
            store.insert(EMBED, p.matrix.clone(), config.freeze_pretrained)?;
            from_vectors.push(EMBED.to_string());
        }
        None => {
            let e = EmbeddingMatrix::random(vocab_len, config.embed_dim, &stream.derive(EMBED));
            store.insert(EMBED, e.matrix, false)?;
        }
    }
    // Glorot-uniform weights (fan counts include the window); small positive
    // biases keep ReLU units off their kink at start
    let weights = [
        (CNN1_W, vec![h.window1, h.max_choice_len, h.filters1], h.window1 * (h.max_choice_len + h.filters1)),
        (CNN2_W, vec![h.window2, h.filters1, h.filters2], h.window2 * (h.filters1 + h.filters2)),
        (FC1_W, vec![h.filters2, h.hidden], h.filters2 + h.hidden),
        (FC2_W, vec![h.hidden, 1], h.hidden + 1),
    ];
    for (name, shape, fans) in weights {
        let limit = (6.0 / fans as f64).sqrt();
        let mut rng = stream.derive(name).rng();
        store.insert(name, Tensor::uniform(shape, -limit, limit, &mut rng), false)?;
    }
    for (name, n) in [(CNN1_B, h.filters1), (CNN2_B, h.filters2), (FC1_B, h.hidden), (FC2_B, 1)] {
        store.insert(name, Tensor::vector(vec![0.01; n]), false)?;
    }
    Ok((store, from_vectors))
}

fn real_tokens(ids: &[usize], what: &str) -> Result<Vec<usize>> {
    let kept: Vec<usize> = ids.iter().copied().filter(|i| *i != PAD).collect();
    if kept.is_empty() {
        return Err(Error::Contract(format!("{what} has no tokens")));
    }
    Ok(kept)
}

fn choice_ids(ids: &[usize], len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ids.iter().copied().take(len).collect();
    out.resize(len, PAD);
    out
}

fn word_attention_var(g: &mut Graph<'_>, sq: Var, scale: f64) -> Result<Var> {
    let m = g.max_cols(sq)?;
    let m = g.scale(m, scale);
    g.softmax(m)
}

fn sentence_attention_var(g: &mut Graph<'_>, sqs: &[Var], scale: f64) -> Result<Var> {
    let maxes = sqs.iter().map(|s| g.max_all(*s)).collect::<Result<Vec<_>>>()?;
    let v = g.stack(&maxes)?;
    let v = g.scale(v, scale);
    g.softmax(v)
}

fn stage1_var(g: &mut Graph<'_>, w: Var, b: Var, sc: &[Var], word_att: &[Var]) -> Result<Vec<Var>> {
    sc.iter()
        .zip(word_att)
        .map(|(s, a)| {
            let h = g.conv1d(*s, w, b, Activation::Relu)?;
            g.weighted_sum(*a, h)
        })
        .collect()
}

fn stage2_var(g: &mut Graph<'_>, w: Var, b: Var, feats: &[Var], sent_att: Var) -> Result<Var> {
    let seq = g.stack(feats)?;
    let h = g.conv1d(seq, w, b, Activation::Relu)?;
    g.weighted_sum(sent_att, h)
}

/// Graph nodes produced by one forward pass.
pub struct QacnnRecord {
    pub scores: Var,
    pub word_attention: Vec<Var>,
    pub sentence_attention: Var,
}

pub fn record<'a>(
    g: &mut Graph<'a>,
    params: &'a ParamStore,
    hyper: &QacnnHyper,
    ex: &McqaExample,
) -> Result<QacnnRecord> {
    if ex.story.is_empty() {
        return Err(Error::Contract("story has no sentences".into()));
    }
    let e = g.param(params, EMBED)?;
    let q = g.embed(e, &real_tokens(&ex.question, "question")?)?;
    let mut sents = Vec::with_capacity(ex.story.len());
    let mut sqs = Vec::with_capacity(ex.story.len());
    let mut word_att = Vec::with_capacity(ex.story.len());
    for s in &ex.story {
        let x = g.embed(e, &real_tokens(s, "story sentence")?)?;
        let sq = g.cosine(x, q)?;
        word_att.push(word_attention_var(g, sq, hyper.attention_scale)?);
        sents.push(x);
        sqs.push(sq);
    }
    let sent_att = sentence_attention_var(g, &sqs, hyper.attention_scale)?;

    let (w1, b1) = (g.param(params, CNN1_W)?, g.param(params, CNN1_B)?);
    let (w2, b2) = (g.param(params, CNN2_W)?, g.param(params, CNN2_B)?);
    let mut feats = Vec::with_capacity(ex.choices.len());
    for ch in &ex.choices {
        let c = g.embed(e, &choice_ids(ch, hyper.max_choice_len))?;
        let sc = sents.iter().map(|x| g.cosine(*x, c)).collect::<Result<Vec<_>>>()?;
        let per_sentence = stage1_var(g, w1, b1, &sc, &word_att)?;
        feats.push(stage2_var(g, w2, b2, &per_sentence, sent_att)?);
    }
    let x = g.stack(&feats)?;
    let scores = score_var(g, params, x)?;
    Ok(QacnnRecord {
        scores,
        word_attention: word_att,
        sentence_attention: sent_att,
    })
}

fn score_var<'a>(g: &mut Graph<'a>, params: &'a ParamStore, x: Var) -> Result<Var> {
    let k = g.shape(x)[0];
    let (w1, b1) = (g.param(params, FC1_W)?, g.param(params, FC1_B)?);
    let (w2, b2) = (g.param(params, FC2_W)?, g.param(params, FC2_B)?);
    let z = g.matmul(x, w1)?;
    let z = g.add_bias(z, b1)?;
    let z = g.relu(z);
    let s = g.matmul(z, w2)?;
    let s = g.add_bias(s, b2)?;
    g.reshape(s, vec![k])
}

/// SQ per sentence and SC per choice then per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMaps {
    pub sq: Vec<Tensor>,
    pub sc: Vec<Vec<Tensor>>,
}

pub fn similarity_maps(params: &ParamStore, hyper: &QacnnHyper, ex: &McqaExample) -> Result<SimilarityMaps> {
    let mut g = Graph::inference();
    let e = g.param(params, EMBED)?;
    let q = g.embed(e, &real_tokens(&ex.question, "question")?)?;
    let mut sents = Vec::new();
    let mut sq = Vec::new();
    for s in &ex.story {
        let x = g.embed(e, &real_tokens(s, "story sentence")?)?;
        let m = g.cosine(x, q)?;
        sq.push(g.tensor(m));
        sents.push(x);
    }
    let mut sc = Vec::new();
    for ch in &ex.choices {
        let c = g.embed(e, &choice_ids(ch, hyper.max_choice_len))?;
        let mut row = Vec::new();
        for x in &sents {
            let m = g.cosine(*x, c)?;
            row.push(g.tensor(m));
        }
        sc.push(row);
    }
    Ok(SimilarityMaps { sq, sc })
}

/// Max over question words, then a scaled softmax over story words.
pub fn word_attention(sq: &Tensor, scale: f64) -> Result<Vec<f64>> {
    let mut g = Graph::inference();
    let v = g.leaf_ref(sq);
    let a = word_attention_var(&mut g, v, scale)?;
    Ok(g.value(a).to_vec())
}

/// Max over each sentence's whole SQ block, then a scaled softmax over sentences.
pub fn sentence_attention(sqs: &[Tensor], scale: f64) -> Result<Vec<f64>> {
    let mut g = Graph::inference();
    let vs: Vec<Var> = sqs.iter().map(|t| g.leaf_ref(t)).collect();
    let a = sentence_attention_var(&mut g, &vs, scale)?;
    Ok(g.value(a).to_vec())
}

/// One feature vector per sentence for a single choice.
pub fn stage1(params: &ParamStore, sc: &[Tensor], word_att: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if sc.len() != word_att.len() {
        return Err(Error::Shape {
            op: "stage1",
            lhs: vec![sc.len()],
            rhs: vec![word_att.len()],
        });
    }
    let mut g = Graph::inference();
    let (w, b) = (g.param(params, CNN1_W)?, g.param(params, CNN1_B)?);
    let sv: Vec<Var> = sc.iter().map(|t| g.leaf_ref(t)).collect();
    let av: Vec<Var> = word_att.iter().map(|a| g.leaf(Tensor::vector(a.clone()))).collect();
    let out = stage1_var(&mut g, w, b, &sv, &av)?;
    Ok(out.iter().map(|v| g.value(*v).to_vec()).collect())
}

/// Choice feature and the sentence-level attention used to pool it.
pub fn stage2(
    params: &ParamStore,
    features: &[Vec<f64>],
    sqs: &[Tensor],
    scale: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if features.is_empty() || features.len() != sqs.len() {
        return Err(Error::Shape {
            op: "stage2",
            lhs: vec![features.len()],
            rhs: vec![sqs.len()],
        });
    }
    let mut g = Graph::inference();
    let (w, b) = (g.param(params, CNN2_W)?, g.param(params, CNN2_B)?);
    let fv: Vec<Var> = features.iter().map(|f| g.leaf(Tensor::vector(f.clone()))).collect();
    let qv: Vec<Var> = sqs.iter().map(|t| g.leaf_ref(t)).collect();
    let att = sentence_attention_var(&mut g, &qv, scale)?;
    let out = stage2_var(&mut g, w, b, &fv, att)?;
    Ok((g.value(out).to_vec(), g.value(att).to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub word_level: Vec<Vec<f64>>,
    pub sentence_level: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QacnnOutput {
    pub choice_probs: Vec<f64>,
    /// Attention depends only on story and question, so every choice shares it.
    pub attention: AttentionRecord,
}

pub fn forward(params: &ParamStore, hyper: &QacnnHyper, ex: &McqaExample) -> Result<QacnnOutput> {
    let mut g = Graph::inference();
    let r = record(&mut g, params, hyper, ex)?;
    Ok(QacnnOutput {
        choice_probs: softmax(g.value(r.scores))?,
        attention: AttentionRecord {
            word_level: r.word_attention.iter().map(|a| g.value(*a).to_vec()).collect(),
            sentence_level: g.value(r.sentence_attention).to_vec(),
        },
    })
}

/// Attention for one choice, aligned to each sentence's non-PAD tokens.
pub fn export_attention(
    params: &ParamStore,
    hyper: &QacnnHyper,
    ex: &McqaExample,
    choice: usize,
) -> Result<AttentionRecord> {
    if choice >= ex.choices.len() {
        return Err(Error::Index {
            index: choice,
            size: ex.choices.len(),
        });
    }
    Ok(forward(params, hyper, ex)?.attention)
}

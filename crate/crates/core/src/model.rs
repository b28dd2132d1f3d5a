//! Model configuration, construction, prediction and checkpoints shared by
//! both QA architectures.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Bounds, EmbeddingMatrix, McqaExample, Vocab};
use crate::error::{Error, Result};
use crate::memn2n::{self, Memn2nHyper};
use crate::qacnn::{self, QacnnHyper};
use crate::rng::SeedStream;
use crate::tensor::{softmax, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Memn2n,
    #[default]
    Qacnn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Memn2n => "memn2n",
            ModelKind::Qacnn => "qacnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embed_dim: usize,
    /// Keep tables initialized from pretrained vectors frozen.
    pub freeze_pretrained: bool,
    pub bounds: Bounds,
    pub memn2n: Memn2nHyper,
    pub qacnn: QacnnHyper,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Qacnn,
            embed_dim: 32,
            freeze_pretrained: true,
            bounds: Bounds::default(),
            memn2n: Memn2nHyper::default(),
            qacnn: QacnnHyper::default(),
        }
    }
}

/// A QA model: architecture config plus its named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Parameters initialized from pretrained vectors.
    pub pretrained: Vec<String>,
}

impl Model {
    /// Fresh parameters drawn from named streams under `seed`. When given,
    /// `pretrained` initializes the QACNN table E, and MemN2N's A and B when
    /// `memn2n.pretrained_init` is set.
    pub fn init(
        config: &ModelConfig,
        vocab_len: usize,
        pretrained: Option<&EmbeddingMatrix>,
        seed: &SeedStream,
    ) -> Result<Model> {
        if let Some(p) = pretrained {
            if p.dim() != config.embed_dim {
                return Err(Error::Config(format!(
                    "pretrained vectors have dimension {}, model expects {}",
                    p.dim(),
                    config.embed_dim
                )));
            }
            if p.vocab_len() != vocab_len {
                return Err(Error::Config(format!(
                    "pretrained table has {} rows for a vocabulary of {vocab_len}",
                    p.vocab_len()
                )));
            }
        }
        let stream = seed.derive("init");
        let (params, pretrained) = match config.kind {
            ModelKind::Memn2n => memn2n::init_params(config, vocab_len, pretrained, &stream)?,
            ModelKind::Qacnn => qacnn::init_params(config, vocab_len, pretrained, &stream)?,
        };
        Ok(Model {
            config: config.clone(),
            params,
            pretrained,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Unnormalized per-choice scores recorded on `g`.
    pub fn scores<'a>(&'a self, g: &mut Graph<'a>, ex: &McqaExample) -> Result<Var> {
        match self.config.kind {
            ModelKind::Memn2n => Ok(memn2n::record(g, &self.params, &self.config.memn2n, ex)?.scores),
            ModelKind::Qacnn => Ok(qacnn::record(g, &self.params, &self.config.qacnn, ex)?.scores),
        }
    }

    pub fn choice_probs(&self, ex: &McqaExample) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let s = self.scores(&mut g, ex)?;
        softmax(g.value(s))
    }

    pub fn predict(&self, ex: &McqaExample) -> Result<usize> {
        Ok(argmax(&self.choice_probs(ex)?))
    }

    /// Cross-entropy of the choice distribution against `target`, recorded on `g`.
    pub fn loss<'a>(&'a self, g: &mut Graph<'a>, ex: &McqaExample, target: usize) -> Result<Var> {
        let s = self.scores(g, ex)?;
        g.cross_entropy(s, target)
    }

    /// Marks every parameter trainable except frozen pretrained tables.
    pub fn unfreeze_all(&mut self) -> Result<()> {
        let names: Vec<String> = self.params.names().map(str::to_string).collect();
        for n in names {
            let keep = self.config.freeze_pretrained && self.pretrained.contains(&n);
            self.params.set_frozen(&n, keep)?;
        }
        Ok(())
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: ModelConfig,
    pub pretrained: Vec<String>,
    pub vocab: Vocab,
    /// Root seed; every stream used so far is derived from it by name.
    pub seed: u64,
    /// Training configuration that produced the weights, if any.
    #[serde(default)]
    pub train: serde_json::Value,
}

/// Named-tensor archive with a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<NamedTensor>,
}

pub const CHECKPOINT_FORMAT: &str = "mcqa-checkpoint-v1";

impl Checkpoint {
    pub fn new(model: &Model, vocab: &Vocab, seed: u64, train: serde_json::Value) -> Self {
        let tensors = model
            .params
            .iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                frozen: !t.requires_grad(),
                data: t.data().to_vec(),
            })
            .collect();
        Checkpoint {
            manifest: CheckpointManifest {
                format: CHECKPOINT_FORMAT.into(),
                model: model.config.clone(),
                pretrained: model.pretrained.clone(),
                vocab: vocab.clone(),
                seed,
                train,
            },
            tensors,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let mut params = ParamStore::new();
        for t in &self.tensors {
            let tensor = Tensor::new(t.shape.clone(), t.data.clone())?;
            params.insert(&t.name, tensor, t.frozen)?;
        }
        Ok(Model {
            config: self.manifest.model.clone(),
            params,
            pretrained: self.manifest.pretrained.clone(),
        })
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// failed save never leaves a partial checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {}",
                ck.manifest.format
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig::default();
        let vocab = Vocab::from(vec!["a".to_string(), "b".to_string()]);
        let m = Model::init(&cfg, vocab.len(), None, &SeedStream::new(3)).unwrap();
        let ck = Checkpoint::new(&m, &vocab, 3, serde_json::Value::Null);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        assert!(back.model().unwrap().params.bit_eq(&m.params));
    }
}

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Vocab, PAD};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

/// Half-width of the uniform range used for randomly initialized rows.
pub const INIT_RANGE: f64 = 0.1;

/// |V|×d word-embedding table. Row PAD is all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub matrix: Tensor,
    pub frozen: bool,
}

impl EmbeddingMatrix {
    /// Uniform(-0.1, 0.1) rows, PAD zeroed.
    pub fn random(vocab_len: usize, d: usize, stream: &SeedStream) -> Self {
        let mut rng = stream.rng();
        let mut matrix = Tensor::uniform(vec![vocab_len, d], -INIT_RANGE, INIT_RANGE, &mut rng);
        if vocab_len > PAD {
            matrix.row_mut(PAD).fill(0.0);
        }
        EmbeddingMatrix { matrix, frozen: false }
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn vocab_len(&self) -> usize {
        self.matrix.shape()[0]
    }
}

/// Reads a `token v1 ... vd` text file. `d` of `None` takes the width of the
/// first line.
pub fn read_vectors(path: &Path, d: Option<usize>) -> Result<Vec<(String, Vec<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut width = d;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad number: {e}"),
            })?;
        let want = *width.get_or_insert(values.len());
        if values.len() != want {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected {want} values after the token, got {}", values.len()),
            });
        }
        out.push((token.to_string(), values));
    }
    Ok(out)
}

pub fn write_vectors(path: &Path, vectors: &[(String, Vec<f64>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (tok, vals) in vectors {
        let mut line = tok.clone();
        for v in vals {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Embedding table initialized from a pretrained vector file.
///
/// Every row is first drawn from the "embed-init" stream, then rows of tokens
/// present in the file are overwritten, so the random rows do not depend on
/// file coverage. The returned matrix is marked frozen.
pub fn load_embeddings(path: &Path, vocab: &Vocab, d: usize, seed: &SeedStream) -> Result<EmbeddingMatrix> {
    let vectors = read_vectors(path, Some(d))?;
    EmbeddingMatrix::from_vectors(&vectors, vocab, d, seed)
}

impl EmbeddingMatrix {
    /// In-memory counterpart of [`load_embeddings`].
    pub fn from_vectors(
        vectors: &[(String, Vec<f64>)],
        vocab: &Vocab,
        d: usize,
        seed: &SeedStream,
    ) -> Result<EmbeddingMatrix> {
        let mut emb = EmbeddingMatrix::random(vocab.len(), d, &seed.derive("embed-init"));
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for (tok, vals) in vectors {
            if vals.len() != d {
                return Err(Error::Shape {
                    op: "from_vectors",
                    lhs: vec![d],
                    rhs: vec![vals.len()],
                });
            }
            if seen.insert(tok.as_str(), ()).is_some() {
                continue;
            }
            if let Some(id) = vocab.get(tok) {
                if id != PAD {
                    emb.matrix.row_mut(id).copy_from_slice(vals);
                }
            }
        }
        emb.matrix.row_mut(PAD).fill(0.0);
        emb.frozen = true;
        Ok(emb)
    }
}

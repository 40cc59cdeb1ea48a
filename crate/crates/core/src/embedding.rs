//! Word-character representation: embedding lookups, the character-bigram
//! window convolution, max-pooling over character positions, and the
//! elementwise-average integration of word and pooled character features.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Activation, Tape, TensorId};
use crate::tensor::Tensor;

/// A trainable `[vocab, dim]` lookup table. Row 0 is the PAD row; it trains
/// like any other row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Seeded uniform `[0, 1)` initialization.
    pub fn random<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        EmbeddingTable { table: Tensor::uniform(vec![vocab, dim], 0.0, 1.0, rng), trainable: true }
    }

    /// Random init overlaid with vectors from a pretrained file; tokens
    /// absent from the file keep their random rows. The random draws happen
    /// for every row regardless, so the seed stream does not depend on file
    /// contents.
    pub fn pretrained<R: Rng>(
        tokens: &[String],
        dim: usize,
        vectors: &HashMap<String, Vec<f64>>,
        rng: &mut R,
    ) -> Self {
        let mut out = EmbeddingTable::random(tokens.len(), dim, rng);
        for (row, token) in tokens.iter().enumerate() {
            if let Some(v) = vectors.get(token) {
                out.table.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(v);
            }
        }
        out
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }
}

/// Parses a word-vector text file: one `token v1 ... v_dim` per line,
/// whitespace separated, UTF-8.
pub fn load_word_vectors(path: impl AsRef<Path>, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let content = String::from_utf8(bytes)
        .map_err(|_| Error::Encoding { path: path.display().to_string() })?;
    let mut vectors = HashMap::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field").to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("bad float '{f}'"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected {dim} values for '{token}', got {}", values.len()),
            });
        }
        vectors.insert(token, values);
    }
    Ok(vectors)
}

/// The character-window convolution filter: weights `[1, window, char_dim,
/// word_dim]`, bias `[word_dim]`, and the activation applied to each output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl ConvFilter {
    /// Seeded uniform `[-0.05, 0.05]` initialization for weights and bias.
    pub fn random<R: Rng>(
        window: usize,
        char_dim: usize,
        word_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        ConvFilter {
            weights: Tensor::uniform(vec![1, window, char_dim, word_dim], -0.05, 0.05, rng),
            bias: Tensor::uniform(vec![word_dim], -0.05, 0.05, rng),
            activation,
        }
    }

    pub fn window(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Embedding dimensions for the word-character module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordCharConfig {
    /// Word embedding dimension (`d_w`).
    pub word_dim: usize,
    /// Character embedding dimension (`d_c`).
    pub char_dim: usize,
    /// Character window width; 2 builds bigram features.
    pub window: usize,
    pub activation: Activation,
}

impl Default for WordCharConfig {
    fn default() -> Self {
        WordCharConfig { word_dim: 60, char_dim: 300, window: 2, activation: Activation::Relu }
    }
}

impl WordCharConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.char_dim == 0 || self.window == 0 {
            return Err(Error::Config(
                "word_dim, char_dim and char_window must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Gathers word embeddings for a flattened `[sentences * words]` id matrix,
/// producing `[sentences, words, dim]`. Backward scatters into table rows.
pub fn lookup_words(
    tape: &mut Tape,
    table: TensorId,
    word_ids: &[usize],
    sentences: usize,
    words: usize,
) -> Result<TensorId> {
    if word_ids.len() != sentences * words {
        return Err(Error::DimensionMismatch {
            op: "lookup_words",
            left: vec![word_ids.len()],
            right: vec![sentences, words],
        });
    }
    let dim = tape.shape(table)[1];
    let flat = tape.gather_rows(table, word_ids)?;
    tape.reshape(flat, vec![sentences, words, dim])
}

/// Gathers character embeddings for a flattened `[sentences * words * chars]`
/// id tensor, producing `[sentences, words, chars, dim]`.
pub fn lookup_chars(
    tape: &mut Tape,
    table: TensorId,
    char_ids: &[usize],
    sentences: usize,
    words: usize,
    chars: usize,
) -> Result<TensorId> {
    if char_ids.len() != sentences * words * chars {
        return Err(Error::DimensionMismatch {
            op: "lookup_chars",
            left: vec![char_ids.len()],
            right: vec![sentences, words, chars],
        });
    }
    let dim = tape.shape(table)[1];
    let flat = tape.gather_rows(table, char_ids)?;
    tape.reshape(flat, vec![sentences, words, chars, dim])
}

/// Character window convolution, `[S,M,N,d_c] -> [S,M,N,d_w]`.
pub fn char_conv2d(
    tape: &mut Tape,
    chars: TensorId,
    filter_weights: TensorId,
    filter_bias: TensorId,
    activation: Activation,
) -> Result<TensorId> {
    tape.char_conv(chars, filter_weights, filter_bias, activation)
}

/// Max over the character axis, `[S,M,N,d_w] -> [S,M,d_w]`.
pub fn char_maxpool(tape: &mut Tape, feature_map: TensorId) -> Result<TensorId> {
    tape.max_pool_chars(feature_map)
}

/// Elementwise average of word embeddings and pooled character features.
/// Backward splits the gradient 0.5/0.5.
pub fn integrate(tape: &mut Tape, word_repr: TensorId, char_repr: TensorId) -> Result<TensorId> {
    if tape.shape(word_repr) != tape.shape(char_repr) {
        return Err(Error::DimensionMismatch {
            op: "integrate",
            left: tape.shape(word_repr).to_vec(),
            right: tape.shape(char_repr).to_vec(),
        });
    }
    let sum = tape.add(word_repr, char_repr)?;
    tape.scale(sum, 0.5)
}

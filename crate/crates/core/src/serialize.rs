//! Versioned binary model container.
//!
//! Layout: 8-byte magic, u32 LE format version, length-prefixed UTF-8 JSON
//! metadata (dimensions, tokenizer, vocabularies), u32 tensor count, then
//! per-tensor records (length-prefixed name, rank, u64 dims, little-endian
//! f64 payload), and a trailing SHA-256 over everything before it.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{ConvFilter, EmbeddingTable, WordCharConfig};
use crate::error::{Error, Result};
use crate::lstm::{LstmParams, OutputHead};
use crate::model::{CharModuleParams, ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::text::{LabelVocab, Lexicon, PipelineConfig, TokenizerMode, Vocabulary};

const MAGIC: &[u8; 8] = b"WCINTENT";
const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Metadata {
    max_words: usize,
    max_chars: usize,
    tokenizer: TokenizerMode,
    lexicon: Option<Vec<String>>,
    wordchar: WordCharConfig,
    hidden: usize,
    use_char_module: bool,
    word_tokens: Vec<String>,
    char_tokens: Vec<String>,
    labels: Vec<String>,
}

impl Metadata {
    fn from_params(params: &ModelParams) -> Self {
        Metadata {
            max_words: params.config.pipeline.max_words,
            max_chars: params.config.pipeline.max_chars,
            tokenizer: params.config.pipeline.tokenizer,
            lexicon: params
                .config
                .pipeline
                .lexicon
                .as_ref()
                .map(|l| l.entries().to_vec()),
            wordchar: params.config.wordchar,
            hidden: params.config.hidden,
            use_char_module: params.config.use_char_module,
            word_tokens: params.word_vocab.tokens().to_vec(),
            char_tokens: params.char_vocab.tokens().to_vec(),
            labels: params.labels.labels().to_vec(),
        }
    }
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    push_str(buf, name);
    buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes the model to `path`. `load_model` returns bit-identical tensors.
pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let metadata = serde_json::to_string(&Metadata::from_params(params))
        .map_err(|e| Error::Malformed(format!("metadata encoding failed: {e}")))?;
    buf.extend_from_slice(&(metadata.len() as u64).to_le_bytes());
    buf.extend_from_slice(metadata.as_bytes());

    let tensors = params.named_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        push_tensor(&mut buf, name, tensor);
    }

    let checksum = Sha256::digest(&buf);
    buf.extend_from_slice(&checksum);
    let path = path.as_ref();
    std::fs::write(path, buf).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Truncated(format!(
                "needed {len} bytes for {what} at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Malformed(format!("{what} is not UTF-8")))
    }
}

fn read_tensor(reader: &mut Reader) -> Result<(String, Tensor)> {
    let name = reader.string("tensor name")?;
    let rank = reader.u32("tensor rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Malformed(format!("tensor '{name}' has rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(reader.u64("tensor dim")? as usize);
    }
    let numel: usize = shape.iter().product();
    let payload = reader.take(numel * 8, "tensor payload")?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let tensor = Tensor::new(shape, data)
        .map_err(|e| Error::Malformed(format!("tensor '{name}': {e}")))?;
    Ok((name, tensor))
}

/// Reads a model written by [`save_model`], verifying version and checksum.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(Error::Truncated(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Malformed("bad magic; not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version { found: version, supported: VERSION });
    }

    let (body, stored_checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let computed = Sha256::digest(body);
    if computed.as_slice() != stored_checksum {
        return Err(Error::Checksum);
    }

    let mut reader = Reader { bytes: body, pos: 12 };
    let meta_len = reader.u64("metadata length")? as usize;
    let meta_bytes = reader.take(meta_len, "metadata")?;
    let metadata: Metadata = serde_json::from_slice(meta_bytes)
        .map_err(|e| Error::Malformed(format!("metadata: {e}")))?;

    let count = reader.u32("tensor count")? as usize;
    let mut tensors: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, tensor) = read_tensor(&mut reader)?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::Malformed(format!("duplicate tensor '{name}'")));
        }
    }
    if reader.pos != body.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after the last tensor",
            body.len() - reader.pos
        )));
    }

    rebuild(metadata, tensors)
}

fn rebuild(metadata: Metadata, mut tensors: HashMap<String, Tensor>) -> Result<ModelParams> {
    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
        let tensor = tensors
            .remove(name)
            .ok_or_else(|| Error::Malformed(format!("missing tensor '{name}'")))?;
        if tensor.shape() != shape {
            return Err(Error::Malformed(format!(
                "tensor '{name}' has shape {:?}, expected {shape:?}",
                tensor.shape()
            )));
        }
        Ok(tensor)
    };

    let word_vocab = Vocabulary::from_token_list(metadata.word_tokens)?;
    let char_vocab = Vocabulary::from_token_list(metadata.char_tokens)?;
    let labels = LabelVocab::from_label_list(metadata.labels)?;
    let (d_w, d_c) = (metadata.wordchar.word_dim, metadata.wordchar.char_dim);
    let hidden = metadata.hidden;
    let classes = labels.len();
    let joined = hidden + d_w;

    let word_table =
        EmbeddingTable { table: take("word_table", &[word_vocab.len(), d_w])?, trainable: true };
    let char_module = if metadata.use_char_module {
        Some(CharModuleParams {
            table: EmbeddingTable {
                table: take("char_table", &[char_vocab.len(), d_c])?,
                trainable: true,
            },
            filter: ConvFilter {
                weights: take("conv_weights", &[1, metadata.wordchar.window, d_c, d_w])?,
                bias: take("conv_bias", &[d_w])?,
                activation: metadata.wordchar.activation,
            },
        })
    } else {
        None
    };
    let lstm = LstmParams {
        w_forget: take("lstm_w_forget", &[joined, hidden])?,
        w_input: take("lstm_w_input", &[joined, hidden])?,
        w_cell: take("lstm_w_cell", &[joined, hidden])?,
        w_output: take("lstm_w_output", &[joined, hidden])?,
        b_forget: take("lstm_b_forget", &[hidden])?,
        b_input: take("lstm_b_input", &[hidden])?,
        b_cell: take("lstm_b_cell", &[hidden])?,
        b_output: take("lstm_b_output", &[hidden])?,
        hidden,
    };
    let head = OutputHead {
        weight: take("head_weight", &[hidden, classes])?,
        bias: take("head_bias", &[classes])?,
    };
    if !tensors.is_empty() {
        let mut names: Vec<&String> = tensors.keys().collect();
        names.sort();
        return Err(Error::Malformed(format!("unexpected tensors: {names:?}")));
    }

    let config = ModelConfig {
        pipeline: PipelineConfig {
            max_words: metadata.max_words,
            max_chars: metadata.max_chars,
            tokenizer: metadata.tokenizer,
            lexicon: metadata.lexicon.map(Lexicon::new),
        },
        wordchar: metadata.wordchar,
        hidden,
        use_char_module: metadata.use_char_module,
    };
    config.validate()?;

    Ok(ModelParams {
        config,
        word_vocab,
        char_vocab,
        labels,
        word_table,
        char_module,
        lstm,
        head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{predict_texts, ModelConfig};
    use crate::tape::Activation;
    use crate::text::{build_vocabularies, LabeledExample, TokenizerMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_like_model(use_chars: bool) -> ModelParams {
        let corpus = vec![
            LabeledExample::new("weather", "天气 好"),
            LabeledExample::new("music", "放 音乐"),
        ];
        let config = ModelConfig {
            pipeline: crate::text::PipelineConfig {
                max_words: 4,
                max_chars: 3,
                tokenizer: TokenizerMode::Whitespace,
                lexicon: None,
            },
            wordchar: WordCharConfig {
                word_dim: 5,
                char_dim: 4,
                window: 2,
                activation: Activation::Tanh,
            },
            hidden: 6,
            use_char_module: use_chars,
        };
        let (w, c, l) = build_vocabularies(&corpus, &config.pipeline).unwrap();
        ModelParams::init(config, w, c, l, 31, None).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_and_preserves_predictions() {
        for use_chars in [true, false] {
            let model = trained_like_model(use_chars);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.bin");
            save_model(&model, &path).unwrap();
            let loaded = load_model(&path).unwrap();

            for ((na, ta), (nb, tb)) in
                model.named_tensors().iter().zip(loaded.named_tensors())
            {
                assert_eq!(na, &nb);
                assert_eq!(ta.shape(), tb.shape());
                let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b, "tensor {na} must round-trip bit-exactly");
            }
            assert_eq!(model.word_vocab, loaded.word_vocab);
            assert_eq!(model.char_vocab, loaded.char_vocab);
            assert_eq!(model.labels, loaded.labels);

            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let chars = ["天", "气", "好", "放", "音", "乐", "新"];
            for _ in 0..100 {
                let len = rng.gen_range(1..5);
                let text: String = (0..len)
                    .map(|_| chars[rng.gen_range(0..chars.len())])
                    .collect::<Vec<_>>()
                    .join(" ");
                let (a, pa) = predict_texts(&model, std::slice::from_ref(&text)).unwrap();
                let (b, pb) = predict_texts(&loaded, &[text]).unwrap();
                assert_eq!(a, b);
                assert_eq!(pa.data(), pb.data());
            }
        }
    }

    #[test]
    fn corrupting_one_payload_byte_fails_the_checksum() {
        let model = trained_like_model(true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Checksum)));
    }

    #[test]
    fn future_version_tag_is_a_version_error() {
        let model = trained_like_model(true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::Version { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn truncated_file_is_reported_as_truncated() {
        let model = trained_like_model(true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Truncated(_))));
    }

    #[test]
    fn wrong_magic_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        std::fs::write(&path, vec![0u8; 64]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Malformed(_))));
    }
}

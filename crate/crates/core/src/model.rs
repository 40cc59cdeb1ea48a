//! Whole-model parameter set, seeded initialization, and forward-graph
//! assembly for batches of encoded sentences.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{
    char_conv2d, char_maxpool, integrate, lookup_chars, lookup_words, ConvFilter, EmbeddingTable,
    WordCharConfig,
};
use crate::error::{Error, Result};
use crate::lstm::{classify, LstmParamIds, LstmParams, OutputHead};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;
use crate::text::{
    encode, encode_text, EncodedExample, LabelVocab, LabeledExample, PipelineConfig, Vocabulary,
};

/// Architecture-level configuration shared by training and inference.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub pipeline: PipelineConfig,
    pub wordchar: WordCharConfig,
    pub hidden: usize,
    /// `false` selects the word-only baseline: no character table, no
    /// convolution, the word embedding feeds the classifier directly.
    pub use_char_module: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            pipeline: PipelineConfig::default(),
            wordchar: WordCharConfig::default(),
            hidden: 512,
            use_char_module: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.wordchar.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// Character-path parameters, absent in the word-only baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CharModuleParams {
    pub table: EmbeddingTable,
    pub filter: ConvFilter,
}

/// Every trainable array plus the vocabularies needed to apply them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub word_vocab: Vocabulary,
    pub char_vocab: Vocabulary,
    pub labels: LabelVocab,
    pub word_table: EmbeddingTable,
    pub char_module: Option<CharModuleParams>,
    pub lstm: LstmParams,
    pub head: OutputHead,
}

impl ModelParams {
    /// Seeded initialization. Draw order is fixed (word table, char table,
    /// conv filter, gate weights, head) so a seed fully determines every
    /// parameter. `pretrained_words` overlays file vectors onto the word
    /// table without consuming different randomness.
    pub fn init(
        config: ModelConfig,
        word_vocab: Vocabulary,
        char_vocab: Vocabulary,
        labels: LabelVocab,
        seed: u64,
        pretrained_words: Option<&HashMap<String, Vec<f64>>>,
    ) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Data("label vocabulary is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_w = config.wordchar.word_dim;

        let word_table = match pretrained_words {
            Some(vectors) => {
                EmbeddingTable::pretrained(word_vocab.tokens(), d_w, vectors, &mut rng)
            }
            None => EmbeddingTable::random(word_vocab.len(), d_w, &mut rng),
        };
        let char_module = if config.use_char_module {
            let table = EmbeddingTable::random(char_vocab.len(), config.wordchar.char_dim, &mut rng);
            let filter = ConvFilter::random(
                config.wordchar.window,
                config.wordchar.char_dim,
                d_w,
                config.wordchar.activation,
                &mut rng,
            );
            Some(CharModuleParams { table, filter })
        } else {
            None
        };
        let lstm = LstmParams::random(d_w, config.hidden, &mut rng);
        let head = OutputHead::random(config.hidden, labels.len(), &mut rng);

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

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Stable name -> tensor listing used by the optimizer, gradient
    /// plumbing, and the model file format.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out: Vec<(&'static str, &Tensor)> =
            vec![("word_table", &self.word_table.table)];
        if let Some(cm) = &self.char_module {
            out.push(("char_table", &cm.table.table));
            out.push(("conv_weights", &cm.filter.weights));
            out.push(("conv_bias", &cm.filter.bias));
        }
        out.extend([
            ("lstm_w_forget", &self.lstm.w_forget),
            ("lstm_w_input", &self.lstm.w_input),
            ("lstm_w_cell", &self.lstm.w_cell),
            ("lstm_w_output", &self.lstm.w_output),
            ("lstm_b_forget", &self.lstm.b_forget),
            ("lstm_b_input", &self.lstm.b_input),
            ("lstm_b_cell", &self.lstm.b_cell),
            ("lstm_b_output", &self.lstm.b_output),
            ("head_weight", &self.head.weight),
            ("head_bias", &self.head.bias),
        ]);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out: Vec<(&'static str, &mut Tensor)> =
            vec![("word_table", &mut self.word_table.table)];
        if let Some(cm) = &mut self.char_module {
            out.push(("char_table", &mut cm.table.table));
            out.push(("conv_weights", &mut cm.filter.weights));
            out.push(("conv_bias", &mut cm.filter.bias));
        }
        out.extend([
            ("lstm_w_forget", &mut self.lstm.w_forget),
            ("lstm_w_input", &mut self.lstm.w_input),
            ("lstm_w_cell", &mut self.lstm.w_cell),
            ("lstm_w_output", &mut self.lstm.w_output),
            ("lstm_b_forget", &mut self.lstm.b_forget),
            ("lstm_b_input", &mut self.lstm.b_input),
            ("lstm_b_cell", &mut self.lstm.b_cell),
            ("lstm_b_output", &mut self.lstm.b_output),
            ("head_weight", &mut self.head.weight),
            ("head_bias", &mut self.head.bias),
        ]);
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn encode_example(&self, example: &LabeledExample) -> Result<EncodedExample> {
        encode(example, &self.word_vocab, &self.char_vocab, &self.labels, &self.config.pipeline)
    }

    pub fn encode_text(&self, text: &str) -> Result<EncodedExample> {
        encode_text(text, &self.word_vocab, &self.char_vocab, &self.config.pipeline)
    }
}

/// A mini-batch in id form. Word/char id matrices are clipped from
/// `max_words` columns down to the longest true length in the batch: the
/// dropped columns are all PAD and the masked readout never consults them,
/// so the clipping is exact.
#[derive(Debug, Clone)]
pub struct Batch {
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<usize>,
    pub true_lengths: Vec<usize>,
    pub labels: Option<Vec<usize>>,
    pub sentences: usize,
    pub steps: usize,
    pub chars_per_word: usize,
}

impl Batch {
    pub fn from_encoded(examples: &[EncodedExample], pipeline: &PipelineConfig) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Usage("cannot build an empty batch".into()));
        }
        let m = pipeline.max_words;
        let n = pipeline.max_chars;
        let steps = examples.iter().map(|e| e.true_length).max().expect("non-empty");
        let sentences = examples.len();

        let mut word_ids = Vec::with_capacity(sentences * steps);
        let mut char_ids = Vec::with_capacity(sentences * steps * n);
        let mut true_lengths = Vec::with_capacity(sentences);
        let mut labels = Vec::new();
        let mut have_labels = true;
        for e in examples {
            if e.word_ids.len() != m || e.char_ids.len() != m * n {
                return Err(Error::DimensionMismatch {
                    op: "batch",
                    left: vec![e.word_ids.len(), e.char_ids.len()],
                    right: vec![m, m * n],
                });
            }
            word_ids.extend_from_slice(&e.word_ids[..steps]);
            char_ids.extend_from_slice(&e.char_ids[..steps * n]);
            true_lengths.push(e.true_length);
            match e.label_id {
                Some(id) => labels.push(id),
                None => have_labels = false,
            }
        }
        Ok(Batch {
            word_ids,
            char_ids,
            true_lengths,
            labels: if have_labels { Some(labels) } else { None },
            sentences,
            steps,
            chars_per_word: n,
        })
    }
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    /// `(name, id)` for every trainable tensor, in `named_tensors` order.
    pub param_ids: Vec<(&'static str, TensorId)>,
    pub logits: TensorId,
    pub probabilities: TensorId,
    /// Present when the batch carried labels.
    pub loss: Option<TensorId>,
}

/// Records the full forward pass on `tape`: lookups, the character module
/// when enabled, the recurrent classifier, and (with labels) the loss.
pub fn build_forward(tape: &mut Tape, params: &ModelParams, batch: &Batch) -> Result<Forward> {
    let d_w = params.config.wordchar.word_dim;
    let (s_n, steps, n) = (batch.sentences, batch.steps, batch.chars_per_word);

    let word_table = tape.parameter(&params.word_table.table);
    let mut param_ids = vec![("word_table", word_table)];

    let word_repr = lookup_words(tape, word_table, &batch.word_ids, s_n, steps)?;

    let integrated = match &params.char_module {
        Some(cm) => {
            let char_table = tape.parameter(&cm.table.table);
            let conv_w = tape.parameter(&cm.filter.weights);
            let conv_b = tape.parameter(&cm.filter.bias);
            param_ids.push(("char_table", char_table));
            param_ids.push(("conv_weights", conv_w));
            param_ids.push(("conv_bias", conv_b));

            let char_repr = lookup_chars(tape, char_table, &batch.char_ids, s_n, steps, n)?;
            let feature_map = char_conv2d(tape, char_repr, conv_w, conv_b, cm.filter.activation)?;
            let pooled = char_maxpool(tape, feature_map)?;
            integrate(tape, word_repr, pooled)?
        }
        None => word_repr,
    };
    debug_assert_eq!(tape.shape(integrated), &[s_n, steps, d_w]);

    let lstm_ids = LstmParamIds::insert(tape, &params.lstm);
    let head_w = tape.parameter(&params.head.weight);
    let head_b = tape.parameter(&params.head.bias);
    param_ids.extend([
        ("lstm_w_forget", lstm_ids.w_forget),
        ("lstm_w_input", lstm_ids.w_input),
        ("lstm_w_cell", lstm_ids.w_cell),
        ("lstm_w_output", lstm_ids.w_output),
        ("lstm_b_forget", lstm_ids.b_forget),
        ("lstm_b_input", lstm_ids.b_input),
        ("lstm_b_cell", lstm_ids.b_cell),
        ("lstm_b_output", lstm_ids.b_output),
        ("head_weight", head_w),
        ("head_bias", head_b),
    ]);

    let out = classify(tape, integrated, &batch.true_lengths, &lstm_ids, head_w, head_b)?;

    let loss = match &batch.labels {
        Some(labels) => Some(tape.softmax_cross_entropy(out.logits, labels)?),
        None => None,
    };

    Ok(Forward { param_ids, logits: out.logits, probabilities: out.probabilities, loss })
}

/// Inference over pre-encoded examples: class ids plus the probability rows.
pub fn predict_encoded(params: &ModelParams, examples: &[EncodedExample]) -> Result<(Vec<usize>, Tensor)> {
    let mut batch = Batch::from_encoded(examples, &params.config.pipeline)?;
    batch.labels = None; // inference ignores labels even if present
    let mut tape = Tape::new();
    let forward = build_forward(&mut tape, params, &batch)?;
    let probabilities = tape.tensor(forward.probabilities);
    let classes = crate::lstm::predict(&probabilities);
    Ok((classes, probabilities))
}

/// Inference straight from raw text lines.
pub fn predict_texts(params: &ModelParams, texts: &[String]) -> Result<(Vec<usize>, Tensor)> {
    let encoded: Vec<EncodedExample> =
        texts.iter().map(|t| params.encode_text(t)).collect::<Result<_>>()?;
    predict_encoded(params, &encoded)
}

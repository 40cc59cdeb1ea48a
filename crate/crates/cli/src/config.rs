//! Flat `key = value` run configuration with flag overrides.
//!
//! Precedence: command-line flag > config file > built-in default. Unknown
//! keys are rejected up front, before any work starts.

use std::path::{Path, PathBuf};

use intent_core::embedding::WordCharConfig;
use intent_core::error::{Error, Result};
use intent_core::model::ModelConfig;
use intent_core::tape::Activation;
use intent_core::text::{Lexicon, PipelineConfig, TokenizerMode};
use intent_core::train::{Optimizer, TrainConfig};

/// Merged view of every tunable the commands accept.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub max_words: usize,
    pub max_chars: usize,
    /// `None` means: dictionary-greedy when a lexicon is given, otherwise
    /// per-character.
    pub tokenizer: Option<TokenizerMode>,
    pub lexicon: Option<PathBuf>,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_window: usize,
    pub conv_activation: Activation,
    pub hidden: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub eval_split: f64,
    pub clip_norm: Option<f64>,
    pub word_embeddings: Option<PathBuf>,
    pub baseline_word_only: bool,
    pub members: usize,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            max_words: model.pipeline.max_words,
            max_chars: model.pipeline.max_chars,
            tokenizer: None,
            lexicon: None,
            word_dim: model.wordchar.word_dim,
            char_dim: model.wordchar.char_dim,
            char_window: model.wordchar.window,
            conv_activation: model.wordchar.activation,
            hidden: model.hidden,
            batch_size: train.batch_size,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            optimizer: train.optimizer,
            seed: train.seed,
            eval_split: train.eval_split,
            clip_norm: train.clip_norm,
            word_embeddings: None,
            baseline_word_only: false,
            members: 3,
            jobs: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse value '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("key '{key}': expected a boolean, got '{other}'"))),
    }
}

impl RunConfig {
    /// Applies one config file on top of the current values.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
        let content = String::from_utf8(bytes)
            .map_err(|_| Error::Encoding { path: path.display().to_string() })?;
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "max_words" => self.max_words = parse(key, value)?,
            "max_chars" => self.max_chars = parse(key, value)?,
            "tokenizer" => self.tokenizer = Some(value.parse()?),
            "lexicon" => self.lexicon = Some(PathBuf::from(value)),
            "word_dim" => self.word_dim = parse(key, value)?,
            "char_dim" => self.char_dim = parse(key, value)?,
            "char_window" => self.char_window = parse(key, value)?,
            "conv_activation" => self.conv_activation = value.parse()?,
            "hidden" => self.hidden = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "eval_split" => self.eval_split = parse(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "word_embeddings" => self.word_embeddings = Some(PathBuf::from(value)),
            "baseline_word_only" => self.baseline_word_only = parse_bool(key, value)?,
            "members" => self.members = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Resolves the architecture config, loading the lexicon file when one
    /// is named. Validates everything before any training work.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let lexicon = match &self.lexicon {
            Some(path) => {
                let lexicon = Lexicon::from_file(path)?;
                if lexicon.is_empty() {
                    return Err(Error::Config(format!(
                        "lexicon file {} holds no words",
                        path.display()
                    )));
                }
                Some(lexicon)
            }
            None => None,
        };
        let tokenizer = self.tokenizer.unwrap_or(if lexicon.is_some() {
            TokenizerMode::DictionaryGreedy
        } else {
            TokenizerMode::PerCharacter
        });
        let config = ModelConfig {
            pipeline: PipelineConfig {
                max_words: self.max_words,
                max_chars: self.max_chars,
                tokenizer,
                lexicon,
            },
            wordchar: WordCharConfig {
                word_dim: self.word_dim,
                char_dim: self.char_dim,
                window: self.char_window,
                activation: self.conv_activation,
            },
            hidden: self.hidden,
            use_char_module: !self.baseline_word_only,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed,
            eval_split: self.eval_split,
            clip_norm: self.clip_norm,
            ..TrainConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

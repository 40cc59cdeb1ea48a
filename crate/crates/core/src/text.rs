//! Dataset ingestion, tokenization, vocabulary construction, and conversion
//! of sentences into fixed-length word-id and character-id sequences.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// One dataset record: raw query text plus its intent label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub label: String,
}

impl LabeledExample {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        LabeledExample { text: text.into(), label: label.into() }
    }
}

/// Loads a TSV dataset: one `label<TAB>text` record per line, UTF-8, blank
/// lines skipped. Order-preserving.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let content = String::from_utf8(bytes)
        .map_err(|_| Error::Encoding { path: path.display().to_string() })?;
    let mut examples = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: "expected `label<TAB>text`".into(),
        })?;
        let label = label.trim();
        let text = text.trim();
        if label.is_empty() || text.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: "label and text must be non-empty".into(),
            });
        }
        examples.push(LabeledExample::new(label, text));
    }
    Ok(examples)
}

/// How raw text is split into word tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenizerMode {
    /// Longest-match-first against a lexicon, single characters as fallback.
    DictionaryGreedy,
    /// One token per Unicode scalar, whitespace dropped.
    PerCharacter,
    /// Split on whitespace runs (for pre-segmented corpora).
    Whitespace,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dictionary-greedy" => Ok(TokenizerMode::DictionaryGreedy),
            "per-character" => Ok(TokenizerMode::PerCharacter),
            "whitespace" => Ok(TokenizerMode::Whitespace),
            other => Err(Error::Config(format!(
                "unknown tokenizer '{other}' (expected dictionary-greedy, per-character or whitespace)"
            ))),
        }
    }
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenizerMode::DictionaryGreedy => "dictionary-greedy",
            TokenizerMode::PerCharacter => "per-character",
            TokenizerMode::Whitespace => "whitespace",
        };
        f.write_str(s)
    }
}

/// Word list backing the greedy tokenizer.
#[derive(Debug, Clone)]
pub struct Lexicon {
    words: HashSet<String>,
    entries: Vec<String>,
    longest_chars: usize,
}

impl Lexicon {
    /// Builds from a word list; duplicates and empty entries are dropped,
    /// first-occurrence order is kept for round-tripping.
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let mut set = HashSet::new();
        let mut entries = Vec::new();
        let mut longest = 0;
        for word in words {
            let word = word.trim().to_string();
            if word.is_empty() || set.contains(&word) {
                continue;
            }
            longest = longest.max(word.chars().count());
            set.insert(word.clone());
            entries.push(word);
        }
        Lexicon { words: set, entries, longest_chars: longest }
    }

    /// One word per line, UTF-8, blank lines skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
        let content = String::from_utf8(bytes)
            .map_err(|_| Error::Encoding { path: path.display().to_string() })?;
        Ok(Lexicon::new(content.lines().map(str::to_string)))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Splits `text` into word tokens. Dictionary-greedy mode requires a
/// lexicon; whitespace never survives as token content.
pub fn tokenize(text: &str, mode: TokenizerMode, lexicon: Option<&Lexicon>) -> Result<Vec<String>> {
    match mode {
        TokenizerMode::PerCharacter => {
            Ok(text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect())
        }
        TokenizerMode::Whitespace => Ok(text.split_whitespace().map(str::to_string).collect()),
        TokenizerMode::DictionaryGreedy => {
            let lexicon = lexicon.ok_or_else(|| {
                Error::Config("dictionary-greedy tokenizer requires a lexicon".into())
            })?;
            let chars: Vec<char> = text.chars().collect();
            let mut tokens = Vec::new();
            let mut pos = 0;
            while pos < chars.len() {
                if chars[pos].is_whitespace() {
                    pos += 1;
                    continue;
                }
                let limit = lexicon.longest_chars.min(chars.len() - pos);
                let mut matched = 0;
                for len in (2..=limit).rev() {
                    let candidate: String = chars[pos..pos + len].iter().collect();
                    if lexicon.contains(&candidate) {
                        tokens.push(candidate);
                        matched = len;
                        break;
                    }
                }
                if matched == 0 {
                    tokens.push(chars[pos].to_string());
                    matched = 1;
                }
                pos += matched;
            }
            Ok(tokens)
        }
    }
}

/// Token ↔ id maps with PAD=0 and UNK=1 reserved. Ids are dense and, for a
/// fixed token stream, assigned in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let mut v = Vocabulary { token_to_id: HashMap::new(), id_to_token: Vec::new() };
        v.insert(PAD_TOKEN.to_string());
        v.insert(UNK_TOKEN.to_string());
        v
    }

    fn insert(&mut self, token: String) {
        if !self.token_to_id.contains_key(&token) {
            self.token_to_id.insert(token.clone(), self.id_to_token.len());
            self.id_to_token.push(token);
        }
    }

    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary::with_reserved();
        for t in tokens {
            v.insert(t.as_ref().to_string());
        }
        v
    }

    /// Reconstructs a vocabulary from its full id-ordered token list
    /// (as stored in a model file).
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Malformed("vocabulary must start with PAD and UNK".into()));
        }
        let mut map = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if map.insert(t.clone(), id).is_some() {
                return Err(Error::Malformed(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Vocabulary { token_to_id: map, id_to_token: tokens })
    }

    /// Id for a token, UNK when absent.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Intent label ↔ id map. Ids follow the lexicographic order of the label
/// names so rebuilding from the same data is deterministic. No reserved ids:
/// every id is a real class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    label_to_id: HashMap<String, usize>,
    id_to_label: Vec<String>,
}

impl LabelVocab {
    pub fn build<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut unique: Vec<String> =
            labels.into_iter().map(|l| l.as_ref().to_string()).collect();
        unique.sort();
        unique.dedup();
        LabelVocab::from_sorted(unique)
    }

    fn from_sorted(id_to_label: Vec<String>) -> Self {
        let label_to_id =
            id_to_label.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelVocab { label_to_id, id_to_label }
    }

    pub fn from_label_list(labels: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::Malformed(format!("duplicate label '{l}'")));
            }
        }
        Ok(LabelVocab::from_sorted(labels))
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.label_to_id.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.id_to_label.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.id_to_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_label.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.id_to_label
    }
}

/// Sentence/word length limits and the tokenizer choice.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Fixed sentence length in words (`M`).
    pub max_words: usize,
    /// Fixed word length in characters (`N`).
    pub max_chars: usize,
    pub tokenizer: TokenizerMode,
    pub lexicon: Option<Lexicon>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_words: 26,
            max_chars: 5,
            tokenizer: TokenizerMode::PerCharacter,
            lexicon: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_words == 0 {
            return Err(Error::Config("max_words must be >= 1".into()));
        }
        if self.max_chars == 0 {
            return Err(Error::Config("max_chars must be >= 1".into()));
        }
        if self.tokenizer == TokenizerMode::DictionaryGreedy && self.lexicon.is_none() {
            return Err(Error::Config("dictionary-greedy tokenizer requires a lexicon".into()));
        }
        Ok(())
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        tokenize(text, self.tokenizer, self.lexicon.as_ref())
    }
}

/// A sentence converted to padded id form: `max_words` word ids, a
/// `max_words × max_chars` character id matrix, and the pre-padding length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub word_ids: Vec<usize>,
    /// Row-major `[max_words, max_chars]`.
    pub char_ids: Vec<usize>,
    pub true_length: usize,
    pub label_id: Option<usize>,
}

/// Builds word/char/label vocabularies from the training split only.
pub fn build_vocabularies(
    train: &[LabeledExample],
    config: &PipelineConfig,
) -> Result<(Vocabulary, Vocabulary, LabelVocab)> {
    if train.is_empty() {
        return Err(Error::Usage("cannot build vocabularies from an empty training set".into()));
    }
    config.validate()?;
    let mut words = Vocabulary::with_reserved();
    let mut chars = Vocabulary::with_reserved();
    for example in train {
        for token in config.tokenize(&example.text)? {
            for c in token.chars() {
                chars.insert(c.to_string());
            }
            words.insert(token);
        }
    }
    let labels = LabelVocab::build(train.iter().map(|e| e.label.as_str()));
    Ok((words, chars, labels))
}

/// Encodes unlabeled text. Unseen tokens map to UNK; output lengths are
/// always exactly `max_words` and `max_words × max_chars`.
pub fn encode_text(
    text: &str,
    words: &Vocabulary,
    chars: &Vocabulary,
    config: &PipelineConfig,
) -> Result<EncodedExample> {
    let tokens = config.tokenize(text)?;
    if tokens.is_empty() {
        return Err(Error::Data(format!("text yields no tokens: '{text}'")));
    }
    let m = config.max_words;
    let n = config.max_chars;
    let true_length = tokens.len().min(m);

    let mut word_ids = vec![PAD_ID; m];
    let mut char_ids = vec![PAD_ID; m * n];
    for (i, token) in tokens.iter().take(true_length).enumerate() {
        word_ids[i] = words.id(token);
        for (j, c) in token.chars().take(n).enumerate() {
            char_ids[i * n + j] = chars.id(&c.to_string());
        }
    }
    Ok(EncodedExample { word_ids, char_ids, true_length, label_id: None })
}

/// Encodes a labeled example; the label must exist in the label vocabulary.
pub fn encode(
    example: &LabeledExample,
    words: &Vocabulary,
    chars: &Vocabulary,
    labels: &LabelVocab,
    config: &PipelineConfig,
) -> Result<EncodedExample> {
    let label_id = labels
        .id(&example.label)
        .ok_or_else(|| Error::Data(format!("unseen label '{}'", example.label)))?;
    let mut encoded = encode_text(&example.text, words, chars, config)?;
    encoded.label_id = Some(label_id);
    Ok(encoded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_temp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_dataset_parses_label_tab_text() {
        let f = write_temp("weather\t明天天气\n".as_bytes());
        let data = load_dataset(f.path()).unwrap();
        assert_eq!(data, vec![LabeledExample::new("weather", "明天天气")]);
    }

    #[test]
    fn load_dataset_empty_file_is_empty_list() {
        let f = write_temp(b"");
        assert!(load_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn load_dataset_keeps_everything_after_first_tab() {
        let f = write_temp("music\t放首歌\t再来一首\n".as_bytes());
        let data = load_dataset(f.path()).unwrap();
        assert_eq!(data[0].text, "放首歌\t再来一首");
    }

    #[test]
    fn load_dataset_skips_blank_lines_and_reports_malformed_ones() {
        let f = write_temp("weather\t明天天气\n\n  \nmusic 放首歌\n".as_bytes());
        let err = load_dataset(f.path()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn load_dataset_rejects_non_utf8() {
        let f = write_temp(&[0x61, 0x09, 0xff, 0xfe, 0x0a]);
        assert!(matches!(load_dataset(f.path()), Err(Error::Encoding { .. })));
    }

    #[test]
    fn per_character_tokenizer_splits_scalars() {
        let tokens = tokenize("天气", TokenizerMode::PerCharacter, None).unwrap();
        assert_eq!(tokens, vec!["天", "气"]);
        let tokens = tokenize("天 气\t好", TokenizerMode::PerCharacter, None).unwrap();
        assert_eq!(tokens, vec!["天", "气", "好"]);
    }

    #[test]
    fn greedy_tokenizer_prefers_longest_match() {
        let lex = Lexicon::new(["天气".to_string(), "天气预报".to_string()]);
        let tokens = tokenize("天气好", TokenizerMode::DictionaryGreedy, Some(&lex)).unwrap();
        assert_eq!(tokens, vec!["天气", "好"]);
        let tokens = tokenize("天气预报好", TokenizerMode::DictionaryGreedy, Some(&lex)).unwrap();
        assert_eq!(tokens, vec!["天气预报", "好"]);
    }

    #[test]
    fn greedy_tokenizer_without_lexicon_is_config_error() {
        assert!(matches!(
            tokenize("天气", TokenizerMode::DictionaryGreedy, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn whitespace_tokenizer_collapses_runs() {
        let tokens = tokenize("hello  world", TokenizerMode::Whitespace, None).unwrap();
        assert_eq!(tokens, vec!["hello", "world"]);
    }

    #[test]
    fn vocabularies_from_single_example() {
        let train = vec![LabeledExample::new("weather", "天气")];
        let config = PipelineConfig::default();
        let (words, chars, labels) = build_vocabularies(&train, &config).unwrap();
        assert_eq!(words.tokens(), &[PAD_TOKEN, UNK_TOKEN, "天", "气"]);
        assert_eq!(chars.tokens(), &[PAD_TOKEN, UNK_TOKEN, "天", "气"]);
        assert_eq!(labels.labels(), &["weather"]);
    }

    #[test]
    fn duplicate_labels_share_one_id() {
        let train = vec![
            LabeledExample::new("weather", "天气"),
            LabeledExample::new("weather", "下雨"),
            LabeledExample::new("music", "唱歌"),
        ];
        let (_, _, labels) = build_vocabularies(&train, &PipelineConfig::default()).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels.id("music"), Some(0)); // lexicographic order
        assert_eq!(labels.id("weather"), Some(1));
    }

    #[test]
    fn rebuilding_vocabularies_is_deterministic() {
        let train = vec![
            LabeledExample::new("b", "明天天气怎么样"),
            LabeledExample::new("a", "放一首歌"),
        ];
        let config = PipelineConfig::default();
        let first = build_vocabularies(&train, &config).unwrap();
        let second = build_vocabularies(&train, &config).unwrap();
        assert_eq!(first.0, second.0);
        assert_eq!(first.1, second.1);
        assert_eq!(first.2, second.2);
    }

    fn toy_setup() -> (Vocabulary, Vocabulary, LabelVocab, PipelineConfig) {
        let train = vec![
            LabeledExample::new("weather", "天气 预报"),
            LabeledExample::new("music", "唱歌"),
        ];
        let config = PipelineConfig {
            max_words: 4,
            max_chars: 3,
            tokenizer: TokenizerMode::Whitespace,
            lexicon: None,
        };
        let (w, c, l) = build_vocabularies(&train, &config).unwrap();
        (w, c, l, config)
    }

    #[test]
    fn encode_pads_to_fixed_lengths() {
        let (w, c, l, config) = toy_setup();
        let e = encode(&LabeledExample::new("weather", "天气 预报"), &w, &c, &l, &config).unwrap();
        assert_eq!(e.word_ids.len(), 4);
        assert_eq!(e.char_ids.len(), 4 * 3);
        assert_eq!(e.true_length, 2);
        assert_eq!(e.word_ids[2], PAD_ID);
        assert_eq!(e.word_ids[3], PAD_ID);
        assert_eq!(e.label_id, Some(l.id("weather").unwrap()));
    }

    #[test]
    fn encode_truncates_and_records_capped_length() {
        let (w, c, l, mut config) = toy_setup();
        config.max_words = 1;
        let e = encode(&LabeledExample::new("weather", "天气 预报"), &w, &c, &l, &config).unwrap();
        assert_eq!(e.word_ids.len(), 1);
        assert_eq!(e.true_length, 1);
    }

    #[test]
    fn unseen_word_maps_to_unk_but_chars_still_resolve() {
        let (w, c, _, config) = toy_setup();
        // "天歌" never appeared as a word, but both characters are known.
        let e = encode_text("天歌", &w, &c, &config).unwrap();
        assert_eq!(e.word_ids[0], UNK_ID);
        assert_ne!(e.char_ids[0], UNK_ID);
        assert_ne!(e.char_ids[1], UNK_ID);
    }

    #[test]
    fn shared_characters_share_ids() {
        let (_, c, _, _) = toy_setup();
        // 天 appears in 天气; a different word containing 天 gets the same id.
        let id_a = c.id("天");
        let train2 = vec![LabeledExample::new("x", "天空 天气")];
        let config = PipelineConfig {
            tokenizer: TokenizerMode::Whitespace,
            ..PipelineConfig::default()
        };
        let (_, c2, _) = build_vocabularies(&train2, &config).unwrap();
        assert_eq!(c2.id("天"), c2.id("天"));
        assert_ne!(id_a, UNK_ID);
    }

    #[test]
    fn unseen_label_is_a_data_error() {
        let (w, c, l, config) = toy_setup();
        let err =
            encode(&LabeledExample::new("flights", "天气"), &w, &c, &l, &config).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    proptest! {
        #[test]
        fn encode_always_produces_exact_shapes(
            text in "[天气预报唱歌好雨云 ]{1,40}",
            m in 1usize..8,
            n in 1usize..5,
        ) {
            let (w, c, _, mut config) = toy_setup();
            config.max_words = m;
            config.max_chars = n;
            config.tokenizer = TokenizerMode::PerCharacter;
            if let Ok(e) = encode_text(&text, &w, &c, &config) {
                prop_assert_eq!(e.word_ids.len(), m);
                prop_assert_eq!(e.char_ids.len(), m * n);
                prop_assert!(e.true_length >= 1 && e.true_length <= m);
                for i in e.true_length..m {
                    prop_assert_eq!(e.word_ids[i], PAD_ID);
                }
            }
        }

        #[test]
        fn decoding_word_ids_round_trips_in_vocab_sentences(rounds in 1usize..5) {
            // sentences built only from known words, shorter than max_words
            let (w, c, _, config) = toy_setup();
            let words = ["天气", "预报", "唱歌"];
            let text = words.iter().cycle().take(rounds).cloned().collect::<Vec<_>>().join(" ");
            let e = encode_text(&text, &w, &c, &config).unwrap();
            let decoded: Vec<&str> = e.word_ids[..e.true_length]
                .iter()
                .map(|&id| w.token(id).unwrap())
                .collect();
            let expected: Vec<&str> = text.split_whitespace().take(config.max_words).collect();
            prop_assert_eq!(decoded, expected);
        }
    }
}

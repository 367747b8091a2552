//! Word-level tokenizer and model-input assembly.
//!
//! Words are whitespace-delimited, with the three special-token literals split
//! out even when glued to neighbouring text (`[TAB][ROW][CELL]` is three
//! tokens). The vocabulary is ordered by descending frequency, ties broken
//! lexicographically, after seven reserved ids.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{
    assign_indices, augment_position_strings, serialize_format, serialize_special, IndexCaps, RenderFormat,
    SpecialToken, StructuralIndexMap, Table, TableError, TokenRole,
};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const TAB: usize = 4;
pub const ROW: usize = 5;
pub const CELL: usize = 6;

const RESERVED: [&str; 7] = ["<pad>", "<s>", "</s>", "<unk>", "[TAB]", "[ROW]", "[CELL]"];

#[derive(Debug, Error)]
pub enum TokError {
    #[error("corpus is empty")]
    Empty,
    #[error("input has {len} tokens, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("vocabulary is missing or malformed: {0}")]
    VocabMissing(String),
    #[error("unknown token id {0}")]
    UnknownId(usize),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Maps a special token to its reserved id.
pub fn special_id(tok: SpecialToken) -> usize {
    TAB + tok.index()
}

/// Inverse of [`special_id`].
pub fn special_of(id: usize) -> Option<SpecialToken> {
    match id {
        TAB => Some(SpecialToken::Tab),
        ROW => Some(SpecialToken::Row),
        CELL => Some(SpecialToken::Cell),
        _ => None,
    }
}

/// Splits on whitespace, then splits special literals out of each chunk.
pub fn pre_tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in s.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            if let Some(tok) = SpecialToken::ALL.into_iter().find(|t| rest.starts_with(t.literal())) {
                let (head, tail) = rest.split_at(tok.literal().len());
                out.push(head);
                rest = tail;
                continue;
            }
            let end = SpecialToken::ALL.iter().filter_map(|t| rest.find(t.literal())).min().unwrap_or(rest.len());
            let (head, tail) = rest.split_at(end);
            out.push(head);
            rest = tail;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self, TokError> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(TokError::VocabMissing(format!("reserved id {i} must be {r}")));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(TokError::VocabMissing(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, s: &str) -> Vec<usize> {
        pre_tokenize(s).into_iter().map(|w| self.id(w)).collect()
    }

    /// Renders ids as space-joined tokens, skipping padding and BOS and
    /// stopping at the first EOS.
    pub fn decode(&self, ids: &[usize]) -> Result<String, TokError> {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => continue,
                _ => words.push(self.token(id).ok_or(TokError::UnknownId(id))?),
            }
        }
        Ok(words.join(" "))
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<(), TokError> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokError> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Builds a vocabulary from training strings.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Result<Vocab, TokError> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for line in corpus {
        for w in pre_tokenize(line.as_ref()) {
            if !RESERVED.contains(&w) {
                *freq.entry(w).or_default() += 1;
            }
        }
    }
    if freq.is_empty() {
        return Err(TokError::Empty);
    }
    let mut words: Vec<(&str, usize)> = freq.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = RESERVED.iter().map(|s| s.to_string()).chain(words.into_iter().map(|(w, _)| w.to_string())).collect();
    Vocab::from_tokens(tokens)
}

/// How the table part of an input is rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableEncoding {
    /// `[TAB]`/`[ROW]`/`[CELL]` delimiters.
    #[default]
    Special,
    /// Special delimiters over cells prefixed with `(row, col)` strings.
    PositionStrings,
    Markdown,
    Html,
    Csv,
}

impl TableEncoding {
    /// Table text exactly as it is fed to the tokenizer.
    pub fn render(self, t: &Table) -> String {
        match self {
            TableEncoding::Special => serialize_special(t),
            TableEncoding::PositionStrings => serialize_special(&augment_position_strings(t)),
            TableEncoding::Markdown => serialize_format(t, RenderFormat::Markdown),
            TableEncoding::Html => serialize_format(t, RenderFormat::Html),
            TableEncoding::Csv => serialize_format(t, RenderFormat::Csv),
        }
    }

    fn is_structured(self) -> bool {
        matches!(self, TableEncoding::Special | TableEncoding::PositionStrings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub max_seq_len: usize,
    pub caps: IndexCaps,
    pub encoding: TableEncoding,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self { max_seq_len: 256, caps: IndexCaps::default(), encoding: TableEncoding::Special }
    }
}

/// One tokenized training or evaluation example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInput {
    pub token_ids: Vec<usize>,
    pub index_map: StructuralIndexMap,
    /// True on answer tokens and the closing EOS.
    pub answer_mask: Vec<bool>,
    /// True exactly on `[TAB]`, `[ROW]` and `[CELL]` ids.
    pub special_flags: Vec<bool>,
    /// Number of leading tokens (BOS, table, text) that form the prompt.
    pub prompt_len: usize,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// The prompt prefix alone; answer tokens are not part of the result.
    pub fn prompt(&self) -> ModelInput {
        self.truncated(self.prompt_len)
    }

    pub fn truncated(&self, len: usize) -> ModelInput {
        ModelInput {
            token_ids: self.token_ids[..len].to_vec(),
            index_map: StructuralIndexMap {
                rows: self.index_map.rows[..len].to_vec(),
                cols: self.index_map.cols[..len].to_vec(),
            },
            answer_mask: self.answer_mask[..len].to_vec(),
            special_flags: self.special_flags[..len].to_vec(),
            prompt_len: self.prompt_len.min(len),
        }
    }

    /// Appends a generated token as plain text.
    pub fn push_text_token(&mut self, id: usize) {
        self.token_ids.push(id);
        self.index_map.push(0, 0);
        self.answer_mask.push(false);
        self.special_flags.push(false);
    }
}

fn table_roles(words: &[&str], structured: bool) -> Vec<TokenRole> {
    words
        .iter()
        .map(|w| match SpecialToken::from_literal(w) {
            Some(s) if structured => TokenRole::Special(s),
            _ if structured => TokenRole::CellValue,
            _ => TokenRole::Text,
        })
        .collect()
}

/// `BOS + table + text + answer + EOS` with structural indices over the table
/// span and zeros elsewhere.
pub fn assemble_input(
    t: &Table,
    text: &str,
    answer: &str,
    vocab: &Vocab,
    opts: &AssembleOptions,
) -> Result<ModelInput, TokError> {
    if vocab.len() <= RESERVED.len() {
        return Err(TokError::VocabMissing("vocabulary has no words".into()));
    }
    let table_text = opts.encoding.render(t);
    let table_words = pre_tokenize(&table_text);
    let text_words = pre_tokenize(text);
    let answer_words = pre_tokenize(answer);

    let len = 2 + table_words.len() + text_words.len() + answer_words.len();
    if len > opts.max_seq_len {
        return Err(TokError::TooLong { len, max: opts.max_seq_len });
    }

    let structured = opts.encoding.is_structured();
    let mut roles = vec![TokenRole::Text];
    roles.extend(table_roles(&table_words, structured));
    roles.extend(std::iter::repeat_n(TokenRole::Text, text_words.len() + answer_words.len() + 1));
    let index_map = assign_indices(&roles, opts.caps)?;

    let mut token_ids = Vec::with_capacity(len);
    token_ids.push(BOS);
    for w in table_words.iter().chain(&text_words).chain(&answer_words) {
        token_ids.push(vocab.id(w));
    }
    token_ids.push(EOS);

    let prompt_len = 1 + table_words.len() + text_words.len();
    let answer_mask = (0..len).map(|i| i >= prompt_len).collect();
    let special_flags = token_ids.iter().map(|&id| special_of(id).is_some()).collect();
    Ok(ModelInput { token_ids, index_map, answer_mask, special_flags, prompt_len })
}

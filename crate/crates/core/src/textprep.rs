//! Deterministic cleaning, punctuation policies, tokenization, and
//! vocabulary/sequence encoding for Sinhala comment text.
//!
//! The character filter keeps the Sinhala block (U+0D80..=U+0DFF), the
//! zero-width joiner that Sinhala conjuncts require, ASCII digits, and the
//! space; what happens to punctuation is decided by the [`PunctuationPolicy`].
//! Everything else — Latin letters, emoji, stray symbols — is removed.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;

const ZWJ: char = '\u{200D}';
const QUESTION: char = '?';

/// What to do with punctuation while cleaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PunctuationPolicy {
    /// Keep `? . , !` alongside the allowed character classes.
    KeepAll,
    /// Remove every punctuation mark, including the question mark.
    StripAll,
    /// Remove every punctuation mark except the question mark.
    StripExceptQuestion,
}

impl PunctuationPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            PunctuationPolicy::KeepAll => "keep-all",
            PunctuationPolicy::StripAll => "strip-all",
            PunctuationPolicy::StripExceptQuestion => "strip-except-question",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "keep-all" => Ok(PunctuationPolicy::KeepAll),
            "strip-all" => Ok(PunctuationPolicy::StripAll),
            "strip-except-question" => Ok(PunctuationPolicy::StripExceptQuestion),
            other => Err(Error::Config(format!(
                "unknown punctuation policy '{other}' \
                 (expected keep-all|strip-all|strip-except-question)"
            ))),
        }
    }

    fn keeps(&self, c: char) -> bool {
        let base = matches!(c, '\u{0D80}'..='\u{0DFF}') || c == ZWJ || c.is_ascii_digit();
        match self {
            PunctuationPolicy::KeepAll => base || matches!(c, '?' | '.' | ',' | '!'),
            PunctuationPolicy::StripAll => base,
            PunctuationPolicy::StripExceptQuestion => base || c == QUESTION,
        }
    }
}

/// A comment after character filtering and whitespace normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanComment {
    pub text: String,
    pub source_id: u64,
    pub chars_removed: usize,
}

/// Apply the policy's character filter and collapse whitespace.
///
/// Whitespace of any kind becomes a single space; leading and trailing
/// spaces are dropped. An input that filters down to nothing is reported
/// as [`Error::EmptyAfterFilter`] so callers can drop and count it.
pub fn filter_chars(raw: &str, policy: PunctuationPolicy) -> Result<CleanComment> {
    filter_chars_with_id(raw, policy, 0)
}

pub fn filter_chars_with_id(
    raw: &str,
    policy: PunctuationPolicy,
    source_id: u64,
) -> Result<CleanComment> {
    let mut text = String::with_capacity(raw.len());
    let mut chars_removed = 0usize;
    let mut pending_space = false;
    for c in raw.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if policy.keeps(c) {
            if pending_space && !text.is_empty() {
                text.push(' ');
            }
            pending_space = false;
            text.push(c);
        } else {
            chars_removed += 1;
        }
    }
    if text.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(CleanComment {
        text,
        source_id,
        chars_removed,
    })
}

/// Whether `?` becomes its own token or stays attached to the word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenizerMode {
    /// `?` is split out as a standalone token (the default: it carries
    /// sentiment on its own).
    Detached,
    /// `?` stays glued to the preceding characters.
    Attached,
}

impl TokenizerMode {
    pub fn name(&self) -> &'static str {
        match self {
            TokenizerMode::Detached => "detached",
            TokenizerMode::Attached => "attached",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "detached" => Ok(TokenizerMode::Detached),
            "attached" => Ok(TokenizerMode::Attached),
            other => Err(Error::Config(format!(
                "unknown tokenizer mode '{other}' (expected detached|attached)"
            ))),
        }
    }
}

/// Split a cleaned comment into tokens on spaces.
pub fn tokenize(comment: &CleanComment, mode: TokenizerMode) -> Vec<String> {
    tokenize_text(&comment.text, mode)
}

pub fn tokenize_text(text: &str, mode: TokenizerMode) -> Vec<String> {
    let mut tokens = Vec::new();
    for piece in text.split(' ') {
        if piece.is_empty() {
            continue;
        }
        match mode {
            TokenizerMode::Attached => tokens.push(piece.to_string()),
            TokenizerMode::Detached => {
                let mut current = String::new();
                for c in piece.chars() {
                    if c == QUESTION {
                        if !current.is_empty() {
                            tokens.push(std::mem::take(&mut current));
                        }
                        tokens.push(QUESTION.to_string());
                    } else {
                        current.push(c);
                    }
                }
                if !current.is_empty() {
                    tokens.push(current);
                }
            }
        }
    }
    tokens
}

/// Token table with reserved ids 0 (padding) and 1 (out-of-vocabulary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Assign ids by descending corpus frequency (ties broken
    /// lexicographically) to every token seen at least `min_count` times.
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], min_count: u64) -> Result<Vocabulary> {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            for tok in doc {
                *freq.entry(tok.as_ref()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        if kept.is_empty() {
            return Err(Error::Vocabulary(format!(
                "no token reaches min_count {min_count}"
            )));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut token_to_id = HashMap::with_capacity(kept.len());
        let mut id_to_token = vec!["<pad>".to_string(), "<oov>".to_string()];
        let mut counts = vec![0, 0];
        for (tok, c) in kept {
            token_to_id.insert(tok.to_string(), id_to_token.len() as u32);
            id_to_token.push(tok.to_string());
            counts.push(c);
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
        })
    }

    /// Rebuild a vocabulary from an explicit token list (ids assigned in
    /// order starting at 2). Used when loading saved tables whose counts
    /// are no longer known.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        let mut id_to_token = vec!["<pad>".to_string(), "<oov>".to_string()];
        let mut counts = vec![0, 0];
        for tok in tokens {
            if token_to_id.contains_key(&tok) {
                return Err(Error::Vocabulary(format!("duplicate token '{tok}'")));
            }
            token_to_id.insert(tok.clone(), id_to_token.len() as u32);
            id_to_token.push(tok);
            counts.push(1);
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
        })
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    /// Total ids including the two reserved slots.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Iterate real tokens (ids >= 2) in id order.
    pub fn tokens(&self) -> impl Iterator<Item = (u32, &str)> {
        self.id_to_token
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (i as u32, t.as_str()))
    }

    pub fn total_token_occurrences(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Map tokens to ids, truncate at `max_len`, and pad the tail with id 0.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    assert!(max_len >= 1, "encode requires max_len >= 1");
    let mut ids: Vec<u32> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id(t.as_ref()).unwrap_or(OOV_ID))
        .collect();
    ids.resize(max_len, PAD_ID);
    ids
}

/// The four sentiment classes, in the fixed reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Neutral,
    Positive,
    Conflict,
}

pub const NUM_CLASSES: usize = 4;
pub const ALL_LABELS: [Label; NUM_CLASSES] =
    [Label::Negative, Label::Neutral, Label::Positive, Label::Conflict];

impl Label {
    pub fn index(&self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Neutral => 1,
            Label::Positive => 2,
            Label::Conflict => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        ALL_LABELS.get(i).copied()
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "NEGATIVE" => Ok(Label::Negative),
            "NEUTRAL" => Ok(Label::Neutral),
            "POSITIVE" => Ok(Label::Positive),
            "CONFLICT" => Ok(Label::Conflict),
            other => Err(Error::Label(format!(
                "unknown label '{other}' (expected NEGATIVE|NEUTRAL|POSITIVE|CONFLICT)"
            ))),
        }
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; NUM_CLASSES];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Negative => "NEGATIVE",
            Label::Neutral => "NEUTRAL",
            Label::Positive => "POSITIVE",
            Label::Conflict => "CONFLICT",
        };
        f.write_str(s)
    }
}

/// One comment ready for a classifier: encoded ids plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDocument {
    pub token_ids: Vec<u32>,
    pub label: Label,
    pub raw: CleanComment,
}

/// Settings shared by every preprocessing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub policy: PunctuationPolicy,
    pub tokenizer: TokenizerMode,
    pub max_len: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            policy: PunctuationPolicy::StripExceptQuestion,
            tokenizer: TokenizerMode::Detached,
            max_len: 50,
        }
    }
}

/// Per-corpus bookkeeping from a preprocessing pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepStats {
    pub docs_in: usize,
    pub docs_out: usize,
    pub empty_dropped: usize,
    pub chars_removed: usize,
    pub token_count: usize,
    pub per_class: [usize; NUM_CLASSES],
}

/// A labeled line and its cleaned form, before id encoding.
#[derive(Debug, Clone)]
pub struct LabeledComment {
    pub label: Label,
    pub comment: CleanComment,
    pub tokens: Vec<String>,
}

/// Read `LABEL<TAB>text` lines, clean and tokenize each comment.
///
/// Malformed labels and missing tab separators are parse errors carrying the
/// 1-based line number. Comments that filter down to nothing are dropped and
/// counted in the stats.
pub fn read_labeled_corpus<R: Read>(
    reader: R,
    config: &PrepConfig,
) -> Result<(Vec<LabeledComment>, PrepStats)> {
    let mut stats = PrepStats::default();
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        stats.docs_in += 1;
        let (label_str, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: "expected LABEL<TAB>comment".into(),
        })?;
        let label = Label::parse(label_str).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        match filter_chars_with_id(text, config.policy, lineno as u64 + 1) {
            Ok(comment) => {
                stats.chars_removed += comment.chars_removed;
                let tokens = tokenize(&comment, config.tokenizer);
                stats.token_count += tokens.len();
                stats.docs_out += 1;
                stats.per_class[label.index()] += 1;
                out.push(LabeledComment {
                    label,
                    comment,
                    tokens,
                });
            }
            Err(Error::EmptyAfterFilter) => stats.empty_dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, stats))
}

/// Read an unlabeled corpus: one comment or article per line.
pub fn read_unlabeled_corpus<R: Read>(
    reader: R,
    config: &PrepConfig,
) -> Result<(Vec<Vec<String>>, PrepStats)> {
    let mut stats = PrepStats::default();
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        stats.docs_in += 1;
        match filter_chars_with_id(&line, config.policy, lineno as u64 + 1) {
            Ok(comment) => {
                stats.chars_removed += comment.chars_removed;
                let tokens = tokenize(&comment, config.tokenizer);
                stats.token_count += tokens.len();
                stats.docs_out += 1;
                out.push(tokens);
            }
            Err(Error::EmptyAfterFilter) => stats.empty_dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, stats))
}

/// Encode cleaned comments against a vocabulary.
pub fn encode_documents(
    comments: &[LabeledComment],
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<LabeledDocument> {
    comments
        .iter()
        .filter(|c| !c.tokens.is_empty())
        .map(|c| LabeledDocument {
            token_ids: encode(&c.tokens, vocab, max_len),
            label: c.label,
            raw: c.comment.clone(),
        })
        .collect()
}

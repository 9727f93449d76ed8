//! Elementary discourse unit (EDU) segmentation.
//!
//! Sentences either arrive pre-segmented (character spans produced by an
//! external discourse segmenter) or are split by a rule-based fallback. In
//! both cases EDUs that still contain a coordinating conjunction are split
//! once more before the conjunction.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelRecord;

/// Conjunctions that open a new EDU.
pub const CONJUNCTIONS: [&str; 4] = ["but", "and", "although", "or"];

/// Minimum tokens on each side of a conjunction split.
pub const MIN_CONJUNCTION_SIDE: usize = 3;

/// Minimum tokens on each side of a comma/semicolon split, not counting the
/// delimiter itself.
pub const MIN_PUNCTUATION_SIDE: usize = 2;

/// A lowercased token and its `[start, end)` character offsets in the sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace and punctuation, keeping punctuation as tokens.
/// An apostrophe followed by letters (`'s`, `'re`) stays one token.
pub fn tokenize(text: &str) -> Vec<Token> {
    tokenize_at(text, 0)
}

fn tokenize_at(text: &str, offset: usize) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
        } else if (c == '\'' || c == '’') && chars.get(i + 1).is_some_and(|n| n.is_alphabetic()) {
            i += 1;
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
        } else {
            i += 1;
        }
        let raw: String = chars[start..i].iter().collect();
        tokens.push(Token {
            text: raw.to_lowercase().replace('’', "'"),
            start: start + offset,
            end: i + offset,
        });
    }
    tokens
}

/// A clause-like span of a sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edu {
    pub tokens: Vec<String>,
    /// `[start, end)` character offsets into the sentence text.
    pub char_span: (usize, usize),
    pub index: usize,
    token_spans: Vec<(usize, usize)>,
}

impl Edu {
    fn from_tokens(tokens: &[Token], index: usize) -> Self {
        Edu {
            tokens: tokens.iter().map(|t| t.text.clone()).collect(),
            char_span: (tokens[0].start, tokens[tokens.len() - 1].end),
            index,
            token_spans: tokens.iter().map(|t| (t.start, t.end)).collect(),
        }
    }

    fn token_list(&self) -> Vec<Token> {
        self.tokens
            .iter()
            .zip(&self.token_spans)
            .map(|(t, &(start, end))| Token {
                text: t.clone(),
                start,
                end,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentSource {
    Presegmented,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentedSentence {
    pub text: String,
    pub edus: Vec<Edu>,
    pub source: SegmentSource,
}

impl SegmentedSentence {
    pub fn spans(&self) -> Vec<[usize; 2]> {
        self.edus.iter().map(|e| [e.char_span.0, e.char_span.1]).collect()
    }

    /// Text of EDU `i`, sliced from the sentence by its character span.
    pub fn edu_text(&self, i: usize) -> String {
        let (s, e) = self.edus[i].char_span;
        self.text.chars().skip(s).take(e - s).collect()
    }

    pub fn num_tokens(&self) -> usize {
        self.edus.iter().map(Edu::len).sum()
    }

    /// Re-applies the conjunction split to every EDU.
    pub fn resplit(&self) -> SegmentedSentence {
        let pieces: Vec<Vec<Token>> = self
            .edus
            .iter()
            .flat_map(|e| conjunction_pieces(e.token_list()))
            .collect();
        SegmentedSentence {
            text: self.text.clone(),
            edus: pieces.iter().enumerate().map(|(i, p)| Edu::from_tokens(p, i)).collect(),
            source: self.source,
        }
    }
}

fn is_conjunction(token: &str) -> bool {
    CONJUNCTIONS.contains(&token)
}

fn conjunction_pieces(tokens: Vec<Token>) -> Vec<Vec<Token>> {
    let split = (MIN_CONJUNCTION_SIDE..tokens.len()).find(|&i| {
        is_conjunction(&tokens[i].text) && tokens.len() - i >= MIN_CONJUNCTION_SIDE
    });
    match split {
        None => vec![tokens],
        Some(i) => {
            let mut left = tokens;
            let right = left.split_off(i);
            let mut out = conjunction_pieces(left);
            out.extend(conjunction_pieces(right));
            out
        }
    }
}

/// Splits an EDU before each conjunction (whole token, case-insensitive) when
/// both resulting sides keep at least three tokens; the conjunction starts the
/// right-hand piece. Pieces are re-checked until no split applies.
pub fn split_on_conjunctions(edu: &Edu) -> Vec<Edu> {
    conjunction_pieces(edu.token_list())
        .iter()
        .enumerate()
        .map(|(i, p)| Edu::from_tokens(p, edu.index + i))
        .collect()
}

/// Rule-based segmentation for raw text: split after commas and semicolons
/// when both sides have at least two tokens, then split on conjunctions.
pub fn heuristic_segment(text: &str) -> Result<SegmentedSentence> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Input("cannot segment empty text".into()));
    }
    let mut pieces: Vec<Vec<Token>> = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len() {
        let t = &tokens[i].text;
        if (t == "," || t == ";")
            && i - start >= MIN_PUNCTUATION_SIDE
            && tokens.len() - i > MIN_PUNCTUATION_SIDE
        {
            pieces.push(tokens[start..=i].to_vec());
            start = i + 1;
        }
    }
    pieces.push(tokens[start..].to_vec());
    let edus = pieces
        .into_iter()
        .flat_map(conjunction_pieces)
        .enumerate()
        .map(|(i, p)| Edu::from_tokens(&p, i))
        .collect();
    Ok(SegmentedSentence {
        text: text.to_string(),
        edus,
        source: SegmentSource::Heuristic,
    })
}

/// One line of the pre-segmented JSONL format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub edus: Vec<[usize; 2]>,
    #[serde(default)]
    pub labels: Vec<LabelRecord>,
}

impl SentenceRecord {
    pub fn from_sentence(sentence: &SegmentedSentence, labels: Vec<LabelRecord>) -> Self {
        SentenceRecord {
            text: sentence.text.clone(),
            edus: sentence.spans(),
            labels,
        }
    }
}

/// Builds a sentence from given EDU spans, checking that they are ordered,
/// non-overlapping, non-empty, and leave only whitespace uncovered.
pub fn from_spans(text: &str, spans: &[[usize; 2]]) -> Result<SegmentedSentence> {
    let chars: Vec<char> = text.chars().collect();
    if spans.is_empty() {
        return Err(Error::Validation("sentence has no EDU spans".into()));
    }
    let mut cursor = 0;
    let mut edus = Vec::with_capacity(spans.len());
    for (i, &[s, e]) in spans.iter().enumerate() {
        if s >= e || e > chars.len() {
            return Err(Error::Validation(format!(
                "EDU span [{s}, {e}) invalid for text of {} characters",
                chars.len()
            )));
        }
        if s < cursor {
            return Err(Error::Validation(format!("EDU span [{s}, {e}) overlaps the previous span")));
        }
        if chars[cursor..s].iter().any(|c| !c.is_whitespace()) {
            return Err(Error::Validation(format!(
                "characters {cursor}..{s} are not covered by any EDU"
            )));
        }
        let piece: String = chars[s..e].iter().collect();
        let tokens = tokenize_at(&piece, s);
        if tokens.is_empty() {
            return Err(Error::Validation(format!("EDU span [{s}, {e}) contains no tokens")));
        }
        edus.push(Edu::from_tokens(&tokens, i));
        cursor = e;
    }
    if chars[cursor..].iter().any(|c| !c.is_whitespace()) {
        return Err(Error::Validation(format!(
            "characters {cursor}..{} are not covered by any EDU",
            chars.len()
        )));
    }
    Ok(SegmentedSentence {
        text: text.to_string(),
        edus,
        source: SegmentSource::Presegmented,
    })
}

/// Parses pre-segmented JSONL; blank lines are skipped. Every EDU is passed
/// through [`split_on_conjunctions`].
pub fn read_presegmented(path: &Path) -> Result<Vec<(SegmentedSentence, Vec<LabelRecord>)>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_presegmented(&content, path)
}

pub(crate) fn parse_presegmented(content: &str, path: &Path) -> Result<Vec<(SegmentedSentence, Vec<LabelRecord>)>> {
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SentenceRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        let sentence = from_spans(&record.text, &record.edus).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}:{}: {msg}", path.display(), lineno + 1)),
            other => other,
        })?;
        out.push((sentence.resplit(), record.labels));
    }
    Ok(out)
}

pub fn load_presegmented(path: &Path) -> Result<Vec<SegmentedSentence>> {
    Ok(read_presegmented(path)?.into_iter().map(|(s, _)| s).collect())
}

//! Word tokenization, greedy longest-match sub-word encoding and
//! overlapping window segmentation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";

pub const DEFAULT_WINDOW: usize = 256;
pub const DEFAULT_OVERLAP: usize = 32;

pub type TokenId = u32;

/// Lowercased words, split on every non-alphanumeric character.
pub fn tokenize_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sub-word vocabulary. Ids are dense and the first four entries are the
/// special tokens `[PAD] [UNK] [CLS] [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocabulary {
    pieces: Vec<String>,
    index: HashMap<String, TokenId>,
    max_piece_chars: usize,
}

impl SubwordVocabulary {
    /// Build from an ordered piece list; the specials are prepended when absent.
    pub fn new(pieces: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        for p in pieces {
            if p.is_empty() {
                return Err(Error::Validation("empty sub-word piece".into()));
            }
            if all[..4].contains(&p) {
                continue;
            }
            all.push(p);
        }
        Self::from_pieces(all)
    }

    /// Exact id order, specials included as the first four entries.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 0;
        for (i, p) in pieces.iter().enumerate() {
            if index.insert(p.clone(), i as TokenId).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary entry {p:?}")));
            }
            let body = p.strip_prefix(CONTINUATION).unwrap_or(p);
            max_piece_chars = max_piece_chars.max(body.chars().count());
        }
        for (i, s) in [PAD, UNK, CLS, SEP].iter().enumerate() {
            if pieces.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Validation(format!("vocabulary line {} must be {s}", i + 1)));
            }
        }
        Ok(SubwordVocabulary {
            pieces,
            index,
            max_piece_chars,
        })
    }

    /// One piece per line; line number is the id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let pieces = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_pieces(pieces)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for p in &self.pieces {
            writeln!(w, "{p}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Frequency-based builder: every character seen (as initial and as
    /// continuation piece), then the most frequent whole words and word
    /// suffixes until `size` entries are reached.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, size: usize) -> Result<Self> {
        let mut word_counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in pretokenize(t) {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        let mut chars: Vec<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();

        let mut pieces: Vec<String> = Vec::new();
        for &c in &chars {
            pieces.push(c.to_string());
            if c.is_alphanumeric() {
                pieces.push(format!("{CONTINUATION}{c}"));
            }
        }

        let mut candidates: HashMap<String, usize> = HashMap::new();
        for (w, &n) in &word_counts {
            if w.chars().count() > 1 {
                *candidates.entry(w.clone()).or_default() += n;
            }
            let chars: Vec<char> = w.chars().collect();
            for start in 1..chars.len() {
                let len = chars.len() - start;
                if (2..=6).contains(&len) {
                    let suffix: String = chars[start..].iter().collect();
                    *candidates.entry(format!("{CONTINUATION}{suffix}")).or_default() += n;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = candidates.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let budget = size.saturating_sub(4 + pieces.len());
        pieces.extend(ranked.into_iter().take(budget).map(|(p, _)| p));
        Self::new(pieces)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn pad_id(&self) -> TokenId {
        0
    }

    pub fn unk_id(&self) -> TokenId {
        1
    }

    pub fn cls_id(&self) -> TokenId {
        2
    }

    pub fn sep_id(&self) -> TokenId {
        3
    }

    /// Join pieces back into text: `##` pieces attach to their predecessor,
    /// everything else is space separated.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            let piece = self.piece(id).unwrap_or(UNK);
            match piece.strip_prefix(CONTINUATION) {
                Some(rest) if !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(piece);
                }
            }
        }
        out
    }
}

/// Lowercase, split on whitespace, and isolate punctuation as single-char words.
fn pretokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                current.extend(c.to_lowercase());
            } else {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Greedy longest-match-first encoding. A position with no matching piece
/// emits `[UNK]` for that single character. No `[CLS]`/`[SEP]` are added.
pub fn subword_encode(text: &str, vocab: &SubwordVocabulary) -> Vec<TokenId> {
    let mut ids = Vec::new();
    let mut buf = String::new();
    for word in pretokenize(text) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        while start < chars.len() {
            let longest = vocab.max_piece_chars.min(chars.len() - start);
            let mut matched = None;
            for end in (start + 1..=start + longest).rev() {
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.extend(&chars[start..end]);
                if let Some(id) = vocab.id(&buf) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    ids.push(vocab.unk_id());
                    start += 1;
                }
            }
        }
    }
    ids
}

/// A window of token ids taken from a longer sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub ids: Vec<TokenId>,
    pub start: usize,
    pub length: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

/// Overlapping windows with stride `window - overlap`. Segment `k` covers
/// `[k*stride, min(k*stride + window, n))`; emission stops once a segment
/// reaches the end of the input.
pub fn segment(ids: &[TokenId], window: usize, overlap: usize) -> Result<Vec<Segment>> {
    if window == 0 || overlap >= window {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= overlap < window, got window {window}, overlap {overlap}"
        )));
    }
    let stride = window - overlap;
    let n = ids.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + window).min(n);
        out.push(Segment {
            ids: ids[start..end].to_vec(),
            start,
            length: end - start,
        });
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(out)
}

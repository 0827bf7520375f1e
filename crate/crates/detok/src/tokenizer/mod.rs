//! Byte-level BPE encoder/decoder in the subject model's token-id space.
//!
//! Loads the standard `vocab.json` (token -> id) and `merges.txt` (one merge
//! per line, optional leading header comment) pair and encodes verbatim: no
//! special tokens, no BOS insertion, no prefix space.

mod bytemap;
mod pretokenize;
mod unicode;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Bijective token-string <-> id tables.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocab {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, TokenId)>) -> Result<Self> {
        let token_to_id: HashMap<String, TokenId> = pairs.into_iter().collect();
        let size = token_to_id.len();
        let mut id_to_token = vec![String::new(); size];
        for (token, &id) in &token_to_id {
            if id as usize >= size {
                return Err(Error::Corrupt(format!(
                    "vocab id {id} out of range for size {size}; ids must be dense"
                )));
            }
            if !id_to_token[id as usize].is_empty() {
                return Err(Error::Corrupt(format!("duplicate vocab id {id}")));
            }
            id_to_token[id as usize] = token.clone();
        }
        Ok(Vocab {
            token_to_id,
            id_to_token,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }
}

/// Merge priorities: lower rank merges first. Stored as a two-level map so
/// lookups take borrowed pieces without allocating.
#[derive(Debug, Clone)]
pub struct MergeRanks {
    rank: HashMap<String, HashMap<String, u32>>,
    len: usize,
}

impl MergeRanks {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut rank: HashMap<String, HashMap<String, u32>> = HashMap::new();
        let mut len = 0usize;
        for (i, (left, right)) in pairs.into_iter().enumerate() {
            if rank
                .entry(left.clone())
                .or_default()
                .insert(right.clone(), i as u32)
                .is_some()
            {
                return Err(Error::Corrupt(format!(
                    "duplicate merge rule {left:?} {right:?}"
                )));
            }
            len += 1;
        }
        Ok(MergeRanks { rank, len })
    }

    fn get(&self, left: &str, right: &str) -> Option<u32> {
        self.rank.get(left).and_then(|m| m.get(right)).copied()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// The 256 single-byte tokens in byte-mapped form at ids 0..=255: the
/// smallest vocabulary that can encode arbitrary input. Useful for tests and
/// synthetic corpora.
pub fn byte_alphabet_vocab() -> Vec<(String, TokenId)> {
    let enc = bytemap::byte_encoder();
    (0..256u32)
        .map(|b| (enc[b as usize].to_string(), b))
        .collect()
}

/// Byte-level BPE tokenizer. Immutable after load; encode/decode are pure and
/// callable concurrently.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    merges: MergeRanks,
    byte_encoder: [char; 256],
}

impl Tokenizer {
    pub fn from_files(vocab_path: &Path, merges_path: &Path) -> Result<Self> {
        let vocab_text =
            fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
        let raw: HashMap<String, TokenId> = serde_json::from_str(&vocab_text)?;
        let vocab = Vocab::from_pairs(raw)?;

        let merges_text =
            fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in merges_text.lines().enumerate() {
            if line.is_empty() || (lineno == 0 && line.starts_with('#')) {
                continue;
            }
            let mut it = line.split(' ');
            match (it.next(), it.next(), it.next()) {
                (Some(l), Some(r), None) => pairs.push((l.to_string(), r.to_string())),
                _ => {
                    return Err(Error::Corrupt(format!(
                        "malformed merge rule at {}:{}",
                        merges_path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        Self::from_parts(vocab, MergeRanks::from_pairs(pairs)?)
    }

    pub fn from_parts(vocab: Vocab, merges: MergeRanks) -> Result<Self> {
        Ok(Tokenizer {
            vocab,
            merges,
            byte_encoder: bytemap::byte_encoder(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    /// Id of a plain-text token, e.g. `" sap"` (the leading space is part of
    /// the token). Returns None when the text is not a single vocab entry.
    pub fn id_of_text(&self, text: &str) -> Option<TokenId> {
        let mapped: String = text
            .bytes()
            .map(|b| self.byte_encoder[b as usize])
            .collect();
        self.vocab.id_of(&mapped)
    }

    /// The raw (byte-mapped) vocab string for an id.
    pub fn token_of(&self, id: TokenId) -> Option<&str> {
        self.vocab.token_of(id)
    }

    /// Decode a single id to plain text.
    pub fn decode_one(&self, id: TokenId) -> Result<String> {
        self.decode(&[id])
    }

    /// Apply the merge loop to one byte-mapped word.
    fn bpe(&self, word: &str) -> Vec<String> {
        let mut pieces: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        if pieces.len() <= 1 {
            return pieces;
        }
        loop {
            let mut best: Option<(u32, usize)> = None;
            for i in 0..pieces.len() - 1 {
                if let Some(rank) = self.merges.get(&pieces[i], &pieces[i + 1]) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((_, at)) = best else { break };
            // Merge every non-overlapping occurrence of the chosen pair,
            // scanning left to right.
            let left = pieces[at].clone();
            let right = pieces[at + 1].clone();
            let mut merged = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && pieces[i] == left && pieces[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut pieces[i]));
                    i += 1;
                }
            }
            pieces = merged;
            if pieces.len() <= 1 {
                break;
            }
        }
        pieces
    }

    /// Encode UTF-8 text to token ids.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        for pre_token in pretokenize::pretokenize(text) {
            let mapped: String = pre_token
                .bytes()
                .map(|b| self.byte_encoder[b as usize])
                .collect();
            for piece in self.bpe(&mapped) {
                match self.vocab.id_of(&piece) {
                    Some(id) => ids.push(id),
                    None => {
                        return Err(Error::Corrupt(format!(
                            "piece {piece:?} missing from vocab; vocab and merges disagree"
                        )))
                    }
                }
            }
        }
        Ok(ids)
    }

    /// Decode token ids back to text. Inverse of `encode` on its image; byte
    /// sequences that do not form valid UTF-8 decode with replacement chars.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let token = self.vocab.token_of(id).ok_or(Error::OutOfRange {
                what: "token id",
                index: id as usize,
                limit: self.vocab.size(),
            })?;
            for c in token.chars() {
                match bytemap::decode_char(c) {
                    Some(b) => bytes.push(b),
                    None => {
                        return Err(Error::Corrupt(format!(
                            "vocab token {token:?} contains {c:?}, not a byte-level char"
                        )))
                    }
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

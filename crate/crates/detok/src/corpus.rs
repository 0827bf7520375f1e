//! Unigram and bigram counting over tokenized text.
//!
//! Documents are counted independently (bigrams never span a document
//! boundary) and shards merge by commutative addition, so the result is
//! exact and independent of file order and worker count.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// How a text stream splits into documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocSep {
    /// Blank lines delimit documents (the default).
    BlankLine,
    /// Every line is its own document.
    Newline,
    /// One whole file is one document.
    None,
}

impl DocSep {
    pub fn label(self) -> &'static str {
        match self {
            DocSep::BlankLine => "blankline",
            DocSep::Newline => "newline",
            DocSep::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<DocSep> {
        match s {
            "blankline" => Some(DocSep::BlankLine),
            "newline" => Some(DocSep::Newline),
            "none" => Some(DocSep::None),
            _ => None,
        }
    }

    fn code(self) -> u8 {
        match self {
            DocSep::BlankLine => 0,
            DocSep::Newline => 1,
            DocSep::None => 2,
        }
    }

    fn from_code(c: u8) -> Option<DocSep> {
        match c {
            0 => Some(DocSep::BlankLine),
            1 => Some(DocSep::Newline),
            2 => Some(DocSep::None),
            _ => None,
        }
    }
}

/// Dense per-token counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnigramCounts {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl UnigramCounts {
    pub fn new(vocab_size: usize) -> Self {
        UnigramCounts {
            counts: vec![0; vocab_size],
            total: 0,
        }
    }

    pub fn add(&mut self, id: u32) {
        self.counts[id as usize] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &UnigramCounts) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }
}

fn pack(prev: u32, next: u32) -> u64 {
    ((prev as u64) << 32) | next as u64
}

fn unpack(key: u64) -> (u32, u32) {
    ((key >> 32) as u32, key as u32)
}

/// Sparse (prev, next) counts with per-next totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BigramCounts {
    counts: HashMap<u64, u64>,
    totals_by_next: Vec<u64>,
}

impl BigramCounts {
    pub fn new(vocab_size: usize) -> Self {
        BigramCounts {
            counts: HashMap::new(),
            totals_by_next: vec![0; vocab_size],
        }
    }

    pub fn add(&mut self, prev: u32, next: u32) {
        *self.counts.entry(pack(prev, next)).or_insert(0) += 1;
        self.totals_by_next[next as usize] += 1;
    }

    pub fn get(&self, prev: u32, next: u32) -> u64 {
        self.counts.get(&pack(prev, next)).copied().unwrap_or(0)
    }

    /// Total count of bigrams whose second token is `next`.
    pub fn incoming_total(&self, next: u32) -> u64 {
        self.totals_by_next[next as usize]
    }

    pub fn vocab_size(&self) -> usize {
        self.totals_by_next.len()
    }

    /// Number of distinct (prev, next) pairs.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.totals_by_next.iter().sum()
    }

    pub fn merge(&mut self, other: &BigramCounts) {
        for (&k, &v) in &other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        for (a, b) in self.totals_by_next.iter_mut().zip(&other.totals_by_next) {
            *a += b;
        }
    }

    /// (prev, next, count) triples in key order.
    pub fn sorted_entries(&self) -> Vec<(u32, u32, u64)> {
        let mut keys: Vec<u64> = self.counts.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter()
            .map(|k| {
                let (p, n) = unpack(k);
                (p, n, self.counts[&k])
            })
            .collect()
    }

    /// For every next-token id, the list of (prev, count) pairs. Built once
    /// for query sweeps.
    pub fn incoming_index(&self) -> Vec<Vec<(u32, u64)>> {
        let mut index: Vec<Vec<(u32, u64)>> = vec![Vec::new(); self.totals_by_next.len()];
        for (p, n, c) in self.sorted_entries() {
            index[n as usize].push((p, c));
        }
        index
    }

    /// Insert a raw count (snapshot loading and tests).
    pub fn insert_count(&mut self, prev: u32, next: u32, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(pack(prev, next)).or_insert(0) += count;
        self.totals_by_next[next as usize] += count;
    }
}

fn split_docs(text: &str, sep: DocSep) -> Vec<&str> {
    match sep {
        DocSep::None => vec![text],
        DocSep::Newline => text.lines().collect(),
        DocSep::BlankLine => text
            .split("\n\n")
            .flat_map(|chunk| {
                // Runs of more than two newlines leave empty chunks behind.
                if chunk.trim().is_empty() {
                    vec![]
                } else {
                    vec![chunk]
                }
            })
            .collect(),
    }
}

fn count_doc(
    doc: &str,
    tokenizer: &Tokenizer,
    uni: &mut UnigramCounts,
    bi: &mut BigramCounts,
) -> Result<()> {
    let ids = tokenizer.encode(doc)?;
    for &id in &ids {
        uni.add(id);
    }
    for pair in ids.windows(2) {
        bi.add(pair[0], pair[1]);
    }
    Ok(())
}

/// Count unigrams and bigrams over in-memory documents.
pub fn count_documents(
    docs: &[&str],
    tokenizer: &Tokenizer,
    workers: Option<usize>,
) -> Result<(UnigramCounts, BigramCounts)> {
    let vocab = tokenizer.vocab_size();
    let run = || -> Result<(UnigramCounts, BigramCounts)> {
        docs.par_iter()
            .try_fold(
                || (UnigramCounts::new(vocab), BigramCounts::new(vocab)),
                |(mut uni, mut bi), doc| {
                    count_doc(doc, tokenizer, &mut uni, &mut bi)?;
                    Ok((uni, bi))
                },
            )
            .try_reduce(
                || (UnigramCounts::new(vocab), BigramCounts::new(vocab)),
                |(mut ua, mut ba), (ub, bb)| {
                    ua.merge(&ub);
                    ba.merge(&bb);
                    Ok((ua, ba))
                },
            )
    };
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
            pool.install(run)
        }
        None => run(),
    }
}

/// Read a file as UTF-8, reporting the byte offset of any invalid sequence.
pub fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Count over text files. Documents are delimited per `sep` within each file.
pub fn count_files(
    paths: &[PathBuf],
    tokenizer: &Tokenizer,
    sep: DocSep,
    workers: Option<usize>,
) -> Result<(UnigramCounts, BigramCounts)> {
    let mut texts = Vec::with_capacity(paths.len());
    for path in paths {
        texts.push(read_utf8(path)?);
    }
    let docs: Vec<&str> = texts
        .iter()
        .flat_map(|t| split_docs(t, sep))
        .collect();
    count_documents(&docs, tokenizer, workers)
}

/// Deterministically sample token sequences of exactly `len` tokens from
/// document prefixes, shuffling document order with the seed.
pub fn sample_sequences(
    paths: &[PathBuf],
    tokenizer: &Tokenizer,
    sep: DocSep,
    len: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    let mut texts = Vec::with_capacity(paths.len());
    for path in paths {
        texts.push(read_utf8(path)?);
    }
    let mut docs: Vec<&str> = texts.iter().flat_map(|t| split_docs(t, sep)).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);

    let mut out = Vec::new();
    for doc in docs {
        if out.len() >= count {
            break;
        }
        let ids = tokenizer.encode(doc)?;
        if ids.len() >= len {
            out.push(ids[..len].to_vec());
        }
    }
    Ok(out)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"DTKC";
const SNAPSHOT_VERSION: u16 = 1;

/// Write a versioned binary snapshot of the counts.
pub fn save_snapshot(
    path: &Path,
    uni: &UnigramCounts,
    bi: &BigramCounts,
    sep: DocSep,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(SNAPSHOT_MAGIC).map_err(io_err)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&[sep.code(), 0]).map_err(io_err)?;
    w.write_all(&(uni.counts.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&uni.total.to_le_bytes()).map_err(io_err)?;
    for &c in &uni.counts {
        w.write_all(&c.to_le_bytes()).map_err(io_err)?;
    }
    let entries = bi.sorted_entries();
    w.write_all(&(entries.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for (p, n, c) in entries {
        w.write_all(&pack(p, n).to_le_bytes()).map_err(io_err)?;
        w.write_all(&c.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Load a snapshot written by [`save_snapshot`].
pub fn load_snapshot(path: &Path) -> Result<(UnigramCounts, BigramCounts, DocSep)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut read_exact = |buf: &mut [u8]| -> Result<()> {
        r.read_exact(buf).map_err(|e| Error::io(path, e))
    };

    let mut magic = [0u8; 4];
    read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("bad magic; not a counts snapshot".into()));
    }
    let mut u16buf = [0u8; 2];
    read_exact(&mut u16buf)?;
    let version = u16::from_le_bytes(u16buf);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!(
            "unsupported snapshot version {version}"
        )));
    }
    let mut sep_pad = [0u8; 2];
    read_exact(&mut sep_pad)?;
    let sep = DocSep::from_code(sep_pad[0])
        .ok_or_else(|| Error::Snapshot(format!("bad doc separator code {}", sep_pad[0])))?;

    let mut u32buf = [0u8; 4];
    read_exact(&mut u32buf)?;
    let vocab = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    read_exact(&mut u64buf)?;
    let total = u64::from_le_bytes(u64buf);

    let mut uni = UnigramCounts::new(vocab);
    for c in uni.counts.iter_mut() {
        read_exact(&mut u64buf)?;
        *c = u64::from_le_bytes(u64buf);
    }
    uni.total = total;
    if uni.total != uni.counts.iter().sum::<u64>() {
        return Err(Error::Snapshot(
            "unigram total disagrees with entries".into(),
        ));
    }

    read_exact(&mut u64buf)?;
    let n_bigrams = u64::from_le_bytes(u64buf);
    let mut bi = BigramCounts::new(vocab);
    for _ in 0..n_bigrams {
        read_exact(&mut u64buf)?;
        let key = u64::from_le_bytes(u64buf);
        read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf);
        let (p, n) = unpack(key);
        if n as usize >= vocab || p as usize >= vocab {
            return Err(Error::Snapshot(format!("bigram id out of range: {p},{n}")));
        }
        bi.insert_count(p, n, count);
    }
    Ok((uni, bi, sep))
}

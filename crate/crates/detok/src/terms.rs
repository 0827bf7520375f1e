//! The six components of the first-layer attention score
//!
//!   s = ee + pp + pe + ep + e + p
//!
//! where the four comparison terms pair query-side and key-side token or
//! position embeddings through wqk and divide by sigma_i * sigma_j, and the
//! two self-assertion terms pair bqk with the key-side embedding and divide
//! by sigma_j alone.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::folding::FoldedHead;
use crate::normstats::{SigmaCtx, SigmaMode};

/// Which of the six summands a score row holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermKind {
    /// Token-token comparison.
    EE,
    /// Position-position comparison.
    PP,
    /// Query position vs key token.
    PE,
    /// Query token vs key position.
    EP,
    /// Token self-assertion.
    E,
    /// Position self-assertion.
    P,
}

impl TermKind {
    pub const ALL: [TermKind; 6] = [
        TermKind::EE,
        TermKind::PP,
        TermKind::PE,
        TermKind::EP,
        TermKind::E,
        TermKind::P,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TermKind::EE => "ee",
            TermKind::PP => "pp",
            TermKind::PE => "pe",
            TermKind::EP => "ep",
            TermKind::E => "e",
            TermKind::P => "p",
        }
    }

    pub fn parse(s: &str) -> Option<TermKind> {
        Self::ALL.iter().copied().find(|k| k.label() == s)
    }
}

/// How the `values` of a [`TermScores`] are indexed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyIndex {
    /// values[k] scores the k-th id in the list.
    TokenIds(Vec<u32>),
    /// values[id] scores token id directly; covers the whole vocabulary.
    AllTokens,
    /// values[j] scores key position j.
    Positions,
}

/// A scored row for one term.
#[derive(Debug, Clone)]
pub struct TermScores {
    pub kind: TermKind,
    pub head: usize,
    /// Query-side token id, when the term has one.
    pub query_token: Option<u32>,
    /// Query-side position i, when the term has one.
    pub query_pos: Option<usize>,
    pub keys: KeyIndex,
    pub values: Vec<f64>,
    /// Sigma mode used on the query side (None for self-assertion terms).
    pub sigma_i: Option<SigmaMode>,
    /// Sigma mode used on the key side.
    pub sigma_j: SigmaMode,
    /// Position at which token-keyed sigmas were evaluated, when relevant.
    pub key_pos: Option<usize>,
}

impl TermScores {
    pub fn finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Key selection for token-keyed scans.
#[derive(Debug, Clone, Copy)]
pub enum Keys<'a> {
    All,
    Ids(&'a [u32]),
}

fn check_token(sctx: &SigmaCtx, token: u32) -> Result<()> {
    let vocab = sctx.params.dims.vocab_size;
    if token as usize >= vocab {
        return Err(Error::OutOfRange {
            what: "token id",
            index: token as usize,
            limit: vocab,
        });
    }
    Ok(())
}

/// Numerators of a token-keyed scan: base . e_k for every requested key.
fn token_numerators(sctx: &SigmaCtx, base: &Array1<f64>, keys: Keys) -> Result<(KeyIndex, Vec<f64>)> {
    let e = &sctx.params.token_embedding;
    match keys {
        Keys::All => {
            let nums = e.dot(base);
            Ok((KeyIndex::AllTokens, nums.to_vec()))
        }
        Keys::Ids(ids) => {
            let mut nums = Vec::with_capacity(ids.len());
            for &id in ids {
                check_token(sctx, id)?;
                nums.push(e.row(id as usize).dot(base));
            }
            Ok((KeyIndex::TokenIds(ids.to_vec()), nums))
        }
    }
}

fn divide_token_sigmas(
    sctx: &SigmaCtx,
    keys: &KeyIndex,
    values: &mut [f64],
    mode_j: SigmaMode,
    key_pos: usize,
    sigma_i: f64,
) -> Result<()> {
    match keys {
        KeyIndex::AllTokens => {
            let sigmas = sctx.resolve_per_token(mode_j, key_pos)?;
            for (v, s) in values.iter_mut().zip(&sigmas) {
                *v /= sigma_i * s;
            }
        }
        KeyIndex::TokenIds(ids) => {
            for (v, &id) in values.iter_mut().zip(ids) {
                let s = match mode_j {
                    SigmaMode::Exact => sctx.resolve(mode_j, Some(id), Some(key_pos))?,
                    _ => sctx.resolve(mode_j, None, Some(key_pos))?,
                };
                *v /= sigma_i * s;
            }
        }
        KeyIndex::Positions => unreachable!("token sigma division on a position row"),
    }
    Ok(())
}

/// Token-token comparison scores for one query token against a key set.
///
/// Exact key-side sigma gives every key its own sigma(e_k + p_{key_pos}).
pub fn term_ee(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    query: u32,
    keys: Keys,
    mode_i: SigmaMode,
    mode_j: SigmaMode,
    query_pos: usize,
    key_pos: usize,
) -> Result<TermScores> {
    check_token(sctx, query)?;
    let sigma_i = sctx.resolve(mode_i, Some(query), Some(query_pos))?;
    let base = sctx
        .params
        .token_embedding
        .row(query as usize)
        .dot(&fh.wqk);
    let (keys, mut values) = token_numerators(sctx, &base, keys)?;
    divide_token_sigmas(sctx, &keys, &mut values, mode_j, key_pos, sigma_i)?;
    Ok(TermScores {
        kind: TermKind::EE,
        head: fh.head_index,
        query_token: Some(query),
        query_pos: Some(query_pos),
        keys,
        values,
        sigma_i: Some(mode_i),
        sigma_j: mode_j,
        key_pos: Some(key_pos),
    })
}

/// Position-position comparison scores for query position i against every
/// key position. Callers apply the causal truncation j <= i.
pub fn term_pp(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    i: usize,
    mode_i: SigmaMode,
    mode_j: SigmaMode,
) -> Result<TermScores> {
    let sigma_i = sctx.resolve(mode_i, None, Some(i))?;
    let base = sctx.params.position_embedding.row(i).dot(&fh.wqk);
    let nums = sctx.params.position_embedding.dot(&base);
    let sigma_j = sctx.resolve_per_position(mode_j, None)?;
    let values = nums
        .iter()
        .zip(sigma_j.iter())
        .map(|(&n, &s)| n / (sigma_i * s))
        .collect();
    Ok(TermScores {
        kind: TermKind::PP,
        head: fh.head_index,
        query_token: None,
        query_pos: Some(i),
        keys: KeyIndex::Positions,
        values,
        sigma_i: Some(mode_i),
        sigma_j: mode_j,
        key_pos: None,
    })
}

/// Position self-assertion scores bqk . p_j / sigma_j for every j.
pub fn term_p(sctx: &SigmaCtx, fh: &FoldedHead, mode_j: SigmaMode) -> Result<TermScores> {
    let nums = sctx.params.position_embedding.dot(&fh.bqk);
    let sigma_j = sctx.resolve_per_position(mode_j, None)?;
    let values = nums
        .iter()
        .zip(sigma_j.iter())
        .map(|(&n, &s)| n / s)
        .collect();
    Ok(TermScores {
        kind: TermKind::P,
        head: fh.head_index,
        query_token: None,
        query_pos: None,
        keys: KeyIndex::Positions,
        values,
        sigma_i: None,
        sigma_j: mode_j,
        key_pos: None,
    })
}

/// Token self-assertion scores bqk . e_ID / sigma for every token id, with
/// sigma taken at a reference position (sigma is nearly position-constant
/// away from the sequence ends, so a mid-range reference is representative).
pub fn term_e(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    mode_j: SigmaMode,
    ref_pos: usize,
) -> Result<TermScores> {
    let nums = sctx.params.token_embedding.dot(&fh.bqk);
    let mut values = nums.to_vec();
    let keys = KeyIndex::AllTokens;
    divide_token_sigmas(sctx, &keys, &mut values, mode_j, ref_pos, 1.0)?;
    Ok(TermScores {
        kind: TermKind::E,
        head: fh.head_index,
        query_token: None,
        query_pos: None,
        keys,
        values,
        sigma_i: None,
        sigma_j: mode_j,
        key_pos: Some(ref_pos),
    })
}

/// Query-position vs key-token comparison scores.
pub fn term_pe(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    i: usize,
    keys: Keys,
    mode_i: SigmaMode,
    mode_j: SigmaMode,
    key_pos: usize,
) -> Result<TermScores> {
    let sigma_i = sctx.resolve(mode_i, None, Some(i))?;
    let base = sctx.params.position_embedding.row(i).dot(&fh.wqk);
    let (keys, mut values) = token_numerators(sctx, &base, keys)?;
    divide_token_sigmas(sctx, &keys, &mut values, mode_j, key_pos, sigma_i)?;
    Ok(TermScores {
        kind: TermKind::PE,
        head: fh.head_index,
        query_token: None,
        query_pos: Some(i),
        keys,
        values,
        sigma_i: Some(mode_i),
        sigma_j: mode_j,
        key_pos: Some(key_pos),
    })
}

/// Query-token vs key-position comparison scores over every j.
pub fn term_ep(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    query: u32,
    query_pos: usize,
    mode_i: SigmaMode,
    mode_j: SigmaMode,
) -> Result<TermScores> {
    check_token(sctx, query)?;
    let sigma_i = sctx.resolve(mode_i, Some(query), Some(query_pos))?;
    let base = sctx
        .params
        .token_embedding
        .row(query as usize)
        .dot(&fh.wqk);
    let nums = sctx.params.position_embedding.dot(&base);
    let sigma_j = sctx.resolve_per_position(mode_j, None)?;
    let values = nums
        .iter()
        .zip(sigma_j.iter())
        .map(|(&n, &s)| n / (sigma_i * s))
        .collect();
    Ok(TermScores {
        kind: TermKind::EP,
        head: fh.head_index,
        query_token: Some(query),
        query_pos: Some(query_pos),
        keys: KeyIndex::Positions,
        values,
        sigma_i: Some(mode_i),
        sigma_j: mode_j,
        key_pos: None,
    })
}

/// The position-only attention preview: pp + p summed over j <= i, and the
/// weights after a softmax with temperature sqrt(d_head).
#[derive(Debug, Clone)]
pub struct PositionBias {
    pub head: usize,
    pub query_pos: usize,
    pub sigma_mode: SigmaMode,
    /// pp + p for j in 0..=query_pos.
    pub scores: Vec<f64>,
    /// softmax(scores / sqrt(d_head)); sums to 1.
    pub weights: Vec<f64>,
}

pub fn position_bias(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    i: usize,
    mode: SigmaMode,
) -> Result<PositionBias> {
    if i >= sctx.params.dims.max_pos {
        return Err(Error::OutOfRange {
            what: "position",
            index: i,
            limit: sctx.params.dims.max_pos,
        });
    }
    let pp = term_pp(sctx, fh, i, mode, mode)?;
    let p = term_p(sctx, fh, mode)?;
    let scores: Vec<f64> = (0..=i).map(|j| pp.values[j] + p.values[j]).collect();
    let temperature = (sctx.params.dims.d_head as f64).sqrt();
    let scaled: Vec<f64> = scores.iter().map(|&s| s / temperature).collect();
    let weights = crate::numeric::softmax(&scaled);
    Ok(PositionBias {
        head: fh.head_index,
        query_pos: i,
        sigma_mode: mode,
        scores,
        weights,
    })
}

/// All six terms for one (token, position) pair of query and key, under
/// exact sigmas on both sides. Order matches [`TermKind::ALL`].
pub fn six_terms(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    token_i: u32,
    i: usize,
    token_j: u32,
    j: usize,
) -> Result<[f64; 6]> {
    check_token(sctx, token_i)?;
    check_token(sctx, token_j)?;
    let params = sctx.params;
    let sigma_i = crate::normstats::sigma_embed(params, token_i, i)?;
    let sigma_j = crate::normstats::sigma_embed(params, token_j, j)?;

    let e_i = params.token_embedding.row(token_i as usize);
    let p_i = params.position_embedding.row(i);
    let e_j = params.token_embedding.row(token_j as usize);
    let p_j = params.position_embedding.row(j);

    let a = e_i.dot(&fh.wqk); // query-token side through wqk
    let b = p_i.dot(&fh.wqk); // query-position side through wqk
    let ss = sigma_i * sigma_j;

    Ok([
        a.dot(&e_j) / ss,
        b.dot(&p_j) / ss,
        b.dot(&e_j) / ss,
        a.dot(&p_j) / ss,
        fh.bqk.dot(&e_j) / sigma_j,
        fh.bqk.dot(&p_j) / sigma_j,
    ])
}

/// Sum of the six terms; equals the folded score on the same inputs.
pub fn six_term_sum(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    token_i: u32,
    i: usize,
    token_j: u32,
    j: usize,
) -> Result<f64> {
    Ok(six_terms(sctx, fh, token_i, i, token_j, j)?.iter().sum())
}

/// Mean and standard deviation over the full vocabulary of the token
/// self-assertion score bqk . e_ID / sigma(e_ID + p_j), per position j: the
/// token-driven band around the position self-assertion curve. The std is
/// taken over the full vocabulary.
pub fn term_e_spread_by_position(sctx: &SigmaCtx, fh: &FoldedHead) -> Result<Vec<(f64, f64)>> {
    use rayon::prelude::*;
    let params = sctx.params;
    let nums = params.token_embedding.dot(&fh.bqk);
    let moments = crate::normstats::VocabMoments::compute(params.token_embedding.view());
    (0..params.dims.max_pos)
        .into_par_iter()
        .map(|j| {
            let sig = crate::normstats::sigma_exact_all_tokens(params, &moments, j)?;
            let n = nums.len() as f64;
            let mut sum = 0.0;
            let mut sq = 0.0;
            for (&num, &s) in nums.iter().zip(&sig) {
                let v = num / s;
                sum += v;
                sq += v * v;
            }
            let mean = sum / n;
            Ok((mean, (sq / n - mean * mean).max(0.0).sqrt()))
        })
        .collect()
}

/// All six term rows for one sequence at query position i, exact sigmas,
/// over key positions j in 0..=i. Indexed like [`TermKind::ALL`].
pub fn term_rows_for_sequence(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    seq: &[u32],
    i: usize,
) -> Result<[Vec<f64>; 6]> {
    if i >= seq.len() {
        return Err(Error::OutOfRange {
            what: "query position",
            index: i,
            limit: seq.len(),
        });
    }
    let params = sctx.params;
    let sigma_i = crate::normstats::sigma_embed(params, seq[i], i)?;
    let e_i = params.token_embedding.row(seq[i] as usize);
    let p_i = params.position_embedding.row(i);
    let a = e_i.dot(&fh.wqk);
    let b = p_i.dot(&fh.wqk);

    let mut rows: [Vec<f64>; 6] = Default::default();
    for r in rows.iter_mut() {
        r.reserve(i + 1);
    }
    for j in 0..=i {
        check_token(sctx, seq[j])?;
        let sigma_j = crate::normstats::sigma_embed(params, seq[j], j)?;
        let e_j = params.token_embedding.row(seq[j] as usize);
        let p_j = params.position_embedding.row(j);
        let ss = sigma_i * sigma_j;
        rows[0].push(a.dot(&e_j) / ss);
        rows[1].push(b.dot(&p_j) / ss);
        rows[2].push(b.dot(&e_j) / ss);
        rows[3].push(a.dot(&p_j) / ss);
        rows[4].push(fh.bqk.dot(&e_j) / sigma_j);
        rows[5].push(fh.bqk.dot(&p_j) / sigma_j);
    }
    Ok(rows)
}

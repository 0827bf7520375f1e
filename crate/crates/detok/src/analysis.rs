//! Evaluation procedures over the decomposed scores: empirical first-layer
//! attention, AUROC head ranking against bigram counts, per-term KL
//! contributions, Spearman statistics, and top-k detokenization reports.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::corpus::BigramCounts;
use crate::error::{Error, Result};
use crate::folding::{FoldedHead, FoldedModel};
use crate::normstats::{sigma_embed, SigmaCtx, SigmaMode};
use crate::numeric::{argsort_desc, kl_from_logits, softmax, top_k_desc};
use crate::terms::{term_ee, term_rows_for_sequence, Keys, TermKind};
use crate::tokenizer::Tokenizer;

/// Normalized attention weights for one (sequence, position, head).
#[derive(Debug, Clone)]
pub struct AttentionRow {
    pub seq: Vec<u32>,
    pub pos: usize,
    pub head: usize,
    /// alpha over key positions 0..=pos; sums to 1.
    pub alpha: Vec<f64>,
}

/// First-layer attention rows for every head at query position `i`,
/// computed through the folded path with exact sigmas.
pub fn empirical_attention(
    sctx: &SigmaCtx,
    model: &FoldedModel,
    seq: &[u32],
    i: usize,
) -> Result<Vec<AttentionRow>> {
    if i >= seq.len() {
        return Err(Error::OutOfRange {
            what: "query position",
            index: i,
            limit: seq.len(),
        });
    }
    let params = sctx.params;
    let d = params.dims.d;
    let temperature = (params.dims.d_head as f64).sqrt();

    // Raw embedding sums and sigmas for positions 0..=i, shared by all heads.
    let mut x = Array2::zeros((i + 1, d));
    let mut sig = Vec::with_capacity(i + 1);
    for j in 0..=i {
        let row = params.embedding_sum(seq[j], j)?;
        x.row_mut(j).assign(&row);
        sig.push(sigma_embed(params, seq[j], j)?);
    }

    let mut rows = Vec::with_capacity(model.heads.len());
    for fh in &model.heads {
        // s_j = ((x_i . wqk) / sigma_i + bqk) . x_j / sigma_j
        let mut u = x.row(i).dot(&fh.wqk);
        u.mapv_inplace(|v| v / sig[i]);
        u += &fh.bqk;
        let raw = x.dot(&u);
        let logits: Vec<f64> = raw
            .iter()
            .zip(&sig)
            .map(|(&s, &sj)| s / sj / temperature)
            .collect();
        rows.push(AttentionRow {
            seq: seq.to_vec(),
            pos: i,
            head: fh.head_index,
            alpha: softmax(&logits),
        });
    }
    Ok(rows)
}

/// A swept ROC curve with its trapezoidal area.
#[derive(Debug, Clone)]
pub struct RocCurve {
    /// Distinct score thresholds, descending.
    pub thresholds: Vec<f64>,
    /// True-positive rate after each threshold: bigram mass above it.
    pub tpr: Vec<f64>,
    /// False-positive rate after each threshold: vocabulary fraction above it.
    pub fpr: Vec<f64>,
    pub auroc: f64,
}

/// Build a ROC curve from per-key scores and the positive (bigram) mass per
/// key index. The negative class is the whole key population, so FPR is the
/// unweighted fraction of keys above threshold.
pub fn roc_from_scores(scores: &[f64], positive_mass: &[(usize, u64)]) -> Result<RocCurve> {
    let n = scores.len();
    let mut mass = vec![0u64; n];
    let mut total: u64 = 0;
    for &(idx, c) in positive_mass {
        if idx >= n {
            return Err(Error::OutOfRange {
                what: "key index",
                index: idx,
                limit: n,
            });
        }
        mass[idx] += c;
        total += c;
    }
    if total == 0 {
        return Err(Error::InvalidArgument("zero positive mass".into()));
    }

    let order = argsort_desc(scores);
    let mut thresholds = Vec::new();
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let mut cum_mass = 0u64;
    let mut cum_keys = 0usize;
    let mut k = 0;
    while k < n {
        let score = scores[order[k]];
        // Consume the whole tie group at this threshold.
        while k < n && scores[order[k]] == score {
            cum_mass += mass[order[k]];
            cum_keys += 1;
            k += 1;
        }
        thresholds.push(score);
        tpr.push(cum_mass as f64 / total as f64);
        fpr.push(cum_keys as f64 / n as f64);
    }

    let mut auroc = 0.0;
    for t in 1..tpr.len() {
        auroc += (fpr[t] - fpr[t - 1]) * (tpr[t] + tpr[t - 1]) / 2.0;
    }
    Ok(RocCurve {
        thresholds,
        tpr,
        fpr,
        auroc,
    })
}

/// ROC of token-token scores for one query against its incoming bigram mass.
pub fn auroc_for_query(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    query: u32,
    bigrams: &BigramCounts,
    mode_j: SigmaMode,
    ref_pos: usize,
) -> Result<RocCurve> {
    if bigrams.incoming_total(query) == 0 {
        return Err(Error::UndefinedAuroc { query });
    }
    let scores = term_ee(
        sctx,
        fh,
        query,
        Keys::All,
        SigmaMode::NoLayerNorm,
        mode_j,
        0,
        ref_pos,
    )?;
    let index = bigrams.incoming_index();
    let mass: Vec<(usize, u64)> = index[query as usize]
        .iter()
        .map(|&(prev, c)| (prev as usize, c))
        .collect();
    roc_from_scores(&scores.values, &mass)
}

/// Query-selection policy for [`mean_auroc`].
#[derive(Debug, Clone, Copy)]
pub struct QueryPolicy {
    /// Minimum incoming bigram mass for a token to count as a query.
    pub min_count: u64,
    /// Cap on the number of queries, subsampled with `seed` when exceeded.
    pub max_queries: Option<usize>,
    pub seed: u64,
    /// When set, each query's mass vector is permuted over keys with a
    /// per-query seed, giving the chance-level null.
    pub permute_null: bool,
}

impl Default for QueryPolicy {
    fn default() -> Self {
        QueryPolicy {
            min_count: 100,
            max_queries: Some(2000),
            seed: 0,
            permute_null: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeanAuroc {
    pub mean: f64,
    pub queries_used: usize,
}

/// Unweighted mean per-query AUROC for one head.
pub fn mean_auroc(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    bigrams: &BigramCounts,
    mode_j: SigmaMode,
    ref_pos: usize,
    policy: QueryPolicy,
) -> Result<MeanAuroc> {
    let vocab = sctx.params.dims.vocab_size;
    let mut queries: Vec<u32> = (0..vocab as u32)
        .filter(|&q| bigrams.incoming_total(q) >= policy.min_count)
        .collect();
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if let Some(cap) = policy.max_queries {
        if queries.len() > cap {
            let mut rng = ChaCha12Rng::seed_from_u64(policy.seed);
            let picked = sample(&mut rng, queries.len(), cap);
            let mut subset: Vec<u32> = picked.into_iter().map(|k| queries[k]).collect();
            subset.sort_unstable();
            queries = subset;
        }
    }

    let index = bigrams.incoming_index();
    let sigma_j = sctx.resolve_per_token(mode_j, ref_pos)?;

    // One GEMM per block of queries, then a per-query sweep.
    const BLOCK: usize = 256;
    let e = &sctx.params.token_embedding;
    let mut sum = 0.0;
    for block in queries.chunks(BLOCK) {
        let q_rows = e.select(ndarray::Axis(0), &block.iter().map(|&q| q as usize).collect::<Vec<_>>());
        let projected = q_rows.dot(&fh.wqk); // [block, d]
        let scores_block = projected.dot(&e.t()); // [block, vocab]
        let partial: f64 = block
            .par_iter()
            .enumerate()
            .map(|(row, &q)| {
                let mut scores: Vec<f64> = scores_block.row(row).to_vec();
                for (s, sj) in scores.iter_mut().zip(&sigma_j) {
                    *s /= sj;
                }
                let mass: Vec<(usize, u64)> = if policy.permute_null {
                    let mut rng = ChaCha12Rng::seed_from_u64(
                        policy.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(q as u64),
                    );
                    let perm = sample(&mut rng, vocab, vocab);
                    index[q as usize]
                        .iter()
                        .map(|&(prev, c)| (perm.index(prev as usize), c))
                        .collect()
                } else {
                    index[q as usize]
                        .iter()
                        .map(|&(prev, c)| (prev as usize, c))
                        .collect()
                };
                roc_from_scores(&scores, &mass).map(|r| r.auroc)
            })
            .sum::<Result<f64>>()?;
        sum += partial;
    }
    Ok(MeanAuroc {
        mean: sum / queries.len() as f64,
        queries_used: queries.len(),
    })
}

/// KL contribution of one term to one attention row.
#[derive(Debug, Clone, Copy)]
pub struct ContributionRecord {
    pub head: usize,
    pub pos: usize,
    pub term: TermKind,
    /// D_KL(P || Q) in nats, P the row with the term removed, Q the full row.
    pub kl: f64,
}

/// Contribution of `term` at query position `i` of one sequence.
pub fn term_contribution(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    seq: &[u32],
    i: usize,
    term: TermKind,
) -> Result<ContributionRecord> {
    let rows = term_rows_for_sequence(sctx, fh, seq, i)?;
    let temperature = (sctx.params.dims.d_head as f64).sqrt();
    let term_idx = TermKind::ALL.iter().position(|&k| k == term).unwrap();
    let mut full = vec![0.0; i + 1];
    for row in &rows {
        for (f, v) in full.iter_mut().zip(row) {
            *f += v;
        }
    }
    let removed: Vec<f64> = full
        .iter()
        .zip(&rows[term_idx])
        .map(|(&f, &t)| (f - t) / temperature)
        .collect();
    let full_logits: Vec<f64> = full.iter().map(|&f| f / temperature).collect();
    Ok(ContributionRecord {
        head: fh.head_index,
        pos: i,
        term,
        kl: kl_from_logits(&removed, &full_logits),
    })
}

/// Mean and standard deviation of a term's KL contribution over sequences.
#[derive(Debug, Clone, Copy)]
pub struct ContributionStats {
    pub term: TermKind,
    pub head: usize,
    pub pos: usize,
    pub kl_mean: f64,
    pub kl_std: f64,
    pub samples: usize,
}

/// Per-term contribution statistics over a sample of sequences.
pub fn contribution_summary(
    sctx: &SigmaCtx,
    fh: &FoldedHead,
    seqs: &[Vec<u32>],
    i: usize,
) -> Result<Vec<ContributionStats>> {
    let per_seq: Vec<[f64; 6]> = seqs
        .par_iter()
        .map(|seq| {
            let rows = term_rows_for_sequence(sctx, fh, seq, i)?;
            let temperature = (sctx.params.dims.d_head as f64).sqrt();
            let mut full = vec![0.0; i + 1];
            for row in &rows {
                for (f, v) in full.iter_mut().zip(row) {
                    *f += v;
                }
            }
            let full_logits: Vec<f64> = full.iter().map(|&f| f / temperature).collect();
            let mut kls = [0.0; 6];
            for (t, row) in rows.iter().enumerate() {
                let removed: Vec<f64> = full
                    .iter()
                    .zip(row)
                    .map(|(&f, &v)| (f - v) / temperature)
                    .collect();
                kls[t] = kl_from_logits(&removed, &full_logits);
            }
            Ok(kls)
        })
        .collect::<Result<_>>()?;

    let n = per_seq.len().max(1) as f64;
    Ok(TermKind::ALL
        .iter()
        .enumerate()
        .map(|(t, &term)| {
            let mean = per_seq.iter().map(|k| k[t]).sum::<f64>() / n;
            let var = per_seq
                .iter()
                .map(|k| (k[t] - mean) * (k[t] - mean))
                .sum::<f64>()
                / n;
            ContributionStats {
                term,
                head: fh.head_index,
                pos: i,
                kl_mean: mean,
                kl_std: var.sqrt(),
                samples: per_seq.len(),
            }
        })
        .collect())
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(
            "spearman needs two equal-length arrays of at least 2 values".into(),
        ));
    }
    let rx = fractional_ranks(x);
    let ry = fractional_ranks(y);
    pearson(&rx, &ry)
}

fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[k]] {
            end += 1;
        }
        let avg = (k + end) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=end] {
            ranks[idx] = avg;
        }
        k = end + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedSpearman);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One row of a detokenization report: a ranked key token for a query.
#[derive(Debug, Clone)]
pub struct DetokRow {
    pub word: String,
    pub query_token: u32,
    pub query_text: String,
    pub head: usize,
    pub rank: usize,
    pub key_token: u32,
    pub key_text: String,
    pub score: f64,
    /// True when (head, query, key, rank) appears in the curated pair list
    /// within one rank.
    pub known: bool,
}

#[derive(Debug, Clone)]
pub struct DetokReport {
    pub rows: Vec<DetokRow>,
    /// Words skipped because they encode to a single token.
    pub skipped: Vec<String>,
}

/// A curated (head, query text, key text, rank) reference pair.
#[derive(Debug, Clone)]
pub struct CuratedPair {
    pub head: usize,
    pub query: String,
    pub key: String,
    pub rank: usize,
}

/// Curated two-token phrase pairs used to flag report rows.
pub fn curated_pairs() -> Vec<CuratedPair> {
    let text = include_str!("../fixtures/detok_pairs.csv");
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields = parse_csv_line(line);
        if fields.len() == 4 {
            out.push(CuratedPair {
                head: fields[0].parse().unwrap_or(usize::MAX),
                query: fields[1].clone(),
                key: fields[2].clone(),
                rank: fields[3].parse().unwrap_or(0),
            });
        }
    }
    out
}

fn parse_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if in_quotes => {
                if chars.peek() == Some(&'"') {
                    cur.push('"');
                    chars.next();
                } else {
                    in_quotes = false;
                }
            }
            '"' => in_quotes = true,
            ',' if !in_quotes => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Top-k key tokens by token-token score for the final token of each word,
/// across the given heads.
pub fn detok_report(
    sctx: &SigmaCtx,
    model: &FoldedModel,
    tokenizer: &Tokenizer,
    words: &[String],
    heads: &[usize],
    k: usize,
    mode_j: SigmaMode,
    ref_pos: usize,
) -> Result<DetokReport> {
    let curated = curated_pairs();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for word in words {
        let ids = tokenizer.encode(word)?;
        if ids.len() < 2 {
            skipped.push(word.clone());
            continue;
        }
        let query = *ids.last().unwrap();
        let query_text = tokenizer.decode_one(query)?;
        for &h in heads {
            let fh = model.head(h)?;
            let scores = term_ee(
                sctx,
                fh,
                query,
                Keys::All,
                SigmaMode::NoLayerNorm,
                mode_j,
                0,
                ref_pos,
            )?;
            for (rank0, idx) in top_k_desc(&scores.values, k).into_iter().enumerate() {
                let key_token = idx as u32;
                let key_text = tokenizer.decode_one(key_token)?;
                let rank = rank0 + 1;
                let known = curated.iter().any(|p| {
                    p.head == h
                        && p.query == query_text
                        && p.key == key_text
                        && p.rank.abs_diff(rank) <= 1
                });
                rows.push(DetokRow {
                    word: word.clone(),
                    query_token: query,
                    query_text: query_text.clone(),
                    head: h,
                    rank,
                    key_token,
                    key_text,
                    score: scores.values[idx],
                    known,
                });
            }
        }
    }
    Ok(DetokReport { rows, skipped })
}

/// Deterministic random sequences drawn from the vocabulary, for oracle
/// checks that need no corpus.
pub fn random_sequences(
    vocab_size: usize,
    len: usize,
    count: usize,
    seed: u64,
) -> Vec<Vec<u32>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..len)
                .map(|_| rng.random_range(0..vocab_size as u32))
                .collect()
        })
        .collect()
}

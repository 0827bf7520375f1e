//! LayerNorm sigma computations and embedding-variance statistics.
//!
//! sigma(x) = sqrt(Var(x) + eps) with population (1/d) variance; it is the
//! only non-affine part of LayerNorm once the affine part has been folded
//! into the attention projections.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::weights::FirstLayerParams;

/// Which sigma to use when denominating a score.
///
/// `Exact` means the sigma of the actual (token, position) pair under
/// consideration; the vocab aggregates summarize over token identity at a
/// fixed position; `NoLayerNorm` sets sigma to 1 so raw numerators pass
/// through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    Exact,
    MeanOverVocab,
    MaxOverVocab,
    MinOverVocab,
    NoLayerNorm,
}

impl SigmaMode {
    pub fn label(self) -> &'static str {
        match self {
            SigmaMode::Exact => "exact",
            SigmaMode::MeanOverVocab => "mean",
            SigmaMode::MaxOverVocab => "max",
            SigmaMode::MinOverVocab => "min",
            SigmaMode::NoLayerNorm => "none",
        }
    }
}

/// Per-position aggregates of sigma(e_ID + p_j) over the vocabulary.
#[derive(Debug, Clone)]
pub struct SigmaTable {
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Number of token ids aggregated per position.
    pub sample_size: usize,
}

/// Per-row population variances of a matrix with summary statistics.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub variances: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub argmin: usize,
    pub argmax: usize,
}

/// sigma(x) = sqrt(mean((x - mean(x))^2) + eps).
pub fn sigma(x: ArrayView1<f64>, eps: f64) -> f64 {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (var + eps).sqrt()
}

/// sigma of the raw embedding sum e_ID + p_pos.
pub fn sigma_embed(params: &FirstLayerParams, token: u32, pos: usize) -> Result<f64> {
    let x = params.embedding_sum(token, pos)?;
    Ok(sigma(x.view(), params.eps))
}

/// Per-row first and second moments of the token embedding matrix, reused by
/// the vectorized sigma computations.
#[derive(Debug, Clone)]
pub struct VocabMoments {
    /// Row means of E.
    pub mean: Vec<f64>,
    /// Row mean squares of E.
    pub mean_sq: Vec<f64>,
}

impl VocabMoments {
    pub fn compute(e: ArrayView2<f64>) -> Self {
        let d = e.ncols() as f64;
        let mut mean = Vec::with_capacity(e.nrows());
        let mut mean_sq = Vec::with_capacity(e.nrows());
        for row in e.rows() {
            let s: f64 = row.sum();
            let sq: f64 = row.iter().map(|&v| v * v).sum();
            mean.push(s / d);
            mean_sq.push(sq / d);
        }
        VocabMoments { mean, mean_sq }
    }
}

/// sigma(e_ID + p_pos) for every token id at one position, computed without
/// materializing the summed vectors: Var(e + p) decomposes into the row
/// moments of E plus a single E.p matrix-vector product.
pub fn sigma_exact_all_tokens(
    params: &FirstLayerParams,
    moments: &VocabMoments,
    pos: usize,
) -> Result<Vec<f64>> {
    if pos >= params.dims.max_pos {
        return Err(Error::OutOfRange {
            what: "position",
            index: pos,
            limit: params.dims.max_pos,
        });
    }
    let d = params.dims.d as f64;
    let p = params.position_embedding.row(pos);
    let p_mean = p.sum() / d;
    let p_mean_sq = p.iter().map(|&v| v * v).sum::<f64>() / d;
    let cross = params.token_embedding.dot(&p); // E . p, one entry per token
    let mut out = Vec::with_capacity(params.dims.vocab_size);
    for id in 0..params.dims.vocab_size {
        let mean_sq = moments.mean_sq[id] + 2.0 * cross[id] / d + p_mean_sq;
        let mean = moments.mean[id] + p_mean;
        let var = mean_sq - mean * mean;
        out.push((var.max(0.0) + params.eps).sqrt());
    }
    Ok(out)
}

/// Aggregate sigma(e_ID + p_j) over the vocabulary (or a seeded sample of it)
/// at every position.
pub fn sigma_table(
    params: &FirstLayerParams,
    vocab_sample: Option<usize>,
    seed: u64,
) -> Result<SigmaTable> {
    let vocab = params.dims.vocab_size;
    let ids: Vec<usize> = match vocab_sample {
        Some(n) if n < vocab => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = sample(&mut rng, vocab, n).into_iter().collect();
            picked.sort_unstable();
            picked
        }
        _ => (0..vocab).collect(),
    };
    let sample_size = ids.len();
    if sample_size == 0 {
        return Err(Error::InvalidArgument("empty vocab sample".into()));
    }

    let e_sel = params.token_embedding.select(ndarray::Axis(0), &ids);
    let moments = VocabMoments::compute(e_sel.view());
    let d = params.dims.d as f64;

    let rows: Vec<(f64, f64, f64)> = (0..params.dims.max_pos)
        .into_par_iter()
        .map(|pos| {
            let p = params.position_embedding.row(pos);
            let p_mean = p.sum() / d;
            let p_mean_sq = p.iter().map(|&v| v * v).sum::<f64>() / d;
            let cross = e_sel.dot(&p);
            let mut sum = 0.0;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for k in 0..sample_size {
                let mean_sq = moments.mean_sq[k] + 2.0 * cross[k] / d + p_mean_sq;
                let mean = moments.mean[k] + p_mean;
                let var = (mean_sq - mean * mean).max(0.0);
                let s = (var + params.eps).sqrt();
                sum += s;
                min = min.min(s);
                max = max.max(s);
            }
            (sum / sample_size as f64, min, max)
        })
        .collect();

    Ok(SigmaTable {
        mean: rows.iter().map(|r| r.0).collect(),
        min: rows.iter().map(|r| r.1).collect(),
        max: rows.iter().map(|r| r.2).collect(),
        sample_size,
    })
}

/// Per-row population variance of a matrix.
pub fn embedding_variances(m: ArrayView2<f64>) -> VarianceReport {
    let d = m.ncols() as f64;
    let variances: Vec<f64> = m
        .rows()
        .into_iter()
        .map(|row| {
            let mean = row.sum() / d;
            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d
        })
        .collect();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut argmin = 0;
    let mut argmax = 0;
    let mut sum = 0.0;
    for (i, &v) in variances.iter().enumerate() {
        sum += v;
        if v < min {
            min = v;
            argmin = i;
        }
        if v > max {
            max = v;
            argmax = i;
        }
    }
    VarianceReport {
        mean: sum / variances.len() as f64,
        variances,
        min,
        max,
        argmin,
        argmax,
    }
}

/// Variance (across rows) of the row L2 norms. With `normalize` each row is
/// first divided by its own sigma, i.e. LayerNorm's scaling applied to the
/// token embeddings alone.
pub fn norm_variance(e: ArrayView2<f64>, normalize: bool, eps: f64) -> f64 {
    let norms: Vec<f64> = e
        .rows()
        .into_iter()
        .map(|row| {
            let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            if normalize {
                norm / sigma(row, eps)
            } else {
                norm
            }
        })
        .collect();
    crate::numeric::population_variance(&norms)
}

/// Diagnostic comparing the mean absolute covariance between token and
/// position embeddings against the mean token-embedding variance.
#[derive(Debug, Clone, Copy)]
pub struct CovarianceDiagnostic {
    pub mean_abs_covariance: f64,
    pub mean_token_variance: f64,
    /// mean_token_variance / mean_abs_covariance.
    pub ratio: f64,
}

/// Mean |cov(e_ID, p_j)| over a seeded token sample and all positions,
/// reported against the mean token variance. Reported as a diagnostic only.
pub fn covariance_diagnostic(
    params: &FirstLayerParams,
    token_sample: usize,
    seed: u64,
) -> CovarianceDiagnostic {
    let vocab = params.dims.vocab_size;
    let ids: Vec<usize> = if token_sample < vocab {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        sample(&mut rng, vocab, token_sample).into_iter().collect()
    } else {
        (0..vocab).collect()
    };
    let d = params.dims.d as f64;

    let token_var: f64 = ids
        .iter()
        .map(|&id| {
            let row = params.token_embedding.row(id);
            let mean = row.sum() / d;
            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d
        })
        .sum::<f64>()
        / ids.len() as f64;

    let p_means: Vec<f64> = params
        .position_embedding
        .rows()
        .into_iter()
        .map(|r| r.sum() / d)
        .collect();

    let total: f64 = ids
        .par_iter()
        .map(|&id| {
            let e = params.token_embedding.row(id);
            let e_mean = e.sum() / d;
            let mut acc = 0.0;
            for (pos, p) in params.position_embedding.rows().into_iter().enumerate() {
                let dot = e.dot(&p) / d;
                acc += (dot - e_mean * p_means[pos]).abs();
            }
            acc
        })
        .sum();
    let mean_abs_cov = total / (ids.len() * params.dims.max_pos) as f64;

    CovarianceDiagnostic {
        mean_abs_covariance: mean_abs_cov,
        mean_token_variance: token_var,
        ratio: token_var / mean_abs_cov,
    }
}

/// Resolves sigma values for score denominators, carrying the table needed by
/// the vocab-aggregate modes.
pub struct SigmaCtx<'a> {
    pub params: &'a FirstLayerParams,
    pub table: Option<&'a SigmaTable>,
}

impl<'a> SigmaCtx<'a> {
    pub fn new(params: &'a FirstLayerParams) -> Self {
        SigmaCtx {
            params,
            table: None,
        }
    }

    pub fn with_table(params: &'a FirstLayerParams, table: &'a SigmaTable) -> Self {
        SigmaCtx {
            params,
            table: Some(table),
        }
    }

    fn table(&self) -> Result<&SigmaTable> {
        self.table.ok_or_else(|| {
            Error::InvalidArgument(
                "sigma mode requires a sigma table; build one with sigma_table()".into(),
            )
        })
    }

    fn checked_pos(&self, pos: Option<usize>) -> Result<usize> {
        let pos = pos.ok_or_else(|| {
            Error::InvalidArgument("sigma mode requires a position argument".into())
        })?;
        if pos >= self.params.dims.max_pos {
            return Err(Error::OutOfRange {
                what: "position",
                index: pos,
                limit: self.params.dims.max_pos,
            });
        }
        Ok(pos)
    }

    /// Resolve one sigma. `Exact` needs both the token and the position.
    pub fn resolve(&self, mode: SigmaMode, token: Option<u32>, pos: Option<usize>) -> Result<f64> {
        match mode {
            SigmaMode::NoLayerNorm => Ok(1.0),
            SigmaMode::Exact => {
                let token = token.ok_or_else(|| {
                    Error::InvalidArgument(
                        "exact sigma requires a token id; use an aggregate mode when the token \
                         is unknown"
                            .into(),
                    )
                })?;
                sigma_embed(self.params, token, self.checked_pos(pos)?)
            }
            SigmaMode::MeanOverVocab => Ok(self.table()?.mean[self.checked_pos(pos)?]),
            SigmaMode::MaxOverVocab => Ok(self.table()?.max[self.checked_pos(pos)?]),
            SigmaMode::MinOverVocab => Ok(self.table()?.min[self.checked_pos(pos)?]),
        }
    }

    /// Sigma for every position 0..max_pos under an aggregate (non-exact)
    /// mode, or the exact sigma of a fixed token at every position.
    pub fn resolve_per_position(&self, mode: SigmaMode, token: Option<u32>) -> Result<Array1<f64>> {
        let max_pos = self.params.dims.max_pos;
        match mode {
            SigmaMode::NoLayerNorm => Ok(Array1::ones(max_pos)),
            SigmaMode::MeanOverVocab => Ok(Array1::from_vec(self.table()?.mean.clone())),
            SigmaMode::MaxOverVocab => Ok(Array1::from_vec(self.table()?.max.clone())),
            SigmaMode::MinOverVocab => Ok(Array1::from_vec(self.table()?.min.clone())),
            SigmaMode::Exact => {
                let token = token.ok_or_else(|| {
                    Error::InvalidArgument("exact sigma over positions requires a token id".into())
                })?;
                (0..max_pos)
                    .map(|pos| sigma_embed(self.params, token, pos))
                    .collect()
            }
        }
    }

    /// Sigma for every token id at a fixed position. Exact mode gives each
    /// token its own sigma; aggregate modes give a constant.
    pub fn resolve_per_token(&self, mode: SigmaMode, pos: usize) -> Result<Vec<f64>> {
        let vocab = self.params.dims.vocab_size;
        match mode {
            SigmaMode::NoLayerNorm => Ok(vec![1.0; vocab]),
            SigmaMode::Exact => {
                let moments = VocabMoments::compute(self.params.token_embedding.view());
                sigma_exact_all_tokens(self.params, &moments, pos)
            }
            _ => {
                let s = self.resolve(mode, None, Some(pos))?;
                Ok(vec![s; vocab])
            }
        }
    }
}

//! LayerNorm folding into the attention projections.
//!
//! The linear part of LayerNorm (mean-centering, gamma scaling, beta shift)
//! is absorbed into each head's query/key transformations, leaving only the
//! division by sigma. The folded products
//!
//!   wqk = wq_f . wk_f^T        (d x d)
//!   bqk = bq_f . wk_f^T        (d,)
//!
//! drive every downstream score. The key bias is dropped entirely: it
//! contributes a key-independent constant to each attention row, which the
//! softmax ignores. [`score_original`] keeps the literal unfolded computation
//! (including that bias) as the equivalence oracle.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::container::{self, StorageDtype};
use crate::error::{Error, Result};
use crate::weights::{FirstLayerParams, HeadParams, ModelDims};

/// One head's LayerNorm-folded projections and derived score objects.
#[derive(Debug, Clone)]
pub struct FoldedHead {
    /// Folded query projection, `[d, d_head]`.
    pub wq: Array2<f64>,
    /// Folded key projection, `[d, d_head]`.
    pub wk: Array2<f64>,
    /// Folded query bias, `[d_head]`.
    pub bq: Array1<f64>,
    /// wq . wk^T, `[d, d]`.
    pub wqk: Array2<f64>,
    /// bq . wk^T, `[d]`.
    pub bqk: Array1<f64>,
    pub head_index: usize,
}

/// Apply the centering projector and gamma scaling to a projection matrix:
/// (I - (1/d) 1^T 1) . diag(gamma) . w, realized as a per-column mean
/// subtraction of the row-scaled matrix.
fn center_and_scale(w: &Array2<f64>, gamma: ArrayView1<f64>) -> Array2<f64> {
    let d = w.nrows();
    let mut scaled = w.clone();
    for (mut row, &g) in scaled.rows_mut().into_iter().zip(gamma.iter()) {
        row.mapv_inplace(|v| v * g);
    }
    let col_means = scaled.sum_axis(ndarray::Axis(0)) / d as f64;
    for mut row in scaled.rows_mut() {
        row -= &col_means;
    }
    scaled
}

/// Fold LayerNorm's affine part into one head's query/key projections.
pub fn fold_head(
    head: &HeadParams,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    _dims: ModelDims,
) -> FoldedHead {
    let wq = center_and_scale(&head.wq, gamma);
    let wk = center_and_scale(&head.wk, gamma);
    // The folded bias uses the unfolded projection: beta . W + b.
    let bq = beta.dot(&head.wq) + &head.bq;
    let wqk = wq.dot(&wk.t());
    let bqk = bq.dot(&wk.t());
    FoldedHead {
        wq,
        wk,
        bq,
        wqk,
        bqk,
        head_index: head.head_index,
    }
}

/// All heads folded, with the dims they came from.
#[derive(Debug, Clone)]
pub struct FoldedModel {
    pub heads: Vec<FoldedHead>,
    pub dims: ModelDims,
}

impl FoldedModel {
    pub fn from_params(params: &FirstLayerParams) -> Self {
        let heads = crate::weights::split_heads(params);
        let folded = heads
            .par_iter()
            .map(|h| fold_head(h, params.ln_gamma.view(), params.ln_beta.view(), params.dims))
            .collect();
        FoldedModel {
            heads: folded,
            dims: params.dims,
        }
    }

    pub fn head(&self, index: usize) -> Result<&FoldedHead> {
        self.heads.get(index).ok_or(Error::OutOfRange {
            what: "head index",
            index,
            limit: self.heads.len(),
        })
    }

    /// Write the folded tensors to a container file, tagged with a content
    /// hash of the source weight file.
    pub fn save(&self, path: &Path, source_hash: &str) -> Result<()> {
        let mut owned: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        for h in &self.heads {
            let i = h.head_index;
            owned.push((
                format!("head.{i}.wq"),
                vec![self.dims.d, self.dims.d_head],
                h.wq.iter().cloned().collect(),
            ));
            owned.push((
                format!("head.{i}.wk"),
                vec![self.dims.d, self.dims.d_head],
                h.wk.iter().cloned().collect(),
            ));
            owned.push((format!("head.{i}.bq"), vec![self.dims.d_head], h.bq.to_vec()));
            owned.push((
                format!("head.{i}.wqk"),
                vec![self.dims.d, self.dims.d],
                h.wqk.iter().cloned().collect(),
            ));
            owned.push((format!("head.{i}.bqk"), vec![self.dims.d], h.bqk.to_vec()));
        }
        let tensors: Vec<(&str, &[usize], &[f64])> = owned
            .iter()
            .map(|(n, s, d)| (n.as_str(), s.as_slice(), d.as_slice()))
            .collect();
        let mut meta = HashMap::new();
        meta.insert("source_hash".to_string(), source_hash.to_string());
        meta.insert("heads".to_string(), self.heads.len().to_string());
        meta.insert("d".to_string(), self.dims.d.to_string());
        meta.insert("vocab_size".to_string(), self.dims.vocab_size.to_string());
        meta.insert("max_pos".to_string(), self.dims.max_pos.to_string());
        container::write_tensors(path, &tensors, StorageDtype::F64, Some(meta))
    }

    /// Load a folded cache. When `expected_hash` is given, a stored hash that
    /// differs is rejected so stale caches never go unnoticed.
    pub fn load(path: &Path, dims: ModelDims, expected_hash: Option<&str>) -> Result<Self> {
        let meta = container::read_metadata(path)?;
        if let Some(expected) = expected_hash {
            match meta.get("source_hash") {
                Some(h) if h == expected => {}
                Some(h) => {
                    return Err(Error::Corrupt(format!(
                        "folded cache was built from a different weight file \
                         (cache {h}, expected {expected})"
                    )))
                }
                None => {
                    return Err(Error::Corrupt(
                        "folded cache has no source_hash metadata".into(),
                    ))
                }
            }
        }
        let n_heads: usize = meta
            .get("heads")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Corrupt("folded cache has no head count".into()))?;
        let tensors = container::read_tensors(path, None)?;
        let mut heads = Vec::with_capacity(n_heads);
        for i in 0..n_heads {
            let get = |suffix: &str| -> Result<container::Tensor64> {
                let name = format!("head.{i}.{suffix}");
                tensors
                    .get(&name)
                    .cloned()
                    .ok_or(Error::TensorNotFound { name })
            };
            heads.push(FoldedHead {
                wq: get("wq")?.into_array2("wq")?,
                wk: get("wk")?.into_array2("wk")?,
                bq: get("bq")?.into_array1("bq")?,
                wqk: get("wqk")?.into_array2("wqk")?,
                bqk: get("bqk")?.into_array1("bqk")?,
                head_index: i,
            });
        }
        Ok(FoldedModel { heads, dims })
    }
}

/// Folded-path score: s = (x_i / s_i) . wqk . (x_j / s_j)^T + bqk . (x_j / s_j)^T
/// where x are raw embedding sums and the sigmas were computed on them.
pub fn score_folded(
    x_i: ArrayView1<f64>,
    x_j: ArrayView1<f64>,
    fh: &FoldedHead,
    sigma_i: f64,
    sigma_j: f64,
) -> Result<f64> {
    if sigma_i <= 0.0 || sigma_j <= 0.0 {
        return Err(Error::Domain(format!(
            "sigma must be positive (got {sigma_i}, {sigma_j})"
        )));
    }
    let q = x_i.dot(&fh.wqk);
    Ok((q.dot(&x_j) / sigma_i + fh.bqk.dot(&x_j)) / sigma_j)
}

/// Full unfolded LayerNorm: center, divide by sigma, scale by gamma, shift by
/// beta. Used only on the oracle path.
pub fn layer_norm_full(
    x: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    eps: f64,
) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let s = (var + eps).sqrt();
    let mut out = Array1::zeros(x.len());
    for (k, o) in out.iter_mut().enumerate() {
        *o = (x[k] - mean) / s * gamma[k] + beta[k];
    }
    out
}

/// Oracle score: the literal unfolded computation, including the key bias.
/// q_h(LN(x_i)) . k_h(LN(x_j))^T with the full affine LayerNorm.
pub fn score_original(
    x_i: ArrayView1<f64>,
    x_j: ArrayView1<f64>,
    head: &HeadParams,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    eps: f64,
) -> f64 {
    let ln_i = layer_norm_full(x_i, gamma, beta, eps);
    let ln_j = layer_norm_full(x_j, gamma, beta, eps);
    let q = ln_i.dot(&head.wq) + &head.bq;
    let k = ln_j.dot(&head.wk) + &head.bk;
    q.dot(&k)
}

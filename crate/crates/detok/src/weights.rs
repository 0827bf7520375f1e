//! First-layer weight loading and per-head splitting.
//!
//! The loader reads the six layer-0 tensors from a weight container file,
//! promotes everything to f64, and derives the model dimensions from the
//! tensor shapes. The head count and LayerNorm epsilon come from an optional
//! `config.json` sidecar next to the weight file (`n_head`,
//! `layer_norm_epsilon`), defaulting to the GPT-2 values of 12 and 1e-5.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2};

use crate::container::{self, StorageDtype, Tensor64};
use crate::error::{Error, Result};

pub const TENSOR_TOKEN_EMBEDDING: &str = "wte.weight";
pub const TENSOR_POSITION_EMBEDDING: &str = "wpe.weight";
pub const TENSOR_LN_WEIGHT: &str = "h.0.ln_1.weight";
pub const TENSOR_LN_BIAS: &str = "h.0.ln_1.bias";
pub const TENSOR_QKV_WEIGHT: &str = "h.0.attn.c_attn.weight";
pub const TENSOR_QKV_BIAS: &str = "h.0.attn.c_attn.bias";

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_HEADS: usize = 12;

/// Model dimensions, derived from tensor shapes at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Embedding width d.
    pub d: usize,
    /// Head count H.
    pub heads: usize,
    /// Per-head width d/H.
    pub d_head: usize,
    /// Vocabulary size |V|.
    pub vocab_size: usize,
    /// Maximum sequence length L.
    pub max_pos: usize,
}

/// Raw first-layer parameters: embeddings, LayerNorm, fused attention input
/// projections. Immutable after load and safe to share across threads.
#[derive(Debug, Clone)]
pub struct FirstLayerParams {
    /// Token embedding matrix, `[vocab_size, d]`.
    pub token_embedding: Array2<f64>,
    /// Learned absolute position embedding matrix, `[max_pos, d]`.
    pub position_embedding: Array2<f64>,
    /// LayerNorm scale, `[d]`.
    pub ln_gamma: Array1<f64>,
    /// LayerNorm shift, `[d]`.
    pub ln_beta: Array1<f64>,
    /// LayerNorm epsilon.
    pub eps: f64,
    /// Fused query/key/value projection, input-major `[d, 3d]` so that
    /// `q(x) = x . W + b` applies directly.
    pub qkv_weight: Array2<f64>,
    /// Fused projection bias, `[3d]`.
    pub qkv_bias: Array1<f64>,
    pub dims: ModelDims,
}

/// One head's slice of the fused projections, before any folding.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub head_index: usize,
}

fn sidecar_config(model_path: &Path) -> Result<(f64, Option<usize>)> {
    let config_path = model_path.with_file_name("config.json");
    if !config_path.exists() {
        return Ok((DEFAULT_EPS, None));
    }
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let eps = value
        .get("layer_norm_epsilon")
        .and_then(|v| v.as_f64())
        .unwrap_or(DEFAULT_EPS);
    let heads = value.get("n_head").and_then(|v| v.as_u64()).map(|h| h as usize);
    Ok((eps, heads))
}

fn take(map: &mut HashMap<String, Tensor64>, name: &str) -> Result<Tensor64> {
    let t = map.remove(name).ok_or_else(|| Error::TensorNotFound {
        name: name.to_string(),
    })?;
    t.ensure_finite(name)?;
    Ok(t)
}

/// Load the first-layer tensors from a weight container file.
pub fn load_first_layer(path: &Path) -> Result<FirstLayerParams> {
    let names = [
        TENSOR_TOKEN_EMBEDDING,
        TENSOR_POSITION_EMBEDDING,
        TENSOR_LN_WEIGHT,
        TENSOR_LN_BIAS,
        TENSOR_QKV_WEIGHT,
        TENSOR_QKV_BIAS,
    ];
    let mut tensors = container::read_tensors(path, Some(&names))?;
    let (eps, config_heads) = sidecar_config(path)?;
    if eps <= 0.0 {
        return Err(Error::Domain(format!(
            "layer_norm_epsilon must be positive, got {eps}"
        )));
    }

    let token_embedding = take(&mut tensors, TENSOR_TOKEN_EMBEDDING)?
        .into_array2(TENSOR_TOKEN_EMBEDDING)?;
    let position_embedding = take(&mut tensors, TENSOR_POSITION_EMBEDDING)?
        .into_array2(TENSOR_POSITION_EMBEDDING)?;
    let ln_gamma = take(&mut tensors, TENSOR_LN_WEIGHT)?.into_array1(TENSOR_LN_WEIGHT)?;
    let ln_beta = take(&mut tensors, TENSOR_LN_BIAS)?.into_array1(TENSOR_LN_BIAS)?;
    let qkv_weight = take(&mut tensors, TENSOR_QKV_WEIGHT)?.into_array2(TENSOR_QKV_WEIGHT)?;
    let qkv_bias = take(&mut tensors, TENSOR_QKV_BIAS)?.into_array1(TENSOR_QKV_BIAS)?;

    let (vocab_size, d) = token_embedding.dim();
    let heads = config_heads.unwrap_or(DEFAULT_HEADS);
    let dims = ModelDims {
        d,
        heads,
        d_head: if heads > 0 { d / heads } else { 0 },
        vocab_size,
        max_pos: position_embedding.nrows(),
    };

    if heads == 0 || d % heads != 0 {
        return Err(Error::Dimension(format!(
            "embedding width {d} is not divisible by head count {heads}"
        )));
    }
    if position_embedding.ncols() != d {
        return Err(Error::Dimension(format!(
            "position embedding width {} does not match token embedding width {d}",
            position_embedding.ncols()
        )));
    }
    if ln_gamma.len() != d || ln_beta.len() != d {
        return Err(Error::Dimension(format!(
            "LayerNorm parameter length {} does not match width {d}",
            ln_gamma.len()
        )));
    }
    if qkv_weight.dim() != (d, 3 * d) {
        return Err(Error::Dimension(format!(
            "fused projection has shape {:?}, expected [{d}, {}]",
            qkv_weight.dim(),
            3 * d
        )));
    }
    if qkv_bias.len() != 3 * d {
        return Err(Error::Dimension(format!(
            "fused projection bias has length {}, expected {}",
            qkv_bias.len(),
            3 * d
        )));
    }

    Ok(FirstLayerParams {
        token_embedding,
        position_embedding,
        ln_gamma,
        ln_beta,
        eps,
        qkv_weight,
        qkv_bias,
        dims,
    })
}

/// Write parameters back out in the container format (used for caches,
/// synthetic models, and round-trip tests).
pub fn save_first_layer(
    path: &Path,
    params: &FirstLayerParams,
    dtype: StorageDtype,
) -> Result<()> {
    let e = params.token_embedding.as_standard_layout();
    let p = params.position_embedding.as_standard_layout();
    let w = params.qkv_weight.as_standard_layout();
    let dims = params.dims;
    let shapes: [Vec<usize>; 6] = [
        vec![dims.vocab_size, dims.d],
        vec![dims.max_pos, dims.d],
        vec![dims.d],
        vec![dims.d],
        vec![dims.d, 3 * dims.d],
        vec![3 * dims.d],
    ];
    let tensors: Vec<(&str, &[usize], &[f64])> = vec![
        (TENSOR_TOKEN_EMBEDDING, &shapes[0], e.as_slice().unwrap()),
        (TENSOR_POSITION_EMBEDDING, &shapes[1], p.as_slice().unwrap()),
        (TENSOR_LN_WEIGHT, &shapes[2], params.ln_gamma.as_slice().unwrap()),
        (TENSOR_LN_BIAS, &shapes[3], params.ln_beta.as_slice().unwrap()),
        (TENSOR_QKV_WEIGHT, &shapes[4], w.as_slice().unwrap()),
        (TENSOR_QKV_BIAS, &shapes[5], params.qkv_bias.as_slice().unwrap()),
    ];
    container::write_tensors(path, &tensors, dtype, None)
}

impl FirstLayerParams {
    /// Raw embedding sum e_ID + p_i for one (token, position) pair.
    pub fn embedding_sum(&self, token: u32, pos: usize) -> Result<Array1<f64>> {
        if token as usize >= self.dims.vocab_size {
            return Err(Error::OutOfRange {
                what: "token id",
                index: token as usize,
                limit: self.dims.vocab_size,
            });
        }
        if pos >= self.dims.max_pos {
            return Err(Error::OutOfRange {
                what: "position",
                index: pos,
                limit: self.dims.max_pos,
            });
        }
        Ok(&self.token_embedding.row(token as usize) + &self.position_embedding.row(pos))
    }
}

/// Split the fused projections into per-head parameters.
///
/// Columns `[0, d)` of the fused weight are the query projection, `[d, 2d)`
/// the key, `[2d, 3d)` the value; within each third, head h owns columns
/// `[h*d_head, (h+1)*d_head)`. Bias slices are analogous.
pub fn split_heads(params: &FirstLayerParams) -> Vec<HeadParams> {
    let ModelDims { d, heads, d_head, .. } = params.dims;
    (0..heads)
        .map(|h| {
            let q0 = h * d_head;
            let k0 = d + h * d_head;
            let v0 = 2 * d + h * d_head;
            HeadParams {
                wq: params.qkv_weight.slice(s![.., q0..q0 + d_head]).to_owned(),
                wk: params.qkv_weight.slice(s![.., k0..k0 + d_head]).to_owned(),
                wv: params.qkv_weight.slice(s![.., v0..v0 + d_head]).to_owned(),
                bq: params.qkv_bias.slice(s![q0..q0 + d_head]).to_owned(),
                bk: params.qkv_bias.slice(s![k0..k0 + d_head]).to_owned(),
                bv: params.qkv_bias.slice(s![v0..v0 + d_head]).to_owned(),
                head_index: h,
            }
        })
        .collect()
}

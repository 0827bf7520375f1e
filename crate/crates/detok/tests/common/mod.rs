//! Shared helpers for the integration tests: synthetic first-layer models
//! and an oracle attention path kept independent of the folded pipeline.

// Each test target uses its own subset of these helpers.
#![allow(dead_code)]

use detok::weights::{FirstLayerParams, HeadParams, ModelDims};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// A random model with realistic-ish magnitudes. Deterministic in the seed.
pub fn synth_params(d: usize, heads: usize, vocab: usize, max_pos: usize, seed: u64) -> FirstLayerParams {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    FirstLayerParams {
        token_embedding: Array2::from_shape_fn((vocab, d), |_| rng.random_range(-0.3..0.3)),
        position_embedding: Array2::from_shape_fn((max_pos, d), |_| rng.random_range(-0.15..0.15)),
        ln_gamma: Array1::from_shape_fn(d, |_| rng.random_range(0.6..1.4)),
        ln_beta: Array1::from_shape_fn(d, |_| rng.random_range(-0.2..0.2)),
        eps: 1e-5,
        qkv_weight: Array2::from_shape_fn((d, 3 * d), |_| rng.random_range(-0.2..0.2)),
        qkv_bias: Array1::from_shape_fn(3 * d, |_| rng.random_range(-0.1..0.1)),
        dims: ModelDims {
            d,
            heads,
            d_head: d / heads,
            vocab_size: vocab,
            max_pos,
        },
    }
}

/// Unfolded oracle attention row: full affine LayerNorm, affine q/k with the
/// key bias, softmax over j <= i at temperature sqrt(d_head). Deliberately
/// re-derives everything from the raw parameters.
pub fn oracle_attention_row(
    params: &FirstLayerParams,
    head: &HeadParams,
    seq: &[u32],
    i: usize,
    zero_key_bias: bool,
) -> Vec<f64> {
    let d = params.dims.d;
    let ln = |token: u32, pos: usize| -> Array1<f64> {
        let mut x = Array1::<f64>::zeros(d);
        for k in 0..d {
            x[k] = params.token_embedding[[token as usize, k]]
                + params.position_embedding[[pos, k]];
        }
        let mean = x.sum() / d as f64;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let sigma = (var + params.eps).sqrt();
        Array1::from_shape_fn(d, |k| (x[k] - mean) / sigma * params.ln_gamma[k] + params.ln_beta[k])
    };

    let q = ln(seq[i], i).dot(&head.wq) + &head.bq;
    let temperature = (params.dims.d_head as f64).sqrt();
    let mut logits = Vec::with_capacity(i + 1);
    for j in 0..=i {
        let mut k = ln(seq[j], j).dot(&head.wk);
        if !zero_key_bias {
            k += &head.bk;
        }
        logits.push(q.dot(&k) / temperature);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Random token sequence over the model's vocabulary.
pub fn random_seq(vocab: usize, len: usize, rng: &mut ChaCha12Rng) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
}

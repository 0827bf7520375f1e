//! Acceptance suite. One test per criterion; each prints a PASS/FAIL/SKIP
//! line (run with `-- --nocapture` to see them all).
//!
//! Criteria 1-6 need the public GPT-2 124M weight file; 3 and 7-9 also need
//! the tokenizer files, and 7-9 a large English text corpus. Point the suite
//! at real data with:
//!
//!   DETOK_GPT2_MODEL=/path/to/model.safetensors   (config.json sidecar honored)
//!   DETOK_GPT2_VOCAB=/path/to/vocab.json
//!   DETOK_GPT2_MERGES=/path/to/merges.txt
//!   DETOK_COUNTS=/path/to/counts.bin              (from `detok count`), or
//!   DETOK_CORPUS_DIR=/path/to/text-corpus/        (counted on the fly)
//!
//! Without the data those criteria report SKIP; the property criterion and a
//! structural dry run of every measurement path still execute.

mod common;

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use detok::analysis::{self, curated_pairs, mean_auroc, QueryPolicy};
use detok::corpus::{self, BigramCounts, UnigramCounts};
use detok::folding::FoldedModel;
use detok::normstats::{self, SigmaCtx, SigmaMode, SigmaTable};
use detok::numeric::{softmax, top_k_desc};
use detok::terms::{self, Keys, TermKind};
use detok::weights::{load_first_layer, split_heads, FirstLayerParams};
use detok::Tokenizer;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn report(n: u32, name: &str, outcome: String) {
    println!("ACCEPT {n:02} {name}: {outcome}");
}

struct Model {
    params: FirstLayerParams,
    folded: FoldedModel,
}

impl Model {
    fn from_params(params: FirstLayerParams) -> Self {
        let folded = FoldedModel::from_params(&params);
        Model { params, folded }
    }
}

fn gpt2() -> Option<&'static Model> {
    static MODEL: OnceLock<Option<Model>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let path = std::env::var_os("DETOK_GPT2_MODEL").map(PathBuf::from)?;
            let params = load_first_layer(&path).expect("loading DETOK_GPT2_MODEL");
            Some(Model::from_params(params))
        })
        .as_ref()
}

fn gpt2_tokenizer() -> Option<&'static Tokenizer> {
    static TOK: OnceLock<Option<Tokenizer>> = OnceLock::new();
    TOK.get_or_init(|| {
        let vocab = std::env::var_os("DETOK_GPT2_VOCAB").map(PathBuf::from)?;
        let merges = std::env::var_os("DETOK_GPT2_MERGES").map(PathBuf::from)?;
        Some(Tokenizer::from_files(&vocab, &merges).expect("loading tokenizer files"))
    })
    .as_ref()
}

fn full_sigma_table(params: &FirstLayerParams) -> &'static SigmaTable {
    static TABLE: OnceLock<SigmaTable> = OnceLock::new();
    TABLE.get_or_init(|| normstats::sigma_table(params, None, 0).expect("sigma table"))
}

fn counts() -> Option<&'static (UnigramCounts, BigramCounts)> {
    static COUNTS: OnceLock<Option<(UnigramCounts, BigramCounts)>> = OnceLock::new();
    COUNTS
        .get_or_init(|| {
            if let Some(path) = std::env::var_os("DETOK_COUNTS").map(PathBuf::from) {
                let (uni, bi, _) = corpus::load_snapshot(&path).expect("loading DETOK_COUNTS");
                return Some((uni, bi));
            }
            let dir = std::env::var_os("DETOK_CORPUS_DIR").map(PathBuf::from)?;
            let tok = gpt2_tokenizer()?;
            let files = corpus_files(&dir);
            let (uni, bi) = corpus::count_files(&files, tok, corpus::DocSep::BlankLine, None)
                .expect("counting DETOK_CORPUS_DIR");
            Some((uni, bi))
        })
        .as_ref()
}

fn corpus_files(dir: &std::path::Path) -> Vec<PathBuf> {
    fn walk(p: &std::path::Path, out: &mut Vec<PathBuf>) {
        if p.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(p)
                .unwrap()
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            for e in entries {
                walk(&e, out);
            }
        } else {
            out.push(p.to_path_buf());
        }
    }
    let mut out = Vec::new();
    walk(dir, &mut out);
    out
}

const SKIP_MODEL: &str = "SKIP (set DETOK_GPT2_MODEL to the GPT-2 124M weight file)";
const SKIP_TOK: &str = "SKIP (set DETOK_GPT2_VOCAB and DETOK_GPT2_MERGES)";
const SKIP_CORPUS: &str = "SKIP (set DETOK_COUNTS or DETOK_CORPUS_DIR, plus tokenizer vars)";

// ---------------------------------------------------------------------------
// Measurement functions: one per criterion, shared by the gated tests and
// the structural dry run.
// ---------------------------------------------------------------------------

/// Max softmax-row deviation between paths over random sequences, and the
/// worst six-term relative error over random draws.
fn measure_folding(m: &Model, n_seqs: usize, seq_len: usize, draws: usize, seed: u64) -> (f64, f64) {
    let dims = m.params.dims;
    let heads = split_heads(&m.params);
    let sctx = SigmaCtx::new(&m.params);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut max_row_dev: f64 = 0.0;
    for _ in 0..n_seqs {
        let seq: Vec<u32> = (0..seq_len)
            .map(|_| rng.random_range(0..dims.vocab_size as u32))
            .collect();
        let (x_hat, ln) = embed_both_paths(&m.params, &seq);
        for (h, fh) in m.folded.heads.iter().enumerate() {
            let folded_s = folded_score_matrix(&x_hat, fh);
            let orig_s = original_score_matrix(&ln, &heads[h], false);
            max_row_dev = max_row_dev.max(max_causal_softmax_dev(
                &folded_s,
                &orig_s,
                (dims.d_head as f64).sqrt(),
            ));
        }
    }

    let mut max_rel: f64 = 0.0;
    for _ in 0..draws {
        let ti = rng.random_range(0..dims.vocab_size as u32);
        let tj = rng.random_range(0..dims.vocab_size as u32);
        let i = rng.random_range(0..dims.max_pos);
        let j = rng.random_range(0..dims.max_pos);
        let fh = &m.folded.heads[rng.random_range(0..dims.heads)];
        let sum = terms::six_term_sum(&sctx, fh, ti, i, tj, j).unwrap();
        let x_i = m.params.embedding_sum(ti, i).unwrap();
        let x_j = m.params.embedding_sum(tj, j).unwrap();
        let si = normstats::sigma(x_i.view(), m.params.eps);
        let sj = normstats::sigma(x_j.view(), m.params.eps);
        let folded = detok::folding::score_folded(x_i.view(), x_j.view(), fh, si, sj).unwrap();
        max_rel = max_rel.max((sum - folded).abs() / sum.abs().max(folded.abs()).max(1.0));
    }
    (max_row_dev, max_rel)
}

/// Max softmax-row deviation caused by zeroing the key bias in the oracle.
fn measure_key_bias(m: &Model, n_seqs: usize, seq_len: usize, seed: u64) -> f64 {
    let dims = m.params.dims;
    let heads = split_heads(&m.params);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..n_seqs {
        let seq: Vec<u32> = (0..seq_len)
            .map(|_| rng.random_range(0..dims.vocab_size as u32))
            .collect();
        let (_, ln) = embed_both_paths(&m.params, &seq);
        for head in &heads {
            let with = original_score_matrix(&ln, head, false);
            let without = original_score_matrix(&ln, head, true);
            max_dev = max_dev.max(max_causal_softmax_dev(
                &with,
                &without,
                (dims.d_head as f64).sqrt(),
            ));
        }
    }
    max_dev
}

/// Decoded top-k key texts for a query token on one head (mean key sigma).
fn top_texts(
    m: &Model,
    table: &SigmaTable,
    tok: &Tokenizer,
    query: &str,
    head: usize,
    k: usize,
    ref_pos: usize,
) -> Option<Vec<String>> {
    let q = tok.id_of_text(query)?;
    let sctx = SigmaCtx::with_table(&m.params, table);
    let scores = terms::term_ee(
        &sctx,
        m.folded.head(head).unwrap(),
        q,
        Keys::All,
        SigmaMode::NoLayerNorm,
        SigmaMode::MeanOverVocab,
        0,
        ref_pos,
    )
    .unwrap();
    Some(
        top_k_desc(&scores.values, k)
            .into_iter()
            .map(|idx| tok.decode_one(idx as u32).unwrap())
            .collect(),
    )
}

/// How many curated pairs reproduce at the stated rank within one, out of
/// those whose tokens exist in the vocabulary.
fn measure_curated(m: &Model, table: &SigmaTable, tok: &Tokenizer, ref_pos: usize) -> (usize, usize) {
    let pairs = curated_pairs();
    let mut hits = 0;
    for pair in &pairs {
        let Some(texts) = top_texts(m, table, tok, &pair.query, pair.head, pair.rank + 1, ref_pos)
        else {
            continue;
        };
        let found = texts.iter().position(|t| t == &pair.key).map(|r0| r0 + 1);
        if matches!(found, Some(r) if r.abs_diff(pair.rank) <= 1) {
            hits += 1;
        }
    }
    (hits, pairs.len())
}

/// Fraction of positive adjacent differences of the position self-assertion
/// term on a window, per head, plus the near-field weight of position bias.
fn measure_position_bias(
    m: &Model,
    table: &SigmaTable,
    heads: &[usize],
    window: std::ops::RangeInclusive<usize>,
    bias_head: usize,
    bias_i: usize,
    near: std::ops::RangeInclusive<usize>,
) -> (Vec<(usize, f64)>, f64) {
    let sctx = SigmaCtx::with_table(&m.params, table);
    let mut fracs = Vec::new();
    for &head in heads {
        let tp =
            terms::term_p(&sctx, m.folded.head(head).unwrap(), SigmaMode::MeanOverVocab).unwrap();
        let w = &tp.values[window.clone()];
        let positive = w.windows(2).filter(|w| w[1] > w[0]).count();
        fracs.push((head, positive as f64 / (w.len() - 1) as f64));
    }
    let pb = terms::position_bias(
        &sctx,
        m.folded.head(bias_head).unwrap(),
        bias_i,
        SigmaMode::MeanOverVocab,
    )
    .unwrap();
    let near_weight: f64 = pb.weights[near.clone()].iter().sum();
    (fracs, near_weight)
}

/// Position-embedding variance extremes and the token-norm variances.
struct VarianceMeasure {
    first_high: bool,
    last_low: bool,
    raw_norm_var: f64,
    scaled_norm_var: f64,
}

fn measure_variances(m: &Model) -> VarianceMeasure {
    let report_p = normstats::embedding_variances(m.params.position_embedding.view());
    let v = &report_p.variances;
    let last = v.len() - 1;
    let mid = 1..=last - 1;
    VarianceMeasure {
        first_high: mid.clone().all(|j| v[0] > v[j]),
        last_low: mid.clone().all(|j| v[last] < v[j]),
        raw_norm_var: normstats::norm_variance(m.params.token_embedding.view(), false, m.params.eps),
        scaled_norm_var: normstats::norm_variance(m.params.token_embedding.view(), true, m.params.eps),
    }
}

/// Max |raw pp| at the final query position vs a reference position.
fn measure_undertrained(m: &Model, head: usize, last_i: usize, ref_i: usize) -> (f64, f64) {
    let sctx = SigmaCtx::new(&m.params);
    let fh = m.folded.head(head).unwrap();
    let max_abs = |i: usize| -> f64 {
        let tpp =
            terms::term_pp(&sctx, fh, i, SigmaMode::NoLayerNorm, SigmaMode::NoLayerNorm).unwrap();
        tpp.values[..=i].iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    };
    (max_abs(last_i), max_abs(ref_i))
}

/// Mean AUROC per head plus a permutation-null mean for one head.
fn measure_head_ranking(
    m: &Model,
    table: &SigmaTable,
    bigrams: &BigramCounts,
    policy: QueryPolicy,
    null_head: usize,
    ref_pos: usize,
) -> (Vec<f64>, f64) {
    let sctx = SigmaCtx::with_table(&m.params, table);
    let means: Vec<f64> = m
        .folded
        .heads
        .iter()
        .map(|fh| {
            mean_auroc(&sctx, fh, bigrams, SigmaMode::MeanOverVocab, ref_pos, policy)
                .unwrap()
                .mean
        })
        .collect();
    let null_policy = QueryPolicy {
        permute_null: true,
        max_queries: Some(500),
        ..policy
    };
    let null = mean_auroc(
        &sctx,
        m.folded.head(null_head).unwrap(),
        bigrams,
        SigmaMode::MeanOverVocab,
        ref_pos,
        null_policy,
    )
    .unwrap()
    .mean;
    (means, null)
}

/// Spearman of the token self-assertion term (per head) and of the
/// token-embedding variances against unigram frequency.
fn measure_spearman(
    m: &Model,
    table: &SigmaTable,
    uni: &UnigramCounts,
    heads: &[usize],
    ref_pos: usize,
) -> (Vec<f64>, f64) {
    let sctx = SigmaCtx::with_table(&m.params, table);
    let freqs: Vec<f64> = uni.counts.iter().map(|&c| c as f64).collect();
    let rhos = heads
        .iter()
        .map(|&head| {
            let scores =
                terms::term_e(&sctx, m.folded.head(head).unwrap(), SigmaMode::Exact, ref_pos)
                    .unwrap();
            analysis::spearman(&scores.values, &freqs).unwrap()
        })
        .collect();
    let var_report = normstats::embedding_variances(m.params.token_embedding.view());
    let rho_var = analysis::spearman(&var_report.variances, &freqs).unwrap();
    (rhos, rho_var)
}

/// For each (head, i): does every one of ee/pp/p/e exceed both pe and ep in
/// mean KL contribution? Returns the per-cell outcome with the mean KLs.
fn measure_contributions(
    m: &Model,
    seqs: &[Vec<u32>],
    heads: &[usize],
    positions: &[usize],
) -> Vec<(usize, usize, bool, [f64; 6])> {
    let sctx = SigmaCtx::new(&m.params);
    let mut out = Vec::new();
    for &head in heads {
        for &i in positions {
            let stats =
                analysis::contribution_summary(&sctx, m.folded.head(head).unwrap(), seqs, i)
                    .unwrap();
            let mut kls = [0.0; 6];
            for (t, stat) in stats.iter().enumerate() {
                kls[t] = stat.kl_mean;
            }
            let kl = |kind: TermKind| {
                kls[TermKind::ALL.iter().position(|&k| k == kind).unwrap()]
            };
            let strong = [kl(TermKind::EE), kl(TermKind::PP), kl(TermKind::P), kl(TermKind::E)];
            let weak = [kl(TermKind::PE), kl(TermKind::EP)];
            let ok = strong.iter().all(|&s| weak.iter().all(|&w| s > w));
            out.push((head, i, ok, kls));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Criterion tests
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_folding_equivalence() {
    let Some(m) = gpt2() else {
        report(1, "folding equivalence", SKIP_MODEL.into());
        return;
    };
    let started = Instant::now();
    let (max_row_dev, max_rel) = measure_folding(m, 64, 64, 10_000, 1);
    let elapsed = started.elapsed().as_secs_f64();
    let pass = max_row_dev <= 1e-9 && max_rel <= 1e-10 && elapsed < 60.0;
    report(
        1,
        "folding equivalence",
        format!(
            "{} (rows {max_row_dev:.2e} <= 1e-9, six-term rel {max_rel:.2e} <= 1e-10, {elapsed:.1}s < 60s)",
            if pass { "PASS" } else { "FAIL" }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_key_bias_irrelevance() {
    let Some(m) = gpt2() else {
        report(2, "key-bias irrelevance", SKIP_MODEL.into());
        return;
    };
    let max_dev = measure_key_bias(m, 16, 64, 2);
    let pass = max_dev <= 1e-9;
    report(
        2,
        "key-bias irrelevance",
        format!("{} (max row delta {max_dev:.2e} <= 1e-9)", if pass { "PASS" } else { "FAIL" }),
    );
    assert!(pass);
}

#[test]
fn criterion_03_detokenization_fixtures() {
    let Some(m) = gpt2() else {
        report(3, "detokenization fixtures", SKIP_MODEL.into());
        return;
    };
    let Some(tok) = gpt2_tokenizer() else {
        report(3, "detokenization fixtures", SKIP_TOK.into());
        return;
    };
    let table = full_sigma_table(&m.params);

    let iens = top_texts(m, table, tok, "iens", 7, 2, 500).expect("'iens' in vocab");
    let iens_ok = iens.first().map(String::as_str) == Some(" sap")
        && iens.get(1).map(String::as_str) == Some("Al");
    let yo = top_texts(m, table, tok, "yo", 3, 1, 500).expect("'yo' in vocab");
    let yo_ok = yo.first().map(String::as_str) == Some("Tok");

    let (hits, total) = measure_curated(m, table, tok, 500);
    let frac = hits as f64 / total as f64;
    let pass = iens_ok && yo_ok && frac >= 0.8;
    report(
        3,
        "detokenization fixtures",
        format!(
            "{} (iens {iens:?}, yo {yo:?}, curated {hits}/{total} = {frac:.2} >= 0.80)",
            if pass { "PASS" } else { "FAIL" }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_position_bias() {
    let Some(m) = gpt2() else {
        report(4, "position bias", SKIP_MODEL.into());
        return;
    };
    let table = full_sigma_table(&m.params);
    let (fracs, near) = measure_position_bias(m, table, &[1, 7], 5..=1015, 7, 500, 490..=500);
    let monotone_ok = fracs.iter().all(|&(_, f)| f >= 0.95);
    let pass = monotone_ok && near > 0.5;
    report(
        4,
        "position bias",
        format!(
            "{} (positive diffs {fracs:?} >= 0.95, weight on [490,500] = {near:.3} > 0.5)",
            if pass { "PASS" } else { "FAIL" }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_variance_step_function() {
    let Some(m) = gpt2() else {
        report(5, "variance step function", SKIP_MODEL.into());
        return;
    };
    let v = measure_variances(m);
    let raw_ok = (v.raw_norm_var - 0.19).abs() <= 0.02;
    let scaled_ok = v.scaled_norm_var <= 0.01;
    let pass = v.first_high && v.last_low && raw_ok && scaled_ok;
    report(
        5,
        "variance step function",
        format!(
            "{} (p0 high {}, p_last low {}, norm var {:.3} in 0.19+-0.02, scaled {:.4} <= 0.01)",
            if pass { "PASS" } else { "FAIL" },
            v.first_high,
            v.last_low,
            v.raw_norm_var,
            v.scaled_norm_var
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_undertrained_last_position() {
    let Some(m) = gpt2() else {
        report(6, "undertrained last position", SKIP_MODEL.into());
        return;
    };
    let (last, reference) = measure_undertrained(m, 0, 1023, 1019);
    let pass = last < 0.25 * reference;
    report(
        6,
        "undertrained last position",
        format!(
            "{} (max |raw pp| {last:.2} at i=1023 vs {reference:.2} at i=1019, ratio {:.2} < 0.25)",
            if pass { "PASS" } else { "FAIL" },
            last / reference
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_head_ranking() {
    let Some(m) = gpt2() else {
        report(7, "AUROC head ranking", SKIP_MODEL.into());
        return;
    };
    let Some((_, bigrams)) = counts() else {
        report(7, "AUROC head ranking", SKIP_CORPUS.into());
        return;
    };
    let table = full_sigma_table(&m.params);
    let policy = QueryPolicy {
        min_count: 100,
        max_queries: Some(2000),
        seed: 0,
        permute_null: false,
    };
    let (means, null) = measure_head_ranking(m, table, bigrams, policy, 7, 500);
    let best = means
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let null_ok = (null - 0.5).abs() <= 0.02;
    let pass = best == 7 && null_ok;
    report(
        7,
        "AUROC head ranking",
        format!(
            "{} (best head {best} with {:.4}, null {null:.4} in 0.5+-0.02)",
            if pass { "PASS" } else { "FAIL" },
            means[best]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_spearman_statistics() {
    let Some(m) = gpt2() else {
        report(8, "spearman statistics", SKIP_MODEL.into());
        return;
    };
    let Some((uni, _)) = counts() else {
        report(8, "spearman statistics", SKIP_CORPUS.into());
        return;
    };
    let table = full_sigma_table(&m.params);
    let (rhos, rho_var) = measure_spearman(m, table, uni, &[7, 1], 500);
    let pass = (rhos[0] - (-0.68)).abs() <= 0.1
        && (rhos[1] - (-0.31)).abs() <= 0.1
        && (rho_var - (-0.63)).abs() <= 0.1;
    report(
        8,
        "spearman statistics",
        format!(
            "{} (term-e h7 {:.3} ~ -0.68, h1 {:.3} ~ -0.31, variance {rho_var:.3} ~ -0.63, all +-0.1)",
            if pass { "PASS" } else { "FAIL" },
            rhos[0],
            rhos[1]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_term_contributions() {
    let Some(m) = gpt2() else {
        report(9, "term contributions", SKIP_MODEL.into());
        return;
    };
    let (Some(tok), Some(dir)) = (
        gpt2_tokenizer(),
        std::env::var_os("DETOK_CORPUS_DIR").map(PathBuf::from),
    ) else {
        report(9, "term contributions", SKIP_CORPUS.into());
        return;
    };
    let files = corpus_files(&dir);
    let seqs =
        corpus::sample_sequences(&files, tok, corpus::DocSep::BlankLine, 501, 512, 0).unwrap();
    assert!(!seqs.is_empty(), "corpus has no 501-token documents");

    let cells = measure_contributions(m, &seqs, &[1, 7], &[50, 500]);
    let pass = cells.iter().all(|&(_, _, ok, _)| ok);
    let detail: Vec<String> = cells
        .iter()
        .map(|(h, i, ok, _)| format!("h{h}/i{i}:{}", if *ok { "ok" } else { "BAD" }))
        .collect();
    report(
        9,
        "term contributions",
        format!("{} ({})", if pass { "PASS" } else { "FAIL" }, detail.join(" ")),
    );
    assert!(pass);
}

#[test]
fn criterion_10_property_suites_without_model() {
    // Sigma laws.
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    for _ in 0..200 {
        let n = rng.random_range(2..64);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let x = ndarray::Array1::from_vec(xs.clone());
        let eps = 1e-5;
        let s = normstats::sigma(x.view(), eps);
        assert!(s >= eps.sqrt() - 1e-15);
        let c = rng.random_range(-20.0..20.0);
        let shifted = ndarray::Array1::from_vec(xs.iter().map(|&v| v + c).collect());
        assert!((normstats::sigma(shifted.view(), eps) - s).abs() <= 1e-12 * s.max(1.0));
        let a = rng.random_range(0.1..5.0);
        let ax = ndarray::Array1::from_vec(xs.iter().map(|&v| a * v).collect());
        let lhs = normstats::sigma(ax.view(), eps).powi(2) - eps;
        let rhs = a * a * (s * s - eps);
        assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
    }

    // Softmax shift-invariance.
    for _ in 0..200 {
        let n = rng.random_range(1..40);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let c = rng.random_range(-20.0..20.0);
        let shifted: Vec<f64> = xs.iter().map(|&v| v + c).collect();
        for (a, b) in softmax(&xs).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    // AUROC brute-force equivalence on 6-token synthetics.
    for trial in 0..100 {
        let scores: Vec<f64> = (0..6)
            .map(|_| (rng.random_range(0..5) as f64) * 0.5 - 1.0)
            .collect();
        let mut mass: Vec<(usize, u64)> = Vec::new();
        for k in 0..6 {
            if rng.random_range(0..2u8) == 1 {
                mass.push((k, rng.random_range(1..20)));
            }
        }
        if mass.is_empty() {
            continue;
        }
        let swept = analysis::roc_from_scores(&scores, &mass).unwrap().auroc;
        let total: u64 = mass.iter().map(|&(_, c)| c).sum();
        let mut brute = 0.0;
        for &(j, c) in &mass {
            for k in 0..6 {
                let w = c as f64 / total as f64 / 6.0;
                if scores[j] > scores[k] {
                    brute += w;
                } else if scores[j] == scores[k] {
                    brute += 0.5 * w;
                }
            }
        }
        assert!((swept - brute).abs() < 1e-12, "trial {trial}: {swept} vs {brute}");
    }

    // KL >= 0 and the j-constant zero case, both directions.
    for _ in 0..200 {
        let n = rng.random_range(2..16);
        let full: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let shift = rng.random_range(-3.0..3.0);
        let constant_removed: Vec<f64> = full.iter().map(|&v| v - shift).collect();
        assert_eq!(detok::numeric::kl_from_logits(&constant_removed, &full), 0.0);
        let jittered: Vec<f64> = full
            .iter()
            .enumerate()
            .map(|(k, &v)| v + if k == 0 { 0.7 } else { -0.2 })
            .collect();
        let kl = detok::numeric::kl_from_logits(&jittered, &full);
        assert!(kl > 0.0);
    }

    // Tokenizer round-trips on the fixture vocabulary.
    let tok = fixture_tokenizer();
    for text in [
        "Hello world",
        "don't  stop\tnow",
        "numbers 12,345 and 67.89",
        "unicode: 東京 café Ⅷ 😀",
        "   leading and trailing   ",
    ] {
        let ids = tok.encode(text).unwrap();
        assert_eq!(tok.decode(&ids).unwrap(), text);
    }

    // Corpus count determinism across worker counts.
    let docs: Vec<String> = (0..40)
        .map(|k| format!("document {k} says hello world {}", "again ".repeat(k % 5)))
        .collect();
    let refs: Vec<&str> = docs.iter().map(|s| s.as_str()).collect();
    let (u1, b1) = corpus::count_documents(&refs, tok, Some(1)).unwrap();
    let (u8_, b8) = corpus::count_documents(&refs, tok, Some(8)).unwrap();
    assert_eq!(u1, u8_);
    assert_eq!(b1, b8);

    report(10, "property suites without model", "PASS".into());
}

fn fixture_tokenizer() -> &'static Tokenizer {
    static TOK: OnceLock<Tokenizer> = OnceLock::new();
    TOK.get_or_init(|| {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        Tokenizer::from_files(&dir.join("vocab.json"), &dir.join("merges.txt")).unwrap()
    })
}

// ---------------------------------------------------------------------------
// Additional weight-dependent examples outside the numbered criteria.
// ---------------------------------------------------------------------------

/// The first position's elevated embedding variance shows up directly in the
/// sigma aggregates: mean sigma at position 0 exceeds a mid-range position.
#[test]
fn gpt2_example_sigma_elevated_at_first_position() {
    let Some(m) = gpt2() else {
        println!("EXTRA sigma at position 0: {SKIP_MODEL}");
        return;
    };
    let table = full_sigma_table(&m.params);
    assert!(
        table.mean[0] > table.mean[100],
        "mean sigma {} at 0 vs {} at 100",
        table.mean[0],
        table.mean[100]
    );
    println!(
        "EXTRA sigma at position 0: PASS ({:.3} > {:.3})",
        table.mean[0], table.mean[100]
    );
}

/// The position comparison curve at i=500 peaks near the query: its top
/// value sits within the last 20 causal positions (head 7, mean sigma).
#[test]
fn gpt2_example_pp_curve_peaks_near_query() {
    let Some(m) = gpt2() else {
        println!("EXTRA pp curve peak: {SKIP_MODEL}");
        return;
    };
    let table = full_sigma_table(&m.params);
    let sctx = SigmaCtx::with_table(&m.params, table);
    let tpp = terms::term_pp(
        &sctx,
        m.folded.head(7).unwrap(),
        500,
        SigmaMode::MeanOverVocab,
        SigmaMode::MeanOverVocab,
    )
    .unwrap();
    let causal = &tpp.values[..=500];
    let argmax = causal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    assert!(argmax >= 481, "pp peak at j={argmax}, expected within [481, 500]");
    println!("EXTRA pp curve peak: PASS (argmax j={argmax})");
}

// ---------------------------------------------------------------------------
// Structural dry run: every measurement path executes on a model with the
// subject's shape (12 heads, 1024 positions) but synthetic weights. The
// algebraic criteria must already hold here; the corpus-dependent ones are
// checked for well-formedness only, never for the real-data thresholds.
// ---------------------------------------------------------------------------

#[test]
fn dry_run_exercises_every_measurement_path() {
    let tok = fixture_tokenizer();
    let params = common::synth_params(96, 12, tok.vocab_size(), 1024, 4242);
    let m = Model::from_params(params);
    let table = normstats::sigma_table(&m.params, Some(256), 0).unwrap();

    // Criteria 1-2 hold for any weights.
    let (row_dev, rel) = measure_folding(&m, 4, 48, 400, 3);
    assert!(row_dev <= 1e-9, "row deviation {row_dev}");
    assert!(rel <= 1e-10, "six-term rel {rel}");
    assert!(measure_key_bias(&m, 4, 48, 4) <= 1e-9);

    // Criterion 3 machinery: top-k decode and the curated sweep.
    let texts = top_texts(&m, &table, tok, "the", 7, 5, 500).expect("'the' in fixture vocab");
    assert_eq!(texts.len(), 5);
    let (hits, total) = measure_curated(&m, &table, tok, 500);
    assert!(hits <= total);

    // Criterion 4 machinery at the real window.
    let (fracs, near) = measure_position_bias(&m, &table, &[1, 7], 5..=1015, 7, 500, 490..=500);
    assert_eq!(fracs.len(), 2);
    for (_, f) in &fracs {
        assert!((0.0..=1.0).contains(f));
    }
    assert!((0.0..=1.0).contains(&near));

    // Criterion 5 machinery.
    let v = measure_variances(&m);
    assert!(v.raw_norm_var.is_finite() && v.scaled_norm_var.is_finite());

    // Criterion 6 machinery at the real positions.
    let (last, reference) = measure_undertrained(&m, 0, 1023, 1019);
    assert!(last.is_finite() && reference > 0.0);

    // Criteria 7-8 machinery on synthetic counts.
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut uni = UnigramCounts::new(tok.vocab_size());
    let mut bi = BigramCounts::new(tok.vocab_size());
    for _ in 0..4000 {
        let prev = rng.random_range(0..tok.vocab_size() as u32);
        let next = rng.random_range(0..tok.vocab_size() as u32);
        uni.add(next);
        bi.add(prev, next);
    }
    let policy = QueryPolicy {
        min_count: 2,
        max_queries: Some(64),
        seed: 0,
        permute_null: false,
    };
    let (means, null) = measure_head_ranking(&m, &table, &bi, policy, 7, 500);
    assert_eq!(means.len(), 12);
    assert!(means.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!((null - 0.5).abs() <= 0.1);
    let (rhos, rho_var) = measure_spearman(&m, &table, &uni, &[7, 1], 500);
    assert!(rhos.iter().all(|r| (-1.0..=1.0).contains(r)));
    assert!((-1.0..=1.0).contains(&rho_var));

    // Criterion 9 machinery on random sequences at the real positions.
    let seqs = analysis::random_sequences(tok.vocab_size(), 501, 6, 11);
    let cells = measure_contributions(&m, &seqs, &[1, 7], &[50, 500]);
    assert_eq!(cells.len(), 4);
    for (_, _, _, kls) in &cells {
        assert!(kls.iter().all(|k| k.is_finite() && *k >= 0.0));
    }

    println!("dry run: all measurement paths executed");
}

// ---------------------------------------------------------------------------
// Shared helpers for criteria 1 and 2
// ---------------------------------------------------------------------------

/// Sigma-scaled raw sums (folded path input) and fully LayerNormed vectors
/// (original path input) for one sequence.
fn embed_both_paths(params: &FirstLayerParams, seq: &[u32]) -> (Array2<f64>, Array2<f64>) {
    let d = params.dims.d;
    let n = seq.len();
    let mut x_hat = Array2::zeros((n, d));
    let mut ln = Array2::zeros((n, d));
    for (j, &t) in seq.iter().enumerate() {
        let raw = params.embedding_sum(t, j).unwrap();
        let mean = raw.sum() / d as f64;
        let var = raw.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let sigma = (var + params.eps).sqrt();
        for k in 0..d {
            x_hat[[j, k]] = raw[k] / sigma;
            ln[[j, k]] = (raw[k] - mean) / sigma * params.ln_gamma[k] + params.ln_beta[k];
        }
    }
    (x_hat, ln)
}

fn folded_score_matrix(x_hat: &Array2<f64>, fh: &detok::FoldedHead) -> Array2<f64> {
    let u = x_hat.dot(&fh.wqk);
    let mut s = u.dot(&x_hat.t());
    let bias = x_hat.dot(&fh.bqk);
    for mut row in s.rows_mut() {
        row += &bias;
    }
    s
}

fn original_score_matrix(
    ln: &Array2<f64>,
    head: &detok::HeadParams,
    zero_key_bias: bool,
) -> Array2<f64> {
    let q = ln.dot(&head.wq) + &head.bq;
    let mut k = ln.dot(&head.wk);
    if !zero_key_bias {
        for mut row in k.rows_mut() {
            row += &head.bk;
        }
    }
    q.dot(&k.t())
}

/// Max elementwise deviation between causal softmax rows of two score
/// matrices at the given temperature.
fn max_causal_softmax_dev(a: &Array2<f64>, b: &Array2<f64>, temperature: f64) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let row = |m: &Array2<f64>| -> Vec<f64> {
            (0..=i).map(|j| m[[i, j]] / temperature).collect()
        };
        let pa = softmax(&row(a));
        let pb = softmax(&row(b));
        for (x, y) in pa.iter().zip(&pb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

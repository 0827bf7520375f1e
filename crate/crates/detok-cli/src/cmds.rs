//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use detok::analysis::{
    self, auroc_for_query, contribution_summary, empirical_attention, mean_auroc, QueryPolicy,
};
use detok::corpus::{self, DocSep};
use detok::csvutil::csv_escape;
use detok::folding::{layer_norm_full, score_folded};
use detok::normstats::{
    covariance_diagnostic, embedding_variances, norm_variance, sigma_embed, SigmaCtx, SigmaMode,
};
use detok::svg::{Heatmap, LinePlot};
use detok::terms::{self, Keys, TermKind};
use detok::weights::split_heads;
use ndarray::Array2;
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::ctx::RunCtx;
use crate::util;
use crate::{computation, validation, CliError};

type CmdResult = Result<(), CliError>;

fn parse_mode(s: &str) -> Result<SigmaMode, CliError> {
    match s {
        "exact" => Ok(SigmaMode::Exact),
        "mean" => Ok(SigmaMode::MeanOverVocab),
        "max" => Ok(SigmaMode::MaxOverVocab),
        "min" => Ok(SigmaMode::MinOverVocab),
        "none" => Ok(SigmaMode::NoLayerNorm),
        other => Err(validation(anyhow!(
            "unknown sigma mode {other:?}; expected exact|mean|max|min|none"
        ))),
    }
}

fn parse_heads(spec: &str, n_heads: usize) -> Result<Vec<usize>, CliError> {
    if spec == "all" {
        return Ok((0..n_heads).collect());
    }
    spec.split(',')
        .map(|tok| {
            let h: usize = tok
                .trim()
                .parse()
                .map_err(|_| validation(anyhow!("bad head index {tok:?}")))?;
            if h >= n_heads {
                return Err(validation(anyhow!(
                    "head {h} out of range; model has {n_heads} heads"
                )));
            }
            Ok(h)
        })
        .collect()
}

fn parse_doc_sep(s: &str) -> Result<DocSep, CliError> {
    DocSep::parse(s).ok_or_else(|| {
        validation(anyhow!(
            "unknown doc separator {s:?}; expected blankline|newline|none"
        ))
    })
}

fn default_ref_pos(max_pos: usize, requested: Option<usize>) -> usize {
    requested.unwrap_or_else(|| 500.min(max_pos.saturating_sub(1)))
}

/// Recursively expand directories into a sorted file list.
fn expand_corpus(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    fn walk(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.sort();
            for entry in entries {
                walk(&entry, out)?;
            }
        } else {
            out.push(path.to_path_buf());
        }
        Ok(())
    }
    let mut files = Vec::new();
    for path in paths {
        if !path.exists() {
            return Err(validation(anyhow!("corpus path {} does not exist", path.display())));
        }
        walk(path, &mut files)
            .map_err(|e| validation(anyhow!("reading {}: {e}", path.display())))?;
    }
    if files.is_empty() {
        return Err(validation(anyhow!("corpus expansion found no files")));
    }
    Ok(files)
}

fn token_id(ctx: &mut RunCtx, text: &str) -> Result<u32, CliError> {
    let tok = ctx.tokenizer().map_err(validation)?;
    tok.id_of_text(text)
        .ok_or_else(|| validation(anyhow!("{text:?} is not a single vocabulary token")))
}

/// Ensure everything a sigma context needs is loaded (the table only when a
/// mode requires it), so `sigma_ctx_rebuild` can borrow immutably.
fn ensure_sigma_inputs(ctx: &mut RunCtx, modes: &[SigmaMode]) -> Result<(), CliError> {
    ctx.params().map_err(validation)?;
    if RunCtx::needs_table(modes) {
        ctx.sigma_table().map_err(computation)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Weights-only commands
// ---------------------------------------------------------------------------

pub fn fold(ctx: &mut RunCtx) -> CmdResult {
    ctx.params().map_err(validation)?;
    let out = util::cache_dir().unwrap_or_else(|| ctx.out_dir.clone());
    let path = ctx.save_folded(&out).map_err(computation)?;
    let model = ctx.folded().map_err(computation)?;
    println!("folded {} heads -> {}", model.heads.len(), path.display());
    for head in &model.heads {
        let wqk_norm = head.wqk.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bqk_norm = head.bqk.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "head {:2}: |wqk|_F = {:10.4}  |bqk| = {:10.4}",
            head.head_index, wqk_norm, bqk_norm
        );
    }
    Ok(())
}

pub fn sigma_stats(ctx: &mut RunCtx, sample: Option<usize>) -> CmdResult {
    let seed = ctx.seed;
    ctx.params().map_err(validation)?;
    let params = ctx.params_ref().unwrap();
    let table = detok::normstats::sigma_table(params, sample, seed).map_err(computation)?;
    let mut body = String::from("position,mean,min,max\n");
    for j in 0..table.mean.len() {
        writeln!(body, "{j},{},{},{}", table.mean[j], table.min[j], table.max[j]).unwrap();
    }
    let path = ctx.write_csv("sigma_table.csv", &body).map_err(computation)?;
    println!(
        "sigma aggregates over {} tokens x {} positions -> {}",
        table.sample_size,
        table.mean.len(),
        path.display()
    );
    Ok(())
}

pub fn variances(ctx: &mut RunCtx, matrix: &str) -> CmdResult {
    ctx.params().map_err(validation)?;
    let params = ctx.params_ref().unwrap();
    let (m, label) = match matrix {
        "token" => (params.token_embedding.view(), "token"),
        "position" => (params.position_embedding.view(), "position"),
        _ => unreachable!("clap validates the matrix values"),
    };
    let report = embedding_variances(m);
    let mut body = String::from("index,variance\n");
    for (i, v) in report.variances.iter().enumerate() {
        writeln!(body, "{i},{v}").unwrap();
    }
    let name = format!("variances_{label}.csv");
    let path = ctx.write_csv(&name, &body).map_err(computation)?;
    println!(
        "{label} embedding variances: mean {:.6}, min {:.6} @ {}, max {:.6} @ {} -> {}",
        report.mean, report.min, report.argmin, report.max, report.argmax, path.display()
    );
    if label == "token" {
        let raw = norm_variance(m, false, params.eps);
        let scaled = norm_variance(m, true, params.eps);
        println!("norm variance: {raw:.4} raw, {scaled:.6} after per-row sigma division");
        let diag = covariance_diagnostic(params, 2000, ctx.seed);
        println!(
            "mean |cov(e, p)| = {:.3e}; mean token variance = {:.3e} ({:.1}x larger)",
            diag.mean_abs_covariance, diag.mean_token_variance, diag.ratio
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn terms(
    ctx: &mut RunCtx,
    kind: &str,
    head: usize,
    query: Option<String>,
    i: Option<usize>,
    sigma_i: &str,
    sigma_j: &str,
    ref_pos: Option<usize>,
    svg: bool,
    spread: bool,
) -> CmdResult {
    let kind = TermKind::parse(kind)
        .ok_or_else(|| validation(anyhow!("unknown term kind {kind:?}; expected ee|pp|pe|ep|e|p")))?;
    if spread && kind != TermKind::P {
        return Err(validation(anyhow!("--spread only applies to --kind p")));
    }
    let mode_i = parse_mode(sigma_i)?;
    let mode_j = parse_mode(sigma_j)?;
    let params = ctx.params().map_err(validation)?;
    let dims = params.dims;
    if head >= dims.heads {
        return Err(validation(anyhow!(
            "head {head} out of range; model has {} heads",
            dims.heads
        )));
    }
    let ref_pos = default_ref_pos(dims.max_pos, ref_pos);

    let query_id = match (kind, &query) {
        (TermKind::EE | TermKind::EP, Some(text)) => Some(token_id(ctx, text)?),
        (TermKind::EE | TermKind::EP, None) => {
            return Err(validation(anyhow!("--kind {} needs --query", kind.label())))
        }
        _ => None,
    };
    let qpos = match kind {
        TermKind::PP | TermKind::PE | TermKind::EP => Some(
            i.ok_or_else(|| validation(anyhow!("--kind {} needs --i", kind.label())))?,
        ),
        TermKind::EE => Some(i.unwrap_or(ref_pos)),
        _ => None,
    };

    ensure_sigma_inputs(ctx, &[mode_i, mode_j])?;
    ctx.folded().map_err(computation)?;
    let sctx = sigma_ctx_rebuild(ctx, &[mode_i, mode_j])?;
    let fm = ctx.folded_ref().unwrap();
    let fh = fm.head(head).map_err(validation)?;

    let scores = match kind {
        TermKind::EE => terms::term_ee(
            &sctx, fh, query_id.unwrap(), Keys::All, mode_i, mode_j, qpos.unwrap(), ref_pos,
        ),
        TermKind::PP => terms::term_pp(&sctx, fh, qpos.unwrap(), mode_i, mode_j),
        TermKind::PE => terms::term_pe(&sctx, fh, qpos.unwrap(), Keys::All, mode_i, mode_j, ref_pos),
        TermKind::EP => terms::term_ep(&sctx, fh, query_id.unwrap(), qpos.unwrap(), mode_i, mode_j),
        TermKind::E => terms::term_e(&sctx, fh, mode_j, ref_pos),
        TermKind::P => terms::term_p(&sctx, fh, mode_j),
    }
    .map_err(computation)?;

    let band = if spread {
        Some(terms::term_e_spread_by_position(&sctx, fh).map_err(computation)?)
    } else {
        None
    };

    let mut body = String::new();
    let i_field = qpos.map(|v| v.to_string()).unwrap_or_default();
    let si = scores.sigma_i.map(|m| m.label()).unwrap_or("-");
    match &band {
        Some(band) => {
            body.push_str("head,i,j_or_key,sigma_i,sigma_j,score,e_mean,e_std\n");
            for (idx, v) in scores.values.iter().enumerate() {
                writeln!(
                    body,
                    "{head},{i_field},{idx},{si},{},{v},{},{}",
                    scores.sigma_j.label(),
                    band[idx].0,
                    band[idx].1
                )
                .unwrap();
            }
        }
        None => {
            body.push_str("head,i,j_or_key,sigma_i,sigma_j,score\n");
            for (idx, v) in scores.values.iter().enumerate() {
                writeln!(body, "{head},{i_field},{idx},{si},{},{v}", scores.sigma_j.label())
                    .unwrap();
            }
        }
    }
    let name = format!("term_{}_head{head}.csv", kind.label());
    let path = ctx.write_csv(&name, &body).map_err(computation)?;
    println!("{} scores for head {head} -> {}", kind.label(), path.display());

    if svg {
        if matches!(kind, TermKind::PP | TermKind::EP | TermKind::P) {
            let xs: Vec<f64> = (0..scores.values.len()).map(|j| j as f64).collect();
            let mut plot = LinePlot::new(
                format!("{} scores, head {head}", kind.label()),
                "key position j",
                "score",
            );
            plot.add_series(
                format!("sigma {}", scores.sigma_j.label()),
                xs.clone(),
                scores.values.clone(),
            );
            if let Some(band) = &band {
                let upper: Vec<f64> = scores
                    .values
                    .iter()
                    .zip(band)
                    .map(|(&s, &(m, sd))| s + m + sd)
                    .collect();
                let lower: Vec<f64> = scores
                    .values
                    .iter()
                    .zip(band)
                    .map(|(&s, &(m, sd))| s + m - sd)
                    .collect();
                plot.add_series("with token term, +1 std", xs.clone(), upper);
                plot.add_series("with token term, -1 std", xs.clone(), lower);
            }
            let name = format!("term_{}_head{head}.svg", kind.label());
            let path = ctx.write_svg(&name, &plot.to_svg()).map_err(computation)?;
            println!("plot -> {}", path.display());
        } else {
            eprintln!("note: --svg applies to position-indexed kinds (pp, ep, p); skipped");
        }
    }
    Ok(())
}

/// Rebuild a sigma context after `folded()` released the borrow.
fn sigma_ctx_rebuild<'a>(ctx: &'a RunCtx, modes: &[SigmaMode]) -> Result<SigmaCtx<'a>, CliError> {
    let params = ctx
        .params_ref()
        .ok_or_else(|| validation(anyhow!("model not loaded")))?;
    if RunCtx::needs_table(modes) {
        let table = ctx
            .sigma_table_ref()
            .ok_or_else(|| computation(anyhow!("sigma table not built")))?;
        Ok(SigmaCtx::with_table(params, table))
    } else {
        Ok(SigmaCtx::new(params))
    }
}

pub fn position_bias(ctx: &mut RunCtx, i: usize, head: usize, sigma: &str) -> CmdResult {
    let mode = parse_mode(sigma)?;
    ctx.params().map_err(validation)?;
    if RunCtx::needs_table(&[mode]) {
        ctx.sigma_table().map_err(computation)?;
    }
    ctx.folded().map_err(computation)?;
    let sctx = sigma_ctx_rebuild(ctx, &[mode])?;
    let fm = ctx.folded_ref().unwrap();
    let fh = fm.head(head).map_err(validation)?;
    let pb = terms::position_bias(&sctx, fh, i, mode).map_err(computation)?;

    let mut body = String::from("j,score,weight\n");
    for j in 0..pb.scores.len() {
        writeln!(body, "{j},{},{}", pb.scores[j], pb.weights[j]).unwrap();
    }
    let csv = ctx
        .write_csv(&format!("position_bias_head{head}_i{i}.csv"), &body)
        .map_err(computation)?;

    let xs: Vec<f64> = (0..pb.scores.len()).map(|j| j as f64).collect();
    let mut scores_plot = LinePlot::new(
        format!("position terms sum, head {head}, i = {i}"),
        "key position j",
        "pp + p",
    );
    scores_plot.add_series(format!("sigma {}", mode.label()), xs.clone(), pb.scores.clone());
    ctx.write_svg(
        &format!("position_bias_scores_head{head}_i{i}.svg"),
        &scores_plot.to_svg(),
    )
    .map_err(computation)?;

    let mut weights_plot = LinePlot::new(
        format!("softmax of position terms, head {head}, i = {i}"),
        "key position j",
        "weight",
    );
    weights_plot.add_series("softmax(sum / sqrt(d_head))", xs, pb.weights.clone());
    ctx.write_svg(
        &format!("position_bias_weights_head{head}_i{i}.svg"),
        &weights_plot.to_svg(),
    )
    .map_err(computation)?;

    let tail: f64 = pb.weights[pb.scores.len().saturating_sub(11)..].iter().sum();
    println!(
        "position bias head {head} i={i}: {:.1}% of weight on the last 11 positions -> {}",
        100.0 * tail,
        csv.display()
    );
    Ok(())
}

pub fn topk(
    ctx: &mut RunCtx,
    query: &str,
    head: usize,
    k: usize,
    sigma_j: &str,
    ref_pos: Option<usize>,
) -> CmdResult {
    let mode_j = parse_mode(sigma_j)?;
    let params = ctx.params().map_err(validation)?;
    let ref_pos = default_ref_pos(params.dims.max_pos, ref_pos);
    let query_id = token_id(ctx, query)?;
    if RunCtx::needs_table(&[mode_j]) {
        ctx.sigma_table().map_err(computation)?;
    }
    ctx.folded().map_err(computation)?;

    let scores = {
        let sctx = sigma_ctx_rebuild(ctx, &[mode_j])?;
        let fm = ctx.folded_ref().unwrap();
        let fh = fm.head(head).map_err(validation)?;
        terms::term_ee(
            &sctx,
            fh,
            query_id,
            Keys::All,
            SigmaMode::NoLayerNorm,
            mode_j,
            0,
            ref_pos,
        )
        .map_err(computation)?
    };

    let tok = ctx.tokenizer_ref().unwrap();
    let mut body = String::from("rank,key_id,key_token,score\n");
    for (rank0, idx) in detok::numeric::top_k_desc(&scores.values, k).into_iter().enumerate() {
        let text = tok.decode_one(idx as u32).map_err(computation)?;
        writeln!(
            body,
            "{},{},{},{}",
            rank0 + 1,
            idx,
            csv_escape(&text),
            scores.values[idx]
        )
        .unwrap();
    }
    let path = ctx
        .write_csv(&format!("topk_head{head}.csv"), &body)
        .map_err(computation)?;
    println!("top-{k} keys for {query:?} on head {head} -> {}", path.display());
    Ok(())
}

pub fn heatmap(ctx: &mut RunCtx, head: usize, tokens: usize, no_layernorm: bool) -> CmdResult {
    let params = ctx.params().map_err(validation)?;
    let dims = params.dims;
    if tokens == 0 || tokens > dims.vocab_size {
        return Err(validation(anyhow!(
            "--tokens must be in 1..={}",
            dims.vocab_size
        )));
    }
    let mode = if no_layernorm {
        SigmaMode::NoLayerNorm
    } else {
        SigmaMode::Exact
    };
    let ref_pos = default_ref_pos(dims.max_pos, None);
    let seed = ctx.seed;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = index_sample(&mut rng, dims.vocab_size, tokens.min(dims.vocab_size))
        .into_iter()
        .map(|v| v as u32)
        .collect();
    ids.sort_unstable();

    ctx.folded().map_err(computation)?;
    let sctx = sigma_ctx_rebuild(ctx, &[mode])?;
    let fm = ctx.folded_ref().unwrap();
    let fh = fm.head(head).map_err(validation)?;

    let mut matrix = Vec::with_capacity(ids.len());
    for &q in &ids {
        let row = terms::term_ee(&sctx, fh, q, Keys::Ids(&ids), mode, mode, ref_pos, ref_pos)
            .map_err(computation)?;
        matrix.push(row.values);
    }
    let mut hm = Heatmap::new(
        format!(
            "token-token scores, head {head} ({}, {} sampled tokens, seed {seed})",
            if no_layernorm { "raw" } else { "exact sigma" },
            ids.len()
        ),
        matrix,
    );
    hm.x_label = "key token (sampled)".into();
    hm.y_label = "query token (sampled)".into();
    let path = ctx
        .write_svg(&format!("heatmap_head{head}.svg"), &hm.to_svg())
        .map_err(computation)?;
    println!("heatmap -> {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Corpus commands
// ---------------------------------------------------------------------------

pub fn count(ctx: &mut RunCtx, corpus: &[PathBuf], doc_sep: &str) -> CmdResult {
    let sep = parse_doc_sep(doc_sep)?;
    let files = expand_corpus(corpus)?;
    ctx.tokenizer().map_err(validation)?;

    let cache_path = util::cache_dir().map(|d| d.join(format!("counts-{}.bin", ctx.config_hash)));
    let (uni, bi) = match cache_path.as_ref().filter(|p| p.exists()) {
        Some(path) => match corpus::load_snapshot(path) {
            Ok((u, b, cached_sep)) if cached_sep == sep => {
                println!("reusing counts snapshot {}", path.display());
                (u, b)
            }
            _ => count_fresh(ctx, &files, sep, cache_path.as_deref())?,
        },
        None => count_fresh(ctx, &files, sep, cache_path.as_deref())?,
    };

    let out = ctx.out_path("counts.bin");
    std::fs::create_dir_all(&ctx.out_dir).ok();
    corpus::save_snapshot(&out, &uni, &bi, sep).map_err(computation)?;

    let tok = ctx.tokenizer_ref().unwrap();
    let mut uni_body = String::from("id,token,count\n");
    for (id, &c) in uni.counts.iter().enumerate() {
        if c > 0 {
            let text = tok.decode_one(id as u32).map_err(computation)?;
            writeln!(uni_body, "{id},{},{c}", csv_escape(&text)).unwrap();
        }
    }
    ctx.write_csv("unigrams.csv", &uni_body).map_err(computation)?;

    let mut bi_body = String::from("prev_id,next_id,count\n");
    for (p, n, c) in bi.sorted_entries() {
        writeln!(bi_body, "{p},{n},{c}").unwrap();
    }
    ctx.write_csv("bigrams.csv", &bi_body).map_err(computation)?;

    println!(
        "{} tokens, {} distinct bigrams from {} files -> {}",
        uni.total,
        bi.distinct(),
        files.len(),
        out.display()
    );
    Ok(())
}

fn count_fresh(
    ctx: &mut RunCtx,
    files: &[PathBuf],
    sep: DocSep,
    cache_path: Option<&Path>,
) -> Result<(corpus::UnigramCounts, corpus::BigramCounts), CliError> {
    let tok = ctx.tokenizer().map_err(validation)?;
    let (uni, bi) = corpus::count_files(files, tok, sep, None).map_err(computation)?;
    if let Some(path) = cache_path {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).ok();
        }
        corpus::save_snapshot(path, &uni, &bi, sep).ok();
    }
    Ok((uni, bi))
}

#[allow(clippy::too_many_arguments)]
pub fn auroc(
    ctx: &mut RunCtx,
    counts: &Path,
    query: Option<String>,
    head: Option<usize>,
    mean: bool,
    null: bool,
    min_count: u64,
    max_queries: usize,
) -> CmdResult {
    let (_, bigrams, _) = crate::ctx::load_counts(counts).map_err(validation)?;
    let params = ctx.params().map_err(validation)?;
    let dims = params.dims;
    let ref_pos = default_ref_pos(dims.max_pos, None);
    let mode_j = SigmaMode::MeanOverVocab;

    if bigrams.vocab_size() != dims.vocab_size {
        return Err(validation(anyhow!(
            "counts snapshot is for a {}-token vocabulary, model has {}",
            bigrams.vocab_size(),
            dims.vocab_size
        )));
    }

    match (query, mean) {
        (Some(text), false) => {
            let head = head.ok_or_else(|| validation(anyhow!("--query mode needs --head")))?;
            let query_id = token_id(ctx, &text)?;
            ctx.sigma_table().map_err(computation)?;
            ctx.folded().map_err(computation)?;
            let sctx = sigma_ctx_rebuild(ctx, &[mode_j])?;
            let fm = ctx.folded_ref().unwrap();
            let fh = fm.head(head).map_err(validation)?;
            let roc = auroc_for_query(&sctx, fh, query_id, &bigrams, mode_j, ref_pos)
                .map_err(computation)?;

            let mut body = String::from("threshold,fpr,tpr\n");
            for t in 0..roc.tpr.len() {
                let thr = if t == 0 {
                    "inf".to_string()
                } else {
                    roc.thresholds[t - 1].to_string()
                };
                writeln!(body, "{thr},{},{}", roc.fpr[t], roc.tpr[t]).unwrap();
            }
            let csv = ctx
                .write_csv(&format!("roc_head{head}.csv"), &body)
                .map_err(computation)?;
            let mut plot = LinePlot::new(
                format!("ROC for {text:?}, head {head} (AUROC {:.4})", roc.auroc),
                "false positive rate",
                "true positive rate",
            );
            plot.add_series("ROC", roc.fpr.clone(), roc.tpr.clone());
            plot.add_series("chance", vec![0.0, 1.0], vec![0.0, 1.0]);
            ctx.write_svg(&format!("roc_head{head}.svg"), &plot.to_svg())
                .map_err(computation)?;
            println!("AUROC {:.6} for {text:?} on head {head} -> {}", roc.auroc, csv.display());
            Ok(())
        }
        (None, true) => {
            ctx.sigma_table().map_err(computation)?;
            ctx.folded().map_err(computation)?;
            let policy = QueryPolicy {
                min_count,
                max_queries: Some(max_queries),
                seed: ctx.seed,
                permute_null: null,
            };
            let sctx = sigma_ctx_rebuild(ctx, &[mode_j])?;
            let fm = ctx.folded_ref().unwrap();
            let mut body = String::from("head,mean_auroc,queries\n");
            let mut best = (0usize, f64::MIN);
            for fh in &fm.heads {
                let r = mean_auroc(&sctx, fh, &bigrams, mode_j, ref_pos, policy)
                    .map_err(computation)?;
                writeln!(body, "{},{},{}", fh.head_index, r.mean, r.queries_used).unwrap();
                println!("head {:2}: mean AUROC {:.4} over {} queries", fh.head_index, r.mean, r.queries_used);
                if r.mean > best.1 {
                    best = (fh.head_index, r.mean);
                }
            }
            let name = if null { "auroc_by_head_null.csv" } else { "auroc_by_head.csv" };
            let path = ctx.write_csv(name, &body).map_err(computation)?;
            println!("best head: {} ({:.4}) -> {}", best.0, best.1, path.display());
            Ok(())
        }
        _ => Err(validation(anyhow!("pass exactly one of --query TEXT or --mean"))),
    }
}

pub fn contrib(
    ctx: &mut RunCtx,
    corpus_paths: &[PathBuf],
    heads: &str,
    positions: &str,
    samples: usize,
    doc_sep: &str,
) -> CmdResult {
    let sep = parse_doc_sep(doc_sep)?;
    let files = expand_corpus(corpus_paths)?;
    let params = ctx.params().map_err(validation)?;
    let dims = params.dims;
    let head_list = parse_heads(heads, dims.heads)?;
    let pos_list: Vec<usize> = positions
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| validation(anyhow!("bad position {p:?}")))
        })
        .collect::<Result<_, _>>()?;
    let max_i = *pos_list.iter().max().unwrap_or(&0);
    if max_i >= dims.max_pos {
        return Err(validation(anyhow!(
            "position {max_i} out of range; model accepts < {}",
            dims.max_pos
        )));
    }
    ctx.tokenizer().map_err(validation)?;

    let seed = ctx.seed;
    let tok = ctx.tokenizer().map_err(validation)?;
    let seqs = corpus::sample_sequences(&files, tok, sep, max_i + 1, samples, seed)
        .map_err(computation)?;
    if seqs.is_empty() {
        return Err(computation(anyhow!(
            "no document in the corpus reaches {} tokens",
            max_i + 1
        )));
    }
    println!("sampled {} sequences of length {}", seqs.len(), max_i + 1);

    ctx.folded().map_err(computation)?;
    let sctx = sigma_ctx_rebuild(ctx, &[])?;
    let fm = ctx.folded_ref().unwrap();

    let mut body = String::from("head,i,term,kl_mean,kl_std\n");
    let mut per_head_series: Vec<(usize, [Vec<f64>; 6])> = Vec::new();
    for &h in &head_list {
        let fh = fm.head(h).map_err(validation)?;
        let mut series: [Vec<f64>; 6] = Default::default();
        for &i in &pos_list {
            let stats = contribution_summary(&sctx, fh, &seqs, i).map_err(computation)?;
            for (t, stat) in stats.iter().enumerate() {
                writeln!(
                    body,
                    "{h},{i},{},{},{}",
                    stat.term.label(),
                    stat.kl_mean,
                    stat.kl_std
                )
                .unwrap();
                series[t].push(stat.kl_mean);
            }
        }
        per_head_series.push((h, series));
    }
    let path = ctx.write_csv("contributions.csv", &body).map_err(computation)?;
    println!("term contributions -> {}", path.display());

    let xs: Vec<f64> = pos_list.iter().map(|&i| i as f64).collect();
    for (h, series) in per_head_series {
        let mut plot = LinePlot::new(
            format!("term contributions, head {h}"),
            "query position i",
            "mean KL (nats)",
        );
        for (t, kind) in TermKind::ALL.iter().enumerate() {
            plot.add_series(kind.label(), xs.clone(), series[t].clone());
        }
        ctx.write_svg(&format!("contributions_head{h}.svg"), &plot.to_svg())
            .map_err(computation)?;
    }
    Ok(())
}

pub fn empirical(
    ctx: &mut RunCtx,
    corpus_paths: &[PathBuf],
    i: usize,
    samples: usize,
    doc_sep: &str,
) -> CmdResult {
    let sep = parse_doc_sep(doc_sep)?;
    let files = expand_corpus(corpus_paths)?;
    let params = ctx.params().map_err(validation)?;
    let dims = params.dims;
    if i >= dims.max_pos {
        return Err(validation(anyhow!("--i out of range; model accepts < {}", dims.max_pos)));
    }
    ctx.tokenizer().map_err(validation)?;
    let seed = ctx.seed;
    let tok = ctx.tokenizer().map_err(validation)?;
    let seqs =
        corpus::sample_sequences(&files, tok, sep, i + 1, samples, seed).map_err(computation)?;
    if seqs.is_empty() {
        return Err(computation(anyhow!(
            "no document in the corpus reaches {} tokens",
            i + 1
        )));
    }
    println!("sampled {} sequences of length {}", seqs.len(), i + 1);

    ctx.sigma_table().map_err(computation)?;
    ctx.folded().map_err(computation)?;
    let sctx = sigma_ctx_rebuild(ctx, &[SigmaMode::MeanOverVocab])?;
    let fm = ctx.folded_ref().unwrap();

    // Mean and std of alpha per head per key position.
    let n_heads = fm.heads.len();
    let mut sums = vec![vec![0.0f64; i + 1]; n_heads];
    let mut sq_sums = vec![vec![0.0f64; i + 1]; n_heads];
    for seq in &seqs {
        let rows = empirical_attention(&sctx, fm, seq, i).map_err(computation)?;
        for row in rows {
            for (j, &a) in row.alpha.iter().enumerate() {
                sums[row.head][j] += a;
                sq_sums[row.head][j] += a * a;
            }
        }
    }
    let n = seqs.len() as f64;

    let mut body = String::from("head,j,alpha_mean,alpha_std,position_bias_weight\n");
    for h in 0..n_heads {
        let fh = fm.head(h).map_err(validation)?;
        let pb = terms::position_bias(&sctx, fh, i, SigmaMode::MeanOverVocab)
            .map_err(computation)?;
        for j in 0..=i {
            let mean = sums[h][j] / n;
            let var = (sq_sums[h][j] / n - mean * mean).max(0.0);
            writeln!(body, "{h},{j},{mean},{},{}", var.sqrt(), pb.weights[j]).unwrap();
        }

        let window = 20.min(i);
        let xs: Vec<f64> = ((i - window)..=i).map(|j| j as f64).collect();
        let mut plot = LinePlot::new(
            format!("empirical attention, head {h}, i = {i} ({} seqs)", seqs.len()),
            "key position j",
            "weight",
        );
        plot.add_series(
            "empirical mean",
            xs.clone(),
            ((i - window)..=i).map(|j| sums[h][j] / n).collect(),
        );
        plot.add_series(
            "position terms only",
            xs,
            ((i - window)..=i).map(|j| pb.weights[j]).collect(),
        );
        ctx.write_svg(&format!("empirical_head{h}_i{i}.svg"), &plot.to_svg())
            .map_err(computation)?;
    }
    let path = ctx.write_csv(&format!("empirical_i{i}.csv"), &body).map_err(computation)?;
    println!("empirical attention -> {}", path.display());
    Ok(())
}

pub fn spearman(
    ctx: &mut RunCtx,
    counts: &Path,
    target: &str,
    head: Option<usize>,
    ref_pos: Option<usize>,
) -> CmdResult {
    let (uni, _, _) = crate::ctx::load_counts(counts).map_err(validation)?;
    let params = ctx.params().map_err(validation)?;
    let dims = params.dims;
    if uni.counts.len() != dims.vocab_size {
        return Err(validation(anyhow!(
            "counts snapshot is for a {}-token vocabulary, model has {}",
            uni.counts.len(),
            dims.vocab_size
        )));
    }
    let ref_pos = default_ref_pos(dims.max_pos, ref_pos);
    let freqs: Vec<f64> = uni.counts.iter().map(|&c| c as f64).collect();
    let log_freqs: Vec<f64> = freqs.iter().map(|&c| (c + 1.0).log10()).collect();

    let mut body = String::from("target,head,spearman,n\n");
    match target {
        "variance" => {
            let report = embedding_variances(params.token_embedding.view());
            let rho = analysis::spearman(&report.variances, &freqs).map_err(computation)?;
            writeln!(body, "variance,-,{rho},{}", freqs.len()).unwrap();
            println!("token-embedding variance vs frequency: spearman = {rho:.4}");

            let mut plot = LinePlot::new(
                "embedding variance vs corpus count",
                "log10(count + 1)",
                "variance",
            );
            plot.add_points("tokens", log_freqs.clone(), report.variances.clone());
            ctx.write_svg("spearman_variance.svg", &plot.to_svg())
                .map_err(computation)?;
        }
        "term-e" => {
            ctx.sigma_table().map_err(computation)?;
            ctx.folded().map_err(computation)?;
            let sctx = sigma_ctx_rebuild(ctx, &[SigmaMode::MeanOverVocab])?;
            let fm = ctx.folded_ref().unwrap();
            let heads: Vec<usize> = match head {
                Some(h) => vec![h],
                None => (0..dims.heads).collect(),
            };
            for h in heads {
                let fh = fm.head(h).map_err(validation)?;
                let scores = terms::term_e(&sctx, fh, SigmaMode::Exact, ref_pos)
                    .map_err(computation)?;
                let rho = analysis::spearman(&scores.values, &freqs).map_err(computation)?;
                writeln!(body, "term-e,{h},{rho},{}", freqs.len()).unwrap();
                println!("term-e head {h} vs frequency: spearman = {rho:.4}");

                let mut plot = LinePlot::new(
                    format!("token self-assertion vs corpus count, head {h}"),
                    "log10(count + 1)",
                    "score",
                );
                plot.add_points("tokens", log_freqs.clone(), scores.values.clone());
                ctx.write_svg(&format!("spearman_term_e_head{h}.svg"), &plot.to_svg())
                    .map_err(computation)?;
            }
        }
        _ => unreachable!("clap validates the target values"),
    }
    let path = ctx.write_csv("spearman.csv", &body).map_err(computation)?;
    println!("-> {}", path.display());
    Ok(())
}

const DEFAULT_REPORT_WORDS: [&str; 9] = [
    "sapiens",
    "Aliens",
    "Tokyo",
    " North Korea",
    " Barack Obama",
    " Albert Einstein",
    " Michael Jackson",
    " sodium chloride",
    " 21 century",
];

pub fn detok_report(
    ctx: &mut RunCtx,
    words: Vec<String>,
    words_file: Option<PathBuf>,
    k: usize,
    heads: &str,
    ref_pos: Option<usize>,
) -> CmdResult {
    let params = ctx.params().map_err(validation)?;
    let dims = params.dims;
    let head_list = parse_heads(heads, dims.heads)?;
    let ref_pos = default_ref_pos(dims.max_pos, ref_pos);

    let mut all_words = words;
    if let Some(path) = words_file {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| validation(anyhow!("reading {}: {e}", path.display())))?;
        all_words.extend(text.lines().filter(|l| !l.is_empty()).map(String::from));
    }
    if all_words.is_empty() {
        all_words = DEFAULT_REPORT_WORDS.iter().map(|s| s.to_string()).collect();
    }

    ctx.tokenizer().map_err(validation)?;
    ctx.sigma_table().map_err(computation)?;
    ctx.folded().map_err(computation)?;
    let sctx = sigma_ctx_rebuild(ctx, &[SigmaMode::MeanOverVocab])?;
    let fm = ctx.folded_ref().unwrap();
    let tok = ctx.tokenizer_ref().unwrap();

    let report = analysis::detok_report(
        &sctx,
        fm,
        tok,
        &all_words,
        &head_list,
        k,
        SigmaMode::MeanOverVocab,
        ref_pos,
    )
    .map_err(computation)?;

    for word in &report.skipped {
        eprintln!("note: {word:?} encodes to a single token; skipped");
    }
    let mut body = String::from("word,head,query_token,rank,key_token,score,known\n");
    for row in &report.rows {
        writeln!(
            body,
            "{},{},{},{},{},{},{}",
            csv_escape(&row.word),
            row.head,
            csv_escape(&row.query_text),
            row.rank,
            csv_escape(&row.key_text),
            row.score,
            row.known
        )
        .unwrap();
    }
    let path = ctx.write_csv("detok_report.csv", &body).map_err(computation)?;
    let known = report.rows.iter().filter(|r| r.known).count();
    println!(
        "{} report rows ({} matching curated pairs) -> {}",
        report.rows.len(),
        known,
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

pub fn verify(ctx: &mut RunCtx, seqs: usize, seq_len: usize, draws: usize) -> CmdResult {
    let params = ctx.params().map_err(validation)?;
    let dims = params.dims;
    let seq_len = seq_len.min(dims.max_pos);
    let seed = ctx.seed;
    ctx.folded().map_err(computation)?;
    let params = ctx.params_ref().unwrap();
    let fm = ctx.folded_ref().unwrap();
    let heads = split_heads(params);
    let sctx = SigmaCtx::new(params);

    let started = std::time::Instant::now();
    let temperature = (dims.d_head as f64).sqrt();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // 1. Folded vs original attention rows, and key-bias zeroing, over every
    //    query position of random sequences. Whole score matrices at once:
    //    folded S = (X_hat . wqk) . X_hat^T + bqk . X_hat^T broadcast, with
    //    X_hat the sigma-scaled raw embedding sums; original S = Q . K^T on
    //    the fully LayerNormed inputs.
    let mut max_row_dev: f64 = 0.0;
    let mut max_bk_dev: f64 = 0.0;
    for _ in 0..seqs {
        let seq: Vec<u32> = (0..seq_len)
            .map(|_| rng.random_range(0..dims.vocab_size as u32))
            .collect();
        let mut x_hat = Array2::zeros((seq_len, dims.d));
        let mut ln = Array2::zeros((seq_len, dims.d));
        for (j, &t) in seq.iter().enumerate() {
            let raw = params.embedding_sum(t, j).map_err(computation)?;
            let s = sigma_embed(params, t, j).map_err(computation)?;
            x_hat.row_mut(j).assign(&(&raw / s));
            ln.row_mut(j).assign(&layer_norm_full(
                raw.view(),
                params.ln_gamma.view(),
                params.ln_beta.view(),
                params.eps,
            ));
        }
        for (h, fh) in fm.heads.iter().enumerate() {
            let head = &heads[h];
            let folded_s = {
                let u = x_hat.dot(&fh.wqk);
                let mut s = u.dot(&x_hat.t());
                let bias = x_hat.dot(&fh.bqk);
                for mut row in s.rows_mut() {
                    row += &bias;
                }
                s
            };
            let q = ln.dot(&head.wq) + &head.bq;
            let k_no_bias = ln.dot(&head.wk);
            let orig_s = {
                let mut k = k_no_bias.clone();
                for mut row in k.rows_mut() {
                    row += &head.bk;
                }
                q.dot(&k.t())
            };
            let orig_s_zero_bk = q.dot(&k_no_bias.t());

            for i in 0..seq_len {
                let scale = |m: &Array2<f64>| -> Vec<f64> {
                    (0..=i).map(|j| m[[i, j]] / temperature).collect()
                };
                let a = detok::numeric::softmax(&scale(&folded_s));
                let b = detok::numeric::softmax(&scale(&orig_s));
                let c = detok::numeric::softmax(&scale(&orig_s_zero_bk));
                for j in 0..=i {
                    max_row_dev = max_row_dev.max((a[j] - b[j]).abs());
                    max_bk_dev = max_bk_dev.max((b[j] - c[j]).abs());
                }
            }
        }
    }

    // 2. Six-term identity on random draws.
    let mut max_rel: f64 = 0.0;
    for _ in 0..draws {
        let ti = rng.random_range(0..dims.vocab_size as u32);
        let tj = rng.random_range(0..dims.vocab_size as u32);
        let i = rng.random_range(0..dims.max_pos);
        let j = rng.random_range(0..dims.max_pos);
        let h = rng.random_range(0..dims.heads);
        let fh = &fm.heads[h];
        let sum = terms::six_term_sum(&sctx, fh, ti, i, tj, j).map_err(computation)?;
        let x_i = params.embedding_sum(ti, i).map_err(computation)?;
        let x_j = params.embedding_sum(tj, j).map_err(computation)?;
        let si = detok::normstats::sigma(x_i.view(), params.eps);
        let sj = detok::normstats::sigma(x_j.view(), params.eps);
        let folded = score_folded(x_i.view(), x_j.view(), fh, si, sj).map_err(computation)?;
        let rel = (sum - folded).abs() / sum.abs().max(folded.abs()).max(1.0);
        max_rel = max_rel.max(rel);
    }

    let elapsed = started.elapsed();
    let row_ok = max_row_dev <= 1e-9;
    let bk_ok = max_bk_dev <= 1e-9;
    let rel_ok = max_rel <= 1e-10;
    println!(
        "folded vs original rows : max |delta| = {max_row_dev:.3e} (tolerance 1e-9) {}",
        if row_ok { "ok" } else { "FAIL" }
    );
    println!(
        "key-bias zeroing        : max |delta| = {max_bk_dev:.3e} (tolerance 1e-9) {}",
        if bk_ok { "ok" } else { "FAIL" }
    );
    println!(
        "six-term identity       : max rel     = {max_rel:.3e} (tolerance 1e-10) {}",
        if rel_ok { "ok" } else { "FAIL" }
    );
    println!(
        "verified {seqs} sequences x {seq_len} positions x {} heads and {draws} draws in {:.1}s",
        dims.heads,
        elapsed.as_secs_f64()
    );
    if row_ok && bk_ok && rel_ok {
        Ok(())
    } else {
        Err(computation(anyhow!("equivalence checks failed")))
    }
}

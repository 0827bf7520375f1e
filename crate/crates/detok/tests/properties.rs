//! Property suites runnable with no model file: sigma laws, softmax
//! shift-invariance, tokenizer round-trips, and count determinism.

use std::path::Path;
use std::sync::OnceLock;

use detok::corpus::count_documents;
use detok::normstats::sigma;
use detok::numeric::softmax;
use detok::Tokenizer;
use ndarray::Array1;
use proptest::prelude::*;

fn fixture_tokenizer() -> &'static Tokenizer {
    static TOK: OnceLock<Tokenizer> = OnceLock::new();
    TOK.get_or_init(|| {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        Tokenizer::from_files(&dir.join("vocab.json"), &dir.join("merges.txt")).unwrap()
    })
}

proptest! {
    #[test]
    fn sigma_never_below_sqrt_eps(xs in prop::collection::vec(-1e4f64..1e4, 1..64)) {
        let x = Array1::from_vec(xs);
        prop_assert!(sigma(x.view(), 1e-5) >= 1e-5f64.sqrt() - 1e-15);
    }

    #[test]
    fn sigma_is_mean_shift_invariant(
        xs in prop::collection::vec(-100f64..100.0, 2..48),
        c in -100f64..100.0,
    ) {
        let x = Array1::from_vec(xs.clone());
        let shifted = Array1::from_vec(xs.iter().map(|&v| v + c).collect());
        let a = sigma(x.view(), 1e-5);
        let b = sigma(shifted.view(), 1e-5);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn sigma_scaling_law(
        xs in prop::collection::vec(-50f64..50.0, 2..48),
        a in 0.01f64..20.0,
    ) {
        // sigma(a x)^2 - eps == a^2 (sigma(x)^2 - eps)
        let eps = 1e-5;
        let x = Array1::from_vec(xs.clone());
        let ax = Array1::from_vec(xs.iter().map(|&v| a * v).collect());
        let lhs = sigma(ax.view(), eps).powi(2) - eps;
        let rhs = a * a * (sigma(x.view(), eps).powi(2) - eps);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn normalized_variance_law(xs in prop::collection::vec(-50f64..50.0, 2..48)) {
        // var(x / sigma(x)) == var(x) / (var(x) + eps)
        let eps = 1e-5;
        let x = Array1::from_vec(xs);
        let s = sigma(x.view(), eps);
        let scaled = x.mapv(|v| v / s);
        let var = |v: &Array1<f64>| {
            let m = v.sum() / v.len() as f64;
            v.iter().map(|&u| (u - m) * (u - m)).sum::<f64>() / v.len() as f64
        };
        let lhs = var(&scaled);
        let rhs = var(&x) / (var(&x) + eps);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-10));
    }

    #[test]
    fn softmax_shift_invariance(
        xs in prop::collection::vec(-30f64..30.0, 1..40),
        c in -30f64..30.0,
    ) {
        let base = softmax(&xs);
        let shifted: Vec<f64> = xs.iter().map(|&v| v + c).collect();
        let moved = softmax(&shifted);
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn tokenizer_round_trips_arbitrary_strings(text in "\\PC{0,60}") {
        let tok = fixture_tokenizer();
        let ids = tok.encode(&text).unwrap();
        prop_assert_eq!(tok.decode(&ids).unwrap(), text);
    }

    #[test]
    fn tokenizer_round_trips_whitespace_runs(
        runs in prop::collection::vec((0usize..5, 0usize..6, "[a-z]{0,4}"), 0..6)
    ) {
        const WS: [char; 5] = [' ', '\t', '\n', '\u{a0}', '\u{2003}'];
        let mut text = String::new();
        for (ws, n, word) in runs {
            for _ in 0..n {
                text.push(WS[ws]);
            }
            text.push_str(&word);
        }
        let tok = fixture_tokenizer();
        let ids = tok.encode(&text).unwrap();
        prop_assert_eq!(tok.decode(&ids).unwrap(), text);
    }

    #[test]
    fn count_determinism_across_worker_counts(
        docs in prop::collection::vec("[ a-z0-9.,!']{0,40}", 1..24)
    ) {
        let tok = fixture_tokenizer();
        let refs: Vec<&str> = docs.iter().map(|s| s.as_str()).collect();
        let (u1, b1) = count_documents(&refs, tok, Some(1)).unwrap();
        let (u4, b4) = count_documents(&refs, tok, Some(4)).unwrap();
        prop_assert_eq!(u1, u4);
        prop_assert_eq!(b1, b4);
    }

    #[test]
    fn count_merge_associativity(
        docs in prop::collection::vec("[ a-z]{0,30}", 2..16),
        split in 1usize..8,
    ) {
        let tok = fixture_tokenizer();
        let refs: Vec<&str> = docs.iter().map(|s| s.as_str()).collect();
        let cut = split.min(refs.len() - 1);
        let (mut ua, mut ba) = count_documents(&refs[..cut], tok, Some(1)).unwrap();
        let (ub, bb) = count_documents(&refs[cut..], tok, Some(1)).unwrap();
        ua.merge(&ub);
        ba.merge(&bb);
        let (uw, bw) = count_documents(&refs, tok, Some(1)).unwrap();
        prop_assert_eq!(ua, uw);
        prop_assert_eq!(ba, bw);
    }
}

#[test]
fn bigram_total_identity_on_fixture_corpus() {
    // Sum of bigram counts equals sum over documents of max(len - 1, 0).
    let tok = fixture_tokenizer();
    let docs = ["hello world", "x", "", "don't stop me now", "a b c d e"];
    let refs: Vec<&str> = docs.to_vec();
    let (_, bi) = count_documents(&refs, tok, Some(2)).unwrap();
    let expect: u64 = docs
        .iter()
        .map(|d| (tok.encode(d).unwrap().len() as u64).saturating_sub(1))
        .sum();
    assert_eq!(bi.total(), expect);
}

use proptest::prelude::*;

use gier_core::backend::CompletionKey;
use gier_core::metrics::{grounding_ratio, thematic_drift, tokenize, normalize, DriftInput};
use gier_core::stats::{bootstrap_mean_ci, wilcoxon_signed_rank, PairedSample, WilcoxonOptions};
use gier_core::Rational;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["ucp1", "beige", "fat", "ca2", "cycling", "mice"]), 0..30)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn diffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-8i32..=8).prop_map(|x| x as f64 / 8.0), 1..30)
}

fn pairs(d: &[f64]) -> Vec<PairedSample<f64>> {
    d.iter()
        .enumerate()
        .map(|(i, x)| PairedSample::new(i.to_string(), 0.0, *x))
        .collect()
}

proptest! {
    #[test]
    fn grounding_is_a_fraction(r in words(), s in prop::collection::vec(words(), 0..4)) {
        let sentences: Vec<String> = s.iter().map(|w| w.join(" ")).collect();
        let g: f64 = grounding_ratio(&r.join(" "), &sentences, 3);
        prop_assert!((0.0..=1.0).contains(&g));
    }

    #[test]
    fn appending_an_abstract_sentence_never_lowers_grounding(
        r in words(),
        s in prop::collection::vec(words(), 1..4),
        pick in any::<prop::sample::Index>(),
    ) {
        let sentences: Vec<String> = s.iter().map(|w| w.join(" ")).collect();
        let added = &sentences[pick.index(sentences.len())];
        prop_assume!(tokenize(added).len() >= 3);
        let before: Rational = grounding_ratio(&r.join(" "), &sentences, 3);
        let after: Rational = grounding_ratio(&format!("{} '{added}'", r.join(" ")), &sentences, 3);
        prop_assert!(after >= before);
    }

    #[test]
    fn drift_is_zero_only_on_theme(x in 0u8..=10, zs in prop::collection::vec(0u8..=10, 1..10)) {
        let d: Rational = thematic_drift(&DriftInput::single(x, zs.clone())).unwrap();
        prop_assert!(d >= Rational::from_integer(0) && d <= Rational::from_integer(10));
        prop_assert_eq!(d == Rational::from_integer(0), zs.iter().all(|&z| z == x));
    }

    #[test]
    fn wilcoxon_p_is_symmetric_under_negation(d in diffs()) {
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let a = wilcoxon_signed_rank(&pairs(&d), WilcoxonOptions::default()).unwrap();
        let b = wilcoxon_signed_rank(&pairs(&neg), WilcoxonOptions::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_interval_lies_within_the_data(d in diffs(), seed in any::<u64>()) {
        let (lo, hi) = bootstrap_mean_ci(&d, 500, 0.95, seed).unwrap();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min - 1e-12 <= lo && lo <= hi && hi <= max + 1e-12);
        prop_assert_eq!((lo, hi), bootstrap_mean_ci(&d, 500, 0.95, seed).unwrap());
    }

    #[test]
    fn tokenizing_normalized_text_is_stable(text in "[ A-Za-z0-9,.'-]{0,60}") {
        prop_assert_eq!(tokenize(&normalize(&text)), tokenize(&text));
    }

    #[test]
    fn completion_keys_separate_prompts(a in ".{1,40}", b in ".{1,40}") {
        let ka = CompletionKey::new("m", 0.0, &a);
        prop_assert_eq!(ka.clone(), CompletionKey::new("m", 0.0, &a));
        prop_assert_eq!(ka == CompletionKey::new("m", 0.0, &b), a == b);
        prop_assert_ne!(ka, CompletionKey::new("m", 0.5, &a));
    }
}

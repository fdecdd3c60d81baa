use humaine_core::gateway::mock_complete;
use humaine_core::persona::{diversity_index, generate_personas, quota_counts, Domain};
use humaine_core::prompt::{dialogue_diversity, DetailLevel, PromptParameters, Style};
use proptest::prelude::*;

#[test]
fn cohort_is_reproducible_and_valid() {
    let a = generate_personas(50, 9).unwrap();
    let b = generate_personas(50, 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_personas(50, 10).unwrap());
    for p in &a {
        p.validate().unwrap();
    }
    let d = diversity_index(&a).unwrap();
    assert!(d > 0.0 && d < 1.0, "{d}");
}

#[test]
fn quotas_follow_largest_remainder() {
    assert_eq!(quota_counts(&[0.5, 0.3, 0.2], 10), vec![5, 3, 2]);
    // 3.33 / 3.33 / 3.33: the single leftover goes to the lowest index
    assert_eq!(quota_counts(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
    assert_eq!(quota_counts(&[0.25, 0.75], 0), vec![0, 0]);
}

#[test]
fn every_topic_has_a_domain() {
    for t in humaine_core::persona::default_topics() {
        assert!(Domain::for_topic(&t).is_some(), "{t}");
    }
    assert_eq!(Domain::for_topic("Knitting"), None);
}

#[test]
fn mock_replies_are_deterministic_and_parameter_driven() {
    let brief = PromptParameters::new(1, DetailLevel::Concise, 1, Style::Conversational).unwrap();
    let full = PromptParameters::new(5, DetailLevel::Comprehensive, 4, Style::Professional).unwrap();
    let a = mock_complete(&brief, "Personal Finance", 1, 3).unwrap();
    assert_eq!(a, mock_complete(&brief, "Personal Finance", 1, 3).unwrap());
    let b = mock_complete(&full, "Personal Finance", 1, 3).unwrap();
    assert!(b.split_whitespace().count() > a.split_whitespace().count());
}

#[test]
fn topic_entropy_window() {
    assert_eq!(dialogue_diversity(&[], 10, 10).unwrap(), 0.0);
    assert_eq!(dialogue_diversity(&["a", "a", "a"], 10, 10).unwrap(), 0.0);
    let two = dialogue_diversity(&["a", "b"], 10, 2).unwrap();
    assert!((two - 1.0).abs() < 1e-12);
    assert!(dialogue_diversity(&["a"], 0, 2).is_err());
}

proptest! {
    #[test]
    fn quotas_always_sum_to_n(raw in prop::collection::vec(0.01f64..1.0, 1..8), n in 0usize..500) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let counts = quota_counts(&probs, n);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        for (c, p) in counts.iter().zip(&probs) {
            prop_assert!((*c as f64 - p * n as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn diversity_stays_in_unit_interval(n in 2usize..30, seed in any::<u64>()) {
        let d = diversity_index(&generate_personas(n, seed).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }
}

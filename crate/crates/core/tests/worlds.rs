use prefsim::annotate::{annotate_dataset, build_pairs, AnnotatorSpec, PairingKind};
use prefsim::math::std_normal_cdf;
use prefsim::metrics::{order_consistency, GoldenScorer, Reference};
use prefsim::rng::RngState;
use prefsim::synth::{gen_world, true_utility, Split, WorldConfig, WorldMode};

/// Kolmogorov-Smirnov statistic of `xs` against `N(mu, sigma²)`.
fn ks_normal(xs: &mut [f64], mu: f64, sigma: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal_cdf((x - mu) / sigma);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn utility_channel_is_gaussian_per_prompt() {
    let cfg = WorldConfig {
        mode: WorldMode::UtilityChannel,
        dim: 8,
        n_train_prompts: 3,
        n_test_prompts: 1,
        k_per_prompt: 10_000,
        n_test_candidates: 2,
        ..WorldConfig::default()
    };
    let w = gen_world(&cfg, &mut RngState::new(17).rng()).unwrap();
    // 1% critical value of the one-sample KS statistic.
    let crit = 1.628 / (10_000f64).sqrt();
    for g in w.groups(Split::Train) {
        let mut u: Vec<f64> = g.items.iter().map(|i| i.golden_utility).collect();
        let d = ks_normal(&mut u, g.prompt.mu, g.prompt.sigma);
        assert!(d < crit, "prompt {}: KS {d} >= {crit}", g.prompt.prompt_id);
    }
    assert!(w.clamped_draws * 100 <= w.n_items());
}

#[test]
fn stored_utility_is_the_golden_function() {
    for mode in [WorldMode::UtilityChannel, WorldMode::SmoothRandom] {
        let cfg = WorldConfig {
            mode,
            n_train_prompts: 20,
            n_test_prompts: 3,
            n_test_candidates: 16,
            ..WorldConfig::default()
        };
        let w = gen_world(&cfg, &mut RngState::new(5).rng()).unwrap();
        for split in [Split::Train, Split::Test] {
            for g in w.groups(split) {
                for it in &g.items {
                    let u = true_utility(&w.reward_spec, it.embedding().unwrap()).unwrap();
                    assert!(
                        (u - it.golden_utility).abs() < 1e-9,
                        "{} vs {}",
                        u,
                        it.golden_utility
                    );
                }
            }
        }
    }
}

#[test]
fn golden_scorer_agrees_with_perfect_annotations() {
    let cfg = WorldConfig {
        n_train_prompts: 50,
        n_test_prompts: 2,
        n_test_candidates: 8,
        ..WorldConfig::default()
    };
    let w = gen_world(&cfg, &mut RngState::new(8).rng()).unwrap();
    let pairs = build_pairs(
        &w,
        PairingKind::CrossPromptRandom,
        2000,
        &mut RngState::new(9).rng(),
    )
    .unwrap();
    let data = annotate_dataset(
        &w,
        &pairs,
        &AnnotatorSpec::perfect(),
        &mut RngState::new(10).rng(),
    )
    .unwrap();
    assert_eq!(data.accuracy, 1.0);
    let oc = order_consistency(
        &GoldenScorer(&w.reward_spec),
        &w,
        &data.records,
        Reference::Annotated,
    )
    .unwrap();
    assert!((oc.value - 1.0).abs() < 1e-12, "{}", oc.value);
}

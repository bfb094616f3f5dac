use prefsim::btarena::{fit_arena, simulate_round_robin, ArenaFitOptions};
use prefsim::rng::RngState;
use rand::Rng;

fn truth(seed: u64) -> Vec<f64> {
    let mut rng = RngState::new(seed).derive("truth").rng();
    let mut s: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
    let s0 = s[0];
    s.iter_mut().for_each(|x| *x -= s0);
    s
}

fn max_error(seed: u64, games: usize) -> f64 {
    let t = truth(seed);
    let comps = simulate_round_robin(&t, games, &mut RngState::new(seed).derive("games").rng());
    let fit = fit_arena(&comps, t.len(), &ArenaFitOptions::default()).unwrap();
    assert!(fit.converged, "seed {seed}: gradient {:e}", fit.grad_norm);
    assert_eq!(fit.scores[0], 0.0);
    fit.scores
        .iter()
        .zip(&t)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

// 99th percentile of the max-abs error over 400 pilot replicates
// (seeds 1_000_000..1_000_400), K = 10, 1000 games per pair.
const PILOT_P99: f64 = 0.1301;

#[test]
fn recovers_scores_within_pilot_bound() {
    for seed in [1, 2, 3] {
        let e = max_error(seed, 1000);
        assert!(e < PILOT_P99, "seed {seed}: {e}");
    }
}

#[test]
fn error_shrinks_with_more_games() {
    let median = |games| {
        let mut v: Vec<f64> = (0..15).map(|s| max_error(100 + s, games)).collect();
        v.sort_by(f64::total_cmp);
        v[7]
    };
    let (a, b, c) = (median(10), median(100), median(1000));
    assert!(a > b && b > c, "{a} {b} {c}");
}

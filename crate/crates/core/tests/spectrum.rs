use cogrowth_core::freegroup::ReducedWord;
use cogrowth_core::params::{lambda_along_gamma, Weights};
use cogrowth_core::spectrum::{
    first_passage, first_passage_threshold, lambda0_quotient, mc_return_rate, rho_free, rho_gamma, tau_star,
    DEFAULT_CELL_CAP,
};
use cogrowth_core::subgroups::{fold, CoreGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.iter().map(|x| 0.5 * x / t).collect()
    })
}

fn core(gens: &[&str]) -> CoreGraph {
    let words: Vec<_> = gens.iter().map(|g| ReducedWord::parse(2, g).unwrap()).collect();
    fold(2, &words).unwrap()
}

#[test]
fn three_methods_agree_on_the_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..50 {
        let n = 2 + k % 3;
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p = Weights::new(raw.iter().map(|x| 0.5 * x / total).collect()).unwrap();
        let a = rho_free(&p).unwrap().value;
        let b = 1.0 - lambda_along_gamma(&p, tau_star(&p).unwrap()).0;
        let c = first_passage_threshold(&p, 1e-11).unwrap();
        assert!((a - b).abs() < 1e-8 && (a - c).abs() < 1e-8, "{:?}: {a} {b} {c}", p.values());
    }
}

#[test]
fn hitting_probabilities_are_symmetric_and_transient() {
    for n in 2..=4 {
        let u = first_passage(&Weights::uniform(n).unwrap(), 1.0).unwrap();
        assert!(u.values.iter().all(|x| (x - u.values[0]).abs() < 1e-14 && *x < 1.0));
        // 1/(2n−1) for the simple walk.
        assert!((u.values[0] - 1.0 / (2 * n - 1) as f64).abs() < 1e-12);
    }
}

#[test]
fn truncation_estimates_are_nonincreasing() {
    let p = Weights::new(vec![0.32, 0.18]).unwrap();
    for gens in [&[][..], &["a"], &["aa", "bb"], &["a", "baB"], &["abAB"]] {
        let est = lambda0_quotient(&core(gens), &[2, 4, 6, 8, 10, 12], &p, 9, DEFAULT_CELL_CAP).unwrap();
        assert_eq!(est.meta.monotone, Some(true), "{gens:?}: {:?}", est.meta.per_depth);
    }
}

#[test]
fn lifting_inequality() {
    // {1} ⊂ ⟨a²⟩ ⊂ ⟨a⟩ ⊂ ⟨a, b²⟩ ⊂ F_2: covers have larger λ₀.
    let chain = [&[][..], &["aa"], &["a"], &["a", "bb"], &["a", "b"]];
    for p in [Weights::uniform(2).unwrap(), Weights::new(vec![0.35, 0.15]).unwrap()] {
        for depth in [4, 8, 12] {
            let vals: Vec<f64> = chain
                .iter()
                .map(|g| lambda0_quotient(&core(g), &[depth], &p, 1, DEFAULT_CELL_CAP).unwrap().value)
                .collect();
            for w in vals.windows(2) {
                assert!(w[0] >= w[1] - 1e-6, "depth {depth}: {vals:?}");
            }
        }
    }
}

#[test]
fn lambda0_matches_one_minus_rho() {
    let p = Weights::uniform(2).unwrap();
    let est = lambda0_quotient(&core(&[]), &[10, 20, 30], &p, 2, DEFAULT_CELL_CAP).unwrap();
    let rho = rho_free(&p).unwrap().value;
    assert!(est.value >= 1.0 - rho && est.value - (1.0 - rho) < 1e-2);
    let x = est.meta.extrapolated.unwrap();
    assert!((x - (1.0 - rho)).abs() < est.value - (1.0 - rho));
}

#[test]
fn monte_carlo_ignores_thread_count() {
    let p = Weights::uniform(2).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_return_rate(&core(&["a"]), 10, &p, 20, 300_000, 99).unwrap())
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn first_passage_decreases_in_t(p in simplex(3), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let p = Weights::new(p).unwrap();
        let rho = rho_free(&p).unwrap().value;
        let (lo, hi) = (rho + (1.0 - rho) * t1.min(t2), rho + (1.0 - rho) * t1.max(t2) + 1e-3);
        let a = first_passage(&p, lo).unwrap();
        let b = first_passage(&p, hi).unwrap();
        prop_assert!(a.residual < 1e-12 && b.residual < 1e-12);
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(x > y && *y > 0.0 && *x <= 1.0);
        }
    }

    #[test]
    fn gamma_maximum_is_the_minimum_of_the_objective(p in simplex(4)) {
        let p = Weights::new(p).unwrap();
        prop_assert!((rho_free(&p).unwrap().value - rho_gamma(&p).unwrap().value).abs() < 1e-10);
    }
}

use proptest::prelude::*;

use corrspec::budget::Budget;
use corrspec::ensembles::{EnsembleSpec, VDist};
use corrspec::fk::{fk_syllabify, Word};
use corrspec::fluctuations::{sample_spiked, von_mises_decompose, weyl_check};
use corrspec::harness::ExperimentConfig;
use corrspec::matrix::SymMatrix;
use corrspec::patterns::{exchangeable_sum, naive_sum};
use corrspec::pool::Workers;
use corrspec::rng::RngStream;
use corrspec::spectral::{eigen_sym, lanczos_largest};
use corrspec::wick::{exact_trace_moment, MomentMethod};

fn word_strategy(max_letter: u32, max_len: usize) -> impl Strategy<Value = Word> {
    prop::collection::vec(1..=max_letter, 1..=max_len).prop_map(|v| Word::new(v).unwrap())
}

fn sym_strategy(max_n: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| {
            SymMatrix::from_upper_fn(n, |i, j| v[i * n + j])
        })
    })
}

fn spec_strategy() -> impl Strategy<Value = EnsembleSpec> {
    prop_oneof![
        (1usize..5).prop_map(|n| EnsembleSpec::IidGaussian { n }),
        (1usize..5, 0.0f64..2.0).prop_map(|(n, epsilon)| EnsembleSpec::TestModel {
            n,
            epsilon,
            v_dist: VDist::Gaussian,
        }),
        (2usize..5, 0.1f64..1.5, 0.5f64..1.0).prop_map(|(n, epsilon, g)| EnsembleSpec::ThreeParam {
            n,
            epsilon,
            gamma: g * (1.0 + epsilon),
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn syllabification_commutes_with_relabeling(w in word_strategy(5, 10), shift in 1u32..7) {
        // any injective relabeling, here a reversal followed by a shift
        let f = |x: u32| 6 - x + shift;
        let a = fk_syllabify(&w.relabel(f));
        let b = fk_syllabify(&w);
        let relabeled: Vec<Word> = b.words.iter().map(|x| x.relabel(f)).collect();
        prop_assert_eq!(a.validate().is_ok(), b.validate().is_ok());
        prop_assert_eq!(a.words, relabeled);
    }

    #[test]
    fn syllabification_concatenates_to_the_word(w in word_strategy(6, 12)) {
        let s = fk_syllabify(&w);
        let joined: Vec<u32> = s.words.iter().flat_map(|x| x.letters().to_vec()).collect();
        prop_assert_eq!(joined, w.letters().to_vec());
        prop_assert!(s.validate().is_ok(), "{:?}", s.validate());
    }

    #[test]
    fn trace_and_frobenius_identities(m in sym_strategy(9)) {
        let s = eigen_sym(&m, false).unwrap();
        let n = m.n();
        let trace: f64 = (0..n).map(|i| m.get(i, i)).sum();
        let frob: f64 = m.as_slice().iter().map(|x| x * x).sum();
        let tol = 1e-9 * (1.0 + frob);
        prop_assert!((s.eigenvalues.iter().sum::<f64>() - trace).abs() <= tol);
        prop_assert!((s.eigenvalues.iter().map(|x| x * x).sum::<f64>() - frob).abs() <= tol);
        prop_assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((lanczos_largest(&m).unwrap() - s.largest()).abs() <= 1e-8 * (1.0 + frob.sqrt()));
    }

    #[test]
    fn weyl_bound_for_rank_one_spike(m in sym_strategy(10), lambda in 0.0f64..20.0) {
        let w = weyl_check(&m, lambda).unwrap();
        prop_assert!(w.holds, "{:?}", w);
    }

    #[test]
    fn von_mises_identity_on_spiked_draws(seed in any::<u64>(), n in 5usize..40, lambda in 3.0f64..30.0) {
        let model = EnsembleSpec::TestModel { n, epsilon: 0.5, v_dist: VDist::Rademacher }.build().unwrap();
        let y = sample_spiked(model.as_ref(), lambda, &mut RngStream::from_seed(seed));
        let d = von_mises_decompose(&y, lambda).unwrap();
        prop_assert!(d.identity_residual <= 1e-8 * d.lambda1.abs(), "{}", d.identity_residual);
        prop_assert!(d.pythagoras_residual <= 1e-8 * (1.0 + d.pythagoras_lhs.abs()));
    }

    #[test]
    fn pattern_reduction_matches_naive(n in 1usize..6, weights in prop::collection::vec(0.1f64..2.0, 10)) {
        // depends on labels only through equalities and hits of the fixed label
        let f = |t: &[usize]| {
            let mut v = 1.0;
            let mut c = 0;
            for a in 0..t.len() {
                for b in a + 1..t.len() {
                    if t[a] == t[b] {
                        v *= weights[c % weights.len()];
                    }
                    c += 1;
                }
            }
            v
        };
        let a = naive_sum(n, &[0], 3, f);
        let b = exchangeable_sum(n, &[0], 3, f);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn exact_moment_routes_agree(spec in spec_strategy(), k in 1usize..4) {
        let model = spec.build().unwrap();
        let b = Budget::new(1e9);
        let naive = exact_trace_moment(model.as_ref(), 2 * k, MomentMethod::Naive, &b).unwrap().value;
        let reduced = exact_trace_moment(model.as_ref(), 2 * k, MomentMethod::Reduced, &b).unwrap().value;
        prop_assert!((naive - reduced).abs() <= 1e-10 * naive.abs(), "{} vs {}", naive, reduced);
    }

    #[test]
    fn config_round_trip(spec in spec_strategy(), reps in 1usize..1000, seed in any::<u64>(), w in 0usize..5) {
        let cfg = ExperimentConfig {
            experiment: "esd".into(),
            model: spec,
            spike: None,
            reps,
            master_seed: seed,
            workers: if w == 0 { Workers::Auto } else { Workers::Fixed(w) },
            output_dir: "out/x".into(),
            params: serde_json::Map::new(),
        };
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}

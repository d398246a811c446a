use bondcause_core::rca::{
    bernoulli_kl, categorical_kl, gaussian_kl, rank_descending, ranking_accuracy, wasserstein2, DiagGaussian,
};
use bondcause_core::{Rng, ScmSpec, SplitSpec, Tensor, TrajectoryCorpus};
use bondcause_core::{data, format, synth};
use proptest::prelude::*;

fn corpus_strategy() -> impl Strategy<Value = TrajectoryCorpus> {
    (1usize..4, 1usize..4, 2usize..6, 1usize..4).prop_flat_map(|(s, n, t, d)| {
        prop::collection::vec(prop::collection::vec(-50.0f64..50.0, n * t * d), s).prop_map(move |samples| {
            let samples = samples
                .into_iter()
                .map(|v| Tensor::new(vec![n, t, d], v).unwrap())
                .collect();
            TrajectoryCorpus::from_samples(samples).unwrap()
        })
    })
}

fn probs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn gaussian(d: usize) -> impl Strategy<Value = DiagGaussian> {
    (prop::collection::vec(-5.0f64..5.0, d), prop::collection::vec(0.05f64..5.0, d))
        .prop_map(|(m, v)| DiagGaussian::new(m, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_format_round_trips(corpus in corpus_strategy()) {
        let text = format::to_string(&corpus, None).unwrap();
        let (back, labels) = format::from_str(&text).unwrap();
        prop_assert!(labels.is_none());
        prop_assert_eq!(back, corpus);
    }

    #[test]
    fn normalization_has_unit_max_abs(corpus in corpus_strategy()) {
        prop_assume!(corpus.samples.iter().any(|s| s.max_abs() > 0.0));
        let n = data::normalize(&corpus).unwrap();
        let max = n.samples.iter().fold(0.0f64, |m, s| m.max(s.max_abs()));
        prop_assert!((max - 1.0).abs() < 1e-12);
        let back = data::denormalize(&n);
        for (a, b) in back.samples.iter().zip(&corpus.samples) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn windows_tile_the_trajectory(n in 1usize..4, total in 4usize..30, d in 1usize..3, steps in 2usize..5) {
        prop_assume!(steps <= total);
        let long = Tensor::new(vec![n, total, d], (0..n * total * d).map(|i| i as f64).collect()).unwrap();
        let windows = data::window(&long, steps).unwrap();
        prop_assert_eq!(windows.len(), total / steps);
        for (w, win) in windows.iter().enumerate() {
            for i in 0..n {
                for t in 0..steps {
                    for k in 0..d {
                        let got = win.data()[(i * steps + t) * d + k];
                        let want = long.data()[(i * total + w * steps + t) * d + k];
                        prop_assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn split_is_a_partition(count in 0usize..200, seed in any::<u64>(), hash in "[0-9a-f]{16}") {
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let split = spec.split(count, &hash).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..count).collect::<Vec<_>>());
        prop_assert_eq!(spec.split(count, &hash).unwrap(), split);
    }

    #[test]
    fn divergences_are_nonnegative(p in probs(3), q in probs(3), a in gaussian(3), b in gaussian(3)) {
        prop_assert!(categorical_kl(&p, &q).unwrap() >= -1e-15);
        prop_assert!(categorical_kl(&p, &p).unwrap().abs() < 1e-15);
        for (x, y) in p.iter().zip(&q) {
            prop_assert!(bernoulli_kl(*x, *y, 1e-8) >= -1e-15);
        }
        prop_assert!(gaussian_kl(&a, &b).unwrap() >= -1e-12);
        prop_assert!(gaussian_kl(&a, &a).unwrap().abs() < 1e-12);
        let w = wasserstein2(&a, &b).unwrap();
        prop_assert!((w - wasserstein2(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(w >= 0.0);
    }

    #[test]
    fn ranking_is_a_descending_permutation(scores in prop::collection::vec(-10.0f64..10.0, 1..20), k in 1usize..20) {
        let ranking = rank_descending(&scores);
        let mut sorted = ranking.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..scores.len()).collect::<Vec<_>>());
        prop_assert!(ranking.windows(2).all(|w| scores[w[0]] >= scores[w[1]]));
        prop_assume!(k <= scores.len());
        prop_assert_eq!(ranking_accuracy(&ranking, &ranking, k).unwrap(), 1.0);
        let reversed: Vec<usize> = ranking.iter().rev().copied().collect();
        let acc = ranking_accuracy(&ranking, &reversed, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_is_seed_deterministic(seed in any::<u64>(), nodes in 2usize..6) {
        let mut rng = Rng::new(seed);
        let mut spec = ScmSpec::random(nodes, 2, &[], 2, 0.3, &mut rng);
        spec.trajectories = 2;
        spec.burn_in = 10;
        let (a, _) = synth::simulate(&spec, 20, seed).unwrap();
        let (b, _) = synth::simulate(&spec, 20, seed).unwrap();
        prop_assert_eq!(a.samples, b.samples);
    }
}

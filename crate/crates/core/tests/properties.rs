use lifelong_rep::datagen::{make_task_stream, seeded_rng, InputLaw, NoiseSpec};
use lifelong_rep::eluder::{
    is_eps_independent, longest_eluding_sequence, FiniteClassPair, SearchMode,
};
use lifelong_rep::erm::{multi_task_erm, OptimizerConfig, SolverKind};
use lifelong_rep::linalg::{
    constrained_subspace_distance, random_semi_orthogonal, ridge_identity_sides,
};
use lifelong_rep::{LossKind, Mat};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_mat(seed: u64, rows: usize, cols: usize) -> Mat<f64> {
    let mut rng = seeded_rng(seed, 99);
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ridge_identity_holds(d in 1usize..=20, n in 0usize..=20, log_lambda in -2.0f64..2.0, seed in any::<u64>()) {
        let x = gaussian_mat(seed, d, 1).column(0);
        let u = gaussian_mat(seed.wrapping_add(1), d, n);
        let (lhs, rhs) = ridge_identity_sides(&x, &u, 10f64.powf(log_lambda)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()), "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn constrained_distance_is_bounded_and_optimal(
        d in 2usize..=12,
        hi in 0.1f64..=1.0,
        lo_frac in 0.0f64..=1.0,
        r_frac in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        // k = 1 so a dense scan over w ∈ ±[lo, hi] is an exact-enough oracle
        let b = random_semi_orthogonal::<f64>(d, 1, seed).unwrap();
        let lo = lo_frac * hi;
        let dir = gaussian_mat(seed.wrapping_add(7), d, 1).column(0);
        let r = lo + r_frac * (hi - lo);
        let u: Vec<f64> = dir.iter().map(|v| v * r / norm(&dir)).collect();
        let got = constrained_subspace_distance(&b, &u, lo, hi).unwrap();
        prop_assert!(got.min_dist <= got.bound + 1e-12);
        let scan = (0..=20_000)
            .flat_map(|i| {
                let w = lo + (hi - lo) * i as f64 / 20_000.0;
                [w, -w]
            })
            .map(|w| {
                let bw = b.lift(&[w]);
                norm(&bw.iter().zip(&u).map(|(a, c)| a - c).collect::<Vec<_>>())
            })
            .fold(f64::INFINITY, f64::min);
        prop_assert!((scan - got.min_dist).abs() <= 1e-3 && scan >= got.min_dist - 1e-12);
    }

    #[test]
    fn tape_splits_match_one_draw(a in 1usize..50, b in 1usize..50, seed in any::<u64>()) {
        let build = || make_task_stream::<f64>(5, 2, 3, 1.0, NoiseSpec::uniform(0.05), InputLaw::UnitBallUniform, LossKind::ScaledSquared, seed).unwrap();
        let mut split = build();
        let first = split.draw(2, a).unwrap();
        let second = split.draw(2, b).unwrap();
        let whole = build().draw(2, a + b).unwrap();
        prop_assert_eq!(first.concat(&second).unwrap(), whole);
        prop_assert_eq!(split.cursors(), vec![0, (a + b) as u64, 0]);
    }

    #[test]
    fn finite_eluder_length_is_at_most_twice_the_smaller_class(
        reps in 1usize..=4,
        heads in 1usize..=4,
        eps in 0.01f64..0.3,
        seed in any::<u64>(),
    ) {
        let rep_mats: Vec<Mat<f64>> = (0..reps)
            .map(|i| random_semi_orthogonal::<f64>(3, 2, seed.wrapping_add(i as u64)).unwrap().into_matrix())
            .collect();
        let mut rng = seeded_rng(seed, 5);
        let head_vecs: Vec<Vec<f64>> = (0..heads)
            .map(|_| (0..2).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect();
        let pair = FiniteClassPair::scaled_squared(&rep_mats, &head_vecs, &Mat::identity(3)).unwrap();
        let cert = longest_eluding_sequence(&pair, eps, SearchMode::Exhaustive).unwrap();
        prop_assert!(cert.len() <= 2 * reps.min(heads));
        prop_assert!(cert.validate(&pair));
    }
}

/// Independence by enumerating every witness tuple `(h′, f′_1, …, f′_{n−1})`.
fn brute_force_independent(
    pair: &FiniteClassPair,
    center: usize,
    f: usize,
    preds: &[usize],
    eps: f64,
) -> bool {
    let nh = pair.num_heads();
    (0..pair.num_reps()).any(|hp| {
        let escapes = (0..nh).all(|fp| pair.excess(center, f, hp, fp) > eps / 2.0);
        escapes
            && (0..nh.pow(preds.len() as u32)).any(|code| {
                let mut c = code;
                let total: f64 = preds
                    .iter()
                    .map(|&g| {
                        let fp = c % nh;
                        c /= nh;
                        pair.excess(center, g, hp, fp)
                    })
                    .sum();
                total <= eps
            })
    })
}

#[test]
fn two_representations_three_heads_in_the_plane() {
    let rot = |t: f64| Mat::from_columns(&[vec![t.cos(), t.sin()]]).unwrap();
    let reps = [rot(0.0), rot(0.4)];
    let heads = [vec![0.3], vec![-0.5], vec![0.8]];
    let pair = FiniteClassPair::scaled_squared(&reps, &heads, &Mat::identity(2)).unwrap();
    let eps = 0.1;
    let mut checked = 0;
    for center in 0..2 {
        for f in 0..3 {
            for n in 0..=3u32 {
                for code in 0..3usize.pow(n) {
                    let preds: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i) % 3).collect();
                    let fast = is_eps_independent(&pair, center, f, &preds, eps).unwrap();
                    assert_eq!(
                        fast.is_some(),
                        brute_force_independent(&pair, center, f, &preds, eps),
                        "{center} {f} {preds:?}"
                    );
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 2 * 3 * (1 + 3 + 9 + 27));
    let cert = longest_eluding_sequence(&pair, eps, SearchMode::Exhaustive).unwrap();
    assert!(cert.len() <= 4 && cert.validate(&pair));
}

#[test]
fn singleton_representation_class_never_eludes() {
    let reps = [random_semi_orthogonal::<f64>(4, 2, 1)
        .unwrap()
        .into_matrix()];
    let heads: Vec<Vec<f64>> = (0..4).map(|i| vec![0.1 * i as f64, -0.2]).collect();
    let pair = FiniteClassPair::scaled_squared(&reps, &heads, &Mat::identity(4)).unwrap();
    for eps in [0.001, 0.01, 0.1] {
        let cert = longest_eluding_sequence(&pair, eps, SearchMode::Exhaustive).unwrap();
        assert!(cert.len() <= 2);
        assert!(cert.validate(&pair));
    }
}

#[test]
fn scale_above_every_excess_admits_no_chain() {
    let reps: Vec<Mat<f64>> = (0..3)
        .map(|i| {
            random_semi_orthogonal::<f64>(3, 2, i)
                .unwrap()
                .into_matrix()
        })
        .collect();
    let heads: Vec<Vec<f64>> = vec![vec![0.5, 0.0], vec![0.0, -0.5], vec![0.3, 0.3]];
    let pair = FiniteClassPair::scaled_squared(&reps, &heads, &Mat::identity(3)).unwrap();
    let max = (0..3)
        .flat_map(|h| {
            (0..3)
                .flat_map(move |f| (0..3).flat_map(move |hp| (0..3).map(move |fp| (h, f, hp, fp))))
        })
        .map(|(h, f, hp, fp)| pair.excess(h, f, hp, fp))
        .fold(0.0, f64::max);
    let cert = longest_eluding_sequence(&pair, 2.0 * max, SearchMode::Exhaustive).unwrap();
    assert!(cert.is_empty());
}

#[test]
fn erm_output_is_semi_orthogonal_for_both_solvers() {
    let mut stream = make_task_stream::<f64>(
        6,
        2,
        3,
        0.4,
        NoiseSpec::uniform(0.01),
        InputLaw::UnitBallUniform,
        LossKind::ScaledSquared,
        4,
    )
    .unwrap();
    let data: Vec<_> = (1..=3).map(|t| stream.draw(t, 300).unwrap()).collect();
    let refs: Vec<_> = data.iter().collect();
    for solver in [SolverKind::FirstOrder, SolverKind::Newton] {
        let cfg = OptimizerConfig {
            solver,
            max_epochs: 2000,
            learning_rate: 0.01,
            ..OptimizerConfig::default()
        };
        let sol = multi_task_erm(&refs, 6, 2, LossKind::ScaledSquared, &cfg, 1).unwrap();
        assert!(
            sol.representation.orthonormality_defect() < 1e-10,
            "{solver:?}"
        );
        assert!(sol.heads.iter().all(|h| norm(h.weights()) <= 0.5 + 1e-12));
    }
}

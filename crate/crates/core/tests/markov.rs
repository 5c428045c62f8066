use infogeo::chentsov::{information_loss, monotonicity_gap};
use infogeo::lattice::{Lattice, ParamBox};
use infogeo::markov::{
    check_sufficiency, compose, congruent_embedding, kernel_pushforward, left_inverse_check, random_positive_kernel,
    MarkovKernel, Statistic,
};
use infogeo::models::{atom_model, categorical, exponential_family};
use infogeo::spaces::{Measure, SampleSpace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite(n: usize) -> SampleSpace {
    SampleSpace::finite(n).unwrap()
}

#[test]
fn lumping_equal_statistics_is_sufficient() {
    // atoms 0 and 1 share the statistic, so merging them loses nothing
    let m = exponential_family(vec![1.0, 3.0, 2.0], vec![vec![1.0, 1.0, -1.0]]).unwrap();
    let kappa = Statistic::from_classes(finite(3), &[vec![0, 1], vec![2]]).unwrap();
    let lattice = Lattice::uniform(&[(-2.0, 2.0)], 7).unwrap();
    assert!(check_sufficiency(&m, &kappa, &lattice).unwrap().is_sufficient());
    let gap = monotonicity_gap(&m, &kappa, &[0.4], &[1.0]).unwrap();
    assert!(gap.abs() < 1e-10);

    let split = Statistic::from_classes(finite(3), &[vec![0, 2], vec![1]]).unwrap();
    assert!(!check_sufficiency(&m, &split, &lattice).unwrap().is_sufficient());
}

#[test]
fn pushforward_through_a_matrix_kernel() {
    let pi = MarkovKernel::from_matrix(vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2]]).unwrap();
    let nu = Measure::from_weights(finite(2), vec![0.25, 0.75]).unwrap();
    let out = kernel_pushforward(&pi, &nu).unwrap();
    let expect = [0.25 * 0.2 + 0.75 * 0.6, 0.25 * 0.3 + 0.75 * 0.2, 0.25 * 0.5 + 0.75 * 0.2];
    for (a, b) in out.weights().unwrap().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn congruent_embedding_has_left_inverse() {
    let kappa = Statistic::from_classes(finite(4), &[vec![0, 3], vec![1, 2]]).unwrap();
    let pi = congruent_embedding(&kappa, &[vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
    assert!(left_inverse_check(&pi, &kappa));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let generic = random_positive_kernel(2, 4, &mut rng).unwrap();
    assert!(!left_inverse_check(&generic, &kappa));
}

#[test]
fn information_loss_brute_force() {
    let m = atom_model(
        "three-atoms",
        ParamBox::interval(0.0, 0.5).unwrap(),
        Measure::base(finite(3)),
        vec!["x1".parse().unwrap(), "2 * x1^2".parse().unwrap(), "1 - x1 - 2 * x1^2".parse().unwrap()],
        true,
    )
    .unwrap();
    let kappa = Statistic::from_classes(finite(3), &[vec![0, 1], vec![2]]).unwrap();
    let x: f64 = 0.3;
    let (a, b) = (x, 2.0 * x * x);
    let (sa, sb) = (1.0 / x, 2.0 / x);
    let mean = (a * sa + b * sb) / (a + b);
    let brute = a * (sa - mean).powi(2) + b * (sb - mean).powi(2);
    let loss = information_loss(&m, &kappa, &[x], &[1.0]).unwrap();
    assert!((loss.loss - brute).abs() < 1e-8, "{} vs {brute}", loss.loss);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lumping_never_increases_fisher(
        stats in prop::collection::vec(-2.0f64..2.0, 5),
        weights in prop::collection::vec(0.2f64..3.0, 5),
        theta in -1.5f64..1.5,
        v in -2.0f64..2.0,
        cut in 1usize..5,
    ) {
        let m = exponential_family(weights, vec![stats]).unwrap();
        let classes: Vec<usize> = (0..5).map(|i| usize::from(i >= cut)).collect();
        let kappa = Statistic::partition(finite(5), classes).unwrap();
        let gap = monotonicity_gap(&m, &kappa, &[theta], &[v]).unwrap();
        prop_assert!(gap >= -1e-9, "gap {gap}");
        let loss = information_loss(&m, &kappa, &[theta], &[v]).unwrap();
        prop_assert!((loss.loss - gap).abs() <= 1e-8 * loss.fisher.max(1.0), "loss {} gap {gap}", loss.loss);
    }

    #[test]
    fn composed_kernels_are_stochastic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_positive_kernel(3, 4, &mut rng).unwrap();
        let b = random_positive_kernel(4, 2, &mut rng).unwrap();
        let ab = compose(&a, &b).unwrap();
        let nu = Measure::from_weights(finite(3), vec![0.2, 0.5, 0.3]).unwrap();
        let direct = kernel_pushforward(&ab, &nu).unwrap();
        let staged = kernel_pushforward(&b, &kernel_pushforward(&a, &nu).unwrap()).unwrap();
        let (d, s) = (direct.weights().unwrap(), staged.weights().unwrap());
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in d.iter().zip(s) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_fisher_drops_under_any_lumping(p1 in 0.05f64..0.3, p2 in 0.05f64..0.3, v in prop::array::uniform2(-1.0f64..1.0)) {
        let m = categorical(3).unwrap();
        let kappa = Statistic::from_classes(finite(3), &[vec![0], vec![1, 2]]).unwrap();
        let gap = monotonicity_gap(&m, &kappa, &[p1, p2], &v).unwrap();
        prop_assert!(gap >= -1e-9);
    }
}

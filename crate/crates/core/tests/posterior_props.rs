mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use transduct_core::gp::{CapacityMode, IgMethod, IgQuery, PosteriorState};
use transduct_core::kernel::{KernelMatrix, NoiseModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conditioning_never_raises_variance(
        state in common::instance(10),
        picks in prop::collection::vec((0usize..10, -2.0..2.0f64), 1..8),
    ) {
        let mut state = state;
        for (i, y) in picks {
            let before = state.covariance().diagonal();
            common::observe(&mut state, i, y);
            let after = state.covariance().diagonal();
            for j in 0..10 {
                prop_assert!(after[j] <= before[j] + 1e-12, "point {j}: {} -> {}", before[j], after[j]);
            }
        }
    }

    #[test]
    fn observation_order_does_not_matter(
        state in common::instance(8),
        picks in prop::collection::vec((0usize..8, -2.0..2.0f64), 2..7),
    ) {
        let mut forward = state.clone();
        let mut backward = state;
        for &(i, y) in &picks {
            common::observe(&mut forward, i, y);
        }
        for &(i, y) in picks.iter().rev() {
            common::observe(&mut backward, i, y);
        }
        prop_assert!((forward.covariance() - backward.covariance()).amax() <= 1e-8);
        prop_assert!((forward.mean() - backward.mean()).amax() <= 1e-8);
    }

    #[test]
    fn information_gain_is_nonnegative(state in common::instance(8), x in 0usize..8, mask in 1u8..=255) {
        let targets: Vec<usize> = (0..8).filter(|i| mask >> i & 1 == 1).collect();
        for method in [IgMethod::Forward, IgMethod::Backward] {
            let ig = state.information_gain(&IgQuery::new(targets.clone(), x, method)).unwrap();
            prop_assert!(ig >= 0.0 && ig.is_finite());
        }
    }

    #[test]
    fn chain_rule_holds(state in common::instance(8), a in 0usize..8, b in 0usize..8) {
        prop_assume!(a != b);
        let targets = vec![0, 1, 2];
        let joint = state.set_information_gain(&targets, &[a, b]).unwrap();
        let first = state.information_gain(&IgQuery::new(targets.clone(), a, IgMethod::Backward)).unwrap();
        let obs = state.observation(a, 0.0).unwrap();
        let second = state
            .conditioned(obs)
            .unwrap()
            .information_gain(&IgQuery::new(targets, b, IgMethod::Backward))
            .unwrap();
        prop_assert!((joint - first - second).abs() <= 1e-8, "{joint} vs {first} + {second}");
    }

    #[test]
    fn greedy_capacity_is_near_optimal(state in common::instance(9), n in 1usize..=4) {
        let sample: Vec<usize> = (0..9).collect();
        let greedy = state.information_capacity(&sample, n, CapacityMode::Greedy, false).unwrap();
        let best = state.information_capacity(&sample, n, CapacityMode::BruteForce, false).unwrap();
        prop_assert!(greedy <= best + 1e-10);
        prop_assert!(greedy >= (1.0 - (-1.0f64).exp()) * best - 1e-10);
    }
}

#[test]
fn block_diagonal_candidate_carries_no_information() {
    let mut k = DMatrix::<f64>::zeros(5, 5);
    let a = [[1.0, 0.6, 0.3], [0.6, 1.0, 0.5], [0.3, 0.5, 1.0]];
    for i in 0..3 {
        for j in 0..3 {
            k[(i, j)] = a[i][j];
        }
    }
    k[(3, 3)] = 2.0;
    k[(4, 4)] = 1.0;
    k[(3, 4)] = 0.7;
    k[(4, 3)] = 0.7;
    let state =
        PosteriorState::prior(&KernelMatrix::from_matrix(k).unwrap(), NoiseModel::homoscedastic(0.1).unwrap())
            .unwrap();
    for x in [3, 4] {
        for method in [IgMethod::Forward, IgMethod::Backward] {
            let ig = state.information_gain(&IgQuery::new(vec![0, 1, 2], x, method)).unwrap();
            assert!(ig.abs() <= 1e-14, "candidate {x}: {ig}");
        }
    }
    assert!(state.set_information_gain(&[0, 1, 2], &[3, 4]).unwrap().abs() <= 1e-12);
}

mod common;

use proptest::prelude::*;
use transduct_core::gp::PosteriorState;
use transduct_core::kernel::{gram, KernelSpec, NoiseModel, Point};
use transduct_core::theory::{
    capacity_series, check_convergence_bound, check_gamma_bound, check_schedule,
    check_within_sample_bound, irreducible_uncertainties, itl_trajectory, markov_boundary,
    submodularity_ratio, variance_given, CheckStatus, TheoryConstants,
};

const SAMPLE: [usize; 6] = [0, 1, 2, 3, 4, 5];
const TARGETS: [usize; 8] = [0, 1, 2, 3, 4, 5, 6, 7];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn target_variance_stays_above_floor(state in common::instance(8), rounds in 1usize..12) {
        let traj = itl_trajectory(&state, &TARGETS, &SAMPLE, rounds).unwrap();
        let floor = irreducible_uncertainties(state.prior_covariance(), &SAMPLE, &TARGETS).unwrap();
        for row in &traj.target_variances {
            for (v, eta) in row.iter().zip(&floor) {
                prop_assert!(*v >= eta - 1e-9, "{v} below floor {eta}");
            }
        }
    }

    #[test]
    fn markov_boundaries_verify_directly(state in common::instance(8), x in 0usize..8, eps_frac in 0.02..0.5f64) {
        let epsilon = eps_frac * state.prior_covariance()[(x, x)];
        let b = markov_boundary(&state, &SAMPLE, x, epsilon).unwrap();
        let direct = variance_given(&state, &b.members, x).unwrap();
        prop_assert!((direct - b.achieved_variance).abs() <= 1e-9);
        prop_assert!(direct <= b.irreducible + epsilon + 1e-9);
        if let Some(cap) = b.size_bound {
            prop_assert!(b.members.len() <= cap, "{} > {cap}", b.members.len());
        }
    }

    #[test]
    fn bounds_hold_on_random_trajectories(state in common::instance(8), rounds in 1usize..=6) {
        let traj = itl_trajectory(&state, &TARGETS, &SAMPLE, rounds).unwrap();
        prop_assert_ne!(check_gamma_bound(&traj).unwrap().status, CheckStatus::Fail);
        prop_assert_ne!(check_within_sample_bound(&traj).unwrap().status, CheckStatus::Fail);
        let eps = 0.1 * state.prior_covariance().diagonal().max();
        prop_assert_ne!(check_convergence_bound(&traj, eps).unwrap().bound.status, CheckStatus::Fail);
    }

    #[test]
    fn ratio_is_at_least_one_when_targets_cover_sample(state in common::instance(7), k in 1usize..=3) {
        let r = submodularity_ratio(&state, &[0, 1, 2, 3, 4, 5, 6], &[0, 1, 2, 3, 4], k).unwrap();
        prop_assert!(r >= 1.0 - 1e-9, "ratio {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn schedule_holds_for_well_conditioned_priors(
        xs in prop::collection::vec(0.0..10.0f64, 4),
        rho2 in 0.01..1.0f64,
        rounds in 1usize..=6,
    ) {
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        prop_assume!(xs.windows(2).all(|w| w[1] - w[0] > 0.5));
        let pts: Vec<Point> = xs.iter().enumerate().map(|(i, &x)| Point::with_coords(i, vec![x])).collect();
        let k = gram(&KernelSpec::gaussian(0.5), &pts).unwrap();
        let state = PosteriorState::prior(&k, NoiseModel::homoscedastic(rho2).unwrap()).unwrap();
        let all = [0, 1, 2, 3];
        prop_assert!(TheoryConstants::from_prior(&state, &all).unwrap().lambda_min > 0.0);
        let traj = itl_trajectory(&state, &all, &all, rounds).unwrap();
        let report = check_schedule(&traj, &capacity_series(&state, &all, rounds).unwrap()).unwrap();
        prop_assert_eq!(report.rows.len(), rounds);
        prop_assert_eq!(report.status, CheckStatus::Pass);
    }
}

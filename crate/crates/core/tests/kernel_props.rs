mod common;

use nalgebra::Cholesky;
use proptest::prelude::*;
use transduct_core::kernel::{cosine_similarity, eval_kernel, gram, KernelSpec, MaternNu, Point};
use transduct_core::linalg::JITTER;

fn families() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Linear,
        KernelSpec::gaussian(0.3),
        KernelSpec::Laplace { lengthscale: 0.7 },
        KernelSpec::Matern {
            nu: MaternNu::try_from(0.5).unwrap(),
            lengthscale: 0.4,
        },
        KernelSpec::Matern {
            nu: MaternNu::try_from(1.5).unwrap(),
            lengthscale: 0.4,
        },
        KernelSpec::Matern {
            nu: MaternNu::try_from(2.5).unwrap(),
            lengthscale: 0.4,
        },
    ]
}

proptest! {
    #[test]
    fn kernels_are_exactly_symmetric(a in prop::collection::vec(-2.0..2.0f64, 3), b in prop::collection::vec(-2.0..2.0f64, 3)) {
        let (pa, pb) = (Point::with_coords(0, a), Point::with_coords(1, b));
        for spec in families() {
            prop_assert_eq!(eval_kernel(&spec, &pa, &pb).unwrap(), eval_kernel(&spec, &pb, &pa).unwrap());
        }
    }

    #[test]
    fn identity_embedding_correlation_is_cosine(a in prop::collection::vec(-1.0..1.0f64, 5), b in prop::collection::vec(-1.0..1.0f64, 5)) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let (pa, pb) = (Point::with_embedding(0, a), Point::with_embedding(1, b));
        let k = KernelSpec::embedding_identity();
        let kab = eval_kernel(&k, &pa, &pb).unwrap();
        let corr = kab / (eval_kernel(&k, &pa, &pa).unwrap() * eval_kernel(&k, &pb, &pb).unwrap()).sqrt();
        prop_assert!((corr - cosine_similarity(&pa, &pb).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn matern_half_equals_laplace_in_one_dimension(raw in common::coords(20, 1), h in 0.05..2.0f64) {
        let pts = common::points(&raw);
        let laplace = gram(&KernelSpec::Laplace { lengthscale: h }, &pts).unwrap();
        let matern = gram(&KernelSpec::Matern { nu: MaternNu::try_from(0.5).unwrap(), lengthscale: h }, &pts).unwrap();
        prop_assert!((&laplace.entries - &matern.entries).amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn jittered_gram_factorizes(n in 1usize..=512, dim in 1usize..=4, seed in 0u64..1000, family in 0usize..6) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..n)
            .map(|i| Point::with_coords(i, (0..dim).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let k = gram(&families()[family], &pts).unwrap();
        let mut m = k.entries.clone();
        let jitter = JITTER * k.max_diagonal().max(1.0);
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        prop_assert!(Cholesky::new(m).is_some());
    }
}

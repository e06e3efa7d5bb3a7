#![allow(dead_code)]

use proptest::prelude::*;
use transduct_core::gp::PosteriorState;
use transduct_core::kernel::{gram, KernelMatrix, KernelSpec, NoiseModel, Point};

pub fn coords(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..1.0f64, dim), n)
}

pub fn points(raw: &[Vec<f64>]) -> Vec<Point> {
    raw.iter()
        .enumerate()
        .map(|(i, c)| Point::with_coords(i, c.clone()))
        .collect()
}

pub fn gaussian(raw: &[Vec<f64>], lengthscale: f64) -> KernelMatrix {
    gram(&KernelSpec::gaussian(lengthscale), &points(raw)).unwrap()
}

/// Random Gaussian-kernel prior over `n` points in the unit square.
pub fn instance(n: usize) -> impl Strategy<Value = PosteriorState> {
    (coords(n, 2), 0.2..0.8f64, prop::collection::vec(0.01..1.0f64, n)).prop_map(
        |(raw, h, noise)| {
            PosteriorState::prior(&gaussian(&raw, h), NoiseModel::heteroscedastic(noise).unwrap())
                .unwrap()
        },
    )
}

pub fn homoscedastic_instance(n: usize) -> impl Strategy<Value = PosteriorState> {
    (coords(n, 2), 0.2..0.8f64, 0.01..1.0f64).prop_map(|(raw, h, rho2)| {
        PosteriorState::prior(&gaussian(&raw, h), NoiseModel::homoscedastic(rho2).unwrap()).unwrap()
    })
}

pub fn observe(state: &mut PosteriorState, index: usize, value: f64) {
    let obs = state.observation(index, value).unwrap();
    state.condition(obs).unwrap();
}

//! Random small networks and central finite differences for gradient checks.
#![allow(dead_code)]

use odim_core::genmodel::{loss_with_noise, Activation, Architecture, MlpParams, Objective, OutputMean};
use odim_core::numkernel::gauss_sample;
use odim_core::SeededRng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

pub struct Case {
    pub params: MlpParams,
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
}

pub fn random_case(seed: u64, activation: Activation, output: OutputMean) -> Case {
    let mut rng = SeededRng::new(seed);
    let arch = Architecture {
        input_dim: 1 + rng.below(6),
        latent_dim: 1 + rng.below(3),
        hidden: 1 + rng.below(4),
        activation,
        output,
    };
    let k = 1 + rng.below(5);
    let n = arch.layout().total();
    let values = (0..n).map(|_| rng.uniform_range(-0.8, 0.8)).collect();
    let params = MlpParams::from_values(arch, values).unwrap();
    let x = (0..arch.input_dim).map(|_| rng.uniform()).collect();
    let eps = gauss_sample(&mut rng, k * arch.latent_dim);
    Case { params, x, eps }
}

pub fn finite_difference(case: &Case, objective: Objective) -> Vec<f64> {
    let mut p = case.params.clone();
    (0..p.len())
        .map(|i| {
            let orig = p.values()[i];
            p.values_mut()[i] = orig + STEP;
            let up = loss_with_noise(&p, &case.x, &case.eps, objective).unwrap();
            p.values_mut()[i] = orig - STEP;
            let down = loss_with_noise(&p, &case.x, &case.eps, objective).unwrap();
            p.values_mut()[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Largest coordinate error relative to the gradient's overall magnitude
/// (coordinates far below the max-norm are compared against it).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / f.abs().max(1e-2 * scale))
        .fold(0.0, f64::max)
}

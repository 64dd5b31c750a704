//! wasm-bindgen bindings for the static page in `www/`.
//!
//! Every function returns a flat `Float64Array`; the layout is documented on
//! each export.

use wasm_bindgen::prelude::*;

use sgd_sde_lab::dynamics::sample_path;
use sgd_sde_lab::equilibrium::{
    basin_occupancy, laplace_ratio, occupancy_from_quadrature, well_basins, BoltzmannDensity, Separatrix, Temperature,
    DEFAULT_BURN_IN,
};
use sgd_sde_lab::experiments::equilibrium_suite::bowl_stats;
use sgd_sde_lab::experiments::RunOptions;
use sgd_sde_lab::landscape::{DoubleWell, ParameterVector, QuadraticBowl};
use sgd_sde_lab::noise::GradientNoiseModel;
use sgd_sde_lab::Result;

fn js(e: sgd_sde_lab::LabError) -> JsError {
    JsError::new(&e.to_string())
}

/// Four-direction bowl with coefficients 0.5, 1, 1.5, 2 under `C = H`.
///
/// Returns `[η/2S, mean loss, (η/4S)·Tr H, var_0, …, var_3]`.
#[wasm_bindgen]
pub fn stationary_spread(eta: f64, batch_size: usize, samples: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    spread(eta, batch_size, samples, seed).map_err(js)
}

fn spread(eta: f64, batch_size: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let bowl = QuadraticBowl::axis_aligned(ParameterVector::zeros(4), vec![0.5, 1.0, 1.5, 2.0])?;
    let stats = bowl_stats(&bowl, eta, batch_size, 1000, samples, 10, seed, RunOptions::default())?;
    let mut out = vec![stats.expected_variance(), stats.mean_loss, eta / (4.0 * batch_size as f64) * bowl.hessian_trace()];
    out.extend(stats.variances);
    Ok(out)
}

/// Asymmetric 1-D double well at density temperature `t`.
///
/// Returns `[quadrature p_A, Laplace p_A, relative odds error]`.
#[wasm_bindgen]
pub fn laplace_odds(t: f64) -> std::result::Result<Vec<f64>, JsError> {
    odds(t).map_err(js)
}

fn odds(t: f64) -> Result<Vec<f64>> {
    let well = DoubleWell::standard_asymmetric();
    let (a, b) = well_basins(&well)?;
    let q = occupancy_from_quadrature(&BoltzmannDensity::for_well(&well, t)?, &Separatrix::for_well(&well))?;
    let odds = laplace_ratio(&a, &b, t)?;
    Ok(vec![q.p_a, odds / (1.0 + odds), (odds - q.p_a / q.p_b).abs() / (q.p_a / q.p_b)])
}

/// Isotropic-noise SGD on the asymmetric well, started in basin A.
///
/// Returns `[SGD p_A, quadrature p_A, transitions, temperature ησ²/S]`.
#[wasm_bindgen]
pub fn well_occupancy(eta: f64, sigma2: f64, batch_size: usize, samples: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    occupancy(eta, sigma2, batch_size, samples, seed).map_err(js)
}

fn occupancy(eta: f64, sigma2: f64, batch_size: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let well = DoubleWell::standard_asymmetric();
    let temp = Temperature::new(eta, sigma2, batch_size)?;
    let noise = GradientNoiseModel::isotropic(batch_size, sigma2);
    let start = ParameterVector::new(well.minimum_a().location.clone())?;
    let path = sample_path(&well, &noise, eta, &start, 0, samples, 10, seed, None)?;
    let sep = Separatrix::for_well(&well);
    let occ = basin_occupancy(&path, &sep, DEFAULT_BURN_IN)?;
    let quad =
        occupancy_from_quadrature(&BoltzmannDensity::for_well(&well, temp.density_temperature())?, &sep)?;
    Ok(vec![occ.p_a, quad.p_a, occ.n_transitions as f64, temp.value()])
}

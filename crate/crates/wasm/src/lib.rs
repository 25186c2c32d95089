//! Browser bindings for the demo page in `www/`. Each export returns a flat
//! `Float64Array`; the plain `*_values` functions hold the logic so they can
//! be tested natively.

use oni_core::oni::{delta_attainable, delta_col, delta_row, group_oni_forward};
use oni_core::rng::{gaussian_matrix, seeded};
use oni_core::spectral::singular_values;
use oni_core::{oni_forward, DenseMatrix, OniConfig};
use wasm_bindgen::prelude::*;

/// Largest side the page may request; keeps the main thread responsive.
pub const MAX_DIM: usize = 256;
pub const MAX_ITERATIONS: usize = 50;

/// Variant order of [`convergence_values`]: basic, centered, compact, accelerated.
pub const VARIANTS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

fn proxy(rows: usize, cols: usize, mean: f64, seed: u64) -> Result<DenseMatrix, String> {
    if rows == 0 || cols == 0 || rows > MAX_DIM || cols > MAX_DIM {
        return Err(format!("shape must be between 1 and {MAX_DIM} on each side"));
    }
    Ok(gaussian_matrix(&mut seeded(seed, 0), rows, cols, mean, 1.0))
}

fn check_iterations(t: usize) -> Result<(), String> {
    if t > MAX_ITERATIONS {
        return Err(format!("at most {MAX_ITERATIONS} iterations"));
    }
    Ok(())
}

/// Attainable orthogonality error per iteration `0..=t_max`, one block of
/// `t_max + 1` values per variant.
pub fn convergence_values(rows: usize, cols: usize, mean: f64, t_max: usize, seed: u64) -> Result<Vec<f64>, String> {
    check_iterations(t_max)?;
    let z = proxy(rows, cols, mean, seed)?;
    let mut out = Vec::with_capacity(VARIANTS.len() * (t_max + 1));
    for (centering, compact) in VARIANTS {
        let (_, cache) =
            oni_forward(&z, &OniConfig::basic(t_max).with_flags(centering, compact)).map_err(|e| e.to_string())?;
        out.extend(cache.outputs().iter().map(delta_attainable));
    }
    Ok(out)
}

/// Singular values of the output after each iteration `0..=t`, one
/// descending block of `min(rows, cols)` values per iteration.
pub fn spectrum_values(rows: usize, cols: usize, t: usize, compact: bool, seed: u64) -> Result<Vec<f64>, String> {
    check_iterations(t)?;
    let z = proxy(rows, cols, 0.0, seed)?;
    let (_, cache) = oni_forward(&z, &OniConfig::basic(t).with_flags(false, compact)).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for w in cache.outputs() {
        out.extend(singular_values(&w).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// `[δ_row, δ_col]` of group orthogonalization with the given group size.
pub fn group_values(rows: usize, cols: usize, group_size: usize, seed: u64) -> Result<Vec<f64>, String> {
    let z = proxy(rows, cols, 0.0, seed)?;
    let w =
        group_oni_forward(&z, group_size, &OniConfig::basic(30).with_flags(false, true)).map_err(|e| e.to_string())?;
    Ok(vec![delta_row(&w), delta_col(&w)])
}

#[wasm_bindgen]
pub fn convergence_curves(rows: usize, cols: usize, mean: f64, t_max: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    convergence_values(rows, cols, mean, t_max, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn singular_spectrum(rows: usize, cols: usize, t: usize, compact: bool, seed: u32) -> Result<Vec<f64>, JsError> {
    spectrum_values(rows, cols, t, compact, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn group_deltas(rows: usize, cols: usize, group_size: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    group_values(rows, cols, group_size, seed.into()).map_err(|e| JsError::new(&e))
}

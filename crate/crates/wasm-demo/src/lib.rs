//! Browser bindings for the observability-blocking designs. Every export
//! takes a network JSON document and returns a JSON string; the plain
//! functions underneath are what the native tests exercise.

use nalgebra::DMatrix;
use obsblock::cli::initial_state;
use obsblock::verify::Claims;
use obsblock::{
    algorithm2, build_matrices, eig, parse_network, regional_design, regional_stable_design, select_mode, simulate,
    verify_design, BlockingDesign, ModeChoice, NetworkModel, SystemMatrices, Tolerances,
};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Samples kept per plotted series.
const PLOT_POINTS: usize = 400;

fn pair(z: num_complex::Complex64) -> Value {
    json!([z.re, z.im])
}

fn blocked(model: &NetworkModel, mode_index: u32, tol: &Tolerances) -> Result<(SystemMatrices, BlockingDesign), String> {
    let mats = build_matrices(model).map_err(|e| e.to_string())?;
    let p = match mode_index {
        0 => select_mode(&mats, tol).map_err(|e| e.to_string())?,
        k => k as usize - 1,
    };
    let design = algorithm2(&mats, p, tol).map_err(|e| e.to_string())?;
    Ok((mats, design))
}

/// Blocks one mode. `mode_index` is 1-based; 0 picks a mode automatically.
pub fn design_block_json(network: &str, mode_index: u32) -> Result<Value, String> {
    let tol = Tolerances::default();
    let model = parse_network(network).map_err(|e| e.to_string())?;
    let (mats, design) = blocked(&model, mode_index, &tol)?;
    let es = eig(&mats.l, &tol).map_err(|e| e.to_string())?;
    let report = verify_design(&mats, &design.f.f, &Claims::blocking(&design, &es), &tol).map_err(|e| e.to_string())?;
    let gain: Vec<Vec<f64>> = design.f.f.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(json!({
        "eigenvalues": es.eigenvalues.iter().map(|&z| pair(z)).collect::<Vec<_>>(),
        "index": design.p + 1,
        "hidden": pair(-design.lambda_p),
        "case": format!("{:?}", design.case),
        "modified": design.modified.iter().map(|i| i + 1).collect::<Vec<_>>(),
        "gain": gain,
        "rank": report.obs_matrix_rank,
        "n": report.n,
        "pass": report.pass,
    }))
}

fn thin(trace: &obsblock::SimTrace) -> (Vec<f64>, Vec<Vec<f64>>) {
    let stride = trace.times.len().div_ceil(PLOT_POINTS).max(1);
    let times = trace.times.iter().step_by(stride).copied().collect();
    let m = trace.outputs.first().map_or(0, |y| y.len());
    let outputs = (0..m)
        .map(|k| trace.outputs.iter().step_by(stride).map(|y| y[k]).collect())
        .collect();
    (times, outputs)
}

/// Measured outputs from the blocking eigenvector, with and without the
/// designed feedback.
pub fn simulate_blocked_json(network: &str, mode_index: u32, horizon: f64, dt: f64) -> Result<Value, String> {
    let tol = Tolerances::default();
    let model = parse_network(network).map_err(|e| e.to_string())?;
    let (mats, design) = blocked(&model, mode_index, &tol)?;
    let vhat: Vec<_> = design.vhat_p.iter().copied().collect();
    let x0 = initial_state(&vhat);
    let open = simulate(&mats, &DMatrix::zeros(mats.q(), mats.n()), &x0, horizon, dt).map_err(|e| e.to_string())?;
    let closed = simulate(&mats, &design.f.f, &x0, horizon, dt).map_err(|e| e.to_string())?;
    let (times, open_y) = thin(&open);
    let (_, closed_y) = thin(&closed);
    Ok(json!({
        "times": times,
        "open": open_y,
        "closed": closed_y,
        "hidden": pair(-design.lambda_p),
    }))
}

/// Closed-loop spectra of the naive and the shifted regional designs.
/// A negative `d0` selects the default shift.
pub fn regional_spectrum_json(network: &str, d0: f64) -> Result<Value, String> {
    let tol = Tolerances::default();
    let model = parse_network(network).map_err(|e| e.to_string())?;
    let mats = build_matrices(&model).map_err(|e| e.to_string())?;
    let spectrum = |f: &DMatrix<f64>| -> Result<Vec<Value>, String> {
        let a = -mats.closed_loop(f).map_err(|e| e.to_string())?;
        let eigs = obsblock::spectral::eigenvalues(&a).map_err(|e| e.to_string())?;
        Ok(eigs.into_iter().map(pair).collect())
    };
    let naive = regional_design(&model, None::<ModeChoice>, &tol).map_err(|e| e.to_string())?;
    let shift = if d0 < 0.0 { None } else { Some(d0) };
    let stable = regional_stable_design(&model, shift, None, &tol).map_err(|e| e.to_string())?;
    Ok(json!({
        "naive": {
            "spectrum": spectrum(&naive.f)?,
            "stable": naive.stable,
            "hidden": pair(-naive.lambda_p),
        },
        "shifted": {
            "spectrum": spectrum(&stable.f)?,
            "stable": stable.stable,
            "hidden": pair(-stable.lambda_p),
            "d": stable.d,
        },
        "cut": stable.cut.vcut.iter().map(|v| v + 1).collect::<Vec<_>>(),
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn design_block(network: &str, mode_index: u32) -> Result<String, JsValue> {
    to_js(design_block_json(network, mode_index))
}

#[wasm_bindgen]
pub fn simulate_blocked(network: &str, mode_index: u32, horizon: f64, dt: f64) -> Result<String, JsValue> {
    to_js(simulate_blocked_json(network, mode_index, horizon, dt))
}

#[wasm_bindgen]
pub fn regional_spectrum(network: &str, d0: f64) -> Result<String, JsValue> {
    to_js(regional_spectrum_json(network, d0))
}

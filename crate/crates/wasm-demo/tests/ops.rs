use obsblock_wasm::{design_block_json, regional_spectrum_json, simulate_blocked_json};

fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn design_hides_mode_three() {
    let out = design_block_json(&fixture("four_node.json"), 3).unwrap();
    assert_eq!(out["index"], 3);
    assert_eq!(out["case"], "Fallback");
    assert_eq!(out["pass"], true);
    assert_eq!(out["rank"], 3);
    let hidden = out["hidden"][0].as_f64().unwrap();
    assert!((hidden + 3.0).abs() < 1e-9);
    assert_eq!(out["gain"].as_array().unwrap().len(), 3);
}

#[test]
fn automatic_mode_choice() {
    let out = design_block_json(&fixture("four_node.json"), 0).unwrap();
    assert_eq!(out["pass"], true);
    assert!(out["index"].as_u64().unwrap() >= 1);
}

#[test]
fn bad_input_is_an_error_message() {
    assert!(design_block_json("{", 1).unwrap_err().contains("line"));
    assert!(design_block_json(&fixture("four_node.json"), 9).is_err());
    assert!(design_block_json(&fixture("conjugate_failure.json"), 3).is_err());
}

#[test]
fn blocked_outputs_stay_flat() {
    let out = simulate_blocked_json(&fixture("four_node.json"), 3, 2.0, 1e-3).unwrap();
    let times = out["times"].as_array().unwrap();
    assert!(times.len() <= 401 && times.len() > 100);
    let closed = out["closed"].as_array().unwrap();
    let open = out["open"].as_array().unwrap();
    assert_eq!(closed.len(), 2);
    let peak = |series: &[serde_json::Value]| {
        series
            .iter()
            .flat_map(|s| s.as_array().unwrap().iter().map(|x| x.as_f64().unwrap().abs()))
            .fold(0.0, f64::max)
    };
    assert!(peak(closed) < 1e-8);
    assert!(peak(open) > 1e-2);
}

#[test]
fn regional_spectra_on_tail() {
    let out = regional_spectrum_json(&fixture("regional_tail.json"), -1.0).unwrap();
    assert_eq!(out["shifted"]["stable"], true);
    assert_eq!(out["cut"], serde_json::json!([5]));
    let spectrum = out["shifted"]["spectrum"].as_array().unwrap();
    assert_eq!(spectrum.len(), 10);
    assert!(spectrum.iter().all(|z| z[0].as_f64().unwrap() < 0.0));
    assert_eq!(out["naive"]["spectrum"].as_array().unwrap().len(), 10);
}

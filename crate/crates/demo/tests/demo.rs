use chats_demo::{nucleus, render, timeline};
use serde_json::Value;

#[test]
fn overlap_and_silence_move_the_shared_boundary() {
    let out: Value = serde_json::from_str(&timeline("1 0.0 5.0\n2 4.2 6.0\n\n1 6.8 7.5\n").unwrap()).unwrap();
    let rows = out.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["b_hat_s"], 5.0);
    assert_eq!(rows[1]["a_hat_s"], 5.0);
    assert!((rows[0]["handover_s"].as_f64().unwrap() + 0.8).abs() < 1e-12);
    assert_eq!(rows[1]["b_hat_s"], 6.8);
    assert_eq!(rows[2]["a_hat_s"], 6.8);
    assert_eq!(rows[2]["b_hat_s"], 7.5);
    assert!(rows[2]["handover_s"].is_null());
}

#[test]
fn timeline_rejects_bad_input() {
    assert!(timeline("3 0 1").is_err());
    assert!(timeline("1 0").is_err());
    assert!(timeline("1 0 1\n2 0 1").is_err());
    assert!(timeline("1 x 1").is_err());
}

#[test]
fn nucleus_keeps_the_smallest_head() {
    let out: Value = serde_json::from_str(&nucleus("5, 3, 1, 1", 0.7).unwrap()).unwrap();
    assert_eq!(out["kept"], serde_json::json!([0, 1]));
    let probs: Vec<f64> = serde_json::from_value(out["probs"].clone()).unwrap();
    assert!((probs[0] - 0.625).abs() < 1e-12 && (probs[1] - 0.375).abs() < 1e-12);
    assert_eq!(probs[2], 0.0);
    assert!((out["mass"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    let all: Value = serde_json::from_str(&nucleus("1 1 1", 1.0).unwrap()).unwrap();
    assert_eq!(all["kept"].as_array().unwrap().len(), 3);
    assert!(nucleus("1 2", 0.0).is_err());
    assert!(nucleus("0 0", 0.5).is_err());
    assert!(nucleus("-1 2", 0.5).is_err());
}

#[test]
fn render_reports_runs_and_exact_length() {
    let r = render("0 0 5 5 5 1", "0 0 16 16 16 0", "spk00", 150.0).unwrap();
    assert_eq!(r.runs, vec![(0, 2), (5, 3), (1, 1)]);
    assert_eq!(r.sample_rate, 16_000);
    assert_eq!(r.samples.len(), 6 * 320);
    assert!(r.samples[..640].iter().all(|&x| x == 0.0));
    assert!(r.samples[640..1600].iter().any(|&x| x != 0.0));
    assert_eq!(render("0 0 5 5 5 1", "0 0 16 16 16 0", "spk00", 150.0).unwrap().samples, r.samples);
    assert!(render("1 2", "0", "s", 150.0).is_err());
    assert!(render("1", "0", "s", 0.0).is_err());
}

//! Browser bindings for a few pure pieces of the pipeline. The plain
//! functions return `Result<_, String>` so they run natively in tests; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use chats_core::dialogue_data::{Channel, TurnTiming};
use chats_core::ms_dlm::nucleus_filter;
use chats_core::s2u::SpeakerPitchStats;
use chats_core::token_codec::edge_encode;
use chats_core::turn_taking::modify_boundaries;
use chats_core::u2s::{synthesize, SynthConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn numbers<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

#[derive(Serialize)]
pub struct Boundary {
    pub n: usize,
    pub channel: u8,
    pub a_s: f64,
    pub b_s: f64,
    pub a_hat_s: f64,
    pub b_hat_s: f64,
    /// Trailing silence (> 0) or overlap (< 0) handed to the next turn, in seconds.
    pub handover_s: Option<f64>,
}

/// One utterance per line as `channel start end`; returns the modified timeline as JSON.
pub fn timeline(text: &str) -> Result<String, String> {
    let mut turns = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Vec<f64> = numbers(line)?;
        let [c, a, b] = v[..] else { return Err(format!("line {}: expected `channel start end`", i + 1)) };
        let channel = match c as u8 {
            1 => Channel::One,
            2 => Channel::Two,
            _ => return Err(format!("line {}: channel must be 1 or 2", i + 1)),
        };
        turns.push(TurnTiming { channel, start_s: a, end_s: b });
    }
    let t = modify_boundaries(&turns).map_err(|e| e.to_string())?;
    let rows: Vec<Boundary> = t
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| Boundary {
            n: e.n,
            channel: e.channel.into(),
            a_s: e.a_s,
            b_s: e.b_s,
            a_hat_s: e.a_hat_s,
            b_hat_s: e.b_hat_s,
            handover_s: t.entries.get(i + 1).map(|next| next.a_s - e.b_s),
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct Nucleus {
    pub kept: Vec<usize>,
    pub probs: Vec<f64>,
    pub mass: f64,
}

/// Unnormalized weights and `p`; returns the kept indices and the renormalized distribution.
pub fn nucleus(weights: &str, p: f64) -> Result<String, String> {
    let w: Vec<f64> = numbers(weights)?;
    if w.is_empty() || w.iter().any(|&x| !(x >= 0.0)) {
        return Err("weights must be non-negative and not all missing".into());
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err("weights sum to zero".into());
    }
    let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
    let filtered = nucleus_filter(&probs, p).map_err(|e| e.to_string())?;
    let kept: Vec<usize> = (0..filtered.len()).filter(|&i| filtered[i] > 0.0).collect();
    let mass = kept.iter().map(|&i| probs[i]).sum();
    serde_json::to_string(&Nucleus { kept, probs: filtered, mass }).map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct Rendered {
    pub runs: Vec<(u32, u32)>,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

/// Render content and pitch unit streams for one speaker with the toy synthesizer.
pub fn render(content: &str, pitch: &str, speaker: &str, mean_f0_hz: f64) -> Result<Rendered, String> {
    let content: Vec<u32> = numbers(content)?;
    let pitch: Vec<u32> = numbers(pitch)?;
    if !(mean_f0_hz > 0.0) {
        return Err("mean F0 must be positive".into());
    }
    let cfg = SynthConfig::default();
    let stats = SpeakerPitchStats { speaker_id: speaker.to_string(), mean_log_f0: mean_f0_hz.ln(), std_log_f0: 0.2 };
    let samples = synthesize(&content, &pitch, speaker, &stats, &cfg).map_err(|e| e.to_string())?;
    let runs = edge_encode(&content).map_err(|e| e.to_string())?.iter().map(|r| (r.unit, r.duration)).collect();
    Ok(Rendered { runs, samples: samples.iter().map(|&x| x as f32).collect(), sample_rate: cfg.sample_rate })
}

#[wasm_bindgen(js_name = modifyBoundaries)]
pub fn modify_boundaries_js(text: &str) -> Result<String, JsError> {
    timeline(text).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = nucleusFilter)]
pub fn nucleus_js(weights: &str, p: f64) -> Result<String, JsError> {
    nucleus(weights, p).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Audio {
    inner: Rendered,
}

#[wasm_bindgen]
impl Audio {
    pub fn samples(&self) -> Vec<f32> {
        self.inner.samples.clone()
    }

    #[wasm_bindgen(js_name = sampleRate)]
    pub fn sample_rate(&self) -> u32 {
        self.inner.sample_rate
    }

    /// Run-length encoding of the content stream as JSON `[[unit, frames], ...]`.
    pub fn runs(&self) -> String {
        serde_json::to_string(&self.inner.runs).unwrap_or_default()
    }
}

#[wasm_bindgen(js_name = renderUnits)]
pub fn render_js(content: &str, pitch: &str, speaker: &str, mean_f0_hz: f64) -> Result<Audio, JsError> {
    render(content, pitch, speaker, mean_f0_hz).map(|inner| Audio { inner }).map_err(|e| JsError::new(&e))
}

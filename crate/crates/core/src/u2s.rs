//! Toy unit-to-speech synthesizer: harmonic tones for voiced frames, filtered
//! noise for unvoiced ones, digital silence for the silence units.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::s2u::{PitchQuantizer, SpeakerPitchStats, FRAME_RATE_HZ};
use crate::token_codec::StreamPair;
use crate::util::{hash_parts, hash_str, unit_f64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub crossfade_ms: f64,
    pub timbre_seed: u64,
    pub harmonics: usize,
    /// Content units rendered as exact zeros.
    pub silence_units: Vec<u32>,
    /// Peak amplitude budget shared by the harmonics of a voiced frame.
    pub voiced_gain: f64,
    pub noise_gain: f64,
    /// One-pole smoothing coefficient of the unvoiced noise.
    pub noise_pole: f64,
    pub quantizer: PitchQuantizer,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 16_000,
            crossfade_ms: 5.0,
            timbre_seed: 0x5eed,
            harmonics: 8,
            silence_units: vec![0, 1],
            voiced_gain: 0.5,
            noise_gain: 0.05,
            noise_pole: 0.6,
            quantizer: PitchQuantizer::default(),
        }
    }
}

impl SynthConfig {
    pub fn hop(&self) -> usize {
        (self.sample_rate as f64 / FRAME_RATE_HZ) as usize
    }

    fn crossfade_samples(&self) -> usize {
        (self.crossfade_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || !self.sample_rate.is_multiple_of(FRAME_RATE_HZ as u32) {
            return Err(Error::input(format!(
                "sample rate {} is not a multiple of the {FRAME_RATE_HZ} Hz frame rate",
                self.sample_rate
            )));
        }
        if !(self.crossfade_ms >= 0.0) || self.crossfade_samples() >= self.hop() {
            return Err(Error::input("crossfade must be shorter than one frame"));
        }
        if self.harmonics == 0 {
            return Err(Error::input("at least one harmonic is required"));
        }
        if !(self.voiced_gain >= 0.0 && self.noise_gain >= 0.0 && self.voiced_gain + self.noise_gain <= 1.0) {
            return Err(Error::input("voiced_gain + noise_gain must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.noise_pole) {
            return Err(Error::input("noise_pole must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
struct FrameParams {
    f0: f64,
    amps: Vec<f64>,
    noise: f64,
    noise_key: u64,
}

fn frame_params(content: u32, f0: f64, speaker_key: u64, cfg: &SynthConfig) -> FrameParams {
    if cfg.silence_units.contains(&content) {
        return FrameParams { amps: vec![0.0; cfg.harmonics], ..Default::default() };
    }
    if f0 > 0.0 {
        let nyquist = cfg.sample_rate as f64 / 2.0;
        let raw: Vec<f64> = (1..=cfg.harmonics)
            .map(|h| {
                if h as f64 * f0 >= nyquist {
                    return 0.0;
                }
                let u = unit_f64(hash_parts(&[speaker_key, content as u64, h as u64]));
                (0.3 + 0.7 * u) / h as f64
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        let amps = raw.iter().map(|a| a / sum * cfg.voiced_gain).collect();
        FrameParams { f0, amps, noise: 0.0, noise_key: 0 }
    } else {
        FrameParams {
            f0: 0.0,
            amps: vec![0.0; cfg.harmonics],
            noise: cfg.noise_gain,
            noise_key: hash_parts(&[speaker_key, 0xa11ce, content as u64]),
        }
    }
}

fn is_silent(p: &FrameParams) -> bool {
    p.noise == 0.0 && p.amps.iter().all(|&a| a == 0.0)
}

/// Render one utterance. Output length is `frames * hop` samples.
pub fn synthesize(
    content: &[u32],
    pitch: &[u32],
    speaker_id: &str,
    stats: &SpeakerPitchStats,
    cfg: &SynthConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if content.len() != pitch.len() {
        return Err(Error::input(format!(
            "content has {} frames but pitch has {}",
            content.len(),
            pitch.len()
        )));
    }
    let speaker_key = hash_parts(&[cfg.timbre_seed, hash_str(speaker_id)]);
    let frames = content
        .iter()
        .zip(pitch)
        .map(|(&c, &p)| Ok(frame_params(c, cfg.quantizer.dequantize(p, stats)?, speaker_key, cfg)))
        .collect::<Result<Vec<_>>>()?;

    let hop = cfg.hop();
    let xf = cfg.crossfade_samples();
    let sr = cfg.sample_rate as f64;
    let mut out = Vec::with_capacity(frames.len() * hop);
    let mut phase = 0.0f64;
    let mut noise_state = 0.0f64;
    let mut sample_index = 0u64;
    for (t, cur) in frames.iter().enumerate() {
        let silent = is_silent(cur);
        let prev = if t > 0 { Some(&frames[t - 1]) } else { None };
        let next_silent = frames.get(t + 1).is_some_and(is_silent);
        for j in 0..hop {
            // (frame to blend with, weight of the current frame)
            let blend: Option<(&FrameParams, f64)> = if silent {
                None
            } else if let (true, Some(p)) = (j < xf, prev) {
                Some((p, (j + 1) as f64 / (xf + 1) as f64))
            } else if next_silent && j >= hop - xf {
                Some((&frames[t + 1], (hop - j) as f64 / (xf + 1) as f64))
            } else {
                None
            };
            let s = if silent {
                noise_state = 0.0;
                0.0
            } else {
                let f0 = if cur.f0 > 0.0 { cur.f0 } else { blend.map_or(0.0, |(o, _)| o.f0) };
                let (w, other) = match blend {
                    Some((o, w)) => (w, Some(o)),
                    None => (1.0, None),
                };
                let amp = |h: usize| w * cur.amps[h] + other.map_or(0.0, |o| (1.0 - w) * o.amps[h]);
                let noise_amp = w * cur.noise + other.map_or(0.0, |o| (1.0 - w) * o.noise);
                let mut s = 0.0;
                if f0 > 0.0 {
                    phase = (phase + TAU * f0 / sr) % TAU;
                    for h in 0..cfg.harmonics {
                        let a = amp(h);
                        if a != 0.0 {
                            s += a * (phase * (h + 1) as f64).sin();
                        }
                    }
                }
                if noise_amp > 0.0 {
                    let key = if cur.noise > 0.0 { cur.noise_key } else { other.map_or(0, |o| o.noise_key) };
                    let x = 2.0 * unit_f64(hash_parts(&[key, sample_index])) - 1.0;
                    noise_state = cfg.noise_pole * noise_state + (1.0 - cfg.noise_pole) * x;
                    s += noise_amp * noise_state;
                }
                s
            };
            out.push(s);
            sample_index += 1;
        }
    }
    Ok(out)
}

/// Synthesize utterances one at a time and concatenate them sample-exactly.
pub fn synthesize_segments(
    segments: &[StreamPair],
    speaker_id: &str,
    stats: &SpeakerPitchStats,
    cfg: &SynthConfig,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for seg in segments {
        out.extend(synthesize(&seg.content, &seg.pitch, speaker_id, stats, cfg)?);
    }
    Ok(out)
}

fn to_i16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16
}

/// Write mono 16-bit PCM.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        w.write_sample(to_i16(s)).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Read a mono 16-bit PCM file; returns samples in [-1, 1] and the sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!("{}: expected mono 16-bit PCM", path.display())));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / i16::MAX as f64))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok((samples, spec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{estimate_f0, F0Config};

    fn stats() -> SpeakerPitchStats {
        SpeakerPitchStats { speaker_id: "A".into(), mean_log_f0: 150f64.ln(), std_log_f0: 0.25 }
    }

    #[test]
    fn length_is_frames_times_hop() {
        let cfg = SynthConfig::default();
        let y = synthesize(&[3; 100], &[5; 100], "A", &stats(), &cfg).unwrap();
        assert_eq!(y.len(), 32_000);
        assert!(synthesize(&[], &[], "A", &stats(), &cfg).unwrap().is_empty());
    }

    #[test]
    fn silence_is_exactly_zero() {
        let cfg = SynthConfig::default();
        let y = synthesize(&[[0; 15], [1; 15]].concat(), &[7; 30], "A", &stats(), &cfg).unwrap();
        assert_eq!(y.iter().fold(0.0f64, |m, s| m.max(s.abs())), 0.0);
    }

    #[test]
    fn silence_frames_stay_silent_next_to_speech() {
        let cfg = SynthConfig::default();
        let content = [4, 4, 0, 1, 9, 9];
        let pitch = [10, 10, 0, 0, 0, 0];
        let y = synthesize(&content, &pitch, "A", &stats(), &cfg).unwrap();
        let hop = cfg.hop();
        assert!(y[2 * hop..4 * hop].iter().all(|&s| s == 0.0));
        assert!(y[..2 * hop].iter().any(|&s| s != 0.0));
        assert!(y[4 * hop..].iter().any(|&s| s != 0.0));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let cfg = SynthConfig::default();
        assert!(synthesize(&[1, 2], &[1], "A", &stats(), &cfg).is_err());
        assert!(synthesize(&[1], &[99], "A", &stats(), &cfg).is_err());
    }

    #[test]
    fn pitch_round_trip_every_voiced_bin() {
        let cfg = SynthConfig::default();
        let st = stats();
        let q = cfg.quantizer;
        for bin in 1..q.n_bins {
            let y = synthesize(&[5; 25], &[bin; 25], "A", &st, &cfg).unwrap();
            let track = estimate_f0(&y, cfg.sample_rate, &F0Config::default()).unwrap();
            let voiced: Vec<f64> = track.iter().copied().filter(|&f| f > 0.0).collect();
            assert!(voiced.len() > 10, "bin {bin}: only {} voiced frames", voiced.len());
            let f0 = crate::util::median(&voiced).unwrap();
            let got = q.quantize(f0, &st) as i64;
            assert!((got - bin as i64).abs() <= 1, "bin {bin} came back as {got} (f0 {f0:.2})");
        }
    }

    #[test]
    fn bit_deterministic_and_unclipped() {
        let cfg = SynthConfig::default();
        let content: Vec<u32> = (0..80).map(|i| (i * 7 % 13) as u32).collect();
        let pitch: Vec<u32> = (0..80).map(|i| (i * 5 % 32) as u32).collect();
        let a = synthesize(&content, &pitch, "B", &stats(), &cfg).unwrap();
        let b = synthesize(&content, &pitch, "B", &stats(), &cfg).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn unvoiced_frames_are_quiet() {
        let cfg = SynthConfig::default();
        let y = synthesize(&[6; 10], &[0; 10], "A", &stats(), &cfg).unwrap();
        let peak = y.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        assert!(peak > 0.0 && peak <= cfg.noise_gain);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let cfg = SynthConfig::default();
        let y = synthesize(&[3; 5], &[12; 5], "A", &stats(), &cfg).unwrap();
        write_wav(&path, &y, cfg.sample_rate).unwrap();
        let (back, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 16_000);
        assert_eq!(back.len(), y.len());
        assert!(back.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1.0 / 32_000.0));
        let empty = dir.path().join("empty.wav");
        write_wav(&empty, &[], 16_000).unwrap();
        assert!(read_wav(&empty).unwrap().0.is_empty());
    }
}

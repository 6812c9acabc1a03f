//! Dialogue- and utterance-level metrics: energy VAD, turn-taking events,
//! backchannel ratios, per-speaker agreement, PER, F0 statistics, laughter.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dialogue_data::Channel;
use crate::error::{Error, Result};
use crate::ipu_classifier::IpuRole;

/// Silence that separates two IPUs of the same channel.
pub const MIN_SILENCE_S: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VadSegment {
    pub channel: Channel,
    pub start_s: f64,
    pub end_s: f64,
}

impl VadSegment {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub threshold_db: f64,
    pub min_silence_ms: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig { frame_ms: 20.0, threshold_db: -40.0, min_silence_ms: 200.0 }
    }
}

/// Maximal voiced runs of a frame-level activity track, with interior
/// silences shorter than `min_silence_s` bridged.
pub fn segments_from_flags(flags: &[bool], frame_s: f64, channel: Channel, min_silence_s: f64) -> Vec<VadSegment> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flags.len() && flags[i] {
            i += 1;
        }
        match runs.last_mut() {
            Some(last) if ((start - last.1) as f64) * frame_s < min_silence_s - 1e-9 => last.1 = i,
            _ => runs.push((start, i)),
        }
    }
    runs.into_iter()
        .map(|(a, b)| VadSegment { channel, start_s: a as f64 * frame_s, end_s: b as f64 * frame_s })
        .collect()
}

/// Frame-energy voice activity detection on mono PCM in [-1, 1].
pub fn energy_vad(samples: &[f64], sample_rate: u32, channel: Channel, cfg: &VadConfig) -> Result<Vec<VadSegment>> {
    if samples.is_empty() {
        return Err(Error::input("voice activity detection needs non-empty audio"));
    }
    let frame = ((cfg.frame_ms / 1000.0) * sample_rate as f64).round() as usize;
    if frame == 0 {
        return Err(Error::input("VAD frame is shorter than one sample"));
    }
    let flags: Vec<bool> = samples
        .chunks(frame)
        .map(|c| {
            let rms = (c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64).sqrt();
            rms > 0.0 && 20.0 * rms.log10() >= cfg.threshold_db
        })
        .collect();
    Ok(segments_from_flags(&flags, frame as f64 / sample_rate as f64, channel, cfg.min_silence_ms / 1000.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Ipu,
    Pause,
    Gap,
    Overlap,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [EventKind::Ipu, EventKind::Pause, EventKind::Gap, EventKind::Overlap];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Ipu => "ipu",
            EventKind::Pause => "pause",
            EventKind::Gap => "gap",
            EventKind::Overlap => "overlap",
        }
    }
}

/// One turn-taking event. Pauses belong to the channel that keeps the turn,
/// gaps to the channel that takes it, overlaps to the channel that starts
/// talking second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub kind: EventKind,
    pub channel: Channel,
    pub start_s: f64,
    pub end_s: f64,
}

impl TurnEvent {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

fn merge_channel(segments: &[VadSegment], channel: Channel, min_silence_s: f64) -> Vec<VadSegment> {
    let mut segs: Vec<VadSegment> = segments.iter().filter(|s| s.channel == channel).copied().collect();
    segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut out: Vec<VadSegment> = Vec::new();
    for s in segs {
        match out.last_mut() {
            Some(last) if s.start_s - last.end_s < min_silence_s => last.end_s = last.end_s.max(s.end_s),
            _ => out.push(s),
        }
    }
    out
}

/// IPUs, pauses, gaps and overlaps of a two-channel recording.
pub fn extract_events(segments: &[VadSegment], min_silence_s: f64) -> Vec<TurnEvent> {
    let ipus = Channel::BOTH.map(|c| merge_channel(segments, c, min_silence_s));
    let mut events = Vec::new();
    for seg in ipus.iter().flatten() {
        events.push(TurnEvent { kind: EventKind::Ipu, channel: seg.channel, start_s: seg.start_s, end_s: seg.end_s });
    }

    let (a, b) = (&ipus[0], &ipus[1]);
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].start_s.max(b[j].start_s);
        let hi = a[i].end_s.min(b[j].end_s);
        if hi > lo {
            let channel = if b[j].start_s >= a[i].start_s { Channel::Two } else { Channel::One };
            events.push(TurnEvent { kind: EventKind::Overlap, channel, start_s: lo, end_s: hi });
        }
        if a[i].end_s < b[j].end_s {
            i += 1;
        } else {
            j += 1;
        }
    }

    for (c, own) in ipus.iter().enumerate() {
        let other = &ipus[1 - c];
        for w in own.windows(2) {
            let (lo, hi) = (w[0].end_s, w[1].start_s);
            if !other.iter().any(|s| s.start_s > lo && s.start_s < hi) {
                events.push(TurnEvent { kind: EventKind::Pause, channel: w[0].channel, start_s: lo, end_s: hi });
            }
        }
    }

    let mut all: Vec<VadSegment> = ipus.iter().flatten().copied().collect();
    all.sort_by(|x, y| x.start_s.total_cmp(&y.start_s).then(x.channel.index().cmp(&y.channel.index())));
    if let Some(first) = all.first() {
        let (mut reach, mut reach_channel) = (first.end_s, first.channel);
        for s in &all[1..] {
            if s.start_s > reach && s.channel != reach_channel {
                events.push(TurnEvent { kind: EventKind::Gap, channel: s.channel, start_s: reach, end_s: s.start_s });
            }
            if s.end_s > reach {
                reach = s.end_s;
                reach_channel = s.channel;
            }
        }
    }
    events.sort_by(|x, y| x.start_s.total_cmp(&y.start_s).then(x.kind.cmp(&y.kind)));
    events
}

pub fn event_durations(events: &[TurnEvent], kind: EventKind, channel: Option<Channel>) -> Vec<f64> {
    events
        .iter()
        .filter(|e| e.kind == kind && channel.is_none_or(|c| e.channel == c))
        .map(TurnEvent::duration)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackchannelStats {
    pub q_bc: usize,
    pub q_all: usize,
    pub d_bc: f64,
    pub d_all: f64,
    pub ratio_freq: f64,
    pub ratio_dur: f64,
}

impl BackchannelStats {
    pub fn from_totals(q_bc: usize, q_all: usize, d_bc: f64, d_all: f64) -> Result<Self> {
        if q_all == 0 {
            return Err(Error::input("backchannel ratio needs at least one IPU"));
        }
        if q_bc > q_all || d_bc > d_all {
            return Err(Error::input("backchannel totals exceed the overall totals"));
        }
        let ratio_dur = if d_all > 0.0 { 100.0 * d_bc / d_all } else { 0.0 };
        Ok(BackchannelStats { q_bc, q_all, d_bc, d_all, ratio_freq: 100.0 * q_bc as f64 / q_all as f64, ratio_dur })
    }
}

/// Listener IPUs count as backchannels. Input pairs are `(role, duration_s)`.
pub fn backchannel_stats(ipus: &[(IpuRole, f64)]) -> Result<BackchannelStats> {
    let bc = ipus.iter().filter(|(r, _)| *r == IpuRole::Listener);
    let (q_bc, d_bc) = bc.fold((0, 0.0), |(q, d), (_, x)| (q + 1, d + x));
    let d_all = ipus.iter().map(|(_, d)| d).sum();
    BackchannelStats::from_totals(q_bc, ipus.len(), d_bc, d_all)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerComparison {
    pub speakers: Vec<String>,
    pub reference: Vec<f64>,
    pub generated: Vec<f64>,
    pub mae: f64,
    /// `None` when either vector has zero variance.
    pub r: Option<f64>,
    /// Two-sided p-value of r under a t test with n - 2 degrees of freedom.
    pub p_value: Option<f64>,
}

impl SpeakerComparison {
    pub fn significance_marker(&self) -> &'static str {
        match self.p_value {
            Some(p) if p < 0.01 => "‡",
            Some(p) if p < 0.05 => "†",
            _ => "",
        }
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn pearson_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// MAE and Pearson r between per-speaker reference and generated values.
pub fn speaker_comparison(
    reference: &BTreeMap<String, f64>,
    generated: &BTreeMap<String, f64>,
) -> Result<SpeakerComparison> {
    if reference.is_empty() {
        return Err(Error::input("speaker comparison needs at least one speaker"));
    }
    if reference.keys().ne(generated.keys()) {
        return Err(Error::input("reference and generated speaker sets differ"));
    }
    let speakers: Vec<String> = reference.keys().cloned().collect();
    let x: Vec<f64> = reference.values().copied().collect();
    let y: Vec<f64> = generated.values().copied().collect();
    let mae = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
    let r = pearson(&x, &y);
    let p_value = r.and_then(|r| pearson_p_value(r, x.len()));
    Ok(SpeakerComparison { speakers, reference: x, generated: y, mae, r, p_value })
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn phoneme_error_rate<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::input("phoneme error rate needs a non-empty reference"));
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    Ok(levenshtein(&r, &h) as f64 / r.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct F0Config {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub min_hz: f64,
    pub max_hz: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    pub min_rms: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        F0Config { window_ms: 40.0, hop_ms: 20.0, min_hz: 50.0, max_hz: 500.0, voicing_threshold: 0.5, min_rms: 1e-3 }
    }
}

fn frame_f0(x: &[f64], sr: f64, cfg: &F0Config) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = x.iter().map(|v| v - mean).collect();
    if (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt() < cfg.min_rms {
        return 0.0;
    }
    let lo = (sr / cfg.max_hz).ceil() as usize;
    let hi = ((sr / cfg.min_hz).floor() as usize).min(n.saturating_sub(2));
    if lo + 2 > hi {
        return 0.0;
    }
    let corr = |tau: usize| {
        let (a, b) = (&x[..n - tau], &x[tau..]);
        let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let den = (a.iter().map(|v| v * v).sum::<f64>() * b.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if den > 0.0 { num / den } else { 0.0 }
    };
    let r: Vec<f64> = (lo - 1..=hi + 1).map(corr).collect();
    let at = |tau: usize| r[tau + 1 - lo];
    let best = (lo..=hi).map(at).fold(f64::NEG_INFINITY, f64::max);
    if best < cfg.voicing_threshold {
        return 0.0;
    }
    let Some(tau) = (lo..=hi).find(|&t| at(t) >= 0.9 * best && at(t) >= at(t - 1) && at(t) >= at(t + 1)) else {
        return 0.0;
    };
    let (y0, y1, y2) = (at(tau - 1), at(tau), at(tau + 1));
    let den = y0 - 2.0 * y1 + y2;
    let shift = if den.abs() > 1e-12 { (0.5 * (y0 - y2) / den).clamp(-0.5, 0.5) } else { 0.0 };
    sr / (tau as f64 + shift)
}

/// Autocorrelation F0 track in Hz, one value per hop; 0 marks unvoiced frames.
pub fn estimate_f0(samples: &[f64], sample_rate: u32, cfg: &F0Config) -> Result<Vec<f64>> {
    let sr = sample_rate as f64;
    let win = (cfg.window_ms / 1000.0 * sr).round() as usize;
    let hop = (cfg.hop_ms / 1000.0 * sr).round() as usize;
    if win == 0 || hop == 0 || !(cfg.min_hz > 0.0 && cfg.max_hz > cfg.min_hz) {
        return Err(Error::input("invalid F0 analysis configuration"));
    }
    if samples.len() < win {
        return Ok(Vec::new());
    }
    Ok((0..=(samples.len() - win) / hop).map(|k| frame_f0(&samples[k * hop..k * hop + win], sr, cfg)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Stats {
    pub mean_hz: f64,
    pub variance_hz2: f64,
    /// Utterances that contributed at least one voiced frame.
    pub utterances: usize,
}

/// Per-utterance mean and variance over voiced frames, averaged across utterances.
pub fn f0_statistics_from_tracks(tracks: &[Vec<f64>]) -> Result<F0Stats> {
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for t in tracks {
        let v: Vec<f64> = t.iter().copied().filter(|&f| f > 0.0).collect();
        if v.is_empty() {
            continue;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        means.push(m);
        vars.push(v.iter().map(|f| (f - m).powi(2)).sum::<f64>() / v.len() as f64);
    }
    if means.is_empty() {
        return Err(Error::input("no voiced frames in any utterance"));
    }
    let n = means.len() as f64;
    Ok(F0Stats { mean_hz: means.iter().sum::<f64>() / n, variance_hz2: vars.iter().sum::<f64>() / n, utterances: means.len() })
}

pub fn f0_statistics(utterances: &[Vec<f64>], sample_rate: u32, cfg: &F0Config) -> Result<F0Stats> {
    let tracks = utterances.iter().map(|u| estimate_f0(u, sample_rate, cfg)).collect::<Result<Vec<_>>>()?;
    f0_statistics_from_tracks(&tracks)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LaughterStats {
    pub count: usize,
    pub total_duration_s: f64,
}

/// Count labeled laughter intervals `(start_s, end_s)`; touching intervals stay separate.
pub fn laughter_stats(intervals: &[(f64, f64)]) -> Result<LaughterStats> {
    if let Some(&(a, b)) = intervals.iter().find(|(a, b)| !(b >= a)) {
        return Err(Error::input(format!("laughter interval [{a}, {b}] ends before it starts")));
    }
    Ok(LaughterStats { count: intervals.len(), total_duration_s: intervals.iter().map(|(a, b)| b - a).sum() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi)`; values outside are clamped into the end bins.
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::input("histogram needs bins > 0 and hi > lo"));
        }
        let mut counts = vec![0; bins];
        let w = (hi - lo) / bins as f64;
        for &v in values.iter().filter(|v| v.is_finite()) {
            let k = ((v - lo) / w).floor().clamp(0.0, (bins - 1) as f64) as usize;
            counts[k] += 1;
        }
        Ok(Histogram { lo, hi, counts })
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let w = self.bin_width();
        let mut s = String::from("bin_start,bin_end,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:.4},{:.4},{c}", self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w);
        }
        s
    }
}

const SERIES_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Standalone SVG of one or more density-normalized histograms on a shared axis.
pub fn histogram_svg(title: &str, x_label: &str, series: &[(&str, &Histogram)]) -> String {
    let (w, h, m) = (640.0, 360.0, 48.0);
    let (lo, hi) = series.first().map_or((0.0, 1.0), |(_, hg)| (hg.lo, hg.hi));
    let dens = |hg: &Histogram| -> Vec<f64> {
        let total = hg.counts.iter().sum::<usize>().max(1) as f64;
        hg.counts.iter().map(|&c| c as f64 / total / hg.bin_width()).collect()
    };
    let ymax = series.iter().flat_map(|(_, hg)| dens(hg)).fold(0.0f64, f64::max).max(1e-12);
    let px = |x: f64| m + (x - lo) / (hi - lo) * (w - 2.0 * m);
    let py = |y: f64| h - m - y / ymax * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{0}" stroke="black"/>"#,
        h - m,
        w - m
    );
    for k in 0..=4 {
        let x = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x:.2}</text>"#, px(x), h - m + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 8.0, xml_escape(x_label));
    for (i, (name, hg)) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let bw = hg.bin_width();
        let mut pts = format!("{:.1},{:.1}", px(hg.lo), py(0.0));
        for (k, d) in dens(hg).iter().enumerate() {
            let (x0, x1) = (hg.lo + k as f64 * bw, hg.lo + (k + 1) as f64 * bw);
            let _ = write!(pts, " {:.1},{:.1} {:.1},{:.1}", px(x0), py(*d), px(x1), py(*d));
        }
        let _ = write!(pts, " {:.1},{:.1}", px(hg.hi), py(0.0));
        let _ = writeln!(s, r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
            w - m - 110.0,
            w - m - 90.0,
            w - m - 85.0,
            ly + 4.0,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(channel: Channel, a: f64, b: f64) -> VadSegment {
        VadSegment { channel, start_s: a, end_s: b }
    }

    fn tone(hz: f64, seconds: f64, sr: u32) -> Vec<f64> {
        (0..(seconds * sr as f64) as usize).map(|i| 0.5 * (std::f64::consts::TAU * hz * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn vad_silence_and_bursts() {
        let sr = 16_000;
        let silence = vec![0.0; sr as usize];
        assert!(energy_vad(&silence, sr, Channel::One, &VadConfig::default()).unwrap().is_empty());
        assert!(energy_vad(&[], sr, Channel::One, &VadConfig::default()).is_err());

        let mut x = vec![0.0; 8000];
        x.extend(tone(220.0, 1.0, sr));
        x.extend(vec![0.0; 8000]);
        let segs = energy_vad(&x, sr, Channel::One, &VadConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert!((segs[0].start_s - 0.5).abs() <= 0.02 && (segs[0].end_s - 1.5).abs() <= 0.02);

        let mut y = tone(220.0, 0.5, sr);
        y.extend(vec![0.0; 1600]);
        y.extend(tone(220.0, 0.5, sr));
        assert_eq!(energy_vad(&y, sr, Channel::One, &VadConfig::default()).unwrap().len(), 1);
    }

    #[test]
    fn pause_and_gap_example() {
        let segs = [seg(Channel::One, 0.0, 2.0), seg(Channel::One, 2.5, 4.0), seg(Channel::Two, 4.3, 6.0)];
        let ev = extract_events(&segs, MIN_SILENCE_S);
        let pauses = event_durations(&ev, EventKind::Pause, None);
        let gaps = event_durations(&ev, EventKind::Gap, None);
        assert_eq!(pauses.len(), 1);
        assert!((pauses[0] - 0.5).abs() < 1e-12);
        assert_eq!(gaps.len(), 1);
        assert!((gaps[0] - 0.3).abs() < 1e-12);
        assert!(event_durations(&ev, EventKind::Overlap, None).is_empty());
        assert_eq!(event_durations(&ev, EventKind::Ipu, None).len(), 3);
        assert_eq!(ev.iter().find(|e| e.kind == EventKind::Gap).unwrap().channel, Channel::Two);
    }

    #[test]
    fn single_channel_and_identical_spans() {
        let ev = extract_events(&[seg(Channel::One, 0.0, 1.0), seg(Channel::One, 2.0, 3.0)], MIN_SILENCE_S);
        assert!(event_durations(&ev, EventKind::Gap, None).is_empty());
        assert!(event_durations(&ev, EventKind::Overlap, None).is_empty());
        let ev = extract_events(&[seg(Channel::One, 1.0, 3.0), seg(Channel::Two, 1.0, 3.0)], MIN_SILENCE_S);
        assert_eq!(event_durations(&ev, EventKind::Overlap, None), vec![2.0]);
    }

    #[test]
    fn short_silences_merge_into_one_ipu() {
        let ev = extract_events(&[seg(Channel::One, 0.0, 1.0), seg(Channel::One, 1.1, 2.0)], MIN_SILENCE_S);
        assert_eq!(event_durations(&ev, EventKind::Ipu, None), vec![2.0]);
        assert!(event_durations(&ev, EventKind::Pause, None).is_empty());
    }

    #[test]
    fn overlap_attributed_to_later_starter() {
        let ev = extract_events(&[seg(Channel::One, 0.0, 2.0), seg(Channel::Two, 1.5, 3.0)], MIN_SILENCE_S);
        let o: Vec<&TurnEvent> = ev.iter().filter(|e| e.kind == EventKind::Overlap).collect();
        assert_eq!(o.len(), 1);
        assert_eq!(o[0].channel, Channel::Two);
        assert!((o[0].duration() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table2_ratios() {
        let s = BackchannelStats::from_totals(1854, 9453, 1518.0, 16588.0).unwrap();
        assert_eq!(format!("{:.2}", s.ratio_freq), "19.61");
        assert_eq!(format!("{:.2}", s.ratio_dur), "9.15");
        let none = backchannel_stats(&[(IpuRole::Speaker, 1.0), (IpuRole::Speaker, 2.0)]).unwrap();
        assert_eq!((none.ratio_freq, none.ratio_dur), (0.0, 0.0));
        assert!(backchannel_stats(&[]).is_err());
        let some = backchannel_stats(&[(IpuRole::Listener, 0.5), (IpuRole::Speaker, 1.5)]).unwrap();
        assert_eq!((some.ratio_freq, some.ratio_dur), (50.0, 25.0));
    }

    fn map(v: &[f64]) -> BTreeMap<String, f64> {
        v.iter().enumerate().map(|(i, &x)| (format!("s{i}"), x)).collect()
    }

    #[test]
    fn comparison_examples() {
        let x = map(&[1.0, 2.0, 4.0, 7.0]);
        let c = speaker_comparison(&x, &x).unwrap();
        assert_eq!(c.mae, 0.0);
        assert_eq!(c.r, Some(1.0));
        assert_eq!(c.significance_marker(), "‡");
        let neg = map(&[-1.0, -2.0, -4.0, -7.0]);
        assert!((speaker_comparison(&x, &neg).unwrap().r.unwrap() + 1.0).abs() < 1e-12);
        let flat = map(&[3.0; 4]);
        assert_eq!(speaker_comparison(&x, &flat).unwrap().r, None);
        let mut other = x.clone();
        other.insert("zz".into(), 1.0);
        assert!(speaker_comparison(&x, &other).is_err());
    }

    #[test]
    fn p_value_matches_known_case() {
        // r = 0.5 with n = 10: t = 1.633 on 8 df, two-sided p = 0.1411
        let p = pearson_p_value(0.5, 10).unwrap();
        assert!((p - 0.1411).abs() < 5e-4, "{p}");
    }

    #[test]
    fn per_examples() {
        assert_eq!(phoneme_error_rate(&["a", "b", "c"], &["a", "b", "c"]).unwrap(), 0.0);
        assert_eq!(phoneme_error_rate::<&str>(&["a", "b", "c"], &[]).unwrap(), 1.0);
        assert!((phoneme_error_rate(&["a", "b", "c"], &["a", "b", "d"]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(phoneme_error_rate::<&str>(&[], &["a"]).is_err());
    }

    proptest! {
        #[test]
        fn levenshtein_is_a_metric(
            a in prop::collection::vec(0u8..4, 0..12),
            b in prop::collection::vec(0u8..4, 0..12),
            c in prop::collection::vec(0u8..4, 0..12),
        ) {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            prop_assert_eq!(levenshtein(&a, &a), 0);
        }

        #[test]
        fn pearson_in_range(x in prop::collection::vec(-10.0f64..10.0, 2..20), seed in 0u64..1000) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * ((seed + i as u64) % 7) as f64 - i as f64).collect();
            if let Some(r) = pearson(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn overlap_bounded_by_voiced_time(
            a in prop::collection::vec((0u32..200, 1u32..40), 0..6),
            b in prop::collection::vec((0u32..200, 1u32..40), 0..6),
        ) {
            let mk = |c, v: &Vec<(u32, u32)>| v.iter().map(move |&(s, d)| seg(c, s as f64 * 0.1, (s + d) as f64 * 0.1)).collect::<Vec<_>>();
            let mut segs = mk(Channel::One, &a);
            segs.extend(mk(Channel::Two, &b));
            let ev = extract_events(&segs, MIN_SILENCE_S);
            let ov: f64 = event_durations(&ev, EventKind::Overlap, None).iter().sum();
            let va: f64 = event_durations(&ev, EventKind::Ipu, Some(Channel::One)).iter().sum();
            let vb: f64 = event_durations(&ev, EventKind::Ipu, Some(Channel::Two)).iter().sum();
            prop_assert!(ov <= va.min(vb) + 1e-9);
        }
    }

    #[test]
    fn f0_of_constant_tone() {
        let sr = 16_000;
        let t = estimate_f0(&tone(200.0, 1.0, sr), sr, &F0Config::default()).unwrap();
        let s = f0_statistics_from_tracks(&[t]).unwrap();
        assert!((s.mean_hz - 200.0).abs() < 2.0, "{}", s.mean_hz);
        assert!(s.variance_hz2 < 1.0);
        assert!(f0_statistics(&[vec![0.0; 16_000]], sr, &F0Config::default()).is_err());
    }

    #[test]
    fn f0_averages_across_utterances() {
        let sr = 16_000;
        let s = f0_statistics(&[tone(100.0, 0.5, sr), tone(300.0, 0.5, sr)], sr, &F0Config::default()).unwrap();
        assert!((s.mean_hz - 200.0).abs() < 2.0, "{}", s.mean_hz);
        assert_eq!(s.utterances, 2);
    }

    #[test]
    fn laughter_counting() {
        assert_eq!(laughter_stats(&[]).unwrap(), LaughterStats::default());
        let s = laughter_stats(&[(0.0, 1.0), (1.0, 1.5)]).unwrap();
        assert_eq!(s.count, 2);
        assert_eq!(s.total_duration_s, 1.5);
        assert!(laughter_stats(&[(2.0, 1.0)]).is_err());
    }

    #[test]
    fn histogram_csv_and_svg() {
        let h = Histogram::new(&[0.05, 0.15, 0.15, 0.95, 3.0], 10, 0.0, 1.0).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.to_csv().lines().count(), 11);
        let svg = histogram_svg("gaps <s>", "seconds", &[("ref", &h), ("gen", &h)]);
        assert!(svg.starts_with("<svg") && svg.contains("&lt;s&gt;") && svg.trim_end().ends_with("</svg>"));
    }
}

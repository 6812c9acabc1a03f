use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::prepare::classify_undefined;
use crate::corpus::PhonemeMap;
use crate::dialogue_data::{label_by_containment, Channel, InterPausalUnit, IpuLabel, TimedUtterance};
use crate::error::Result;
use crate::eval::{
    backchannel_stats, event_durations, extract_events, laughter_stats, segments_from_flags, speaker_comparison,
    BackchannelStats, EventKind, F0Stats, LaughterStats, SpeakerComparison, TurnEvent, VadSegment,
};
use crate::ipu_classifier::{IpuClassifier, IpuRole};
use crate::s2u::FRAME_HOP_S;
use crate::token_codec::StreamPair;
use crate::util::median;

/// Voice-activity segments of both channels: frames whose content unit is not a silence unit.
pub fn unit_segments(streams: &[StreamPair; 2], map: &PhonemeMap, min_silence_s: f64) -> Vec<VadSegment> {
    Channel::BOTH
        .iter()
        .flat_map(|&c| segments_from_flags(&map.voiced_flags(&streams[c.index()].content), FRAME_HOP_S, c, min_silence_s))
        .collect()
}

/// IPUs of a unit-stream dialogue, unlabelled.
pub fn ipus_from_units(
    streams: &[StreamPair; 2],
    speakers: &(String, String),
    map: &PhonemeMap,
    min_silence_s: f64,
) -> [Vec<InterPausalUnit>; 2] {
    let mut out: [Vec<InterPausalUnit>; 2] = [Vec::new(), Vec::new()];
    for seg in unit_segments(streams, map, min_silence_s) {
        let speaker = if seg.channel == Channel::One { &speakers.0 } else { &speakers.1 };
        out[seg.channel.index()].push(InterPausalUnit {
            channel: seg.channel,
            start_s: seg.start_s,
            end_s: seg.end_s,
            members: vec![TimedUtterance {
                channel: seg.channel,
                speaker_id: speaker.clone(),
                start_s: seg.start_s,
                end_s: seg.end_s,
                text: String::new(),
                phonemes: Vec::new(),
            }],
            label: IpuLabel::UndefinedIpu,
        });
    }
    out
}

/// Runs of the laughter unit as `(start_s, end_s)`.
pub fn laughter_intervals(content: &[u32], map: &PhonemeMap) -> Vec<(f64, f64)> {
    let Some(lau) = map.laughter_unit() else { return Vec::new() };
    let mut out = Vec::new();
    let mut t = 0;
    while t < content.len() {
        if content[t] == lau {
            let s = t;
            while t < content.len() && content[t] == lau {
                t += 1;
            }
            out.push((s as f64 * FRAME_HOP_S, t as f64 * FRAME_HOP_S));
        } else {
            t += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemStats {
    pub dialogues: usize,
    pub backchannel: BackchannelStats,
    pub event_counts: BTreeMap<String, usize>,
    pub event_medians_s: BTreeMap<String, Option<f64>>,
    pub laughter: LaughterStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemAnalysis {
    pub stats: SystemStats,
    pub events: Vec<TurnEvent>,
    /// metric -> speaker -> value
    pub per_speaker: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Turn-taking statistics of a set of two-channel unit streams. IPUs are
/// labelled by containment, then by the classifier.
pub fn analyze_system(
    units: &BTreeMap<String, [StreamPair; 2]>,
    speakers: &BTreeMap<String, (String, String)>,
    map: &PhonemeMap,
    classifier: &IpuClassifier,
    min_silence_s: f64,
) -> Result<SystemAnalysis> {
    let mut roles: Vec<(IpuRole, f64)> = Vec::new();
    let mut by_speaker_roles: BTreeMap<String, Vec<(IpuRole, f64)>> = BTreeMap::new();
    let mut events = Vec::new();
    let mut by_speaker_events: BTreeMap<String, Vec<TurnEvent>> = BTreeMap::new();
    let mut laughter = Vec::new();
    let mut dialogues = 0;
    for (id, streams) in units {
        let Some(pair) = speakers.get(id) else {
            log::warn!("{id}: no speaker pair known; skipped");
            continue;
        };
        dialogues += 1;
        let mut ipus = ipus_from_units(streams, pair, map, min_silence_s);
        label_by_containment(&mut ipus);
        classify_undefined(&mut ipus, streams, classifier)?;
        for ipu in ipus.iter().flatten() {
            let role = if ipu.label == IpuLabel::ListenerIpu { IpuRole::Listener } else { IpuRole::Speaker };
            roles.push((role, ipu.duration()));
            by_speaker_roles.entry(ipu.speaker_id().to_string()).or_default().push((role, ipu.duration()));
        }
        let evs = extract_events(&unit_segments(streams, map, min_silence_s), min_silence_s);
        for e in &evs {
            let s = if e.channel == Channel::One { &pair.0 } else { &pair.1 };
            by_speaker_events.entry(s.clone()).or_default().push(*e);
        }
        events.extend(evs);
        for s in streams {
            laughter.extend(laughter_intervals(&s.content, map));
        }
    }
    let backchannel = backchannel_stats(&roles)?;
    let mut per_speaker: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (spk, r) in &by_speaker_roles {
        let b = backchannel_stats(r)?;
        per_speaker.entry("backchannel_freq_ratio".into()).or_default().insert(spk.clone(), b.ratio_freq);
        per_speaker.entry("backchannel_dur_ratio".into()).or_default().insert(spk.clone(), b.ratio_dur);
    }
    for (spk, evs) in &by_speaker_events {
        for k in EventKind::ALL {
            if let Some(m) = median(&event_durations(evs, k, None)) {
                per_speaker.entry(format!("{}_median_s", k.name())).or_default().insert(spk.clone(), m);
            }
        }
    }
    let stats = SystemStats {
        dialogues,
        backchannel,
        event_counts: EventKind::ALL
            .iter()
            .map(|&k| (k.name().to_string(), event_durations(&events, k, None).len()))
            .collect(),
        event_medians_s: EventKind::ALL
            .iter()
            .map(|&k| (k.name().to_string(), median(&event_durations(&events, k, None))))
            .collect(),
        laughter: laughter_stats(&laughter)?,
    };
    Ok(SystemAnalysis { stats, events, per_speaker })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRow {
    pub metric: String,
    pub comparison: SpeakerComparison,
}

/// Per-speaker comparison for each metric, over the speakers present in both systems.
pub fn speaker_rows(
    reference: &BTreeMap<String, BTreeMap<String, f64>>,
    generated: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<Vec<SpeakerRow>> {
    let mut rows = Vec::new();
    for (metric, r) in reference {
        let Some(g) = generated.get(metric) else { continue };
        let common: Vec<&String> = r.keys().filter(|k| g.contains_key(*k)).collect();
        if common.is_empty() {
            continue;
        }
        let pick = |m: &BTreeMap<String, f64>| common.iter().map(|k| ((*k).clone(), m[*k])).collect::<BTreeMap<_, _>>();
        rows.push(SpeakerRow { metric: metric.clone(), comparison: speaker_comparison(&pick(r), &pick(g))? });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub corpus: Option<f64>,
    pub generated: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    /// Injected backchannels over corpus IPUs, in percent.
    pub injected_backchannel_ratio: Option<f64>,
    pub corpus: SystemStats,
    pub generated: Option<SystemStats>,
    /// PER of the corpus units decoded through the phoneme map.
    pub per_ground_truth: Option<f64>,
    /// PER of utterances generated one by one without context.
    pub per_tts: Option<f64>,
    pub tts_utterances: usize,
    pub speakers: Vec<SpeakerRow>,
    pub f0_corpus: BTreeMap<String, F0Stats>,
    pub f0_generated: BTreeMap<String, F0Stats>,
    pub metrics: Vec<MetricRow>,
}

impl EvaluationSummary {
    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("metric,corpus,generated\n");
        for m in &self.metrics {
            s.push_str(&format!("{},{},{}\n", m.metric, super::csv_number(m.corpus), super::csv_number(m.generated)));
        }
        s
    }

    pub fn speakers_csv(&self) -> String {
        let mut s = String::from("metric,speakers,mae,r,p_value,significance\n");
        for row in &self.speakers {
            let c = &row.comparison;
            s.push_str(&format!(
                "{},{},{:.6},{},{},{}\n",
                row.metric,
                c.speakers.len(),
                c.mae,
                super::csv_number(c.r),
                super::csv_number(c.p_value),
                c.significance_marker()
            ));
        }
        s
    }
}

pub fn metric_rows(
    corpus: &SystemStats,
    generated: Option<&SystemStats>,
    injected: Option<f64>,
    per: (Option<f64>, Option<f64>),
) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let mut push = |metric: String, f: &dyn Fn(&SystemStats) -> Option<f64>| {
        rows.push(MetricRow { metric, corpus: f(corpus), generated: generated.and_then(f) });
    };
    for k in EventKind::ALL {
        let name = k.name();
        push(format!("{name}_count"), &|s: &SystemStats| s.event_counts.get(name).map(|&c| c as f64));
        push(format!("{name}_median_s"), &|s: &SystemStats| s.event_medians_s.get(name).copied().flatten());
    }
    push("backchannel_freq_ratio".into(), &|s: &SystemStats| Some(s.backchannel.ratio_freq));
    push("backchannel_dur_ratio".into(), &|s: &SystemStats| Some(s.backchannel.ratio_dur));
    push("laughter_count".into(), &|s: &SystemStats| Some(s.laughter.count as f64));
    push("laughter_duration_s".into(), &|s: &SystemStats| Some(s.laughter.total_duration_s));
    rows.push(MetricRow { metric: "injected_backchannel_freq_ratio".into(), corpus: injected, generated: None });
    rows.push(MetricRow { metric: "per".into(), corpus: per.0, generated: per.1 });
    rows
}

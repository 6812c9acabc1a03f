//! Synthetic two-channel dialogue corpus with an invertible phoneme-to-unit map.
//!
//! Silence is rendered as alternating runs of dedicated noise units. Turns that
//! draw a backchannel contain the cue word [`BACKCHANNEL_CUE`] and the listener
//! answers shortly after it; turns that start in overlap open with
//! [`OVERLAP_OPENER`], as do some of the others. Neither reserved word occurs
//! anywhere else.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue_data::{Channel, TimedUtterance, TranscriptLine};
use crate::error::{Error, Result};
use crate::s2u::{PitchQuantizer, SpeakerPitchStats, UnitRecord, FRAME_HOP_S};
use crate::token_codec::LAUGHTER_SYMBOL;
use crate::util::{hash_parts, hash_str};

/// Phoneme inventory; the reserved words below use the first four symbols.
pub const PHONEMES: [&str; 39] = [
    "n", "e", "a", "N", "i", "u", "o", "k", "s", "t", "h", "m", "y", "r", "w", "g", "z", "d", "b", "p", "f", "j",
    "q", "ky", "gy", "sh", "ch", "ts", "ny", "hy", "my", "ry", "by", "py", "dy", "ty", "zy", "fy", "v",
];
pub const BACKCHANNEL_CUE: [&str; 2] = ["n", "e"];
pub const OVERLAP_OPENER: [&str; 2] = ["a", "N"];
pub const BACKCHANNEL_WORDS: [&[&str]; 3] = [&["u", "N"], &["h", "a", "i"], &["s", "o", "u"]];

const VOICELESS: [&str; 15] = ["k", "s", "t", "h", "p", "f", "q", "sh", "ch", "ts", "ky", "hy", "py", "ty", "fy"];
const LAUGHTER_FRAMES: usize = 20;
const LEAD_FRAMES: usize = 10;
/// Minimum same-channel silence between two IPUs, in frames (a little over 200 ms).
const IPU_SEPARATION: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusSpec {
    pub phoneme_count: usize,
    pub speakers: usize,
    pub dialogues: usize,
    pub utterances_per_dialogue: usize,
    pub backchannel_rate: f64,
    pub overlap_rate: f64,
    /// Among non-overlapping transitions, probability that the other speaker takes the turn.
    pub switch_rate: f64,
    pub laughter_rate: f64,
    /// Probability that a turn not starting in overlap still opens with the overlap opener.
    pub opener_rate: f64,
    pub content_units: u32,
    pub silence_run_frames: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub seed: u64,
    pub map_seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            phoneme_count: 39,
            speakers: 8,
            dialogues: 40,
            utterances_per_dialogue: 10,
            backchannel_rate: 0.2,
            overlap_rate: 0.3,
            switch_rate: 0.75,
            laughter_rate: 0.05,
            opener_rate: 0.3,
            content_units: 64,
            silence_run_frames: 5,
            min_phonemes: 3,
            max_phonemes: 8,
            seed: 1,
            map_seed: 2,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("backchannel_rate", self.backchannel_rate),
            ("overlap_rate", self.overlap_rate),
            ("switch_rate", self.switch_rate),
            ("laughter_rate", self.laughter_rate),
            ("opener_rate", self.opener_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::input(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if !(16..=PHONEMES.len()).contains(&self.phoneme_count) {
            return Err(Error::input(format!("phoneme_count must lie in 16..={}", PHONEMES.len())));
        }
        if self.speakers < 2 || self.dialogues == 0 || self.utterances_per_dialogue == 0 {
            return Err(Error::input("need at least 2 speakers, 1 dialogue and 1 utterance per dialogue"));
        }
        if self.content_units < 32 || (self.content_units as usize) < self.phoneme_count + 3 {
            return Err(Error::input("content_units must be >= 32 and leave room for every phoneme, laughter and 2 noise units"));
        }
        if self.silence_run_frames == 0 || self.min_phonemes == 0 || self.max_phonemes < self.min_phonemes {
            return Err(Error::input("invalid silence run or utterance length range"));
        }
        if self.max_phonemes + 2 > self.phoneme_count - 4 {
            return Err(Error::input("max_phonemes too large for the phoneme inventory"));
        }
        Ok(())
    }

    pub fn phonemes(&self) -> Vec<String> {
        PHONEMES[..self.phoneme_count].iter().map(|s| s.to_string()).collect()
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        (0..self.speakers).map(|i| format!("spk{i:02}")).collect()
    }
}

/// Labels of content units. The synthetic corpus uses a bijection between
/// phonemes (plus laughter) and units; a k-means codebook may map several
/// units to one phoneme. Silence units carry no label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhonemeMap {
    pub n_content: u32,
    pub labels: BTreeMap<u32, String>,
    pub silence_units: Vec<u32>,
}

impl PhonemeMap {
    pub const DEFAULT_SILENCE: [u32; 2] = [0, 1];

    pub fn seeded(phonemes: &[String], n_content: u32, seed: u64) -> Result<Self> {
        let mut free: Vec<u32> = (2..n_content).collect();
        if free.len() < phonemes.len() + 1 {
            return Err(Error::input("not enough content units for the phoneme set"));
        }
        free.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut labels = BTreeMap::new();
        for (p, u) in phonemes.iter().chain(std::iter::once(&LAUGHTER_SYMBOL.to_string())).zip(free) {
            labels.insert(u, p.clone());
        }
        Ok(PhonemeMap { n_content, labels, silence_units: Self::DEFAULT_SILENCE.to_vec() })
    }

    /// Lowest unit labelled with `phoneme`.
    pub fn unit(&self, phoneme: &str) -> Option<u32> {
        self.labels.iter().find(|(_, p)| p.as_str() == phoneme).map(|(&u, _)| u)
    }

    pub fn label(&self, unit: u32) -> Option<&str> {
        self.labels.get(&unit).map(String::as_str)
    }

    pub fn is_silence(&self, unit: u32) -> bool {
        self.silence_units.contains(&unit)
    }

    pub fn laughter_unit(&self) -> Option<u32> {
        self.unit(LAUGHTER_SYMBOL)
    }

    /// Phonemes spoken in a unit stream: runs collapsed, silence and unmapped units dropped.
    pub fn decode(&self, content: &[u32]) -> Vec<String> {
        let mut out = Vec::new();
        let mut prev = None;
        for &u in content {
            if prev != Some(u) {
                if let Some(p) = self.label(u) {
                    out.push(p.to_string());
                }
            }
            prev = Some(u);
        }
        out
    }

    pub fn voiced_flags(&self, content: &[u32]) -> Vec<bool> {
        content.iter().map(|&u| !self.is_silence(u)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub channel: Channel,
    pub start_s: f64,
    pub end_s: f64,
}

/// Ground truth that the pipeline never sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub dialogue_id: String,
    pub backchannels: Vec<LabeledSpan>,
    pub laughter: Vec<LabeledSpan>,
    pub overlaps: usize,
    pub turns: usize,
}

/// Frame labels for the feature-based unit extraction path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTrack {
    pub dialogue_id: String,
    pub channel: Channel,
    pub speaker_id: String,
    pub phonemes: Vec<Option<String>>,
    pub f0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub spec: SyntheticCorpusSpec,
    pub phoneme_map: PhonemeMap,
    pub pitch_stats: Vec<SpeakerPitchStats>,
    pub transcripts: Vec<TranscriptLine>,
    pub units: Vec<UnitRecord>,
    pub frames: Vec<FrameTrack>,
    pub truth: Vec<TruthRecord>,
}

pub fn phoneme_frames(phoneme: &str, speaker_index: usize, map_seed: u64) -> usize {
    if phoneme == LAUGHTER_SYMBOL {
        return LAUGHTER_FRAMES;
    }
    let base = 4 + (hash_parts(&[map_seed, hash_str(phoneme)]) % 5) as usize;
    (base + speaker_index % 3).saturating_sub(1).max(3)
}

pub fn is_voiced(phoneme: &str) -> bool {
    phoneme != LAUGHTER_SYMBOL && !VOICELESS.contains(&phoneme)
}

/// Pitch bin of the i-th phoneme of an utterance: a falling contour.
fn pitch_bin(phoneme: &str, index: usize) -> u32 {
    if is_voiced(phoneme) {
        24u32.saturating_sub(2 * index as u32).max(4)
    } else {
        0
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Relation {
    Overlap,
    Switch,
    Same,
}

struct Speech {
    channel: usize,
    start: usize,
    phonemes: Vec<String>,
    backchannel: bool,
}

struct DialogueBuilder<'a> {
    spec: &'a SyntheticCorpusSpec,
    speaker_index: [usize; 2],
    rng: ChaCha8Rng,
    pool: Vec<String>,
}

impl DialogueBuilder<'_> {
    fn frames(&self, channel: usize, phonemes: &[String]) -> usize {
        phonemes.iter().map(|p| phoneme_frames(p, self.speaker_index[channel], self.spec.map_seed)).sum()
    }

    fn sentence(&mut self, len: usize) -> Vec<String> {
        self.pool.choose_multiple(&mut self.rng, len).cloned().collect()
    }

    /// First point of the channel's silence grid at or after `t`, with the
    /// grid starting at `silence_start`.
    fn grid_at_or_after(&self, silence_start: usize, t: usize) -> usize {
        let r = self.spec.silence_run_frames;
        let t = t.max(silence_start);
        silence_start + (t - silence_start).div_ceil(r) * r
    }
}

fn cue_end_offset(phonemes: &[String], frames: impl Fn(&str) -> usize) -> Option<usize> {
    let pos = phonemes.windows(2).position(|w| w[0] == BACKCHANNEL_CUE[0] && w[1] == BACKCHANNEL_CUE[1])?;
    Some(phonemes[..pos + 2].iter().map(|p| frames(p)).sum())
}

/// Generate the corpus. Deterministic given the spec.
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let phonemes = spec.phonemes();
    let map = PhonemeMap::seeded(&phonemes, spec.content_units, spec.map_seed)?;
    let speakers = spec.speaker_ids();
    let quantizer = PitchQuantizer::default();
    let pitch_stats: Vec<SpeakerPitchStats> = speakers
        .iter()
        .enumerate()
        .map(|(i, s)| SpeakerPitchStats {
            speaker_id: s.clone(),
            mean_log_f0: (110.0 + 130.0 * i as f64 / (spec.speakers - 1) as f64).ln(),
            std_log_f0: 0.2,
        })
        .collect();
    let reserved: Vec<&str> = BACKCHANNEL_CUE.iter().chain(OVERLAP_OPENER.iter()).copied().collect();
    let pool: Vec<String> = phonemes.iter().filter(|p| !reserved.contains(&p.as_str())).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut corpus = SyntheticCorpus {
        spec: spec.clone(),
        phoneme_map: map.clone(),
        pitch_stats: pitch_stats.clone(),
        transcripts: Vec::new(),
        units: Vec::new(),
        frames: Vec::new(),
        truth: Vec::new(),
    };

    for d in 0..spec.dialogues {
        let dialogue_id = format!("dlg{d:03}");
        let pair: Vec<usize> = (0..spec.speakers).collect::<Vec<_>>().choose_multiple(&mut rng, 2).copied().collect();
        let mut b = DialogueBuilder {
            spec,
            speaker_index: [pair[0], pair[1]],
            rng: ChaCha8Rng::seed_from_u64(hash_parts(&[spec.seed, d as u64])),
            pool: pool.clone(),
        };
        let n_turns = spec.utterances_per_dialogue;

        // Plan speakers, relations and backchannels.
        let mut channels = vec![b.rng.gen_range(0..2usize)];
        let mut relations = Vec::new();
        let mut wants_bc = Vec::new();
        for n in 0..n_turns {
            let bc = b.rng.gen_bool(spec.backchannel_rate);
            wants_bc.push(bc);
            if n + 1 < n_turns {
                let rel = if !bc && b.rng.gen_bool(spec.overlap_rate) {
                    Relation::Overlap
                } else if b.rng.gen_bool(spec.switch_rate) {
                    Relation::Switch
                } else {
                    Relation::Same
                };
                relations.push(rel);
                let c = channels[n];
                channels.push(if rel == Relation::Same { c } else { 1 - c });
            }
        }

        let mut speech: Vec<Speech> = Vec::new();
        let mut last_end = [0usize; 2];
        let mut overlaps = 0;
        let mut opener_next = false;
        let mut a_n = LEAD_FRAMES;
        let mut prev_end = 0;
        for n in 0..n_turns {
            let c = channels[n];
            let l = 1 - c;
            let len = b.rng.gen_range(spec.min_phonemes..=spec.max_phonemes);
            let mut ph = b.sentence(len);
            let opens = opener_next || (n > 0 && b.rng.gen_bool(spec.opener_rate));
            if opens {
                let mut p: Vec<String> = OVERLAP_OPENER.iter().map(|s| s.to_string()).collect();
                p.extend(ph);
                ph = p;
            }
            if opener_next {
                // An overlapping turn must outlast the one it interrupts.
                let mut extra = b.pool.iter().filter(|p| !ph.contains(p)).cloned().collect::<Vec<_>>();
                extra.shuffle(&mut b.rng);
                while a_n + b.frames(c, &ph) < prev_end + IPU_SEPARATION + 15 {
                    let Some(x) = extra.pop() else { break };
                    ph.push(x);
                }
            }
            if wants_bc[n] {
                let at = 1.min(ph.len());
                let at = if opens { at + 2 } else { at };
                for (k, cue) in BACKCHANNEL_CUE.iter().enumerate() {
                    ph.insert(at + k, cue.to_string());
                }
            }
            let laugh = b.rng.gen_bool(spec.laughter_rate);

            // Place the backchannel, lengthening the turn until it fits inside.
            let mut bc_speech = None;
            if wants_bc[n] {
                let word: Vec<String> =
                    BACKCHANNEL_WORDS.choose(&mut b.rng).unwrap().iter().map(|s| s.to_string()).collect();
                let word_len = b.frames(l, &word);
                let cue_end = a_n + cue_end_offset(&ph, |p| phoneme_frames(p, b.speaker_index[c], spec.map_seed)).unwrap();
                let onset = b.grid_at_or_after(last_end[l], (cue_end + 1).max(last_end[l] + IPU_SEPARATION));
                let mut extra = b.pool.iter().filter(|p| !ph.contains(p)).cloned().collect::<Vec<_>>();
                extra.shuffle(&mut b.rng);
                while a_n + b.frames(c, &ph) < onset + word_len + 8 {
                    match extra.pop() {
                        Some(p) => ph.push(p),
                        None => break,
                    }
                }
                if a_n + b.frames(c, &ph) >= onset + word_len + 8 {
                    bc_speech = Some(Speech { channel: l, start: onset, phonemes: word, backchannel: true });
                }
            }
            if laugh {
                ph.push(LAUGHTER_SYMBOL.to_string());
            }
            let b_n = a_n + b.frames(c, &ph);

            // Start of the next turn.
            opener_next = false;
            let mut next_start = None;
            if n + 1 < n_turns {
                let mut rel = relations[n];
                if rel == Relation::Overlap {
                    let next_c = l;
                    let k = b.rng.gen_range(2..=3usize).min(ph.len() - 1);
                    let target = a_n + b.frames(c, &ph[..ph.len() - k]);
                    let lo = (last_end[next_c] + IPU_SEPARATION).max(a_n + 5);
                    let grid: Vec<usize> = (0..)
                        .map(|i| b.grid_at_or_after(last_end[next_c], lo) + i * spec.silence_run_frames)
                        .take_while(|&g| g + 4 <= b_n)
                        .collect();
                    if let Some(&onset) = grid.iter().min_by_key(|&&g| g.abs_diff(target)) {
                        next_start = Some(onset);
                        opener_next = true;
                        overlaps += 1;
                    } else {
                        rel = Relation::Switch;
                        channels[n + 1] = l;
                    }
                }
                let r = spec.silence_run_frames;
                match rel {
                    Relation::Overlap => {}
                    Relation::Switch => next_start = Some(b_n + r * b.rng.gen_range(1..=7)),
                    Relation::Same => next_start = Some(b_n + r * b.rng.gen_range(3..=8)),
                }
            }
            if let Some(bc) = bc_speech {
                last_end[l] = bc.start + b.frames(l, &bc.phonemes);
                speech.push(bc);
            }
            speech.push(Speech { channel: c, start: a_n, phonemes: ph, backchannel: false });
            last_end[c] = b_n;
            prev_end = b_n;
            if let Some(s) = next_start {
                a_n = s;
            }
        }

        let total = speech.iter().map(|s| s.start + b.frames(s.channel, &s.phonemes)).max().unwrap_or(0) + LEAD_FRAMES;
        render_dialogue(&mut corpus, &b, &dialogue_id, &speakers, &speech, total, overlaps, &quantizer)?;
    }
    Ok(corpus)
}

#[allow(clippy::too_many_arguments)]
fn render_dialogue(
    corpus: &mut SyntheticCorpus,
    b: &DialogueBuilder<'_>,
    dialogue_id: &str,
    speakers: &[String],
    speech: &[Speech],
    total: usize,
    overlaps: usize,
    quantizer: &PitchQuantizer,
) -> Result<()> {
    let spec = b.spec;
    let map = &corpus.phoneme_map;
    let mut content = [vec![u32::MAX; total], vec![u32::MAX; total]];
    let mut pitch = [vec![0u32; total], vec![0u32; total]];
    let mut labels: [Vec<Option<String>>; 2] = [vec![None; total], vec![None; total]];
    let mut truth = TruthRecord {
        dialogue_id: dialogue_id.to_string(),
        backchannels: Vec::new(),
        laughter: Vec::new(),
        overlaps,
        turns: speech.iter().filter(|s| !s.backchannel).count(),
    };
    let secs = |f: usize| f as f64 * FRAME_HOP_S;
    for s in speech {
        let ch = Channel::from_index(s.channel);
        let mut t = s.start;
        for (i, p) in s.phonemes.iter().enumerate() {
            let len = phoneme_frames(p, b.speaker_index[s.channel], spec.map_seed);
            let unit = map.unit(p).ok_or_else(|| Error::input(format!("phoneme {p} has no unit")))?;
            for f in t..t + len {
                if content[s.channel][f] != u32::MAX {
                    return Err(Error::input(format!("{dialogue_id}: speech collides on channel {ch} at frame {f}")));
                }
                content[s.channel][f] = unit;
                pitch[s.channel][f] = pitch_bin(p, i);
                labels[s.channel][f] = Some(p.clone());
            }
            if p == LAUGHTER_SYMBOL {
                truth.laughter.push(LabeledSpan { channel: ch, start_s: secs(t), end_s: secs(t + len) });
            }
            t += len;
        }
        if s.backchannel {
            truth.backchannels.push(LabeledSpan { channel: ch, start_s: secs(s.start), end_s: secs(t) });
        }
        corpus.transcripts.push(TranscriptLine {
            dialogue_id: dialogue_id.to_string(),
            utterance: TimedUtterance {
                channel: ch,
                speaker_id: speakers[b.speaker_index[s.channel]].clone(),
                start_s: secs(s.start),
                end_s: secs(t),
                text: s.phonemes.join(" "),
                phonemes: s.phonemes.clone(),
            },
        });
    }
    for c in 0..2 {
        let mut f = 0;
        while f < total {
            if content[c][f] != u32::MAX {
                f += 1;
                continue;
            }
            let mut k = 0;
            while f < total && content[c][f] == u32::MAX {
                content[c][f] = map.silence_units[(k / spec.silence_run_frames) % map.silence_units.len()];
                k += 1;
                f += 1;
            }
        }
        let speaker = &speakers[b.speaker_index[c]];
        let stats = &corpus.pitch_stats[b.speaker_index[c]];
        let f0 = pitch[c].iter().map(|&u| quantizer.dequantize(u, stats)).collect::<Result<Vec<_>>>()?;
        corpus.units.push(UnitRecord {
            dialogue_id: dialogue_id.to_string(),
            channel: Channel::from_index(c),
            content: content[c].clone(),
            pitch: pitch[c].clone(),
        });
        corpus.frames.push(FrameTrack {
            dialogue_id: dialogue_id.to_string(),
            channel: Channel::from_index(c),
            speaker_id: speaker.clone(),
            phonemes: labels[c].clone(),
            f0,
        });
    }
    corpus.truth.push(truth);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue_data::merge_dialogue;

    fn small(bc: f64, ov: f64) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec { dialogues: 6, backchannel_rate: bc, overlap_rate: ov, ..Default::default() }
    }

    fn dialogue_utts(c: &SyntheticCorpus, id: &str) -> Vec<TimedUtterance> {
        c.transcripts.iter().filter(|t| t.dialogue_id == id).map(|t| t.utterance.clone()).collect()
    }

    #[test]
    fn deterministic() {
        let a = generate_corpus(&small(0.2, 0.3)).unwrap();
        let b = generate_corpus(&small(0.2, 0.3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_map_recovers_every_utterance() {
        let c = generate_corpus(&small(0.3, 0.3)).unwrap();
        for t in &c.transcripts {
            let u = &t.utterance;
            let rec = c.units.iter().find(|r| r.dialogue_id == t.dialogue_id && r.channel == u.channel).unwrap();
            let (s, e) = ((u.start_s * 50.0).round() as usize, (u.end_s * 50.0).round() as usize);
            assert_eq!(c.phoneme_map.decode(&rec.content[s..e]), u.phonemes);
        }
    }

    #[test]
    fn no_backchannels_at_rate_zero() {
        let c = generate_corpus(&small(0.0, 0.3)).unwrap();
        assert!(c.truth.iter().all(|t| t.backchannels.is_empty()));
        assert!(c.transcripts.iter().all(|t| !t.utterance.phonemes.windows(2).any(|w| w[0] == "n" && w[1] == "e")));
    }

    #[test]
    fn every_pair_overlaps_at_rate_one() {
        let c = generate_corpus(&SyntheticCorpusSpec { laughter_rate: 0.0, ..small(0.0, 1.0) }).unwrap();
        for t in &c.truth {
            let utts = dialogue_utts(&c, &t.dialogue_id);
            for w in utts.windows(2) {
                assert_ne!(w[0].channel, w[1].channel);
                assert!(w[1].start_s < w[0].end_s, "{}: {:?} then {:?}", t.dialogue_id, w[0], w[1]);
            }
        }
    }

    #[test]
    fn channels_merge_into_separate_ipus() {
        let c = generate_corpus(&small(0.4, 0.4)).unwrap();
        for t in &c.truth {
            let utts = dialogue_utts(&c, &t.dialogue_id);
            let ipus = merge_dialogue(&utts, 0.2).unwrap();
            assert_eq!(ipus[0].len() + ipus[1].len(), utts.len(), "{}", t.dialogue_id);
            let mut starts: Vec<f64> = utts.iter().filter(|u| !u.phonemes.is_empty()).map(|u| u.start_s).collect();
            starts.dedup();
            assert_eq!(starts.len(), utts.len());
        }
    }

    #[test]
    fn backchannels_sit_inside_the_speakers_turn() {
        let c = generate_corpus(&small(1.0, 0.0)).unwrap();
        let mut n = 0;
        for t in &c.truth {
            let utts = dialogue_utts(&c, &t.dialogue_id);
            for bc in &t.backchannels {
                n += 1;
                assert!(utts
                    .iter()
                    .any(|u| u.channel != bc.channel && u.start_s <= bc.start_s && bc.end_s <= u.end_s));
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn silence_runs_alternate() {
        let c = generate_corpus(&small(0.2, 0.3)).unwrap();
        let r = &c.units[0];
        assert_eq!(&r.content[..10], &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert!(r.pitch[..10].iter().all(|&p| p == 0));
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticCorpusSpec { overlap_rate: 1.5, ..Default::default() }.validate().is_err());
        assert!(SyntheticCorpusSpec { content_units: 20, ..Default::default() }.validate().is_err());
        assert!(SyntheticCorpusSpec::default().validate().is_ok());
    }
}

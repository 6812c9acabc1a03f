//! Two-channel transcripts, inter-pausal units and written dialogues.
//!
//! A spoken-dialogue transcript carries timestamps and listener responses that
//! a written dialogue does not. This module merges same-channel utterances into
//! inter-pausal units (IPUs), labels IPUs by temporal containment, and drops
//! listener IPUs to produce the written form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default silence below which successive same-channel utterances merge.
pub const DEFAULT_GAP_THRESHOLD_S: f64 = 0.2;

/// Audio channel of a two-party recording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Channel {
    One,
    Two,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::One, Channel::Two];

    /// Zero-based index (0 for channel 1).
    pub fn index(self) -> usize {
        match self {
            Channel::One => 0,
            Channel::Two => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Channel::One
        } else {
            Channel::Two
        }
    }

    pub fn other(self) -> Self {
        match self {
            Channel::One => Channel::Two,
            Channel::Two => Channel::One,
        }
    }
}

impl TryFrom<u8> for Channel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Channel::One),
            2 => Ok(Channel::Two),
            _ => Err(format!("channel must be 1 or 2, got {v}")),
        }
    }
}

impl From<Channel> for u8 {
    fn from(c: Channel) -> u8 {
        c.index() as u8 + 1
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedUtterance {
    pub channel: Channel,
    pub speaker_id: String,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub phonemes: Vec<String>,
}

impl TimedUtterance {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// One line of a transcript file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub dialogue_id: String,
    #[serde(flatten)]
    pub utterance: TimedUtterance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IpuLabel {
    SpeakerIpu,
    ListenerIpu,
    UndefinedIpu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterPausalUnit {
    pub channel: Channel,
    pub start_s: f64,
    pub end_s: f64,
    pub members: Vec<TimedUtterance>,
    pub label: IpuLabel,
}

impl InterPausalUnit {
    fn singleton(u: TimedUtterance) -> Self {
        InterPausalUnit {
            channel: u.channel,
            start_s: u.start_s,
            end_s: u.end_s,
            members: vec![u],
            label: IpuLabel::UndefinedIpu,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn speaker_id(&self) -> &str {
        &self.members[0].speaker_id
    }

    /// Concatenated phonemes of all member utterances.
    pub fn phonemes(&self) -> Vec<String> {
        self.members.iter().flat_map(|m| m.phonemes.iter().cloned()).collect()
    }

    /// True if `self` spans `other` (boundaries inclusive).
    pub fn contains(&self, other: &InterPausalUnit) -> bool {
        self.start_s <= other.start_s && other.end_s <= self.end_s
    }

    fn same_span(&self, other: &InterPausalUnit) -> bool {
        self.start_s == other.start_s && self.end_s == other.end_s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker_id: String,
    pub phonemes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrittenDialogue {
    pub speaker_pair: (String, String),
    pub turns: Vec<Turn>,
}

impl WrittenDialogue {
    /// Channel that carries the given speaker.
    pub fn channel_of(&self, speaker_id: &str) -> Option<Channel> {
        if self.speaker_pair.0 == speaker_id {
            Some(Channel::One)
        } else if self.speaker_pair.1 == speaker_id {
            Some(Channel::Two)
        } else {
            None
        }
    }

    pub fn speaker_of(&self, channel: Channel) -> &str {
        match channel {
            Channel::One => &self.speaker_pair.0,
            Channel::Two => &self.speaker_pair.1,
        }
    }
}

/// Source timing of a written-dialogue turn, kept apart from the turn itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnTiming {
    pub channel: Channel,
    pub start_s: f64,
    pub end_s: f64,
}

/// Merge one channel's utterances into IPUs.
///
/// Utterances must be sorted by start time and must not overlap.
pub fn merge_into_ipus(
    utterances: &[TimedUtterance],
    gap_threshold_s: f64,
) -> Result<Vec<InterPausalUnit>> {
    for u in utterances {
        if !(u.end_s > u.start_s) || u.start_s < 0.0 {
            return Err(Error::input(format!(
                "utterance [{}, {}] on channel {} has a non-positive span",
                u.start_s, u.end_s, u.channel
            )));
        }
    }
    for w in utterances.windows(2) {
        if w[0].channel != w[1].channel {
            return Err(Error::input("merge_into_ipus expects a single channel"));
        }
        if w[1].start_s < w[0].start_s {
            return Err(Error::input(format!(
                "utterances not sorted by start time on channel {}",
                w[0].channel
            )));
        }
    }
    let ipus = utterances.iter().cloned().map(InterPausalUnit::singleton).collect();
    merge_ipus(ipus, gap_threshold_s)
}

/// Merge already-formed IPUs of one channel. Idempotent.
pub fn merge_ipus(ipus: Vec<InterPausalUnit>, gap_threshold_s: f64) -> Result<Vec<InterPausalUnit>> {
    let mut out: Vec<InterPausalUnit> = Vec::with_capacity(ipus.len());
    for ipu in ipus {
        match out.last_mut() {
            Some(prev) => {
                if ipu.start_s < prev.end_s {
                    return Err(Error::input(format!(
                        "overlapping utterances on channel {}: [{}, {}] and [{}, {}]",
                        ipu.channel, prev.start_s, prev.end_s, ipu.start_s, ipu.end_s
                    )));
                }
                if ipu.start_s - prev.end_s < gap_threshold_s {
                    prev.end_s = ipu.end_s;
                    prev.members.extend(ipu.members);
                    prev.label = IpuLabel::UndefinedIpu;
                } else {
                    out.push(ipu);
                }
            }
            None => out.push(ipu),
        }
    }
    Ok(out)
}

/// Split a dialogue's utterances by channel, sort them and merge each channel.
pub fn merge_dialogue(
    utterances: &[TimedUtterance],
    gap_threshold_s: f64,
) -> Result<[Vec<InterPausalUnit>; 2]> {
    let mut per: [Vec<TimedUtterance>; 2] = [Vec::new(), Vec::new()];
    for u in utterances {
        per[u.channel.index()].push(u.clone());
    }
    for ch in per.iter_mut() {
        ch.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    }
    let [a, b] = per;
    Ok([merge_into_ipus(&a, gap_threshold_s)?, merge_into_ipus(&b, gap_threshold_s)?])
}

/// Label IPUs by cross-channel containment.
///
/// An IPU that spans an IPU of the other channel becomes a speaker IPU and the
/// spanned one a listener IPU. Identical spans are left undefined, as is every
/// IPU that takes part in no containment.
pub fn label_by_containment(ipus: &mut [Vec<InterPausalUnit>; 2]) {
    for ch in ipus.iter_mut() {
        for ipu in ch.iter_mut() {
            ipu.label = IpuLabel::UndefinedIpu;
        }
    }
    let (first, second) = ipus.split_at_mut(1);
    let (ch1, ch2) = (&mut first[0], &mut second[0]);
    for a in 0..ch1.len() {
        for b in 0..ch2.len() {
            if ch1[a].same_span(&ch2[b]) {
                continue;
            }
            if ch1[a].contains(&ch2[b]) {
                ch1[a].label = IpuLabel::SpeakerIpu;
                ch2[b].label = IpuLabel::ListenerIpu;
            } else if ch2[b].contains(&ch1[a]) {
                ch2[b].label = IpuLabel::SpeakerIpu;
                ch1[a].label = IpuLabel::ListenerIpu;
            }
        }
    }
}

/// Speaker carried by each channel, taken from the first utterance seen on it.
pub fn speaker_pair(utterances: &[TimedUtterance]) -> Result<(String, String)> {
    let mut pair: [Option<&str>; 2] = [None, None];
    for u in utterances {
        let slot = &mut pair[u.channel.index()];
        match slot {
            Some(s) if *s != u.speaker_id => {
                return Err(Error::input(format!(
                    "channel {} carries two speakers: {} and {}",
                    u.channel, s, u.speaker_id
                )))
            }
            Some(_) => {}
            None => *slot = Some(&u.speaker_id),
        }
    }
    match pair {
        [Some(a), Some(b)] => Ok((a.to_string(), b.to_string())),
        _ => Err(Error::input("dialogue needs utterances on both channels")),
    }
}

/// Drop listener IPUs and emit the remaining IPUs as turns in start-time order.
pub fn build_written_dialogue(
    ipus: &[Vec<InterPausalUnit>; 2],
    speaker_pair: (String, String),
) -> Result<(WrittenDialogue, Vec<TurnTiming>)> {
    let mut kept: Vec<&InterPausalUnit> = Vec::new();
    for ipu in ipus.iter().flatten() {
        match ipu.label {
            IpuLabel::UndefinedIpu => {
                return Err(Error::precondition(format!(
                    "undefined IPU [{:.3}, {:.3}] on channel {} must be classified first",
                    ipu.start_s, ipu.end_s, ipu.channel
                )))
            }
            IpuLabel::ListenerIpu => {}
            IpuLabel::SpeakerIpu => kept.push(ipu),
        }
    }
    kept.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.channel.cmp(&b.channel)));
    let dialogue = WrittenDialogue {
        turns: kept
            .iter()
            .map(|ipu| Turn { speaker_id: ipu.speaker_id().to_string(), phonemes: ipu.phonemes() })
            .collect(),
        speaker_pair,
    };
    for t in &dialogue.turns {
        if dialogue.channel_of(&t.speaker_id).is_none() {
            return Err(Error::input(format!("turn speaker {} not in the speaker pair", t.speaker_id)));
        }
    }
    let timings = kept
        .iter()
        .map(|ipu| TurnTiming { channel: ipu.channel, start_s: ipu.start_s, end_s: ipu.end_s })
        .collect();
    Ok((dialogue, timings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(ch: Channel, s: f64, e: f64) -> TimedUtterance {
        let speaker = if ch == Channel::One { "A" } else { "B" };
        TimedUtterance {
            channel: ch,
            speaker_id: speaker.into(),
            start_s: s,
            end_s: e,
            text: String::new(),
            phonemes: vec![format!("p{s}")],
        }
    }

    fn spans(ipus: &[InterPausalUnit]) -> Vec<(f64, f64)> {
        ipus.iter().map(|i| (i.start_s, i.end_s)).collect()
    }

    #[test]
    fn short_gap_merges() {
        let u = [utt(Channel::One, 0.0, 1.0), utt(Channel::One, 1.1, 2.0)];
        let ipus = merge_into_ipus(&u, 0.2).unwrap();
        assert_eq!(spans(&ipus), vec![(0.0, 2.0)]);
        assert_eq!(ipus[0].members.len(), 2);
    }

    #[test]
    fn long_gap_splits() {
        let u = [utt(Channel::One, 0.0, 1.0), utt(Channel::One, 1.3, 2.0)];
        assert_eq!(spans(&merge_into_ipus(&u, 0.2).unwrap()), vec![(0.0, 1.0), (1.3, 2.0)]);
    }

    #[test]
    fn empty_channel() {
        assert!(merge_into_ipus(&[], 0.2).unwrap().is_empty());
    }

    #[test]
    fn overlapping_same_channel_is_an_error() {
        let u = [utt(Channel::One, 0.0, 1.0), utt(Channel::One, 0.5, 2.0)];
        assert!(matches!(merge_into_ipus(&u, 0.2), Err(Error::Input(_))));
    }

    #[test]
    fn merge_is_idempotent() {
        let u = [
            utt(Channel::Two, 0.0, 0.5),
            utt(Channel::Two, 0.6, 0.9),
            utt(Channel::Two, 1.5, 1.7),
            utt(Channel::Two, 1.75, 3.0),
        ];
        let once = merge_into_ipus(&u, 0.2).unwrap();
        let twice = merge_ipus(once.clone(), 0.2).unwrap();
        assert_eq!(once, twice);
        let members: usize = once.iter().map(|i| i.members.len()).sum();
        assert_eq!(members, u.len());
    }

    fn labeled(a: &[(f64, f64)], b: &[(f64, f64)]) -> [Vec<InterPausalUnit>; 2] {
        let ua: Vec<_> = a.iter().map(|&(s, e)| utt(Channel::One, s, e)).collect();
        let ub: Vec<_> = b.iter().map(|&(s, e)| utt(Channel::Two, s, e)).collect();
        let mut ipus = [merge_into_ipus(&ua, 0.2).unwrap(), merge_into_ipus(&ub, 0.2).unwrap()];
        label_by_containment(&mut ipus);
        ipus
    }

    #[test]
    fn containment_labels_speaker_and_listener() {
        let ipus = labeled(&[(2.0, 8.0)], &[(3.0, 4.0)]);
        assert_eq!(ipus[0][0].label, IpuLabel::SpeakerIpu);
        assert_eq!(ipus[1][0].label, IpuLabel::ListenerIpu);
    }

    #[test]
    fn partial_overlap_is_undefined() {
        let ipus = labeled(&[(2.0, 5.0)], &[(4.0, 7.0)]);
        assert_eq!(ipus[0][0].label, IpuLabel::UndefinedIpu);
        assert_eq!(ipus[1][0].label, IpuLabel::UndefinedIpu);
    }

    #[test]
    fn lone_ipu_is_undefined() {
        let ipus = labeled(&[(0.0, 1.0)], &[(3.0, 4.0)]);
        assert!(ipus.iter().flatten().all(|i| i.label == IpuLabel::UndefinedIpu));
    }

    #[test]
    fn shared_boundary_counts_as_containment() {
        let ipus = labeled(&[(2.0, 8.0)], &[(2.0, 4.0)]);
        assert_eq!(ipus[0][0].label, IpuLabel::SpeakerIpu);
        assert_eq!(ipus[1][0].label, IpuLabel::ListenerIpu);
    }

    #[test]
    fn identical_spans_stay_undefined() {
        let ipus = labeled(&[(2.0, 4.0)], &[(2.0, 4.0)]);
        assert!(ipus.iter().flatten().all(|i| i.label == IpuLabel::UndefinedIpu));
    }

    #[test]
    fn backchannel_inside_turn_is_dropped() {
        // A talks, B says a short "hai" inside A's turn, then B takes the floor.
        let mut ipus = labeled(&[(0.0, 3.0)], &[(1.0, 1.3), (3.5, 5.0)]);
        assert_eq!(ipus[1][1].label, IpuLabel::UndefinedIpu);
        ipus[1][1].label = IpuLabel::SpeakerIpu;
        let (d, timings) = build_written_dialogue(&ipus, ("A".into(), "B".into())).unwrap();
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].speaker_id, "A");
        assert_eq!(d.turns[1].speaker_id, "B");
        assert_eq!(timings[1].start_s, 3.5);
    }

    #[test]
    fn residual_undefined_is_precondition_error() {
        let ipus = labeled(&[(0.0, 1.0)], &[(3.0, 4.0)]);
        let err = build_written_dialogue(&ipus, ("A".into(), "B".into())).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn all_listener_gives_empty_dialogue() {
        let mut ipus = labeled(&[(0.0, 1.0)], &[(3.0, 4.0)]);
        for i in ipus.iter_mut().flatten() {
            i.label = IpuLabel::ListenerIpu;
        }
        let (d, _) = build_written_dialogue(&ipus, ("A".into(), "B".into())).unwrap();
        assert!(d.turns.is_empty());
    }

    #[test]
    fn channel_serializes_as_number() {
        let line = TranscriptLine { dialogue_id: "d0".into(), utterance: utt(Channel::Two, 0.0, 1.0) };
        let s = serde_json::to_string(&line).unwrap();
        assert!(s.contains("\"channel\":2"), "{s}");
        let back: TranscriptLine = serde_json::from_str(&s).unwrap();
        assert_eq!(back, line);
        assert!(serde_json::from_str::<TranscriptLine>(&s.replace("\"channel\":2", "\"channel\":3")).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn layout() -> impl Strategy<Value = Vec<(f64, f64)>> {
            prop::collection::vec((0.01f64..1.0, 0.01f64..0.6), 0..20).prop_map(|v| {
                let mut t = 0.0;
                v.into_iter()
                    .map(|(dur, gap)| {
                        let s = t + gap;
                        t = s + dur;
                        (s, t)
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn labels_pair_across_channels(a in layout(), b in layout()) {
                let ipus = labeled(&a, &b);
                for x in ipus.iter().flatten().filter(|i| i.label == IpuLabel::ListenerIpu) {
                    let other = &ipus[x.channel.other().index()];
                    prop_assert!(other.iter().any(|y| y.contains(x) && y.label == IpuLabel::SpeakerIpu));
                }
            }

            #[test]
            fn merge_preserves_members_and_gaps(a in layout()) {
                let u: Vec<_> = a.iter().map(|&(s, e)| utt(Channel::One, s, e)).collect();
                let ipus = merge_into_ipus(&u, 0.2).unwrap();
                let members: Vec<_> = ipus.iter().flat_map(|i| i.members.clone()).collect();
                prop_assert_eq!(&members, &u);
                for w in ipus.windows(2) {
                    prop_assert!(w[1].start_s - w[0].end_s >= 0.2);
                }
                prop_assert_eq!(merge_ipus(ipus.clone(), 0.2).unwrap(), ipus);
            }
        }
    }
}

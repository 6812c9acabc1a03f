//! Boundary modification between consecutive utterances, training-segment
//! slicing, context-reduction augmentation and inference stitching.

use serde::{Deserialize, Serialize};

use crate::dialogue_data::{Channel, TurnTiming, WrittenDialogue};
use crate::error::{Error, Result};
use crate::s2u::FRAME_RATE_HZ;
use crate::token_codec::StreamPair;
use crate::util::round_half_up;

/// Number of context-length variants produced per non-overlapping example.
pub const AUGMENT_VARIANTS: usize = 10;

/// Original and modified boundaries of one utterance. `n` is 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub n: usize,
    pub channel: Channel,
    pub a_s: f64,
    pub b_s: f64,
    pub a_hat_s: f64,
    pub b_hat_s: f64,
}

impl TimelineEntry {
    /// Frame range `[start, end)` covered by the modified boundaries.
    pub fn frames(&self) -> (usize, usize) {
        (seconds_to_frame(self.a_hat_s), seconds_to_frame(self.b_hat_s))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnTimeline {
    pub entries: Vec<TimelineEntry>,
}

impl TurnTimeline {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether utterance `i` (0-based) starts before its predecessor ends.
    pub fn overlaps_previous(&self, i: usize) -> bool {
        i > 0 && self.entries[i - 1].b_s > self.entries[i].a_s
    }
}

/// Seconds to a 50 Hz frame index, rounding halves up.
pub fn seconds_to_frame(s: f64) -> usize {
    round_half_up(s * FRAME_RATE_HZ).max(0) as usize
}

/// Rewrite each inner boundary to `max(b_n, a_{n+1})`, shared by both neighbours.
pub fn modify_boundaries(utterances: &[TurnTiming]) -> Result<TurnTimeline> {
    for (i, w) in utterances.windows(2).enumerate() {
        if w[1].start_s <= w[0].start_s {
            return Err(Error::input(format!(
                "utterance start times must strictly increase (utterance {} starts at {} after {})",
                i + 2,
                w[1].start_s,
                w[0].start_s
            )));
        }
    }
    if let Some(u) = utterances.iter().find(|u| !(u.end_s > u.start_s)) {
        return Err(Error::input(format!("utterance [{}, {}] has non-positive length", u.start_s, u.end_s)));
    }
    let n = utterances.len();
    let mut entries = Vec::with_capacity(n);
    for (i, u) in utterances.iter().enumerate() {
        let a_hat = if i == 0 { u.start_s } else { utterances[i - 1].end_s.max(u.start_s) };
        let b_hat = if i + 1 == n { u.end_s } else { u.end_s.max(utterances[i + 1].start_s) };
        if a_hat > b_hat {
            return Err(Error::input(format!(
                "utterance {} lies inside the span of its predecessor; boundaries are undefined",
                i + 1
            )));
        }
        entries.push(TimelineEntry { n: i + 1, channel: u.channel, a_s: u.start_s, b_s: u.end_s, a_hat_s: a_hat, b_hat_s: b_hat });
    }
    Ok(TurnTimeline { entries })
}

/// One training segment before tokenization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentExample {
    pub n: usize,
    pub utterer: Channel,
    pub phonemes: Vec<String>,
    pub next: Option<(Channel, Vec<String>)>,
    pub context: [StreamPair; 2],
    pub target: [StreamPair; 2],
    pub overlaps_previous: bool,
}

/// Cut both channels' streams into per-utterance targets `[â_n, b̂_n)` with up
/// to `max_context` preceding frames as context.
pub fn slice_training_segments(
    streams: &[StreamPair; 2],
    dialogue: &WrittenDialogue,
    timeline: &TurnTimeline,
    max_context: usize,
) -> Result<Vec<SegmentExample>> {
    if streams[0].len() != streams[1].len() || streams.iter().any(|s| s.content.len() != s.pitch.len()) {
        return Err(Error::input("channel streams differ in length"));
    }
    if dialogue.turns.len() != timeline.len() {
        return Err(Error::input(format!(
            "{} turns but {} timeline entries",
            dialogue.turns.len(),
            timeline.len()
        )));
    }
    let total = streams[0].len();
    let mut out = Vec::with_capacity(timeline.len());
    for (i, entry) in timeline.entries.iter().enumerate() {
        let (start, end) = entry.frames();
        if end > total {
            return Err(Error::input(format!(
                "utterance {} ends at frame {end}, beyond the {total}-frame stream",
                entry.n
            )));
        }
        let ctx_start = start.saturating_sub(max_context);
        let next = dialogue
            .turns
            .get(i + 1)
            .map(|t| (timeline.entries[i + 1].channel, t.phonemes.clone()));
        out.push(SegmentExample {
            n: entry.n,
            utterer: entry.channel,
            phonemes: dialogue.turns[i].phonemes.clone(),
            next,
            context: [streams[0].slice(ctx_start, start), streams[1].slice(ctx_start, start)],
            target: [streams[0].slice(start, end), streams[1].slice(start, end)],
            overlaps_previous: timeline.overlaps_previous(i),
        });
    }
    Ok(out)
}

/// Context lengths used for augmentation: `floor(k * C / 10)` for k = 0..9.
pub fn augment_lengths(max_context: usize) -> Vec<usize> {
    (0..AUGMENT_VARIANTS).map(|k| k * max_context / AUGMENT_VARIANTS).collect()
}

/// Copies of a non-overlapping example with truncated context (most recent
/// frames kept). Overlapping examples get no variants.
pub fn augment_context(example: &SegmentExample, max_context: usize) -> Vec<SegmentExample> {
    if example.overlaps_previous {
        return Vec::new();
    }
    augment_lengths(max_context)
        .into_iter()
        .map(|len| {
            let mut e = example.clone();
            e.context = [example.context[0].tail(len), example.context[1].tail(len)];
            e
        })
        .collect()
}

/// Concatenate generated segments per channel.
pub fn stitch_inference(segments: &[[StreamPair; 2]]) -> Result<[StreamPair; 2]> {
    let mut out = [StreamPair::default(), StreamPair::default()];
    for (i, seg) in segments.iter().enumerate() {
        if seg[0].len() != seg[1].len() || seg.iter().any(|s| s.content.len() != s.pitch.len()) {
            return Err(Error::input(format!("segment {} has mismatched channel lengths", i + 1)));
        }
        out[0].extend(&seg[0]);
        out[1].extend(&seg[1]);
    }
    Ok(out)
}

/// Timeline of a generated dialogue: segments tile the stream back to back.
/// Original and modified boundaries coincide since nothing is known about
/// where each utterance's speech stops inside its segment.
pub fn generated_timeline(channels: &[Channel], lengths: &[usize]) -> Result<TurnTimeline> {
    if channels.len() != lengths.len() {
        return Err(Error::input("one channel per segment required"));
    }
    let mut t = 0usize;
    let entries = channels
        .iter()
        .zip(lengths)
        .enumerate()
        .map(|(i, (&channel, &len))| {
            let a = t as f64 / FRAME_RATE_HZ;
            t += len;
            let b = t as f64 / FRAME_RATE_HZ;
            TimelineEntry { n: i + 1, channel, a_s: a, b_s: b, a_hat_s: a, b_hat_s: b }
        })
        .collect();
    Ok(TurnTimeline { entries })
}

/// Cut stitched streams back into segments using a timeline's modified boundaries.
pub fn split_by_timeline(streams: &[StreamPair; 2], timeline: &TurnTimeline) -> Result<Vec<[StreamPair; 2]>> {
    timeline
        .entries
        .iter()
        .map(|e| {
            let (s, t) = e.frames();
            if t > streams[0].len() || t > streams[1].len() {
                return Err(Error::input(format!("utterance {} extends past the stream", e.n)));
            }
            Ok([streams[0].slice(s, t), streams[1].slice(s, t)])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue_data::Turn;
    use proptest::prelude::*;

    fn tt(channel: Channel, s: f64, e: f64) -> TurnTiming {
        TurnTiming { channel, start_s: s, end_s: e }
    }

    #[test]
    fn overlap_moves_into_previous_segment() {
        let tl = modify_boundaries(&[tt(Channel::One, 0.0, 5.0), tt(Channel::Two, 4.2, 7.0)]).unwrap();
        assert_eq!(tl.entries[0].b_hat_s, 5.0);
        assert_eq!(tl.entries[1].a_hat_s, 5.0);
        assert!(tl.overlaps_previous(1));
    }

    #[test]
    fn silence_becomes_trailing() {
        let tl = modify_boundaries(&[tt(Channel::One, 0.0, 3.0), tt(Channel::Two, 3.8, 7.0)]).unwrap();
        assert_eq!(tl.entries[0].b_hat_s, 3.8);
        assert_eq!(tl.entries[1].a_hat_s, 3.8);
        assert!(!tl.overlaps_previous(1));
        let tl = modify_boundaries(&[tt(Channel::One, 0.0, 3.0), tt(Channel::Two, 3.0, 7.0)]).unwrap();
        assert_eq!(tl.entries[0].b_hat_s, 3.0);
        assert!(!tl.overlaps_previous(1));
    }

    #[test]
    fn end_points_are_kept() {
        let tl = modify_boundaries(&[tt(Channel::One, 0.5, 3.0), tt(Channel::Two, 3.8, 7.0)]).unwrap();
        assert_eq!(tl.entries[0].a_hat_s, 0.5);
        assert_eq!(tl.entries[1].b_hat_s, 7.0);
    }

    #[test]
    fn rejects_bad_order() {
        assert!(modify_boundaries(&[tt(Channel::One, 1.0, 3.0), tt(Channel::Two, 1.0, 4.0)]).is_err());
        assert!(modify_boundaries(&[tt(Channel::One, 1.0, 3.0), tt(Channel::Two, 0.5, 4.0)]).is_err());
        assert!(modify_boundaries(&[tt(Channel::One, 0.0, 9.0), tt(Channel::Two, 1.0, 2.0), tt(Channel::One, 3.0, 4.0)])
            .is_err());
        assert!(modify_boundaries(&[]).unwrap().is_empty());
    }

    #[test]
    fn frame_rounding() {
        assert_eq!(seconds_to_frame(0.35), 18);
        assert_eq!(seconds_to_frame(0.34), 17);
        assert_eq!(seconds_to_frame(0.0), 0);
        assert_eq!(seconds_to_frame(1.0), 50);
    }

    fn dialogue(n: usize) -> WrittenDialogue {
        WrittenDialogue {
            speaker_pair: ("A".into(), "B".into()),
            turns: (0..n)
                .map(|i| Turn { speaker_id: if i % 2 == 0 { "A" } else { "B" }.into(), phonemes: vec![format!("p{i}")] })
                .collect(),
        }
    }

    fn ramp(len: usize, offset: u32) -> StreamPair {
        StreamPair { content: (0..len as u32).map(|i| i + offset).collect(), pitch: vec![1; len] }
    }

    #[test]
    fn slicing_puts_overlap_head_in_previous_target() {
        let tl = modify_boundaries(&[tt(Channel::One, 0.2, 2.0), tt(Channel::Two, 1.5, 3.0)]).unwrap();
        let streams = [ramp(150, 0), ramp(150, 1000)];
        let ex = slice_training_segments(&streams, &dialogue(2), &tl, 50).unwrap();
        // segment 1 covers frames 10..100, which contains channel 2's onset at frame 75
        assert_eq!(ex[0].target[1].content, (1010..1100).collect::<Vec<u32>>());
        assert_eq!(ex[0].context[0].len(), 10);
        assert_eq!(ex[1].context[0].len(), 50);
        assert_eq!(ex[1].target[0].len(), 50);
        assert!(ex[1].overlaps_previous);
        assert_eq!(ex[0].next.as_ref().unwrap().0, Channel::Two);
        assert!(ex[1].next.is_none());
        let short = [ramp(100, 0), ramp(100, 0)];
        assert!(slice_training_segments(&short, &dialogue(2), &tl, 50).is_err());
    }

    #[test]
    fn augmentation_lengths() {
        assert_eq!(augment_lengths(500), (0..10).map(|k| k * 50).collect::<Vec<_>>());
        assert_eq!(augment_lengths(10), (0..10).collect::<Vec<_>>());
        let ex = SegmentExample {
            n: 2,
            utterer: Channel::One,
            phonemes: vec![],
            next: None,
            context: [ramp(500, 0), ramp(500, 0)],
            target: [ramp(3, 0), ramp(3, 0)],
            overlaps_previous: false,
        };
        let aug = augment_context(&ex, 500);
        assert_eq!(aug.iter().map(|e| e.context[0].len()).collect::<Vec<_>>(), augment_lengths(500));
        // most recent frames kept
        assert_eq!(aug[1].context[0].content[0], 450);
        let mut ov = ex.clone();
        ov.overlaps_previous = true;
        assert!(augment_context(&ov, 500).is_empty());
    }

    #[test]
    fn stitch_concatenates() {
        let segs = vec![[ramp(100, 0), ramp(100, 0)], [ramp(150, 0), ramp(150, 0)]];
        let s = stitch_inference(&segs).unwrap();
        assert_eq!(s[0].len(), 250);
        let single = stitch_inference(&segs[..1]).unwrap();
        assert_eq!(single, segs[0]);
        assert!(stitch_inference(&[[ramp(1, 0), ramp(2, 0)]]).is_err());
    }

    proptest! {
        #[test]
        fn boundaries_tile(raw in prop::collection::vec((0.01f64..3.0, 0.05f64..4.0), 1..30)) {
            let mut t = 0.0;
            let mut utts = Vec::new();
            for (i, (step, len)) in raw.iter().enumerate() {
                t += step;
                utts.push(tt(Channel::from_index(i % 2), t, t + len));
            }
            // drop utterances contained in their predecessor (they would be backchannels)
            let mut kept: Vec<TurnTiming> = Vec::new();
            for u in utts {
                if kept.last().is_none_or(|p| u.end_s > p.end_s) {
                    kept.push(u);
                }
            }
            let tl = modify_boundaries(&kept).unwrap();
            for w in tl.entries.windows(2) {
                prop_assert_eq!(w[0].b_hat_s, w[0].b_s.max(w[1].a_s));
                prop_assert_eq!(w[0].b_hat_s, w[1].a_hat_s);
                prop_assert_eq!(w[0].frames().1, w[1].frames().0);
            }
            prop_assert_eq!(tl.entries[0].a_hat_s, kept[0].start_s);
            prop_assert_eq!(tl.entries.last().unwrap().b_hat_s, kept.last().unwrap().end_s);
        }

        #[test]
        fn stitch_then_split_round_trip(lens in prop::collection::vec(0usize..40, 1..10)) {
            let segs: Vec<[StreamPair; 2]> = lens.iter().enumerate()
                .map(|(i, &l)| [ramp(l, i as u32 * 100), ramp(l, i as u32 * 100 + 50)])
                .collect();
            let stitched = stitch_inference(&segs).unwrap();
            prop_assert_eq!(stitched[0].len(), lens.iter().sum::<usize>());
            let channels: Vec<Channel> = (0..lens.len()).map(|i| Channel::from_index(i % 2)).collect();
            let tl = generated_timeline(&channels, &lens).unwrap();
            prop_assert_eq!(split_by_timeline(&stitched, &tl).unwrap(), segs);
        }
    }
}

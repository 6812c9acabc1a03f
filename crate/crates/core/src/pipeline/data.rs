use std::collections::BTreeSet;

use crate::dataset::TokenRecord;
use crate::dialogue_data::{Channel, TimedUtterance, WrittenDialogue};
use crate::error::{Error, Result};
use crate::token_codec::{build_prefix, build_tts_prefix, StreamPair, UtterancePhonemes, Vocabulary, LAUGHTER_SYMBOL};
use crate::turn_taking::{augment_context, seconds_to_frame, slice_training_segments, TurnTimeline};

/// Vocabulary over every phoneme and speaker in the transcripts.
pub fn build_vocabulary<'a>(
    utterances: impl IntoIterator<Item = &'a TimedUtterance>,
    n_content: u32,
    n_pitch: u32,
) -> Result<Vocabulary> {
    let mut phonemes = BTreeSet::new();
    let mut speakers = BTreeSet::new();
    for u in utterances {
        speakers.insert(u.speaker_id.clone());
        phonemes.extend(u.phonemes.iter().filter(|p| p.as_str() != LAUGHTER_SYMBOL).cloned());
    }
    Vocabulary::new(n_content, n_pitch, phonemes.into_iter().collect(), speakers.into_iter().collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RecordCounts {
    pub segments: usize,
    pub overlapping: usize,
    pub augmented: usize,
}

/// Two-channel records of one dialogue: every segment with its full
/// context, plus the context-reduced copies of non-overlapping segments.
pub fn dialogue_records(
    vocab: &Vocabulary,
    dialogue: &WrittenDialogue,
    timeline: &TurnTimeline,
    streams: &[StreamPair; 2],
    max_context: usize,
    augment: bool,
    counts: &mut RecordCounts,
) -> Result<Vec<TokenRecord>> {
    let speakers = (dialogue.speaker_pair.0.as_str(), dialogue.speaker_pair.1.as_str());
    let mut out = Vec::new();
    for seg in slice_training_segments(streams, dialogue, timeline, max_context)? {
        counts.segments += 1;
        counts.overlapping += seg.overlaps_previous as usize;
        let variants = if augment { augment_context(&seg, max_context) } else { Vec::new() };
        counts.augmented += variants.len();
        for ex in std::iter::once(&seg).chain(&variants) {
            let next = ex.next.as_ref().map(|(c, p)| UtterancePhonemes { channel: *c, phonemes: p });
            let prefixes = build_prefix(
                vocab,
                speakers,
                UtterancePhonemes { channel: ex.utterer, phonemes: &ex.phonemes },
                next,
                [&ex.context[0], &ex.context[1]],
                max_context,
            )?;
            out.push(TokenRecord { prefixes: prefixes.to_vec(), targets: ex.target.to_vec() });
        }
    }
    Ok(out)
}

/// Single-channel records `BOS, speaker, phonemes, SEP` followed by the
/// utterance's own frames.
pub fn tts_records(utterances: &[TimedUtterance], streams: &[StreamPair; 2], vocab: &Vocabulary) -> Result<Vec<TokenRecord>> {
    utterances
        .iter()
        .map(|u| {
            let s = &streams[u.channel.index()];
            let (a, b) = (seconds_to_frame(u.start_s), seconds_to_frame(u.end_s));
            if b > s.len() || a >= b {
                return Err(Error::input(format!(
                    "utterance [{}, {}] does not fit the {}-frame stream",
                    u.start_s,
                    u.end_s,
                    s.len()
                )));
            }
            Ok(TokenRecord {
                prefixes: vec![build_tts_prefix(vocab, &u.speaker_id, &u.phonemes)],
                targets: vec![s.slice(a, b)],
            })
        })
        .collect()
}

/// Channel that speaks each turn.
pub fn turn_channels(dialogue: &WrittenDialogue) -> Result<Vec<Channel>> {
    dialogue
        .turns
        .iter()
        .map(|t| {
            dialogue
                .channel_of(&t.speaker_id)
                .ok_or_else(|| Error::input(format!("turn speaker {} is not in the speaker pair", t.speaker_id)))
        })
        .collect()
}

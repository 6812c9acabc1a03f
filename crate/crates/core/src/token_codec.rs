//! Token vocabulary, prefix construction, pitch-stream delay, edge/duration
//! coding and assembly of training examples for the unit language model.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dialogue_data::Channel;
use crate::error::{Error, Result};

/// Default cap on duration targets, in frames.
pub const DEFAULT_MAX_DURATION: u32 = 256;

const VOCAB_HEADER: &str = "#chats-vocab v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Special {
    Bos,
    Eos,
    Pad,
    Nxt,
    Ctx,
    Sep,
    Lis,
    Unk,
    Lau,
}

impl Special {
    pub const ALL: [Special; 9] = [
        Special::Bos,
        Special::Eos,
        Special::Pad,
        Special::Nxt,
        Special::Ctx,
        Special::Sep,
        Special::Lis,
        Special::Unk,
        Special::Lau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::Bos => "<BOS>",
            Special::Eos => "<EOS>",
            Special::Pad => "<PAD>",
            Special::Nxt => "<NXT>",
            Special::Ctx => "<CTX>",
            Special::Sep => "<SEP>",
            Special::Lis => "<LIS>",
            Special::Unk => "<UNK>",
            Special::Lau => "<LAU>",
        }
    }
}

/// Phoneme symbol that stands for laughter inside a transcript.
pub const LAUGHTER_SYMBOL: &str = "LAU";

/// Which of the two unit streams a token sequence belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Content,
    Pitch,
}

impl Stream {
    pub const BOTH: [Stream; 2] = [Stream::Content, Stream::Pitch];

    pub fn index(self) -> usize {
        match self {
            Stream::Content => 0,
            Stream::Pitch => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Unit,
    Special(Special),
    Phoneme,
    Speaker,
}

/// Token space: content units `0..n_content` (the first `n_pitch` IDs double
/// as pitch units), then the nine special tokens, then phonemes, then speakers.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    n_content: u32,
    n_pitch: u32,
    phonemes: Vec<String>,
    speakers: Vec<String>,
    phoneme_ids: HashMap<String, u32>,
    speaker_ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(n_content: u32, n_pitch: u32, phonemes: Vec<String>, speakers: Vec<String>) -> Result<Self> {
        if n_pitch == 0 || n_pitch > n_content {
            return Err(Error::input(format!(
                "pitch units ({n_pitch}) must be non-empty and share the content range ({n_content})"
            )));
        }
        let mut v = Vocabulary {
            n_content,
            n_pitch,
            phonemes: Vec::new(),
            speakers: Vec::new(),
            phoneme_ids: HashMap::new(),
            speaker_ids: HashMap::new(),
        };
        for p in phonemes {
            if p == LAUGHTER_SYMBOL || v.phoneme_ids.contains_key(&p) {
                continue;
            }
            v.phoneme_ids.insert(p.clone(), v.phoneme_base() + v.phonemes.len() as u32);
            v.phonemes.push(p);
        }
        for s in speakers {
            if v.speaker_ids.contains_key(&s) {
                continue;
            }
            v.speakers.push(s);
        }
        v.reindex_speakers();
        Ok(v)
    }

    fn reindex_speakers(&mut self) {
        let base = self.speaker_base();
        self.speaker_ids = self.speakers.iter().enumerate().map(|(i, s)| (s.clone(), base + i as u32)).collect();
    }

    fn phoneme_base(&self) -> u32 {
        self.n_content + Special::ALL.len() as u32
    }

    fn speaker_base(&self) -> u32 {
        self.phoneme_base() + self.phonemes.len() as u32
    }

    pub fn n_content(&self) -> u32 {
        self.n_content
    }

    pub fn n_pitch(&self) -> u32 {
        self.n_pitch
    }

    pub fn phonemes(&self) -> &[String] {
        &self.phonemes
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn len(&self) -> usize {
        self.speaker_base() as usize + self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn special(&self, s: Special) -> u32 {
        self.n_content + Special::ALL.iter().position(|&x| x == s).unwrap() as u32
    }

    pub fn phoneme(&self, p: &str) -> Option<u32> {
        if p == LAUGHTER_SYMBOL {
            return Some(self.special(Special::Lau));
        }
        self.phoneme_ids.get(p).copied()
    }

    pub fn speaker(&self, s: &str) -> Option<u32> {
        self.speaker_ids.get(s).copied()
    }

    pub fn kind(&self, id: u32) -> Option<TokenKind> {
        if id < self.n_content {
            Some(TokenKind::Unit)
        } else if id < self.phoneme_base() {
            Some(TokenKind::Special(Special::ALL[(id - self.n_content) as usize]))
        } else if id < self.speaker_base() {
            Some(TokenKind::Phoneme)
        } else if (id as usize) < self.len() {
            Some(TokenKind::Speaker)
        } else {
            None
        }
    }

    pub fn token_name(&self, id: u32) -> Option<String> {
        Some(match self.kind(id)? {
            TokenKind::Unit => format!("u{id}"),
            TokenKind::Special(s) => s.name().to_string(),
            TokenKind::Phoneme => self.phonemes[(id - self.phoneme_base()) as usize].clone(),
            TokenKind::Speaker => format!("spk:{}", self.speakers[(id - self.speaker_base()) as usize]),
        })
    }

    /// Number of tokens a stream's output head can emit: its units plus PAD and EOS.
    pub fn output_size(&self, stream: Stream) -> usize {
        self.stream_units(stream) as usize + 2
    }

    fn stream_units(&self, stream: Stream) -> u32 {
        match stream {
            Stream::Content => self.n_content,
            Stream::Pitch => self.n_pitch,
        }
    }

    /// Output-head index for a token, or `None` when the head cannot emit it.
    pub fn output_index(&self, stream: Stream, token: u32) -> Option<usize> {
        let n = self.stream_units(stream);
        if token < n {
            Some(token as usize)
        } else if token == self.special(Special::Pad) {
            Some(n as usize)
        } else if token == self.special(Special::Eos) {
            Some(n as usize + 1)
        } else {
            None
        }
    }

    pub fn output_token(&self, stream: Stream, index: usize) -> u32 {
        let n = self.stream_units(stream) as usize;
        if index < n {
            index as u32
        } else if index == n {
            self.special(Special::Pad)
        } else {
            self.special(Special::Eos)
        }
    }

    /// Serialize as text, one token per line after a version header.
    pub fn to_text(&self) -> String {
        let mut s = format!("{VOCAB_HEADER} content={} pitch={}\n", self.n_content, self.n_pitch);
        for id in 0..self.len() as u32 {
            let _ = writeln!(s, "{}", self.token_name(id).unwrap());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty vocabulary file".into()))?;
        let rest = header
            .strip_prefix(VOCAB_HEADER)
            .ok_or_else(|| Error::Format(format!("unsupported vocabulary header: {header}")))?;
        let mut n_content = None;
        let mut n_pitch = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("content", v)) => n_content = v.parse().ok(),
                Some(("pitch", v)) => n_pitch = v.parse().ok(),
                _ => return Err(Error::Format(format!("bad vocabulary header field {kv}"))),
            }
        }
        let (n_content, n_pitch): (u32, u32) = n_content
            .zip(n_pitch)
            .ok_or_else(|| Error::Format("vocabulary header lacks content/pitch sizes".into()))?;
        let tokens: Vec<&str> = lines.collect();
        let skip = n_content as usize + Special::ALL.len();
        if tokens.len() < skip {
            return Err(Error::Format("vocabulary file is truncated".into()));
        }
        for (i, s) in Special::ALL.iter().enumerate() {
            if tokens[n_content as usize + i] != s.name() {
                return Err(Error::Format(format!("expected {} at special slot {i}", s.name())));
            }
        }
        let mut phonemes = Vec::new();
        let mut speakers = Vec::new();
        for t in &tokens[skip..] {
            match t.strip_prefix("spk:") {
                Some(s) => speakers.push(s.to_string()),
                None => {
                    if !speakers.is_empty() {
                        return Err(Error::Format("phoneme listed after speakers".into()));
                    }
                    phonemes.push(t.to_string())
                }
            }
        }
        Vocabulary::new(n_content, n_pitch, phonemes, speakers)
    }
}

/// Frame-synchronous content and pitch unit streams of one channel.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPair {
    pub content: Vec<u32>,
    pub pitch: Vec<u32>,
}

impl StreamPair {
    pub fn new(content: Vec<u32>, pitch: Vec<u32>) -> Result<Self> {
        if content.len() != pitch.len() {
            return Err(Error::input(format!(
                "content ({}) and pitch ({}) streams differ in length",
                content.len(),
                pitch.len()
            )));
        }
        Ok(StreamPair { content, pitch })
    }

    pub fn len(&self) -> usize {
        self.content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }

    pub fn stream(&self, s: Stream) -> &[u32] {
        match s {
            Stream::Content => &self.content,
            Stream::Pitch => &self.pitch,
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> StreamPair {
        StreamPair { content: self.content[start..end].to_vec(), pitch: self.pitch[start..end].to_vec() }
    }

    /// The last `n` frames (or fewer, if the stream is shorter).
    pub fn tail(&self, n: usize) -> StreamPair {
        let s = self.len().saturating_sub(n);
        self.slice(s, self.len())
    }

    pub fn extend(&mut self, other: &StreamPair) {
        self.content.extend_from_slice(&other.content);
        self.pitch.extend_from_slice(&other.pitch);
    }
}

/// Prefix tokens of one channel. The two streams differ only in the context section.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixSequence {
    pub content: Vec<u32>,
    pub pitch: Vec<u32>,
}

impl PrefixSequence {
    pub fn len(&self) -> usize {
        self.content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }
}

/// Phonemes of one utterance and the channel that speaks it.
#[derive(Clone, Copy, Debug)]
pub struct UtterancePhonemes<'a> {
    pub channel: Channel,
    pub phonemes: &'a [String],
}

fn phoneme_tokens(vocab: &Vocabulary, phonemes: &[String]) -> Vec<u32> {
    phonemes
        .iter()
        .map(|p| {
            vocab.phoneme(p).unwrap_or_else(|| {
                log::warn!("phoneme {p:?} not in vocabulary; using <UNK>");
                vocab.special(Special::Unk)
            })
        })
        .collect()
}

fn speaker_token(vocab: &Vocabulary, speaker: &str) -> u32 {
    vocab.speaker(speaker).unwrap_or_else(|| {
        log::warn!("speaker {speaker:?} not in vocabulary; using <UNK>");
        vocab.special(Special::Unk)
    })
}

/// Build the two channels' prefixes for one utterance.
///
/// On the channel that does not speak an utterance every phoneme position is
/// replaced by `<LIS>`, so both prefixes have the same length.
pub fn build_prefix(
    vocab: &Vocabulary,
    speakers: (&str, &str),
    current: UtterancePhonemes<'_>,
    next: Option<UtterancePhonemes<'_>>,
    context: [&StreamPair; 2],
    max_context: usize,
) -> Result<[PrefixSequence; 2]> {
    if context[0].len() != context[1].len() {
        return Err(Error::input("context length differs between channels"));
    }
    if context[0].len() > max_context {
        return Err(Error::input(format!("context of {} frames exceeds C = {max_context}", context[0].len())));
    }
    let lis = vocab.special(Special::Lis);
    let cur = phoneme_tokens(vocab, current.phonemes);
    let nxt = next.map(|u| (u.channel, phoneme_tokens(vocab, u.phonemes)));
    let build = |ch: Channel| {
        let speaker = if ch == Channel::One { speakers.0 } else { speakers.1 };
        let mut head = vec![vocab.special(Special::Bos), speaker_token(vocab, speaker)];
        if current.channel == ch {
            head.extend_from_slice(&cur);
        } else {
            head.extend(std::iter::repeat_n(lis, cur.len()));
        }
        head.push(vocab.special(Special::Nxt));
        if let Some((nch, toks)) = &nxt {
            if *nch == ch {
                head.extend_from_slice(toks);
            } else {
                head.extend(std::iter::repeat_n(lis, toks.len()));
            }
        }
        head.push(vocab.special(Special::Ctx));
        let ctx = context[ch.index()];
        let finish = |units: &[u32]| {
            let mut v = head.clone();
            v.extend_from_slice(units);
            v.push(vocab.special(Special::Sep));
            v
        };
        PrefixSequence { content: finish(&ctx.content), pitch: finish(&ctx.pitch) }
    };
    Ok([build(Channel::One), build(Channel::Two)])
}

/// Single-channel prefix used for text-to-speech pre-training: BOS, speaker, phonemes, SEP.
pub fn build_tts_prefix(vocab: &Vocabulary, speaker: &str, phonemes: &[String]) -> PrefixSequence {
    let mut v = vec![vocab.special(Special::Bos), speaker_token(vocab, speaker)];
    v.extend(phoneme_tokens(vocab, phonemes));
    v.push(vocab.special(Special::Sep));
    PrefixSequence { content: v.clone(), pitch: v }
}

/// Delay the pitch stream by one frame, padding both streams to length T+1.
/// Empty streams stay empty.
pub fn delay_pitch(pair: &StreamPair, pad: u32) -> Result<StreamPair> {
    if pair.content.len() != pair.pitch.len() {
        return Err(Error::input("cannot delay streams of different lengths"));
    }
    if pair.is_empty() {
        return Ok(StreamPair::default());
    }
    let mut content = pair.content.clone();
    content.push(pad);
    let mut pitch = Vec::with_capacity(pair.len() + 1);
    pitch.push(pad);
    pitch.extend_from_slice(&pair.pitch);
    Ok(StreamPair { content, pitch })
}

/// Inverse of [`delay_pitch`].
pub fn align_pitch(delayed: &StreamPair) -> Result<StreamPair> {
    if delayed.content.len() != delayed.pitch.len() {
        return Err(Error::input("cannot align streams of different lengths"));
    }
    if delayed.is_empty() {
        return Ok(StreamPair::default());
    }
    let t = delayed.len() - 1;
    Ok(StreamPair { content: delayed.content[..t].to_vec(), pitch: delayed.pitch[1..].to_vec() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRun {
    pub unit: u32,
    pub duration: u32,
}

/// Run-length encode a frame sequence. Frame 0 always starts a run.
pub fn edge_encode(frames: &[u32]) -> Result<Vec<EdgeRun>> {
    if frames.is_empty() {
        return Err(Error::input("cannot edge-encode an empty sequence"));
    }
    let mut runs: Vec<EdgeRun> = Vec::new();
    for &u in frames {
        match runs.last_mut() {
            Some(r) if r.unit == u => r.duration += 1,
            _ => runs.push(EdgeRun { unit: u, duration: 1 }),
        }
    }
    Ok(runs)
}

pub fn edge_decode(runs: &[EdgeRun]) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for r in runs {
        if r.duration == 0 {
            return Err(Error::input(format!("zero-duration run of unit {}", r.unit)));
        }
        out.extend(std::iter::repeat_n(r.unit, r.duration as usize));
    }
    Ok(out)
}

/// Edge flags (`u[t] != u[t-1]`, with t = 0 an edge).
pub fn edge_mask(units: &[u32]) -> Vec<bool> {
    units.iter().enumerate().map(|(t, &u)| t == 0 || units[t - 1] != u).collect()
}

/// Length of the run starting at each position.
fn run_lengths_from(units: &[u32]) -> Vec<u32> {
    let mut out = vec![0u32; units.len()];
    for t in (0..units.len()).rev() {
        out[t] = if t + 1 < units.len() && units[t + 1] == units[t] { out[t + 1] + 1 } else { 1 };
    }
    out
}

/// Inputs, shifted targets and loss masks of one stream of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamExample {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
    /// Unit loss is taken at position i (predicting `target[i]`).
    pub unit_mask: Vec<bool>,
    /// Duration loss is taken at position i against `durations[i]`.
    pub duration_mask: Vec<bool>,
    pub durations: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelExample {
    pub content: StreamExample,
    pub pitch: StreamExample,
}

impl ChannelExample {
    pub fn stream(&self, s: Stream) -> &StreamExample {
        match s {
            Stream::Content => &self.content,
            Stream::Pitch => &self.pitch,
        }
    }

    pub fn len(&self) -> usize {
        self.content.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A fully assembled example: one entry per channel (one or two).
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledExample {
    pub prefix_len: usize,
    pub channels: Vec<ChannelExample>,
}

impl AssembledExample {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, ChannelExample::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge_count(&self) -> usize {
        self.channels
            .iter()
            .flat_map(|c| [&c.content, &c.pitch])
            .map(|s| s.unit_mask.iter().filter(|&&m| m).count())
            .sum()
    }
}

fn assemble_stream(
    prefix: &[u32],
    delayed: &[u32],
    last_target: u32,
    max_duration: u32,
) -> StreamExample {
    let p = prefix.len();
    let mut input = prefix.to_vec();
    input.extend_from_slice(delayed);
    let l = input.len();
    let mut target: Vec<u32> = input[1..].to_vec();
    target.push(last_target);
    // unit region of the targets starts at the last prefix position
    let units = &target[p - 1..];
    let edges = edge_mask(units);
    let runs = run_lengths_from(units);
    let mut unit_mask = vec![false; l];
    let mut duration_mask = vec![false; l];
    let mut durations = vec![0u32; l];
    for (t, &e) in edges.iter().enumerate() {
        if !e {
            continue;
        }
        unit_mask[p - 1 + t] = true;
        // the duration of the unit at t is read where that unit is the input
        if p + t < l {
            duration_mask[p + t] = true;
            durations[p + t] = runs[t].min(max_duration);
        }
    }
    StreamExample { input, target, unit_mask, duration_mask, durations }
}

/// Concatenate prefixes with delayed target streams and derive shifted
/// targets, edge masks and run durations for every channel.
pub fn assemble_example(
    vocab: &Vocabulary,
    prefixes: &[PrefixSequence],
    targets: &[StreamPair],
    max_duration: u32,
) -> Result<AssembledExample> {
    if prefixes.is_empty() || prefixes.len() != targets.len() || prefixes.len() > 2 {
        return Err(Error::input("need one prefix and one target per channel (1 or 2 channels)"));
    }
    let p = prefixes[0].len();
    if p == 0 || prefixes.iter().any(|x| x.len() != p || x.pitch.len() != p) {
        return Err(Error::input("prefix lengths differ between channels or streams"));
    }
    let t = targets[0].len();
    if targets.iter().any(|x| x.len() != t || x.pitch.len() != t) {
        return Err(Error::input("target lengths differ between channels or streams"));
    }
    let pad = vocab.special(Special::Pad);
    let eos = vocab.special(Special::Eos);
    let mut channels = Vec::with_capacity(prefixes.len());
    for (prefix, target) in prefixes.iter().zip(targets) {
        for (s, seq) in [(Stream::Content, &target.content), (Stream::Pitch, &target.pitch)] {
            if let Some(bad) = seq.iter().find(|&&u| vocab.output_index(s, u).is_none()) {
                return Err(Error::input(format!("target token {bad} is not a {s:?} unit")));
            }
        }
        let delayed = delay_pitch(target, pad)?;
        channels.push(ChannelExample {
            content: assemble_stream(&prefix.content, &delayed.content, eos, max_duration),
            pitch: assemble_stream(&prefix.pitch, &delayed.pitch, pad, max_duration),
        });
    }
    Ok(AssembledExample { prefix_len: p, channels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(16, 4, ["a", "b", "c"].map(String::from).to_vec(), vec!["s1".into(), "s2".into()]).unwrap()
    }

    fn ph(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn id_spaces_are_disjoint() {
        let v = vocab();
        assert_eq!(v.len(), 16 + 9 + 3 + 2);
        let mut seen = std::collections::HashSet::new();
        for id in 0..v.len() as u32 {
            assert!(seen.insert(v.token_name(id).unwrap()));
        }
        assert_eq!(v.kind(v.phoneme("a").unwrap()), Some(TokenKind::Phoneme));
        assert_eq!(v.kind(v.speaker("s2").unwrap()), Some(TokenKind::Speaker));
        assert_eq!(v.phoneme("LAU"), Some(v.special(Special::Lau)));
        assert_eq!(v.kind(v.len() as u32), None);
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let v = vocab();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::from_text("#other v9\n").is_err());
    }

    #[test]
    fn listener_channel_gets_lis_per_position() {
        let v = vocab();
        let empty = StreamPair::default();
        let cur = ph(&["a", "b"]);
        let [p1, p2] = build_prefix(
            &v,
            ("s1", "s2"),
            UtterancePhonemes { channel: Channel::One, phonemes: &cur },
            None,
            [&empty, &empty],
            50,
        )
        .unwrap();
        let lis = v.special(Special::Lis);
        assert_eq!(p1.len(), p2.len());
        assert_eq!(&p1.content[2..4], &[v.phoneme("a").unwrap(), v.phoneme("b").unwrap()]);
        assert_eq!(&p2.content[2..4], &[lis, lis]);
        // last utterance: NXT directly followed by CTX; no context: CTX directly followed by SEP
        assert_eq!(p1.content[4], v.special(Special::Nxt));
        assert_eq!(p1.content[5], v.special(Special::Ctx));
        assert_eq!(p1.content[6], v.special(Special::Sep));
        assert_eq!(p1.content.len(), 7);
    }

    #[test]
    fn prefix_with_next_and_context() {
        let v = vocab();
        let c1 = StreamPair::new(vec![5, 6], vec![1, 2]).unwrap();
        let c2 = StreamPair::new(vec![7, 7], vec![0, 0]).unwrap();
        let cur = ph(&["a"]);
        let nxt = ph(&["b", "c", "zz"]);
        let [p1, p2] = build_prefix(
            &v,
            ("s1", "s2"),
            UtterancePhonemes { channel: Channel::One, phonemes: &cur },
            Some(UtterancePhonemes { channel: Channel::Two, phonemes: &nxt }),
            [&c1, &c2],
            2,
        )
        .unwrap();
        let lis = v.special(Special::Lis);
        let unk = v.special(Special::Unk);
        assert_eq!(&p1.content[4..7], &[lis, lis, lis]);
        assert_eq!(&p2.content[4..7], &[v.phoneme("b").unwrap(), v.phoneme("c").unwrap(), unk]);
        assert_eq!(&p1.content[8..10], &[5, 6]);
        assert_eq!(&p1.pitch[8..10], &[1, 2]);
        assert_eq!(&p2.content[8..10], &[7, 7]);
        assert_eq!(p1.content[..8], p1.pitch[..8]);
        assert!(build_prefix(
            &v,
            ("s1", "s2"),
            UtterancePhonemes { channel: Channel::One, phonemes: &cur },
            None,
            [&c1, &c2],
            1
        )
        .is_err());
    }

    #[test]
    fn tts_prefix_has_no_next_or_context() {
        let v = vocab();
        let p = build_tts_prefix(&v, "s1", &ph(&["a", "c"]));
        assert_eq!(p.content.len(), 5);
        assert!(!p.content.contains(&v.special(Special::Nxt)));
        assert!(!p.content.contains(&v.special(Special::Ctx)));
    }

    #[test]
    fn delay_shape() {
        let pair = StreamPair::new(vec![10, 11], vec![1, 2]).unwrap();
        let d = delay_pitch(&pair, 99).unwrap();
        assert_eq!(d.content, vec![10, 11, 99]);
        assert_eq!(d.pitch, vec![99, 1, 2]);
        assert_eq!(align_pitch(&d).unwrap(), pair);
        assert_eq!(delay_pitch(&StreamPair::default(), 99).unwrap(), StreamPair::default());
        assert!(delay_pitch(&StreamPair { content: vec![1], pitch: vec![] }, 0).is_err());
    }

    #[test]
    fn edge_codec_examples() {
        assert_eq!(
            edge_encode(&[5, 5, 5, 7, 7]).unwrap(),
            vec![EdgeRun { unit: 5, duration: 3 }, EdgeRun { unit: 7, duration: 2 }]
        );
        assert_eq!(edge_encode(&[9]).unwrap(), vec![EdgeRun { unit: 9, duration: 1 }]);
        assert!(edge_encode(&[]).is_err());
        assert!(edge_decode(&[EdgeRun { unit: 1, duration: 0 }]).is_err());
    }

    #[test]
    fn exhaustive_short_sequences_round_trip() {
        for len in 1..=6u32 {
            for code in 0..3u32.pow(len) {
                let seq: Vec<u32> = (0..len).map(|i| (code / 3u32.pow(i)) % 3).collect();
                assert_eq!(edge_decode(&edge_encode(&seq).unwrap()).unwrap(), seq);
            }
        }
    }

    /// Recompute edges and durations of the assembled unit region directly from the target streams.
    fn brute_force_masks(prefix_len: usize, target_units: &[u32]) -> (Vec<usize>, Vec<(usize, u32)>) {
        let mut edges = Vec::new();
        let mut durs = Vec::new();
        for t in 0..target_units.len() {
            if t == 0 || target_units[t] != target_units[t - 1] {
                edges.push(prefix_len - 1 + t);
                let mut d = 0;
                while t + d < target_units.len() && target_units[t + d] == target_units[t] {
                    d += 1;
                }
                if prefix_len + t < prefix_len + target_units.len() - 1 {
                    durs.push((prefix_len + t, d as u32));
                }
            }
        }
        (edges, durs)
    }

    #[test]
    fn assembled_masks_match_brute_force() {
        let v = vocab();
        let prefix = build_tts_prefix(&v, "s1", &ph(&["a"]));
        let target = StreamPair::new(vec![3, 3, 8], vec![1, 2, 2]).unwrap();
        let ex = assemble_example(&v, std::slice::from_ref(&prefix), &[target], DEFAULT_MAX_DURATION).unwrap();
        let p = prefix.len();
        assert_eq!(ex.len(), p + 4);
        let pad = v.special(Special::Pad);
        let eos = v.special(Special::Eos);
        let ch = &ex.channels[0];
        assert_eq!(&ch.content.target[p - 1..], &[3, 3, 8, pad, eos]);
        assert_eq!(&ch.pitch.target[p - 1..], &[pad, 1, 2, 2, pad]);
        for s in [&ch.content, &ch.pitch] {
            let units = &s.target[p - 1..];
            let (edges, durs) = brute_force_masks(p, units);
            let got: Vec<usize> = (0..ex.len()).filter(|&i| s.unit_mask[i]).collect();
            assert_eq!(got, edges);
            let got_d: Vec<(usize, u32)> =
                (0..ex.len()).filter(|&i| s.duration_mask[i]).map(|i| (i, s.durations[i])).collect();
            assert_eq!(got_d, durs);
            // the prefix region never carries loss
            assert!(s.unit_mask[..p - 1].iter().all(|m| !m));
            assert!(s.duration_mask[..p].iter().all(|m| !m));
        }
    }

    #[test]
    fn constant_units_have_one_edge() {
        let v = vocab();
        let prefix = build_tts_prefix(&v, "s1", &ph(&["a"]));
        let target = StreamPair::new(vec![4; 6], vec![0; 6]).unwrap();
        let ex = assemble_example(&v, std::slice::from_ref(&prefix), &[target], 256).unwrap();
        let ch = &ex.channels[0];
        let p = prefix.len();
        // unit 4 (one edge, duration 6), then PAD and EOS
        assert_eq!(ch.content.unit_mask.iter().filter(|&&m| m).count(), 3);
        assert_eq!(ch.content.durations[p], 6);
        let capped = assemble_example(&v, &[prefix], &[StreamPair::new(vec![4; 6], vec![0; 6]).unwrap()], 4).unwrap();
        assert_eq!(capped.channels[0].content.durations[p], 4);
    }

    #[test]
    fn empty_target_predicts_eos_only() {
        let v = vocab();
        let prefix = build_tts_prefix(&v, "s1", &ph(&["a"]));
        let ex = assemble_example(&v, std::slice::from_ref(&prefix), &[StreamPair::default()], 256).unwrap();
        assert_eq!(ex.len(), prefix.len());
        assert_eq!(*ex.channels[0].content.target.last().unwrap(), v.special(Special::Eos));
        assert_eq!(ex.edge_count(), 2);
    }

    #[test]
    fn non_unit_target_is_rejected() {
        let v = vocab();
        let prefix = build_tts_prefix(&v, "s1", &ph(&["a"]));
        // pitch stream only has 4 units
        let bad = StreamPair::new(vec![1], vec![9]).unwrap();
        assert!(assemble_example(&v, &[prefix], &[bad], 256).is_err());
    }

    proptest! {
        #[test]
        fn edge_round_trip(seq in prop::collection::vec(0u32..64, 1..500)) {
            let runs = edge_encode(&seq).unwrap();
            for w in runs.windows(2) {
                prop_assert_ne!(w[0].unit, w[1].unit);
            }
            prop_assert_eq!(runs.iter().map(|r| r.duration as usize).sum::<usize>(), seq.len());
            prop_assert_eq!(edge_decode(&runs).unwrap(), seq);
        }

        #[test]
        fn delay_round_trip(pairs in prop::collection::vec((0u32..64, 0u32..8), 0..200)) {
            let pair = StreamPair {
                content: pairs.iter().map(|p| p.0).collect(),
                pitch: pairs.iter().map(|p| p.1).collect(),
            };
            prop_assert_eq!(align_pitch(&delay_pitch(&pair, 70).unwrap()).unwrap(), pair);
        }
    }
}

//! Pipeline stages behind the command-line driver. Every stage reads its
//! inputs from and writes its outputs to the directories named in
//! [`PipelineConfig::paths`].

mod analysis;
mod data;
mod prepare;
mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dialogue_data::{Channel, TimedUtterance, Turn, WrittenDialogue};
use crate::error::{Error, Result};
use crate::io;
use crate::s2u::UnitRecord;
use crate::token_codec::StreamPair;
use crate::turn_taking::{TimelineEntry, TurnTimeline};

pub use analysis::{
    analyze_system, ipus_from_units, EvaluationSummary, MetricRow, SpeakerRow, SystemAnalysis, SystemStats,
};
pub use data::{build_vocabulary, dialogue_records, tts_records};
pub use prepare::{classify_undefined, label_dialogue, prepare_dialogue, PrepareReport};
pub use stages::{
    evaluate, generate, generate_dialogue, generate_tts, make_corpus, plot, pretrain, synthesize, train,
    train_classifier, units, write_dataset, ClassifierReport, CorpusReport, DatasetReport, GenerateMode,
    GenerateReport, GeneratedDialogue, SynthReport, TrainReport, UnitsReport,
};
pub use prepare::prepare;

/// File locations derived from the configured directories.
#[derive(Clone, Debug)]
pub struct Layout {
    pub corpus: PathBuf,
    pub units: PathBuf,
    pub models: PathBuf,
    pub outputs: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Layout {
            corpus: cfg.paths.corpus.clone(),
            units: cfg.units_dir().to_path_buf(),
            models: cfg.paths.models.clone(),
            outputs: cfg.paths.outputs.clone(),
        }
    }

    pub fn transcripts(&self) -> PathBuf {
        self.corpus.join("transcripts.jsonl")
    }
    pub fn frames(&self) -> PathBuf {
        self.corpus.join("frames.jsonl")
    }
    pub fn truth(&self) -> PathBuf {
        self.corpus.join("truth.jsonl")
    }
    pub fn corpus_spec(&self) -> PathBuf {
        self.corpus.join("spec.json")
    }
    pub fn unit_records(&self) -> PathBuf {
        self.units.join("units.jsonl")
    }
    pub fn phoneme_map(&self) -> PathBuf {
        self.units.join("phoneme_map.json")
    }
    pub fn pitch_stats(&self) -> PathBuf {
        self.units.join("pitch_stats.bin")
    }
    pub fn codebook(&self) -> PathBuf {
        self.models.join("codebook.bin")
    }
    pub fn classifier(&self) -> PathBuf {
        self.models.join("classifier.bin")
    }
    pub fn vocab(&self) -> PathBuf {
        self.models.join("vocab.txt")
    }
    pub fn pretrained(&self) -> PathBuf {
        self.models.join("pretrained.bin")
    }
    pub fn model(&self) -> PathBuf {
        self.models.join("model.bin")
    }
    pub fn loss_curve(&self, stage: &str) -> PathBuf {
        self.models.join(format!("{stage}_loss.csv"))
    }
    pub fn s2u_dir(&self) -> PathBuf {
        self.outputs.join("units")
    }
    pub fn classifier_examples(&self) -> PathBuf {
        self.outputs.join("prepared/classifier_examples.jsonl")
    }
    pub fn written(&self) -> PathBuf {
        self.outputs.join("prepared/written.jsonl")
    }
    pub fn timeline(&self) -> PathBuf {
        self.outputs.join("prepared/timeline.jsonl")
    }
    pub fn dialogue_dataset(&self) -> PathBuf {
        self.outputs.join("dataset/dialogue.bin")
    }
    pub fn tts_dataset(&self) -> PathBuf {
        self.outputs.join("dataset/tts.bin")
    }
    pub fn generated_units(&self) -> PathBuf {
        self.outputs.join("generated/units.jsonl")
    }
    pub fn generated_timeline(&self) -> PathBuf {
        self.outputs.join("generated/timeline.jsonl")
    }
    pub fn generated_tts(&self) -> PathBuf {
        self.outputs.join("generated/tts.jsonl")
    }
    pub fn wav_dir(&self) -> PathBuf {
        self.outputs.join("wav")
    }
    pub fn wav(&self, dialogue_id: &str, channel: Channel) -> PathBuf {
        self.wav_dir().join(format!("{dialogue_id}_ch{}.wav", u8::from(channel)))
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.outputs.join("eval")
    }
}

/// Fail with a precondition error naming the command that produces `path`.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::precondition(format!("{} does not exist; run `chats {producer}` first", path.display())))
    }
}

/// One turn of a written dialogue as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrittenLine {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub speaker_id: String,
    pub channel: Channel,
    pub speaker_pair: (String, String),
    pub phonemes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineLine {
    pub dialogue_id: String,
    #[serde(flatten)]
    pub entry: TimelineEntry,
}

/// Output of one utterance generated in the TTS setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtsLine {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub speaker_id: String,
    pub phonemes: Vec<String>,
    pub content: Vec<u32>,
    pub pitch: Vec<u32>,
}

pub fn written_lines(id: &str, d: &WrittenDialogue) -> Vec<WrittenLine> {
    d.turns
        .iter()
        .enumerate()
        .map(|(i, t)| WrittenLine {
            dialogue_id: id.to_string(),
            turn_index: i,
            speaker_id: t.speaker_id.clone(),
            channel: d.channel_of(&t.speaker_id).unwrap_or(Channel::One),
            speaker_pair: d.speaker_pair.clone(),
            phonemes: t.phonemes.clone(),
        })
        .collect()
}

pub fn load_written(path: &Path) -> Result<BTreeMap<String, WrittenDialogue>> {
    let mut out: BTreeMap<String, WrittenDialogue> = BTreeMap::new();
    let mut lines: Vec<WrittenLine> = io::read_jsonl(path)?;
    lines.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id).then(a.turn_index.cmp(&b.turn_index)));
    for l in lines {
        let d = out
            .entry(l.dialogue_id.clone())
            .or_insert_with(|| WrittenDialogue { speaker_pair: l.speaker_pair.clone(), turns: Vec::new() });
        if d.speaker_pair != l.speaker_pair || d.channel_of(&l.speaker_id) != Some(l.channel) {
            return Err(Error::input(format!("{}: inconsistent speakers in turn {}", l.dialogue_id, l.turn_index)));
        }
        if l.turn_index != d.turns.len() {
            return Err(Error::input(format!("{}: turn indices are not 0, 1, 2, ...", l.dialogue_id)));
        }
        d.turns.push(Turn { speaker_id: l.speaker_id, phonemes: l.phonemes });
    }
    Ok(out)
}

pub fn load_timelines(path: &Path) -> Result<BTreeMap<String, TurnTimeline>> {
    let mut out: BTreeMap<String, TurnTimeline> = BTreeMap::new();
    for l in io::read_jsonl::<TimelineLine>(path)? {
        out.entry(l.dialogue_id).or_default().entries.push(l.entry);
    }
    for (id, t) in out.iter_mut() {
        t.entries.sort_by_key(|e| e.n);
        if t.entries.iter().enumerate().any(|(i, e)| e.n != i + 1) {
            return Err(Error::input(format!("{id}: timeline entries are not numbered 1..N")));
        }
    }
    Ok(out)
}

pub fn timeline_lines(id: &str, t: &TurnTimeline) -> Vec<TimelineLine> {
    t.entries.iter().map(|&entry| TimelineLine { dialogue_id: id.to_string(), entry }).collect()
}

/// Utterances grouped by dialogue, in file order within each dialogue.
pub fn load_transcripts(path: &Path) -> Result<BTreeMap<String, Vec<TimedUtterance>>> {
    let mut out: BTreeMap<String, Vec<TimedUtterance>> = BTreeMap::new();
    for l in io::read_jsonl::<crate::dialogue_data::TranscriptLine>(path)? {
        out.entry(l.dialogue_id).or_default().push(l.utterance);
    }
    Ok(out)
}

/// Unit streams grouped by dialogue; both channels must be present with equal length.
pub fn load_units(path: &Path) -> Result<BTreeMap<String, [StreamPair; 2]>> {
    let mut partial: BTreeMap<String, [Option<StreamPair>; 2]> = BTreeMap::new();
    for r in io::read_jsonl::<UnitRecord>(path)? {
        let pair = StreamPair::new(r.content, r.pitch)?;
        let slot = &mut partial.entry(r.dialogue_id.clone()).or_default()[r.channel.index()];
        if slot.is_some() {
            return Err(Error::input(format!("{}: channel {} appears twice", r.dialogue_id, r.channel)));
        }
        *slot = Some(pair);
    }
    partial
        .into_iter()
        .map(|(id, [a, b])| match (a, b) {
            (Some(a), Some(b)) if a.len() == b.len() => Ok((id, [a, b])),
            (Some(_), Some(_)) => Err(Error::input(format!("{id}: channel streams differ in length"))),
            _ => Err(Error::input(format!("{id}: both channels are required"))),
        })
        .collect()
}

pub fn unit_records(id: &str, streams: &[StreamPair; 2]) -> Vec<UnitRecord> {
    Channel::BOTH
        .iter()
        .map(|&c| UnitRecord {
            dialogue_id: id.to_string(),
            channel: c,
            content: streams[c.index()].content.clone(),
            pitch: streams[c.index()].pitch.clone(),
        })
        .collect()
}

fn csv_number(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

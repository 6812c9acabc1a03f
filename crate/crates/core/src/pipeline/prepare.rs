use serde::{Deserialize, Serialize};

use super::{load_transcripts, load_units, require, timeline_lines, written_lines, Layout};
use crate::config::PipelineConfig;
use crate::dialogue_data::{
    build_written_dialogue, label_by_containment, merge_dialogue, speaker_pair, InterPausalUnit, IpuLabel,
    TimedUtterance, WrittenDialogue,
};
use crate::error::{Error, Result};
use crate::io;
use crate::ipu_classifier::{IpuClassifier, IpuRole, LabeledUnitSequence};
use crate::token_codec::StreamPair;
use crate::turn_taking::{modify_boundaries, seconds_to_frame, TurnTimeline};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub dialogues: usize,
    pub ipus: usize,
    pub speaker_ipus: usize,
    pub listener_ipus: usize,
    /// IPUs labelled by the classifier.
    pub classified: usize,
    pub classified_listener: usize,
    pub turns: usize,
    pub examples: usize,
}

/// Merge into IPUs and label by containment.
pub fn label_dialogue(utterances: &[TimedUtterance], gap_threshold_s: f64) -> Result<[Vec<InterPausalUnit>; 2]> {
    let mut ipus = merge_dialogue(utterances, gap_threshold_s)?;
    label_by_containment(&mut ipus);
    Ok(ipus)
}

fn ipu_units(ipu: &InterPausalUnit, units: &[StreamPair; 2]) -> Result<Vec<u32>> {
    let s = &units[ipu.channel.index()].content;
    let a = seconds_to_frame(ipu.start_s).min(s.len());
    let b = seconds_to_frame(ipu.end_s).min(s.len());
    if a >= b {
        return Err(Error::input(format!(
            "IPU [{:.3}, {:.3}] on channel {} has no unit frames",
            ipu.start_s, ipu.end_s, ipu.channel
        )));
    }
    Ok(s[a..b].to_vec())
}

/// Resolve undefined IPUs with the classifier. Returns (classified, of which listener).
pub fn classify_undefined(
    ipus: &mut [Vec<InterPausalUnit>; 2],
    units: &[StreamPair; 2],
    classifier: &IpuClassifier,
) -> Result<(usize, usize)> {
    let (mut n, mut listener) = (0, 0);
    for ipu in ipus.iter_mut().flatten().filter(|i| i.label == IpuLabel::UndefinedIpu) {
        let c = classifier.classify(&ipu_units(ipu, units)?)?;
        n += 1;
        ipu.label = match c.label {
            IpuRole::Listener => {
                listener += 1;
                IpuLabel::ListenerIpu
            }
            IpuRole::Speaker => IpuLabel::SpeakerIpu,
        };
    }
    Ok((n, listener))
}

/// Labelled IPUs of one dialogue as classifier examples.
pub fn containment_examples(ipus: &[Vec<InterPausalUnit>; 2], units: &[StreamPair; 2]) -> Result<Vec<LabeledUnitSequence>> {
    let mut out = Vec::new();
    for ipu in ipus.iter().flatten() {
        let label = match ipu.label {
            IpuLabel::SpeakerIpu => IpuRole::Speaker,
            IpuLabel::ListenerIpu => IpuRole::Listener,
            IpuLabel::UndefinedIpu => continue,
        };
        out.push(LabeledUnitSequence { content_units: ipu_units(ipu, units)?, label });
    }
    Ok(out)
}

/// Written dialogue and modified-boundary timeline of one dialogue.
pub fn prepare_dialogue(
    dialogue_id: &str,
    utterances: &[TimedUtterance],
    units: Option<&[StreamPair; 2]>,
    classifier: Option<&IpuClassifier>,
    gap_threshold_s: f64,
    report: &mut PrepareReport,
) -> Result<(WrittenDialogue, TurnTimeline)> {
    let pair = speaker_pair(utterances)?;
    let mut ipus = label_dialogue(utterances, gap_threshold_s)?;
    let undefined = ipus.iter().flatten().filter(|i| i.label == IpuLabel::UndefinedIpu).count();
    if undefined > 0 {
        let (clf, units) = match (classifier, units) {
            (Some(c), Some(u)) => (c, u),
            (None, _) => {
                return Err(Error::precondition(format!(
                    "{dialogue_id}: {undefined} IPUs need the speaker/listener classifier; \
                     run `chats prepare --examples-only` and `chats train-classifier` first"
                )))
            }
            (_, None) => return Err(Error::precondition(format!("{dialogue_id}: unit streams are missing"))),
        };
        let (n, l) = classify_undefined(&mut ipus, units, clf)?;
        report.classified += n;
        report.classified_listener += l;
    }
    for ipu in ipus.iter().flatten() {
        report.ipus += 1;
        match ipu.label {
            IpuLabel::SpeakerIpu => report.speaker_ipus += 1,
            IpuLabel::ListenerIpu => report.listener_ipus += 1,
            IpuLabel::UndefinedIpu => {}
        }
    }
    let (written, timings) = build_written_dialogue(&ipus, pair)?;
    let timeline = modify_boundaries(&timings).map_err(|e| Error::input(format!("{dialogue_id}: {e}")))?;
    report.dialogues += 1;
    report.turns += written.turns.len();
    Ok((written, timeline))
}

/// Turn transcripts into written dialogues and timelines. With
/// `examples_only`, write the containment-labelled classifier examples instead.
pub fn prepare(cfg: &PipelineConfig, examples_only: bool) -> Result<PrepareReport> {
    let layout = Layout::new(cfg);
    require(&layout.transcripts(), "make-corpus")?;
    let transcripts = load_transcripts(&layout.transcripts())?;
    let units = if layout.unit_records().exists() { Some(load_units(&layout.unit_records())?) } else { None };
    let gap = cfg.prepare.gap_threshold_s;
    let mut report = PrepareReport::default();
    if examples_only {
        let units = units.ok_or_else(|| {
            Error::precondition(format!("{} does not exist; run `chats make-corpus` first", layout.unit_records().display()))
        })?;
        let mut examples = Vec::new();
        for (id, utts) in &transcripts {
            let u = units.get(id).ok_or_else(|| Error::input(format!("{id}: no unit streams")))?;
            let ipus = label_dialogue(utts, gap)?;
            examples.extend(containment_examples(&ipus, u)?);
            report.dialogues += 1;
        }
        report.examples = examples.len();
        io::write_jsonl(&layout.classifier_examples(), &examples)?;
        return Ok(report);
    }
    let classifier = if layout.classifier().exists() { Some(IpuClassifier::load(&layout.classifier())?) } else { None };
    let mut written = Vec::new();
    let mut timelines = Vec::new();
    for (id, utts) in &transcripts {
        let u = units.as_ref().and_then(|m| m.get(id));
        let (w, t) = prepare_dialogue(id, utts, u, classifier.as_ref(), gap, &mut report)?;
        written.extend(written_lines(id, &w));
        timelines.extend(timeline_lines(id, &t));
    }
    io::write_jsonl(&layout.written(), &written)?;
    io::write_jsonl(&layout.timeline(), &timelines)?;
    Ok(report)
}

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::analysis::{analyze_system, metric_rows, speaker_rows, EvaluationSummary};
use super::data::{build_vocabulary, dialogue_records, tts_records, turn_channels, RecordCounts};
use super::{
    load_timelines, load_transcripts, load_units, load_written, require, timeline_lines, unit_records, Layout, TtsLine,
};
use crate::config::PipelineConfig;
use crate::corpus::{generate_corpus, FrameTrack, PhonemeMap, TruthRecord};
use crate::dataset::{write_records, DatasetHeader, RecordFile};
use crate::dialogue_data::{speaker_pair, Channel, WrittenDialogue};
use crate::error::{Error, Result};
use crate::eval::{estimate_f0, f0_statistics_from_tracks, histogram_svg, phoneme_error_rate, Histogram, EventKind, TurnEvent};
use crate::io;
use crate::ipu_classifier::{evaluate_classifier, train_classifier as fit_classifier, IpuClassifier, LabeledUnitSequence};
use crate::ms_dlm::{self, generate as sample, MsDlm, Sampling, TrainRecord};
use crate::s2u::{
    fit_kmeans, fit_pitch_stats, load_pitch_stats, quantize_content, quantize_pitch, save_pitch_stats, FeatureProvider,
    FrameLabel, SpeakerPitchStats, SyntheticFeatures, UnitRecord,
};
use crate::token_codec::{build_prefix, AssembledExample, StreamPair, UtterancePhonemes, Vocabulary};
use crate::turn_taking::{generated_timeline, seconds_to_frame, stitch_inference, TurnTimeline};
use crate::u2s::{read_wav, synthesize as render, write_wav};
use crate::util::{hash_parts, hash_str};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub dialogues: usize,
    pub utterances: usize,
    pub frames: usize,
    pub backchannels: usize,
}

pub fn make_corpus(cfg: &PipelineConfig) -> Result<CorpusReport> {
    let layout = Layout::new(cfg);
    let c = generate_corpus(&cfg.corpus)?;
    let dir = &layout.corpus;
    io::write_jsonl(&dir.join("transcripts.jsonl"), &c.transcripts)?;
    io::write_jsonl(&dir.join("units.jsonl"), &c.units)?;
    io::write_jsonl(&layout.frames(), &c.frames)?;
    io::write_jsonl(&layout.truth(), &c.truth)?;
    io::write_json(&dir.join("phoneme_map.json"), &c.phoneme_map)?;
    io::write_json(&layout.corpus_spec(), &c.spec)?;
    save_pitch_stats(&dir.join("pitch_stats.bin"), &c.pitch_stats)?;
    Ok(CorpusReport {
        dialogues: c.truth.len(),
        utterances: c.transcripts.len(),
        frames: c.units.iter().map(|u| u.content.len()).sum(),
        backchannels: c.truth.iter().map(|t| t.backchannels.len()).sum(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitsReport {
    pub frames: usize,
    pub k: usize,
    /// Share of frames whose cluster's majority label is their own label.
    pub purity: f64,
    pub speakers: usize,
}

/// Encode the corpus frames with the s2u path: synthetic features, k-means
/// content units, a majority-vote phoneme map and per-speaker pitch units.
pub fn units(cfg: &PipelineConfig) -> Result<UnitsReport> {
    let layout = Layout::new(cfg);
    require(&layout.frames(), "make-corpus")?;
    let tracks: Vec<FrameTrack> = io::read_jsonl(&layout.frames())?;
    let features = SyntheticFeatures {
        dim: cfg.units.feature_dim,
        spread: cfg.units.feature_spread,
        jitter: cfg.units.feature_jitter,
        ..SyntheticFeatures::default()
    };
    let feats: Vec<Vec<Vec<f64>>> = tracks
        .iter()
        .map(|t| {
            let labels: Vec<FrameLabel> =
                t.phonemes.iter().zip(&t.f0).map(|(p, &f0)| FrameLabel { phoneme: p.clone(), f0 }).collect();
            features.features(&labels)
        })
        .collect();
    let all: Vec<&Vec<f64>> = feats.iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::input("frames file holds no frames"));
    }
    let stride = all.len().div_ceil(cfg.units.max_fit_frames.max(1));
    let sample: Vec<Vec<f64>> = all.iter().step_by(stride).map(|v| (*v).clone()).collect();
    let codebook = fit_kmeans(&sample, cfg.units.k, cfg.seeds.kmeans)?;
    let mut votes: Vec<HashMap<Option<String>, usize>> = vec![HashMap::new(); cfg.units.k];
    let mut contents = Vec::with_capacity(tracks.len());
    for (t, f) in tracks.iter().zip(&feats) {
        let c = quantize_content(f, &codebook)?;
        for (&u, p) in c.iter().zip(&t.phonemes) {
            *votes[u as usize].entry(p.clone()).or_default() += 1;
        }
        contents.push(c);
    }
    let mut labels = BTreeMap::new();
    let mut silence_units = Vec::new();
    let mut agree = 0;
    for (u, v) in votes.iter().enumerate() {
        let Some((best, n)) = v.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0))) else { continue };
        agree += n;
        match best {
            Some(p) => {
                labels.insert(u as u32, p.clone());
            }
            None => silence_units.push(u as u32),
        }
    }
    let map = PhonemeMap { n_content: cfg.units.k as u32, labels, silence_units };
    let mut by_speaker: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for t in &tracks {
        by_speaker.entry(&t.speaker_id).or_default().push(&t.f0);
    }
    let stats: Vec<SpeakerPitchStats> =
        by_speaker.iter().map(|(s, tr)| fit_pitch_stats(s, tr)).collect::<Result<_>>()?;
    let records: Vec<UnitRecord> = tracks
        .iter()
        .zip(contents)
        .map(|(t, content)| {
            let st = stats.iter().find(|s| s.speaker_id == t.speaker_id).expect("stats for every speaker");
            UnitRecord {
                dialogue_id: t.dialogue_id.clone(),
                channel: t.channel,
                content,
                pitch: quantize_pitch(&t.f0, st, &cfg.synth.quantizer),
            }
        })
        .collect();
    let out = layout.s2u_dir();
    io::write_jsonl(&out.join("units.jsonl"), &records)?;
    io::write_json(&out.join("phoneme_map.json"), &map)?;
    save_pitch_stats(&out.join("pitch_stats.bin"), &stats)?;
    codebook.save(&layout.codebook())?;
    Ok(UnitsReport { frames: all.len(), k: cfg.units.k, purity: agree as f64 / all.len() as f64, speakers: stats.len() })
}

fn load_map(layout: &Layout) -> Result<PhonemeMap> {
    require(&layout.phoneme_map(), "make-corpus")?;
    io::read_json(&layout.phoneme_map())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub train_examples: usize,
    pub validation_examples: usize,
    pub final_loss: f64,
    pub validation_accuracy: Option<f64>,
}

/// Train the speaker/listener classifier on containment-labelled examples.
pub fn train_classifier(cfg: &PipelineConfig, examples: Option<&Path>, out: Option<&Path>) -> Result<ClassifierReport> {
    let layout = Layout::new(cfg);
    let default_in = layout.classifier_examples();
    let input = examples.unwrap_or(&default_in);
    require(input, "prepare --examples-only")?;
    let mut data: Vec<LabeledUnitSequence> = io::read_jsonl(input)?;
    let max_unit = data.iter().flat_map(|e| e.content_units.iter()).max().map_or(0, |&u| u as usize + 1);
    let vocab_size = match layout.phoneme_map().exists() {
        true => (load_map(&layout)?.n_content as usize).max(max_unit),
        false => max_unit,
    };
    data.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seeds.classifier));
    let n_val = (data.len() as f64 * cfg.prepare.validation_fraction).floor() as usize;
    let (val, train) = data.split_at(n_val);
    let config = crate::ipu_classifier::ClassifierConfig { vocab_size, ..cfg.classifier.clone() };
    let trained = fit_classifier(train, &config, (!val.is_empty()).then_some(val))?;
    let default_out = layout.classifier();
    trained.model.save(out.unwrap_or(&default_out))?;
    Ok(ClassifierReport {
        train_examples: train.len(),
        validation_examples: val.len(),
        final_loss: trained.final_loss,
        validation_accuracy: if val.is_empty() { None } else { Some(evaluate_classifier(&trained.model, val)?) },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dialogues: usize,
    pub segments: usize,
    pub overlapping: usize,
    pub augmented: usize,
    pub dialogue_records: usize,
    pub tts_records: usize,
    pub vocab_size: usize,
}

/// Tokenize the prepared dialogues (two-channel records) and every
/// transcript utterance (single-channel pre-training records).
pub fn write_dataset(cfg: &PipelineConfig) -> Result<DatasetReport> {
    let layout = Layout::new(cfg);
    for (p, producer) in [
        (layout.written(), "prepare"),
        (layout.timeline(), "prepare"),
        (layout.transcripts(), "make-corpus"),
        (layout.unit_records(), "make-corpus"),
    ] {
        require(&p, producer)?;
    }
    let map = load_map(&layout)?;
    let transcripts = load_transcripts(&layout.transcripts())?;
    let units = load_units(&layout.unit_records())?;
    let written = load_written(&layout.written())?;
    let timelines = load_timelines(&layout.timeline())?;
    let vocab = build_vocabulary(transcripts.values().flatten(), map.n_content, cfg.synth.quantizer.n_bins)?;
    io::write_text(&layout.vocab(), &vocab.to_text())?;
    let c = cfg.model.context_len;
    let mut counts = RecordCounts::default();
    let mut records = Vec::new();
    for (id, d) in &written {
        let t = timelines.get(id).ok_or_else(|| Error::input(format!("{id}: no timeline")))?;
        let s = units.get(id).ok_or_else(|| Error::input(format!("{id}: no unit streams")))?;
        records.extend(dialogue_records(&vocab, d, t, s, c, cfg.dataset.augment, &mut counts)?);
    }
    let mut tts = Vec::new();
    for (id, utts) in &transcripts {
        let s = units.get(id).ok_or_else(|| Error::input(format!("{id}: no unit streams")))?;
        tts.extend(tts_records(utts, s, &vocab)?);
    }
    let header = |kind: &str| DatasetHeader { kind: kind.into(), vocab_size: vocab.len(), context_len: c };
    write_records(&layout.dialogue_dataset(), &header("dialogue"), &records)?;
    write_records(&layout.tts_dataset(), &header("tts"), &tts)?;
    Ok(DatasetReport {
        dialogues: written.len(),
        segments: counts.segments,
        overlapping: counts.overlapping,
        augmented: counts.augmented,
        dialogue_records: records.len(),
        tts_records: tts.len(),
        vocab_size: vocab.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub examples: usize,
    pub parameters: usize,
    pub steps: usize,
    pub warm_started: bool,
    /// Mean per-edge loss over the last tenth of the logged windows.
    pub final_loss_per_edge: f64,
    pub final_eu_per_edge: f64,
}

fn load_examples(path: &Path, kind: &str, vocab: &Vocabulary, max_duration: u32) -> Result<Vec<AssembledExample>> {
    let f = RecordFile::open(path)?;
    if f.header.kind != kind || f.header.vocab_size != vocab.len() {
        return Err(Error::precondition(format!(
            "{} holds {} records for a {}-token vocabulary; rerun `chats dataset`",
            path.display(),
            f.header.kind,
            f.header.vocab_size
        )));
    }
    f.records()?.iter().map(|r| r.assemble(vocab, max_duration)).collect()
}

fn loss_csv(records: &[TrainRecord]) -> String {
    let mut s = String::from("step,lr,loss_per_edge,eu_per_edge,ed_per_edge,grad_norm\n");
    for r in records {
        s.push_str(&format!(
            "{},{:.8},{:.6},{:.6},{:.6},{:.6}\n",
            r.step, r.lr, r.loss_per_edge, r.eu_per_edge, r.ed_per_edge, r.grad_norm
        ));
    }
    s
}

fn train_report(examples: usize, steps: usize, model: &MsDlm, records: &[TrainRecord], warm_started: bool) -> TrainReport {
    let tail = &records[records.len() - (records.len() / 10).max(1)..];
    let n = tail.len() as f64;
    TrainReport {
        examples,
        parameters: model.num_params(),
        steps,
        warm_started,
        final_loss_per_edge: tail.iter().map(|r| r.loss_per_edge).sum::<f64>() / n,
        final_eu_per_edge: tail.iter().map(|r| r.eu_per_edge).sum::<f64>() / n,
    }
}

fn load_vocab(layout: &Layout) -> Result<Vocabulary> {
    require(&layout.vocab(), "dataset")?;
    Vocabulary::from_text(&io::read_text(&layout.vocab())?)
}

/// Single-channel text-to-units pre-training.
pub fn pretrain(cfg: &PipelineConfig) -> Result<TrainReport> {
    let layout = Layout::new(cfg);
    require(&layout.tts_dataset(), "dataset")?;
    let vocab = load_vocab(&layout)?;
    let data = load_examples(&layout.tts_dataset(), "tts", &vocab, cfg.model.max_duration)?;
    let mut model = MsDlm::new(cfg.model.clone(), vocab)?;
    let records = ms_dlm::pretrain_single_channel(&mut model, &data, &cfg.pretrain)?;
    model.save(&layout.pretrained())?;
    io::write_text(&layout.loss_curve("pretrain"), &loss_csv(&records))?;
    Ok(train_report(data.len(), cfg.pretrain.steps, &model, &records, false))
}

/// Two-channel dialogue training, warm-started from the pre-trained model when present.
pub fn train(cfg: &PipelineConfig) -> Result<TrainReport> {
    let layout = Layout::new(cfg);
    require(&layout.dialogue_dataset(), "dataset")?;
    let vocab = load_vocab(&layout)?;
    let data = load_examples(&layout.dialogue_dataset(), "dialogue", &vocab, cfg.model.max_duration)?;
    let mut model = MsDlm::new(cfg.model.clone(), vocab)?;
    let warm = layout.pretrained().exists();
    if warm {
        model.warm_start_from(&MsDlm::load(&layout.pretrained())?)?;
    }
    let records = ms_dlm::train(&mut model, &data, &cfg.train)?;
    model.save(&layout.model())?;
    io::write_text(&layout.loss_curve("train"), &loss_csv(&records))?;
    Ok(train_report(data.len(), cfg.train.steps, &model, &records, warm))
}

/// Generated streams of one dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedDialogue {
    pub streams: [StreamPair; 2],
    pub timeline: TurnTimeline,
    /// Longest context handed to the model, in frames.
    pub max_context_used: usize,
}

fn sampling(model: &MsDlm, greedy: bool) -> Sampling {
    if greedy {
        Sampling::Greedy
    } else {
        Sampling::Nucleus(model.config.nucleus_p)
    }
}

/// Generate a whole dialogue one utterance at a time. Each step sees the
/// current and the next utterance and at most `C` frames of what has been
/// generated so far.
pub fn generate_dialogue<R: rand::Rng>(
    model: &MsDlm,
    dialogue: &WrittenDialogue,
    greedy: bool,
    filler: u32,
    rng: &mut R,
) -> Result<GeneratedDialogue> {
    let channels = turn_channels(dialogue)?;
    let c = model.config.context_len;
    let speakers = (dialogue.speaker_pair.0.as_str(), dialogue.speaker_pair.1.as_str());
    let mut segments: Vec<[StreamPair; 2]> = Vec::with_capacity(dialogue.turns.len());
    let mut so_far = [StreamPair::default(), StreamPair::default()];
    let mut max_context_used = 0;
    for (n, turn) in dialogue.turns.iter().enumerate() {
        let ctx = [so_far[0].tail(c), so_far[1].tail(c)];
        max_context_used = max_context_used.max(ctx[0].len());
        let next = dialogue.turns.get(n + 1).map(|t| UtterancePhonemes { channel: channels[n + 1], phonemes: &t.phonemes });
        let prefixes = build_prefix(
            &model.vocab,
            speakers,
            UtterancePhonemes { channel: channels[n], phonemes: &turn.phonemes },
            next,
            [&ctx[0], &ctx[1]],
            c,
        )?;
        let out = sample(model, &prefixes, sampling(model, greedy), model.config.max_generation_frames, filler, rng)?;
        let seg = [out[0].clone(), out[1].clone()];
        so_far[0].extend(&seg[0]);
        so_far[1].extend(&seg[1]);
        segments.push(seg);
    }
    let lengths: Vec<usize> = segments.iter().map(|s| s[0].len()).collect();
    Ok(GeneratedDialogue { streams: stitch_inference(&segments)?, timeline: generated_timeline(&channels, &lengths)?, max_context_used })
}

/// Generate turn `n` alone (no context) and return its speaker's channel.
pub fn generate_tts<R: rand::Rng>(
    model: &MsDlm,
    dialogue: &WrittenDialogue,
    n: usize,
    greedy: bool,
    max_frames: usize,
    filler: u32,
    rng: &mut R,
) -> Result<StreamPair> {
    let channels = turn_channels(dialogue)?;
    let turn = dialogue.turns.get(n).ok_or_else(|| Error::input(format!("turn {n} out of range")))?;
    let speakers = (dialogue.speaker_pair.0.as_str(), dialogue.speaker_pair.1.as_str());
    let next = dialogue.turns.get(n + 1).map(|t| UtterancePhonemes { channel: channels[n + 1], phonemes: &t.phonemes });
    let empty = StreamPair::default();
    let prefixes = build_prefix(
        &model.vocab,
        speakers,
        UtterancePhonemes { channel: channels[n], phonemes: &turn.phonemes },
        next,
        [&empty, &empty],
        model.config.context_len,
    )?;
    let mut out = sample(model, &prefixes, sampling(model, greedy), max_frames, filler, rng)?;
    Ok(out.swap_remove(channels[n].index()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenerateMode {
    Dialogue,
    Tts,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub dialogues: usize,
    pub frames: usize,
    pub tts_utterances: usize,
    pub max_context_used: usize,
}

fn dialogue_rng(seed: u64, id: &str, turn: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_parts(&[seed, hash_str(id), turn]))
}

pub fn generate(cfg: &PipelineConfig, mode: GenerateMode) -> Result<GenerateReport> {
    let layout = Layout::new(cfg);
    require(&layout.model(), "train")?;
    require(&layout.written(), "prepare")?;
    let model = MsDlm::load(&layout.model())?;
    let written = load_written(&layout.written())?;
    let map = load_map(&layout)?;
    let filler = *map.silence_units.first().ok_or_else(|| Error::input("phoneme map has no silence unit"))?;
    let greedy = cfg.generation.greedy;
    let mut report = GenerateReport { dialogues: 0, frames: 0, tts_utterances: 0, max_context_used: 0 };
    if mode != GenerateMode::Tts {
        let mut records = Vec::new();
        let mut timeline = Vec::new();
        for (id, d) in &written {
            let mut rng = dialogue_rng(cfg.seeds.sampling, id, u64::MAX);
            let g = generate_dialogue(&model, d, greedy, filler, &mut rng)?;
            log::info!("generated {id}: {} frames", g.streams[0].len());
            report.dialogues += 1;
            report.frames += g.streams[0].len();
            report.max_context_used = report.max_context_used.max(g.max_context_used);
            records.extend(unit_records(id, &g.streams));
            timeline.extend(timeline_lines(id, &g.timeline));
        }
        io::write_jsonl(&layout.generated_units(), &records)?;
        io::write_jsonl(&layout.generated_timeline(), &timeline)?;
    }
    if mode != GenerateMode::Dialogue {
        let mut lines = Vec::new();
        for (id, d) in &written {
            for (n, turn) in d.turns.iter().enumerate() {
                let mut rng = dialogue_rng(cfg.seeds.sampling, id, n as u64);
                let s = generate_tts(&model, d, n, greedy, cfg.generation.tts_max_frames, filler, &mut rng)?;
                lines.push(TtsLine {
                    dialogue_id: id.clone(),
                    turn_index: n,
                    speaker_id: turn.speaker_id.clone(),
                    phonemes: turn.phonemes.clone(),
                    content: s.content,
                    pitch: s.pitch,
                });
            }
        }
        report.tts_utterances = lines.len();
        io::write_jsonl(&layout.generated_tts(), &lines)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub dialogues: usize,
    pub files: usize,
    pub samples: usize,
}

/// Speaker pair of every dialogue: from the written dialogues when
/// available, else from the transcripts.
fn speaker_pairs(layout: &Layout) -> Result<BTreeMap<String, (String, String)>> {
    if layout.written().exists() {
        return Ok(load_written(&layout.written())?.into_iter().map(|(id, d)| (id, d.speaker_pair)).collect());
    }
    require(&layout.transcripts(), "make-corpus")?;
    load_transcripts(&layout.transcripts())?
        .into_iter()
        .map(|(id, u)| Ok((id, speaker_pair(&u)?)))
        .collect()
}

/// Render unit streams (the generated ones by default) to one WAV per channel.
pub fn synthesize(cfg: &PipelineConfig, units_path: Option<&Path>) -> Result<SynthReport> {
    let layout = Layout::new(cfg);
    let default = layout.generated_units();
    let path = units_path.unwrap_or(&default);
    require(path, "generate")?;
    require(&layout.pitch_stats(), "make-corpus")?;
    let units = load_units(path)?;
    let stats = load_pitch_stats(&layout.pitch_stats())?;
    let pairs = speaker_pairs(&layout)?;
    let map = load_map(&layout)?;
    let synth = crate::u2s::SynthConfig { silence_units: map.silence_units.clone(), ..cfg.synth.clone() };
    let mut report = SynthReport { dialogues: 0, files: 0, samples: 0 };
    for (id, streams) in &units {
        let pair = pairs.get(id).ok_or_else(|| Error::input(format!("{id}: unknown speakers")))?;
        for c in Channel::BOTH {
            let spk = if c == Channel::One { &pair.0 } else { &pair.1 };
            let st = stats
                .iter()
                .find(|s| &s.speaker_id == spk)
                .ok_or_else(|| Error::input(format!("no pitch statistics for speaker {spk}")))?;
            let s = &streams[c.index()];
            let y = render(&s.content, &s.pitch, spk, st, &synth)?;
            write_wav(&layout.wav(id, c), &y, synth.sample_rate)?;
            report.files += 1;
            report.samples += y.len();
        }
        report.dialogues += 1;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EventLine {
    system: String,
    #[serde(flatten)]
    event: TurnEvent,
}

fn corpus_per(layout: &Layout, map: &PhonemeMap, units: &BTreeMap<String, [StreamPair; 2]>) -> Result<Option<f64>> {
    if !layout.transcripts().exists() {
        return Ok(None);
    }
    let (mut edits, mut total) = (0usize, 0usize);
    for (id, utts) in load_transcripts(&layout.transcripts())? {
        let Some(s) = units.get(&id) else { continue };
        for u in utts {
            let c = &s[u.channel.index()].content;
            let (a, b) = (seconds_to_frame(u.start_s).min(c.len()), seconds_to_frame(u.end_s).min(c.len()));
            edits += crate::eval::levenshtein(&u.phonemes, &map.decode(&c[a..b]));
            total += u.phonemes.len();
        }
    }
    Ok((total > 0).then(|| edits as f64 / total as f64))
}

/// Corpus-level PER of the TTS outputs: summed edit distance over summed reference length.
fn tts_per(lines: &[TtsLine], map: &PhonemeMap) -> Result<Option<f64>> {
    let (mut edits, mut total) = (0.0, 0usize);
    for l in lines.iter().filter(|l| !l.phonemes.is_empty()) {
        edits += phoneme_error_rate(&l.phonemes, &map.decode(&l.content))? * l.phonemes.len() as f64;
        total += l.phonemes.len();
    }
    Ok((total > 0).then(|| edits / total as f64))
}

fn f0_by_speaker(tracks: BTreeMap<String, Vec<Vec<f64>>>) -> BTreeMap<String, crate::eval::F0Stats> {
    tracks.into_iter().filter_map(|(s, t)| f0_statistics_from_tracks(&t).ok().map(|st| (s, st))).collect()
}

/// Compare generated dialogues (or any unit file given as `generated`) with the corpus.
pub fn evaluate(cfg: &PipelineConfig, generated: Option<&Path>) -> Result<EvaluationSummary> {
    let layout = Layout::new(cfg);
    require(&layout.unit_records(), "make-corpus")?;
    require(&layout.classifier(), "train-classifier")?;
    let map = load_map(&layout)?;
    let classifier = IpuClassifier::load(&layout.classifier())?;
    let corpus_units = load_units(&layout.unit_records())?;
    let pairs: BTreeMap<String, (String, String)> = if layout.transcripts().exists() {
        load_transcripts(&layout.transcripts())?.into_iter().map(|(id, u)| Ok((id, speaker_pair(&u)?))).collect::<Result<_>>()?
    } else {
        speaker_pairs(&layout)?
    };
    let min_sil = cfg.eval.min_silence_s;
    let corpus = analyze_system(&corpus_units, &pairs, &map, &classifier, min_sil)?;
    let injected = if layout.truth().exists() {
        let truth: Vec<TruthRecord> = io::read_jsonl(&layout.truth())?;
        let q_bc: usize = truth.iter().map(|t| t.backchannels.len()).sum();
        let q_all = corpus.stats.backchannel.q_all;
        (q_all > 0).then(|| 100.0 * q_bc as f64 / q_all as f64)
    } else {
        None
    };
    let default_gen = layout.generated_units();
    let gen_path = generated.unwrap_or(&default_gen);
    let gen_units = if gen_path.exists() { Some(load_units(gen_path)?) } else { None };
    let gen = match &gen_units {
        Some(u) => Some(analyze_system(u, &pairs, &map, &classifier, min_sil)?),
        None => None,
    };
    let tts_lines: Vec<TtsLine> =
        if layout.generated_tts().exists() { io::read_jsonl(&layout.generated_tts())? } else { Vec::new() };
    let per = (corpus_per(&layout, &map, &corpus_units)?, tts_per(&tts_lines, &map)?);

    let mut f0_corpus = BTreeMap::new();
    let mut f0_generated = BTreeMap::new();
    if let (Some(g), true) = (&gen_units, layout.generated_timeline().exists()) {
        let timelines = load_timelines(&layout.generated_timeline())?;
        let all_wavs = g.keys().all(|id| Channel::BOTH.iter().all(|&c| layout.wav(id, c).exists()));
        if all_wavs && layout.frames().exists() {
            let mut gen_tracks: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            for (id, t) in &timelines {
                let Some(pair) = pairs.get(id) else { continue };
                let mut audio = Vec::new();
                for c in Channel::BOTH {
                    audio.push(read_wav(&layout.wav(id, c))?);
                }
                for e in &t.entries {
                    let (samples, sr) = &audio[e.channel.index()];
                    let hop = (*sr as f64 * crate::s2u::FRAME_HOP_S) as usize;
                    let (a, b) = e.frames();
                    let seg = &samples[(a * hop).min(samples.len())..(b * hop).min(samples.len())];
                    if let Ok(track) = estimate_f0(seg, *sr, &cfg.eval.f0) {
                        let spk = if e.channel == Channel::One { &pair.0 } else { &pair.1 };
                        gen_tracks.entry(spk.clone()).or_default().push(track);
                    }
                }
            }
            let mut ref_tracks: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            let frames: Vec<FrameTrack> = io::read_jsonl(&layout.frames())?;
            let transcripts = load_transcripts(&layout.transcripts())?;
            for t in &frames {
                for u in transcripts.get(&t.dialogue_id).into_iter().flatten().filter(|u| u.channel == t.channel) {
                    let (a, b) = (seconds_to_frame(u.start_s).min(t.f0.len()), seconds_to_frame(u.end_s).min(t.f0.len()));
                    ref_tracks.entry(t.speaker_id.clone()).or_default().push(t.f0[a..b].to_vec());
                }
            }
            f0_corpus = f0_by_speaker(ref_tracks);
            f0_generated = f0_by_speaker(gen_tracks);
        }
    }

    let mut speakers = match &gen {
        Some(g) => speaker_rows(&corpus.per_speaker, &g.per_speaker)?,
        None => Vec::new(),
    };
    if !f0_generated.is_empty() {
        let pick = |m: &BTreeMap<String, crate::eval::F0Stats>| -> BTreeMap<String, BTreeMap<String, f64>> {
            [("f0_mean_hz".to_string(), m.iter().map(|(s, st)| (s.clone(), st.mean_hz)).collect())].into()
        };
        speakers.extend(speaker_rows(&pick(&f0_corpus), &pick(&f0_generated))?);
    }
    let metrics = metric_rows(&corpus.stats, gen.as_ref().map(|g| &g.stats), injected, per);
    let summary = EvaluationSummary {
        injected_backchannel_ratio: injected,
        corpus: corpus.stats.clone(),
        generated: gen.as_ref().map(|g| g.stats.clone()),
        per_ground_truth: per.0,
        per_tts: per.1,
        tts_utterances: tts_lines.len(),
        speakers,
        f0_corpus,
        f0_generated,
        metrics,
    };
    let dir = layout.eval_dir();
    io::write_text(&dir.join("metrics.csv"), &summary.metrics_csv())?;
    io::write_text(&dir.join("speakers.csv"), &summary.speakers_csv())?;
    io::write_json(&dir.join("summary.json"), &summary)?;
    let mut events: Vec<EventLine> = Vec::new();
    for (system, a) in [("corpus", Some(&corpus)), ("generated", gen.as_ref())] {
        let Some(a) = a else { continue };
        events.extend(a.events.iter().map(|e| EventLine { system: system.into(), event: *e }));
    }
    io::write_jsonl(&dir.join("events.jsonl"), &events)?;
    plot(cfg)?;
    Ok(summary)
}

/// Duration histograms (CSV per system and kind, one SVG per kind) from the
/// events written by `evaluate`. Returns the files written.
pub fn plot(cfg: &PipelineConfig) -> Result<Vec<std::path::PathBuf>> {
    let layout = Layout::new(cfg);
    let dir = layout.eval_dir();
    require(&dir.join("events.jsonl"), "evaluate")?;
    let events: Vec<EventLine> = io::read_jsonl(&dir.join("events.jsonl"))?;
    let mut systems: Vec<&str> = events.iter().map(|e| e.system.as_str()).collect();
    systems.dedup();
    let mut written = Vec::new();
    for k in EventKind::ALL {
        let mut hists = Vec::new();
        for &s in &systems {
            let d: Vec<f64> =
                events.iter().filter(|e| e.system == s && e.event.kind == k).map(|e| e.event.duration()).collect();
            let h = Histogram::new(&d, cfg.eval.histogram_bins, 0.0, cfg.eval.histogram_max_s)?;
            let p = dir.join(format!("hist_{}_{s}.csv", k.name()));
            io::write_text(&p, &h.to_csv())?;
            written.push(p);
            hists.push((s, h));
        }
        let series: Vec<(&str, &Histogram)> = hists.iter().map(|(s, h)| (*s, h)).collect();
        let p = dir.join(format!("hist_{}.svg", k.name()));
        io::write_text(&p, &histogram_svg(&format!("{} durations", k.name()), "duration (s)", &series))?;
        written.push(p);
    }
    Ok(written)
}

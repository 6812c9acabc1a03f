use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "corpus.dialogues=4",
    "corpus.speakers=4",
    "corpus.utterances_per_dialogue=5",
    "pretrain.steps=10",
    "train.steps=10",
    "pretrain.log_every=5",
    "train.log_every=5",
    "model.max_generation_frames=40",
    "generation.tts_max_frames=40",
];

fn chats(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chats"));
    cmd.current_dir(dir);
    for s in TINY {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().expect("spawn chats")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = chats(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn full_chain_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let report: serde_json::Value = serde_json::from_str(&ok(d, &["make-corpus"])).unwrap();
    assert_eq!(report["dialogues"], 4);
    ok(d, &["prepare", "--examples-only"]);
    ok(d, &["train-classifier"]);
    ok(d, &["prepare"]);
    ok(d, &["dataset"]);
    ok(d, &["pretrain"]);
    let train: serde_json::Value = serde_json::from_str(&ok(d, &["train"])).unwrap();
    assert_eq!(train["warm_started"], true);
    ok(d, &["generate"]);
    ok(d, &["synthesize"]);
    let csv = ok(d, &["evaluate"]);
    assert!(csv.starts_with("metric,corpus,generated\n"));
    assert!(csv.lines().any(|l| l.starts_with("per,")));
    let plots = ok(d, &["plot"]);
    assert!(plots.lines().any(|l| l.ends_with(".svg")));
    for f in [
        "run/models/model.bin",
        "run/models/train_loss.csv",
        "run/outputs/generated/units.jsonl",
        "run/outputs/generated/tts.jsonl",
        "run/outputs/eval/metrics.csv",
        "run/outputs/eval/speakers.csv",
        "run/outputs/wav/dlg000_ch1.wav",
        "run/outputs/wav/dlg000_ch2.wav",
    ] {
        assert!(d.join(f).exists(), "{f} missing");
    }
}

#[test]
fn classifier_paths_can_be_given_explicitly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["make-corpus"]);
    ok(d, &["prepare", "--examples-only"]);
    ok(d, &["train-classifier", "--in", "run/outputs/prepared/classifier_examples.jsonl", "--out", "clf.bin"]);
    assert!(d.join("clf.bin").exists());
    assert!(!d.join("run/models/classifier.bin").exists());
}

#[test]
fn missing_inputs_exit_with_precondition_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = chats(d, &["prepare"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("make-corpus"));
    ok(d, &["make-corpus"]);
    let out = chats(d, &["prepare"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-classifier"));
    assert_eq!(code(&chats(d, &["train"])), 3);
    assert_eq!(code(&chats(d, &["evaluate"])), 3);
}

#[test]
fn bad_configuration_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&chats(d, &["--set", "model.no_such_key=1", "show-config"])), 2);
    assert_eq!(code(&chats(d, &["--set", "train.seed=9", "show-config"])), 2);
    assert_eq!(code(&chats(d, &["--preset", "huge", "show-config"])), 2);
    assert_eq!(code(&chats(d, &["--config", "absent.toml", "show-config"])), 2);
}

#[test]
fn shown_config_reloads_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let shown = ok(d, &["show-config"]);
    std::fs::write(d.join("c.toml"), &shown).unwrap();
    assert_eq!(ok(d, &["--config", "c.toml", "show-config"]), shown);
}

#[test]
fn generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for c in [&["make-corpus"][..], &["prepare", "--examples-only"], &["train-classifier"], &["prepare"], &["dataset"], &["train"]] {
        ok(d, c);
    }
    ok(d, &["generate", "--mode", "dialogue"]);
    let first = std::fs::read(d.join("run/outputs/generated/units.jsonl")).unwrap();
    ok(d, &["generate", "--mode", "dialogue"]);
    assert_eq!(std::fs::read(d.join("run/outputs/generated/units.jsonl")).unwrap(), first);
}

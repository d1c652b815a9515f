use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dttnet::data::Manifest;
use dttnet::model::ModelConfig;
use dttnet::spectral::wav::{read_wav, write_wav, WavFormat};
use dttnet::spectral::Waveform;
use ndarray::Array2;
use rand::Rng as _;

const SR: u32 = 8000;

fn dttnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dttnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dttnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Miniature model at 8 kHz; `mixture_fill` keeps the cropped bins of the mixture.
fn mini_config(dir: &Path, mixture_fill: bool, extra: &str) -> PathBuf {
    let mut model = ModelConfig::miniature();
    model.spectral.sample_rate = SR;
    if mixture_fill {
        model.spectral.high_bins = dttnet::spectral::HighBinFill::Mixture;
    }
    let mut table = toml::Table::new();
    table.insert("model".into(), toml::Value::try_from(&model).unwrap());
    let path = dir.join("run.toml");
    fs::write(&path, format!("{}\n{extra}", toml::to_string(&table).unwrap())).unwrap();
    path
}

fn noise(len: usize, seed: u64, amp: f64) -> Waveform {
    let mut rng = dttnet::seed::rng(seed, &[]);
    Waveform::new(Array2::from_shape_fn((2, len), |_| rng.random_range(-amp..amp)), SR).unwrap()
}

fn tone(len: usize, hz: f64, amp: f64) -> Waveform {
    Waveform::new(
        Array2::from_shape_fn((2, len), |(c, i)| amp * (2.0 * std::f64::consts::PI * hz * i as f64 / SR as f64 + c as f64).sin()),
        SR,
    )
    .unwrap()
}

/// Track directories with `vocals` and `other` stems summing to the mixture.
/// With `identical`, the vocals stem is the whole mixture.
fn dataset(dir: &Path, names: &[&str], len: usize, identical: bool) {
    for (k, name) in names.iter().enumerate() {
        let d = dir.join(name);
        fs::create_dir_all(&d).unwrap();
        let vocals = tone(len, 300.0 + 50.0 * k as f64, 0.2);
        let other = if identical { Waveform::zeros(2, len, SR).unwrap() } else { noise(len, k as u64, 0.05) };
        let mix = vocals.add(&other).unwrap();
        write_wav(d.join("mixture.wav"), &mix, WavFormat::Float32).unwrap();
        write_wav(d.join("vocals.wav"), &vocals, WavFormat::Float32).unwrap();
        write_wav(d.join("other.wav"), &other, WavFormat::Float32).unwrap();
    }
}

fn pattern_dir(dir: &Path, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let d = dir.join(name);
        fs::create_dir_all(&d).unwrap();
        for s in 0..3 {
            let seg = noise(4 * SR as usize, 100 * k as u64 + s, 0.1);
            write_wav(d.join(format!("seg{s}.wav")), &seg, WavFormat::Float32).unwrap();
        }
    }
}

fn table_total(stdout: &str) -> (usize, usize) {
    let mut sum = 0;
    let mut total = 0;
    for line in stdout.lines().skip(1) {
        let count: usize = line.split_whitespace().last().unwrap().parse().unwrap();
        if line.starts_with("total") {
            total = count;
        } else {
            sum += count;
        }
    }
    (sum, total)
}

#[test]
fn inspect_default_budget_and_determinism() {
    let a = ok(&["inspect"]);
    let b = ok(&["inspect"]);
    assert_eq!(a, b);
    let (sum, total) = table_total(&a);
    assert_eq!(sum, total);
    assert!((4_500_000..=5_500_000).contains(&total), "{total}");
}

#[test]
fn inspect_miniature_and_bass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), false, "");
    let (sum, total) = table_total(&ok(&["inspect", "--config", p(&cfg)]));
    assert_eq!((sum, total), (26_532, 26_532));
    let bass = table_total(&ok(&["inspect", "--source", "bass"])).1;
    let vocals = table_total(&ok(&["inspect"])).1;
    assert_ne!(bass, vocals);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    assert_eq!(dttnet(&["inspect", "--set", "model.no_such_key=1"]).status.code(), Some(2));
    assert_eq!(dttnet(&["inspect", "--set", "model.growth=0"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let code = dttnet(&["evaluate", "--model", "identity", "--data", p(&missing), "--out", p(dir.path())]).status.code();
    assert_eq!(code, Some(3));
    // Wrong sample rate for the configured model.
    write_wav(dir.path().join("in.wav"), &noise(4000, 1, 0.1), WavFormat::Float32).unwrap();
    let code = dttnet(&[
        "separate",
        "--model",
        "identity",
        "--input",
        p(&dir.path().join("in.wav")),
        "--output",
        p(&dir.path().join("out.wav")),
    ])
    .status
    .code();
    assert_eq!(code, Some(3));
}

fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn identity_evaluation_is_capped_and_reconciles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), true, "");
    let data = dir.path().join("data");
    dataset(&data, &["a", "b", "c"], 2 * SR as usize + 123, true);
    let out = dir.path().join("report");
    let stdout = ok(&["evaluate", "--config", p(&cfg), "--model", "identity", "--data", p(&data), "--out", p(&out)]);
    assert!(stdout.contains("uSDR 100.000"), "{stdout}");
    let lines = read_jsonl(&out.join("report.jsonl"));
    let (tracks, agg) = lines.split_at(lines.len() - 1);
    assert_eq!(tracks.len(), 3);
    let mean = tracks.iter().map(|t| t["sdr_db"].as_f64().unwrap()).sum::<f64>() / 3.0;
    assert_eq!(agg[0]["aggregate"]["usdr_db"].as_f64().unwrap(), mean);
    assert_eq!(mean, 100.0);
    let chunks = read_jsonl(&out.join("chunks.jsonl"));
    assert_eq!(chunks.len(), 3 * 2);
    assert!(out.join("effective-config.toml").exists());
}

fn all_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn mixgen_is_deterministic_and_empty_bank_copies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), false, "");
    let data = dir.path().join("data");
    dataset(&data, &["a", "b"], 3 * SR as usize, false);
    let patterns = dir.path().join("patterns");
    pattern_dir(&patterns, &["Horns", "Sirens"]);
    let run = |out: &Path, patterns: &Path, seed: &str| {
        ok(&["mixgen", "--config", p(&cfg), "--seed", seed, "--patterns", p(patterns), "--data", p(&data), "--out", p(out)]);
        let mut files = all_files(out);
        files.retain(|k, _| k.extension().is_some_and(|e| e == "wav") || k.ends_with("manifest.toml"));
        files
    };
    let first = run(&dir.path().join("o1"), &patterns, "5");
    let second = run(&dir.path().join("o2"), &patterns, "5");
    assert_eq!(first, second);
    let other_seed = run(&dir.path().join("o3"), &patterns, "6");
    assert_ne!(first, other_seed);

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let copies = run(&dir.path().join("o4"), &empty, "5");
    for track in ["a", "b"] {
        let src = fs::read(data.join(track).join("mixture.wav")).unwrap();
        assert_eq!(copies[&Path::new(track).join("mixture.wav")], src);
    }
}

/// Rebuilds each overlaid mixture from the manifest alone: the source
/// mixture plus every listed segment window at its offset and gain.
#[test]
fn manifest_replay_reproduces_the_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), false, "[mixing]\ngain_db = [-6.0, 0.0]\n");
    let data = dir.path().join("data");
    dataset(&data, &["a", "b"], 3 * SR as usize, false);
    let patterns = dir.path().join("patterns");
    pattern_dir(&patterns, &["Horns", "Vocal Chops"]);
    let out = dir.path().join("out");
    ok(&["mixgen", "--config", p(&cfg), "--patterns", p(&patterns), "--data", p(&data), "--out", p(&out)]);
    let manifest = Manifest::load(out.join("manifest.toml")).unwrap();
    assert_eq!(manifest.mixtures.len(), 2);
    for rec in &manifest.mixtures {
        assert!(!rec.placements.is_empty());
        let mut expect = read_wav(data.join(&rec.track).join("mixture.wav")).unwrap().into_samples();
        for pl in &rec.placements {
            let seg = read_wav(patterns.join(&pl.pattern).join(format!("{}.wav", pl.segment))).unwrap();
            let s = seg.samples();
            for c in 0..2 {
                for i in 0..pl.len {
                    expect[[c, pl.offset + i]] += pl.gain * s[[c, pl.start + i]];
                }
            }
        }
        let got = read_wav(out.join(&rec.file)).unwrap();
        assert_eq!(got.len(), rec.samples);
        let err = (&got.samples() - &expect).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-6, "{}: {err}", rec.track);
    }
}

#[test]
fn all_overlay_equals_the_sum_of_single_overlays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), false, "");
    let data = dir.path().join("data");
    dataset(&data, &["a"], 3 * SR as usize, false);
    let patterns = dir.path().join("patterns");
    let names = ["Horns", "Sirens", "Vocal Chops"];
    pattern_dir(&patterns, &names);
    let gen = |pattern: &str| {
        let out = dir.path().join(format!("out-{pattern}"));
        ok(&["mixgen", "--config", p(&cfg), "--patterns", p(&patterns), "--data", p(&data), "--out", p(&out), "--pattern", pattern]);
        read_wav(out.join("a").join("mixture.wav")).unwrap().into_samples()
    };
    let song = read_wav(data.join("a").join("mixture.wav")).unwrap().into_samples();
    let mut sequential = song.clone();
    for n in names {
        sequential += &(gen(n) - &song);
    }
    let all = gen("All");
    let err = (&all - &sequential).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn effective_config_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), false, "");
    let data = dir.path().join("data");
    dataset(&data, &["a"], 3 * SR as usize, false);
    let patterns = dir.path().join("patterns");
    pattern_dir(&patterns, &["Horns"]);
    let first = dir.path().join("first");
    ok(&["mixgen", "--config", p(&cfg), "--seed", "9", "--set", "mixing.zero_fraction=0.4", "--patterns", p(&patterns), "--data", p(&data), "--out", p(&first)]);
    let snapshot = first.join("effective-config.toml");
    let second = dir.path().join("second");
    ok(&["mixgen", "--config", p(&snapshot), "--patterns", p(&patterns), "--data", p(&data), "--out", p(&second)]);
    assert_eq!(all_files(&first), all_files(&second));
}

#[test]
fn train_separate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(
        dir.path(),
        false,
        "[train]\nmax_epochs = 2\nepoch_size = 4\nbatch_size = 2\naugment = false\n",
    );
    let data = dir.path().join("data");
    dataset(&data.join("train"), &["t1", "t2"], SR as usize, false);
    dataset(&data.join("valid"), &["v1"], SR as usize, false);
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run)]);
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        let keys: Vec<&str> = l.split(' ').map(|kv| kv.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["epoch", "loss", "valid_usdr", "best"]);
        assert!(l.starts_with(&format!("epoch={} ", i + 1)));
    }
    for f in ["best.ckpt", "last.ckpt", "effective-config.toml", "sampler-audit.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(read_jsonl(&run.join("sampler-audit.jsonl")).len(), 2 * 4);

    let input = data.join("valid").join("v1").join("mixture.wav");
    let output = dir.path().join("sep").join("vocals.wav");
    let best = run.join("best.ckpt");
    ok(&["separate", "--model", p(&best), "--input", p(&input), "--output", p(&output), "--overlap", "0.25"]);
    let sep = read_wav(&output).unwrap();
    assert_eq!(sep.len(), SR as usize);
    assert!(dir.path().join("sep").join("effective-config.toml").exists());
    ok(&["evaluate", "--model", p(&best), "--data", p(&data.join("valid")), "--out", p(&dir.path().join("eval"))]);

    // One more epoch continues from the saved state.
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run), "--resume", p(&run.join("last.ckpt")), "--set", "train.max_epochs=3"]);
    let resumed = fs::read_to_string(run.join("train.log")).unwrap();
    assert!(resumed.starts_with("epoch=3 "), "{resumed}");
}

#[test]
fn nvc_training_audit_never_lists_vocal_chops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(
        dir.path(),
        false,
        "[train]\nmax_epochs = 1\nepoch_size = 12\nbatch_size = 4\naugment = false\n",
    );
    let data = dir.path().join("data");
    dataset(&data.join("train"), &["t1"], SR as usize, false);
    dataset(&data.join("valid"), &["v1"], SR as usize, false);
    let patterns = dir.path().join("patterns");
    pattern_dir(&patterns, &["Horns", "Vocal Chops"]);
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--patterns", p(&patterns), "--mode", "nvc", "--out", p(&run)]);
    let audit = read_jsonl(&run.join("sampler-audit.jsonl"));
    assert_eq!(audit.len(), 12);
    assert!(audit.iter().all(|e| e["pattern"] == "Horns"));
    // Fine-tuning without a bank is a configuration error.
    let code = dttnet(&["train", "--config", p(&cfg), "--data", p(&data), "--mode", "vc", "--out", p(&run)]).status.code();
    assert_eq!(code, Some(2));
}

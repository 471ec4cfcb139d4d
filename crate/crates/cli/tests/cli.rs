use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seawatch::detect::{read_scores_csv, score_set, RmseKind};
use seawatch::io::{read_corpus, sha256_file};
use seawatch::nn::checkpoint;
use seawatch_cli::manifest::recorded_outputs;

fn seawatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seawatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Run {
    _dir: tempfile::TempDir,
    work: PathBuf,
    ais: PathBuf,
    labels: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let work = dir.path().join("work");
        let ais = dir.path().join("ais");
        let labels = dir.path().join("labels.csv");
        Self {
            _dir: dir,
            work,
            ais,
            labels,
        }
    }

    fn args<'a>(&'a self, extra: &[&'a str]) -> Vec<String> {
        let mut v: Vec<String> = vec![
            "--work-dir".into(),
            self.work.display().to_string(),
            "--input".into(),
            self.ais.display().to_string(),
            "-s".into(),
            format!("synth_dir={}", self.ais.display()),
            "-s".into(),
            format!("synth_labels={}", self.labels.display()),
            "-s".into(),
            "synth_vessels=12".into(),
            "-s".into(),
            "synth_days=3".into(),
            "-s".into(),
            "hidden=4".into(),
            "-s".into(),
            "epochs=2".into(),
            "-s".into(),
            "batch_size=16".into(),
            "-s".into(),
            "score_set=all".into(),
            "--deterministic".into(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    }

    fn cmd(&self, command: &str, extra: &[&str]) -> Output {
        let mut a = vec![command.to_string()];
        a.extend(self.args(extra));
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        seawatch(&refs)
    }

    fn ok(&self, command: &str, extra: &[&str]) -> String {
        let o = self.cmd(command, extra);
        assert_eq!(code(&o), 0, "{command}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    }

    fn pipeline(&self, extra: &[&str]) {
        for c in ["synth", "ingest", "preprocess", "split", "train", "score", "export-geojson", "report"] {
            self.ok(c, extra);
        }
    }
}

fn value_of(text: &str, key: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(|v| v.trim().to_string()))
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&seawatch(&[])), 1);
    assert_eq!(code(&seawatch(&["frobnicate"])), 1);
    assert_eq!(code(&seawatch(&["ingest", "--no-such-flag"])), 1);
    assert_eq!(code(&seawatch(&["ingest", "-s", "no_such_key=1"])), 1);
    assert_eq!(code(&seawatch(&["ingest", "-s", "hidden"])), 1);
    assert_eq!(code(&seawatch(&["ingest", "-s", "hidden=many"])), 1);
    assert_eq!(code(&seawatch(&["ingest", "-s", "test_fraction=1.5"])), 1);
    assert_eq!(code(&seawatch(&["ingest", "--k", "0", "--print-config"])), 1);
    assert_eq!(code(&seawatch(&["ingest", "--config", "/definitely/not/here.conf"])), 1);
    assert_eq!(code(&seawatch(&["--help"])), 0);
}

#[test]
fn print_config_layers_file_then_overrides_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# comment\nhidden = 24\nk = 3\nepochs=7\nseed=5\n").unwrap();
    let c = conf.to_str().unwrap();

    let o = seawatch(&["--config", c, "--print-config"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(value_of(&text, "hidden").as_deref(), Some("24"));
    assert_eq!(value_of(&text, "k").as_deref(), Some("3"));
    assert_eq!(value_of(&text, "epochs").as_deref(), Some("7"));
    assert_eq!(value_of(&text, "min_length").as_deref(), Some("20"));

    let o = seawatch(&["--config", c, "-s", "hidden=8", "-s", "k=4", "--k", "2.5", "--seed", "9", "--print-config"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(value_of(&text, "hidden").as_deref(), Some("8"));
    assert_eq!(value_of(&text, "k").as_deref(), Some("2.5"));
    assert_eq!(value_of(&text, "seed").as_deref(), Some("9"));
    assert_eq!(value_of(&text, "epochs").as_deref(), Some("7"));

    // The printed configuration is itself a valid config file.
    let round = dir.path().join("round.conf");
    std::fs::write(&round, &text).unwrap();
    let again = seawatch(&["--config", round.to_str().unwrap(), "--print-config"]);
    assert_eq!(code(&again), 0);
    assert_eq!(stdout(&again), text);
}

#[test]
fn bad_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "hidden 24\n").unwrap();
    assert_eq!(code(&seawatch(&["ingest", "--config", conf.to_str().unwrap()])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let work = dir.path().join("work");
    let w = work.to_str().unwrap();

    let o = seawatch(&["ingest", "--work-dir", w, "--input", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = seawatch(&["ingest", "--work-dir", w, "--input", dir.path().join("*.nope").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "MMSI,LAT,LON\n1,2,3\n").unwrap();
    let o = seawatch(&["ingest", "--work-dir", w, "--input", bad.to_str().unwrap()]);
    assert_ne!(code(&o), 0);

    // Later stages refuse to run without their inputs.
    for c in ["preprocess", "split", "train", "score", "export-geojson", "report"] {
        let o = seawatch(&[c, "--work-dir", w]);
        assert_eq!(code(&o), 2, "{c}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn empty_input_setting_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = seawatch(&["ingest", "--work-dir", dir.path().to_str().unwrap(), "--input", ""]);
    assert_eq!(code(&o), 1);
}

#[test]
fn directory_of_daily_files_is_merged() {
    let run = Run::new();
    run.ok("synth", &[]);
    let files: Vec<_> = std::fs::read_dir(&run.ais).unwrap().collect();
    assert_eq!(files.len(), 3);
    let out = run.ok("ingest", &[]);
    let tracks = std::fs::read_to_string(run.work.join("tracks.csv")).unwrap();
    assert_eq!(tracks.lines().count() - 1, 12 * 3 * 48, "{out}");

    // A glob over the same files gives the same tracks.
    let pattern = format!("{}/AIS_*.csv", run.ais.display());
    let work2 = run.work.with_file_name("work2");
    let o = seawatch(&["ingest", "--work-dir", work2.to_str().unwrap(), "--input", &pattern]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(work2.join("tracks.csv")).unwrap(), tracks);
}

#[test]
fn scores_match_library_calls_and_manifest_checksums_hold() {
    let run = Run::new();
    run.pipeline(&[]);

    let model = checkpoint::load(&run.work.join("model.ckpt")).unwrap();
    let set = read_corpus(&run.work.join("corpus.bin"), &run.work.join("corpus_ids.csv")).unwrap();
    let expected = score_set(&model, &set, RmseKind::AllCells, false).unwrap();
    let got = read_scores_csv(&run.work.join("scores.csv")).unwrap();
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!((g.mmsi, g.day), (e.mmsi, e.day));
        assert_eq!(g.rmse, e.rmse);
    }

    let outputs = recorded_outputs(&run.work).unwrap();
    assert!(outputs.len() >= 10);
    for (path, sum) in &outputs {
        assert!(path.exists(), "{}", path.display());
        assert_eq!(&sha256_file(path).unwrap(), sum, "{}", path.display());
    }
    let manifest = std::fs::read_to_string(run.work.join("manifest.json")).unwrap();
    for stage in ["ingest", "preprocess", "split", "train", "score", "export-geojson", "report"] {
        assert!(manifest.contains(&format!("\"{stage}\"")), "{stage} missing from manifest");
    }
    assert!(run.work.join("checkpoints").join("epoch_002.ckpt").exists());
    let geo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.work.join("outliers.geojson")).unwrap()).unwrap();
    assert_eq!(geo["type"], "FeatureCollection");
}

#[test]
fn k_override_changes_threshold_and_report() {
    let run = Run::new();
    run.pipeline(&["--k", "1"]);
    let strict = std::fs::read_to_string(run.work.join("report.txt")).unwrap();
    assert_eq!(value_of(&strict, "k").as_deref(), Some("1"));

    let loose = run.ok("report", &["--k", "0.5"]);
    assert_eq!(value_of(&loose, "k").as_deref(), Some("0.5"));
    let t1: f64 = value_of(&strict, "threshold").unwrap().parse().unwrap();
    let t2: f64 = value_of(&loose, "threshold").unwrap().parse().unwrap();
    let mean: f64 = value_of(&strict, "rmse_mean").unwrap().parse().unwrap();
    let std: f64 = value_of(&strict, "rmse_std").unwrap().parse().unwrap();
    assert!((t1 - (mean + std)).abs() < 1e-12);
    assert!((t2 - (mean + 0.5 * std)).abs() < 1e-12);
    let f1: usize = value_of(&strict, "flagged").unwrap().parse().unwrap();
    let f2: usize = value_of(&loose, "flagged").unwrap().parse().unwrap();
    assert!(f2 >= f1 && f1 > 0);
}

#[test]
fn reruns_are_byte_identical() {
    let run = Run::new();
    run.pipeline(&[]);
    let first = snapshot(&run.work);
    for c in ["preprocess", "split", "train", "score", "export-geojson"] {
        run.ok(c, &[]);
    }
    assert_eq!(first, snapshot(&run.work));
}

fn snapshot(work: &Path) -> Vec<(String, Vec<u8>)> {
    ["corpus.bin", "stats.txt", "model.ckpt", "scores.csv", "outliers.csv", "outliers.geojson"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(work.join(f)).unwrap()))
        .collect()
}

#[test]
fn non_finite_model_exits_three() {
    let run = Run::new();
    for c in ["synth", "ingest", "preprocess", "split", "train"] {
        run.ok(c, &[]);
    }
    let path = run.work.join("model.ckpt");
    let mut model = checkpoint::load(&path).unwrap();
    model.params.b_out.data_mut()[0] = f64::NAN;
    checkpoint::save(&model, &path).unwrap();
    let o = run.cmd("score", &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

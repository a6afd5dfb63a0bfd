mod common;

use std::path::Path;
use std::process::{Command, Output};

use prominence::checkpoint::Checkpoint;
use prominence::corpus::SegmentConfig;
use prominence::frontend::FirstLayerKind;
use prominence::mtl::{build_model, ArchitectureVariant};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prominence"))
        .args(args)
        .args(["--log", "warn"])
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

const SYNTH: &str = r#"
[synth]
num_speakers = 4
utterances_per_speaker = 2
words_per_utterance_range = [5, 7]
word_duration_ms_range = [30.0, 50.0]
pause_ms_range = [0.0, 20.0]
seed = 3
"#;

fn write_config(dir: &Path, arch: &str, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
run_dir = "run-{arch}"
[data]
manifest = "corpus/manifest.jsonl"
[segment]
l_max = 1200
[model]
architecture = "{arch}"
[model.frontend]
first_layer_kind = "sinc"
blocks = [
  {{ num_filters = 4, kernel_width = 31, stride = 2, pool_width = 4 }},
  {{ num_filters = 4, kernel_width = 5, stride = 1, pool_width = 4 }},
  {{ num_filters = 6, kernel_width = 5, stride = 1, pool_width = 3 }},
]
[model.head]
gru_layers = 1
gru_hidden = 4
fc1_dim = 4
[train]
max_epochs = 1
batch_size = 2
[cv]
inner_folds = 2
outer_folds = 2
{SYNTH}
{extra}
"#
    );
    let path = dir.join(format!("{arch}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

fn synth(dir: &Path) {
    let cfg = dir.join("synth.toml");
    std::fs::write(&cfg, SYNTH).unwrap();
    let o = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", dir.join("corpus").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("corpus/oracle.json").is_file());
}

#[test]
fn train_predict_and_cv_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let d = dir.path();
    let manifest = d.join("corpus/manifest.jsonl");

    for (arch, cols) in [("SINGLE", 4), ("COND_B", 5)] {
        let cfg = write_config(d, arch, "");
        let o = run(&["train", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains(arch) && stdout.contains("Sinc, 31, 2"), "{stdout}");
        let run_dir = d.join(format!("run-{arch}"));
        assert!(run_dir.join("config.toml").is_file());
        let ckpt = run_dir.join("model.ckpt");
        let csv = d.join(format!("{arch}.csv"));
        let o = run(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", manifest.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(&csv).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        let words = prominence::corpus::read_manifest_rows(&manifest).unwrap().len();
        assert_eq!(rows.len(), words + 1);
        assert_eq!(rows[0].split(',').count(), cols);
        assert!(rows[0].starts_with("utterance_id,word_index,token,prominence_score"));
    }

    let cfg = write_config(d, "SHARED_CNN_HEADS", "");
    let o = run(&["cv", "--config", cfg.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = d.join("run-SHARED_CNN_HEADS");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run_dir.join("cv_report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 2);
    assert!(report["config_hash"].as_str().unwrap().len() == 16);
    assert!(run_dir.join("predictions.csv").is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("SHARED_CNN_HEADS"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // No corpus written: the manifest is missing.
    let cfg = write_config(d, "SINGLE", "");
    assert_eq!(code(&run(&["train", "--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["train", "--config", d.join("absent.toml").to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["synth", "--config", d.join("absent.toml").to_str().unwrap(), "--out", "x"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);

    synth(d);
    let o = run(&["cv", "--config", cfg.to_str().unwrap(), "--alpha", "1.5", "--epochs", "0"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("loss.alpha") && err.contains("max_epochs"), "{err}");
}

#[test]
fn inspect_filters_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let save = |kind: FirstLayerKind, name: &str| {
        let mut spec = prominence::mtl::ModelSpec::default();
        spec.frontend.first_layer_kind = kind;
        spec.head = common::tiny_spec(ArchitectureVariant::Single).head;
        let model = build_model(&spec).unwrap();
        let ckpt = Checkpoint {
            spec,
            segment: SegmentConfig::default(),
            store: model.store,
            feature_stats: Default::default(),
            loss_scales: Default::default(),
            history: Vec::new(),
            best_epoch: 0,
        };
        let p = d.join(name);
        ckpt.save(&p).unwrap();
        p
    };
    let sinc = save(FirstLayerKind::Sinc, "sinc.ckpt");
    let out = d.join("filters.csv");
    let o = run(&["inspect-filters", "--checkpoint", sinc.to_str().unwrap(), "--before", sinc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 32);
    let f1: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let f2: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(f1.windows(2).all(|w| w[0] < w[1]));
    assert!(f2.windows(2).all(|w| w[0] < w[1]));
    assert!((f1[0] - 30.0).abs() < 0.01);
    assert_eq!(&rows[0][1], &rows[0][3]);

    let standard = save(FirstLayerKind::Standard, "std.ckpt");
    let o = run(&["inspect-filters", "--checkpoint", standard.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("no sinc layer"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn slk() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slk"));
    cmd.arg("--quiet");
    for (key, _) in std::env::vars() {
        if key.starts_with("SLK_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_path(out: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

/// 60 users in three taste groups over 90 items, with some low ratings and duplicates.
fn write_fixture(path: &Path) {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut text = String::new();
    for u in 0..60u64 {
        let group = u % 3;
        for i in 0..90u64 {
            let liked = i / 30 == group;
            let roll = next() % 100;
            if (liked && roll < 70) || (!liked && roll < 8) {
                let rating = if roll % 5 == 0 { 2 } else { 4 };
                text.push_str(&format!("user{u}\titem{i}\t{rating}\t{}\n", 1000 + roll));
            }
        }
    }
    text.push_str("user0\titem0\t5\t1\n");
    fs::write(path, text).unwrap();
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    split: PathBuf,
}

fn prepared() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let raw = root.join("raw.tsv");
    write_fixture(&raw);
    let split = root.join("split");
    run_ok(slk().args(["prepare", "--kcore", "3", "--input"]).arg(&raw).arg("--out").arg(&split));
    Fixture {
        _tmp: tmp,
        root,
        split,
    }
}

fn write_spec(fx: &Fixture, name: &str, body: &str) -> PathBuf {
    let path = fx.root.join(name);
    let text = format!(
        "[dataset]\nsplit = \"{}\"\n\n[model]\ndim = 8\n\n{body}\n",
        fx.split.display()
    );
    fs::write(&path, text).unwrap();
    path
}

const SMALL_SL: &str = "[loss]\nvariant = \"sl\"\nnum_negatives = 20\n\n[train]\nepochs = 4\nbatch_size = 64\nlr = 0.05\neval_every = 2\n\n[eval]\ncutoffs = [5, 10]\n";

const SMALL_SLK: &str = "[loss]\nvariant = \"sl@k\"\nk = 5\nnum_negatives = 30\nt_beta = 2\ntau_w = 1.5\n\n[train]\nepochs = 4\nbatch_size = 64\nlr = 0.05\n\n[eval]\ncutoffs = [5]\n";

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn prepare_writes_a_manifest_and_refuses_to_overwrite() {
    let fx = prepared();
    let manifest = read_json(&fx.split.join("manifest.json"));
    let users = manifest["users"].as_u64().unwrap();
    let items = manifest["items"].as_u64().unwrap();
    let interactions = manifest["interactions"].as_u64().unwrap();
    assert_eq!(users, 60);
    assert!(items > 0 && items <= 90);
    let density = manifest["density"].as_f64().unwrap();
    assert!((density - interactions as f64 / (users * items) as f64).abs() < 1e-12);
    let parts: u64 = ["train_interactions", "validation_interactions", "test_interactions"]
        .iter()
        .map(|k| manifest[k].as_u64().unwrap())
        .sum();
    assert_eq!(parts, interactions);
    assert_eq!(csv_rows(&fx.split.join("manifest.csv")).len(), 1);

    let before = fs::read(fx.split.join("train.tsv")).unwrap();
    let out = slk()
        .args(["prepare", "--input"])
        .arg(fx.root.join("raw.tsv"))
        .arg("--out")
        .arg(&fx.split)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exists"));
    assert_eq!(fs::read(fx.split.join("train.tsv")).unwrap(), before);
}

#[test]
fn prepare_is_byte_identical_across_runs() {
    let fx = prepared();
    let again = fx.root.join("again");
    run_ok(slk().args(["prepare", "--kcore", "3", "--input"]).arg(fx.root.join("raw.tsv")).arg("--out").arg(&again));
    for file in ["train.tsv", "validation.tsv", "test.tsv", "users.vocab", "items.vocab"] {
        assert_eq!(fs::read(fx.split.join(file)).unwrap(), fs::read(again.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn train_writes_a_complete_run_directory() {
    let fx = prepared();
    let spec = write_spec(&fx, "sl.toml", SMALL_SL);
    let out = run_ok(slk().arg("train").arg("--spec").arg(&spec).arg("--out").arg(fx.root.join("runs")));
    let dir = stdout_path(&out);
    for file in [
        "spec.resolved.toml",
        "manifest.json",
        "history.csv",
        "evals.csv",
        "model.ckpt",
        "report.csv",
        "report.json",
        "per_user.csv",
    ] {
        assert!(dir.join(file).is_file(), "missing {file}");
    }
    assert_eq!(csv_rows(&dir.join("history.csv")).len(), 4);
    // Two validation points with two cutoffs and two metrics each.
    assert_eq!(csv_rows(&dir.join("evals.csv")).len(), 8);

    let resolved: toml::Table = toml::from_str(&fs::read_to_string(dir.join("spec.resolved.toml")).unwrap()).unwrap();
    assert_eq!(resolved["model"]["score_kind"].as_str(), Some("cosine"));
    assert_eq!(resolved["train"]["weight_decay"].as_float(), Some(0.0));
    assert_eq!(resolved["loss"]["tau_d"].as_float(), Some(0.2));

    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["epochs"], 4);
    let report = read_json(&dir.join("report.json"));
    assert_eq!(report["target"], "test");
    assert_eq!(report["cutoffs"].as_array().unwrap().len(), 2);
}

#[test]
fn reruns_get_fresh_directories_with_identical_results() {
    let fx = prepared();
    let spec = write_spec(&fx, "sl.toml", SMALL_SL);
    let runs = fx.root.join("runs");
    let first = stdout_path(&run_ok(slk().arg("train").arg("--spec").arg(&spec).arg("--out").arg(&runs)));
    let snapshot = fs::read(first.join("report.json")).unwrap();
    let second = stdout_path(&run_ok(
        slk().args(["--threads", "1", "train", "--spec"]).arg(&spec).arg("--out").arg(&runs),
    ));
    assert_ne!(first, second);
    assert_eq!(fs::read(first.join("report.json")).unwrap(), snapshot);
    assert_eq!(fs::read(second.join("report.json")).unwrap(), snapshot);
    let losses = |dir: &Path| -> Vec<String> {
        csv_rows(&dir.join("history.csv")).iter().map(|r| r[1].to_string()).collect()
    };
    assert_eq!(losses(&first), losses(&second));
}

#[test]
fn grid_expands_to_one_run_per_combination() {
    let fx = prepared();
    let body = format!("{SMALL_SL}\n[grid]\n\"train.lr\" = [0.01, 0.05]\n\"loss.tau_w\" = [2.0, 3.0]\n");
    let spec = write_spec(&fx, "grid.toml", &body);
    let root = stdout_path(&run_ok(
        slk().arg("train").arg("--spec").arg(&spec).arg("--out").arg(fx.root.join("runs")),
    ));
    let runs: Vec<PathBuf> = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(runs.len(), 4);
    let index = csv_rows(&root.join("index.csv"));
    assert_eq!(index.len(), 4);
    let mut seen = Vec::new();
    for run in &runs {
        let resolved: toml::Table =
            toml::from_str(&fs::read_to_string(run.join("spec.resolved.toml")).unwrap()).unwrap();
        seen.push((
            resolved["train"]["lr"].as_float().unwrap().to_string(),
            resolved["loss"]["tau_w"].as_float().unwrap().to_string(),
        ));
    }
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 4);
    assert!(root.join("index.json").is_file());
}

#[test]
fn invalid_specs_name_the_offending_field() {
    let fx = prepared();
    let spec = write_spec(&fx, "bad.toml", "[loss]\nvariant = \"sl\"\n\n[train]\nlearnin_rate = 0.1\n");
    let out = slk().arg("train").arg("--spec").arg(&spec).arg("--out").arg(fx.root.join("runs")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));

    let spec = write_spec(&fx, "bad2.toml", "[loss]\nvariant = \"sl\"\ntau_d = -1.0\n");
    let out = slk().arg("train").arg("--spec").arg(&spec).arg("--out").arg(fx.root.join("runs")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau_d"));
    assert!(!fx.root.join("runs").exists());
}

#[test]
fn environment_and_set_overrides_apply() {
    let fx = prepared();
    let spec = write_spec(&fx, "sl.toml", SMALL_SL);
    let dir = stdout_path(&run_ok(
        slk()
            .arg("train")
            .arg("--spec")
            .arg(&spec)
            .arg("--out")
            .arg(fx.root.join("runs"))
            .args(["--set", "train.lr=0.02"])
            .env("SLK_TRAIN__EPOCHS", "2"),
    ));
    assert_eq!(csv_rows(&dir.join("history.csv")).len(), 2);
    let resolved: toml::Table = toml::from_str(&fs::read_to_string(dir.join("spec.resolved.toml")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["lr"].as_float(), Some(0.02));
}

#[test]
fn eval_reproduces_the_training_report_and_dumps_quantiles() {
    let fx = prepared();
    let spec = write_spec(&fx, "slk.toml", SMALL_SLK);
    let run = stdout_path(&run_ok(slk().arg("train").arg("--spec").arg(&spec).arg("--out").arg(fx.root.join("runs"))));
    let out = fx.root.join("eval");
    run_ok(
        slk()
            .arg("eval")
            .arg("--checkpoint")
            .arg(run.join("model.ckpt"))
            .arg("--split")
            .arg(&fx.split)
            .args(["--cutoffs", "5", "--target", "test", "--out"])
            .arg(&out),
    );
    assert_eq!(read_json(&out.join("report.json")), read_json(&run.join("report.json")));
    assert_eq!(csv_rows(&out.join("quantiles.csv")).len(), 60);
    // The output directory is never reused.
    let again = slk()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run.join("model.ckpt"))
        .arg("--split")
        .arg(&fx.split)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!again.status.success());
}

#[test]
fn grad_report_is_deterministic_and_summarizes_each_loss() {
    let fx = prepared();
    let spec = write_spec(&fx, "slk.toml", SMALL_SLK);
    let run = stdout_path(&run_ok(slk().arg("train").arg("--spec").arg(&spec).arg("--out").arg(fx.root.join("runs"))));
    let report = |name: &str| {
        let out = fx.root.join(name);
        run_ok(
            slk()
                .arg("grad-report")
                .arg("--checkpoint")
                .arg(run.join("model.ckpt"))
                .arg("--split")
                .arg(&fx.split)
                .args(["--loss", "sl@5,lambdaloss@5", "--loss", "bpr"])
                .args(["--samples", "300", "--negatives", "20", "--quantile-samples", "40", "--seed", "3", "--out"])
                .arg(&out),
        );
        out
    };
    let a = report("grad_a");
    let b = report("grad_b");
    assert_eq!(fs::read(a.join("grad_rows.csv")).unwrap(), fs::read(b.join("grad_rows.csv")).unwrap());
    let summary = csv_rows(&a.join("grad_summary.csv"));
    assert_eq!(summary.len(), 3);
    for row in &summary {
        let share: f64 = row[3].parse().unwrap();
        assert!((0.05 - 1e-12..=1.0).contains(&share), "{row:?}");
    }
    assert_eq!(csv_rows(&a.join("grad_rows.csv")).len(), 900);
    let json = read_json(&a.join("grad_summary.json"));
    assert_eq!(json["losses"].as_array().unwrap().len(), 3);
}

#[test]
fn bench_repetitions_change_only_timings() {
    let fx = prepared();
    let bench = |reps: &str, name: &str| {
        let out = fx.root.join(name);
        run_ok(
            slk()
                .arg("bench")
                .arg("--split")
                .arg(&fx.split)
                .args(["--loss", "sl,sl@5,lambdaloss@5", "--negatives", "20", "--dim", "8", "--batch-size", "64"])
                .args(["--repetitions", reps, "--out"])
                .arg(&out),
        );
        csv_rows(&out.join("bench.csv"))
    };
    let once = bench("1", "bench1");
    let five = bench("5", "bench5");
    assert_eq!(once.len(), 3);
    for (a, b) in once.iter().zip(&five) {
        assert_eq!(a[0], b[0]);
        assert_eq!(&a[1], "1");
        assert_eq!(&b[1], "5");
        // mean_loss and refreshed match exactly.
        assert_eq!(a[5], b[5]);
        assert_eq!(a[6], b[6]);
    }
    assert_eq!(&once[1][6], "true");
}

#[test]
fn train_can_prepare_a_raw_log_inline() {
    let fx = prepared();
    let path = fx.root.join("raw_spec.toml");
    fs::write(
        &path,
        format!(
            "[dataset]\nraw = \"raw.tsv\"\nkcore = 3\nnoise = 0.1\nnoise_seed = 2\n\n[model]\ndim = 8\n\n{SMALL_SL}"
        ),
    )
    .unwrap();
    let dir = stdout_path(&run_ok(slk().arg("train").arg("--spec").arg(&path).arg("--out").arg(fx.root.join("runs"))));
    // Same preprocessing as `slk prepare`, so the split files match byte for byte.
    for file in ["train.tsv", "test.tsv", "items.vocab"] {
        assert_eq!(fs::read(dir.join("split").join(file)).unwrap(), fs::read(fx.split.join(file)).unwrap());
    }
    let manifest = read_json(&dir.join("manifest.json"));
    assert!(manifest["noise"]["added"].as_u64().unwrap() > 0);
    assert!(
        manifest["train_interactions"].as_u64().unwrap()
            > read_json(&fx.split.join("manifest.json"))["train_interactions"].as_u64().unwrap()
    );
}

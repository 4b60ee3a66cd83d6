use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fbpick::gather::{load_gather, Manifest};
use fbpick_cli::commands::read_pick_report;

const BIN: &str = env!("CARGO_BIN_EXE_fbpick");

/// Small, fast settings shared by every invocation.
const FAST: &[&str] = &[
    "--preset",
    "desk",
    "--set",
    "unet.base_width=4",
    "--set",
    "training.max_epochs=2",
    "--set",
    "picking.mc_samples=4",
];

fn run(dir: &Path, cmd: &str, args: &[&str]) -> Output {
    let out = Command::new(BIN).current_dir(dir).arg(cmd).args(FAST).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn synth(dir: &Path, data: &str, gathers: usize, seed: u64) {
    let surveys = format!(r#"synth.surveys=[{{"survey_id":"synth-a","gathers":{gathers}}}]"#);
    ok(&run(dir, "synth", &["--set", &surveys, "--seed", &seed.to_string(), "--data", data]));
}

fn gather_paths(dir: &Path, data: &str) -> Vec<String> {
    let m = Manifest::load(&dir.join(data)).unwrap();
    m.surveys[0].gathers.iter().map(|g| format!("{data}/{g}")).collect()
}

/// Every file under `dir` with its bytes; the resolved config is skipped since it records the paths.
fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.ends_with("config.resolved.json") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_lists_every_subcommand() {
    let o = Command::new(BIN).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for c in ["synth", "train", "pick", "eval", "robustness"] {
        assert!(text.contains(c), "{c} missing from help");
    }
    assert!(!Command::new(BIN).output().unwrap().status.success());
}

#[test]
fn synth_writes_files_and_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "a", 10, 1);
    synth(t.path(), "b", 10, 1);
    let a = files(&t.path().join("a"));
    assert_eq!(a.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "fbg")).count(), 10);
    assert!(a.iter().any(|(p, _)| p == Path::new("manifest.json")));
    assert!(t.path().join("a/config.resolved.json").exists());
    assert_eq!(a, files(&t.path().join("b")));
    let g = load_gather(&t.path().join("a/synth-a/g00000.fbg")).unwrap();
    assert_eq!(g.amplitudes().dim(), (256, 64));

    let bad = run(t.path(), "synth", &["--set", "synth.corpus.base.dt_ms=-1", "--data", "c"]);
    assert!(!bad.status.success());
    assert!(!String::from_utf8_lossy(&bad.stderr).is_empty());
    let unknown = run(t.path(), "synth", &["--set", "synth.colour=1"]);
    assert_eq!(unknown.status.code(), Some(2));
    fs::write(t.path().join("c.json"), "{ not json").unwrap();
    assert_eq!(run(t.path(), "synth", &["--config", "c.json"]).status.code(), Some(2));
}

#[test]
fn config_file_and_flags_layer_over_the_preset() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("run.json"), r#"{"seed": 9, "picking": {"snap_radius": 3}}"#).unwrap();
    synth(t.path(), "d", 5, 0);
    let o = run(t.path(), "synth", &["--config", "run.json", "--seed", "11", "--data", "e", "--set", "synth.surveys=[{\"survey_id\":\"x\",\"gathers\":1}]"]);
    ok(&o);
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("e/config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 11);
    assert_eq!(resolved["picking"]["snap_radius"], 3);
    assert_eq!(resolved["preset"], "desk");
    assert_eq!(resolved["training"]["batch_size"], 32);
}

#[test]
fn train_pick_eval_robustness_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "data", 10, 3);
    let tr = run(d, "train", &["--data", "data", "--out", "run"]);
    ok(&tr);
    let log = fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_acc,val_mae,val_apr");
    assert_eq!(lines.len(), 3);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(2).is_some_and(|v| !v.is_empty())));
    assert!(fbpick::unet::load_model(&d.join("run/model.json")).is_ok());
    assert!(d.join("run/config.resolved.json").exists());

    let gathers = gather_paths(d, "data");
    let mut args = vec!["--checkpoint", "run/model.json", "--out", "p1"];
    args.extend(gathers.iter().map(String::as_str));
    ok(&run(d, "pick", &args));
    args[3] = "p2";
    ok(&run(d, "pick", &args));
    let p1 = files(&d.join("p1"));
    assert_eq!(p1.len(), gathers.len());
    assert_eq!(p1, files(&d.join("p2")));

    let mut eargs = vec!["--picks", "p1", "--out", "ev"];
    eargs.extend(gathers.iter().map(String::as_str));
    let ev = run(d, "eval", &eargs);
    // an undertrained network may pick nothing; then eval must fail with a data error
    match ev.status.code() {
        Some(0) => assert!(d.join("ev/eval.csv").exists()),
        code => assert_eq!(code, Some(3)),
    }

    let rargs = ["--checkpoint", "run/model.json", "--out", "r1", &gathers[0], &gathers[1]];
    ok(&run(d, "robustness", &rargs));
    let mut r2 = rargs;
    r2[3] = "r2";
    ok(&run(d, "robustness", &r2));
    assert_eq!(files(&d.join("r1")), files(&d.join("r2")));
    let summary = fs::read_to_string(d.join("r1/sweep_summary.csv")).unwrap();
    let levels: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(levels, ["clean", "5", "2", "1", "-1", "-3", "-5", "-7", "-8", "-9", "-10"]);
    assert_eq!(fs::read_to_string(d.join("r1/sweep.csv")).unwrap().lines().count(), 1 + 11 * 2);
}

#[test]
fn training_is_byte_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "data", 6, 2);
    ok(&run(d, "train", &["--data", "data", "--out", "a"]));
    ok(&run(d, "train", &["--data", "data", "--out", "b"]));
    assert_eq!(files(&d.join("a")), files(&d.join("b")));
    ok(&run(d, "train", &["--data", "data", "--out", "c", "--seed", "1"]));
    assert_ne!(fs::read(d.join("a/model.bin")).unwrap(), fs::read(d.join("c/model.bin")).unwrap());
}

#[test]
fn zero_dropout_checkpoint_gives_zero_variance() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "data", 6, 4);
    ok(&run(d, "train", &["--data", "data", "--out", "run", "--set", "unet.dropout_rate=0"]));
    let gathers = gather_paths(d, "data");
    ok(&run(d, "pick", &["--checkpoint", "run/model.json", "--out", "p", "--set", "picking.mc_samples=5", &gathers[0]]));
    let text = fs::read_to_string(d.join("p/g00000.picks.csv")).unwrap();
    let mut rows = 0;
    for l in text.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[3], "0.000000", "{l}");
        assert_eq!(f[4], "0.000000", "{l}");
        rows += 1;
    }
    assert_eq!(rows, 64);
}

#[test]
fn pick_isolates_per_file_failures() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "data", 6, 5);
    ok(&run(d, "train", &["--data", "data", "--out", "run"]));
    let g = gather_paths(d, "data");
    fs::write(d.join("broken.fbg"), b"FBG1garbage").unwrap();
    let o = run(d, "pick", &["--checkpoint", "run/model.json", "--out", "p", &g[0], "nope.fbg", "broken.fbg", &g[1]]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nope.fbg") && err.contains("broken.fbg"), "{err}");
    assert!(d.join("p/g00000.picks.csv").exists() && d.join("p/g00001.picks.csv").exists());

    let no_ckpt = run(d, "pick", &["--out", "q", &g[0]]);
    assert_eq!(no_ckpt.status.code(), Some(2));
    let mismatch = run(d, "pick", &["--checkpoint", "run/model.json", "--out", "q", "--set", r#"precondition.features=["gather","agc"]"#, "--set", "unet.in_channels=2", &g[0]]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn finetuning_needs_and_uses_a_pretrained_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "data", 84, 6);
    let regime = r#"regime={"type":"finetuning","target":"synth-a"}"#;
    let missing = run(d, "train", &["--data", "data", "--out", "ft", "--set", regime]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("pretrained"));

    ok(&run(d, "train", &["--data", "data", "--out", "pre", "--set", "training.max_epochs=1", "--set", r#"regime={"type":"pretraining","sources":["synth-a"]}"#]));
    let o = run(d, "train", &["--data", "data", "--out", "ft", "--set", regime, "--set", "training.max_epochs=1", "--pretrained", "pre/model.json"]);
    ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("training on 50 gathers") && stdout.contains("batch 4, lr 0.0001"), "{stdout}");
    let split: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ft/split.json")).unwrap()).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 50);
}

fn label_report(labels: &[i32]) -> String {
    let mut s = String::from("trace,pick,confidence,variance,entropy,filtered\n");
    for (j, l) in labels.iter().enumerate() {
        s.push_str(&format!("{j},{l},1.000000,0.000000,0.000000,0\n"));
    }
    s
}

#[test]
fn eval_scores_reports_and_aggregates_runs() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "data", 3, 7);
    let g = gather_paths(d, "data");
    fs::create_dir_all(d.join("perfect")).unwrap();
    fs::create_dir_all(d.join("shifted")).unwrap();
    fs::create_dir_all(d.join("empty")).unwrap();
    for p in &g {
        let gather = load_gather(&d.join(p)).unwrap();
        let stem = Path::new(p).file_stem().unwrap().to_str().unwrap().to_string();
        fs::write(d.join(format!("perfect/{stem}.picks.csv")), label_report(gather.fb_labels())).unwrap();
        let shifted: Vec<i32> = gather.fb_labels().iter().map(|l| l + 2).collect();
        fs::write(d.join(format!("shifted/{stem}.picks.csv")), label_report(&shifted)).unwrap();
        fs::write(d.join(format!("empty/{stem}.picks.csv")), label_report(&vec![-1; gather.traces()])).unwrap();
    }
    let mut args = vec!["--picks", "perfect", "--out", "e1"];
    args.extend(g.iter().map(String::as_str));
    ok(&run(d, "eval", &args));
    let report = fs::read_to_string(d.join("e1/eval.csv")).unwrap();
    let all = report.lines().last().unwrap();
    assert!(all.starts_with("all,192,192,192,0.000000,1.000000,1.000000,1.000000"), "{all}");
    assert_eq!(report.lines().count(), 1 + 3 + 1);

    let mut args = vec!["--picks", "perfect", "--picks", "shifted", "--out", "e2"];
    args.extend(g.iter().map(String::as_str));
    ok(&run(d, "eval", &args));
    let s = fs::read_to_string(d.join("e2/eval_summary.csv")).unwrap();
    assert_eq!(s.lines().next().unwrap(), "metric,mean,std,runs");
    assert!(s.contains("mae,1.000000,1.414214,2"), "{s}");
    assert!(s.contains("acc,0.500000,0.707107,2"), "{s}");
    assert!(d.join("e2/eval_0.csv").exists() && d.join("e2/eval_1.csv").exists());

    let mut args = vec!["--picks", "empty", "--out", "e3"];
    args.extend(g.iter().map(String::as_str));
    let o = run(d, "eval", &args);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("apr 0.000000"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no comparable traces"));

    let picks = read_pick_report(&d.join("perfect/g00000.picks.csv")).unwrap();
    assert_eq!(picks.len(), 64);
}

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_codeset-bench"))
}

#[test]
fn no_args_prints_usage_and_exits_1() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_1() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let out = bin().arg("gradcheck").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    for name in ["dense", "conv1d", "max_pool1d", "rnn", "lstm", "gru", "sigmoid+bce"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn oracle_passes() {
    let out = bin().args(["oracle", "--trials", "50"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn incompatible_config_fails_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.txt");
    std::fs::write(&cfg, "features.track = tfidf40k\nmodel.preset = lstm-desk\n").unwrap();
    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap(), "run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));
    assert!(!tmp.path().join("cache").exists());
}

#[test]
fn staged_commands_then_report_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = tmp.path().join("c.txt");
    std::fs::write(
        &cfg,
        "dataset.synthetic.n = 80\ndataset.k = 5\nfeatures.track = tfidf20k\nfeatures.tfidf.min_df = 2\n\
         model.preset = logreg\nmodel.iterations = 20\n",
    )
    .unwrap();
    let run = |args: &[&str]| {
        let mut c = bin();
        c.args(["--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
        let o = c.args(args).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    let prep = run(&["prepare"]);
    assert!(prep.contains("coverage"));
    run(&["featurize"]);
    let run_dir = run(&["train"]).trim().to_string();
    run(&["evaluate", "--run", &run_dir]);
    let summary = run(&["report", "--run", &run_dir]);
    assert!(summary.contains("f1"));
    let run_path = std::path::Path::new(&run_dir);
    assert!(run_path.join("metrics.json").exists());
    assert!(run_path.join("pr_test.csv").exists());
    let csv = tmp.path().join("cmp.csv");
    let table = run(&["compare", &run_dir, "--csv", csv.to_str().unwrap()]);
    assert_eq!(table.lines().count(), 2);
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("model,"));
}

#[test]
fn synth_writes_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--out-dir", tmp.path().to_str().unwrap(), "--seed", "3", "synth", "--n", "30", "--k", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("NOTEEVENTS.csv").exists());
    assert!(tmp.path().join("DIAGNOSES_ICD.csv").exists());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn moodfed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moodfed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path, users: &str, sessions: &str, seed: &str) -> String {
    let path = dir.join(format!("corpus_{users}_{sessions}_{seed}.jsonl"));
    let p = path.to_str().unwrap().to_string();
    let out = moodfed(&["generate", "--users", users, "--sessions", sessions, "--seed", seed, "--out", &p]);
    assert!(out.status.success(), "{}", stderr(&out));
    p
}

const SMALL_RUN: &[&str] = &[
    "--model", "dnn", "--rounds", "2", "--local-epochs", "1", "--batch-size", "16", "--hidden-dim", "3",
    "--eval-every", "1",
];

fn run(dataset: &str, out_dir: &Path, extra: &[&str]) -> Output {
    let out = out_dir.to_str().unwrap();
    let mut args = vec!["run", "--dataset", dataset, "--output", out];
    args.extend_from_slice(SMALL_RUN);
    args.extend_from_slice(extra);
    moodfed(&args)
}

fn final_accuracy(dir: &Path) -> f64 {
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    report["final_accuracy"].as_f64().unwrap()
}

#[test]
fn generate_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "4", "10", "1");
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 40);
    let again = dir.path().join("again.jsonl");
    let out = moodfed(&["generate", "--users", "4", "--sessions", "10", "--seed", "1", "--out", again.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("40 sessions from 4 users"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn generate_default_corpus_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("full.jsonl");
    let out = moodfed(&["generate", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote 14960 sessions from 20 users"));
}

#[test]
fn generate_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let target = blocker.join("corpus.jsonl");
    let out = moodfed(&["generate", "--users", "4", "--sessions", "5", "--out", target.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("cannot write"), "{}", stderr(&out));
}

#[test]
fn run_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "8", "20", "3");
    let out_dir = dir.path().join("run");
    let out = run(&data, &out_dir, &["--protocol", "fedavg", "--parties", "2", "--per-party", "30"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,protocol,model,parties,per_party,seed,train_loss,val_accuracy,val_fscore,seconds"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&first[..6], &["1", "fedavg", "DNN", "2", "30", "0"]);
    assert_eq!(lines.count(), 1);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["rounds"], 2);
    assert_eq!(report["config"]["protocol"], "fedavg");
}

#[test]
fn run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "8", "20", "4");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run(&data, d, &["--protocol", "ciil", "--parties", "3", "--per-party", "20", "--seed", "9"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn single_party_fedavg_matches_cds() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "8", "20", "5");
    let common = ["--parties", "1", "--per-party", "40"];
    let fed = dir.path().join("fed");
    let cds = dir.path().join("cds");
    assert!(run(&data, &fed, &[&["--protocol", "fedavg"][..], &common].concat()).status.success());
    assert!(run(&data, &cds, &[&["--protocol", "cds"][..], &common].concat()).status.success());
    assert!((final_accuracy(&fed) - final_accuracy(&cds)).abs() <= 1e-12);
}

#[test]
fn ciil_one_round_matches_iil() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "8", "20", "6");
    let ciil = dir.path().join("ciil");
    let iil = dir.path().join("iil");
    let common = ["--parties", "3", "--per-party", "15", "--rounds", "1"];
    assert!(run(&data, &ciil, &[&["--protocol", "ciil"][..], &common].concat()).status.success());
    assert!(run(&data, &iil, &[&["--protocol", "iil"][..], &common].concat()).status.success());
    assert_eq!(final_accuracy(&ciil), final_accuracy(&iil));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "8", "20", "7");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"protocol": "cds", "parties": 2, "per_party": 25, "seed": 4}"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&data, &out_dir, &["--config", cfg.to_str().unwrap(), "--per-party", "10"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["protocol"], "cds");
    assert_eq!(report["config"]["per_party"], 10);
    assert_eq!(report["config"]["seed"], 4);
    assert_eq!(report["config"]["local_epochs"], 1);
    assert_eq!(report["config"]["batch_size"], 16);
    assert_eq!(report["config"]["learning_rate"], 0.001);
}

#[test]
fn invalid_combinations_fail_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "8", "20", "8");
    let out = run(&data, &dir.path().join("x"), &["--noniid", "--parties", "3"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--parties 4"), "{}", stderr(&out));

    let out = run(&data, &dir.path().join("y"), &["--dropout", "1.5"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("dropout"));

    let missing = dir.path().join("missing.jsonl");
    let out = run(missing.to_str().unwrap(), &dir.path().join("z"), &[]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("loading dataset"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"protocl": "cds"}"#).unwrap();
    let out = run(&data, &dir.path().join("w"), &["--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("parsing config"));

    assert!(!moodfed(&["run", "--protocol", "gossip"]).status.success());
    assert!(!moodfed(&["frobnicate"]).status.success());
}

#[test]
fn noniid_run_with_four_hospitals() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "20", "6", "9");
    let out_dir = dir.path().join("noniid");
    let out = run(&data, &out_dir, &["--noniid", "--parties", "4", "--rounds", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",4,noniid,"));
}

#[test]
fn partition_reports_parties() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "20", "10", "10");
    let members = dir.path().join("parties.json");
    let out = moodfed(&[
        "partition", "--dataset", &data, "--parties", "4", "--noniid", "--out", members.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train 160 / validation 40"), "{stdout}");
    assert!(stdout.contains("party 0: 32 samples"), "{stdout}");
    assert!(stdout.contains("users [0, 1, 8, 14]"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&members).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 4);
}

#[test]
fn gradcheck_pass_and_corrupted_fail() {
    let out = moodfed(&["gradcheck", "--instances", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("PASS").count(), 3, "{stdout}");

    let out = moodfed(&["gradcheck", "--model", "dmvm", "--instances", "1", "--corrupt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn gradcheck_is_repeatable() {
    let a = moodfed(&["gradcheck", "--model", "dfm", "--instances", "2", "--seed", "3"]);
    let b = moodfed(&["gradcheck", "--model", "dfm", "--instances", "2", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sweep_emits_one_run_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "20", "8", "11");
    let out_dir = dir.path().join("sweep");
    let out = moodfed(&[
        "sweep", "--grid", "parties", "--protocols", "fedavg", "--dataset", &data, "--output",
        out_dir.to_str().unwrap(), "--model", "dnn", "--rounds", "1", "--local-epochs", "1", "--hidden-dim", "2",
        "--batch-size", "512",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let parties: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(parties, vec!["4", "8", "12", "16", "24"]);
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 5);
}

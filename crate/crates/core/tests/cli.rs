//! End-to-end checks of the `hierloss` binary: artifact layout, manifest
//! headers, exit codes, and byte-identical reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

const BIN: &str = env!("CARGO_BIN_EXE_hierloss");

static DIR_COUNTER: AtomicUsize = AtomicUsize::new(0);

struct Workdir(PathBuf);

impl Workdir {
    fn new(tag: &str) -> Workdir {
        let n = DIR_COUNTER.fetch_add(1, Ordering::SeqCst);
        let path = std::env::temp_dir().join(format!(
            "hierloss-cli-{tag}-{}-{n}",
            std::process::id()
        ));
        fs::create_dir_all(&path).unwrap();
        Workdir(path)
    }

    fn path(&self) -> &Path {
        &self.0
    }

    fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, content: &str) -> PathBuf {
        let p = self.file(name);
        fs::write(&p, content).unwrap();
        p
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.file(name)).unwrap()
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

const TREE: &str = "v1\troot\n\
                    v2\tA\n\
                    v3\tA\n\
                    v4\tA\n\
                    v5\tB\n\
                    v6\tC\n\
                    v7\tC\n\
                    A\troot\n\
                    B\troot\n\
                    C\tB\n";

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary launches")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn weights_dump_matches_closed_forms() {
    let dir = Workdir::new("weights");
    let tree = dir.write("tree.tsv", TREE);
    let out = run(&[
        "weights",
        "--tree",
        tree.to_str().unwrap(),
        "--q",
        "1",
        "--full-precision",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("status=ok"), "{text}");
    assert!(text.contains("balance constant=0.5"), "{text}");

    let dump = dir.read("weights.csv");
    let mut lines = dump.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: "));
    assert_eq!(
        lines.next().unwrap(),
        "node_id,original_id,parent,height,depth,weight,ancestor_sum"
    );
    // leaves 1..=7 then internals by height; at q=1 each node splits the
    // remaining half of its path budget evenly across the levels below it
    let expected = [
        0.0,
        0.5,
        0.25,
        0.25,
        0.25,
        1.0 / 3.0,
        1.0 / 6.0,
        1.0 / 6.0,
        0.25,
        1.0 / 6.0,
        1.0 / 6.0,
    ];
    let mut seen = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7, "{line}");
        let id: usize = fields[0].parse().unwrap();
        let weight: f64 = fields[5].parse().unwrap();
        let cum: f64 = fields[6].parse().unwrap();
        assert!(
            (weight - expected[id]).abs() <= 1e-12,
            "node {id}: {weight} vs {}",
            expected[id]
        );
        if (1..=7).contains(&id) {
            assert_eq!(cum, 0.5, "leaf {id} ancestor sum");
        }
        seen += 1;
    }
    assert_eq!(seen, 11);
}

#[test]
fn every_artifact_opens_with_the_same_manifest() {
    let dir = Workdir::new("manifest");
    let tree = dir.write("tree.tsv", TREE);
    let out = run(&[
        "train",
        "--tree",
        tree.to_str().unwrap(),
        "--loss",
        "hier",
        "--q",
        "0.9",
        "--epochs",
        "20",
        "--per-class",
        "4",
        "--seed",
        "7",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let mut manifests = Vec::new();
    for name in ["checkpoint.json", "report.json", "curve.csv"] {
        let content = dir.read(name);
        let first = content.lines().next().unwrap();
        let payload = first
            .strip_prefix("# manifest: ")
            .unwrap_or_else(|| panic!("{name} starts with {first}"));
        let doc: serde_json::Value = serde_json::from_str(payload).unwrap();
        assert_eq!(doc["subcommand"], "train");
        assert_eq!(doc["seed"], 7);
        assert_eq!(doc["params"]["loss"], "hier");
        assert!(doc["version"].is_string());
        manifests.push(first.to_string());
    }
    assert_eq!(manifests[0], manifests[1]);
    assert_eq!(manifests[1], manifests[2]);

    let out = run(&[
        "synth",
        "--tree",
        tree.to_str().unwrap(),
        "--per-class",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let dataset = dir.read("dataset.csv");
    let first = dataset.lines().next().unwrap();
    let doc: serde_json::Value =
        serde_json::from_str(first.strip_prefix("# manifest: ").unwrap()).unwrap();
    assert_eq!(doc["subcommand"], "synth");
    assert_eq!(doc["params"]["per_class"], 3);
}

#[test]
fn saved_checkpoints_evaluate_and_plot() {
    let dir = Workdir::new("roundtrip");
    let tree = dir.write("tree.tsv", TREE);
    let tree_arg = tree.to_str().unwrap();
    let dir_arg = dir.path().to_str().unwrap();

    let out = run(&[
        "synth", "--tree", tree_arg, "--per-class", "6", "--spread", "0.2", "--seed", "3",
        "--full-precision", "--out-dir", dir_arg,
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let data = dir.file("dataset.csv");
    let data_arg = data.to_str().unwrap();
    let out = run(&[
        "train", "--tree", tree_arg, "--data", data_arg, "--loss", "ce", "--epochs", "60",
        "--seed", "3", "--out-dir", dir_arg,
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("training loss: first="));

    let model = dir.file("checkpoint.json");
    let model_arg = model.to_str().unwrap();
    let eval_dir = Workdir::new("roundtrip-eval");
    let out = run(&[
        "evaluate", "--tree", tree_arg, "--model", model_arg, "--data", data_arg,
        "--q", "1", "--full-precision", "--out-dir", eval_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report = eval_dir.read("report.json");
    let body: String = report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let doc: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(doc["sample_count"], 42);
    let accuracy = doc["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy));
    assert!(doc["mean_hier_distance"].as_f64().unwrap() >= 0.0);
    assert!(doc["mean_wasserstein"].as_f64().unwrap() >= 0.0);

    let out = run(&[
        "curve", "--tree", tree_arg, "--model", model_arg, "--data", data_arg,
        "--q", "1", "--full-precision", "--out-dir", eval_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let curve = eval_dir.read("curve.csv");
    let rows: Vec<&str> = curve.lines().collect();
    assert!(rows[0].starts_with("# manifest: "));
    assert_eq!(rows[1], "tau,group_count,accuracy");
    assert_eq!(rows[2], "0,1,1");
    let last: Vec<&str> = rows.last().unwrap().split(',').collect();
    assert_eq!(last[0], "0.5");
    assert_eq!(last[2], accuracy.to_string());
    let counts: Vec<usize> = rows[2..]
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
}

#[test]
fn identical_invocations_reproduce_artifacts_byte_for_byte() {
    let dir = Workdir::new("determinism");
    let tree = dir.write("tree.tsv", TREE);
    let args = [
        "train",
        "--tree",
        tree.to_str().unwrap(),
        "--loss",
        "hxe",
        "--alpha",
        "0.3",
        "--epochs",
        "25",
        "--per-class",
        "5",
        "--seed",
        "11",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ];
    let names = ["checkpoint.json", "report.json", "curve.csv"];

    let first = run(&args);
    assert_eq!(code(&first), 0, "stderr: {}", stderr(&first));
    let snapshot: Vec<String> = names.iter().map(|n| dir.read(n)).collect();

    let second = run(&args);
    assert_eq!(code(&second), 0);
    assert_eq!(first.stdout, second.stdout);
    for (name, before) in names.iter().zip(&snapshot) {
        assert_eq!(&dir.read(name), before, "{name} changed between reruns");
    }

    let quick = ["verify", "--quick", "--seed", "5"];
    let a = run(&quick);
    let b = run(&quick);
    assert_eq!(code(&a), 0, "stderr: {}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let dir = Workdir::new("exits");
    let tree = dir.write("tree.tsv", TREE);
    let tree_arg = tree.to_str().unwrap();
    let dir_arg = dir.path().to_str().unwrap();

    // 0: success
    let ok = run(&["weights", "--tree", tree_arg, "--out-dir", dir_arg]);
    assert_eq!(code(&ok), 0);

    // 1: a verification check reports failure
    let corrupt = run(&["verify", "--quick", "--corrupt-weights"]);
    assert_eq!(code(&corrupt), 1);
    assert!(stdout(&corrupt).contains("FAIL balance"), "{}", stdout(&corrupt));
    assert!(stderr(&corrupt).contains("error:"));

    // raw hxe chain weights balance against their own constant e^-alpha
    let raw_hxe = run(&[
        "weights", "--tree", tree_arg, "--scheme", "hxe", "--alpha", "0.4",
        "--out-dir", dir_arg,
    ]);
    assert_eq!(code(&raw_hxe), 0);
    let text = stdout(&raw_hxe);
    assert!(
        text.contains(&format!("balance constant={}", (-0.4f64).exp())),
        "{text}"
    );
    assert!(text.contains("status=ok"));

    // 2: malformed input file
    let bad = dir.write("bad.tsv", "a\tb\tc\n");
    let malformed = run(&[
        "weights", "--tree", bad.to_str().unwrap(), "--out-dir", dir_arg,
    ]);
    assert_eq!(code(&malformed), 2);

    // 2: missing input file
    let missing = run(&[
        "weights", "--tree", dir.file("absent.tsv").to_str().unwrap(),
        "--out-dir", dir_arg,
    ]);
    assert_eq!(code(&missing), 2);

    // 2: contradictory flags
    let contradictory = run(&[
        "weights", "--tree", tree_arg, "--scheme", "exponential", "--alpha", "0.2",
        "--out-dir", dir_arg,
    ]);
    assert_eq!(code(&contradictory), 2);

    // 2: clap usage error
    let usage = run(&["weights", "--no-such-flag"]);
    assert_eq!(code(&usage), 2);
}

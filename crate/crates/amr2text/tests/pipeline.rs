//! End-to-end tests of the command-line binary: exit codes, output formats,
//! config handling, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const RULES: &str = "\
(w / want-01) ||| wants ||| 10
(g / go-01) ||| to go ||| 8
(w / want-01 :ARG1 (g / go-01)) ||| wants to go ||| 5
(b / boy) ||| The boy ||| 7
";
const BANK: &str = "\
# ::snt The boy wants to go
(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))
";

struct Fixture {
    dir: tempfile::TempDir,
    corpus: PathBuf,
    rules: PathBuf,
    bank: PathBuf,
    arpa: PathBuf,
    model: PathBuf,
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amr2text"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

impl Fixture {
    /// Writes the toy corpus and trains both models through the binary.
    fn trained() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name);
        let f = Fixture {
            corpus: p("corpus.txt"),
            rules: p("rules.txt"),
            bank: p("bank.amr"),
            arpa: p("toy.arpa"),
            model: p("model.txt"),
            dir,
        };
        std::fs::write(&f.corpus, "the boy wants to go\n").unwrap();
        std::fs::write(&f.rules, RULES).unwrap();
        std::fs::write(&f.bank, BANK).unwrap();
        let out = run(bin()
            .args(["train-lm", "--corpus"])
            .arg(&f.corpus)
            .arg("--out")
            .arg(&f.arpa));
        assert!(out.status.success(), "{}", stderr(&out));
        let out = run(bin()
            .args(["train-transitions", "--corpus"])
            .arg(&f.bank)
            .arg("--rules")
            .arg(&f.rules)
            .arg("--lm")
            .arg(&f.arpa)
            .arg("--out")
            .arg(&f.model));
        assert!(out.status.success(), "{}", stderr(&out));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = run(bin().arg(flag));
        assert_eq!(out.status.code(), Some(0), "{flag}");
        assert!(!stdout(&out).is_empty());
    }
    let out = run(bin().args(["generate", "--help"]));
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    // unknown flag
    let out = run(bin().args(["train-lm", "--bogus"]));
    assert_eq!(out.status.code(), Some(1));
    // missing subcommand
    let out = run(&mut bin());
    assert_eq!(out.status.code(), Some(1));
    // unknown subcommand
    let out = run(bin().arg("frobnicate"));
    assert_eq!(out.status.code(), Some(1));
    // generate without any LM configured
    let f = Fixture::trained();
    let out = run(bin().args(["generate", "--input"]).arg(&f.bank));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--lm"));
}

#[test]
fn missing_files_exit_two() {
    let out = run(bin().args([
        "train-lm",
        "--corpus",
        "/nonexistent/corpus.txt",
        "--out",
        "/tmp/x.arpa",
    ]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/corpus.txt"));
}

#[test]
fn malformed_data_exits_three() {
    let f = Fixture::trained();
    // broken rule line
    let bad_rules = f.path("bad.rules");
    std::fs::write(&bad_rules, "only two ||| fields\n").unwrap();
    let out = run(bin()
        .args(["generate", "--input"])
        .arg(&f.bank)
        .arg("--rules")
        .arg(&bad_rules)
        .arg("--lm")
        .arg(&f.arpa)
        .arg("--model")
        .arg(&f.model));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    // broken graph in the bank
    let bad_bank = f.path("bad.amr");
    std::fs::write(&bad_bank, "# ::snt x\n(w / want-01 :ARG0\n").unwrap();
    let out = run(bin()
        .args(["generate", "--input"])
        .arg(&bad_bank)
        .arg("--rules")
        .arg(&f.rules)
        .arg("--lm")
        .arg(&f.arpa)
        .arg("--model")
        .arg(&f.model));
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("block 0"));

    // broken config
    let bad_cfg = f.path("bad.toml");
    std::fs::write(&bad_cfg, "not_a_known_key = true\n").unwrap();
    let out = run(bin()
        .arg("--config")
        .arg(&bad_cfg)
        .args(["generate", "--input"])
        .arg(&f.bank));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn degenerate_training_data_exits_four() {
    let f = Fixture::trained();
    // the reference shares no tokens with any rule translation, so no block
    // can be cut into gold transitions and no examples exist
    let hopeless = f.path("hopeless.amr");
    std::fs::write(
        &hopeless,
        "# ::snt completely unrelated words here\n(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))\n",
    )
    .unwrap();
    let out = run(bin()
        .args(["train-transitions", "--corpus"])
        .arg(&hopeless)
        .arg("--rules")
        .arg(&f.rules)
        .arg("--lm")
        .arg(&f.arpa)
        .arg("--out")
        .arg(f.path("m.txt")));
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn train_lm_reports_vocabulary_and_ngram_counts() {
    let f = Fixture::trained();
    let out = run(bin()
        .args(["train-lm", "--corpus"])
        .arg(&f.corpus)
        .arg("--out")
        .arg(f.path("again.arpa"))
        .args(["--order", "3"]));
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "vocabulary: 8");
    assert_eq!(lines[1], "ngram 1: 8");
    assert!(lines[2].starts_with("ngram 2: "));
    assert_eq!(lines.len(), 4); // order 3 -> three ngram lines
}

#[test]
fn train_transitions_reports_counts_and_is_seed_deterministic() {
    let f = Fixture::trained();
    let rerun = |out_name: &str, seed: &str| {
        let out = run(bin()
            .args(["train-transitions", "--corpus"])
            .arg(&f.bank)
            .arg("--rules")
            .arg(&f.rules)
            .arg("--lm")
            .arg(&f.arpa)
            .arg("--out")
            .arg(f.path(out_name))
            .args(["--seed", seed]));
        assert!(out.status.success(), "{}", stderr(&out));
        stdout(&out)
    };
    let text = rerun("m1.txt", "7");
    assert!(text.contains("pairs: 1"));
    assert!(text.contains("skipped pairs: 0"));
    assert!(text.contains("positives: 3"));
    assert!(text.contains("negatives: 12"));
    assert!(text.contains("final loss: "));
    assert!(text.contains("training accuracy: "));
    let _ = rerun("m2.txt", "7");
    let _ = rerun("m3.txt", "8");
    assert_eq!(read(&f.path("m1.txt")), read(&f.path("m2.txt")));
    assert_ne!(read(&f.path("m1.txt")), read(&f.path("m3.txt")));
}

#[test]
fn generate_emits_one_line_per_block_in_order() {
    let f = Fixture::trained();
    let two = f.path("two.amr");
    std::fs::write(&two, format!("{BANK}\n(b / boy)\n")).unwrap();
    let out = run(bin()
        .args(["generate", "--input"])
        .arg(&two)
        .arg("--rules")
        .arg(&f.rules)
        .arg("--lm")
        .arg(&f.arpa)
        .arg("--model")
        .arg(&f.model));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "The boy wants to go");
    // the single-node graph surfaces some licensed "boy" rule
    assert!(lines[1].to_lowercase().contains("boy"), "got {:?}", lines[1]);
}

#[test]
fn generate_verbose_writes_json_diagnostics() {
    let f = Fixture::trained();
    let out = run(bin()
        .arg("--verbose")
        .args(["generate", "--input"])
        .arg(&f.bank)
        .arg("--rules")
        .arg(&f.rules)
        .arg("--lm")
        .arg(&f.arpa)
        .arg("--model")
        .arg(&f.model));
    assert!(out.status.success());
    let err = stderr(&out);
    let line = err.lines().next().expect("one diagnostic line");
    let v: serde_json::Value = serde_json::from_str(line).expect("valid JSON");
    assert_eq!(v["block"], 0);
    assert_eq!(v["solver"], "exact");
    assert!(v["cost"].as_f64().unwrap().is_finite());
    assert!(v["rules"].as_array().unwrap().len() >= 2);
}

#[test]
fn baseline_bigram_needs_no_model() {
    let f = Fixture::trained();
    let out = run(bin()
        .args(["generate", "--baseline-bigram", "--input"])
        .arg(&f.bank)
        .arg("--rules")
        .arg(&f.rules)
        .arg("--lm")
        .arg(&f.arpa));
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "The boy wants to go\n");
}

#[test]
fn config_supplies_paths_and_flags_override() {
    let f = Fixture::trained();
    let cfg = f.path("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            "top_n = 5\nseed = 3\n[paths]\nrules = {:?}\nlm = {:?}\nmodel = {:?}\n",
            f.rules, f.arpa, f.model
        ),
    )
    .unwrap();
    // config alone supplies every path
    let out = run(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["generate", "--input"])
        .arg(&f.bank));
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "The boy wants to go\n");

    // a flag overrides the config path: point --lm at a bad file
    let broken = f.path("broken.arpa");
    std::fs::write(&broken, "not an arpa file\n").unwrap();
    let out = run(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["generate", "--input"])
        .arg(&f.bank)
        .arg("--lm")
        .arg(&broken));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn evaluate_prints_the_report() {
    let f = Fixture::trained();
    let out = run(bin()
        .args(["evaluate", "--input"])
        .arg(&f.bank)
        .arg("--rules")
        .arg(&f.rules)
        .arg("--lm")
        .arg(&f.arpa)
        .arg("--model")
        .arg(&f.model));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("instances: 1\n"));
    assert!(text.contains("filtered: 0\n"));
    assert!(text.contains("evaluated: 1\n"));
    assert!(text.contains("failed: 0\n"));
    assert!(text.contains("induced concept coverage: 100.00%\n"));
    assert!(text.contains("induced graph coverage: 100.00%\n"));
    assert!(text.contains("BLEU: 100.00\n"));
}

#[test]
fn arpa_file_reloads_identically_through_cli_round_trip() {
    let f = Fixture::trained();
    // a model written from a reread file is byte-identical
    let text = read(&f.arpa);
    let lm = amr2text::lm::read_arpa(&text).unwrap();
    assert_eq!(amr2text::lm::write_arpa(&lm), text);
}

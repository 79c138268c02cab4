//! Subcommands run as a subprocess against small on-disk setups.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detox-eval"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    /// A config in a fresh directory; `body` is appended after the dataset table.
    fn new(dataset: &Path, body: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = format!(
            "run_id = \"t\"\nseed = 3\nbatch_size = 10\n\n[dataset]\npath = {:?}\nformat = \"jsonl\"\n\n{body}",
            dataset.display().to_string()
        );
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Setup { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("run.toml")
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        run(args, &self.config(), &self.out())
    }

    fn file(&self, rel: &str) -> String {
        std::fs::read_to_string(self.out().join("runs/t").join(rel)).unwrap()
    }

    fn write(&self, name: &str, contents: &str) {
        std::fs::write(self.dir.path().join(name), contents).unwrap();
    }
}

fn abusive_fixture(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("fifty.jsonl");
    let lines: Vec<String> = (0..n)
        .map(|i| {
            format!(
                r#"{{"id":"f{i:02}","text":"you pathetic clown number {i}","label":1,"category":"racism"}}"#
            )
        })
        .collect();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

const ECHO_PROVIDER: &str = "[[providers]]\nname = \"echo\"\n";

#[test]
fn ingest_valid_fixture() {
    let s = Setup::new(&fixture("three.jsonl"), "");
    let o = s.run(&["ingest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("3 records loaded"));
    assert!(s.file("analysis/ingest.json").contains("\"records\": 3"));
}

#[test]
fn ingest_missing_file_is_fatal() {
    let missing = PathBuf::from("/nonexistent/corpus.jsonl");
    let s = Setup::new(&missing, "");
    let o = s.run(&["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/corpus.jsonl"), "{}", stderr(&o));
}

#[test]
fn ingest_duplicate_id_is_fatal() {
    let s = Setup::new(&fixture("duplicate.jsonl"), "");
    let o = s.run(&["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t1"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let s = Setup::new(&fixture("three.jsonl"), "[bogus]\nx = 1\n");
    assert_eq!(s.run(&["ingest"]).status.code(), Some(2));
}

#[test]
fn always_succeeding_mock_reports_full_success() {
    let tmp = tempfile::tempdir().unwrap();
    let data = abusive_fixture(tmp.path(), 50);
    let s = Setup::new(&data, ECHO_PROVIDER);
    let o = s.run(&["transform", "--mock"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("50 provider calls dispatched"));
    let o = s.run(&["report", "--mock", "--formats", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = s.file("tables/metrics.csv");
    let rates: Vec<&str> = metrics.lines().filter(|l| l.contains("success_rate")).collect();
    assert_eq!(rates.len(), 5);
    assert!(rates.iter().all(|l| l.ends_with(",100.0")), "{metrics}");
}

#[test]
fn resume_makes_no_new_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let data = abusive_fixture(tmp.path(), 30);
    let s = Setup::new(&data, ECHO_PROVIDER);
    assert_eq!(s.run(&["transform", "--mock"]).status.code(), Some(0));
    let first = s.file("logs/transform.jsonl");
    let o = s.run(&["transform", "--mock", "--resume"]);
    assert!(stdout(&o).contains("0 provider calls dispatched"), "{}", stdout(&o));
    assert_eq!(s.file("logs/transform.jsonl"), first);
    let o = s.run(&["transform", "--mock"]);
    assert!(stdout(&o).contains("30 provider calls dispatched"));
}

#[test]
fn scripted_mock_sets_per_batch_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = abusive_fixture(tmp.path(), 20);
    let mut script = String::new();
    for i in 0..20 {
        let text = format!("you pathetic clown number {i}");
        let line = match i {
            0..=2 => format!(r#"{{"model":"m","task":"transform","input":"{text}","response":"I'm sorry, I cannot do that."}}"#),
            10 => format!(r#"{{"model":"m","task":"transform","input":"{text}","error":"http:400"}}"#),
            _ => format!(r#"{{"model":"m","task":"transform","input":"{text}","response":"a kind note {i}"}}"#),
        };
        script.push_str(&line);
        script.push('\n');
    }
    let script_path = tmp.path().join("script.jsonl");
    std::fs::write(&script_path, script).unwrap();
    let s = Setup::new(&data, &format!("[mock]\nscript = {:?}\n", script_path.display().to_string()));
    let o = s.run(&["transform", "--mock"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = s.file("analysis/transform.json");
    let v: serde_json::Value = serde_json::from_str(&t).unwrap();
    let rows = v["rates"]["rows"].as_array().unwrap();
    assert_eq!(rows[0]["values"][0], 70.0);
    assert_eq!(rows[1]["values"][0], 90.0);
    assert_eq!(v["counts"][0]["refusal"], 3);
    assert_eq!(v["counts"][0]["error"], 1);
}

#[test]
fn ngram_section_writes_bigram_and_trigram_tables() {
    let s = Setup::new(&fixture("three.jsonl"), ECHO_PROVIDER);
    assert_eq!(s.run(&["transform", "--mock"]).status.code(), Some(0));
    let o = s.run(&["analyze", "--mock", "--sections", "ngrams"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    s.run(&["report", "--mock", "--formats", "csv"]);
    let bigrams = s.file("tables/ngrams_original_2.csv");
    assert!(bigrams.starts_with("rank,ngram,count\n"), "{bigrams}");
    assert!(bigrams.contains("idiot clown"), "{bigrams}");
    assert!(s.file("tables/ngrams_original_3.csv").lines().count() >= 2);
}

#[test]
fn self_comparison_similarity_is_all_ones() {
    let s = Setup::new(&fixture("three.jsonl"), ECHO_PROVIDER);
    assert_eq!(s.run(&["transform", "--mock"]).status.code(), Some(0));
    let o = s.run(&["analyze", "--mock", "--sections", "similarity"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    s.run(&["report", "--mock", "--formats", "csv"]);
    let sim = s.file("tables/similarity.csv");
    let rows: Vec<&str> = sim.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "original vs echo");
        assert_eq!(cols[2], "1.000", "{row}");
        assert_eq!(cols[3], "0.000", "{row}");
    }
}

#[test]
fn empty_lexicon_gives_zero_hate_counts_and_a_warning() {
    let s = Setup::new(&fixture("three.jsonl"), &format!("{ECHO_PROVIDER}\n[lexicon]\nfile = \"empty.txt\"\n"));
    s.write("empty.txt", "");
    assert_eq!(s.run(&["transform", "--mock"]).status.code(), Some(0));
    let o = s.run(&["analyze", "--mock", "--sections", "hate"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("lexicon is empty"), "{}", stderr(&o));
    let hate: serde_json::Value = serde_json::from_str(&s.file("analysis/hate.json")).unwrap();
    for row in hate["counts"]["rows"].as_array().unwrap() {
        for v in row["values"].as_array().unwrap() {
            assert_eq!(v.as_f64(), Some(0.0));
        }
    }
    let strict = s.run(&["analyze", "--mock", "--sections", "hate", "--strict"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn analysis_without_a_transform_log_warns_and_skips() {
    let s = Setup::new(&fixture("three.jsonl"), ECHO_PROVIDER);
    let o = s.run(&["analyze", "--mock", "--sections", "similarity,hate"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("skipped"), "{}", stderr(&o));
    let o = s.run(&["report", "--mock", "--formats", "markdown"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(s.file("report.md").contains("section `similarity` not available; skipped"));
}

#[test]
fn unknown_model_filter_is_fatal() {
    let s = Setup::new(&fixture("three.jsonl"), ECHO_PROVIDER);
    let o = s.run(&["transform", "--mock", "--models", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn transform_without_providers_is_fatal() {
    let s = Setup::new(&fixture("three.jsonl"), "");
    assert_eq!(s.run(&["transform", "--mock"]).status.code(), Some(2));
}

#[test]
fn remote_provider_without_key_is_fatal() {
    let body = "[[providers]]\nname = \"remote\"\nbase_url = \"http://127.0.0.1:9\"\napi_key_env = \"DETOX_EVAL_CLI_TEST_UNSET\"\n";
    let s = Setup::new(&fixture("three.jsonl"), body);
    let o = s.run(&["detect"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("DETOX_EVAL_CLI_TEST_UNSET"), "{}", stderr(&o));
}

#[test]
fn outputs_stay_inside_the_output_directory() {
    let s = Setup::new(&fixture("three.jsonl"), ECHO_PROVIDER);
    for args in [
        &["ingest"][..],
        &["preprocess"],
        &["transform", "--mock"],
        &["detect", "--mock"],
        &["analyze", "--mock"],
        &["report", "--mock"],
    ] {
        let o = s.run(args);
        assert!(o.status.code() != Some(2), "{args:?}: {}", stderr(&o));
    }
    let mut top: Vec<String> = std::fs::read_dir(s.dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["out", "run.toml"]);
}

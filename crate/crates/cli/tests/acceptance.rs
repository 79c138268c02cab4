//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines are always printed:
//! `cargo test -p detox-eval-cli --test acceptance`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use detox_eval::corpus::{make_batches, Category, Dataset, TextRecord};
use detox_eval::metrics::{span_metrics, SpanMetrics};
use detox_eval::pipeline::{classify_outcome, run_transform, OutcomeClass, RunLog, RunOptions};
use detox_eval::provider::{
    next_backoff, ChatBackend, ChatRequest, Clock, ManualClock, Provider, ProviderConfig, ResponseStatus,
    RetryPolicy, ScriptedBackend, ThreadClock, TransportError,
};
use detox_eval::report::summarize;
use detox_eval::semantics::{BatchSimilarity, SimilarityTable};
use detox_eval::textstats::{log_odds_dirichlet, PriorCounts};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(label: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{label}: {got:.4} not within {tol} of {want}"))
}

fn fixture_columns(name: &str) -> Result<BTreeMap<String, Vec<f64>>, String> {
    let path = workspace().join("fixtures/published").join(name);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        for (h, v) in headers.iter().zip(row.iter()).skip(1) {
            out.entry(h.to_string()).or_default().push(v.parse().map_err(|_| format!("bad number {v:?}"))?);
        }
    }
    Ok(out)
}

fn criterion_1() -> Check {
    let acc = fixture_columns("accuracy.csv")?;
    let tr = fixture_columns("transformation_rates.csv")?;
    ensure(acc["gemini"].len() == 22 && tr["gemini"].len() == 20, || "unexpected batch counts".into())?;
    let mut detail = Vec::new();
    for (table, col, mean, std) in [
        (&acc, "gemini", 81.5, 12.1),
        (&acc, "groq", 78.0, 11.0),
        (&tr, "gemini", 53.4, 18.2),
        (&tr, "groq", 18.4, 12.8),
    ] {
        let s = summarize(&table[col]).map_err(|e| e.to_string())?;
        within(&format!("{col} mean"), s.mean, mean, 0.05)?;
        within(&format!("{col} std"), s.std, std, 0.1)?;
        detail.push(format!("{col} {:.2}/{:.2}", s.mean, s.std));
    }
    Ok(detail.join(", "))
}

fn criterion_2() -> Check {
    let path = workspace().join("fixtures/published/similarity.csv");
    let mut reader = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
    let mut batches: BTreeMap<(String, String), Vec<BatchSimilarity>> = BTreeMap::new();
    let mut stars: BTreeMap<(String, String), f64> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let key = (row[0].to_string(), row[1].to_string());
        let mean: f64 = row[3].parse().map_err(|_| "bad mean")?;
        if &row[2] == "*" {
            stars.insert(key, mean);
        } else {
            batches.entry(key).or_default().push(BatchSimilarity {
                batch: row[2].parse().map_err(|_| "bad batch")?,
                mean,
                std: row[4].parse().map_err(|_| "bad std")?,
                n: 20,
            });
        }
    }
    ensure(stars.len() == 10, || format!("expected 10 * rows, found {}", stars.len()))?;
    let mut worst: f64 = 0.0;
    for (key, star) in &stars {
        let per_batch = batches.remove(key).ok_or_else(|| format!("no batches for {key:?}"))?;
        let table = SimilarityTable::from_batches(("a".into(), "b".into()), per_batch).ok_or("empty table")?;
        within(&format!("{} {}", key.0, key.1), table.overall.mean, *star, 0.001)?;
        worst = worst.max((table.overall.mean - star).abs());
    }
    Ok(format!("10 * rows, max |diff| {worst:.5}"))
}

const REFUSALS: [&str; 6] = [
    "I'm sorry, but I can't help with rewriting that.",
    "As an AI language model, I cannot produce this.",
    "I cannot comply with this request.",
    "I\u{2019}m unable to assist with that content.",
    "This request goes against our content policy.",
    "I am sorry, I can't do that.",
];

fn criterion_3() -> Check {
    let records: Vec<TextRecord> = (0..400)
        .map(|i| {
            TextRecord::new(format!("s{i:03}"), format!("abusive sample text {i}"))
                .with_label(1)
                .with_category(Category::ABUSIVE[i % 4])
        })
        .collect();
    let ds = Dataset::new("scripted", records).map_err(|e| e.to_string())?;
    let batches = make_batches(&ds, 25).map_err(|e| e.to_string())?;
    // (model, failures, of which transport errors)
    let plan = [("gpt", 4, 1), ("deepseek", 7, 0), ("gemini", 15, 2), ("groq", 29, 3)];
    let mut expected: BTreeMap<(&str, String), OutcomeClass> = BTreeMap::new();
    let mut providers = Vec::new();
    for (m, (name, fails, errors)) in plan.iter().enumerate() {
        let mut backend = ScriptedBackend::new();
        for (i, r) in ds.iter().enumerate() {
            let slot = (i * 7 + m * 13) % 400;
            let class = if slot < *errors {
                backend.insert(r.text.clone(), Err(TransportError::Http { code: 400, body: "rejected".into() }));
                OutcomeClass::Error
            } else if slot < *fails {
                let refusal = REFUSALS[slot % REFUSALS.len()];
                if classify_outcome(refusal) != OutcomeClass::Refusal {
                    return Err(format!("classify_outcome misroutes scripted refusal {refusal:?}"));
                }
                backend.insert(r.text.clone(), Ok(refusal.into()));
                OutcomeClass::Refusal
            } else {
                backend.insert(r.text.clone(), Ok(format!("a respectful version of sample {i}")));
                OutcomeClass::Success
            };
            expected.insert((name, r.id.clone()), class);
        }
        let p = Provider::new(ProviderConfig::mock(*name), Arc::new(ThreadClock))
            .map_err(|e| e.to_string())?
            .with_chat(Arc::new(backend));
        providers.push(p);
    }
    let started = Instant::now();
    let mut log = RunLog::in_memory();
    let run = run_transform(&batches, &providers, &mut log, &RunOptions::transform("acceptance"))
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    for (name, outcomes) in &run.outcomes {
        for o in outcomes {
            let want = expected[&(name.as_str(), o.record_id.clone())];
            ensure(o.classification == want, || {
                format!("{name}/{}: classified {:?}, scripted {want:?}", o.record_id, o.classification)
            })?;
        }
    }
    let counts: Vec<usize> = plan.iter().map(|(n, _, _)| run.successes(n)).collect();
    ensure(counts == [396, 393, 385, 371], || format!("success counts {counts:?}"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("successes {counts:?} in {} ms", elapsed.as_millis()))
}

fn criterion_4() -> Check {
    let started = Instant::now();
    let check_pair = |p: &HashSet<u32>, g: &HashSet<u32>| -> Result<(), String> {
        let m = span_metrics(p, g);
        let inter = p.intersection(g).count() as f64;
        let union = p.union(g).count() as f64;
        let (np, ng) = (p.len() as f64, g.len() as f64);
        let brute = if p.is_empty() && g.is_empty() {
            SpanMetrics::PERFECT
        } else {
            let precision = if np == 0.0 { 0.0 } else { inter / np };
            let recall = if ng == 0.0 { 0.0 } else { inter / ng };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            SpanMetrics {
                precision,
                recall,
                f1,
                iou: inter / union,
            }
        };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        ensure(
            close(m.precision, brute.precision) && close(m.recall, brute.recall) && close(m.f1, brute.f1) && close(m.iou, brute.iou),
            || format!("{p:?} vs {g:?}: {m:?} != {brute:?}"),
        )?;
        ensure(m.iou <= m.f1 + 1e-12, || format!("IoU > F1 for {p:?} vs {g:?}"))?;
        if p == g {
            ensure(m == SpanMetrics::PERFECT, || format!("identity {p:?} gave {m:?}"))?;
        }
        if p.is_disjoint(g) && !(p.is_empty() && g.is_empty()) {
            ensure(m.f1 == 0.0 && m.iou == 0.0, || format!("disjoint {p:?} vs {g:?} gave {m:?}"))?;
        }
        Ok(())
    };
    let subset = |mask: u32, width: u32| -> HashSet<u32> { (0..width).filter(|b| mask >> b & 1 == 1).collect() };
    let mut pairs = 0usize;
    for a in 0..64u32 {
        for b in 0..64u32 {
            check_pair(&subset(a, 6), &subset(b, 6))?;
            pairs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100_000 {
        let a = rng.next_u32() & 0xfff;
        let b = rng.next_u32() & 0xfff;
        check_pair(&subset(a, 12), &subset(b, 12))?;
        pairs += 1;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{pairs} pairs (4096 exhaustive over 6 words + 100000 sampled over 12) in {} ms", elapsed.as_millis()))
}

type Big = FBig<HalfEven>;

fn big(x: f64) -> Big {
    Big::try_from(x).expect("finite").with_precision(160).value()
}

fn corpus(rng: &mut ChaCha8Rng, vocab: usize) -> BTreeMap<String, usize> {
    let mut c: BTreeMap<String, usize> = (0..vocab)
        .filter_map(|t| {
            let n = (rng.next_u32() % 6) as usize;
            (n > 0).then(|| (format!("t{t}"), n))
        })
        .collect();
    c.entry("t0".into()).or_insert(1);
    c
}

fn criterion_5() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_rel: f64 = 0.0;
    let mut worst_anti: f64 = 0.0;
    for case in 0..100 {
        let vocab = 3 + (rng.next_u32() % 8) as usize;
        let ci = corpus(&mut rng, vocab);
        let cj = corpus(&mut rng, vocab);
        let (ni, nj): (usize, usize) = (ci.values().sum(), cj.values().sum());
        let alpha: BTreeMap<String, f64> =
            (0..vocab).map(|t| (format!("t{t}"), 0.1 + (rng.next_u32() % 400) as f64 / 100.0)).collect();
        let prior = PriorCounts::new(alpha.clone()).map_err(|e| e.to_string())?;
        let fwd = log_odds_dirichlet(&ci, ni, &cj, nj, &prior).map_err(|e| e.to_string())?;
        let rev = log_odds_dirichlet(&cj, nj, &ci, ni, &prior).map_err(|e| e.to_string())?;
        let rev: BTreeMap<&str, f64> = rev.iter().map(|s| (s.term.as_str(), s.delta)).collect();
        let same = log_odds_dirichlet(&ci, ni, &ci, ni, &prior).map_err(|e| e.to_string())?;
        ensure(same.iter().all(|s| s.delta == 0.0 && s.z == 0.0), || format!("case {case}: identical corpora gave nonzero delta"))?;
        for s in &fwd {
            let anti = (s.delta + rev[s.term.as_str()]).abs();
            ensure(anti <= 1e-12, || format!("case {case} {}: antisymmetry off by {anti:e}", s.term))?;
            worst_anti = worst_anti.max(anti);

            let y_i = big(ci.get(&s.term).copied().unwrap_or(0) as f64);
            let y_j = big(cj.get(&s.term).copied().unwrap_or(0) as f64);
            let a = big(alpha[&s.term]);
            let a0 = big(prior.alpha0());
            let delta = ((&y_i + &a) / (big(ni as f64) + &a0 - &y_i - &a)).ln()
                - ((&y_j + &a) / (big(nj as f64) + &a0 - &y_j - &a)).ln();
            let var = big(1.0) / (&y_i + &a) + big(1.0) / (&y_j + &a);
            let z = (&delta / var.nth_root(2)).to_f64().value();
            let delta = delta.to_f64().value();
            for (what, got, want) in [("delta", s.delta, delta), ("z", s.z, z)] {
                let err = if want.abs() < 1e-12 { (got - want).abs() } else { ((got - want) / want).abs() };
                ensure(err <= 1e-9, || format!("case {case} {} {what}: {got} vs {want}", s.term))?;
                worst_rel = worst_rel.max(err);
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "100 corpora, max antisymmetry {worst_anti:.1e}, max relative error {worst_rel:.1e}, {} ms",
        elapsed.as_millis()
    ))
}

/// Always fails with a retryable error and records when each attempt started.
struct AlwaysBusy {
    clock: Arc<ManualClock>,
    starts: Mutex<Vec<Duration>>,
}

impl ChatBackend for AlwaysBusy {
    fn complete(&self, _: &ChatRequest<'_>) -> Result<String, TransportError> {
        self.starts.lock().unwrap().push(self.clock.now());
        Err(TransportError::Http {
            code: 503,
            body: "busy".into(),
        })
    }
}

fn criterion_6() -> Check {
    let policy = RetryPolicy::default();
    let seq: Vec<f64> = (0..8).map(|k| next_backoff(&policy, k)).collect();
    ensure(seq == [1.0, 2.0, 4.0, 8.0, 10.0, 10.0, 10.0, 10.0], || format!("backoff sequence {seq:?}"))?;

    let clock = Arc::new(ManualClock::new());
    let backend = Arc::new(AlwaysBusy {
        clock: clock.clone(),
        starts: Mutex::new(Vec::new()),
    });
    let provider = Provider::new(ProviderConfig::mock("busy"), clock.clone())
        .map_err(|e| e.to_string())?
        .with_chat(backend.clone());
    let r = provider.send_chat("p", "x").map_err(|e| e.to_string())?;
    ensure(r.status == ResponseStatus::Timeout, || format!("final status {:?}", r.status))?;
    let starts = backend.starts.lock().unwrap().clone();
    let last = starts.last().copied().unwrap_or_default();
    ensure(last <= Duration::from_secs(30), || format!("attempt started at {last:?}"))?;
    let sleeps: Vec<f64> = clock.sleeps().iter().map(Duration::as_secs_f64).collect();
    ensure(sleeps == [1.0, 2.0, 4.0, 8.0, 10.0], || format!("sleeps {sleeps:?}"))?;
    Ok(format!("backoff {seq:?}, {} attempts, last start at {}s", starts.len(), last.as_secs_f64()))
}

fn run_demo(out: &Path) -> Result<(), String> {
    let config = workspace().join("demo/demo.toml");
    let steps: [&[&str]; 4] = [
        &["ingest"],
        &["transform", "--mock"],
        &["analyze", "--mock", "--sections", "ngrams,logodds,sentiment,similarity,hate"],
        &["report", "--mock"],
    ];
    for args in steps {
        let o = Command::new(env!("CARGO_BIN_EXE_detox-eval"))
            .args(args)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || {
            format!("{args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr))
        })?;
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_7() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_demo(a.path())?;
    run_demo(b.path())?;
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    ensure(fa == fb, || "runs produced different file sets".into())?;
    for rel in &fa {
        let same = std::fs::read(a.path().join(rel)).ok() == std::fs::read(b.path().join(rel)).ok();
        ensure(same, || format!("{} differs between runs", rel.display()))?;
    }

    let hate_path = a.path().join("runs/demo/analysis/hate.json");
    let hate: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&hate_path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let columns: Vec<&str> = hate["counts"]["columns"]
        .as_array()
        .ok_or("hate.json has no columns")?
        .iter()
        .filter_map(|c| c.as_str())
        .collect();
    ensure(columns.first() == Some(&"original") && columns.len() > 1, || format!("columns {columns:?}"))?;
    let mut totals = vec![0.0; columns.len()];
    for row in hate["counts"]["rows"].as_array().ok_or("hate.json has no rows")? {
        let values: Vec<f64> = row["values"].as_array().ok_or("row without values")?.iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect();
        for (k, v) in values.iter().enumerate().skip(1) {
            ensure(*v < values[0], || format!("batch {}: {} count {v} not below original {}", row["batch"], columns[k], values[0]))?;
        }
        totals.iter_mut().zip(&values).for_each(|(t, v)| *t += v);
    }
    let summary: Vec<String> = columns.iter().zip(&totals).map(|(c, t)| format!("{c} {t}")).collect();
    Ok(format!("{} files byte-identical; hate counts {}", fa.len(), summary.join(", ")))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("table aggregates", criterion_1),
        ("similarity * rows", criterion_2),
        ("transformation accounting", criterion_3),
        ("span metric properties", criterion_4),
        ("log-odds properties", criterion_5),
        ("retry contract", criterion_6),
        ("offline determinism", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL - {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

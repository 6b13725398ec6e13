use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

const BIN: &str = env!("CARGO_BIN_EXE_uxfb");

fn config(extra: &str) -> String {
    format!(
        r#"seed = 5

[paths]
comments = "data/comments.jsonl"
responses = "data/responses.jsonl"
labeled = "out/labeled.jsonl"
models = "out/model"
tuning = "out/tuning.json"
reports = "out/reports"

[embedding]
dim = 16
bucket_count = 50000

[training]
k = 3

[training.params]
n_rounds = 10
max_depth = 2

[training.grid]
learning_rate = [0.3]
max_depth = [2]
min_loss_reduction = [0.0]
l2_weight = [1.0]
l1_weight = [0.0]
n_rounds = [10]
min_child_weight = [1.0]

[stats]
bootstrap_replicates = 300
{extra}"#
    )
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("uxfb.toml"), config(extra)).unwrap();
        let ws = Workspace { dir };
        ws.ok(&["synth", "--out-dir", "data", "--labeled", "150"]);
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .current_dir(self.dir.path())
            .arg("--config")
            .arg("uxfb.toml")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn code(&self, args: &[&str]) -> (i32, String) {
        let out = self.run(args);
        (
            out.status.code().unwrap(),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    }
}

#[test]
fn ingest_reports_counts_and_classifies_failures() {
    let ws = Workspace::new("");
    let out = ws.ok(&["ingest"]);
    assert!(out.contains("\"human_labeled\":150"), "{out}");

    let (code, err) = ws.code(&["ingest", "missing.jsonl"]);
    assert_eq!(code, 1, "{err}");

    let mut text = fs::read_to_string(ws.path("data/comments.jsonl")).unwrap();
    text.push_str("{\"id\": \"broken\"}\n");
    fs::write(ws.path("bad.jsonl"), text).unwrap();
    let (code, err) = ws.code(&["ingest", "bad.jsonl"]);
    assert_eq!(code, 2);
    let lines = fs::read_to_string(ws.path("bad.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert!(err.contains(&format!("line {lines}")), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let ws = Workspace::new("");
    fs::write(
        ws.path("uxfb.toml"),
        config("[summary]\nsnipet_count = 3\n"),
    )
    .unwrap();
    let (code, err) = ws.code(&["ingest"]);
    assert_eq!(code, 2);
    assert!(err.contains("snipet_count"), "{err}");
}

#[test]
fn model_commands_end_to_end() {
    let ws = Workspace::new("");
    ws.ok(&["tune"]);
    assert!(ws.path("out/tuning.json").exists());
    ws.ok(&["train"]);
    let manifest = fs::read_to_string(ws.path("out/model/bundle.json")).unwrap();
    assert!(manifest.contains("\"training_size\": 150"), "{manifest}");

    let csv = ws.ok(&["evaluate"]);
    assert!(
        csv.starts_with("label,count,share,precision,recall,f1"),
        "{csv}"
    );
    assert!(
        csv.lines().last().unwrap().starts_with("micro,150"),
        "{csv}"
    );

    let first = ws.ok(&["predict"]);
    assert!(!first.contains("\"changed\":0"), "{first}");
    let before = fs::read(ws.path("out/labeled.jsonl")).unwrap();
    let second = ws.ok(&["predict"]);
    assert!(second.contains("\"changed\":0"), "{second}");
    assert_eq!(fs::read(ws.path("out/labeled.jsonl")).unwrap(), before);
    assert!(String::from_utf8(before)
        .unwrap()
        .contains("\"label_source\":\"model\""));

    ws.ok(&["train", "--retrain"]);
    let manifest = fs::read_to_string(ws.path("out/model/bundle.json")).unwrap();
    assert!(manifest.contains("\"version\": 2"), "{manifest}");
}

#[test]
fn evaluate_with_misaligned_predictions_exits_3() {
    let ws = Workspace::new("");
    fs::write(
        ws.path("pred.jsonl"),
        "{\"id\": \"L0000\", \"labels\": []}\n",
    )
    .unwrap();
    let (code, err) = ws.code(&["evaluate", "--predictions", "pred.jsonl"]);
    assert_eq!(code, 3);
    assert!(err.contains("length mismatch"), "{err}");
}

#[test]
fn predict_with_other_embedder_exits_3() {
    let ws = Workspace::new("");
    ws.ok(&["train"]);
    let cfg = config("").replace("dim = 16", "dim = 24");
    fs::write(ws.path("uxfb.toml"), cfg).unwrap();
    let (code, err) = ws.code(&["predict"]);
    assert_eq!(code, 3);
    assert!(err.contains("fingerprint"), "{err}");
}

#[test]
fn stats_reproduces_the_replayed_tables() {
    let ws = Workspace::new("");
    let json = ws.ok(&["stats"]);
    let md = fs::read_to_string(ws.path("out/reports/stats.md")).unwrap();
    assert!(md.contains("χ²(df = 4) = 98.11"), "{md}");
    assert!(md.contains("Cramér's V = 0.30"), "{md}");
    assert!(md.contains("Pr(Promoter | Negative) = 47.24%"), "{md}");
    assert!(md.contains("χ²(df = 8) = 1920.14"), "{md}");
    assert!(ws.path("out/reports/curves_tutorial.csv").exists());
    assert!(ws.path("out/reports/curves_app.csv").exists());
    // fixed seed, identical bytes
    assert_eq!(ws.ok(&["stats"]), json);

    let (code, _) = ws.code(&["--period", "2031", "stats"]);
    assert_eq!(code, 4);
    let (code, _) = ws.code(&["stats", "--kind", "nope"]);
    assert_eq!(code, 2);
}

#[test]
fn stats_without_responses_exits_4() {
    let ws = Workspace::new("");
    fs::write(ws.path("data/responses.jsonl"), "").unwrap();
    let (code, err) = ws.code(&["stats"]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn summaries_flow_into_the_report_and_bad_citations_are_refused() {
    let ws = Workspace::new("");
    ws.ok(&["train"]);
    ws.ok(&["predict"]);
    let out = ws.ok(&["summarize"]);
    assert!(
        out.contains("\"product\":\"echo\",\"status\":\"skipped\""),
        "{out}"
    );
    let report = ws.ok(&["report"]);
    assert!(
        report.contains("No summary: 19 comments, 20 needed."),
        "{report}"
    );
    assert!(report.contains("### Summary\n\n"), "{report}");
    assert!(report.contains("**Functionality:** "), "{report}");

    let path = ws.path("out/reports/summaries/alpha.json");
    let text = fs::read_to_string(&path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let extract =
        &mut v["outcome"]["draft"]["categories"][0]["attributes"][0]["citations"][0]["extract"];
    *extract = serde_json::Value::String(format!("{} zebra", extract.as_str().unwrap()));
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let (code, err) = ws.code(&["report"]);
    assert_eq!(code, 5);
    assert!(err.contains("alpha"), "{err}");
}

#[test]
fn too_few_labels_means_no_categories_not_failure() {
    // Without predictions only the human-labeled comments carry topics, far
    // below the volume-scaled floor.
    let ws = Workspace::new("");
    let out = ws.ok(&["summarize", "--product", "alpha"]);
    assert!(out.contains("\"status\":\"no_categories\""), "{out}");
    let md = ws.ok(&["report"]);
    assert!(md.contains("No summary: no topic reached"), "{md}");
}

#[test]
fn report_needs_summaries_from_the_same_period() {
    let ws = Workspace::new("");
    ws.ok(&["train"]);
    ws.ok(&["predict"]);
    ws.ok(&["--period", "2024Q3", "summarize"]);
    let md = ws.ok(&["--period", "2024Q3", "report"]);
    assert!(md.starts_with("# Feedback report: 2024Q3"), "{md}");
    assert!(md.contains("| Change (pp) |"), "{md}");
    let (code, err) = ws.code(&["--period", "2024Q2", "report"]);
    assert_eq!(code, 2);
    assert!(err.contains("rerun summarize"), "{err}");
}

fn read_request(stream: &mut std::net::TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

/// Answers from the prompt itself: one attribute per requested category,
/// citing the first three words of the first comment carrying it.
fn answer(prompt: &str) -> String {
    let cats: Vec<&str> = prompt
        .lines()
        .find_map(|l| l.strip_prefix("Categories to summarize"))
        .and_then(|l| l.split_once(": "))
        .map(|(_, names)| names.split(", ").collect())
        .unwrap();
    let mut out = Vec::new();
    for cat in cats {
        let line = prompt
            .lines()
            .filter(|l| l.starts_with('['))
            .find(|l| {
                l.split_once(") ")
                    .unwrap()
                    .0
                    .split(['(', ';'])
                    .any(|x| x.trim() == cat)
            })
            .unwrap();
        let id = &line[1..line.find(']').unwrap()];
        let text = line.split_once(") ").unwrap().1;
        let extract: Vec<&str> = text.split_whitespace().take(3).collect();
        out.push(serde_json::json!({
            "name": cat,
            "attributes": [{"statement": format!("Users wrote about {cat}."), "citations": [{"id": id, "extract": extract.join(" ")}]}],
        }));
    }
    serde_json::json!({ "categories": out }).to_string()
}

/// Serves `failures` 503s, then answers every request.
fn serve(failures: usize) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let body = read_request(&mut stream);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = if n < failures {
                ("503 Service Unavailable", "busy".to_string())
            } else {
                let req: serde_json::Value = serde_json::from_str(&body).unwrap();
                assert_eq!(req["temperature"], 0.0);
                ("200 OK", answer(req["prompt"].as_str().unwrap()))
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, hits)
}

#[test]
fn endpoint_drafts_are_used_after_retries() {
    let (url, hits) = serve(1);
    let ws = Workspace::new(&format!(
        "\n[summary]\nendpoint = \"{url}\"\nretries = 2\ntimeout_secs = 10\n"
    ));
    ws.ok(&["train"]);
    ws.ok(&["predict"]);
    let out = ws.ok(&["summarize", "--product", "alpha"]);
    assert!(out.contains("\"publishable\":true"), "{out}");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    let stored = fs::read_to_string(ws.path("out/reports/summaries/alpha.json")).unwrap();
    assert!(stored.contains("\"source\": \"endpoint\""), "{stored}");
    assert!(stored.contains("Users wrote about"), "{stored}");
}

#[test]
fn endpoint_down_without_fallback_fails() {
    let (url, _) = serve(usize::MAX);
    let ws = Workspace::new(&format!("\n[summary]\nendpoint = \"{url}\"\nretries = 1\n"));
    ws.ok(&["train"]);
    ws.ok(&["predict"]);
    let (code, err) = ws.code(&["summarize", "--product", "alpha"]);
    assert_eq!(code, 1);
    assert!(err.contains("503"), "{err}");

    let cfg = config(&format!(
        "\n[summary]\nendpoint = \"{url}\"\nretries = 0\noffline_fallback = true\n"
    ));
    fs::write(ws.path("uxfb.toml"), cfg).unwrap();
    ws.ok(&["summarize", "--product", "alpha"]);
    let stored = fs::read_to_string(ws.path("out/reports/summaries/alpha.json")).unwrap();
    assert!(stored.contains("\"source\": \"offline\""));
}

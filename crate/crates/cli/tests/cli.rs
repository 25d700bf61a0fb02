use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn clorder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clorder"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SECRET: &str = "sk-test-do-not-print-8f3a";

/// Minimal OpenAI-style server: `/embeddings` answers with 8-dim vectors
/// derived from the input text, anything else with a chat completion that
/// says `unknown`. Counts embedding requests and records auth headers.
struct Stub {
    url: String,
    embed_requests: Arc<AtomicUsize>,
    auth_headers: Arc<Mutex<Vec<String>>>,
}

fn toy_vector(text: &str) -> Vec<f32> {
    let mut v = vec![0.0f32; 8];
    for word in text.split_whitespace() {
        let h = word
            .bytes()
            .fold(7u32, |h, b| h.wrapping_mul(31).wrapping_add(b as u32));
        v[(h % 8) as usize] += 1.0;
    }
    v
}

fn start_stub() -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let embed_requests = Arc::new(AtomicUsize::new(0));
    let auth_headers = Arc::new(Mutex::new(Vec::new()));
    let (count, auth) = (embed_requests.clone(), auth_headers.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth.lock().unwrap().push(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let reply = if request_line.contains("/embeddings") {
                count.fetch_add(1, Ordering::SeqCst);
                let data: Vec<Value> = body["input"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|t| json!({"embedding": toy_vector(t.as_str().unwrap())}))
                    .collect();
                json!({"data": data})
            } else {
                json!({"choices": [{"message": {"content": "unknown"}}]})
            };
            let text = reply.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    Stub {
        url,
        embed_requests,
        auth_headers,
    }
}

fn mock_args<'a>(dataset: &'a str, out: &'a str, capacity: &'a str) -> Vec<&'a str> {
    vec![
        "--dataset",
        dataset,
        "--per-chunk-token-limit",
        "12",
        "--mock-capacity",
        capacity,
        "--frozen-timing",
        "--out",
        out,
    ]
}

#[test]
fn order_output_is_deterministic() {
    let ds = fixture("mc10.jsonl");
    let args = [
        "--dataset",
        p(&ds),
        "--per-chunk-token-limit",
        "12",
        "--strategy",
        "all",
        "order",
        "--query-id",
        "mc07",
    ];
    let (a, b) = (clorder(&args), clorder(&args));
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stderr, b.stderr);
    assert_eq!(stdout(&a).lines().count(), 4);
}

#[test]
fn default_strategy_keeps_document_order() {
    let ds = fixture("qa5.jsonl");
    let out = clorder(&[
        "--dataset",
        p(&ds),
        "--per-chunk-token-limit",
        "12",
        "--strategy",
        "default",
        "order",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dump: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(dump["order"], json!([0, 1, 2, 3, 4, 5]));
    assert_eq!(dump["strategy"], "default");
    // the effective config rides along
    assert_eq!(dump["config"]["per_chunk_token_limit"], "12");
}

#[test]
fn matrix_file_gives_hand_enumerated_tree() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("three.txt");
    std::fs::write(&doc, "alpha beta\ngamma delta\nepsilon zeta\n").unwrap();
    // spanning trees of K3: {01,12} = 1.4, {01,02} = 1.1, {02,12} = 0.7
    let matrix = dir.path().join("m.json");
    std::fs::write(
        &matrix,
        r#"{"values": [[0, 0.9, 0.2], [0.9, 0, 0.5], [0.2, 0.5, 0]], "query_scores": [0.1, 0.3, 0.8]}"#,
    )
    .unwrap();
    let out = clorder(&[
        "--similarity-matrix-file",
        p(&matrix),
        "--per-chunk-token-limit",
        "2",
        "--strategy",
        "cl-order",
        "order",
        "--doc",
        p(&doc),
        "--query",
        "anything",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dump: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(dump["edges"], json!([[0, 1, 0.9], [1, 2, 0.5]]));
    assert_eq!(dump["root"], 2);
    assert_eq!(dump["order"], json!([2, 1, 0]));
    let tree = stderr(&out);
    assert!(
        tree.starts_with("three#2: epsilon zeta\n  three#1: gamma delta (0.5000)\n    three#0: alpha beta (0.9000)\n"),
        "{tree}"
    );
}

#[test]
fn matrix_of_wrong_size_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("d.txt");
    std::fs::write(&doc, "one two three four").unwrap();
    let matrix = dir.path().join("m.json");
    std::fs::write(&matrix, r#"{"values": [[0, 1], [1, 0]]}"#).unwrap();
    let out = clorder(&[
        "--similarity-matrix-file",
        p(&matrix),
        "--per-chunk-token-limit",
        "1",
        "order",
        "--doc",
        p(&doc),
        "--query",
        "q",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn mock_run_writes_the_expected_table() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("qa5.jsonl");
    let out_dir = dir.path().join("run");
    let mut args = mock_args(p(&ds), p(&out_dir), "3");
    args.extend(["--strategy", "all", "run"]);
    let out = clorder(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    // odd queries place the link fact four facts before its anchor, past a
    // three-fact memory, so only document order loses them
    let expected = "\
strategy    n  scored      em
default     5       5   60.00
dense       5       5  100.00
dfs-greedy  5       5  100.00
cl-order    5       5  100.00
";
    assert_eq!(stdout(&out), expected);
    assert_eq!(std::fs::read_to_string(out_dir.join("table.txt")).unwrap(), expected);

    let results = std::fs::read_to_string(out_dir.join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 20);
    for strategy in ["default", "dense", "dfs-greedy", "cl-order"] {
        let trace = std::fs::read_to_string(out_dir.join(format!("traces/{strategy}.jsonl"))).unwrap();
        // six worker steps plus the answer line per query
        assert_eq!(trace.lines().count(), 5 * 7, "{strategy}");
        let per_query = results
            .lines()
            .filter(|l| l.contains(&format!("\"strategy\":\"{strategy}\"")))
            .count();
        assert_eq!(per_query, 5);
    }
    let csv = std::fs::read_to_string(out_dir.join("em.csv")).unwrap();
    assert!(
        csv.starts_with("strategy,n,scored,em_accuracy\ndefault,5,5,60\n"),
        "{csv}"
    );
    let config = std::fs::read_to_string(out_dir.join("config.txt")).unwrap();
    assert!(config.contains("strategy = default,dense,dfs-greedy,cl-order\n"));
    assert!(config.contains("mock_capacity = 3\n"));
}

#[test]
fn mock_run_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("qa5.jsonl");
    let mut dumps = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let mut args = mock_args(p(&ds), p(&out_dir), "3");
        args.extend(["--strategy", "all", "--parallel", "3", "run"]);
        assert!(clorder(&args).status.success());
        let read = |f: &str| std::fs::read(out_dir.join(f)).unwrap();
        dumps.push((
            read("results.jsonl"),
            read("traces/cl-order.jsonl"),
            read("orderings.jsonl"),
        ));
    }
    assert_eq!(dumps[0], dumps[1]);
}

#[test]
fn eval_rescores_a_results_file() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("mc10.jsonl");
    let out_dir = dir.path().join("run");
    let mut args = mock_args(p(&ds), p(&out_dir), "3");
    args.extend(["--strategy", "default,cl-order", "run"]);
    let run = clorder(&args);
    assert!(run.status.success(), "{}", stderr(&run));
    let results = out_dir.join("results.jsonl");
    let csv = dir.path().join("em.csv");
    let eval = clorder(&["--dataset", p(&ds), "eval", "--results", p(&results), "--csv", p(&csv)]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert_eq!(stdout(&eval), stdout(&run));
    let rows: Vec<Vec<String>> = stdout(&eval)
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect();
    assert_eq!(
        rows,
        [["default", "10", "10", "50.00"], ["cl-order", "10", "10", "100.00"]]
    );
    assert!(csv.exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("qa5.jsonl");
    let conf = dir.path().join("run.conf");
    let out_dir = dir.path().join("from-file");
    std::fs::write(
        &conf,
        format!(
            "# experiment\ndataset = {}\nper_chunk_token_limit = 12\nstrategy = all\nmock_capacity = 8\nfrozen_timing = true\noutput_dir = {}\n",
            p(&ds),
            p(&out_dir)
        ),
    )
    .unwrap();
    let out = clorder(&[
        "--config",
        p(&conf),
        "--mock-capacity",
        "3",
        "--strategy",
        "default",
        "run",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "strategy  n  scored     em\ndefault   5       5  60.00\n");
    let echoed = std::fs::read_to_string(out_dir.join("config.txt")).unwrap();
    assert!(echoed.contains("mock_capacity = 3\n") && echoed.contains("strategy = default\n"));
    assert!(echoed.contains("per_chunk_token_limit = 12\n"));
}

#[test]
fn config_errors_exit_with_two() {
    let bad_key = clorder(&["--set", "no_such_key=1", "simulate", "--seeds", "1"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let zero = clorder(&["--per-chunk-token-limit", "0", "simulate", "--seeds", "1"]);
    assert_eq!(zero.status.code(), Some(2));
    let no_endpoint = clorder(&["--generation", "http", "run"]);
    assert_eq!(no_endpoint.status.code(), Some(2));
    let key_in_config = clorder(&["--set", "gen_api_key=sk-live", "simulate", "--seeds", "1"]);
    assert_eq!(key_in_config.status.code(), Some(2));
    assert!(!stderr(&key_in_config).contains("sk-live"));
}

#[test]
fn unreachable_generation_backend_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // bind then drop, so the port is very likely closed
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let ds = fixture("qa5.jsonl");
    let out_dir = dir.path().join("run");
    let out = clorder(&[
        "--dataset",
        p(&ds),
        "--per-chunk-token-limit",
        "12",
        "--generation",
        "http",
        "--set",
        &format!("gen_endpoint={endpoint}"),
        "--set",
        "max_retries=1",
        "--out",
        p(&out_dir),
        "run",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let failures = std::fs::read_to_string(out_dir.join("failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 5);
    assert!(failures.lines().all(|l| l.contains("\"kind\":\"backend\"")));
}

#[test]
fn warm_cache_needs_no_embedding_requests() {
    let stub = start_stub();
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("qa5.jsonl");
    let cache = dir.path().join("cache");
    let endpoint = format!("{}/v1/embeddings", stub.url);
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = clorder(&[
            "--dataset",
            p(&ds),
            "--per-chunk-token-limit",
            "12",
            "--similarity",
            "dense",
            "--set",
            &format!("embed_endpoint={endpoint}"),
            "--set",
            "embed_dim=8",
            "--cache-dir",
            p(&cache),
            "--frozen-timing",
            "--out",
            p(&out_dir),
            "run",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read(out_dir.join("orderings.jsonl")).unwrap()
    };
    let cold = run("cold");
    let after_cold = stub.embed_requests.load(Ordering::SeqCst);
    assert!(after_cold > 0);
    let warm = run("warm");
    assert_eq!(
        stub.embed_requests.load(Ordering::SeqCst),
        after_cold,
        "warm run hit the backend"
    );
    assert_eq!(cold, warm);

    let inspect = clorder(&["--cache-dir", p(&cache), "cache", "inspect"]);
    let stats: Value = serde_json::from_str(&stdout(&inspect)).unwrap();
    // six chunks per query plus the query itself
    assert_eq!(stats["entries"], 5 * 7);
    let clear = clorder(&["--cache-dir", p(&cache), "cache", "clear"]);
    assert!(stdout(&clear).starts_with("removed 35 entries"));
    let again: Value =
        serde_json::from_str(&stdout(&clorder(&["--cache-dir", p(&cache), "cache", "inspect"]))).unwrap();
    assert_eq!(again["entries"], 0);
}

fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(all_files(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn api_keys_never_reach_outputs() {
    let stub = start_stub();
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("qa5.jsonl");
    let out_dir = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_clorder"))
        .args([
            "--dataset",
            p(&ds),
            "--per-chunk-token-limit",
            "12",
            "--similarity",
            "dense",
            "--generation",
            "http",
            "--set",
            &format!("embed_endpoint={}/v1/embeddings", stub.url),
            "--set",
            &format!("gen_endpoint={}/v1/chat/completions", stub.url),
            "--set",
            "embed_dim=8",
            "--cache-dir",
            p(&dir.path().join("cache")),
            "--out",
            p(&out_dir),
            "run",
        ])
        .env("EMBED_API_KEY", SECRET)
        .env("GEN_API_KEY", SECRET)
        .env("RUST_LOG", "trace")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    // the key was used...
    let headers = stub.auth_headers.lock().unwrap().clone();
    assert!(!headers.is_empty() && headers.iter().all(|h| h == &format!("Bearer {SECRET}")));
    // ...but is nowhere in stdout, the trace-level log or any written file
    assert!(!stdout(&out).contains(SECRET));
    assert!(!stderr(&out).contains(SECRET));
    for file in all_files(dir.path()) {
        let bytes = std::fs::read(&file).unwrap();
        assert!(
            !bytes.windows(SECRET.len()).any(|w| w == SECRET.as_bytes()),
            "{} holds the key",
            file.display()
        );
    }
}

#[test]
fn simulate_reports_are_deterministic() {
    let a = clorder(&["simulate", "--seeds", "1", "--first-seed", "9"]);
    let b = clorder(&["simulate", "--seeds", "1", "--first-seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let report: Value = serde_json::from_str(&stdout(&a)).unwrap();
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 5);
    for r in reports {
        assert_eq!(r["seeds"], 1);
        assert_eq!(r["stddev"], 0.0);
    }
}

#[test]
fn unbounded_memory_ties_every_strategy() {
    let out = clorder(&["simulate", "--seeds", "30", "--capacity", "inf"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    // 4 clusters x 3 chunks x 2 facts, one relevant fact per chunk
    for r in report["reports"].as_array().unwrap() {
        assert_eq!(r["mean_retention"], 12.0, "{}", r["strategy"]);
        assert_eq!(r["stddev"], 0.0);
    }
}

#[test]
fn simulate_default_favours_cl_order() {
    let out = clorder(&["simulate", "--seeds", "200"]);
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let mean = |s: &str| {
        report["reports"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["strategy"] == s)
            .unwrap()["mean_retention"]
            .as_f64()
            .unwrap()
    };
    assert!(mean("cl-order") > mean("random"));
    assert!(report["sign_tests"]["cl-order>random"]["p_value"].as_f64().unwrap() < 0.01);
}

#[test]
fn ablation_runs_each_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("mc10.jsonl");
    let out_dir = dir.path().join("abl");
    let mut args = mock_args(p(&ds), p(&out_dir), "3");
    args.extend(["--strategy", "all", "ablate", "--similarities", "local-hash,bm25"]);
    let out = clorder(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("similarity = local-hash\n") && text.contains("similarity = bm25\n"));
    assert!(out_dir.join("bm25/results.jsonl").exists());
    assert!(out_dir.join("local-hash/traces/cl-order.jsonl").exists());
}

#[test]
fn chunk_dump_reassembles_context() {
    let ds = fixture("qa5.jsonl");
    let out = clorder(&[
        "--dataset",
        p(&ds),
        "--per-chunk-token-limit",
        "12",
        "chunk",
        "--query-id",
        "qa02",
    ]);
    assert!(out.status.success());
    let chunks: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(chunks.len(), 6);
    let joined: String = chunks.iter().map(|c| c["text"].as_str().unwrap()).collect();
    let raw = std::fs::read_to_string(&ds).unwrap();
    let record: Value = raw
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|r| r["id"] == "qa02")
        .unwrap();
    assert_eq!(joined, record["context"].as_str().unwrap());
}

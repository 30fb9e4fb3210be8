use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn helpgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_helpgrid"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run helpgrid")
}

fn ok(args: &[&str]) -> String {
    let out = helpgrid(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn oracle_without_help_has_zero_distance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    ok(&["eval", "--synthetic", "30", "--agent", "oracle", "-o", s(&out)]);
    let csv = read(&out.join("report.csv"));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "Model,Episodes,Distance Mean,Distance Std,Reward Mean,Reward Std,# Blocks Placed Mean,# Blocks Placed Std,% Help Followed Mean,% Help Followed Std"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "No Help");
    assert_eq!(row[1], "30");
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(read(&out.join("traces.jsonl")).lines().count(), 30);
}

#[test]
fn same_spec_twice_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "eval", "--synthetic", "40", "--seed", "5", "--regime", "self-help", "--help-kind", "corrective", "-o",
            s(&out),
        ]);
        ["report.csv", "report.txt", "traces.jsonl"].map(|f| read(&out.join(f)))
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 3\nlabel = \"from file\"\n[corpus]\nsource = \"synthetic\"\nseed = 3\nepisodes = 12\n[agent]\nkind = \"noisy\"\n",
    )
    .unwrap();
    let table = ok(&["eval", "--config", s(&cfg), "--label", "from flag"]);
    assert!(table.contains("from flag"), "{table}");
    assert!(!table.contains("from file"));
    let table = ok(&["eval", "--config", s(&cfg)]);
    assert!(table.contains("from file"), "{table}");
}

#[test]
fn generate_then_evaluate_a_split() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let msg = ok(&["gen-synthetic", "--seed", "2", "--episodes", "60", "-o", s(&corpus)]);
    assert!(msg.contains("wrote 60 episodes"), "{msg}");
    let manifest: serde_json::Value = serde_json::from_str(&read(&corpus.join("manifest.json"))).unwrap();
    assert_eq!(manifest["counts"]["test"], 6);
    let out = dir.path().join("out");
    ok(&["eval", "--corpus", s(&corpus), "--split", "test", "-o", s(&out)]);
    assert!(read(&out.join("report.csv")).lines().nth(1).unwrap().starts_with("No Help,6,"));
}

#[test]
fn region_ablation_has_one_row_per_scheme() {
    let table = ok(&[
        "ablate-regions", "--synthetic", "30", "--agent", "oracle", "--regime", "oracle-help", "--help-kind",
        "restrictive", "--schemes", "4,8",
    ]);
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("4 regions"));
    assert!(rows[1].starts_with("8 regions"));
    // Gold that straddles regions cannot be "followed" by any prediction, so
    // only the geometric columns are granularity-independent for the oracle.
    let geometric = |row: &str| row[9..].split_whitespace().take(6).collect::<Vec<_>>().join(" ");
    assert_eq!(geometric(rows[0]), geometric(rows[1]));
    assert!(geometric(rows[0]).starts_with("0.00 (0.00)"));
    let out = helpgrid(&["ablate-regions", "--synthetic", "10"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("restrictive"));
}

#[test]
fn calibration_curve_spans_always_to_never() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "calibrate-threshold", "--synthetic", "30", "--regime", "clarify", "--sweep=-1,0,2,inf", "-o",
        s(dir.path()),
    ]);
    let csv = read(&dir.path().join("calibration.csv"));
    assert!(out.starts_with(&csv));
    let rates: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rates.first(), Some(&1.0));
    assert_eq!(rates.last(), Some(&0.0));
    assert!(rates.windows(2).all(|w| w[0] >= w[1]));
    assert!(out.contains("chosen threshold:"));
}

#[test]
fn import_fixture_is_idempotent() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/iglu/test.json");
    let dir = tempfile::tempdir().unwrap();
    let import = |name: &str| {
        let out = dir.path().join(name);
        let msg = ok(&["import", "--source-format=iglu-multiturn", "--input", s(&fixture), "-o", s(&out)]);
        assert!(msg.contains("imported 3 episodes"), "{msg}");
        assert!(msg.contains("skipped 2"), "{msg}");
        read(&out.join("episodes.jsonl"))
    };
    assert_eq!(import("a"), import("b"));
    let missing = helpgrid(&["import", "--source-format=iglu-multiturn", "--input", "/no/such/file", "-o", s(dir.path())]);
    assert!(!missing.status.success());
}

#[test]
fn bad_input_exits_non_zero_with_message() {
    let out = helpgrid(&["eval", "--corpus", "/no/such/corpus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = helpgrid(&["eval", "--regime", "oracle-help"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--help-kind"));
}

#[test]
fn serve_answers_http_requests() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_helpgrid"))
        .args(["serve", "--bind", "127.0.0.1:0"])
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut addr = None;
    let mut line = String::new();
    while stderr.read_line(&mut line).unwrap() > 0 {
        if let Some(rest) = line.split("listening on http://").nth(1) {
            addr = Some(rest.trim().to_string());
            break;
        }
        line.clear();
    }
    let addr = addr.expect("server logs its address");
    let body = r#"{"episode":{"synthetic_seed":1,"index":0}}"#;
    let mut conn = TcpStream::connect(&addr).unwrap();
    write!(
        conn,
        "POST /sessions HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    conn.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.contains("\"phase\":\"awaiting_step\""));
}

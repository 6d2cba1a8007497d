use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use sparsewpir_core::IcfEvent;

const BIN: &str = env!("CARGO_BIN_EXE_p3li5");

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start(preload: &Path) -> Server {
    let mut child = Command::new(BIN)
        .args(["serve", "--toy", "--listen", "127.0.0.1:0", "--ring-degree", "256", "--record-bytes", "128", "-d", "2"])
        .args(["--theta", "6", "--provisioned", "200", "--keyword-types", "suci,supi", "--strategy", "multi_hash"])
        .arg("--preload")
        .arg(preload)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_owned();
    Server(child, addr)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).stderr(Stdio::piped()).output().unwrap()
}

#[test]
fn serve_resolve_and_batch() {
    let dir = tempfile::tempdir().unwrap();
    let events_path = dir.path().join("events.jsonl");
    let gen = run(&["gen-events", "--subscribers", "40", "--lambda", "0.01", "--duration", "100", "--seed", "5", "--out", events_path.to_str().unwrap()]);
    assert!(gen.status.success());
    let events: Vec<IcfEvent> =
        std::fs::read_to_string(&events_path).unwrap().lines().map(|l| IcfEvent::from_json(l).unwrap()).collect();
    assert!(events.len() > 10 && events.len() < 100, "{}", events.len());

    let server = start(&events_path);
    let keys = dir.path().join("keys");
    let base = ["--server", &server.1, "--keystore", keys.to_str().unwrap()];
    let suci = events[3].suci.clone().unwrap();

    let refused = run(&[&["resolve", "--keyword", &suci][..], &base].concat());
    assert_eq!(refused.status.code(), Some(2), "toy server needs acknowledgment");

    let found = run(&[&["resolve", "--allow-toy", "--keyword", &suci][..], &base].concat());
    assert_eq!(found.status.code(), Some(0));
    let stdout = String::from_utf8(found.stdout).unwrap();
    let got = IcfEvent::from_json(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(got, events[3]);
    assert!(String::from_utf8(found.stderr).unwrap().contains("anonymity set"));

    let reverse = run(&[&["resolve", "--allow-toy", "-k", "supi", "-e", "1", "--keyword", &events[3].supi][..], &base].concat());
    assert_eq!(reverse.status.code(), Some(0));
    let n = events.iter().filter(|e| e.supi == events[3].supi).count();
    assert_eq!(String::from_utf8(reverse.stdout).unwrap().lines().count(), n);

    let absent = run(&[&["resolve", "--allow-toy", "--keyword", "suci-0-001-01-0-0-0-ffffffffffffffff"][..], &base].concat());
    assert_eq!(absent.status.code(), Some(1));

    let captures = dir.path().join("captures.jsonl");
    let mut f = std::fs::File::create(&captures).unwrap();
    for e in events.iter().take(10) {
        writeln!(f, "{{\"suci\":\"{}\"}}", e.suci.as_deref().unwrap()).unwrap();
    }
    writeln!(f, "{{\"suci\":\"suci-0-001-01-0-0-0-ffffffffffffffff\"}}").unwrap();
    drop(f);
    let report = dir.path().join("report.csv");
    let batch = run(&[&["batch", "--allow-toy", "--captures", captures.to_str().unwrap(), "--out", report.to_str().unwrap()][..], &base].concat());
    assert_eq!(batch.status.code(), Some(0));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert_eq!(csv.matches(",resolved,").count(), 10);
    assert_eq!(csv.matches(",not_found,").count(), 1);
}

#[test]
fn empty_batch_succeeds_without_a_server() {
    let dir = tempfile::tempdir().unwrap();
    let captures = dir.path().join("none.jsonl");
    std::fs::write(&captures, "").unwrap();
    let out = run(&["batch", "--server", "127.0.0.1:1", "--captures", captures.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("queries,resolved,not_found,errors\n0,0,0,0"));
}

#[test]
fn offline_tools() {
    let size = run(&["bench", "size"]);
    assert!(size.status.success());
    let text = String::from_utf8(size.stdout).unwrap();
    let gb: f64 = text.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((34.5..=35.0).contains(&gb));

    let leak = run(&["leakage", "--records", "1000000", "--theta", "3"]);
    assert!(leak.status.success());
    assert_eq!(String::from_utf8(leak.stdout).unwrap().lines().count(), 5);

    let unreachable = run(&["resolve", "--server", "127.0.0.1:1", "--keyword", "x"]);
    assert_eq!(unreachable.status.code(), Some(2));
}

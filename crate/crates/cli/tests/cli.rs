use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

fn micl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_micl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap()
}

fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn example(name: &str) -> String {
    examples().join(name).display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn every_shipped_config_validates() {
    let mut configs: Vec<String> = fs::read_dir(examples())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| p.display().to_string())
        .collect();
    configs.sort();
    assert!(configs.len() >= 3);
    let mut args = vec!["validate-config"];
    args.extend(configs.iter().map(String::as_str));
    let tmp = tempfile::tempdir().unwrap();
    let out = micl(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn invalid_config_reports_fields_and_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "experiment = \"bandit\"\nn_simulations = 0\n[backend]\nkind = \"scripted\"\n").unwrap();
    let p = path.display().to_string();
    for args in [vec!["validate-config", p.as_str()], vec!["run", "--config", p.as_str()]] {
        let out = micl(&args, tmp.path());
        assert_eq!(code(&out), 1);
        let err = stderr(&out);
        assert!(err.contains("n_simulations"), "{err}");
        assert!(err.contains("backend.agent"), "{err}");
    }
    fs::write(&path, "experiment = \"bandit\"\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&micl(&["validate-config", &p], tmp.path())), 1);
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&micl(&["run"], tmp.path())), 1);
    assert_eq!(code(&micl(&["frobnicate"], tmp.path())), 1);
    assert_eq!(code(&micl(&["--help"], tmp.path())), 0);
}

#[test]
fn run_analyze_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let bandit = example("bandit.toml");
    let run = ["run", "--config", &bandit, "--override", "n_simulations=10", "backend.kind=scripted", "output_dir=\"out\""];
    let out = micl(&run, tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dir = tmp.path().join("out");
    let records = fs::read(dir.join("records.jsonl")).unwrap();
    assert_eq!(records.iter().filter(|b| **b == b'\n').count(), 10 * 5 * 10);

    let again = micl(&run, tmp.path());
    assert_eq!(code(&again), 0);
    assert!(String::from_utf8_lossy(&again.stdout).contains("already complete"));
    assert_eq!(fs::read(dir.join("records.jsonl")).unwrap(), records);

    let out = micl(&["analyze", "out"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let strategy = fs::read_to_string(dir.join("analysis/strategy.csv")).unwrap();
    assert_eq!(strategy.lines().count(), 1 + 6);
    let curves = fs::read_to_string(dir.join("analysis/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 5 * 10);

    let out = micl(&["report", "out"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let figures = dir.join("figures");
    let mut names: Vec<String> = fs::read_dir(&figures).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["curves.svg", "effects.svg", "priors.svg", "strategy.svg", "task_means.svg"]);
    let first: Vec<Vec<u8>> = names.iter().map(|n| fs::read(figures.join(n)).unwrap()).collect();
    fs::remove_dir_all(&figures).unwrap();
    assert_eq!(code(&micl(&["report", "out"], tmp.path())), 0);
    let second: Vec<Vec<u8>> = names.iter().map(|n| fs::read(figures.join(n)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn report_without_priors_skips_the_prior_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let function = example("function.toml");
    let out = micl(
        &["run", "-c", &function, "-o", "n_simulations=3", "probes.enabled=false", "output_dir=\"out\""],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&micl(&["analyze", "out"], tmp.path())), 0);
    let out = micl(&["report", "out"], tmp.path());
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("D-panel"), "{}", stderr(&out));
    assert!(!tmp.path().join("out/figures/priors.svg").exists());
    assert!(tmp.path().join("out/figures/curves.svg").exists());
}

#[test]
fn probe_priors_writes_prior_estimates() {
    let tmp = tempfile::tempdir().unwrap();
    let bandit = example("bandit.toml");
    let out = micl(
        &["probe-priors", "-c", &bandit, "-o", "n_simulations=2", "probes.enabled=false", "output_dir=\"p\""],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let priors = fs::read_to_string(tmp.path().join("p/priors.jsonl")).unwrap();
    assert_eq!(priors.lines().count(), 2 * 5);
}

#[test]
fn analyze_without_records_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&micl(&["analyze", "nothing-here"], tmp.path())), 1);
}

/// Counts connections and answers each with `status`.
fn stub(status: u16) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let _ = write!(stream, "HTTP/1.1 {status} X\r\nContent-Length: 2\r\nConnection: close\r\n\r\n{{}}");
        }
    });
    (url, hits)
}

#[test]
fn missing_api_key_exits_1_before_any_request() {
    let (url, hits) = stub(200);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example("function_completions.toml");
    let base = format!("backend.base_url=\"{url}\"");
    let out = micl(&["run", "-c", &cfg, "-o", &base, "output_dir=\"k\""], tmp.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("OPENAI_API_KEY"), "{}", stderr(&out));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
    assert!(!tmp.path().join("k/records.jsonl").exists());
}

#[test]
fn failing_backend_gives_partial_exit_2() {
    let (url, hits) = stub(401);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example("function_completions.toml");
    let base = format!("backend.base_url=\"{url}\"");
    let out = Command::new(env!("CARGO_BIN_EXE_micl"))
        .args(["run", "-c", &cfg, "-o", &base, "n_simulations=3", "output_dir=\"f\""])
        .current_dir(tmp.path())
        .env("OPENAI_API_KEY", "sk-test")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    let log = fs::read_to_string(tmp.path().join("f/requests.jsonl")).unwrap();
    assert!(log.contains("\"event\":\"error\""));
    assert!(!log.contains("sk-test"));
}

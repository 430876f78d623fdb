use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Mutex, OnceLock};

use pgnkit_core::metrics::{self, ArWeights, MetricsReport};
use pgnkit_core::TrainedAgent;

fn pgnkit(args: &[&str]) -> Output {
    pgnkit_env(args, &[])
}

fn pgnkit_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pgnkit"));
    cmd.args(args).env_remove("PGNKIT_REPORT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small shared artefacts: a briefly trained MiniPong agent and its dataset.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    agent: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("project.toml");
        fs::write(
            &config,
            "[dqn]\ntraining_episodes = 20\n\n[pgn]\nepochs = 1\nhidden_dim = 16\nlatent_dim = 4\nnoise_dim = 4\n\n[[attacks]]\nkind = \"pgd\"\niterations = 5\n\n[[attacks]]\nkind = \"cw\"\niterations = 5\ncw_search_steps = 1\n",
        )
        .unwrap();
        let agent = root.join("agents/pong.ckpt");
        let o = pgnkit(&["--config", s(&config), "train-agent", "--env", "minipong", "--seed", "0", "--out", s(&agent)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let data = root.join("data/pong.csv");
        let o = pgnkit(&["--config", s(&config), "collect", "--agent", s(&agent), "--episodes", "2", "--out", s(&data)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Fixture {
            _dir: dir,
            root,
            agent,
            data,
            config,
        }
    })
}

fn train_pgn(f: &Fixture, variant: &str, objective: &str) -> PathBuf {
    static LOCK: Mutex<()> = Mutex::new(());
    let _guard = LOCK.lock().unwrap();
    let out = f.root.join(format!("pgn/{objective}-{variant}.pgn"));
    if !out.exists() {
        let o = pgnkit(&[
            "--config", s(&f.config), "train-pgn", "--agent", s(&f.agent), "--data", s(&f.data),
            "--variant", variant, "--objective", objective, "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    out
}

fn parse_row(out: &str) -> MetricsReport {
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some(metrics::REPORT_HEADER));
    MetricsReport::parse_csv_row(lines.next().unwrap()).unwrap()
}

#[test]
fn verify_ar_passes_on_bundled_tables() {
    let o = pgnkit(&["verify-ar"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS ")).count(), 20);
    assert!(text.contains("20/20 PASS"));
}

#[test]
fn verify_ar_mismatch_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("t.csv");
    let bundled = include_str!("../../core/data/reference_tables.csv");
    let (head, rest) = bundled.split_once('\n').unwrap();
    let tampered: Vec<String> = rest
        .lines()
        .map(|l| if l.starts_with("PGD,Qbert,") { format!("{},0.10", l.rsplit_once(',').unwrap().0) } else { l.to_string() })
        .collect();
    fs::write(&tables, format!("{head}\n{}\n", tampered.join("\n"))).unwrap();
    let o = pgnkit(&["verify-ar", "--tables", s(&tables)]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL PGD/Qbert"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&pgnkit(&[])), 1);
    assert_eq!(code(&pgnkit(&["no-such-command"])), 1);
    assert_eq!(code(&pgnkit(&["attack", "--agent", "x.ckpt", "--method", "deepfool"])), 1);
    assert_eq!(code(&pgnkit(&["attack", "--agent", "/nonexistent/a.ckpt", "--method", "fgsm"])), 1);
    assert_eq!(code(&pgnkit(&["--config", "/nonexistent.toml", "verify-ar"])), 1);
    assert_eq!(code(&pgnkit(&["--help"])), 0);
}

#[test]
fn train_agent_is_reproducible_and_reloads() {
    let f = fixture();
    let again = f.root.join("agents/again.ckpt");
    let o = pgnkit(&["--config", s(&f.config), "train-agent", "--env", "minipong", "--seed", "0", "--out", s(&again)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&f.agent).unwrap(), fs::read(&again).unwrap());
    let agent = TrainedAgent::load(&f.agent).unwrap();
    let resaved = f.root.join("agents/resaved.ckpt");
    agent.save(&resaved).unwrap();
    assert_eq!(fs::read(&f.agent).unwrap(), fs::read(&resaved).unwrap());
    let curve = fs::read_to_string(f.root.join("agents/pong.ckpt.curve.csv")).unwrap();
    assert!(curve.starts_with("episode,steps,eval_return\n"));
}

#[test]
fn collect_defaults_to_twenty_episodes() {
    let f = fixture();
    let out = f.root.join("data/default.csv");
    let o = pgnkit(&["collect", "--agent", s(&f.agent), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("from 20 episodes"));
}

#[test]
fn train_pgn_rejects_empty_dataset() {
    let f = fixture();
    let empty = f.root.join("data/empty.csv");
    fs::write(&empty, "pgnkit-dataset v1\ndim 100\n").unwrap();
    let o = pgnkit(&["train-pgn", "--agent", s(&f.agent), "--data", s(&empty), "--out", s(&f.root.join("x.pgn"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no states"));
}

#[test]
fn every_pgn_combination_trains_and_attacks() {
    let f = fixture();
    for (variant, objective, label) in [
        ("ae", "targeted", "t-pgna"),
        ("gen", "targeted", "t-pgng"),
        ("ae", "untargeted", "u-pgna"),
        ("gen", "untargeted", "u-pgng"),
    ] {
        let pgn = train_pgn(f, variant, objective);
        assert!(Path::new(&format!("{}.loss.csv", pgn.display())).exists());
        let out = f.root.join(format!("runs/{label}"));
        let o = pgnkit(&[
            "--config", s(&f.config), "attack", "--agent", s(&f.agent), "--method", label,
            "--pgn", s(&pgn), "--episodes", "2", "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{label}: {}", String::from_utf8_lossy(&o.stderr));
        let r = parse_row(&stdout(&o));
        assert_eq!(r.method, label);
        let oracle = metrics::ar(r.delta_r, r.acr, r.mean_psnr, &ArWeights::default()).unwrap();
        assert!((r.ar - oracle).abs() <= 1e-12);
        assert!(out.join("trace_".to_string() + label + "_0.csv").exists());
    }
    // A targeted checkpoint cannot stand in for an untargeted method.
    let t = train_pgn(f, "ae", "targeted");
    let o = pgnkit(&["attack", "--agent", s(&f.agent), "--method", "u-pgna", "--pgn", s(&t)]);
    assert_eq!(code(&o), 1);
    let o = pgnkit(&["attack", "--agent", s(&f.agent), "--method", "t-pgna"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn no_attack_reports_full_consistency_under_report_dir_override() {
    let f = fixture();
    let reports = tempfile::tempdir().unwrap();
    let o = pgnkit_env(
        &["attack", "--agent", s(&f.agent), "--method", "none", "--episodes", "2"],
        &[("PGNKIT_REPORT_DIR", reports.path())],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = parse_row(&stdout(&o));
    assert_eq!(r.acr, 1.0);
    assert_eq!(r.delta_r, 0.0);
    assert!(!r.weak_attack);
    let written = reports.path().join("none/report.csv");
    let back = metrics::read_reports_csv(fs::read_to_string(written).unwrap().as_bytes()).unwrap();
    assert_eq!(back, vec![r]);
}

#[test]
fn report_merges_runs_and_handles_none() {
    let f = fixture();
    let o = pgnkit(&["report"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "method,env,reward,acr_percent,psnr,ar,weak\n");

    let mut paths = Vec::new();
    for method in ["fgsm", "pgd"] {
        let out = f.root.join(format!("report-runs/{method}"));
        let o = pgnkit(&[
            "--config", s(&f.config), "attack", "--agent", s(&f.agent), "--method", method,
            "--episodes", "1", "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0);
        paths.push(out.join("report.csv"));
    }
    let summary = f.root.join("summary.csv");
    let mut args = vec!["report", "--out", s(&summary)];
    args.extend(paths.iter().map(|p| s(p)));
    assert_eq!(code(&pgnkit(&args)), 0);
    let text = fs::read_to_string(summary).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("fgsm,minipong,"));
    assert!(rows[1].starts_with("pgd,minipong,"));
}

#[test]
fn benchmark_time_emits_one_row_per_method() {
    let f = fixture();
    let pgn = train_pgn(f, "gen", "targeted");
    let out = f.root.join("timing.csv");
    let o = pgnkit(&[
        "--config", s(&f.config), "benchmark-time", "--agent", s(&f.agent), "--methods", "fgsm,pgd,cw",
        "--pgn", s(&pgn), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out).unwrap();
    let methods: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["fgsm", "pgd", "cw", "t-pgng"]);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",100")));
    let o = pgnkit(&["benchmark-time", "--agent", s(&f.agent), "--states", "10"]);
    assert_eq!(code(&o), 1);
}

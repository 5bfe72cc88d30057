use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use marl_regalloc::baselines::random_policy_step;
use marl_regalloc::embeddings::Vocabulary;
use marl_regalloc::env::{replay, Action, Transcript};
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::parse_function;
use marl_regalloc::protocol::{run_learner, Learner, StartEpisodePayload};
use marl_regalloc::transforms::{Color, ColorMap};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_marl-regalloc"));
    c.env_remove("REGALLOC_RL_LOG");
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn alloc_writes_colors_that_verify() {
    let dir = tempfile::tempdir().unwrap();
    let colors = dir.path().join("c.json");
    let out = dir.path().join("out.mir");
    let input = data("running_example.mir");
    let o = run(&["alloc", "--input", p(&input), "--machine", "tiny3", "--verify", "--colors", p(&colors), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("cost 60"));
    assert!(stdout(&o).contains("verified"));
    let cmap: ColorMap = serde_json::from_str(&std::fs::read_to_string(&colors).unwrap()).unwrap();
    assert_eq!(cmap.len(), 4);
    assert!(parse_function(&std::fs::read_to_string(&out).unwrap()).unwrap().vregs().is_empty());

    let o = run(&["verify", "--input", p(&input), "--machine", "tiny3", "--colors", p(&colors)]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("ok"));
}

#[test]
fn verify_reports_conflicts_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let colors = dir.path().join("bad.json");
    let bad: ColorMap = ["i", "x", "y", "z"].iter().map(|v| (v.to_string(), Color::Reg("r0".into()))).collect();
    std::fs::write(&colors, serde_json::to_string(&bad).unwrap()).unwrap();
    let o = run(&["verify", "--input", p(&data("running_example.mir")), "--machine", "tiny3", "--colors", p(&colors)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("violation"));
}

#[test]
fn usage_and_input_errors_exit_two() {
    assert_eq!(run(&["alloc", "--input", "/nonexistent.mir"]).status.code(), Some(2));
    let input = data("running_example.mir");
    assert_eq!(run(&["alloc", "--input", p(&input), "--policy", "psychic"]).status.code(), Some(2));
    assert_eq!(run(&["alloc", "--input", p(&input), "--machine", "vax"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn machine_descriptions_load_from_files() {
    let o = run(&["alloc", "--input", p(&data("running_example_x86.mir")), "--machine", p(&data("x86like.toml"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["alloc", "--input", p(&data("running_example.mir")), "--machine", p(&data("tiny3.toml")), "--dump-liveness", "--dump-graph"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("pressure"));
    assert!(text.contains('i') && text.contains('z'));
}

#[test]
fn gen_writes_parseable_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen", "--seed", "5", "--count", "3", "--machine", "arm64like", "--out", p(dir.path()), "--blocks", "4"]);
    assert!(o.status.success());
    for s in 5..8 {
        let text = std::fs::read_to_string(dir.path().join(format!("gen{s}.mir"))).unwrap();
        parse_function(&text).unwrap();
    }
    let o = run(&["gen", "--seed", "5", "--machine", "arm64like", "--blocks", "4"]);
    let again = std::fs::read_to_string(dir.path().join("gen5.mir")).unwrap();
    assert_eq!(stdout(&o).trim(), again.trim());
}

#[test]
fn random_policy_records_a_replayable_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("t.json");
    let o = run(&["alloc", "--input", p(&data("running_example.mir")), "--machine", "tiny3", "--policy", "random", "--seed", "4", "--record", p(&rec), "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = Transcript::from_json(&std::fs::read_to_string(&rec).unwrap()).unwrap();
    assert!(!t.steps.is_empty());
    replay(&t, Arc::new(MachineDescription::tiny3()), Arc::new(Vocabulary::untrained(32, 0))).unwrap();
    assert!(stdout(&o).contains("global reward"));
}

#[test]
fn oracle_and_nosplit_policies() {
    for policy in ["oracle", "nosplit"] {
        let o = run(&["alloc", "--input", p(&data("running_example.mir")), "--machine", "tiny3", "--policy", policy, "--verify"]);
        assert!(o.status.success(), "{policy}");
        assert!(stdout(&o).contains("cost 60"), "{policy}: {}", stdout(&o));
    }
}

#[test]
fn train_vocab_then_use_it() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v.json");
    let o = run(&["embed", "train-vocab", "--generate", "20", "--dim", "8", "--epochs", "20", "--out", p(&v), "--machine", "x86like"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let vocab = Vocabulary::from_json(&std::fs::read_to_string(&v).unwrap()).unwrap();
    assert_eq!(vocab.dim, 8);
    assert_eq!(vocab.meta.losses.len(), 20);
    let o = run(&["alloc", "--input", p(&data("running_example.mir")), "--machine", "tiny3", "--policy", "random", "--vocab", p(&v)]);
    assert!(o.status.success());
}

#[test]
fn stats_and_bench_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let o = run(&["stats", "--generate", "6", "--machine", "tiny3", "--csv", p(&csv)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("pearson(|V|, |E|)"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 7);

    let gen_dir = dir.path().join("corpus");
    std::fs::create_dir(&gen_dir).unwrap();
    assert!(run(&["gen", "--count", "4", "--machine", "tiny3", "--out", p(&gen_dir)]).status.success());
    let bench = dir.path().join("b.csv");
    let o = run(&["bench", "--corpus", p(&gen_dir), "--machine", "tiny3", "--policies", "greedy,random", "--csv", p(&bench)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&bench).unwrap();
    assert!(text.lines().any(|l| l.starts_with("greedy")));
    assert!(text.lines().any(|l| l.starts_with("random")));
}

#[test]
fn serve_over_stdio() {
    let mut child = bin()
        .args(["serve", "--stdio", "--machine", "tiny3", "--dim", "4"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut l = Learner::new(BufReader::new(child.stdout.take().unwrap()), child.stdin.take().unwrap());
    assert_eq!(l.hello().unwrap().machine.as_deref(), Some("tiny3"));
    l.start_episode(&StartEpisodePayload {
        function: Some(std::fs::read_to_string(data("running_example.mir")).unwrap()),
        ..Default::default()
    })
    .unwrap();
    let done = run_learner(&mut l, |o, s| random_policy_step(&o.mask, 2, s).unwrap()).unwrap();
    assert_eq!(done.decisions.len(), done.transcript.steps.iter().filter(|s| matches!(s.action, Action::Color { .. } | Action::Spill)).count());
    drop(l);
    assert!(child.wait().unwrap().success());
}

#[test]
fn serve_over_tcp() {
    let mut child = bin()
        .args(["serve", "--port", "0", "--machine", "tiny3", "--max-sessions", "1", "--seed-range", "0..100"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let mut l = Learner::connect(&addr).unwrap();
    l.start_episode(&StartEpisodePayload {
        seed: Some(7),
        ..Default::default()
    })
    .unwrap();
    run_learner(&mut l, |o, s| random_policy_step(&o.mask, 7, s).unwrap()).unwrap();
    drop(l);
    assert!(child.wait().unwrap().success());
}

#[test]
fn remote_policy_dials_a_learner() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let child = bin()
        .args(["alloc", "--input", p(&data("running_example.mir")), "--machine", "tiny3", "--policy", &format!("remote:{addr}")])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut l = Learner::accept(&listener).unwrap();
    let done = run_learner(&mut l, |o, s| random_policy_step(&o.mask, 9, s).unwrap()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains(&format!("cost {}", done.cost_rl)));
}

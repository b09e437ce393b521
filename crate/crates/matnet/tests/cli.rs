use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matnet::formats::{parse_instance, parse_solution, write_ffsp, write_schedule, AnyInstance, Solution};
use matnet::gantt::inspect_svg;
use matnet::report::parse_csv;
use matnet_core::ffsp::{fixture_instance, machine_orders, replay_actions, FIXTURE_ACTIONS};
use matnet_core::lp::parse_lp;

fn matnet(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_matnet"));
    cmd.args(args).env_remove("MATNET_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = matnet(args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fixture_files_match_the_builtin_fixture() {
    let inst = fixture_instance();
    let sched = replay_actions(&inst, machine_orders(&inst, 0), &FIXTURE_ACTIONS).unwrap();
    let (i_text, s_text) = (write_ffsp(&inst), write_schedule(&inst, &sched));
    let (ip, sp) = (fixtures().join("gantt_instance.txt"), fixtures().join("gantt_schedule.txt"));
    if std::env::var_os("MATNET_BLESS").is_some() {
        std::fs::write(&ip, &i_text).unwrap();
        std::fs::write(&sp, &s_text).unwrap();
    }
    assert_eq!(std::fs::read_to_string(ip).unwrap(), i_text);
    assert_eq!(std::fs::read_to_string(sp).unwrap(), s_text);
}

#[test]
fn gantt_renders_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("chart.svg");
    ok(&["gantt", "--instance", s(&fixtures().join("gantt_instance.txt")), "--schedule", s(&fixtures().join("gantt_schedule.txt")), "--out", s(&svg)]);
    assert_eq!(inspect_svg(&std::fs::read_to_string(svg).unwrap()), (12, 25));
}

#[test]
fn usage_errors_exit_2_and_config_errors_exit_1() {
    let out = matnet(&["generate", "atsp", "--frobnicate"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[train]\nproblem = ffsp\nlr = -1\n").unwrap();
    let out = matnet(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("x"))], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lr"));
    std::fs::write(&cfg, "[train]\nproblem = atsp\nbatchsize = 3\n").unwrap();
    let out = matnet(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("x"))], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batchsize"));
}

#[test]
fn generate_is_deterministic_and_honours_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str| {
        let mut files: Vec<_> = std::fs::read_dir(dir.path().join(name)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    for out in ["a", "b"] {
        ok(&["generate", "atsp", "--n", "20", "--count", "3", "--seed", "7", "--out-dir", s(&dir.path().join(out))]);
    }
    let env = matnet(&["generate", "atsp", "--n", "20", "--count", "3", "--out-dir", s(&dir.path().join("c"))], &[("MATNET_SEED", "7")]);
    assert!(env.status.success());
    ok(&["generate", "atsp", "--n", "20", "--count", "3", "--seed", "8", "--out-dir", s(&dir.path().join("d"))]);
    assert_eq!(read("a").len(), 3);
    assert_eq!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
    assert_ne!(read("a"), read("d"));
}

#[test]
fn bench_oracle_solve_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("set");
    ok(&["generate", "atsp", "--n", "8", "--count", "5", "--seed", "1", "--out-dir", s(&set)]);
    let prefix = dir.path().join("rep");
    let text = ok(&["bench", "--methods", "nn,ni,fi,oracle", "--set", s(&set), "--out", s(&prefix)]);
    assert!(text.contains("Len.") && text.contains("oracle"));
    let rows = parse_csv(&std::fs::read_to_string(dir.path().join("rep.csv")).unwrap()).unwrap();
    let oracle = rows.iter().find(|r| r.method == "oracle").unwrap();
    assert_eq!(oracle.gap, Some(0.0));
    assert!(rows.iter().all(|r| r.gap.unwrap() >= 0.0 && r.instances == 5));
    let raw = std::fs::read_to_string(dir.path().join("rep.raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 4 * 5);

    let lengths = dir.path().join("opt.csv");
    ok(&["oracle", "--set", s(&set), "--out", s(&lengths)]);
    let first: f64 = std::fs::read_to_string(&lengths).unwrap().lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();

    let inst_path = set.join("instance_00000.txt");
    let sol = dir.path().join("tour.txt");
    ok(&["solve", "--instance", s(&inst_path), "--method", "oracle", "--out", s(&sol)]);
    let Solution::Tour(perm) = parse_solution(&std::fs::read_to_string(&sol).unwrap(), "tour", None).unwrap() else { panic!() };
    let AnyInstance::Atsp(inst) = parse_instance(&std::fs::read_to_string(&inst_path).unwrap(), "i").unwrap() else { panic!() };
    assert!((matnet_core::atsp::tour_length(&inst, &perm).unwrap() - first).abs() < 1e-6);

    for (inst, name) in [(inst_path, "a.lp"), (fixtures().join("gantt_instance.txt"), "f.lp")] {
        let lp = dir.path().join(name);
        ok(&["export-mip", "--instance", s(&inst), "--out", s(&lp)]);
        parse_lp(&std::fs::read_to_string(lp).unwrap()).unwrap();
    }

    let sched = dir.path().join("s.txt");
    ok(&["solve", "--instance", s(&fixtures().join("gantt_instance.txt")), "--method", "sjf", "--out", s(&sched)]);
    assert!(std::fs::read_to_string(sched).unwrap().starts_with("SCHED 3 4 20 "));
}

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path, env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_landscape-lab"));
    cmd.args(args).arg("--out").arg(out).env_remove("LANDSCAPE_LAB_SEED");
    if let Some(s) = env_seed {
        cmd.env("LANDSCAPE_LAB_SEED", s);
    }
    cmd.output().unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn landscape_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["pr2d", "--m", "3,10", "--grid=-2:2:21", "--seed", "4"];
    assert_eq!(run(&args, a.path(), None).status.code(), Some(0));
    assert_eq!(run(&args, b.path(), None).status.code(), Some(0));
    let fa = read_dir_sorted(a.path());
    assert_eq!(fa.len(), 6);
    assert_eq!(fa, read_dir_sorted(b.path()));
}

#[test]
fn seed_falls_back_to_environment() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(&["pr1d", "--seed", "77", "--grid=-1:1:11"], a.path(), None).status.code(), Some(0));
    assert_eq!(run(&["pr1d", "--grid=-1:1:11"], b.path(), Some("77")).status.code(), Some(0));
    assert_eq!(read_dir_sorted(a.path()), read_dir_sorted(b.path()));
    let text = String::from_utf8(read_dir_sorted(a.path())[0].1.clone()).unwrap();
    assert!(text.contains("# master_seed=77"));
}

#[test]
fn verification_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let ok = run(&["regions_pr", "--n", "2", "--samples", "50"], d.path(), None);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("regions_pr: PASS"));
    let fail = run(&["assumptions", "--family", "pr", "--n", "2", "--m", "3", "--samples", "200"], d.path(), None);
    assert_eq!(fail.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&fail.stdout).contains("assumptions: FAIL"));
    assert!(d.path().join("assumptions.json").exists());
}

#[test]
fn invalid_configuration_exits_with_three() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        vec!["pr2d", "--grid=2:-2:1"],
        vec!["ms_rank2_dist", "--trials", "0"],
        vec!["pr1d", "--format", "xml"],
        vec!["rip", "--eigvals=1,-1"],
    ] {
        let out = run(&args, d.path(), None);
        assert_eq!(out.status.code(), Some(3), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# pr1d run\nseed = 5\nm = 12\ngrid = -1:1:3\n").unwrap();
    let out_a = d.path().join("a");
    let out_b = d.path().join("b");
    assert_eq!(run(&["pr1d", "--config", cfg.to_str().unwrap()], &out_a, None).status.code(), Some(0));
    assert_eq!(run(&["pr1d", "--config", cfg.to_str().unwrap(), "--m", "13"], &out_b, None).status.code(), Some(0));
    let a = String::from_utf8(read_dir_sorted(&out_a)[0].1.clone()).unwrap();
    let b = String::from_utf8(read_dir_sorted(&out_b)[0].1.clone()).unwrap();
    assert!(a.contains("# master_seed=5"));
    assert_ne!(a, b);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[grid]\nnx = 8\nny = 8\n[scheme]\ntau = 1e-2\nt_end = 0.03\n[init]\npreset = \"tumor_seed\"\nradius = 3.0\n[output]\nsnapshot_every = 1\nbinary = true\n";

fn chb(args: &[&str], env_root: Option<&Path>, cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chb"));
    cmd.args(args).current_dir(cwd).env_remove("CHB_OUTPUT_ROOT");
    if let Some(root) = env_root {
        cmd.env("CHB_OUTPUT_ROOT", root);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_snapshots_ledger_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let res = chb(&["run", &cfg, "--out", out.to_str().unwrap()], None, tmp.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["snapshot_000000.vtk", "snapshot_000003.vtk", "snapshot_000003.chb", "ledger.csv", "manifest.json"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let ledger = fs::read_to_string(out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 5);
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\""));
}

#[test]
fn overrides_are_applied() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let res = chb(&["run", &cfg, "--out", out.to_str().unwrap(), "--set", "scheme.t_end=0.01"], None, tmp.path());
    assert_eq!(res.status.code(), Some(0));
    let ledger = fs::read_to_string(out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 3);
}

#[test]
fn output_root_variable_is_respected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seeded.toml", SMALL);
    let root = tmp.path().join("root");
    let res = chb(&["run", &cfg], Some(&root), tmp.path());
    assert_eq!(res.status.code(), Some(0));
    assert!(root.join("seeded").join("manifest.json").exists());
}

#[test]
fn missing_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let res = chb(&["run", "does_not_exist.toml"], None, tmp.path());
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn invalid_config_reports_every_issue() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[potential]\nkind = \"logaritmic\"\n[scheme]\ntau = -1.0\n");
    let res = chb(&["run", &cfg], None, tmp.path());
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("logarithmic"), "{err}");
    assert!(err.contains("scheme.tau"), "{err}");
    assert!(!tmp.path().join("chb_output").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(chb(&["frobnicate"], None, tmp.path()).status.code(), Some(1));
    assert_eq!(chb(&[], None, tmp.path()).status.code(), Some(1));
}

#[test]
fn manufacture_reports_orders() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mms");
    let res = chb(&["manufacture", "--cells", "4,8,16", "--out", out.to_str().unwrap()], None, tmp.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("manufactured.txt").exists());
}

#[test]
fn verify_subset_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let res = chb(&["verify", "--only", "1,2,3,6"], None, tmp.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let text = String::from_utf8_lossy(&res.stdout);
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 4, "{text}");
}

#[test]
fn sweep_runs_every_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("sweep");
    let res = chb(
        &["--threads", "2", "sweep", &cfg, "--key", "model.chi", "--values", "0,0.5", "--out", out.to_str().unwrap()],
        None,
        tmp.path(),
    );
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for v in ["0", "0.5"] {
        assert!(out.join(format!("model.chi={v}")).join("ledger.csv").exists());
    }
}

#[test]
fn sweep_rejects_bad_members_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("sweep");
    let res = chb(&["sweep", &cfg, "--key", "scheme.tau", "--values", "1e-2,-1", "--out", out.to_str().unwrap()], None, tmp.path());
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.join("scheme.tau=1e-2").exists());
}

#[test]
fn continuation_writes_a_ledger_per_level() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[grid]\nnx = 8\nny = 8\n[potential]\nkind = \"double_obstacle\"\n[scheme]\ntau = 1e-2\nt_end = 0.05\n[init]\npreset = \"spinodal\"\n";
    let cfg = write_config(tmp.path(), "cont.toml", text);
    let out = tmp.path().join("cont");
    let res = chb(&["continuation", &cfg, "--eps-list", "0.1,0.01", "--out", out.to_str().unwrap()], None, tmp.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("continuation.csv").exists());
    assert!(out.join("manifest.json").exists());
    let ledgers = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("ledger_eps_")).count();
    assert_eq!(ledgers, 2);
}

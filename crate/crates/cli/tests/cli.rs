use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
name = small
kind = costcompare
seed = 3
model.d = 1
model.kappa = 1
model.epsilon = 1
numerics.p = 6
numerics.n = 150
numerics.degree = 3
numerics.iterations = 3
optimizer.backend = analytic
";

fn tfp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfp"))
        .args(args)
        .env_remove("TFP_OUT")
        .env("RUST_LOG", "warn")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn csv_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn run_lists_written_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.cfg", SMALL);
    let out = tfp(&["run", &cfg, "--out", "res"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8(out.stdout).unwrap();
    assert!(listed.lines().any(|l| l.ends_with("costs.csv")), "{listed}");
    for line in listed.lines() {
        assert!(tmp.path().join(line).exists(), "{line}");
    }
    assert!(tmp.path().join("res/small/manifest.txt").exists());
    assert!(tmp.path().join("res/cache").is_dir());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.cfg", SMALL);
    for (threads, out) in [("1", "a"), ("3", "b")] {
        let o = tfp(&["--threads", threads, "--no-cache", "run", &cfg, "--out", out], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = csv_outputs(&tmp.path().join("a/small"));
    assert!(!a.is_empty());
    assert_eq!(a, csv_outputs(&tmp.path().join("b/small")));
    assert!(!tmp.path().join("a/cache").exists());
}

#[test]
fn output_directory_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.cfg", &format!("{SMALL}output = from-config\n"));
    let o = tfp(&["equilibria", &cfg], tmp.path());
    assert!(o.status.success());
    assert!(tmp.path().join("from-config/small/equilibria.csv").exists());
    let o = Command::new(env!("CARGO_BIN_EXE_tfp"))
        .args(["equilibria", &cfg])
        .env("TFP_OUT", "from-env")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("from-env/small/equilibria.csv").exists());
    let o = tfp(&["equilibria", &cfg, "--out", "from-flag"], tmp.path());
    assert!(o.status.success());
    assert!(tmp.path().join("from-flag/small/equilibria.csv").exists());
}

#[test]
fn exit_statuses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.cfg", SMALL);

    let bad = write(tmp.path(), "bad.cfg", &SMALL.replace("numerics.n = 150", "numerics.n = many\nbogus = 1"));
    let o = tfp(&["run", &bad], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("numerics.n") && err.contains("bogus"), "{err}");

    assert_eq!(tfp(&["validate", &cfg, "--seed2", "3"], tmp.path()).status.code(), Some(2));
    assert_eq!(tfp(&["validate", &cfg, "--seed2", "4", "--out", "v"], tmp.path()).status.code(), Some(0));

    fs::write(tmp.path().join("blocked"), b"").unwrap();
    assert_eq!(tfp(&["equilibria", &cfg, "--out", "blocked"], tmp.path()).status.code(), Some(1));

    let wild = write(
        tmp.path(),
        "wild.cfg",
        &SMALL.replace(
            "optimizer.backend = analytic",
            "optimizer.backend = adam\noptimizer.lr = 1e6\noptimizer.epochs = 50",
        ),
    );
    assert_eq!(tfp(&["run", &wild, "--no-cache"], tmp.path()).status.code(), Some(3));
}

//! End-to-end runs of the `gabor` binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gabor_cli::manifest::{RunManifest, MANIFEST_NAME};

const SMALL: &str = r#"
[corpus]
count = 3
[corpus.leaves]
width = 48
height = 48
[pipeline]
patch_size = 8
batch_size = 10
[preprocess]
train_patches = 150
test_patches = 40
[learning]
iterations = 4
snapshot_every = 2
[baseline]
iterations = 3
[bench]
lambdas = [0.0001, 0.01, 0.1, 1.0, 5.0]
"#;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        Env { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_gabor"))
            .args(args)
            .current_dir(self.dir.path())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let mut full: Vec<&str> = args.to_vec();
        if !args.contains(&"replay") {
            full.extend(["--config", "small.toml"]);
        }
        let out = self.run(&full);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    /// Corpus and patch caches under `corpus/` and `pre/`.
    fn prepared() -> Self {
        let env = Env::new();
        env.ok(&["synth-corpus", "--out", "corpus"]);
        env.ok(&["preprocess", "corpus", "--out", "pre"]);
        env
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Every output listed in the manifest of `a` is byte-identical in `b`.
fn assert_same_outputs(a: &Path, b: &Path) {
    let ma = RunManifest::read(&a.join(MANIFEST_NAME)).unwrap();
    let mb = RunManifest::read(&b.join(MANIFEST_NAME)).unwrap();
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(
        (ma.command, ma.config, ma.seed),
        (mb.command, mb.config, mb.seed)
    );
    assert!(!ma.outputs.is_empty());
    for name in &ma.outputs {
        assert!(read(&a.join(name)) == read(&b.join(name)), "{name} differs");
    }
}

fn lines(p: &Path) -> usize {
    String::from_utf8(read(p)).unwrap().lines().count()
}

#[test]
fn empty_corpus_is_an_error() {
    let env = Env::new();
    std::fs::create_dir(env.path("empty")).unwrap();
    let out = env.run(&["preprocess", "empty", "--out", "pre"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("0 inputs"));
}

#[test]
fn out_is_required() {
    let env = Env::new();
    assert!(!env.run(&["synth-corpus"]).status.success());
}

#[test]
fn preprocess_is_deterministic_and_fills_the_budget() {
    let env = Env::prepared();
    env.ok(&["preprocess", "corpus", "--out", "pre2"]);
    assert_same_outputs(&env.path("pre"), &env.path("pre2"));
    assert_eq!(lines(&env.path("pre/train.csv")), 150 + 1);
    assert_eq!(lines(&env.path("pre/test.csv")), 40 + 1);
    assert!(read(&env.path("pre/skipped.txt")).is_empty());
    env.ok(&["preprocess", "corpus", "--seed", "2", "--out", "pre3"]);
    assert!(read(&env.path("pre/train.csv")) != read(&env.path("pre3/train.csv")));
}

#[test]
fn unreadable_files_are_skipped_and_listed() {
    let env = Env::prepared();
    std::fs::write(env.path("corpus/notes.txt"), "not an image").unwrap();
    env.ok(&["preprocess", "corpus", "--out", "pre2"]);
    let skipped = String::from_utf8(read(&env.path("pre2/skipped.txt"))).unwrap();
    assert_eq!(skipped.lines().count(), 1);
    assert!(skipped.contains("notes.txt"));
}

#[test]
fn learn_writes_basis_trace_and_checkpoints() {
    let env = Env::prepared();
    env.ok(&["learn", "pre/train.csv", "--out", "learn"]);
    assert_eq!(lines(&env.path("learn/trace.csv")), 4 + 1);
    for f in [
        "basis.csv",
        "init.csv",
        "basis_iter_0002.csv",
        "basis_iter_0004.csv",
        "mosaic.png",
    ] {
        assert!(env.path("learn").join(f).exists(), "{f}");
    }
    assert!(read(&env.path("learn/basis_iter_0004.csv")) == read(&env.path("learn/basis.csv")));

    env.ok(&["learn", "pre/train.csv", "--swap-rates", "--out", "swap"]);
    let m = RunManifest::read(&env.path("swap").join(MANIFEST_NAME)).unwrap();
    assert!(matches!(
        m.command,
        gabor_cli::Command::Learn {
            swap_rates: true,
            ..
        }
    ));
    assert!(read(&env.path("swap/basis.csv")) != read(&env.path("learn/basis.csv")));
}

#[test]
fn zero_iterations_echo_the_initial_basis() {
    let env = Env::prepared();
    std::fs::write(
        env.path("zero.toml"),
        SMALL.replace("iterations = 4", "iterations = 0"),
    )
    .unwrap();
    let out = env.run(&[
        "learn",
        "pre/train.csv",
        "--config",
        "zero.toml",
        "--out",
        "learn",
    ]);
    assert!(out.status.success());
    assert!(read(&env.path("learn/basis.csv")) == read(&env.path("learn/init.csv")));
    assert_eq!(lines(&env.path("learn/trace.csv")), 0);
}

#[test]
fn bench_rows_repeat_for_a_repeated_basis() {
    let env = Env::prepared();
    env.ok(&["generate", "--out", "gen"]);
    env.ok(&[
        "bench",
        "--patches",
        "pre/test.csv",
        "gen/basis.csv",
        "gen/basis.csv",
        "--out",
        "bench",
    ]);
    let text = String::from_utf8(read(&env.path("bench/bench.csv"))).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 10);
    for (a, b) in rows[..5].iter().zip(&rows[5..]) {
        assert_eq!(a[2..], b[2..]);
    }
    assert!(!env
        .run(&[
            "bench",
            "--patches",
            "pre/test.csv",
            "missing.csv",
            "--config",
            "small.toml",
            "--out",
            "b2"
        ])
        .status
        .success());
}

#[test]
fn generate_is_seeded_and_fills_the_grid() {
    let env = Env::new();
    env.run(&["generate", "--out", "a"]);
    env.run(&["generate", "--out", "b"]);
    env.run(&["generate", "--seed", "5", "--out", "c"]);
    // default patch size: 16 × 16 atoms after three header lines
    assert_eq!(lines(&env.path("a/basis.csv")), 3 + 256);
    assert!(read(&env.path("a/basis.csv")) == read(&env.path("b/basis.csv")));
    assert!(read(&env.path("a/basis.csv")) != read(&env.path("c/basis.csv")));
    assert!(env.path("a/mosaic.png").exists());
}

#[test]
fn fit_reports_retained_atoms_and_is_idempotent() {
    let env = Env::new();
    env.run(&["generate", "--variant", "model1", "--out", "gen"]);
    let out = env.run(&["fit", "gen/basis.csv", "--out", "fit"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("of 256 atoms"));
    env.run(&["fit", "gen/basis.csv", "--out", "fit2"]);
    assert_same_outputs(&env.path("fit"), &env.path("fit2"));

    // closing the loop: a model generated from the fit report
    let out = env.run(&[
        "generate",
        "--report",
        "fit/fit_report.toml",
        "--variant",
        "model2",
        "--out",
        "gen2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn probe_with_zero_iterations_has_zero_drift() {
    let env = Env::prepared();
    std::fs::write(
        env.path("zero.toml"),
        SMALL.replace("iterations = 3", "iterations = 0"),
    )
    .unwrap();
    env.ok(&["generate", "--out", "gen"]);
    let out = env.run(&[
        "probe",
        "gen/basis.csv",
        "--patches",
        "pre/train.csv",
        "--config",
        "zero.toml",
        "--out",
        "probe",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = String::from_utf8(read(&env.path("probe/drift.toml"))).unwrap();
    assert!(report.contains("drift = 0.0"), "{report}");
    assert!(env.path("probe/before.png").exists() && env.path("probe/after.png").exists());
}

#[test]
fn every_command_replays_bit_exactly() {
    let env = Env::prepared();
    env.ok(&["learn", "pre/train.csv", "--out", "learn"]);
    env.ok(&["generate", "--out", "gen"]);
    env.ok(&[
        "bench",
        "--patches",
        "pre/test.csv",
        "gen/basis.csv",
        "--out",
        "bench",
    ]);
    env.ok(&["fit", "gen/basis.csv", "--out", "fit"]);
    env.ok(&[
        "probe",
        "learn/basis.csv",
        "--patches",
        "pre/train.csv",
        "--out",
        "probe",
    ]);
    for dir in ["corpus", "pre", "learn", "gen", "bench", "fit", "probe"] {
        let replay = format!("{dir}-replay");
        let manifest = format!("{dir}/{MANIFEST_NAME}");
        env.ok(&["replay", &manifest, "--out", &replay]);
        assert_same_outputs(&env.path(dir), &env.path(&replay));
    }
}

#[test]
fn replay_rejects_overrides() {
    let env = Env::new();
    env.ok(&["generate", "--out", "gen"]);
    let out = env.run(&["replay", "gen/manifest.toml", "--seed", "3", "--out", "x"]);
    assert!(!out.status.success());
}

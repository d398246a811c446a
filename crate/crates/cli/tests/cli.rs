use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bondcause_core::format;

fn bondcause(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bondcause"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TWO_BODY: &str = r#"
schema_version = 1
seed = 4

[generate]
steps = 30

[generate.spec]
n = 2
d = 3
edges = [[0, 1], [1, 0]]
k1 = 1.5
k2 = 0.0
confinement = 0.0
anchors = [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5]]
h = 0.1
sigma_u = 0.0
"#;

const SMALL: &str = r#"
schema_version = 1
seed = 7

[generate]
steps = 60

[generate.random]
nodes = 4
dims = 2
change_set = [1]
trajectories = 2
boundary_step = 30
burn_in = 10

[data]
window = 6

[train]
epochs = 2
batch_size = 4
encoder_hidden = 8
decoder_hidden = 8
"#;

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn generate_matches_two_body_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", TWO_BODY);
    let out_dir = path(dir.path(), "gen");
    ok(&bondcause(&["generate", "--config", &cfg, "--out", &out_dir]));
    let (corpus, _) = format::load(&dir.path().join("gen/corpus.txt")).unwrap();
    let x = &corpus.samples[0];
    let factor: f64 = 1.0 - 2.0 * 0.1 * 1.5;
    let a1 = [1.0, -2.0, 0.5];
    for t in 0..30 {
        for k in 0..3 {
            let centre = 0.5 * a1[k];
            let half = 0.5 * a1[k] * factor.powi(t as i32);
            assert!((x.data()[t * 3 + k] - (centre - half)).abs() < 1e-9);
            assert!((x.data()[(30 + t) * 3 + k] - (centre + half)).abs() < 1e-9);
        }
    }
    for f in ["resolved_config.toml", "corpus_hash.txt", "system.toml"] {
        assert!(dir.path().join("gen").join(f).exists(), "{f} missing");
    }
}

#[test]
fn train_echoes_prediction_defaults_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    ok(&bondcause(&["generate", "--config", &cfg, "--out", &path(dir.path(), "gen")]));
    let corpus = path(dir.path(), "gen/corpus.txt");
    for run in ["a", "b"] {
        ok(&bondcause(&["train", "--config", &cfg, "--corpus", &corpus, "--out", &path(dir.path(), run)]));
    }
    let echo = fs::read_to_string(dir.path().join("a/resolved_config.toml")).unwrap();
    assert!(echo.contains("tau = 0.5"), "{echo}");
    assert!(echo.contains("lr = 0.00005"), "{echo}");
    assert!(echo.contains("prior = [0.2, 0.4, 0.4]"), "{echo}");
    for f in ["checkpoint.bin", "last.bin", "metrics.csv", "corpus_hash.txt"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let metrics = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("epoch,train_loss,val_mse,lr"));
    assert_eq!(metrics.lines().count(), 4);

    let ckpt = path(dir.path(), "a/checkpoint.bin");
    ok(&bondcause(&["predict", "--checkpoint", &ckpt, "--corpus", &corpus, "--out", &path(dir.path(), "pred")]));
    let (predicted, _) = format::load(&dir.path().join("pred/predicted.txt")).unwrap();
    assert!(predicted.predicted);
    ok(&bondcause(&["evaluate", "--checkpoint", &ckpt, "--corpus", &corpus, "--out", &path(dir.path(), "eval")]));
    let sweep = fs::read_to_string(dir.path().join("eval/sweep.csv")).unwrap();
    assert!(sweep.starts_with("steps,windows,mse,mae\n6,"), "{sweep}");
    for f in ["displacement.csv", "rmsf_t.csv", "rmsf_atom.csv", "resolved_config.toml"] {
        assert!(dir.path().join("eval").join(f).exists(), "{f} missing");
    }
}

#[test]
fn hash_mismatch_is_refused_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    ok(&bondcause(&["generate", "--config", &cfg, "--out", &path(dir.path(), "gen")]));
    ok(&bondcause(&["generate", "--config", &cfg, "--seed", "8", "--out", &path(dir.path(), "other")]));
    let corpus = path(dir.path(), "gen/corpus.txt");
    ok(&bondcause(&["train", "--config", &cfg, "--corpus", &corpus, "--out", &path(dir.path(), "t")]));
    let ckpt = path(dir.path(), "t/checkpoint.bin");
    let other = path(dir.path(), "other/corpus.txt");
    let refused = bondcause(&["predict", "--checkpoint", &ckpt, "--corpus", &other, "--out", &path(dir.path(), "p")]);
    assert_eq!(refused.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("hash"));
    ok(&bondcause(&[
        "predict",
        "--checkpoint",
        &ckpt,
        "--corpus",
        &other,
        "--allow-hash-mismatch",
        "--out",
        &path(dir.path(), "p"),
    ]));
}

#[test]
fn identical_regimes_give_zero_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        r#"
schema_version = 1

[generate]
steps = 24

[generate.spec]
n = 3
d = 2
edges = [[0, 0, 0], [0, 0, 0], [0, 0, 0]]
k1 = 1.0
k2 = 0.0
confinement = 0.5
anchors = [[0.5, 0.1], [-0.3, 0.9], [0.2, -0.7]]
h = 0.1
sigma_u = 0.0
trajectories = 2
boundary_step = 12

[data]
window = 6

[train]
preset = "rca"
epochs = 2
batch_size = 4
encoder_hidden = 8
decoder_hidden = 8
"#,
    );
    ok(&bondcause(&["generate", "--config", &cfg, "--out", &path(dir.path(), "gen")]));
    let out = bondcause(&[
        "rca",
        "--config",
        &cfg,
        "--corpus",
        &path(dir.path(), "gen/corpus.txt"),
        "--out",
        &path(dir.path(), "rca"),
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("no mechanism change detected"));
    let report = fs::read_to_string(dir.path().join("rca/report.csv")).unwrap();
    for line in report.lines().skip(1) {
        let score: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(score, 0.0, "{report}");
    }
    let accuracy = fs::read_to_string(dir.path().join("rca/accuracy.csv")).unwrap();
    assert!(accuracy.contains("undefined"), "{accuracy}");
    let echo = fs::read_to_string(dir.path().join("rca/resolved_config.toml")).unwrap();
    assert!(echo.contains("prior = [0.9, 0.05, 0.05]"), "{echo}");
    for f in ["posterior_persist.csv", "posterior_separated.csv", "metrics.csv", "checkpoint.bin"] {
        assert!(dir.path().join("rca").join(f).exists(), "{f} missing");
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "schema_version = 1\nbogus = 3\n");
    let out = bondcause(&["generate", "--config", &bad, "--out", &path(dir.path(), "x")]);
    assert_eq!(out.status.code(), Some(2));
    let typo = write(dir.path(), "typo.toml", "schema_version = 1\n[train]\nepoch = 3\n");
    let out = bondcause(&["train", "--config", &typo, "--corpus", "missing.txt", "--out", &path(dir.path(), "x")]);
    assert_eq!(out.status.code(), Some(2));
    let version = write(dir.path(), "v.toml", "schema_version = 9\n");
    let out = bondcause(&["generate", "--config", &version, "--out", &path(dir.path(), "x")]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out = bondcause(&["train", "--config", &cfg, "--corpus", &path(dir.path(), "nope.txt"), "--out", &path(dir.path(), "x")]);
    assert_eq!(out.status.code(), Some(3));
    let unstable = write(
        dir.path(),
        "unstable.toml",
        &TWO_BODY.replace("h = 0.1", "h = 5.0").replace("steps = 30", "steps = 200"),
    );
    let out = bondcause(&["generate", "--config", &unstable, "--out", &path(dir.path(), "x")]);
    assert_eq!(out.status.code(), Some(4));
}

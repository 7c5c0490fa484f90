use std::path::Path;
use std::process::{Command, Output};

use softtpr::checkpoint::Checkpoint;
use softtpr::report::parse_kv;

const CONFIG: &str = "\
seed = 3
[data]
samples = 150
[model]
encoder_widths = [16]
decoder_widths = [16]
[train]
iterations = 20
batch_size = 8
checkpoint_schedule = [0, 10, 20]
[metrics]
factorvae_batches = 20
factorvae_batch_size = 16
betavae_points = 20
betavae_pairs_per_point = 8
samples = 200
[probe]
epochs = 2
train_sizes = [20]
train_samples = 40
test_samples = 20
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softtpr"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn train_with_zero_iterations_writes_iteration_zero() {
    let dir = setup();
    let o = run(dir.path(), &["--config", "run.toml", "--out", "z", "train"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("run.toml")).unwrap();
    std::fs::write(dir.path().join("zero.toml"), text.replace("iterations = 20", "iterations = 0")).unwrap();
    let o = run(dir.path(), &["--config", "zero.toml", "--out", "z0", "train"]);
    assert!(o.status.success(), "{o:?}");
    let ckpt = Checkpoint::load(&dir.path().join("z0/checkpoint.bin")).unwrap();
    assert_eq!(ckpt.model.iteration, 0);
    assert!(dir.path().join("z0/checkpoint_000000.bin").exists());
}

#[test]
fn pipeline_produces_reports() {
    let dir = setup();
    let p = dir.path();
    assert!(run(p, &["--config", "run.toml", "--out", "o", "generate-data"]).status.success());
    assert!(run(p, &["--config", "run.toml", "--out", "o", "train"]).status.success());
    for it in [0, 10, 20] {
        assert!(p.join(format!("o/checkpoint_{it:06}.bin")).exists());
    }
    let log = std::fs::read_to_string(p.join("o/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 21);

    let o = run(p, &["--checkpoint", "o/checkpoint.bin", "--dataset", "o/dataset.csv", "--out", "e", "eval-metrics"]);
    assert!(o.status.success(), "{o:?}");
    let kv = parse_kv(&std::fs::read_to_string(p.join("e/metrics.txt")).unwrap()).unwrap();
    assert_eq!(kv["iteration"], "20");
    assert!(kv.contains_key("reconstruction_mse"));

    let o = run(
        p,
        &["--checkpoint", "o/checkpoint_000000.bin", "--checkpoint", "o/checkpoint.bin", "--out", "e", "eval-probe"],
    );
    assert!(o.status.success(), "{o:?}");
    let table = std::fs::read_to_string(p.join("e/probe.csv")).unwrap();
    let kinds: Vec<_> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_string()).collect();
    assert_eq!(kinds, ["soft_tpr", "explicit_tpr", "soft_tpr", "explicit_tpr"]);
}

#[test]
fn exported_tpr_quantizes_with_zero_residual() {
    let dir = setup();
    let p = dir.path();
    assert!(run(p, &["--config", "run.toml", "--out", "o", "train"]).status.success());
    let o = run(p, &["--checkpoint", "o/checkpoint.bin", "compose", "2,5,16"]);
    assert!(o.status.success(), "{o:?}");
    std::fs::write(p.join("tpr.txt"), stdout(&o)).unwrap();
    let o = run(p, &["--checkpoint", "o/checkpoint.bin", "quantize", "tpr.txt"]);
    assert!(o.status.success(), "{o:?}");
    let kv = parse_kv(&stdout(&o)).unwrap();
    assert_eq!(kv["matching"], "2,5,16");
    assert_eq!(kv["residual"], "0");
}

#[test]
fn observations_can_be_quantized() {
    let dir = setup();
    let p = dir.path();
    assert!(run(p, &["--config", "run.toml", "--out", "o", "train"]).status.success());
    std::fs::write(p.join("x.txt"), vec!["0.5"; 32].join(",")).unwrap();
    let o = run(p, &["--checkpoint", "o/checkpoint.bin", "quantize", "--observations", "x.txt"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(parse_kv(&stdout(&o)).unwrap()["role_residuals"].split(',').count(), 3);
}

#[test]
fn runs_are_deterministic() {
    let bytes = |dir: &Path, file: &str| std::fs::read(dir.join("o").join(file)).unwrap();
    let (a, b) = (setup(), setup());
    for d in [a.path(), b.path()] {
        assert!(run(d, &["--config", "run.toml", "--out", "o", "generate-data"]).status.success());
        assert!(run(d, &["--config", "run.toml", "--out", "o", "train"]).status.success());
    }
    for file in ["dataset.csv", "checkpoint.bin", "checkpoint_000010.bin", "train_log.csv"] {
        assert_eq!(bytes(a.path(), file), bytes(b.path(), file), "{file}");
    }
    let p = a.path();
    assert!(run(p, &["--config", "run.toml", "--seed", "4", "--out", "c", "train"]).status.success());
    let other = Checkpoint::load(&p.join("c/checkpoint.bin")).unwrap();
    assert_ne!(Checkpoint::load(&p.join("o/checkpoint.bin")).unwrap().model, other.model);
}

#[test]
fn exit_codes() {
    let dir = setup();
    let p = dir.path();
    std::fs::write(p.join("bad.toml"), "unknown = 1").unwrap();
    assert_eq!(run(p, &["--config", "bad.toml", "train"]).status.code(), Some(1));
    assert_eq!(run(p, &["eval-metrics"]).status.code(), Some(1));
    assert_eq!(run(p, &["--config", "missing.toml", "train"]).status.code(), Some(2));
    assert_eq!(run(p, &["--checkpoint", "missing.bin", "eval-metrics"]).status.code(), Some(2));
    std::fs::write(p.join("junk.bin"), b"junk").unwrap();
    assert_eq!(run(p, &["--checkpoint", "junk.bin", "eval-metrics"]).status.code(), Some(2));

    assert!(run(p, &["--config", "run.toml", "--out", "o", "train"]).status.success());
    std::fs::write(p.join("short.txt"), "1,2,3").unwrap();
    assert_eq!(run(p, &["--checkpoint", "o/checkpoint.bin", "quantize", "short.txt"]).status.code(), Some(1));
    std::fs::write(p.join("nan.txt"), "1,x").unwrap();
    assert_eq!(run(p, &["--checkpoint", "o/checkpoint.bin", "quantize", "nan.txt"]).status.code(), Some(2));

    // A learning rate this large overflows within a few steps.
    let text = std::fs::read_to_string(p.join("run.toml")).unwrap();
    let blowup = text.replace("[train]\n", "[train]\nadam = { lr = 1e200, beta1 = 0.9, beta2 = 0.999, eps = 1e-8 }\n");
    std::fs::write(p.join("blowup.toml"), blowup).unwrap();
    let o = run(p, &["--config", "blowup.toml", "--out", "x", "train"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(String::from_utf8(o.stderr).unwrap().contains("non-finite"));
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let dir = setup();
    let o = run(dir.path(), &["--config", "run.toml", "gradcheck"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(parse_kv(&stdout(&o).lines().take(3).collect::<Vec<_>>().join("\n")).unwrap()["failures"], "0");
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use motion_energy::data::io::read_motions;
use motion_energy::data::{Dataset, MANIFEST_FILE};
use motion_energy::eval::MetricReport;

const TINY: &str = r#"
[data]
n_train = 64
n_test = 60
n_held_out = 8

[vae]
epochs = 1
channels = 16

[evaluator]
epochs = 1

[diffusion]
steps = 4
batch_size = 8

[diffusion.denoiser]
blocks = 1
width = 16
heads = 2
time_dim = 8
ff_mult = 2

[eval]
n_generated = 600
decomposition_seeds = 4
mm_texts = 2
steps = 2
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_motion-energy"));
    c.env_remove("MOTION_ENERGY_OUT").env("RUST_LOG", "warn");
    c
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

/// Tiny end-to-end workspace: data, VAE, evaluator and one exp model.
fn workspace() -> &'static Path {
    static W: OnceLock<tempfile::TempDir> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path());
        let cfg = cfg.to_str().unwrap();
        let out = dir.path();
        ok(out, &["--config", cfg, "gen-data", "--seed", "3"]);
        ok(out, &["--config", cfg, "train-vae"]);
        ok(out, &["--config", cfg, "train-eval"]);
        ok(out, &["--config", cfg, "train-diffusion", "--variant", "exp", "--mode", "latent"]);
        dir
    })
    .path()
}

fn hash_line(stdout: &str) -> String {
    stdout.lines().find(|l| l.contains("sha256")).unwrap().split_whitespace().last().unwrap().to_owned()
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--seed", "7", "--n-train", "32", "--n-test", "8", "--n-held-out", "4"];
    let ha = hash_line(&ok(a.path(), &args));
    let hb = hash_line(&ok(b.path(), &args));
    assert_eq!(ha, hb);
    let c = tempfile::tempdir().unwrap();
    let other = ["gen-data", "--seed", "8", "--n-train", "32", "--n-test", "8", "--n-held-out", "4"];
    assert_ne!(ha, hash_line(&ok(c.path(), &other)));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(dir.path(), &["--config", cfg.to_str().unwrap(), "gen-data", "--n-train", "50"]);
    let manifest = std::fs::read_to_string(dir.path().join("data").join(MANIFEST_FILE)).unwrap();
    let d = Dataset::load(&dir.path().join("data")).unwrap();
    assert_eq!(d.manifest.counts.train, 50, "{manifest}");
    assert_eq!(d.manifest.counts.test, 60);
}

#[test]
fn output_dir_defaults_to_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("MOTION_ENERGY_OUT", dir.path())
        .args(["gen-data", "--n-train", "16", "--n-test", "4", "--n-held-out", "2"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("data").join(MANIFEST_FILE).exists());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["gen-data", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["train-diffusion", "--variant", "nope"]).status.code(), Some(2));
    let o = run(dir.path(), &["sample", "--texts", "straight"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: usage: "), "{err}");
}

#[test]
fn missing_checkpoint_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sample", "--texts", "straight,wave_left"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: missing: "), "{err}");
    let o = run(dir.path(), &["eval", "--report", "r.json", "--checkpoint", "/nonexistent/x.ckpt"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sample_writes_one_dmg1_motion_and_honours_seed() {
    let ws = workspace();
    let a = ws.join("a.dmg1");
    let b = ws.join("b.dmg1");
    let c = ws.join("c.dmg1");
    ok(ws, &["sample", "--texts", "straight,wave_left", "--seed", "1", "--output", a.to_str().unwrap()]);
    ok(ws, &["sample", "--texts", "wave_left,straight", "--seed", "1", "--output", b.to_str().unwrap()]);
    ok(ws, &["sample", "--texts", "straight,wave_left", "--seed", "2", "--output", c.to_str().unwrap()]);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(&bytes[..4], b"DMG1");
    let header: Vec<u32> = bytes[4..16].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(header, [1, 64, 6]);
    assert_eq!(bytes.len(), 16 + 64 * 6 * 4);
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_ne!(bytes, std::fs::read(&c).unwrap());
}

#[test]
fn decompose_and_recombine_counts() {
    let ws = workspace();
    let d = ws.join("dec.dmg1");
    ok(ws, &["decompose", "--texts", "circle,raise_both", "--output", d.to_str().unwrap()]);
    assert_eq!(read_motions(&d).unwrap().len(), 2);
    let r = ws.join("rec.dmg1");
    let out = ok(
        ws,
        &["recombine", "--concept1", "zigzag", "--concept2", "wave_left", "--n", "3", "--output", r.to_str().unwrap()],
    );
    assert_eq!(read_motions(&r).unwrap().len(), 3);
    assert_eq!(out.lines().filter(|l| l.contains("oracle")).count(), 3);
}

#[test]
fn export_writes_csv_and_svg() {
    let ws = workspace();
    let m = ws.join("exp.dmg1");
    ok(ws, &["sample", "--texts", "circle,idle", "--n", "2", "--output", m.to_str().unwrap()]);
    let dir = ws.join("figs");
    ok(ws, &["export", "--input", m.to_str().unwrap(), "--svg", "--dir", dir.to_str().unwrap()]);
    for i in 0..2 {
        let csv = std::fs::read_to_string(dir.join(format!("exp-{i}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 65);
        assert!(csv.starts_with("frame,root_x,root_y,left_0,left_1,right_0,right_1"));
        let svg = std::fs::read_to_string(dir.join(format!("exp-{i}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 5);
    }
}

#[test]
fn eval_writes_finite_report_and_table() {
    let ws = workspace();
    let cfg = write_config(ws);
    let report = ws.join("reports").join("exp.json");
    let stdout = ok(ws, &["--config", cfg.to_str().unwrap(), "eval", "--report", report.to_str().unwrap()]);
    let r = MetricReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r.is_finite());
    assert!((0.0..=1.0).contains(&r.r_precision.top1));
    assert_eq!(r.fid.count, 600);
    assert_eq!(r.mmodality.count, 20);
    assert_eq!(r.decomposition_accuracy.count, 4);
    let table = std::fs::read_to_string(report.with_extension("txt")).unwrap();
    assert_eq!(stdout, table);
    assert!(table.lines().any(|l| l.starts_with("fid")));
}

#[test]
fn inputs_are_not_modified() {
    let ws = workspace();
    let before = std::fs::read(ws.join("vae.ckpt")).unwrap();
    let data_before = std::fs::read(ws.join("data").join(MANIFEST_FILE)).unwrap();
    ok(ws, &["sample", "--texts", "stop,idle", "--output", ws.join("s.dmg1").to_str().unwrap()]);
    assert_eq!(before, std::fs::read(ws.join("vae.ckpt")).unwrap());
    assert_eq!(data_before, std::fs::read(ws.join("data").join(MANIFEST_FILE)).unwrap());
}

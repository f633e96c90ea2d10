use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use voxelcodec::geometry::ply::{read_ply, write_ply};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voxelcodec"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn torus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/torus.ply")
}

fn train_args<'a>(blocks: &'a str, out: &'a str, side: &'a str) -> Vec<&'a str> {
    vec![
        "train", blocks, out, "--block-size", side, "--epochs", "1", "--lr", "0.01", "--batch", "8",
        "--seed", "3", "--preset", "desk", "--filters", "2",
    ]
}

struct Fixture {
    _dir: tempfile::TempDir,
    m8: PathBuf,
    m16: PathBuf,
    cloud: PathBuf,
}

/// Tiny 8 and 16 models and a voxelized plane cloud, shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut models = Vec::new();
        for side in ["8", "16"] {
            let blocks = dir.path().join(format!("blocks{side}"));
            ok(&["synth", s(&blocks), "--shape", "tilted-plane", "--block-size", side, "--count", "24", "--seed", "1"]);
            let m = dir.path().join(format!("m{side}.vxdw"));
            ok(&train_args(s(&blocks), s(&m), side));
            models.push(m);
        }
        let cloud = dir.path().join("plane.ply");
        let pts: Vec<[f64; 3]> = (0..100)
            .flat_map(|x| (0..70).map(move |y| [x as f64, y as f64, ((x + 2 * y) / 5) as f64 + 10.0]))
            .collect();
        write_ply(&cloud, &pts).unwrap();
        Fixture {
            m8: models[0].clone(),
            m16: models[1].clone(),
            cloud,
            _dir: dir,
        }
    })
}

fn model_flags(f: &Fixture) -> Vec<String> {
    vec![
        "--model".into(),
        format!("8={}", f.m8.display()),
        "--model".into(),
        format!("16={}", f.m16.display()),
    ]
}

fn with_models<'a>(args: &[&'a str], flags: &'a [String]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(flags.iter().map(String::as_str));
    v
}

#[test]
fn voxelize_is_bounded_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let once = dir.path().join("once.ply");
    let twice = dir.path().join("twice.ply");
    ok(&["voxelize", s(&torus()), s(&once), "--depth", "7"]);
    ok(&["voxelize", s(&once), s(&twice), "--depth", "7"]);
    let pts = read_ply(&once).unwrap().points;
    assert!(!pts.is_empty());
    for p in &pts {
        assert!(p.iter().all(|&c| (0.0..128.0).contains(&c) && c.fract() == 0.0));
    }
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());
}

#[test]
fn training_is_deterministic() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let blocks = dir.path().join("b");
    ok(&["synth", s(&blocks), "--shape", "tilted-plane", "--block-size", "8", "--count", "24", "--seed", "1"]);
    let again = dir.path().join("again.vxdw");
    ok(&train_args(s(&blocks), s(&again), "8"));
    assert_eq!(fs::read(&f.m8).unwrap(), fs::read(&again).unwrap());
    let meta = fs::read_to_string(dir.path().join("again.vxdw.meta")).unwrap();
    assert!(meta.contains("dataset_digest = ") && meta.contains("epoch.0 = "));
}

#[test]
fn train_rejects_missing_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&train_args(s(&dir.path().join("nope")), s(&dir.path().join("m.vxdw")), "8"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn encode_decode_round_trip() {
    let f = fixture();
    let flags = model_flags(f);
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("c.vxpc");
    let dec = dir.path().join("d.ply");
    let report = ok(&with_models(&["encode", s(&f.cloud), s(&bin), "--max-lv", "4"], &flags));
    assert!(report.contains("bpov"));
    ok(&with_models(&["decode", s(&bin), s(&dec)], &flags));
    let mut a = read_ply(&f.cloud).unwrap().points;
    let mut b = read_ply(&dec).unwrap().points;
    let key = |p: &[f64; 3]| p.map(|c| c as u32);
    a.sort_by_key(key);
    b.sort_by_key(key);
    assert_eq!(a, b);
}

#[test]
fn deeper_partitioning_never_costs_more() {
    let f = fixture();
    let flags = model_flags(f);
    let dir = tempfile::tempdir().unwrap();
    let mut sizes = Vec::new();
    for lv in ["3", "4", "5"] {
        let out = dir.path().join(format!("{lv}.vxpc"));
        ok(&with_models(&["encode", s(&f.cloud), s(&out), "--max-lv", lv, "--extension", "false"], &flags));
        sizes.push(fs::metadata(&out).unwrap().len());
    }
    assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
}

#[test]
fn decode_with_wrong_weights_fails() {
    let f = fixture();
    let flags = model_flags(f);
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("c.vxpc");
    ok(&with_models(&["encode", s(&f.cloud), s(&bin), "--max-lv", "4"], &flags));

    let blocks = dir.path().join("b");
    ok(&["synth", s(&blocks), "--block-size", "16", "--count", "4", "--seed", "9"]);
    let other = dir.path().join("other.vxdw");
    let mut args = train_args(s(&blocks), s(&other), "16");
    *args.last_mut().unwrap() = "3";
    ok(&args);
    let m8 = format!("8={}", f.m8.display());
    let m16 = format!("16={}", other.display());
    let out = run(&["decode", s(&bin), s(&dir.path().join("d.ply")), "--model", &m8, "--model", &m16]);
    assert!(!out.status.success());
}

#[test]
fn eval_writes_csv_with_average() {
    let f = fixture();
    let flags = model_flags(f);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let cfg = dir.path().join("codec.cfg");
    fs::write(&cfg, "max_lv = 4\nextension = true\n").unwrap();
    ok(&with_models(&["eval", s(&f.cloud), "--config", s(&cfg), "--verify", "--csv", s(&csv)], &flags));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "cloud,voxels,bytes,bpov,side_info_percent,lossless");
    let row: Vec<&str> = lines[1].split(',').collect();
    let avg: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(row[0], "plane.ply");
    assert_eq!(avg[0], "average");
    assert_eq!(row[5], "true");
    for k in 1..5 {
        let a: f64 = row[k].parse().unwrap();
        let b: f64 = avg[k].parse().unwrap();
        assert!((a - b).abs() < 1e-12);
    }
    let bpov: f64 = row[3].parse().unwrap();
    let expect = 8.0 * row[2].parse::<f64>().unwrap() / row[1].parse::<f64>().unwrap();
    assert!((bpov - expect).abs() < 1e-9);
}

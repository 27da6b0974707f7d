use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn idxmvs(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idxmvs"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = idxmvs(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SMALL: [&str; 12] = [
    "--set",
    "feature_channels=8",
    "--set",
    "fusion_channels=16",
    "--set",
    "attention_heads=2",
    "--set",
    "hidden_channels=8",
    "--set",
    "iterations_train=4",
    "--set",
    "iterations_infer=6",
];

fn train(cwd: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["train", "--data", "scene", "--out", out];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    ok(&args, cwd);
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn synth_is_deterministic_and_writes_the_requested_depth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--planes", "1", "--depth", "2.0", "--frames", "5", "--out", "a", "--seed", "3"], d);
    ok(&["synth", "--planes", "1", "--depth", "2.0", "--frames", "5", "--out", "b", "--seed", "3"], d);
    assert_eq!(files(&d.join("a/frames")).len(), 5);
    for sub in ["frames", "depth", "poses"] {
        for f in files(&d.join("a").join(sub)) {
            assert_eq!(fs::read(d.join("a").join(sub).join(&f)).unwrap(), fs::read(d.join("b").join(sub).join(&f)).unwrap());
        }
    }
    let depth = idxmvs_core::data::read_depth_png(&d.join("a/depth/000000.png")).unwrap();
    assert!(depth.data().iter().all(|&v| v == 2.0));
}

#[test]
fn synth_rejects_out_of_range_depth() {
    let dir = tempfile::tempdir().unwrap();
    for depth in ["25", "0.1"] {
        let out = idxmvs(&["synth", "--depth", depth, "--out", "x"], dir.path());
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("--depth"));
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(idxmvs(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(idxmvs(&["train", "--set", "no_such_key=1", "--data", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(idxmvs(&["train", "--variant", "huge"], dir.path()).status.code(), Some(1));
    assert_eq!(idxmvs(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = idxmvs(&["train", "--data", "nowhere", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_steps_writes_only_an_initialization_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "scene", "--frames", "3", "--seed", "1"], d);
    train(d, "run", &["--steps", "0", "--seed", "5"]);
    assert_eq!(files(&d.join("run")), ["checkpoint.bin", "checkpoint.cfg", "train.log"]);
    let log = fs::read_to_string(d.join("run/train.log")).unwrap();
    assert!(log.lines().all(|l| l.starts_with('#')), "{log}");
    assert!(log.contains("# seed = 5"));

    let model = idxmvs_core::Model::new(idxmvs_core::ModelConfig {
        feature_channels: 8,
        fusion_channels: 16,
        attention_heads: 2,
        hidden_channels: 8,
        ..Default::default()
    })
    .unwrap();
    let fresh = model.init_params(5);
    let mut loaded = model.init_params(0);
    idxmvs_core::checkpoint::load_params(&d.join("run/checkpoint.bin"), &mut loaded).unwrap();
    for (name, e) in fresh.iter() {
        assert_eq!(loaded.get(name).unwrap(), &e.value.map(|v| v as f32 as f64), "{name}");
    }
}

#[test]
fn config_file_is_overridden_by_flags_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "scene", "--frames", "3"], d);
    fs::write(d.join("run.cfg"), "# training\nlearning_rate = 0.5\nseed = 1\n").unwrap();
    let out = {
        let mut args = vec!["train", "--config", "run.cfg", "--data", "scene", "--out", "run", "--steps", "0", "--seed", "2"];
        args.extend_from_slice(&SMALL);
        ok(&args, d)
    };
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rate = 0.5"), "{stderr}");
    assert!(stderr.contains("seed = 2"), "{stderr}");
    fs::write(d.join("bad.cfg"), "learning_rat = 0.5\n").unwrap();
    let out = idxmvs(&["train", "--config", "bad.cfg", "--data", "scene"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn inference_outputs_and_attention_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "scene", "--frames", "3", "--depth", "1.5", "--seed", "2"], d);
    train(d, "run", &["--steps", "2"]);
    assert_eq!(fs::read_to_string(d.join("run/train.log")).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 3);

    ok(&["infer", "--checkpoint", "run/checkpoint.bin", "--data", "scene", "--out", "a", "--emit-iters", "--preview"], d);
    assert_eq!(files(&d.join("a")), ["iters", "scene_000001.pfm", "scene_000001.png"]);
    assert_eq!(files(&d.join("a/iters")).len(), 6);
    let final_map = fs::read(d.join("a/scene_000001.pfm")).unwrap();
    assert_eq!(final_map, fs::read(d.join("a/iters/scene_000001_t06.pfm")).unwrap());

    // the attention gate starts at zero and two steps keep it tiny but nonzero,
    // so compare against an untrained checkpoint instead
    train(d, "init", &["--steps", "0"]);
    ok(&["infer", "--checkpoint", "init/checkpoint.bin", "--data", "scene", "--out", "b"], d);
    ok(&["infer", "--checkpoint", "init/checkpoint.bin", "--data", "scene", "--out", "c", "--ablate-atten"], d);
    assert_eq!(fs::read(d.join("b/scene_000001.pfm")).unwrap(), fs::read(d.join("c/scene_000001.pfm")).unwrap());

    ok(&["infer", "--checkpoint", "init/checkpoint.bin", "--data", "scene", "--out", "e", "--iterations", "3"], d);
    let depth = idxmvs_core::data::read_pfm(&d.join("e/scene_000001.pfm")).unwrap();
    assert_eq!(depth.shape(), [32, 32]);
    assert!(depth.data().iter().all(|v| v.is_finite() && *v > 0.0));

    let out = idxmvs(&["infer", "--checkpoint", "missing.bin", "--data", "scene", "--out", "f"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn default_inference_runs_twenty_four_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "scene", "--frames", "3"], d);
    let mut args = vec!["train", "--data", "scene", "--out", "run", "--steps", "0", "--variant", "base"];
    args.extend_from_slice(&SMALL[..8]);
    ok(&args, d);
    ok(&["infer", "--checkpoint", "run/checkpoint.bin", "--data", "scene", "--out", "p", "--emit-iters"], d);
    assert_eq!(files(&d.join("p/iters")).len(), 24);
}

#[test]
fn eval_of_identical_maps_and_hand_case() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in ["pred", "gt"] {
        fs::create_dir(d.join(sub)).unwrap();
    }
    let gt = idxmvs_core::Tensor::from_fn(&[4, 4], |i| 1.0 + 0.25 * i as f64);
    idxmvs_core::data::write_pfm(&d.join("pred/a.pfm"), &gt).unwrap();
    idxmvs_core::data::write_pfm(&d.join("gt/a.pfm"), &gt).unwrap();
    let one = |v| idxmvs_core::Tensor::full(&[1, 1], v);
    idxmvs_core::data::write_pfm(&d.join("pred/b.pfm"), &one(2.0)).unwrap();
    idxmvs_core::data::write_pfm(&d.join("gt/b.pfm"), &one(1.0)).unwrap();
    let out = ok(&["eval", "--pred", "pred", "--gt", "gt"], d);
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], idxmvs_core::metrics::CSV_HEADER);
    assert_eq!(rows[1], "a,0,0,0,0,0,1,1,1,16");
    let b: Vec<f64> = rows[2].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    for (got, want) in b.iter().zip([1.0, 1.0, 1.0, 1.0, 2f64.ln(), 0.0, 0.0, 0.0, 1.0]) {
        assert!((got - want).abs() < 1e-6, "{rows:?}");
    }
    assert!(rows[3].starts_with("mean,"));

    ok(&["eval", "--pred", "pred", "--gt", "gt", "--out", "m.csv"], d);
    assert_eq!(fs::read_to_string(d.join("m.csv")).unwrap(), csv);

    fs::remove_file(d.join("gt/b.pfm")).unwrap();
    idxmvs_core::data::write_pfm(&d.join("gt/c.pfm"), &one(1.0)).unwrap();
    let out = idxmvs(&["eval", "--pred", "pred", "--gt", "gt"], d);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("\"b\"") && msg.contains("\"c\""), "{msg}");
}

#[test]
fn gradcheck_reports_every_operation() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    for check in idxmvs_core::gradsuite::suite() {
        assert!(text.lines().any(|l| l.starts_with(check.name) && l.ends_with("ok")), "{}", check.name);
    }
    assert!(text.contains("0 failed"));

    let out = idxmvs(&["gradcheck", "--inject-broken"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("broken_square_fixture") && l.ends_with("FAIL")));
}

#[test]
fn training_with_the_same_seed_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "scene", "--frames", "4", "--seed", "4"], d);
    train(d, "a", &["--steps", "3", "--seed", "11"]);
    train(d, "b", &["--steps", "3", "--seed", "11"]);
    train(d, "c", &["--steps", "3", "--seed", "12"]);
    let bytes = |run: &str| fs::read(d.join(run).join("checkpoint.bin")).unwrap();
    assert_eq!(bytes("a"), bytes("b"));
    assert_ne!(bytes("a"), bytes("c"));
    let body = |run: &str| {
        let log = fs::read_to_string(d.join(run).join("train.log")).unwrap();
        // the trailing column is wall-clock time
        log.lines().filter(|l| !l.starts_with('#')).map(|l| l.rsplit_once(' ').unwrap().0.to_string()).collect::<Vec<_>>()
    };
    assert_eq!(body("a"), body("b"));
}

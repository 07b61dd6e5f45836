use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dualtrace::backbone::BackboneConfig;
use dualtrace::engine::{DataConfig, OptimizerConfig, RunConfig};
use dualtrace::model::ModelConfig;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualtrace")).args(args).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn tiny_run(root: &Path) -> RunConfig {
    let bb = BackboneConfig { stage_dims: [8, 12, 16, 20], stage_depths: [1, 1, 1, 1], ..Default::default() };
    RunConfig {
        out_dir: root.join("run"),
        batch_size: 2,
        epochs: 1,
        data: DataConfig { manifest: root.join("data/manifest.jsonl"), input_size: 32, ..Default::default() },
        model: ModelConfig {
            rgb_backbone: bb.clone(),
            noise_backbone: BackboneConfig { in_channels: 6, ..bb },
            decoder_dims: [16, 12, 8],
            ..Default::default()
        },
        optimizer: OptimizerConfig { lr0: 1e-3, ..Default::default() },
        ..Default::default()
    }
}

fn synth(root: &Path) {
    let cfg = root.join("synth.toml");
    fs::write(&cfg, "image_size = 32\n[counts]\nsplice = 4\ncopy_move = 2\nremoval = 2\nauthentic = 0\n").unwrap();
    let out = bin(&["synth", "--config", cfg.to_str().unwrap(), "--out", root.join("data").to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("manifest"));
}

#[test]
fn synth_train_eval_predict_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth(root);

    let cfg_path = root.join("run.toml");
    fs::write(&cfg_path, tiny_run(root).to_toml()).unwrap();
    let out = bin(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let ckpt = root.join("run/final.ckpt");
    assert!(ckpt.exists());
    assert!(root.join("run/train_log.jsonl").exists());

    let json = root.join("metrics.json");
    let out = bin(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--manifest",
        root.join("data/manifest.jsonl").to_str().unwrap(),
        "--input-size",
        "32",
        "--threshold",
        "0.3",
        "--threshold",
        "0.5",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert!(text(&out.stdout).contains("pooled"));

    let image = fs::read_dir(root.join("data/images")).unwrap().next().unwrap().unwrap().path();
    let mask = root.join("pred.png");
    let out = bin(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        mask.to_str().unwrap(),
        "--input-size",
        "32",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let m = image::open(&mask).unwrap().to_luma8();
    assert_eq!(m.dimensions(), (32, 32));
    assert!(m.pixels().all(|p| p[0] == 0 || p[0] == 255));

    let out = bin(&["inspect-filters", "--ckpt", ckpt.to_str().unwrap()]);
    assert!(out.status.success());
    let s = text(&out.stdout);
    assert!(s.contains("bayar[0][0]") && s.contains("kv_5x5") && s.contains("gx"));
}

#[test]
fn synth_is_reproducible_from_the_cli() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path());
    synth(b.path());
    let read = |d: &Path| fs::read(d.join("data/manifest.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    for entry in fs::read_dir(a.path().join("data/images")).unwrap() {
        let p = entry.unwrap().path();
        let twin = b.path().join("data/images").join(p.file_name().unwrap());
        assert_eq!(fs::read(&p).unwrap(), fs::read(twin).unwrap());
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "batch_size = 0\n").unwrap();
    let out = bin(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    fs::write(&cfg, "not_a_field = 1\n").unwrap();
    assert_eq!(bin(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut cfg = tiny_run(dir.path());
    // drop one image the manifest still lists
    let victim = fs::read_dir(dir.path().join("data/images")).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(&victim).unwrap();
    cfg.out_dir = dir.path().join("run2");
    let p = dir.path().join("run.toml");
    fs::write(&p, cfg.to_toml()).unwrap();
    let out = bin(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(text(&out.stderr).starts_with("error:"));
}

#[test]
fn bad_threshold_is_rejected_before_loading() {
    let out = bin(&["eval", "--ckpt", "nowhere.ckpt", "--manifest", "nowhere.jsonl", "--threshold", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_reported() {
    let out = bin(&["inspect-filters", "--ckpt", "/nonexistent/x.ckpt"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("x.ckpt"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let run = RunConfig::load(&root.join("desk.toml")).unwrap();
    assert_eq!((run.batch_size, run.epochs, run.seed), (4, 30, 42));
    assert_eq!(run.model.rgb_backbone.stage_dims, [16, 32, 64, 128]);
    let text = fs::read_to_string(root.join("synth42.toml")).unwrap();
    let synth: dualtrace::data::SynthConfig = toml::from_str(&text).unwrap();
    assert_eq!(synth, dualtrace::data::SynthConfig::default());
}

use std::path::Path;
use std::process::{Command, Output};

use aoi_cli::config::{resolve, Overrides, Preset};

fn aoi(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi")).args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"{"synth": {"count": 12}, "augment": {"patches": 1, "count": 2, "max_attempts": 4},
 "gan": {"steps_per_stage": 4}, "detector": {"steps": 6, "log_every": 3}}"#;

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"detector": {"stepz": 3}}"#).unwrap();
    let o = aoi(dir.path(), &["synth", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));

    std::fs::write(&p, r#"{"eval": {"split": [0.5, 0.2, 0.2]}}"#).unwrap();
    assert_eq!(code(&aoi(dir.path(), &["synth", "--config", p.to_str().unwrap()])), 2);
    std::fs::write(&p, "[1, 2]").unwrap();
    assert_eq!(code(&aoi(dir.path(), &["synth", "--config", p.to_str().unwrap()])), 2);
    assert_eq!(code(&aoi(dir.path(), &["synth", "--config", "/nonexistent/cfg.json"])), 2);
}

#[test]
fn stages_out_of_order_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(dir.path(), &["evaluate"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("aoi train-detector"), "{}", stderr(&o));
    let o = aoi(dir.path(), &["augment"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("aoi synth"), "{}", stderr(&o));
    assert_eq!(code(&aoi(dir.path(), &["train-detector"])), 3);
    assert_eq!(code(&aoi(dir.path(), &["generate", "--model", dir.path().join("gan").to_str().unwrap()])), 3);
}

#[test]
fn diverging_gan_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = aoi(dir.path(), &["synth", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let input = dir.path().join("data").join("img_00000.png");
    assert!(input.exists());
    let o = aoi(dir.path(), &["train-gan", "--config", &cfg, "--input", input.to_str().unwrap(), "--alpha", "1.7e308"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn staged_commands_build_the_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for cmd in ["synth", "train-detector", "augment", "train-detector", "evaluate"] {
        let o = aoi(dir.path(), &[cmd, "--config", &cfg]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    let out = dir.path();
    for f in [
        "data/manifest.json",
        "data/train.json",
        "augment/manifest.json",
        "augment/augment_log.json",
        "detector/baseline/detector.ndg",
        "detector/augmented/train_log.json",
        "eval/report.json",
        "eval/report.md",
        "eval/timing.json",
        "eval/predictions_baseline.jsonl",
        "eval/predictions_augmented.jsonl",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("eval/report.json")).unwrap()).unwrap();
    let models: Vec<&str> = report.as_array().unwrap().iter().map(|r| r["model"].as_str().unwrap()).collect();
    assert_eq!(models, ["Detector (original data)", "Detector (augmented data)"]);
    assert!(report[0]["detection_time_ms"].is_null());
    let md = std::fs::read_to_string(out.join("eval/report.md")).unwrap();
    assert!(md.contains("Detector (augmented data)"));
}

#[test]
fn paper_preset_reaches_735_images() {
    let cfg = resolve(None, &Overrides { preset: Some(Preset::Paper), ..Default::default() }).unwrap();
    assert_eq!(cfg.augment.patches, 0, "every image is a GAN source");
    let total = cfg.synth.count + cfg.synth.count * cfg.augment.count;
    assert_eq!(total, 735);
    assert_eq!(cfg.split_spec().sizes(total).unwrap(), (588, 73, 74));
}

#[test]
fn seeds_follow_the_top_level_seed() {
    let a = resolve(None, &Overrides { seed: Some(1), ..Default::default() }).unwrap();
    let b = resolve(Some(r#"{"seed": 1}"#), &Overrides::default()).unwrap();
    let c = resolve(None, &Overrides { seed: Some(2), ..Default::default() }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.gan.seed, c.gan.seed);
    assert_ne!(a.detector.seed, c.detector.seed);
    assert_ne!(a.synth.params.seed, c.synth.params.seed);
}

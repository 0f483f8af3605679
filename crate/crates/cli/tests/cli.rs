use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nhvc_core::config::RunConfig;
use nhvc_core::dsp::{load_wav, write_wav, AudioClip};
use nhvc_core::losses::kl_anneal_weight;
use nhvc_core::training::LossReport;

fn nhvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhvc"))
        .args(args)
        .env_remove("NHVC_CACHE")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "status {:?}\nstdout {stdout}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("config hash "), "{stdout}");
    stdout
}

fn tone(path: &Path, seconds: f64, f0: f64) -> AudioClip {
    let n = (seconds * 44_100.0) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / 44_100.0;
            let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * 2.0 * t).cos();
            (0.5 * env * (2.0 * std::f64::consts::PI * f0 * t).sin()) as f32
        })
        .collect();
    let clip = AudioClip::new(samples, 44_100).unwrap();
    write_wav(path, &clip).unwrap();
    clip
}

struct Project {
    dir: tempfile::TempDir,
}

impl Project {
    fn new(cfg: &RunConfig) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), cfg.to_toml().unwrap()).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

fn desk_config() -> RunConfig {
    let mut cfg = RunConfig::tiny();
    cfg.train.batch_size = 1;
    cfg.train.segment_frames = 8;
    cfg.train.t_anneal = 5;
    cfg.train.checkpoint_every = 3;
    cfg.train.log_every = 2;
    cfg
}

fn preprocessed() -> (Project, Vec<AudioClip>) {
    let p = Project::new(&desk_config());
    let clips = vec![
        tone(&p.path("a.wav"), 0.3, 150.0),
        tone(&p.path("b.wav"), 0.5, 300.0),
        tone(&p.path("c.wav"), 0.2, 600.0),
    ];
    std::fs::write(
        p.path("manifest.ndjson"),
        "{\"path\":\"a.wav\",\"category\":\"exclamation\",\"duration_s\":0.3}\n\
         {\"path\":\"b.wav\",\"category\":\"designed\",\"duration_s\":0.5}\n\
         {\"path\":\"c.wav\",\"category\":\"animal\",\"duration_s\":0.2}\n",
    )
    .unwrap();
    let out = ok(&nhvc(&["preprocess", "--manifest", &p.s("manifest.ndjson"), "-c", &p.s("run.toml"), "--out-dir", &p.s("cache")]));
    assert!(out.contains("computed 3 skipped 0 failed 0"), "{out}");
    (p, clips)
}

#[test]
fn print_config_round_trips() {
    let out = nhvc(&["print-config", "--tiny"]);
    assert!(out.status.success());
    let cfg = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::tiny());
}

#[test]
fn preprocess_is_idempotent_and_hash_sensitive() {
    let (p, clips) = preprocessed();
    let cache = nhvc_core::cache::FeatureCache::new(p.path("cache"), desk_config().feature_hash().unwrap());
    let mut frames: Vec<usize> = cache.load_all().unwrap().iter().map(|f| f.n_frames()).collect();
    let mut expected: Vec<usize> = clips.iter().map(|c| 1 + c.len() / 220).collect();
    frames.sort();
    expected.sort();
    assert_eq!(frames, expected);

    let again = ok(&nhvc(&["preprocess", "--manifest", &p.s("manifest.ndjson"), "-c", &p.s("run.toml"), "--out-dir", &p.s("cache")]));
    assert!(again.contains("computed 0 skipped 3"), "{again}");

    let mut changed = desk_config();
    changed.perturb.seed = 42;
    std::fs::write(p.path("run2.toml"), changed.to_toml().unwrap()).unwrap();
    let redo = ok(&nhvc(&["preprocess", "--manifest", &p.s("manifest.ndjson"), "-c", &p.s("run2.toml"), "--out-dir", &p.s("cache")]));
    assert!(redo.contains("computed 3 skipped 0"), "{redo}");
}

#[test]
fn unreadable_item_is_skipped() {
    let p = Project::new(&desk_config());
    tone(&p.path("a.wav"), 0.2, 200.0);
    std::fs::write(p.path("bad.wav"), b"RIFF nonsense").unwrap();
    std::fs::write(
        p.path("m.ndjson"),
        "{\"path\":\"a.wav\",\"category\":\"animal\",\"duration_s\":0.2}\n{\"path\":\"bad.wav\",\"category\":\"animal\",\"duration_s\":1}\n",
    )
    .unwrap();
    let out = ok(&nhvc(&["preprocess", "--manifest", &p.s("m.ndjson"), "-c", &p.s("run.toml"), "--out-dir", &p.s("cache")]));
    assert!(out.contains("computed 1 skipped 0 failed 1"), "{out}");
}

#[test]
fn exit_codes() {
    let p = Project::new(&desk_config());
    std::fs::write(p.path("bad.toml"), "[train]\nbatchsize = 3\n").unwrap();
    assert_eq!(nhvc(&["plot", "--audio", "x.wav", "-o", "x.png", "-c", &p.s("bad.toml")]).status.code(), Some(2));

    tone(&p.path("a.wav"), 0.2, 200.0);
    std::fs::write(
        p.path("labelled.ndjson"),
        "{\"path\":\"a.wav\",\"category\":\"animal\",\"duration_s\":0.2,\"speaker_id\":\"s1\"}\n",
    )
    .unwrap();
    let out = nhvc(&["preprocess", "--manifest", &p.s("labelled.ndjson"), "-c", &p.s("run.toml"), "--out-dir", &p.s("cache")]);
    assert_eq!(out.status.code(), Some(3));

    let out = nhvc(&[
        "convert", "--checkpoint", &p.s("missing.ckpt"), "--source", &p.s("a.wav"), "--reference", &p.s("a.wav"), "-o", &p.s("y.wav"),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

fn read_log(path: &Path) -> Vec<LossReport> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_resume_and_convert() {
    let (p, clips) = preprocessed();
    let common = [
        "-c".to_string(),
        p.s("run.toml"),
        "--cache".into(),
        p.s("cache"),
        "--checkpoint-dir".into(),
        p.s("ckpt"),
        "--metrics".into(),
        p.s("metrics.ndjson"),
    ];
    let args = |extra: &[&str]| {
        let mut v: Vec<&str> = vec!["train"];
        v.extend(common.iter().map(String::as_str));
        v.extend(extra);
        nhvc(&v)
    };
    let out = ok(&args(&["--max-steps", "4"]));
    assert!(out.contains("finished at step 4"), "{out}");
    assert!(p.path("ckpt/step-00000003.ckpt").is_file());
    assert!(p.path("ckpt/step-00000004.ckpt").is_file());
    let log = read_log(&p.path("metrics.ndjson"));
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 2]);

    let out = ok(&args(&["--max-steps", "7", "--resume-latest"]));
    assert!(out.contains("finished at step 7"), "{out}");
    let log = read_log(&p.path("metrics.ndjson"));
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 2, 4, 6]);
    for r in &log {
        assert!((r.lambda_kl - kl_anneal_weight(r.step, 5)).abs() < 1e-12);
    }
    assert!(log[2].lambda_kl > 0.5);

    let ckpt = p.s("ckpt/step-00000007.ckpt");
    let convert = |out: &str, seed: &str| {
        ok(&nhvc(&[
            "convert", "--checkpoint", &ckpt, "--source", &p.s("a.wav"), "--reference", &p.s("b.wav"), "-o", &p.s(out),
            "--temperature", "0", "--seed", seed,
        ]))
    };
    convert("y1.wav", "1");
    convert("y2.wav", "2");
    assert_eq!(std::fs::read(p.path("y1.wav")).unwrap(), std::fs::read(p.path("y2.wav")).unwrap());
    let y = load_wav(p.path("y1.wav")).unwrap();
    assert_eq!(y.sample_rate(), 44_100);
    assert_eq!(y.len(), (1 + clips[0].len() / 220) * 220);
}

#[test]
fn evaluate_reports() {
    let p = Project::new(&desk_config());
    tone(&p.path("a.wav"), 0.4, 200.0);
    tone(&p.path("b.wav"), 0.4, 500.0);
    write_wav(p.path("flat.wav"), &AudioClip::silence(17_640, 44_100)).unwrap();
    std::fs::write(
        p.path("pairs.ndjson"),
        "{\"source\":\"a.wav\",\"converted\":\"a.wav\"}\n{\"source\":\"b.wav\",\"converted\":\"b.wav\",\"id\":\"bb\"}\n{\"source\":\"flat.wav\",\"converted\":\"a.wav\"}\n",
    )
    .unwrap();
    ok(&nhvc(&["evaluate", "--pairs", &p.s("pairs.ndjson"), "-o", &p.s("report.ndjson"), "-c", &p.s("run.toml")]));
    let text = std::fs::read_to_string(p.path("report.ndjson")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1]["id"], "bb");
    assert!(lines[2]["pcc_e"].is_null());
    let agg = &lines[3]["aggregate"];
    assert_eq!(agg["count"], 3);
    assert_eq!(agg["pcc_count"], 2);
    assert!((agg["mean_pcc_e"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(agg["config_hash"], desk_config().hash().unwrap());

    std::fs::write(p.path("empty.ndjson"), "").unwrap();
    ok(&nhvc(&["evaluate", "--pairs", &p.s("empty.ndjson"), "-o", &p.s("e.ndjson"), "-c", &p.s("run.toml")]));
    let agg: serde_json::Value = serde_json::from_str(std::fs::read_to_string(p.path("e.ndjson")).unwrap().trim()).unwrap();
    assert_eq!(agg["aggregate"]["count"], 0);
    assert!(agg["aggregate"]["mean_pcc_e"].is_null());
}

#[test]
fn evaluate_with_failing_asr_degrades() {
    let p = Project::new(&desk_config());
    tone(&p.path("a.wav"), 0.3, 200.0);
    std::fs::write(p.path("pairs.ndjson"), "{\"source\":\"a.wav\",\"converted\":\"a.wav\",\"linguistic\":true}\n").unwrap();
    ok(&nhvc(&[
        "evaluate", "--pairs", &p.s("pairs.ndjson"), "-o", &p.s("r.ndjson"), "-c", &p.s("run.toml"), "--asr-endpoint", "false",
    ]));
    let text = std::fs::read_to_string(p.path("r.ndjson")).unwrap();
    let agg: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(agg["aggregate"]["asr_error"].is_string());
    assert_eq!(agg["aggregate"]["mean_rmse_e"], 0.0);

    ok(&nhvc(&[
        "evaluate", "--pairs", &p.s("pairs.ndjson"), "-o", &p.s("r2.ndjson"), "-c", &p.s("run.toml"), "--asr-endpoint", "true",
    ]));
    let text = std::fs::read_to_string(p.path("r2.ndjson")).unwrap();
    let agg: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(agg["aggregate"]["asr_count"], 1);
    assert_eq!(agg["aggregate"]["mean_cer"], 0.0);
}

#[test]
fn plot_geometry() {
    let p = Project::new(&RunConfig::default());
    tone(&p.path("six.wav"), 6.0, 220.0);
    let out = ok(&nhvc(&["plot", "--audio", &p.s("six.wav"), "-o", &p.s("six.png")]));
    assert!(out.contains("(1203x128)"), "{out}");
    let img = image::open(p.path("six.png")).unwrap().to_rgb8();
    let seconds = img.width() as f64 * 220.0 / 44_100.0;
    assert!((seconds - 6.0).abs() <= 220.0 / 44_100.0 + 1e-9);

    write_wav(p.path("silence.wav"), &AudioClip::silence(22_050, 44_100)).unwrap();
    ok(&nhvc(&["plot", "--audio", &p.s("silence.wav"), "-o", &p.s("silence.png"), "--max-freq", "4000"]));
    let img = image::open(p.path("silence.png")).unwrap().to_rgb8();
    let first = *img.get_pixel(0, 0);
    assert!(img.pixels().all(|px| *px == first));
}

//! Command-line behavior on a small, fast scenario.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
snr_db = 0.0
sample_rate = 8000
seed = 5
mixture_seconds = 4.0
calibration_seconds = 8.0
microphones = [
    [1.2, 1.1, 1.3], [2.6, 1.4, 1.6], [1.9, 3.6, 1.2],
    [3.1, 3.3, 1.5], [0.8, 2.7, 1.7], [2.2, 2.2, 1.1],
]
group_a = [0, 1, 2]
group_b = [3, 4, 5]

[room]
dimensions = [4.0, 5.0, 3.0]
t60 = 0.15

[[sources]]
kind = "speech"
position = [1.0, 4.0, 1.5]
signal = { seed = 1 }

[[sources]]
kind = "speech"
position = [3.2, 1.0, 1.4]
signal = { seed = 2 }

[[sources]]
kind = "noise"
position = [3.3, 4.3, 2.0]
signal = { seed = 3 }
"#;

fn retm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retm"))
        .args(args)
        .env("RETM_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = retm(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_separate_evaluate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let sim = dir.path().join("sim");
    ok(&["simulate", s(&scenario), "-o", s(&sim)]);
    let manifest = sim.join("manifest.json");
    assert!(manifest.exists());
    assert!(sim.join("calibration/noise_only.wav").exists());
    assert!(!sim.join(".retm.lock").exists());

    let sep = dir.path().join("sep");
    let args = [
        "separate",
        "--manifest",
        s(&manifest),
        "--method",
        "training",
        "--window-len",
        "2048",
        "--hop",
        "1024",
        "-o",
        s(&sep),
    ];
    ok(&args);
    for f in ["estimates/speaker_0.wav", "estimates/speaker_1.wav", "retm/speaker_0.retm", "covariance/noise_only.cov"] {
        assert!(sep.join(f).exists(), "{f} missing");
    }

    let report = dir.path().join("report.csv");
    ok(&["evaluate", "--manifest", s(&manifest), "--estimates", s(&sep), "-o", s(&report)]);
    let rows = retm::metrics::read_report(&report).unwrap();
    assert_eq!(rows.len(), 4);
    let mut improved = 0;
    for r in rows.iter().filter(|r| r.method == "training") {
        assert_eq!(r.scenario, "small");
        if r.sir_improvement_db > 5.0 {
            improved += 1;
        }
    }
    assert_eq!(improved, 2, "{rows:?}");

    // persisted calibration gives identical output without re-estimation
    let again = dir.path().join("again");
    let mut reuse = args.to_vec();
    let (sep_s, again_s) = (s(&sep).to_string(), s(&again).to_string());
    *reuse.last_mut().unwrap() = &again_s;
    reuse.extend(["--reuse-calibration", &sep_s]);
    ok(&reuse);
    assert!(!again.join("covariance").exists());
    for f in ["estimates/speaker_0.wav", "estimates/speaker_1.wav"] {
        assert_eq!(fs::read(sep.join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }

    // estimate of the wrong length
    let bad = dir.path().join("bad");
    fs::create_dir_all(bad.join("estimates")).unwrap();
    fs::copy(sep.join("separation.json"), bad.join("separation.json")).unwrap();
    for k in 0..2 {
        let short = retm::audio::AudioBuffer::mono(8000, vec![0.0; 100]).unwrap();
        retm::audio::write_wav(bad.join(format!("estimates/speaker_{k}.wav")), &short, Default::default()).unwrap();
    }
    let out = retm(&["evaluate", "--manifest", s(&manifest), "--estimates", s(&bad), "-o", s(&report)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("samples"));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "pipeline",
            "--scenario",
            s(&scenario),
            "--method",
            "training",
            "--method",
            "direct",
            "--window-len",
            "2048",
            "--hop",
            "1024",
            "-o",
            s(&out),
        ]);
        out
    };
    let a = run("a");
    let b = run("b");
    let report = fs::read(a.join("report.csv")).unwrap();
    assert_eq!(report, fs::read(b.join("report.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("training/estimates/speaker_1.wav")).unwrap(),
        fs::read(b.join("training/estimates/speaker_1.wav")).unwrap()
    );
    let rows = retm::metrics::read_report(a.join("report.csv")).unwrap();
    // unprocessed once per speaker, then each method
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().filter(|r| r.method == "unprocessed").count(), 2);
}

#[test]
fn snr_sweep_writes_five_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("mixture_seconds = 4.0", "mixture_seconds = 1.0")
        .replace("calibration_seconds = 8.0", "calibration_seconds = 1.0");
    let scenario = write_scenario(dir.path(), &text);
    let out = dir.path().join("sweep");
    ok(&["simulate", s(&scenario), "-o", s(&out), "--snr-sweep"]);
    let mut found = Vec::new();
    for snr in [0.0, -5.0, -10.0, -15.0, -20.0] {
        let m = retm::pipeline::Manifest::load(out.join(retm::pipeline::snr_dir_name(snr)).join("manifest.json")).unwrap();
        assert!((m.achieved_snr_db - snr).abs() < 0.1);
        found.push(m.snr_db);
    }
    assert_eq!(found.len(), 5);
}

#[test]
fn bad_scenarios_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let head = SMALL.split("[[sources]]").next().unwrap();
    let cases = [
        ("zero sources", head.replace("[room]", "sources = []\n[room]"), "no sources"),
        ("infeasible", SMALL.replace("t60 = 0.15", "t60 = 0.02"), "infeasible"),
        ("outside", SMALL.replace("[1.0, 4.0, 1.5]", "[1.0, 6.0, 1.5]"), "outside"),
    ];
    for (what, text, needle) in cases {
        let scenario = write_scenario(dir.path(), &text);
        let out = retm(&["simulate", s(&scenario), "-o", s(&dir.path().join("x"))]);
        assert_eq!(out.status.code(), Some(1), "{what}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{what}: {err}");
    }
}

#[test]
fn missing_segments_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = retm(&[
        "separate",
        "--method",
        "training",
        "--mixture",
        "m.wav",
        "--undesired",
        "u.wav",
        "--group-a",
        "0",
        "--group-b",
        "1,2",
        "-o",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise-only"));
}

#[test]
fn empty_estimate_set_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        dir.path(),
        &SMALL
            .replace("mixture_seconds = 4.0", "mixture_seconds = 1.0")
            .replace("calibration_seconds = 8.0", "calibration_seconds = 1.0"),
    );
    let sim = dir.path().join("sim");
    ok(&["simulate", s(&scenario), "-o", s(&sim)]);
    let est = dir.path().join("est");
    fs::create_dir_all(&est).unwrap();
    fs::write(
        est.join("separation.json"),
        r#"{"version":1,"settings":{"method":"training","window_len":2048,"hop":1024,"tolerance":null,"reconstruct":"reference"},"reused_calibration":false,"estimates":[]}"#,
    )
    .unwrap();
    let report = dir.path().join("r.csv");
    ok(&["evaluate", "--manifest", s(&sim.join("manifest.json")), "--estimates", s(&est), "-o", s(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("version,scenario,snr_db"));
}

#[test]
fn locked_output_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let out = dir.path().join("busy");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".retm.lock"), "1").unwrap();
    let r = retm(&["simulate", s(&scenario), "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("in use"));
}

#[test]
fn bundled_scenarios_render() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let mut sc = retm::roomsim::Scenario::load(&path).unwrap();
        sc.mixture_seconds = 0.5;
        sc.calibration_seconds = 0.5;
        let sim = retm::roomsim::Simulator::new(sc.clone()).unwrap();
        let r = sim.render_mixture().unwrap();
        assert_eq!(r.mixture.num_channels(), sc.microphones.len());
        names.push(sc.name);
    }
    names.sort();
    assert_eq!(names, ["desk", "large-room", "real-room-standin"]);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn umbra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umbra"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = umbra(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn asset(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(rel)
        .to_str()
        .unwrap()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Renders a trajectory and runs the geometric pipeline on it.
fn gen_and_process(dir: &Path, traj: &str, tag: &str) -> PathBuf {
    let stream = dir.join(format!("{tag}.eclt"));
    let scene = asset("default_scene.toml");
    ok(&[
        "gen",
        "--scene",
        &scene,
        "--trajectory",
        traj,
        "--out",
        s(&stream),
        "--seed",
        "7",
    ]);
    let out = dir.join(tag);
    ok(&[
        "process",
        "--in",
        s(&stream),
        "--scene",
        &scene,
        "--trajectory",
        traj,
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    out
}

fn events(out: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(out.join("events.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn tap_gives_an_event_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let traj = asset("trajectories/tap.json");
    let a = gen_and_process(dir.path(), &traj, "a");
    let ev = events(&a);
    assert!(!ev.is_empty());
    assert!(ev
        .iter()
        .all(|e| e["finger"] == 3 && e["down_frame"].as_u64().unwrap() >= 18));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["composites"], 72);
    assert_eq!(summary["estimator"], "geometric");
    assert!(summary["metrics"]["accuracy"].as_f64().unwrap() > 0.8);

    let b = gen_and_process(dir.path(), &traj, "b");
    assert_eq!(
        fs::read(dir.path().join("a.eclt")).unwrap(),
        fs::read(dir.path().join("b.eclt")).unwrap()
    );
    for f in ["events.jsonl", "summary.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn hovering_gives_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen_and_process(dir.path(), &asset("trajectories/hover.json"), "h");
    assert!(events(&out).is_empty());
}

#[test]
fn dumps_suppressed_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("short.json");
    let full: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(asset("trajectories/tap.json")).unwrap()).unwrap();
    let short = serde_json::json!({ "frames": full["frames"].as_array().unwrap()[..2] });
    fs::write(&traj, short.to_string()).unwrap();
    let stream = dir.path().join("s.eclt");
    ok(&[
        "gen",
        "--trajectory",
        s(&traj),
        "--out",
        s(&stream),
        "--truth",
        s(&dir.path().join("truth.json")),
    ]);
    let dumps = dir.path().join("dumps");
    ok(&[
        "process",
        "--in",
        s(&stream),
        "--trajectory",
        s(&traj),
        "--leds",
        "1,3",
        "--out",
        s(&dir.path().join("o")),
        "--dump-suppressed",
        s(&dumps),
    ]);
    let mut names: Vec<String> = fs::read_dir(&dumps)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "frame000000_led1.png",
            "frame000000_led3.png",
            "frame000001_led1.png",
            "frame000001_led3.png"
        ]
    );
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth.as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let traj = asset("trajectories/tap.json");
    let code = |args: &[&str]| umbra(args).status.code().unwrap();

    assert_eq!(code(&["process", "--bogus"]), 2);
    assert_eq!(
        code(&[
            "gen",
            "--trajectory",
            &traj,
            "--out",
            "x.eclt",
            "--seed",
            "nope"
        ]),
        2
    );
    // Missing input.
    let missing = dir.path().join("missing.eclt");
    let out = dir.path().join("o");
    assert_eq!(
        code(&[
            "process",
            "--in",
            s(&missing),
            "--trajectory",
            &traj,
            "--out",
            s(&out)
        ]),
        3
    );
    // Not a stream.
    let junk = dir.path().join("junk.eclt");
    fs::write(&junk, b"NOPE0000000000").unwrap();
    assert_eq!(
        code(&[
            "process",
            "--in",
            s(&junk),
            "--trajectory",
            &traj,
            "--out",
            s(&out)
        ]),
        4
    );
    // Learned estimator without a model.
    assert_eq!(
        code(&[
            "process",
            "--in",
            s(&junk),
            "--trajectory",
            &traj,
            "--out",
            s(&out),
            "--estimator",
            "learned"
        ]),
        2
    );
    // Stream resolution differs from the scene camera.
    let header_only = dir.path().join("empty.eclt");
    let mut bytes = b"ECLT".to_vec();
    bytes.extend(1u16.to_le_bytes());
    bytes.extend(320u16.to_le_bytes());
    bytes.extend(240u16.to_le_bytes());
    bytes.extend(0u32.to_le_bytes());
    fs::write(&header_only, &bytes).unwrap();
    assert_eq!(
        code(&[
            "process",
            "--in",
            s(&header_only),
            "--trajectory",
            &traj,
            "--out",
            s(&out)
        ]),
        5
    );
    // Model file that is not a model.
    assert_eq!(
        code(&["eval", "--model", s(&junk), "--dataset", s(&junk)]),
        4
    );
}

#[test]
fn bench_reports_zero_frames_for_an_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.eclt");
    let mut bytes = b"ECLT".to_vec();
    bytes.extend(1u16.to_le_bytes());
    bytes.extend(640u16.to_le_bytes());
    bytes.extend(480u16.to_le_bytes());
    bytes.extend(0u32.to_le_bytes());
    fs::write(&empty, &bytes).unwrap();
    let json = dir.path().join("timing.json");
    let traj = asset("trajectories/hover.json");
    ok(&[
        "bench",
        "--in",
        s(&empty),
        "--trajectory",
        &traj,
        "--estimator",
        "learned",
        "--out",
        s(&json),
    ]);
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(t["composites"], 0);
    assert_eq!(t["patches"], 0);
    assert_eq!(t["budget_ms"], 12.5);
}

#[test]
fn bench_times_a_random_learned_model() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("short.json");
    let full: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(asset("trajectories/hover.json")).unwrap())
            .unwrap();
    fs::write(
        &traj,
        serde_json::json!({ "frames": full["frames"].as_array().unwrap()[..6] }).to_string(),
    )
    .unwrap();
    let stream = dir.path().join("s.eclt");
    ok(&["gen", "--trajectory", s(&traj), "--out", s(&stream)]);
    let out = ok(&[
        "bench",
        "--in",
        s(&stream),
        "--trajectory",
        s(&traj),
        "--estimator",
        "learned",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("composites        6"), "{text}");
    assert!(text.contains("0.47"), "{text}");
}

#[test]
fn dataset_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.ecld");
    let test = dir.path().join("test.ecld");
    let model = dir.path().join("m.eclm");
    ok(&[
        "gen-dataset",
        "--suite",
        "smoke",
        "--split",
        "train",
        "--leds",
        "3,4",
        "--out",
        s(&train),
    ]);
    ok(&[
        "gen-dataset",
        "--suite",
        "smoke",
        "--split",
        "test",
        "--leds",
        "3,4",
        "--out",
        s(&test),
    ]);
    ok(&[
        "train",
        "--dataset",
        s(&train),
        "--out",
        s(&model),
        "--epochs",
        "3",
        "--seed",
        "1",
    ]);
    let out = ok(&["eval", "--model", s(&model), "--dataset", s(&test)]);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(m["samples"].as_u64().unwrap() > 0);
    let acc = m["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // A single-channel dataset does not fit a two-channel model.
    let single = dir.path().join("single.ecld");
    ok(&[
        "gen-dataset",
        "--suite",
        "smoke",
        "--split",
        "test",
        "--leds",
        "3,4",
        "--mode",
        "single",
        "--out",
        s(&single),
    ]);
    assert_eq!(
        umbra(&["eval", "--model", s(&model), "--dataset", s(&single)])
            .status
            .code(),
        Some(5)
    );
}

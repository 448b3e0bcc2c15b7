use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchflow::flowio::{decode_image, load_flow, save_flow};
use patchflow::tensor::FlowField;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Synthesizes a scene into `dir` and returns (frame1, frame2, gt).
fn synth(dir: &Path, size: &str, motion: &str) -> (String, String, String) {
    let o = cli(&["synth", "--size", size, "--motion", motion, "--out", &s(dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (
        s(&dir.join("frame1.png")),
        s(&dir.join("frame2.png")),
        s(&dir.join("gt.flo")),
    )
}

fn median_magnitude(f: &FlowField) -> f32 {
    let mut m: Vec<f32> = f.u().iter().zip(f.v()).map(|(u, v)| u.hypot(*v)).collect();
    m.sort_by(f32::total_cmp);
    m[m.len() / 2]
}

#[test]
fn synth_writes_frames_and_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (f1, _, gt) = synth(dir.path(), "40x24", "translate:2.5,-1");
    let img = decode_image(&std::fs::read(f1).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (40, 24));
    let gt = load_flow(Path::new(&gt)).unwrap();
    assert!(gt.u().iter().all(|&u| u == 2.5) && gt.v().iter().all(|&v| v == -1.0));
}

#[test]
fn identical_frames_give_zero_flow() {
    let dir = tempfile::tempdir().unwrap();
    let (f1, _, _) = synth(dir.path(), "48", "translate:0,0");
    let out = dir.path().join("id.flo");
    let o = cli(&["estimate", &f1, &f1, "-o", &s(&out), "--mode", "inverse-exact"]);
    assert!(o.status.success());
    assert!(median_magnitude(&load_flow(&out).unwrap()) < 0.1);
}

#[test]
fn propagate_and_exact_agree_inside() {
    let dir = tempfile::tempdir().unwrap();
    let (f1, f2, _) = synth(dir.path(), "48", "translate:3,-2");
    let mut flows = Vec::new();
    for mode in ["propagate", "inverse-exact"] {
        let out = dir.path().join(format!("{mode}.flo"));
        let o = cli(&[
            "estimate",
            &f1,
            &f2,
            "-o",
            &s(&out),
            "--mode",
            mode,
            "--schedule",
            "1",
            "--iters",
            "3",
        ]);
        assert!(o.status.success());
        flows.push(load_flow(&out).unwrap());
    }
    // single level, so the only difference is at the clamped border
    let m = 12;
    for y in m..48 - m {
        for x in m..48 - m {
            assert_eq!(flows[0].at(x, y), flows[1].at(x, y), "({x},{y})");
        }
    }
}

#[test]
fn manifest_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (f1, f2, _) = synth(dir.path(), "32", "translate:1,1");
    let out = dir.path().join("run.flo");
    let o = cli(&[
        "estimate",
        &f1,
        &f2,
        "-o",
        &s(&out),
        "--trace",
        "--mode",
        "inverse-exact",
        "--threads",
        "2",
    ]);
    assert!(o.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    let levels = manifest["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    for l in levels {
        assert_eq!(l["trace_length"], 12);
        assert_eq!(l["counters_match"], true);
    }
    assert_eq!(manifest["rng_algorithm"], "chacha8");
    let traces: Vec<PathBuf> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("run_iter"))
        .collect();
    assert_eq!(traces.len(), 24);
    assert!(traces.iter().all(|p| load_flow(p).unwrap().same_dims(32, 32)));
}

#[test]
fn kitti_output_format() {
    let dir = tempfile::tempdir().unwrap();
    let (f1, f2, _) = synth(dir.path(), "32", "translate:1,0");
    let out = dir.path().join("k.png");
    assert!(cli(&["estimate", &f1, &f2, "-o", &s(&out), "--format", "kitti"])
        .status
        .success());
    assert!(load_flow(&out).unwrap().same_dims(32, 32));
    assert_eq!(cli(&["estimate", &f1, &f2, "--format", "pfm"]).status.code(), Some(1));
}

#[test]
fn eval_prints_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.flo");
    let b = dir.path().join("b.flo");
    save_flow(&a, &FlowField::constant(4, 6, 1.0, 1.0)).unwrap();
    let o = cli(&["eval", &s(&a), &s(&a)]);
    assert_eq!(stdout(&o).trim(), "epe=0.000000 f1_all=0.000000 n=24");
    save_flow(&b, &FlowField::constant(4, 6, 4.0, 5.0)).unwrap();
    let o = cli(&["eval", &s(&b), &s(&a)]);
    assert!(stdout(&o).starts_with("epe=5.000000 f1_all=100.000000"));
}

#[test]
fn viz_of_zero_flow_is_white() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("z.flo");
    let png = dir.path().join("z.png");
    save_flow(&f, &FlowField::zeros(5, 7)).unwrap();
    assert!(cli(&["viz", &s(&f), &s(&png)]).status.success());
    let img = image::open(&png).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (7, 5));
    assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
}

#[test]
fn bench_csv() {
    let o = cli(&["bench", "--sizes", "32,64", "--strategies", "local,patchmatch"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "strategy,h,w,params,entries,bytes,ms");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("patchmatch,64,64,n=4;r=2,122880,"));
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&[]).status.code(), Some(1));
    assert_eq!(
        cli(&["estimate", "missing1.png", "missing2.png"]).status.code(),
        Some(2)
    );
    assert_eq!(
        cli(&["estimate", "a.png", "b.png", "--mode", "sideways"]).status.code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.flo");
    std::fs::write(&junk, b"not a flow file").unwrap();
    assert_eq!(cli(&["eval", &s(&junk), &s(&junk)]).status.code(), Some(3));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn warm_start_and_adaptive() {
    let dir = tempfile::tempdir().unwrap();
    let (f1, f2, gt) = synth(dir.path(), "64", "translate:6,-4");
    let out = dir.path().join("warm.flo");
    let o = cli(&[
        "estimate",
        &f1,
        &f2,
        "-o",
        &s(&out),
        "--init",
        &gt,
        "--adaptive",
        "--mode",
        "inverse-exact",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = load_flow(&out).unwrap();
    // pixels whose match leaves the frame are not recoverable
    for y in 8..56 {
        for x in 8..56 {
            assert_eq!(est.at(x, y), (6.0, -4.0), "({x},{y})");
        }
    }
    assert_eq!(cli(&["estimate", &f1, &f2, "--adaptive"]).status.code(), Some(1));
}

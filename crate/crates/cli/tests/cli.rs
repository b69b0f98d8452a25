use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = "\
n_samples = 32
n_x = 21
n_y = 17
pitch = 2.4e-3
z0 = 0.3
";

fn mmsar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmsar"))
        .current_dir(dir)
        .args(["--config", "run.conf"])
        .args(args)
        .output()
        .expect("spawn mmsar")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), CONFIG).unwrap();
    std::fs::write(dir.path().join("point.csv"), "0.002,-0.001,0.3,1,0\n").unwrap();
    std::fs::write(dir.path().join("empty.csv"), "# no scatterers\n").unwrap();
    dir
}

fn value(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .to_string()
}

#[test]
fn empty_scene_simulates_and_is_reproducible() {
    let dir = workspace();
    let p = dir.path();
    for out in ["a.fgcb", "b.fgcb"] {
        let o = mmsar(p, &["--seed", "3", "simulate", "--scene", "empty.csv", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read(p.join("a.fgcb")).unwrap(),
        std::fs::read(p.join("b.fgcb")).unwrap()
    );
}

#[test]
fn missing_input_names_the_path() {
    let dir = workspace();
    let o = mmsar(dir.path(), &["simulate", "--scene", "nowhere.csv", "--out", "c.fgcb"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn truncated_cube_is_malformed() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(
        code(&mmsar(p, &["simulate", "--scene", "point.csv", "--out", "c.fgcb"])),
        0
    );
    let bytes = std::fs::read(p.join("c.fgcb")).unwrap();
    std::fs::write(p.join("t.fgcb"), &bytes[..bytes.len() - 5]).unwrap();
    let o = mmsar(p, &["image", "--cube", "t.fgcb", "--out", "img"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn rma_and_backprojection_agree_on_the_peak() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(
        code(&mmsar(p, &["simulate", "--scene", "point.csv", "--out", "c.fgcb"])),
        0
    );
    let rma = mmsar(p, &["image", "--cube", "c.fgcb", "--method", "rma", "--out", "rma"]);
    let bp = mmsar(p, &["image", "--cube", "c.fgcb", "--method", "bp", "--out", "bp"]);
    assert_eq!(code(&rma), 0, "{}", stderr(&rma));
    assert_eq!(code(&bp), 0, "{}", stderr(&bp));
    for key in ["peak_ix", "peak_iy"] {
        let a: i64 = value(&stdout(&rma), key).parse().unwrap();
        let b: i64 = value(&stdout(&bp), key).parse().unwrap();
        assert!((a - b).abs() <= 1, "{key}: {a} vs {b}");
    }
    assert!(std::fs::read(p.join("rma.pgm")).unwrap().starts_with(b"P5"));
    let e = mmsar(p, &["metrics", "entropy", "--image", "rma"]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let prof = mmsar(p, &["profile", "--image", "bp"]);
    assert_eq!(code(&prof), 0, "{}", stderr(&prof));
}

#[test]
fn calibrating_without_a_reflector_fails() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(
        code(&mmsar(p, &["simulate", "--scene", "empty.csv", "--out", "z.fgcb"])),
        0
    );
    let o = mmsar(
        p,
        &["calibrate", "--cube", "z.fgcb", "--point", "0,0,0.3", "--out", "m.csv"],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn calibrate_and_compensate_round_trip() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(p.join("errors.csv"), "0,0.7,0.2,0\n").unwrap();
    assert_eq!(
        code(&mmsar(p, &["simulate", "--scene", "point.csv", "--out", "c.fgcb"])),
        0
    );
    assert_eq!(
        code(&mmsar(
            p,
            &[
                "inject",
                "--cube",
                "c.fgcb",
                "--errors",
                "errors.csv",
                "--out",
                "i.fgcb"
            ]
        )),
        0
    );
    let cal = mmsar(
        p,
        &[
            "calibrate",
            "--cube",
            "i.fgcb",
            "--point",
            "0.002,-0.001,0.3",
            "--out",
            "m.csv",
        ],
    );
    assert_eq!(code(&cal), 0, "{}", stderr(&cal));
    let comp = mmsar(
        p,
        &["compensate", "--cube", "i.fgcb", "--model", "m.csv", "--out", "f.fgcb"],
    );
    assert_eq!(code(&comp), 0, "{}", stderr(&comp));
}

#[test]
fn single_pixel_entropy_is_zero() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(p.join("one.csv"), "2.5,0\n").unwrap();
    std::fs::write(
        p.join("one.meta"),
        "n_x=1\nn_y=1\norigin_x=0\norigin_y=0\npitch_x=0.001\npitch_y=0.001\nplane_z=0.3\n",
    )
    .unwrap();
    let o = mmsar(p, &["metrics", "entropy", "--image", "one"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "entropy=0.000000");
}

#[test]
fn identical_depth_maps_are_perfect() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(p.join("d.txt"), "2 3\n0.35 0.40 0.45\n0.50 0.55 0.58\n").unwrap();
    let o = mmsar(p, &["metrics", "depth", "--pred", "d.txt", "--truth", "d.txt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "rmse"), "0.000000");
    assert_eq!(value(&out, "delta_1.05"), "100.000000");
    assert_eq!(value(&out, "loss_surface_normal"), "0.000000");
}

#[test]
fn mismatched_depth_shapes_are_rejected() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(p.join("a.txt"), "1 2\n0.4 0.5\n").unwrap();
    std::fs::write(p.join("b.txt"), "2 1\n0.4\n0.5\n").unwrap();
    let o = mmsar(p, &["metrics", "depth", "--pred", "a.txt", "--truth", "b.txt"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = workspace();
    assert_eq!(code(&mmsar(dir.path(), &["image", "--method", "fourier"])), 1);
    assert_eq!(code(&mmsar(dir.path(), &["frobnicate"])), 1);
}

#[test]
fn streams_resynchronize_to_the_same_cube() {
    let dir = workspace();
    let p = dir.path();
    let sim = mmsar(
        p,
        &[
            "simulate",
            "--scene",
            "point.csv",
            "--emit-streams",
            "s",
            "--out",
            "c.fgcb",
        ],
    );
    assert_eq!(code(&sim), 0, "{}", stderr(&sim));
    let sync = mmsar(
        p,
        &[
            "sync",
            "--poses",
            "s/poses.csv",
            "--frames",
            "s/frames.fgfr",
            "--out",
            "r.fgcb",
        ],
    );
    assert_eq!(code(&sync), 0, "{}", stderr(&sync));
    assert_eq!(value(&stdout(&sync), "matched"), "357");
    assert_eq!(
        std::fs::read(p.join("c.fgcb")).unwrap(),
        std::fs::read(p.join("r.fgcb")).unwrap()
    );
}

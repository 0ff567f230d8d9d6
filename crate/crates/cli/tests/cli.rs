use std::path::Path;
use std::process::{Command, Output};

use cine_deblur_core::data::read_cine;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cine-deblur")).args(args).env_remove("CINE_DEBLUR_SEED").output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_exits_zero_with_usage() {
    let out = cli(&["simulate", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"));
    for flag in ["--mode", "--n-mix", "--keep", "--spokes", "--seed"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn every_subcommand_lists_its_flags() {
    for (cmd, flags) in [
        ("train", &["--mode", "--config"][..]),
        ("deblur", &["--ckpt", "--in", "--out"]),
        ("interpolate", &["--ckpt", "--in", "--out"]),
        ("eval", &["--clean", "--test", "--csv"]),
        ("export", &["--in", "--frames", "--pgm-dir"]),
    ] {
        let out = cli(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in flags {
            assert!(text.contains(flag), "{cmd} {flag}");
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = cli(&["simulate", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(out.stdout.is_empty());
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(&[]).status.code(), Some(1));
    assert_eq!(cli(&["train", "--mode", "sideways"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.cine");
    let out = cli(&["eval", "--clean", p(&missing), "--test", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let junk = dir.path().join("junk.cine");
    std::fs::write(&junk, b"not a cine file").unwrap();
    assert_eq!(cli(&["export", "--in", p(&junk), "--pgm-dir", p(dir.path())]).status.code(), Some(2));
}

#[test]
fn eval_of_identical_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.cine");
    ok(&cli(&["simulate", "--out", p(&x), "--frames", "3", "--n-mix", "1"]));
    let csv = dir.path().join("out.csv");
    ok(&cli(&["eval", "--clean", p(&x), "--test", p(&x), "--csv", p(&csv)]));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mean = text.lines().find(|l| l.starts_with("mean,")).unwrap();
    let fields: Vec<&str> = mean.split(',').collect();
    assert_eq!(fields[1], "1.000000");
    assert_eq!(fields[2], "inf");
}

#[test]
fn simulate_is_deterministic_and_the_seed_flag_beats_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: Option<&str>, env: Option<&str>| {
        let path = dir.path().join(name);
        let mut args = vec!["simulate", "--out", p(&path), "--frames", "3", "--n-mix", "1", "--noise", "0.05"];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cine-deblur"));
        cmd.args(&args).env_remove("CINE_DEBLUR_SEED");
        if let Some(e) = env {
            cmd.env("CINE_DEBLUR_SEED", e);
        }
        ok(&cmd.output().unwrap());
        std::fs::read(path).unwrap()
    };
    let a = run("a.cine", Some("4"), None);
    assert_eq!(a, run("b.cine", Some("4"), None));
    assert_ne!(a, run("c.cine", Some("5"), None));
    assert_eq!(a, run("d.cine", None, Some("4")));
    assert_eq!(a, run("e.cine", Some("4"), Some("9")));
}

#[test]
fn simulate_writes_clean_and_radial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (deg, clean) = (dir.path().join("deg.cine"), dir.path().join("clean.cine"));
    ok(&cli(&["simulate", "--mode", "radial", "--spokes", "8", "--frames", "4", "--size", "24", "--out", p(&deg), "--clean-out", p(&clean)]));
    let (d, c) = (read_cine(&deg).unwrap(), read_cine(&clean).unwrap());
    assert_eq!((d.len(), d.height(), d.width()), (4, 24, 24));
    assert_eq!((c.len(), c.height(), c.width()), (4, 24, 24));
    assert!(d.frames().iter().zip(c.frames()).any(|(a, b)| a.max_abs_diff(b) > 1e-3));

    let again = dir.path().join("again.cine");
    ok(&cli(&["simulate", "--in", p(&clean), "--mode", "radial", "--spokes", "8", "--out", p(&again)]));
    assert_eq!(std::fs::read(&deg).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn export_writes_selected_frames() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.cine");
    ok(&cli(&["simulate", "--out", p(&x), "--frames", "5", "--n-mix", "1", "--size", "20"]));
    let pgm = dir.path().join("pgm");
    ok(&cli(&["export", "--in", p(&x), "--frames", "0,2-3", "--pgm-dir", p(&pgm)]));
    let mut names: Vec<String> = std::fs::read_dir(&pgm).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["frame_000.pgm", "frame_002.pgm", "frame_003.pgm"]);
    let bytes = std::fs::read(pgm.join("frame_002.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n20 20\n255\n"));
    assert_eq!(bytes.len(), b"P5\n20 20\n255\n".len() + 400);
    assert_eq!(cli(&["export", "--in", p(&x), "--frames", "7", "--pgm-dir", p(&pgm)]).status.code(), Some(2));
}

#[test]
fn train_rejects_a_contradicting_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "mode=cascade\n").unwrap();
    let out = cli(&["train", "--mode", "recurrent", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&cfg, "widths=desk\nnonsense=1\n").unwrap();
    assert_eq!(cli(&["train", "--mode", "recurrent", "--config", p(&cfg)]).status.code(), Some(2));
}

#[test]
fn interpolation_and_cascade_checkpoints_drive_inference() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.cine");
    let deg = dir.path().join("deg.cine");
    ok(&cli(&["simulate", "--out", p(&deg), "--clean-out", p(&clean), "--frames", "7", "--size", "16", "--n-mix", "1"]));
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "widths=desk\nn_mix=1\nmax_steps=1\n").unwrap();

    let interp = dir.path().join("interp");
    ok(&cli(&["train", "--mode", "interp", "--config", p(&cfg), "--data", p(&clean), "--out", p(&interp)]));
    let six = dir.path().join("six.cine");
    let seq = read_cine(&deg).unwrap();
    cine_deblur_core::data::write_cine(&six, &seq.window(0, 6).unwrap()).unwrap();
    let filled = dir.path().join("filled.cine");
    ok(&cli(&["interpolate", "--ckpt", p(&interp.join("final.ckpt")), "--in", p(&six), "--out", p(&filled)]));
    let f = read_cine(&filled).unwrap();
    assert_eq!(f.len(), 7);
    assert!(f.frame(3).max_abs_diff(seq.frame(3)) > 0.0);
    assert_eq!(f.frame(4), seq.frame(3));
    assert_eq!(cli(&["deblur", "--ckpt", p(&interp.join("final.ckpt")), "--in", p(&deg), "--out", p(&filled)]).status.code(), Some(2));

    let casc = dir.path().join("casc");
    ok(&cli(&["train", "--mode", "cascade", "--config", p(&cfg), "--data", p(&clean), "--out", p(&casc)]));
    let enhanced = dir.path().join("enhanced.cine");
    ok(&cli(&["deblur", "--ckpt", p(&casc.join("final.ckpt")), "--in", p(&deg), "--out", p(&enhanced)]));
    let e = read_cine(&enhanced).unwrap();
    assert_eq!((e.len(), e.height(), e.width()), (7, 16, 16));
    assert!(e.frames().iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
    assert_eq!(cli(&["interpolate", "--ckpt", p(&casc.join("final.ckpt")), "--in", p(&six), "--out", p(&filled)]).status.code(), Some(2));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lsdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsdm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 8-bit binary PGM with a smooth pattern shifted by `dx`.
fn write_pgm(path: &Path, w: usize, h: usize, dx: f64) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64 - dx, y as f64);
            let v = 0.5 + 0.25 * (0.4 * xf).sin() + 0.2 * (0.3 * yf + 0.1 * xf).cos();
            bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, bytes).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_track_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let out = lsdm(&["synth", "--out", p(&seq), "--motion", "translation", "--frames", "8", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(seq.join("frames/0008.png").exists());

    let tracks = dir.path().join("tracklets.csv");
    let out = lsdm(&[
        "track", "--seq", p(&seq.join("frames")), "--annot", p(&seq.join("annotations.txt")),
        "--out", p(&tracks), "--seed", "1", "--prior-weight", "0.5", "--coupling", "partial", "--emma-iters", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&tracks).unwrap();
    assert_eq!(text.lines().next(), Some("sequence,landmark_id,frame,x,y"));
    assert_eq!(text.lines().count(), 9);

    let report = dir.path().join("report.csv");
    let out = lsdm(&["eval", "--pred", p(&tracks), "--annot", p(&seq.join("annotations.txt")), "--report", p(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&report).unwrap();
    let pooled = text.lines().find(|l| l.starts_with("pooled,")).unwrap();
    let mean: f64 = pooled.split(',').nth(1).unwrap().parse().unwrap();
    assert!(mean < 1.0, "pooled TE mean {mean}");
    assert!(text.lines().any(|l| l.starts_with("note_pooled,")));
}

#[test]
fn register_then_emma() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    write_pgm(&a, 48, 40, 0.0);
    write_pgm(&b, 48, 40, 1.0);
    let field = dir.path().join("out/field.lsdf");
    let out = lsdm(&["register", "--fixed", p(&a), "--moving", p(&b), "--out", p(&field)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(field.exists());
    let energy = fs::read_to_string(dir.path().join("out/energy.csv")).unwrap();
    assert!(energy.starts_with("iter,data,reg,total\n"));

    let (ol, os) = (dir.path().join("e/long.lsdf"), dir.path().join("e/short.lsdf"));
    let out = lsdm(&[
        "emma", "--long", p(&field), "--short", p(&field), "--out-long", p(&ol), "--out-short", p(&os), "--iters", "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let elbo = fs::read_to_string(dir.path().join("e/elbo.csv")).unwrap();
    assert_eq!(elbo.lines().count(), 4);
    assert!(os.exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&lsdm(&[])), 2);
    assert_eq!(code(&lsdm(&["track", "--seq", "x"])), 2);
    assert_eq!(code(&lsdm(&["synth", "--out", "x", "--motion", "spiral"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lambda_reg = 1\nsmoothness = 3\n").unwrap();
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    write_pgm(&a, 16, 16, 0.0);
    write_pgm(&b, 16, 16, 0.5);
    let out = lsdm(&["register", "--fixed", p(&a), "--moving", p(&b), "--out", p(&dir.path().join("f.lsdf")), "--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("smoothness"), "{}", stderr(&out));

    let out = lsdm(&["emma", "--long", "a", "--short", "b", "--out-long", "c", "--out-short", "d", "--iters", "11"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing.pgm");
    let out = lsdm(&["register", "--fixed", p(&missing), "--moving", p(&missing), "--out", p(&dir.path().join("f.lsdf"))]);
    assert_eq!(code(&out), 3);

    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for i in 1..=3 {
        write_pgm(&frames.join(format!("{i:04}.pgm")), 96, 96, i as f64);
    }
    let annot = dir.path().join("annot.txt");
    fs::write(&annot, "1 1 40 40\n1 0 41 40\n").unwrap();
    let out = lsdm(&["track", "--seq", p(&frames), "--annot", p(&annot), "--out", p(&dir.path().join("t.csv"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    fs::write(&annot, "1 1 400 40\n").unwrap();
    let out = lsdm(&["track", "--seq", p(&frames), "--annot", p(&annot), "--out", p(&dir.path().join("t.csv"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("landmark 1"), "{}", stderr(&out));

    let pred = dir.path().join("pred.csv");
    fs::write(&pred, "sequence,landmark_id,frame,x,y\ns,1,1,40.0,40.0\n").unwrap();
    fs::write(&annot, "1 1 40 40\n1 3 42 40\n").unwrap();
    let out = lsdm(&["eval", "--pred", p(&pred), "--annot", p(&annot), "--report", p(&dir.path().join("r.csv"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("frame 2"), "{}", stderr(&out));
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    write_pgm(&a, 16, 16, 0.0);
    write_pgm(&b, 16, 16, 2.0);
    let cfg = dir.path().join("wild.cfg");
    fs::write(&cfg, "step_size = 1e300\npyramid_levels = 1\n").unwrap();
    let out = lsdm(&["register", "--fixed", p(&a), "--moving", p(&b), "--out", p(&dir.path().join("f.lsdf")), "--config", p(&cfg)]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn late_first_annotation_holds_position_before_it() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for i in 1..=4 {
        write_pgm(&frames.join(format!("{i:04}.pgm")), 128, 128, 0.0);
    }
    let annot = dir.path().join("annot.txt");
    fs::write(&annot, "7 3 60 62\n").unwrap();
    let tracks = dir.path().join("t.csv");
    let out = lsdm(&["track", "--seq", p(&frames), "--annot", p(&annot), "--out", p(&tracks), "--prior-weight", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&tracks).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!((r[1], r[2]), ("7", (i + 1).to_string().as_str()));
        let (x, y): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        assert!((x - 60.0).abs() < 0.05 && (y - 62.0).abs() < 0.05, "{x} {y}");
    }
}

use std::path::Path;
use std::process::{Command, Output};

use dustflow::detect::{load_samples, lsm_fit, lsm_predict};
use dustflow::raster::{channel, load_grid, save_grid, ChannelStack, Grid};

fn dustflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dustflow"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn help_exits_zero_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["synth", "detect", "flow", "simstudy", "render"] {
        let out = dustflow(&[sub, "--help", "--output", "should_not_exist"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(!out.stdout.is_empty());
    }
    assert_eq!(dustflow(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["flow", "--input", "a", "--output", "o"],
        &["flow", "--input", "a", "--input", "b", "--output", "o", "--alpha", "1", "--alpha-grid", "1:2:3"],
        &["flow", "--input", "a", "--input", "b", "--output", "o", "--alpha-grid", "2:1:3"],
        &["detect", "--detector", "lda", "--input", "s", "--output", "o"],
        &["bogus"],
    ];
    for args in cases {
        assert_eq!(dustflow(args, dir.path()).status.code(), Some(2), "{args:?}");
    }
}

fn ash_stack(dir: &Path, with_m: bool) {
    let g = |v| Grid::filled(3, 4, v);
    let mut s = ChannelStack::new(0, None)
        .unwrap()
        .with(channel::DT_BR, g(1.5))
        .unwrap()
        .with(channel::DT_BG, g(5.0))
        .unwrap()
        .with(channel::BT108, g(280.0))
        .unwrap();
    if with_m {
        s.insert(channel::ROLLING_MEAN, g(4.5)).unwrap();
    }
    s.save(dir).unwrap();
}

#[test]
fn ash_detector_flags_everything_that_meets_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    ash_stack(&dir.path().join("stack"), true);
    ok(&dustflow(&["detect", "--detector", "ash", "--input", "stack", "--output", "out"], dir.path()));
    let mask = load_grid(dir.path().join("out/mask.grid")).unwrap();
    assert!(mask.data().iter().all(|&v| v == 1.0));

    ash_stack(&dir.path().join("no_m"), false);
    let out = dustflow(&["detect", "--detector", "ash", "--input", "no_m", "--output", "out2"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"M\""));
}

#[test]
fn lsm_cli_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let sc = "rows=24\ncols=24\ncenter_x=11\ncenter_y=11\nsigma0=3\nflow_u=0.5\nflow_v=0.25\n";
    std::fs::write(dir.path().join("sc.txt"), sc).unwrap();
    ok(&dustflow(&["synth", "--scenario", "sc.txt", "--seed", "3", "--labels", "--output", "s"], dir.path()));
    ok(&dustflow(
        &[
            "detect", "--detector", "lsm", "--input", "s/stack_2", "--samples", "s/samples.txt",
            "--bins", "12", "--rho-grid", "0.5,5", "--model-out", "m.txt", "--output", "d",
        ],
        dir.path(),
    ));
    let samples = load_samples(dir.path().join("s/samples.txt")).unwrap();
    let model = lsm_fit(&samples, 12, &[0.5, 5.0]).unwrap();
    let stack = ChannelStack::load(dir.path().join("s/stack_2")).unwrap();
    let lib = dir.path().join("lib.grid");
    save_grid(&lsm_predict(&model, &stack).unwrap(), &lib).unwrap();
    assert_eq!(read(dir.path().join("d/probability.grid")), read(&lib));

    // The saved model reproduces the same grid.
    ok(&dustflow(
        &["detect", "--detector", "lsm", "--input", "s/stack_2", "--model", "m.txt", "--output", "d2"],
        dir.path(),
    ));
    assert_eq!(read(dir.path().join("d2/probability.grid")), read(&lib));
    assert!(read(dir.path().join("d2/report.txt")).starts_with(b"overall_accuracy "));
    let wrong = dustflow(
        &["detect", "--detector", "lda", "--input", "s/stack_2", "--model", "m.txt", "--output", "d3"],
        dir.path(),
    );
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn flat_frames_give_zero_flow() {
    let dir = tempfile::tempdir().unwrap();
    save_grid(&Grid::filled(6, 7, 0.3), dir.path().join("a.grid")).unwrap();
    ok(&dustflow(
        &["flow", "--input", "a.grid", "--input", "a.grid", "--output", "f", "--alpha-grid", "0.1:10:3"],
        dir.path(),
    ));
    for name in ["u.grid", "v.grid"] {
        let g = load_grid(dir.path().join("f").join(name)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
    }
}

#[test]
fn fixed_alpha_equals_single_point_grid() {
    let dir = tempfile::tempdir().unwrap();
    let a = Grid::from_fn(8, 9, |i, j| ((i * 9 + j) as f64 * 0.37).sin());
    let b = Grid::from_fn(8, 9, |i, j| ((i * 9 + j) as f64 * 0.37 + 0.2).sin());
    save_grid(&a, dir.path().join("a.grid")).unwrap();
    save_grid(&b, dir.path().join("b.grid")).unwrap();
    let base = ["flow", "--input", "a.grid", "--input", "b.grid", "--method", "hs"];
    ok(&dustflow(&[&base[..], &["--alpha", "0.5", "--output", "x"]].concat(), dir.path()));
    ok(&dustflow(&[&base[..], &["--alpha-grid", "0.5:0.5:1", "--output", "y"]].concat(), dir.path()));
    for name in ["u.grid", "v.grid", "var_u.grid", "var_v.grid", "summary.txt"] {
        assert_eq!(read(dir.path().join("x").join(name)), read(dir.path().join("y").join(name)), "{name}");
    }
}

#[test]
fn render_golden_ramp() {
    let dir = tempfile::tempdir().unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let input = golden.join("ramp4x4.grid");
    ok(&dustflow(&["render", "--input", input.to_str().unwrap(), "--output", "r.ppm"], dir.path()));
    let got = read(dir.path().join("r.ppm"));
    assert!(got.starts_with(b"P6\n4 4\n255\n"));
    assert_eq!(got, read(golden.join("ramp4x4.ppm")));
}

#[test]
fn constant_grid_renders_one_colour() {
    let dir = tempfile::tempdir().unwrap();
    save_grid(&Grid::filled(5, 3, -2.0), dir.path().join("c.grid")).unwrap();
    ok(&dustflow(&["render", "--input", "c.grid", "--output", "c.ppm", "--range", "-4:0"], dir.path()));
    let ppm = read(dir.path().join("c.ppm"));
    let body = &ppm[b"P6\n3 5\n255\n".len()..];
    assert_eq!(body.len(), 45);
    assert!(body.chunks(3).all(|p| p == &body[..3]));
    assert_eq!(&body[..3], &[33, 145, 140]);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cap_core::io::{read_calibration, read_matrix, read_model, report_value, write_matrix, CALIBRATION_FILE};
use cap_core::DenseMatrix;

fn cap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cap")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str) {
    let out = cap(&["--quiet", "gen-synthetic", "--seed", seed, "--out", path(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_synthetic_is_reproducible_and_readable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "42");
    gen(&b, "42");
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 5);
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?}");
    }
    let model = read_model(&a).unwrap();
    assert_eq!(model.layers.len(), 3);
    let raw = fs::read(a.join(CALIBRATION_FILE)).unwrap();
    assert_eq!(&raw[..4], b"CAPM");
    let calib = read_calibration(a.join(CALIBRATION_FILE), model.input_dim()).unwrap();
    assert_eq!(calib.size(), 128);
    assert_eq!(calib.targets.cols(), model.output_dim());
}

#[test]
fn compress_report_matches_written_factors() {
    let tmp = tempfile::tempdir().unwrap();
    let (model, out) = (tmp.path().join("m"), tmp.path().join("c"));
    gen(&model, "3");
    let run = cap(&["--quiet", "compress", "--model", path(&model), "--seed", "3", "--out", path(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let mut recount = 0;
    for l in 0..3 {
        let u = read_matrix(out.join(format!("layer_{l}.u.capm"))).unwrap();
        let v = read_matrix(out.join(format!("layer_{l}.v.capm"))).unwrap();
        let s = read_matrix(out.join(format!("layer_{l}.s.capm"))).unwrap();
        assert_eq!(u.cols(), v.cols());
        recount += u.cols() * (u.rows() + v.rows()) + s.count_nonzero();
    }
    let tsv = fs::read_to_string(out.join("report.tsv")).unwrap();
    let used: usize = report_value(&tsv, "used_cost").unwrap().parse().unwrap();
    let budget: usize = report_value(&tsv, "budget").unwrap().parse().unwrap();
    assert_eq!(recount, used);
    assert!(used <= budget);
}

#[test]
fn decompose_zero_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("zero.capm");
    write_matrix(&input, &DenseMatrix::zeros(5, 4)).unwrap();
    let out = tmp.path().join("d");
    let run = cap(&["--quiet", "decompose", path(&input), "--out", path(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(read_matrix(out.join("L.capm")).unwrap(), DenseMatrix::zeros(5, 4));
    assert_eq!(read_matrix(out.join("S.capm")).unwrap(), DenseMatrix::zeros(5, 4));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("w.capm");
    let w = DenseMatrix::from_fn(12, 10, |r, c| ((r * 7 + c * 3) % 11) as f64 - 5.0);
    write_matrix(&good, &w).unwrap();

    let mut bytes = fs::read(&good).unwrap();
    bytes[0] = b'X';
    let corrupt = tmp.path().join("bad.capm");
    fs::write(&corrupt, bytes).unwrap();
    let out = tmp.path().join("o");
    assert_eq!(cap(&["decompose", path(&corrupt), "--out", path(&out)]).status.code(), Some(3));

    let cfg = tmp.path().join("cfg.txt");
    fs::write(&cfg, "rpca.max_iters = 1\n").unwrap();
    let run = cap(&["decompose", path(&good), "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(run.status.code(), Some(4));

    assert_eq!(cap(&["sweep-lambda", "--lambdas", ""]).status.code(), Some(2));
    assert_eq!(cap(&["sweep-lambda", "--lambdas", "1.0,0.1"]).status.code(), Some(2));
    assert_eq!(cap(&["no-such-command"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.capm");
    assert_eq!(cap(&["decompose", path(&missing), "--out", path(&out)]).status.code(), Some(5));
}

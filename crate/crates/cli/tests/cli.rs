use std::path::Path;
use std::process::{Command, Output};

use ahdr_core::io::pfm::{read_pfm, write_pfm};
use ahdr_core::io::ppm::read_ppm;
use ahdr_tensor::{Shape, Tensor};

fn ahdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ahdr"))
        .args(args)
        .output()
        .expect("spawn ahdr")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn last_error_line(o: &Output) -> String {
    stderr(o).lines().last().unwrap_or_default().to_string()
}

fn gen_data(dir: &Path, count: usize, size: usize) {
    let size = size.to_string();
    let count = count.to_string();
    let o = ahdr(&[
        "gen-data", "--count", &count, "--seed", "5", "--out", s(dir), "--width", &size, "--height", &size,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

fn train_tiny(data: &Path, ckpt: &Path, iters: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--data", s(data), "--out", s(ckpt), "--preset", "miniature", "--base-channels", "8",
        "--growth-rate", "4", "--num-blocks", "1", "--iters", iters, "--patch", "16", "--batch", "2", "--lr", "1e-4",
        "--log-every", "1",
    ];
    args.extend_from_slice(extra);
    ahdr(&args)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(ahdr(&["--help"]).status.code(), Some(0));
    assert_eq!(ahdr(&["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = ahdr(&["tonemap", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(last_error_line(&o).starts_with("ahdr: error[usage]:"), "{}", stderr(&o));
}

#[test]
fn missing_subcommand_is_usage_error() {
    assert_eq!(ahdr(&[]).status.code(), Some(1));
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.ppm");
    let o = ahdr(&["tonemap", "--in", s(&dir.path().join("nope.pfm")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let line = last_error_line(&o);
    assert!(line.starts_with("ahdr: error[data]:"), "{line}");
    assert!(line.contains("nope.pfm"), "{line}");
    assert!(!out.exists());
}

#[test]
fn invalid_mu_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pfm");
    write_pfm(&input, &Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2))).unwrap();
    let out = dir.path().join("out.ppm");
    let o = ahdr(&["tonemap", "--in", s(&input), "--mu", "-1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn tonemap_of_black_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pfm");
    write_pfm(&input, &Tensor::<f32>::zeros(Shape::new(1, 3, 4, 5))).unwrap();
    let out = dir.path().join("out.ppm");
    let o = ahdr(&["tonemap", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = read_ppm(&out).unwrap();
    assert_eq!(t.shape(), Shape::new(1, 3, 4, 5));
    assert!(t.data().iter().all(|&v| v == 0.0));
}

#[test]
fn tonemap_of_white_is_white() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pfm");
    write_pfm(&input, &Tensor::<f32>::full(Shape::new(1, 3, 2, 2), 1.0)).unwrap();
    let out = dir.path().join("out.ppm");
    assert_eq!(ahdr(&["tonemap", "--in", s(&input), "--out", s(&out)]).status.code(), Some(0));
    assert!(read_ppm(&out).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn gradcheck_single_suite_passes() {
    let o = ahdr(&["gradcheck", "--ops", "activations"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(!text.is_empty());
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn gradcheck_unknown_suite_is_usage_error() {
    assert_eq!(ahdr(&["gradcheck", "--ops", "nonsense"]).status.code(), Some(1));
}

#[test]
fn gen_data_rejects_unsorted_biases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = ahdr(&["gen-data", "--count", "1", "--out", s(&out), "--biases", "2,0,-2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn train_with_bad_batch_writes_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 1, 16);
    let ckpt = dir.path().join("m.ckpt");
    let o = train_tiny(&data, &ckpt, "3", &["--batch", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!ckpt.exists());
}

#[test]
fn train_on_missing_dataset_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let o = train_tiny(&dir.path().join("absent"), &ckpt, "3", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!ckpt.exists());
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 2, 20);
    for f in ["manifest.txt", "sample_0000/low.ppm", "sample_0001/gt.pfm", "sample_0001/exposure.txt"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let ckpt = dir.path().join("m.ckpt");
    let log = dir.path().join("log.jsonl");
    let o = train_tiny(&data, &ckpt, "3", &["--log", s(&log)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(&log).unwrap(), stdout);
    for line in stdout.lines() {
        assert!(line.starts_with('{') && line.contains("\"iteration\"") && line.contains("\"loss\""), "{line}");
    }

    let sample = data.join("sample_0000");
    let (low, mid, high) = (sample.join("low.ppm"), sample.join("mid.ppm"), sample.join("high.ppm"));
    let infer = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "infer",
            "--ckpt",
            s(&ckpt),
            "--low",
            s(&low),
            "--mid",
            s(&mid),
            "--high",
            s(&high),
            "--out",
            s(out),
        ];
        args.extend_from_slice(extra);
        ahdr(&args)
    };
    let a = dir.path().join("a.pfm");
    let b = dir.path().join("b.pfm");
    let tm = dir.path().join("a.ppm");
    let att = dir.path().join("att");
    let o = infer(&a, &["--tonemapped", s(&tm), "--dump-attention", s(&att)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(infer(&b, &[]).status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let hdr = read_pfm(&a).unwrap();
    assert_eq!(hdr.shape(), Shape::new(1, 3, 20, 20));
    assert!(hdr.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(read_ppm(&tm).unwrap().shape(), Shape::new(1, 3, 20, 20));
    let maps = std::fs::read_dir(&att).unwrap().count();
    assert_eq!(maps, 2 * 8);
    let m = read_pfm(&att.join("attention_low_c000.pfm")).unwrap();
    assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let bad = infer(&dir.path().join("c.pfm"), &["--biases", "0,-2,2"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!dir.path().join("c.pfm").exists());

    let report = dir.path().join("report.txt");
    let o = ahdr(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&report), "--baselines"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    for needle in ["sample_0000", "sample_0001", "mean", "reference-only", "triangle-merge", "# fingerprint"] {
        assert!(text.contains(needle), "{needle} missing from {text}");
    }

    let resumed = dir.path().join("r.ckpt");
    let o = train_tiny(&data, &resumed, "4", &["--resume", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1);

    let mismatch = train_tiny(&data, &dir.path().join("x.ckpt"), "3", &["--resume", s(&ckpt), "--variant", "drdb"]);
    assert_eq!(mismatch.status.code(), Some(2), "{}", stderr(&mismatch));
}

#[test]
fn corrupt_checkpoint_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 1, 16);
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(train_tiny(&data, &ckpt, "3", &[]).status.code(), Some(0));
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    std::fs::write(&ckpt, &bytes).unwrap();
    let report = dir.path().join("r.txt");
    let o = ahdr(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(last_error_line(&o).starts_with("ahdr: error[data]:"));
    assert!(!report.exists());
}

#[test]
fn attention_dump_needs_attention() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 1, 16);
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(train_tiny(&data, &ckpt, "3", &["--variant", "drdb"]).status.code(), Some(0));
    let sample = data.join("sample_0000");
    let out = dir.path().join("o.pfm");
    let o = ahdr(&[
        "infer",
        "--ckpt",
        s(&ckpt),
        "--low",
        s(&sample.join("low.ppm")),
        "--mid",
        s(&sample.join("mid.ppm")),
        "--high",
        s(&sample.join("high.ppm")),
        "--out",
        s(&out),
        "--dump-attention",
        s(&dir.path().join("att")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

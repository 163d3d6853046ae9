use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wcnn::data::netpbm::decode;
use wcnn::data::{save_ppm, PixelMapping};
use wcnn::Tensor;

fn wcnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wcnn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two classes (vertical vs horizontal stripes) × 2 groups × 3 images.
fn write_tree(root: &Path) {
    for (class, vertical) in [("horizontal", false), ("vertical", true)] {
        for group in ["g1", "g2"] {
            let dir = root.join(class).join(group);
            fs::create_dir_all(&dir).unwrap();
            for k in 0..3 {
                let img = Tensor::from_fn(&[3, 18, 18], |i| {
                    let (y, x) = ((i % 324) / 18, i % 18);
                    let t = if vertical { x } else { y };
                    ((t + k) % 4 < 2) as u8 as f32 * 0.8 + 0.1
                });
                save_ppm(&img, dir.join(format!("{k}.ppm")), PixelMapping::Unit).unwrap();
            }
        }
    }
}

const TINY: [&str; 16] = [
    "--levels",
    "1",
    "--stages",
    "2",
    "--base-channels",
    "4",
    "--epochs",
    "1",
    "--batch-size",
    "4",
    "--set",
    "crop_source_size=18",
    "--set",
    "crop_target_size=16",
    "--seed",
    "3",
];

#[test]
fn decompose_writes_subbands_and_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let flat = Tensor::full(&[3, 32, 32], 0.4);
    save_ppm(&flat, dir.path().join("flat.ppm"), PixelMapping::Unit).unwrap();
    let o = wcnn(
        &["decompose", "flat.ppm", "--levels", "3", "--out", "bands"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let text = stdout(&o);
    let err: f32 = text
        .lines()
        .find_map(|l| l.strip_prefix("max reconstruction error: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4);
    let files: Vec<_> = fs::read_dir(dir.path().join("bands")).unwrap().collect();
    assert_eq!(files.len(), 12);
    for level in 1..=3 {
        for band in ["lh", "hl", "hh"] {
            let bytes =
                fs::read(dir.path().join(format!("bands/level{level}_{band}.pgm"))).unwrap();
            let img = decode(&bytes).unwrap();
            assert!(
                img.data().iter().all(|&v| v == 128.0 / 255.0),
                "level{level}_{band}"
            );
        }
    }
}

#[test]
fn decompose_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    save_ppm(
        &Tensor::full(&[3, 8, 8], 0.5),
        dir.path().join("small.ppm"),
        PixelMapping::Unit,
    )
    .unwrap();
    let o = wcnn(
        &["decompose", "small.ppm", "--levels", "4", "--out", "x"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("level 4"));
    let o = wcnn(
        &["decompose", "missing.ppm", "--levels", "1", "--out", "x"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    fs::write(dir.path().join("junk.ppm"), b"P6\n8 8\n255\nabc").unwrap();
    let o = wcnn(
        &["decompose", "junk.ppm", "--levels", "1", "--out", "x"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    let o = wcnn(&["decompose", "small.ppm", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn params_table_sums_and_grows_with_width() {
    let dir = tempfile::tempdir().unwrap();
    let mut previous = 0;
    for base in ["4", "8", "16", "32"] {
        let o = wcnn(
            &["params", "--levels", "3", "--base-channels", base],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        let mut sum = 0;
        let mut total = 0;
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split_whitespace().collect();
            let n: usize = cols.last().unwrap().parse().unwrap();
            if cols[0] == "total" {
                total = n;
            } else {
                sum += n;
                if cols[1] == "wavelet" {
                    assert_eq!(n, 0, "{line}");
                }
            }
        }
        assert_eq!(sum, total);
        assert!(total > previous);
        previous = total;
    }
}

#[test]
fn group_splits_report_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    write_tree(&dir.path().join("data"));
    let mut args = vec!["train", "--data", "data", "--out", "run"];
    args.extend(TINY);
    let o = wcnn(&args, dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    assert!(text.contains("over 2 splits"), "{text}");
    let summary = text.lines().last().unwrap();
    assert!(
        summary.starts_with("final_test_acc=") && summary.contains(" params="),
        "{summary}"
    );
    for s in ["split0", "split1"] {
        for f in ["model.ckpt", "metrics.csv", "confusion.csv"] {
            assert!(dir.path().join("run").join(s).join(f).is_file(), "{s}/{f}");
        }
    }
    assert!(dir.path().join("run/config.resolved").is_file());

    let o = wcnn(
        &[
            "eval",
            "--checkpoint",
            "run/split0/model.ckpt",
            "--config",
            "run/config.resolved",
            "--split",
            "holdout:0",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).starts_with("accuracy="));
    let confusion = fs::read_to_string(dir.path().join("ev/confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 3);
    let o = wcnn(
        &[
            "eval",
            "--checkpoint",
            "run/split0/model.ckpt",
            "--config",
            "run/config.resolved",
            "--split",
            "groups",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    write_tree(&dir.path().join("data"));
    let mut args = vec![
        "train",
        "--data",
        "data",
        "--split",
        "holdout:1",
        "--out",
        "a",
    ];
    args.extend(TINY);
    assert_eq!(wcnn(&args, dir.path()).status.code(), Some(0));
    let o = wcnn(
        &["train", "--config", "a/config.resolved", "--out", "b"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    for f in ["model.ckpt", "metrics.csv", "confusion.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn bad_inputs_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        wcnn(&["train", "--levels", "0"], dir.path()).status.code(),
        Some(2)
    );
    fs::write(dir.path().join("bad.cfg"), "levels = three\n").unwrap();
    assert_eq!(
        wcnn(&["train", "--config", "bad.cfg"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        wcnn(&["train", "--config", "none.cfg"], dir.path())
            .status
            .code(),
        Some(3)
    );
    let mut args = vec!["train", "--data", "nowhere"];
    args.extend(TINY);
    assert_eq!(wcnn(&args, dir.path()).status.code(), Some(3));

    fs::write(
        dir.path().join("broken.ckpt"),
        b"WCNN\x01\x00\x00\x00garbage",
    )
    .unwrap();
    let o = wcnn(&["eval", "--checkpoint", "broken.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(3));

    let o = Command::new(env!("CARGO_BIN_EXE_wcnn"))
        .args(["params", "--levels", "1"])
        .env("WCNN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_wcnn"))
        .args(["params", "--levels", "1"])
        .env("WCNN_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

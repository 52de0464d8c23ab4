use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use decam::io::{
    load_gray, parse_key_values, read_sm_raw, save_image, sm_gray_level, write_sm_raw, RunManifest,
};
use decam::scorer::oracle::Disc;
use decam::tensor::ImageTensor;
use decam::SaliencyMap;

const DISC: &str = "disc:12,12,6";

fn decam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decam"))
        .args(args)
        .env_remove("DECAM_BRIDGE_CMD")
        .output()
        .expect("binary runs")
}

fn textured() -> ImageTensor {
    ImageTensor::from_fn(24, 24, |i, j| {
        0.3 + 0.5 * ((i * 7 + j * 13) % 17) as f64 / 16.0
    })
    .unwrap()
}

fn write_image(dir: &Path) -> String {
    let path = dir.join("input.png");
    save_image(&textured(), &path).unwrap();
    path.display().to_string()
}

fn explain(image: &str, out: &Path, extra: &[&str]) -> Output {
    let out = out.display().to_string();
    let mut args = vec![
        "explain",
        "--image",
        image,
        "--scorer",
        DISC,
        "--pop",
        "60",
        "--max-iter",
        "60",
        "--alpha",
        "1",
        "--seed",
        "3",
        "--quiet",
        "--out-dir",
        &out,
    ];
    args.extend_from_slice(extra);
    decam(&args)
}

fn read_sm(path: &Path) -> SaliencyMap {
    read_sm_raw(fs::File::open(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn explain_is_reproducible_and_localizes() {
    let dir = tempfile::tempdir().unwrap();
    let image = write_image(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = explain(&image, &a, &["--overlay"]);
    assert_eq!(
        code(&first),
        0,
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert_eq!(code(&explain(&image, &b, &["--jobs", "1"])), 0);

    assert_eq!(
        fs::read(a.join("saliency.sm")).unwrap(),
        fs::read(b.join("saliency.sm")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("saliency.png")).unwrap(),
        fs::read(b.join("saliency.png")).unwrap()
    );
    assert!(a.join("overlay.png").exists());
    assert!(!b.join("overlay.png").exists());

    let sm = read_sm(&a.join("saliency.sm"));
    assert_eq!((sm.height(), sm.width()), (24, 24));
    let max = sm.values().iter().cloned().fold(0.0, f64::max);
    assert_eq!(max, 1.0);
    let frac = sm.mass_fraction(&Disc::new(12.0, 12.0, 6.0).indicator(24, 24));
    assert!(frac >= 0.6, "mass inside disc {frac}");

    // PNG gray levels are the quantized raw values
    let gray = load_gray(&a.join("saliency.png")).unwrap();
    for i in 0..24 {
        for j in 0..24 {
            let expect = (255.0 * sm.get(i, j)).round() as u8;
            assert_eq!(gray.get_pixel(j as u32, i as u32).0[0], expect);
            assert_eq!(sm_gray_level(sm.get(i, j)), expect);
        }
    }

    let manifest = RunManifest::from_text(&fs::read_to_string(a.join("manifest.txt")).unwrap());
    assert_eq!(manifest.get("evaluations"), Some("3660"));
    assert_eq!(manifest.get("seed"), Some("3"));
    assert_eq!(manifest.get("alpha_given"), Some("true"));
    assert_eq!(manifest.get("image_shape"), Some("24x24x1"));
    assert_eq!(manifest.get("image_sha256").map(str::len), Some(64));
}

#[test]
fn evaluate_writes_curves_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let image = write_image(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&explain(&image, &run, &[])), 0);
    let sm_path = run.join("saliency.sm").display().to_string();
    let out = run.display().to_string();
    let eval = decam(&[
        "evaluate",
        "--image",
        &image,
        "--sm",
        &sm_path,
        "--scorer",
        DISC,
        "--out-dir",
        &out,
    ]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));

    let report: Vec<(String, String)> =
        parse_key_values(&fs::read_to_string(run.join("report.txt")).unwrap());
    let get = |k: &str| {
        report
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
            .unwrap()
    };
    let ins: f64 = get("auc_insertion").parse().unwrap();
    let del: f64 = get("auc_deletion").parse().unwrap();
    let diff: f64 = get("diff_auc").parse().unwrap();
    assert!((diff - 100.0 * (ins - del)).abs() < 1e-9);
    assert!(diff > 0.0, "DiffAUC {diff}");
    assert_eq!(get("steps"), "100");
    assert_eq!(get("score_kind"), "sigmoid");

    let csv = fs::read_to_string(run.join("insertion.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y"));
    assert_eq!(lines.count(), 101);
}

#[test]
fn evaluate_handles_constant_map_and_coarse_steps() {
    let dir = tempfile::tempdir().unwrap();
    let image = write_image(dir.path());
    let sm_path = dir.path().join("flat.sm");
    let flat = SaliencyMap::new(24, 24, vec![0.5; 576]).unwrap();
    write_sm_raw(&flat, fs::File::create(&sm_path).unwrap()).unwrap();
    let sm = sm_path.display().to_string();
    let out = dir.path().display().to_string();
    let eval = decam(&[
        "evaluate",
        "--image",
        &image,
        "--sm",
        &sm,
        "--scorer",
        DISC,
        "--steps",
        "2",
        "--out-dir",
        &out,
    ]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));

    let csv = fs::read_to_string(dir.path().join("deletion.csv")).unwrap();
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (x, y) = l.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    assert_eq!(
        rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        vec![0.0, 0.5, 1.0]
    );
    assert!(rows
        .iter()
        .all(|r| r.1.is_finite() && (0.0..=1.0).contains(&r.1)));
    // the unmodified image scores logit 0 under the oracle
    assert!((rows[0].1 - 0.5).abs() < 1e-9);
}

#[test]
fn malformed_inputs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let image = write_image(dir.path());
    let out = dir.path().display().to_string();

    let bad = dir.path().join("bad.sm");
    fs::write(&bad, b"DECAMSM1\x18\x00\x00\x00\x18\x00\x00\x00short").unwrap();
    let bad = bad.display().to_string();
    let eval = decam(&[
        "evaluate",
        "--image",
        &image,
        "--sm",
        &bad,
        "--scorer",
        DISC,
        "--out-dir",
        &out,
    ]);
    assert_eq!(code(&eval), 1);

    let small = dir.path().join("small.sm");
    write_sm_raw(
        &SaliencyMap::new(20, 20, vec![0.0; 400]).unwrap(),
        fs::File::create(&small).unwrap(),
    )
    .unwrap();
    let small = small.display().to_string();
    assert_eq!(
        code(&decam(&[
            "evaluate", "--image", &image, "--sm", &small, "--scorer", DISC
        ])),
        1
    );

    assert_eq!(
        code(&decam(&[
            "explain",
            "--image",
            &image,
            "--scorer",
            "disc:oops"
        ])),
        1
    );
    assert_eq!(code(&decam(&["explain", "--image", &image])), 1);
    assert_eq!(
        code(&decam(&[
            "explain", "--image", &image, "--scorer", DISC, "--cr", "1.5"
        ])),
        1
    );
    assert_eq!(code(&decam(&["frobnicate"])), 1);
    assert_eq!(code(&decam(&["--help"])), 0);
}

#[test]
fn bridge_scorer_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let image = write_image(dir.path());
    let serve = format!(
        "{} serve --image {} --scorer {}",
        env!("CARGO_BIN_EXE_decam"),
        image,
        DISC
    );
    let out = dir.path().join("bridged");
    let out_s = out.display().to_string();
    let run = Command::new(env!("CARGO_BIN_EXE_decam"))
        .args([
            "explain",
            "--image",
            &image,
            "--pop",
            "20",
            "--max-iter",
            "5",
            "--quiet",
            "--bridge-workers",
            "2",
            "--out-dir",
            &out_s,
        ])
        .env("DECAM_BRIDGE_CMD", &serve)
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("--alpha not given"), "{stderr}");
    let manifest = RunManifest::from_text(&fs::read_to_string(out.join("manifest.txt")).unwrap());
    assert_eq!(manifest.get("alpha_given"), Some("false"));
    assert_eq!(manifest.get("evaluations"), Some("120"));

    let dead = decam(&[
        "explain",
        "--image",
        &image,
        "--scorer",
        "bridge:exit 0",
        "--alpha",
        "1",
    ]);
    assert_eq!(code(&dead), 2);

    // handshake shape must match the image
    let other = dir.path().join("other.png");
    save_image(&ImageTensor::filled(30, 30, 1, 0.5).unwrap(), &other).unwrap();
    let wrong = format!(
        "bridge:{} serve --image {} --scorer disc:15,15,5",
        env!("CARGO_BIN_EXE_decam"),
        other.display()
    );
    assert_eq!(
        code(&decam(&[
            "explain", "--image", &image, "--scorer", &wrong, "--alpha", "1"
        ])),
        2
    );
}

#[test]
fn selftest_passes() {
    let out = decam(&["selftest", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed"));
}

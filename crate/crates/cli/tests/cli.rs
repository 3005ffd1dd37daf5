use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nnfdk_core::io;

fn nnfdk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnfdk"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &[
    "generate",
    "--n",
    "16",
    "--angles",
    "8",
    "--oversample",
    "1",
];

#[test]
fn generate_writes_spec_geometry_and_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let o = nnfdk(dir.path(), &[SMALL, &["--i0", "256"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "spec.json",
        "geometry.json",
        "ground_truth.raw",
        "clean.raw",
        "noisy.raw",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let (gt, meta) = io::read_volume(&dir.path().join("ground_truth")).unwrap();
    assert_eq!(gt.n, 16);
    let (noisy, nmeta) = io::read_projections(&dir.path().join("noisy")).unwrap();
    assert_eq!((noisy.n_angles, noisy.n_det), (8, 16));
    assert_eq!(meta.config_hash, nmeta.config_hash);
    assert_eq!(nmeta.config.unwrap()["phantom"]["i0"], 256.0);
}

#[test]
fn reconstruct_reports_projector_work() {
    let dir = tempfile::tempdir().unwrap();
    assert!(nnfdk(dir.path(), SMALL).status.success());
    let input = dir.path().join("noisy");
    let input = input.to_str().unwrap();

    let o = nnfdk(
        dir.path(),
        &[
            "reconstruct",
            "--input",
            input,
            "--method",
            "sirt+",
            "--iterations",
            "200",
        ],
    );
    assert!(o.status.success());
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let cols: Vec<&str> = line.split('\t').collect();
    assert_eq!(&cols[..6], ["sirt+", "200", "200", "0", "400", "2"]);
    let ops: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sirt_plus.ops.json")).unwrap())
            .unwrap();
    assert_eq!(ops["projector_calls"], 400);
    assert!(dir.path().join("sirt_plus.residuals.tsv").exists());

    let o = nnfdk(
        dir.path(),
        &["reconstruct", "--input", input, "--method", "fdk-hann"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("fdk-hann\t0\t1\t1\t1\t0"));
}

#[test]
fn fdk_of_zero_data_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("zeros");
    let g = nnfdk_core::ConeBeamGeometry::new(8, 4, 10.0, 10.0).unwrap();
    let meta = io::ArrayMeta::projections(4, 8).with_geometry(&g);
    io::write_array(&base, &vec![0.0; 4 * 64], &meta).unwrap();
    let o = nnfdk(
        dir.path(),
        &[
            "reconstruct",
            "--input",
            base.to_str().unwrap(),
            "--method",
            "fdk-ramlak",
            "--name",
            "r",
        ],
    );
    assert!(o.status.success());
    let (v, _) = io::read_volume(&dir.path().join("r")).unwrap();
    assert!(v.data.iter().all(|&x| x == 0.0));
}

#[test]
fn train_then_nn_fdk_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, "[geometry]\nn_voxels = 16\nn_angles = 8\n[phantom]\noversample = 1.0\ni0 = 1024.0\n[train]\nn_train = 400\nn_val = 200\n[train.lma]\nmax_iterations = 20\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    for s in ["1", "2"] {
        let out = d.join(format!("ds{s}"));
        let o = nnfdk(&out, &["--config", cfg, "--seed", s, "generate"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ds1 = d.join("ds1");
    let o = nnfdk(
        d,
        &["--config", cfg, "train", "--data", ds1.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("network.history.tsv").exists());
    let net = d.join("network.json");

    let input = d.join("ds2/noisy");
    let o = nnfdk(
        d,
        &[
            "--config",
            cfg,
            "reconstruct",
            "--input",
            input.to_str().unwrap(),
            "--method",
            "nn-fdk",
            "--network",
            net.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("nn-fdk\t0\t4\t4\t4\t0"));

    let hq = d.join("ds2/ground_truth");
    let o = nnfdk(
        d,
        &[
            "evaluate",
            "--hq",
            hq.to_str().unwrap(),
            "--recon",
            d.join("nn-fdk").to_str().unwrap(),
            hq.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "name\ttse\tssim");
    lines.next().unwrap();
    assert_eq!(lines.next().unwrap(), "ground_truth\t0e0\t1.000000");
    assert_eq!(fs::read_to_string(d.join("metrics.tsv")).unwrap(), text);
    assert!(d.join("nn-fdk_z.png").exists() && d.join("nn-fdk_x.png").exists());
}

#[test]
fn segment_labels_shell_kernel_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = nnfdk(
        d,
        &[
            "generate",
            "--family",
            "shell_kernel",
            "--n",
            "48",
            "--angles",
            "2",
            "--oversample",
            "1",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = nnfdk(
        d,
        &[
            "segment",
            "--input",
            d.join("ground_truth").to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for class in ["shell", "empty_space", "kernel"] {
        let count: usize = text
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{class}\t")))
            .unwrap()
            .parse()
            .unwrap();
        assert!(count > 0, "{class}");
    }
    let gold = d.join("segmentation");
    let o = nnfdk(
        d,
        &[
            "evaluate",
            "--no-png",
            "--hq",
            d.join("ground_truth").to_str().unwrap(),
            "--recon",
            d.join("ground_truth").to_str().unwrap(),
            "--gold-seg",
            gold.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o)
        .lines()
        .nth(1)
        .unwrap()
        .ends_with("0.000000\t0.000000\t1.000000"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nnfdk(d, &["--help"]).status.code(), Some(0));
    assert_eq!(nnfdk(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        nnfdk(d, &["generate", "--source-factor", "0.1"])
            .status
            .code(),
        Some(1)
    );
    let bad = d.join("bad.toml");
    fs::write(&bad, "seed = \"x\"\n").unwrap();
    let o = nnfdk(d, &["--config", bad.to_str().unwrap(), "generate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    // Missing input is a runtime failure.
    let o = nnfdk(
        d,
        &["reconstruct", "--input", d.join("nope").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    // Uniform volume cannot be segmented.
    io::write_array(&d.join("flat"), &[0.5; 512], &io::ArrayMeta::volume(8)).unwrap();
    assert_eq!(
        nnfdk(d, &["segment", "--input", d.join("flat").to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn nn_fdk_without_network_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(nnfdk(dir.path(), SMALL).status.success());
    let input = dir.path().join("noisy");
    let o = nnfdk(
        dir.path(),
        &[
            "reconstruct",
            "--input",
            input.to_str().unwrap(),
            "--method",
            "nn-fdk",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

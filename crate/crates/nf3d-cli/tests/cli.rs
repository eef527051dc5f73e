//! End-to-end tests running the actual binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nf3d::compress::{entropy_encode, quantize};
use nf3d::field::{init_params, FieldKind, ModelConfig};
use nf3d::geometry::{Normalization, Shape};
use nf3d::io::{load_shape, save_mesh_obj};
use nf3d::primitives::icosphere;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nf3d")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nf3d-cli-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn sphere_obj(dir: &Path) -> PathBuf {
    let path = dir.join("sphere.obj");
    save_mesh_obj(&icosphere(0.5f64, 2), &path).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

/// Small-but-real encode settings shared by the tests.
fn quick_flags<'a>() -> Vec<&'a str> {
    vec![
        "--m-total", "1500", "--epochs", "5", "--batch-size", "500", "--qat-epochs", "0",
        "--seed-params", "1", "--seed-data", "2", "--r-mc", "24", "--eval-points", "500",
    ]
}

#[test]
fn encode_writes_small_bitstream() {
    let dir = tmp_dir("encode");
    let input = sphere_obj(&dir);
    let out = dir.join("sphere.nf3d");
    let mut args = vec![
        "encode",
        input.to_str().unwrap(),
        out.to_str().unwrap(),
        "--kind",
        "sdf",
        "--width",
        "16",
    ];
    args.extend(quick_flags());
    let res = run(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let size = std::fs::metadata(&out).unwrap().len();
    assert!(size > 0 && size <= 6 * 1024, "bitstream size {size}");
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("bytes = "));
    assert!(stdout.contains("encode_seconds = "));
}

#[test]
fn encode_sdf_on_point_cloud_exits_2() {
    let dir = tmp_dir("sdf-cloud");
    // XYZ input is always a point cloud
    let input = dir.join("cloud.xyz");
    std::fs::write(&input, "0 0 0\n1 0 0\n0 1 0\n0 0 1\n").unwrap();
    let out = dir.join("x.nf3d");
    let mut args = vec![
        "encode",
        input.to_str().unwrap(),
        out.to_str().unwrap(),
        "--kind",
        "sdf",
        "--width",
        "8",
    ];
    args.extend(quick_flags());
    let res = run(&args);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn identical_seeds_reproduce_identical_files() {
    let dir = tmp_dir("determinism");
    let input = sphere_obj(&dir);
    let out_a = dir.join("a.nf3d");
    let out_b = dir.join("b.nf3d");
    for out in [&out_a, &out_b] {
        let mut args = vec![
            "encode",
            input.to_str().unwrap(),
            out.to_str().unwrap(),
            "--kind",
            "udf",
            "--width",
            "8",
        ];
        args.extend(quick_flags());
        let res = run(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
}

#[test]
fn corrupted_stream_exits_4() {
    let dir = tmp_dir("crc");
    let input = sphere_obj(&dir);
    let out = dir.join("sphere.nf3d");
    let mut args = vec![
        "encode",
        input.to_str().unwrap(),
        out.to_str().unwrap(),
        "--kind",
        "sdf",
        "--width",
        "8",
    ];
    args.extend(quick_flags());
    assert!(run(&args).status.success());
    let mut bytes = std::fs::read(&out).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&out, &bytes).unwrap();
    let res = run(&["decode", out.to_str().unwrap(), dir.join("m.obj").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&res.stderr).contains("checksum"));
}

#[test]
fn empty_isosurface_exits_5() {
    // A field that is positive everywhere: all-zero weights except a large
    // positive output bias.
    let dir = tmp_dir("empty-iso");
    let cfg = ModelConfig::<f64>::geometry(FieldKind::Sdf, 8);
    let mut model = init_params(&cfg, 0);
    for l in &mut model.layers {
        l.weights.iter_mut().for_each(|w| *w = 0.0);
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let out_idx = model.num_hidden;
    model.layers[out_idx].bias[0] = 0.9;
    let q = quantize(&model, 8).unwrap();
    let field = entropy_encode(&q, &Normalization::<f32>::identity()).unwrap();
    let path = dir.join("positive.nf3d");
    field.write_to(&path).unwrap();
    let res = run(&[
        "decode",
        path.to_str().unwrap(),
        dir.join("m.obj").to_str().unwrap(),
        "--r-mc",
        "16",
    ]);
    assert_eq!(res.status.code(), Some(5), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn decode_points_roundtrip_counts_and_frame() {
    let dir = tmp_dir("decode-points");
    let input = sphere_obj(&dir);
    let out = dir.join("sphere.nf3d");
    let mut args = vec![
        "encode",
        input.to_str().unwrap(),
        out.to_str().unwrap(),
        "--kind",
        "sdf",
        "--width",
        "16",
        "--lr",
        "1e-3",
    ];
    args.extend(["--m-total", "2000", "--epochs", "40", "--batch-size", "500"]);
    args.extend(["--qat-epochs", "0", "--seed-params", "3", "--seed-data", "4"]);
    let res = run(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let ply = dir.join("points.ply");
    let res = run(&[
        "decode",
        out.to_str().unwrap(),
        ply.to_str().unwrap(),
        "--points",
        "2000",
        "--r-mc",
        "32",
        "--seed",
        "5",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let Shape::Cloud(cloud) = load_shape::<f64>(&ply).unwrap() else {
        panic!("expected point cloud")
    };
    assert_eq!(cloud.len(), 2000);
    // back in the original frame: near the radius-0.5 sphere
    let mean_r: f64 =
        cloud.points.iter().map(|p| p.norm()).sum::<f64>() / cloud.len() as f64;
    assert!((mean_r - 0.5).abs() < 0.15, "mean radius {mean_r}");
}

#[test]
fn eval_same_cloud_reports_zero() {
    let dir = tmp_dir("eval");
    let cloud = dir.join("pts.xyz");
    std::fs::write(&cloud, "0 0 0\n1 0 0\n0 1 0\n0.5 0.5 0.5\n").unwrap();
    let res = run(&["eval", cloud.to_str().unwrap(), cloud.to_str().unwrap()]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next().unwrap(), "cd,psnr");
    let row = lines.next().unwrap();
    assert_eq!(row, "0,");
}

#[test]
fn eval_same_mesh_lands_on_sampling_floor() {
    // Two independent samplings of the same surface: the Chamfer distance
    // sits near the A/(pi n) nearest-neighbor floor, far below any real
    // reconstruction error at this scale.
    let dir = tmp_dir("eval-mesh");
    let input = sphere_obj(&dir);
    let res = run(&[
        "eval",
        input.to_str().unwrap(),
        input.to_str().unwrap(),
        "--points",
        "2000",
        "--seed",
        "7",
    ]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    let cd: f64 = stdout.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    let floor = 4.0 / 2000.0; // unit sphere area over pi n
    assert!(cd > 0.0 && cd < 4.0 * floor, "cd {cd} vs floor {floor}");
}

#[test]
fn eval_identical_colored_clouds_cap_psnr() {
    let dir = tmp_dir("eval-psnr");
    let cloud = dir.join("colored.xyz");
    std::fs::write(&cloud, "0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n0 0 1 10 20 30\n")
        .unwrap();
    let res = run(&["eval", cloud.to_str().unwrap(), cloud.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    let row = stdout.lines().nth(1).unwrap();
    assert_eq!(row, "0,100");
}

#[test]
fn sweep_writes_requested_rows() {
    let dir = tmp_dir("sweep");
    let input = sphere_obj(&dir);
    let csv_path = dir.join("rd.csv");
    let svg_path = dir.join("rd.svg");
    let mut args = vec![
        "sweep",
        input.to_str().unwrap(),
        "--widths",
        "8,12",
        "--kind",
        "sdf",
        "--csv",
        csv_path.to_str().unwrap(),
        "--svg",
        svg_path.to_str().unwrap(),
    ];
    args.extend(quick_flags());
    let res = run(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "width,bytes,cd,psnr,t_encode_s,t_decode_s");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("8,"));
    assert!(lines[2].starts_with("12,"));
    assert!(std::fs::read_to_string(&svg_path).unwrap().contains("<svg"));
}

#[test]
fn print_config_round_trips_through_file() {
    let dir = tmp_dir("config");
    let input = sphere_obj(&dir);
    let res = run(&[
        "encode",
        input.to_str().unwrap(),
        dir.join("x.nf3d").to_str().unwrap(),
        "--kind",
        "sdf",
        "--width",
        "48",
        "--sigma",
        "0.02",
        "--seed-params",
        "11",
        "--seed-data",
        "12",
        "--print-config",
    ]);
    assert!(res.status.success());
    let config_text = String::from_utf8_lossy(&res.stdout).to_string();
    assert!(config_text.contains("width = 48"));
    assert!(config_text.contains("sigma = 0.02"));
    // feed the echoed config back through a file: identical echo
    let cfg_path = dir.join("run.cfg");
    std::fs::write(&cfg_path, &config_text).unwrap();
    let res2 = run(&[
        "encode",
        input.to_str().unwrap(),
        dir.join("y.nf3d").to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
        "--print-config",
    ]);
    assert!(res2.status.success());
    assert_eq!(config_text, String::from_utf8_lossy(&res2.stdout));
}

#[test]
fn missing_input_exits_1() {
    let dir = tmp_dir("missing");
    let res = run(&[
        "encode",
        dir.join("nope.obj").to_str().unwrap(),
        dir.join("out.nf3d").to_str().unwrap(),
        "--seed-params",
        "1",
        "--seed-data",
        "1",
    ]);
    assert_eq!(res.status.code(), Some(1));
}

// Temporary calibration harness for acceptance fixture sizing.
use std::time::Instant;

use nf3d::geometry::{normalize, sample_surface, Shape, Normalization, PointCloud};
use nf3d::metrics::chamfer;
use nf3d::oracle::DistanceKind;
use nf3d::pipeline::{decode_mesh, encode_shape, CodecConfig};
use nf3d::primitives::icosphere;
use nf3d::extract::decode_to_pointcloud;

fn run_one(kind: DistanceKind, width: usize, m: usize, batch: usize, epochs: usize,
           pseed: u64, dseed: u64, r_mc: usize, head: Option<nf3d::field::HeadActivation>) -> (f64, usize, f64) {
    let mesh = icosphere(0.5f64, 4);
    let shape = Shape::Mesh(mesh);
    let mut cfg = CodecConfig::new(kind, width);
    cfg.m_total = m;
    cfg.train.batch_size = batch;
    cfg.train.epochs = epochs;
    cfg.train.param_seed = pseed;
    cfg.data_seed = dseed;
    cfg.head = head;
    cfg.r_mc = r_mc;
    cfg.eval_points = 100_000;
    let t0 = Instant::now();
    let out = encode_shape(&shape, &cfg).unwrap();
    let t_enc = t0.elapsed().as_secs_f64();
    let bytes = out.total_bytes();

    // decode in normalized coords
    let (dmesh, model, _) = decode_mesh::<f64>(&out.geometry, r_mc).unwrap();
    let dmesh = if head == Some(nf3d::field::HeadActivation::Identity) && kind == DistanceKind::Unsigned {
        // ablation path: extract with the model's own head in memory
        let grid = nf3d::extract::evaluate_grid(&model, r_mc, true).unwrap();
        nf3d::extract::marching_cubes_udf(&grid, nf3d::extract::default_band(r_mc)).unwrap()
    } else { dmesh };
    let rec = decode_to_pointcloud(&dmesh, 100_000, &Normalization::identity(), None, 99).unwrap();

    let (nshape, _) = normalize(&Shape::Mesh(icosphere(0.5f64, 4))).unwrap();
    let Shape::Mesh(nmesh) = nshape else { panic!() };
    let gt: PointCloud<f64> = sample_surface(&nmesh, 100_000, 1234).unwrap();
    let cd = chamfer(&gt, &rec).unwrap();
    println!("kind={kind:?} w={width} m={m} batch={batch} ep={epochs} seeds=({pseed},{dseed}) head={head:?} -> cd={cd:.3e} bytes={bytes} t={t_enc:.0}s");
    (cd, bytes, t_enc)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("sdf32");
    match mode {
        "sdf32" => {
            run_one(DistanceKind::Signed, 32, 60_000, 2_000, 500, 7, 11, 128, None);
        }
        "udf32" => {
            run_one(DistanceKind::Unsigned, 32, 60_000, 2_000, 500, 7, 11, 128, None);
        }
        "w16quick" => {
            run_one(DistanceKind::Unsigned, 16, 30_000, 2_000, 250, 7, 11, 96, None);
            run_one(DistanceKind::Unsigned, 16, 30_000, 2_000, 250, 7, 11, 96, Some(nf3d::field::HeadActivation::Identity));
        }
        other => eprintln!("unknown mode {other}"),
    }
}

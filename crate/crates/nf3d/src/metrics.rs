//! Distortion metrics (Chamfer distance, color PSNR) and the
//! rate-distortion sweep.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extract::decode_to_pointcloud;
use crate::geometry::{normalize, Normalization, PointCloud, Shape};
use crate::io::color_to_u8;
use crate::num::Real;
use crate::pipeline::{decode_mesh, encode_shape, CodecConfig};
use crate::seeds::derive_seed;
use crate::spatial::KdTree;

/// Symmetric squared Chamfer distance:
/// `CD = 1/2 (mean_a min||a-b||^2 + mean_b min||b-a||^2)`.
pub fn chamfer<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("chamfer distance of an empty cloud".into()));
    }
    Ok((directed_mean_sq(a, b)? + directed_mean_sq(b, a)?) * T::of(0.5))
}

fn directed_mean_sq<T: Real>(from: &PointCloud<T>, to: &PointCloud<T>) -> Result<T> {
    let tree = KdTree::build(&to.points)?;
    let total: T = from
        .points
        .par_iter()
        .map(|&p| tree.nearest_squared(p).0)
        .collect::<Vec<T>>()
        .into_iter()
        .fold(T::zero(), |acc, d| acc + d);
    Ok(total / T::of(from.len() as f64))
}

/// Symmetric nearest-neighbor color PSNR in 8-bit space: each direction
/// matches every point to its nearest neighbor in the other cloud, takes
/// the mean squared 8-bit color error over points and channels, and
/// converts to dB with peak 255; the result is the mean of both
/// directions. Zero error saturates at 100 dB.
pub fn attribute_psnr<T: Real>(gt: &PointCloud<T>, rec: &PointCloud<T>) -> Result<f64> {
    let d1 = directed_psnr(gt, rec)?;
    let d2 = directed_psnr(rec, gt)?;
    Ok((d1 + d2) / 2.0)
}

const PSNR_CAP_DB: f64 = 100.0;

fn directed_psnr<T: Real>(from: &PointCloud<T>, to: &PointCloud<T>) -> Result<f64> {
    let from_colors = from
        .colors
        .as_ref()
        .ok_or_else(|| Error::MissingColors("PSNR needs colors on both clouds".into()))?;
    let to_colors = to
        .colors
        .as_ref()
        .ok_or_else(|| Error::MissingColors("PSNR needs colors on both clouds".into()))?;
    if from.is_empty() || to.is_empty() {
        return Err(Error::Config("PSNR of an empty cloud".into()));
    }
    let tree = KdTree::build(&to.points)?;
    let sq_sum: f64 = from
        .points
        .par_iter()
        .zip(from_colors.par_iter())
        .map(|(&p, &c)| {
            let nn = tree.nearest(p).1;
            let d = to_colors[nn];
            let mut acc = 0.0f64;
            for ch in 0..3 {
                let a = color_to_u8(c[ch]) as f64;
                let b = color_to_u8(d[ch]) as f64;
                acc += (a - b) * (a - b);
            }
            acc
        })
        .sum();
    let mse = sq_sum / (from.len() as f64 * 3.0);
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// One rate-distortion measurement; a failed decode keeps the rate side
/// and records the failure.
#[derive(Clone, Debug)]
pub struct RDPoint {
    pub width: usize,
    pub bitwidth: u8,
    pub bytes: usize,
    pub cd: Option<f64>,
    pub psnr: Option<f64>,
    pub t_encode_s: f64,
    pub t_decode_s: f64,
    pub error: Option<String>,
}

/// Which axis the sweep walks.
#[derive(Clone, Debug)]
pub enum SweepAxis {
    /// The paper's rate control: MLP hidden width.
    Width(Vec<usize>),
    /// Quantization bitwidth at fixed width.
    Bitwidth(Vec<u8>),
}

/// Run the full encode/decode/measure loop for each sweep point. Points
/// run sequentially by default for reproducible timing; `parallel` runs
/// them concurrently with identical metric results.
pub fn rd_sweep<T: Real>(
    shape: &Shape<T>,
    base: &CodecConfig<T>,
    axis: &SweepAxis,
    parallel: bool,
) -> Result<Vec<RDPoint>> {
    base.validate(shape)?;
    let (normalized, _) = normalize(shape)?;
    let eval_seed = derive_seed(base.data_seed, 0x4556414c, 0);
    // Ground-truth evaluation cloud in normalized coordinates.
    let gt_cloud: PointCloud<T> = match &normalized {
        Shape::Mesh(m) => crate::geometry::sample_surface(m, base.eval_points, eval_seed)?,
        Shape::Cloud(c) => c.clone(),
    };

    let configs: Vec<CodecConfig<T>> = match axis {
        SweepAxis::Width(widths) => widths
            .iter()
            .map(|&w| {
                let mut cfg = base.clone();
                cfg.width = w;
                cfg
            })
            .collect(),
        SweepAxis::Bitwidth(bits) => bits
            .iter()
            .map(|&b| {
                let mut cfg = base.clone();
                cfg.bitwidth = b;
                cfg
            })
            .collect(),
    };

    let run = |cfg: &CodecConfig<T>| sweep_point(shape, &gt_cloud, cfg, eval_seed);
    let points: Vec<RDPoint> = if parallel {
        configs.par_iter().map(run).collect()
    } else {
        configs.iter().map(run).collect()
    };
    Ok(points)
}

fn sweep_point<T: Real>(
    shape: &Shape<T>,
    gt_cloud: &PointCloud<T>,
    cfg: &CodecConfig<T>,
    eval_seed: u64,
) -> RDPoint {
    let mut point = RDPoint {
        width: cfg.width,
        bitwidth: cfg.bitwidth,
        bytes: 0,
        cd: None,
        psnr: None,
        t_encode_s: 0.0,
        t_decode_s: 0.0,
        error: None,
    };
    let t0 = Instant::now();
    let encoded = match encode_shape(shape, cfg) {
        Ok(out) => out,
        Err(e) => {
            point.error = Some(e.to_string());
            return point;
        }
    };
    point.t_encode_s = t0.elapsed().as_secs_f64();
    point.bytes = encoded.total_bytes();

    let t1 = Instant::now();
    let decoded = decode_normalized_cloud(&encoded, cfg, eval_seed);
    point.t_decode_s = t1.elapsed().as_secs_f64();
    match decoded {
        Ok(cloud) => {
            point.cd = chamfer(gt_cloud, &cloud).ok().map(|c| c.to_f64_lossy());
            if gt_cloud.colors.is_some() && cloud.colors.is_some() {
                point.psnr = attribute_psnr(gt_cloud, &cloud).ok();
            }
        }
        Err(e) => point.error = Some(e.to_string()),
    }
    point
}

/// Decode into normalized coordinates (identity transform) so distortion is
/// measured in the frame the paper reports.
fn decode_normalized_cloud<T: Real>(
    encoded: &crate::pipeline::EncodeOutput<T>,
    cfg: &CodecConfig<T>,
    eval_seed: u64,
) -> Result<PointCloud<T>> {
    let (mesh, model, _) = decode_mesh::<T>(&encoded.geometry, cfg.r_mc)?;
    let attr_model = match &encoded.attributes {
        Some(stream) => {
            let (q, _) = crate::compress::entropy_decode(stream)?;
            Some(crate::compress::dequantize::<T>(&q)?)
        }
        None if model.kind.is_joint() => Some(model.clone()),
        None => None,
    };
    decode_to_pointcloud(
        &mesh,
        cfg.eval_points,
        &Normalization::identity(),
        attr_model.as_ref(),
        derive_seed(eval_seed, 0x44454321, 0),
    )
}

/// CSV with the fixed header `width,bytes,cd,psnr,t_encode_s,t_decode_s`.
pub fn rd_csv(points: &[RDPoint]) -> String {
    let mut out = String::from("width,bytes,cd,psnr,t_encode_s,t_decode_s\n");
    for p in points {
        let cd = p.cd.map(|v| v.to_string()).unwrap_or_default();
        let psnr = p.psnr.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.width, p.bytes, cd, psnr, p.t_encode_s, p.t_decode_s
        ));
    }
    out
}

/// Minimal SVG scatter of the rate-distortion points (bytes vs Chamfer
/// distance), one circle per successful point with a connecting polyline.
pub fn rd_svg(points: &[RDPoint]) -> String {
    let good: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.cd.map(|cd| (p.bytes as f64, cd)))
        .collect();
    let (w, h, margin) = (640.0, 480.0, 60.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<g stroke=\"black\" fill=\"none\">\
         <line x1=\"{margin}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\
         <line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{}\"/></g>\n",
        h - margin,
        w - margin,
        h - margin,
        h - margin
    ));
    if !good.is_empty() {
        let (xmin, xmax) = good
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
        let (ymin, ymax) = good
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        let xspan = (xmax - xmin).max(1e-12);
        let yspan = (ymax - ymin).max(1e-30);
        let map = |x: f64, y: f64| {
            (
                margin + (x - xmin) / xspan * (w - 2.0 * margin),
                h - margin - (y - ymin) / yspan * (h - 2.0 * margin),
            )
        };
        let path: Vec<String> = good
            .iter()
            .map(|&(x, y)| {
                let (px, py) = map(x, y);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in &good {
            let (px, py) = map(x, y);
            svg.push_str(&format!(
                "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"4\" fill=\"steelblue\"/>\n"
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{margin}\" y=\"{}\" font-size=\"12\">bytes: {xmin:.0} .. {xmax:.0}</text>\n",
            h - margin / 2.0
        ));
        svg.push_str(&format!(
            "<text x=\"5\" y=\"{margin}\" font-size=\"12\">cd: {ymin:.2e} .. {ymax:.2e}</text>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

//! End-to-end codec composition: normalize, supervise, fit, compress on the
//! way in; decode, extract, resample on the way out. Used by both the
//! rate-distortion sweep and the command-line front end.

use crate::attribute::{build_attribute_set, compress_attributes, joint_colors, AttributeSettings};
use crate::compress::{compress_pipeline, entropy_decode, dequantize, CompressedField};
use crate::error::{Error, Result};
use crate::extract::{
    decode_to_pointcloud, default_band, evaluate_grid, marching_cubes_sdf, marching_cubes_udf,
};
use crate::field::{init_params, FieldKind, FieldModel, HeadActivation, ModelConfig, EncodingConfig};
use crate::geometry::{normalize, Normalization, PointCloud, Shape, TriMesh};
use crate::num::Real;
use crate::oracle::{DistanceKind, GroundTruthField};
use crate::sampler::build_training_set;
use crate::seeds::derive_seed;
use crate::train::{fit, TrainConfig, TrainData};

/// Paper-default hyperparameters, collected in one place.
pub mod defaults {
    pub const LEARNING_RATE: f64 = 1e-4;
    pub const EPOCHS: usize = 500;
    pub const BATCH_SIZE: usize = 10_000;
    pub const LAMBDA_L1: f64 = 1e-8;
    pub const LAMBDA_ATTR: f64 = 1e-3;
    pub const D_STAR: f64 = 0.1;
    pub const SIGMA_SDF: f64 = 0.01;
    pub const SIGMA_UDF: f64 = 0.025;
    pub const OMEGA0: f64 = 30.0;
    pub const SIGMA_P: f64 = 1.4;
    pub const ENC_LEVELS_GEOMETRY: usize = 16;
    pub const ENC_LEVELS_ATTRIBUTE: usize = 8;
    pub const NUM_HIDDEN: usize = 2;
    pub const TRAIN_SET_SIZE: usize = 250_000;
    pub const BITWIDTH: u8 = 8;
    pub const QAT_EPOCHS: usize = 50;
    pub const QAT_LR: f64 = 1e-7;
    pub const MC_RESOLUTION: usize = 256;
    pub const EVAL_POINTS: usize = 100_000;
    pub const SWEEP_WIDTHS: [usize; 6] = [16, 24, 32, 48, 64, 96];
}

/// Everything one encode run needs; field defaults follow the paper table.
#[derive(Clone, Debug)]
pub struct CodecConfig<T> {
    pub kind: DistanceKind,
    pub width: usize,
    pub levels: usize,
    pub sigma_p: T,
    pub omega0: T,
    pub num_hidden: usize,
    pub d_star: T,
    /// `None` selects the canonical head; ablation values are in-memory only.
    pub head: Option<HeadActivation>,
    /// Truncation ablation switch; `false` regresses raw distances.
    pub truncated: bool,
    /// Training-noise sigma; `None` selects the kind default.
    pub sigma: Option<T>,
    pub m_total: usize,
    pub bitwidth: u8,
    pub train: TrainConfig<T>,
    pub qat: TrainConfig<T>,
    pub data_seed: u64,
    /// Fit a single joint geometry+attribute field instead of two.
    pub joint: bool,
    /// Fit the sequential attribute stream when the input has colors.
    pub attributes: bool,
    pub attr_width: Option<usize>,
    pub r_mc: usize,
    pub eval_points: usize,
}

impl<T: Real> CodecConfig<T> {
    pub fn new(kind: DistanceKind, width: usize) -> Self {
        Self {
            kind,
            width,
            levels: defaults::ENC_LEVELS_GEOMETRY,
            sigma_p: T::of(defaults::SIGMA_P),
            omega0: T::of(defaults::OMEGA0),
            num_hidden: defaults::NUM_HIDDEN,
            d_star: T::of(defaults::D_STAR),
            head: None,
            truncated: true,
            sigma: None,
            m_total: defaults::TRAIN_SET_SIZE,
            bitwidth: defaults::BITWIDTH,
            train: TrainConfig::default(),
            qat: TrainConfig::qat(),
            data_seed: 0,
            joint: false,
            attributes: false,
            attr_width: None,
            r_mc: defaults::MC_RESOLUTION,
            eval_points: defaults::EVAL_POINTS,
        }
    }

    pub fn sigma_value(&self) -> T {
        self.sigma.unwrap_or(match self.kind {
            DistanceKind::Signed => T::of(defaults::SIGMA_SDF),
            DistanceKind::Unsigned => T::of(defaults::SIGMA_UDF),
        })
    }

    pub fn field_kind(&self) -> FieldKind {
        match (self.kind, self.joint) {
            (DistanceKind::Unsigned, false) => FieldKind::Udf,
            (DistanceKind::Signed, false) => FieldKind::Sdf,
            (DistanceKind::Unsigned, true) => FieldKind::JointUdf,
            (DistanceKind::Signed, true) => FieldKind::JointSdf,
        }
    }

    pub fn model_config(&self) -> ModelConfig<T> {
        ModelConfig {
            kind: self.field_kind(),
            head: self.head,
            encoding: EncodingConfig { levels: self.levels, sigma_p: self.sigma_p },
            hidden_width: self.width,
            num_hidden: self.num_hidden,
            omega0: self.omega0,
            d_star: self.d_star,
        }
    }

    /// Reject invalid combinations before any work starts.
    pub fn validate(&self, shape: &Shape<T>) -> Result<()> {
        if let Shape::Cloud(_) = shape {
            if self.kind == DistanceKind::Signed {
                return Err(Error::Config(
                    "signed distance fields require a mesh input".into(),
                ));
            }
        }
        let has_colors = matches!(shape, Shape::Cloud(pc) if pc.colors.is_some());
        if (self.attributes || self.joint) && !has_colors {
            return Err(Error::MissingColors(
                "attribute compression needs a colored point cloud input".into(),
            ));
        }
        if self.attributes && self.joint {
            return Err(Error::Config(
                "joint mode already carries attributes; drop one of the flags".into(),
            ));
        }
        self.train.validate()?;
        self.qat.validate()?;
        Ok(())
    }
}

/// Result of one encode run.
pub struct EncodeOutput<T> {
    pub geometry: CompressedField,
    /// Sequential attribute stream, when requested.
    pub attributes: Option<CompressedField>,
    pub norm: Normalization<T>,
    pub loss_history: Vec<T>,
    /// The trained full-precision shadow (geometry or joint field).
    pub model: FieldModel<T>,
}

impl<T: Real> EncodeOutput<T> {
    pub fn total_bytes(&self) -> usize {
        self.geometry.total_size_bytes()
            + self.attributes.as_ref().map_or(0, |a| a.total_size_bytes())
    }
}

/// Full encode: normalize, label the training mixture, overfit, compress;
/// optionally follow with the sequential attribute stage.
pub fn encode_shape<T: Real>(raw: &Shape<T>, cfg: &CodecConfig<T>) -> Result<EncodeOutput<T>> {
    cfg.validate(raw)?;
    let (shape, norm) = normalize(raw)?;
    let oracle = GroundTruthField::new(&shape, cfg.kind, cfg.d_star)?;
    let ts = build_training_set(&oracle, &shape, cfg.m_total, cfg.sigma_value(), cfg.data_seed)?;

    let mut model = init_params(&cfg.model_config(), cfg.train.param_seed);
    let norm32 = norm.cast::<f32>();

    let (history, geometry) = if cfg.joint {
        let Shape::Cloud(pc) = &shape else {
            return Err(Error::Config("joint mode expects a point cloud input".into()));
        };
        let colors = joint_colors(&ts, pc)?;
        let data = TrainData::Joint {
            points: &ts.points,
            distances: &ts.distances,
            colors: &colors,
            d_star: cfg.d_star,
        };
        let history = fit(&mut model, &data, &cfg.train)?;
        let field = compress_pipeline(&model, &data, cfg.bitwidth, &cfg.qat, &norm32)?;
        (history, field)
    } else {
        let data = TrainData::Geometry {
            points: &ts.points,
            distances: &ts.distances,
            d_star: cfg.d_star,
        };
        let history = fit(&mut model, &data, &cfg.train)?;
        let field = compress_pipeline(&model, &data, cfg.bitwidth, &cfg.qat, &norm32)?;
        (history, field)
    };

    let attributes = if cfg.attributes {
        let Shape::Cloud(pc) = &shape else { unreachable!("validated colored cloud") };
        // Sequential stage: decode the geometry stream and train colors on
        // the approximated surface.
        let decoded_mesh = decode_mesh::<T>(&geometry, cfg.r_mc)?.0;
        let attr_seed = derive_seed(cfg.data_seed, 0x434f4c4f, 0);
        let set = build_attribute_set(&decoded_mesh, pc, cfg.m_total, attr_seed)?;
        let mut settings =
            AttributeSettings::new(cfg.attr_width.unwrap_or(cfg.width), cfg.train.param_seed);
        settings.train.lambda_l1 = cfg.train.lambda_l1;
        settings.train.epochs = cfg.train.epochs;
        settings.train.batch_size = cfg.train.batch_size;
        settings.train.lr = cfg.train.lr;
        settings.bitwidth = cfg.bitwidth;
        settings.qat.epochs = cfg.qat.epochs;
        settings.qat.lr = cfg.qat.lr;
        let (field, _, _) = compress_attributes(&set, &settings, &norm32)?;
        Some(field)
    } else {
        None
    };

    Ok(EncodeOutput { geometry, attributes, norm, loss_history: history, model })
}

/// Decode a geometry bitstream into the extracted mesh (normalized
/// coordinates), the restored model and the stored normalization.
pub fn decode_mesh<T: Real>(
    field: &CompressedField,
    r_mc: usize,
) -> Result<(TriMesh<T>, FieldModel<T>, Normalization<T>)> {
    let (q, norm32) = entropy_decode(field)?;
    let model: FieldModel<T> = dequantize(&q)?;
    if !model.kind.is_geometry() {
        return Err(Error::Config(
            "stream holds an attribute field, not geometry".into(),
        ));
    }
    let unsigned = matches!(model.kind, FieldKind::Udf | FieldKind::JointUdf);
    let grid = evaluate_grid(&model, r_mc, unsigned)?;
    let mesh = if unsigned {
        marching_cubes_udf(&grid, default_band(r_mc))?
    } else {
        marching_cubes_sdf(&grid, T::zero())
    };
    Ok((mesh, model, norm32.cast()))
}

/// Decode to a point cloud in the original coordinate frame, attaching
/// colors from a sibling attribute stream or from a joint field.
pub fn decode_cloud<T: Real>(
    field: &CompressedField,
    attributes: Option<&CompressedField>,
    r_mc: usize,
    n_points: usize,
    seed: u64,
) -> Result<(PointCloud<T>, Normalization<T>)> {
    let (mesh, model, norm) = decode_mesh::<T>(field, r_mc)?;
    let attr_model: Option<FieldModel<T>> = match attributes {
        Some(stream) => {
            let (q, _) = entropy_decode(stream)?;
            let m: FieldModel<T> = dequantize(&q)?;
            if m.kind != FieldKind::Attr {
                return Err(Error::Config("sibling stream is not an attribute field".into()));
            }
            Some(m)
        }
        None if model.kind.is_joint() => Some(model.clone()),
        None => None,
    };
    let cloud = decode_to_pointcloud(&mesh, n_points, &norm, attr_model.as_ref(), seed)?;
    Ok((cloud, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_surface;
    use crate::primitives::icosphere;

    /// Small but real end-to-end encode used by several tests; the higher
    /// learning rate compensates for the tiny step budget.
    fn quick_cfg(kind: DistanceKind) -> CodecConfig<f64> {
        let mut cfg = CodecConfig::new(kind, 16);
        cfg.m_total = 4000;
        cfg.train.epochs = 60;
        cfg.train.batch_size = 500;
        cfg.train.lr = 1e-3;
        cfg.qat.epochs = 2;
        cfg.r_mc = 48;
        cfg.eval_points = 5000;
        cfg
    }

    #[test]
    fn sdf_on_cloud_is_rejected() {
        let mesh = icosphere(0.5f64, 1);
        let pc = sample_surface(&mesh, 500, 1).unwrap();
        let cfg = quick_cfg(DistanceKind::Signed);
        assert!(matches!(
            encode_shape(&Shape::Cloud(pc), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attributes_without_colors_are_rejected() {
        let mesh = icosphere(0.5f64, 1);
        let pc = sample_surface(&mesh, 500, 1).unwrap();
        let mut cfg = quick_cfg(DistanceKind::Unsigned);
        cfg.attributes = true;
        assert!(matches!(
            encode_shape(&Shape::Cloud(pc), &cfg),
            Err(Error::MissingColors(_))
        ));
    }

    #[test]
    fn sphere_sdf_roundtrip_reconstructs() {
        let mesh = icosphere(0.7f64, 3);
        let cfg = quick_cfg(DistanceKind::Signed);
        let out = encode_shape(&Shape::Mesh(mesh), &cfg).unwrap();
        assert!(out.total_bytes() > 0);
        assert!(out.loss_history.last().unwrap() < out.loss_history.first().unwrap());
        let (cloud, norm) = decode_cloud::<f64>(&out.geometry, None, 48, 2000, 9).unwrap();
        assert_eq!(cloud.len(), 2000);
        // decoded points live near the original sphere (radius 0.7)
        for p in cloud.points.iter().take(50) {
            assert!((p.norm() - 0.7).abs() < 0.2, "radius {}", p.norm());
        }
        assert!((norm.scale - 0.7).abs() < 1e-6);
    }

    #[test]
    fn deterministic_encode_bytes() {
        let mesh = icosphere(0.5f64, 2);
        let cfg = quick_cfg(DistanceKind::Signed);
        let a = encode_shape(&Shape::Mesh(mesh.clone()), &cfg).unwrap();
        let b = encode_shape(&Shape::Mesh(mesh), &cfg).unwrap();
        assert_eq!(a.geometry.bytes, b.geometry.bytes);
    }
}

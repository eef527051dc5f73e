//! Sequential attribute compression: build the color training set on the
//! decoded surface, fit the attribute field, compress it with the shared
//! stack. The geometry parameters are never touched.

use rayon::prelude::*;

use crate::compress::{compress_pipeline, CompressedField};
use crate::error::{Error, Result};
use crate::field::{init_params, FieldModel, ModelConfig};
use crate::geometry::{sample_surface, Normalization, PointCloud, TriMesh};
use crate::math::Vec3;
use crate::num::Real;
use crate::sampler::TrainingSet;
use crate::seeds::derive_seed;
use crate::spatial::KdTree;
use crate::train::{fit, TrainConfig, TrainData};

/// Surface points from the decoded geometry paired with the color of their
/// exact nearest neighbor in the ground-truth cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTrainingSet<T> {
    pub points: Vec<Vec3<T>>,
    pub colors: Vec<Vec3<T>>,
}

impl<T: Real> AttributeTrainingSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Area-uniform samples on the decoded mesh, each labeled with the color
/// of its nearest neighbor in the ground-truth colored cloud. Both live in
/// normalized coordinates.
pub fn build_attribute_set<T: Real>(
    decoded_mesh: &TriMesh<T>,
    gt: &PointCloud<T>,
    m: usize,
    seed: u64,
) -> Result<AttributeTrainingSet<T>> {
    let gt_colors = gt
        .colors
        .as_ref()
        .ok_or_else(|| Error::MissingColors("ground truth carries no colors".into()))?;
    if decoded_mesh.is_empty() {
        return Err(Error::EmptySurface);
    }
    if m == 0 {
        return Ok(AttributeTrainingSet { points: Vec::new(), colors: Vec::new() });
    }
    let samples = sample_surface(decoded_mesh, m, derive_seed(seed, 0x41545452, 0))?;
    let tree = KdTree::build(&gt.points)?;
    let colors: Vec<Vec3<T>> = samples
        .points
        .par_iter()
        .map(|&p| gt_colors[tree.nearest(p).1])
        .collect();
    Ok(AttributeTrainingSet { points: samples.points, colors })
}

/// Settings for the attribute field; geometry settings do not apply here.
#[derive(Clone, Debug)]
pub struct AttributeSettings<T> {
    pub model: ModelConfig<T>,
    pub train: TrainConfig<T>,
    pub bitwidth: u8,
    pub qat: TrainConfig<T>,
}

impl<T: Real> AttributeSettings<T> {
    pub fn new(width: usize, param_seed: u64) -> Self {
        Self {
            model: ModelConfig::attribute(width),
            train: TrainConfig { param_seed, ..TrainConfig::default() },
            bitwidth: 8,
            qat: TrainConfig { param_seed, ..TrainConfig::qat() },
        }
    }
}

/// Fit and compress an attribute field on a prepared training set. Returns
/// the bitstream, the trained (shadow) model, and the loss history.
pub fn compress_attributes<T: Real>(
    set: &AttributeTrainingSet<T>,
    settings: &AttributeSettings<T>,
    norm: &Normalization<f32>,
) -> Result<(CompressedField, FieldModel<T>, Vec<T>)> {
    if set.is_empty() {
        return Err(Error::Config("attribute training set is empty".into()));
    }
    let mut model = init_params(&settings.model, settings.train.param_seed);
    let data = TrainData::Attribute { points: &set.points, colors: &set.colors };
    let history = fit(&mut model, &data, &settings.train)?;
    let field = compress_pipeline(&model, &data, settings.bitwidth, &settings.qat, norm)?;
    Ok((field, model, history))
}

/// Colors for the joint objective: on-surface bucket samples take their
/// nearest ground-truth color, the other buckets carry none.
pub fn joint_colors<T: Real>(
    ts: &TrainingSet<T>,
    gt: &PointCloud<T>,
) -> Result<Vec<Option<Vec3<T>>>> {
    let gt_colors = gt
        .colors
        .as_ref()
        .ok_or_else(|| Error::MissingColors("joint training needs a colored cloud".into()))?;
    let tree = KdTree::build(&gt.points)?;
    let surface = ts.surface_range();
    Ok(ts
        .points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            if surface.contains(&i) {
                Some(gt_colors[tree.nearest(p).1])
            } else {
                None
            }
        })
        .collect())
}

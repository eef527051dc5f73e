//! Overfitting a field to a training set: the masked truncated-distance
//! loss, the attribute loss, the optional joint objective, Adam, and the
//! deterministic epoch/batch driver.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{encode_into, FieldKind, FieldModel, Gradients, Trace};
use crate::math::Vec3;
use crate::num::Real;
use crate::oracle::truncate_target;
use crate::seeds::{derive_seed, rng_from_seed};

/// Samples per parallel work unit; gradients are reduced in fixed chunk
/// order so thread count never changes the result.
const CHUNK: usize = 512;

const SHUFFLE_TAG: u64 = 0x53_48_55_46; // "SHUF"

#[derive(Clone, Debug)]
pub struct TrainConfig<T> {
    pub lr: T,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_l1: T,
    /// Weight of the attribute term in the joint objective.
    pub lambda_attr: T,
    pub param_seed: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    /// When false, the loss regresses raw distances with no mask
    /// (the truncation ablation).
    pub truncated: bool,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::of(1e-4),
            epochs: 500,
            batch_size: 10_000,
            lambda_l1: T::of(1e-8),
            lambda_attr: T::of(1e-3),
            param_seed: 0,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            truncated: true,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    /// Quantization-aware retraining schedule: few epochs, tiny step.
    pub fn qat() -> Self {
        Self { epochs: 50, lr: T::of(1e-7), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= T::zero()) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.lambda_l1 < T::zero() {
            return Err(Error::Config("lambda_l1 must be non-negative".into()));
        }
        Ok(())
    }
}

/// What a field is fit against.
pub enum TrainData<'a, T> {
    Geometry {
        points: &'a [Vec3<T>],
        /// Raw signed oracle distances; truncation happens inside the loss.
        distances: &'a [T],
        d_star: T,
    },
    Attribute {
        points: &'a [Vec3<T>],
        colors: &'a [Vec3<T>],
    },
    Joint {
        points: &'a [Vec3<T>],
        distances: &'a [T],
        /// Colors for the on-surface samples; `None` elsewhere.
        colors: &'a [Option<Vec3<T>>],
        d_star: T,
    },
}

impl<'a, T: Real> TrainData<'a, T> {
    pub fn len(&self) -> usize {
        self.points().len()
    }

    pub fn is_empty(&self) -> bool {
        self.points().is_empty()
    }

    pub fn points(&self) -> &'a [Vec3<T>] {
        match self {
            TrainData::Geometry { points, .. }
            | TrainData::Attribute { points, .. }
            | TrainData::Joint { points, .. } => points,
        }
    }

    fn validate(&self, model: &FieldModel<T>) -> Result<()> {
        let kind_ok = match self {
            TrainData::Geometry { points, distances, .. } => {
                if points.len() != distances.len() {
                    return Err(Error::Config("points/distances length mismatch".into()));
                }
                matches!(model.kind, FieldKind::Udf | FieldKind::Sdf)
            }
            TrainData::Attribute { points, colors } => {
                if points.len() != colors.len() {
                    return Err(Error::Config("points/colors length mismatch".into()));
                }
                model.kind == FieldKind::Attr
            }
            TrainData::Joint { points, distances, colors, .. } => {
                if points.len() != distances.len() || points.len() != colors.len() {
                    return Err(Error::Config("joint data length mismatch".into()));
                }
                model.kind.is_joint()
            }
        };
        if !kind_ok {
            return Err(Error::Config(format!(
                "training data does not match model kind {:?}",
                model.kind
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses

/// Eq-style masked geometry loss over one batch: per sample, when
/// `|d_S| <= d*` or `|d_hat| <= d*`, the contribution is
/// `(d_hat - sgn(d_S) min(|d_S|, d*))^2`, otherwise exactly zero; the batch
/// reduction is the mean including masked zeros. Adds the l1 penalty and
/// its subgradient.
pub fn geometry_loss<T: Real>(
    model: &FieldModel<T>,
    points: &[Vec3<T>],
    distances: &[T],
    d_star: T,
    lambda_l1: T,
) -> Result<(T, Gradients<T>)> {
    let data = TrainData::Geometry { points, distances, d_star };
    data.validate(model)?;
    let enc = encode_all(model, points);
    let indices: Vec<u32> = (0..points.len() as u32).collect();
    let (mut loss, mut grads) = eval_batch(model, &enc, &indices, &data, true, T::zero());
    add_l1_penalty(model, lambda_l1, &mut loss, &mut grads);
    Ok((loss, grads))
}

/// Attribute loss: mean over the batch of the squared color error summed
/// over the three channels, plus the l1 penalty.
pub fn attribute_loss<T: Real>(
    model: &FieldModel<T>,
    points: &[Vec3<T>],
    colors: &[Vec3<T>],
    lambda_l1: T,
) -> Result<(T, Gradients<T>)> {
    let data = TrainData::Attribute { points, colors };
    data.validate(model)?;
    let enc = encode_all(model, points);
    let indices: Vec<u32> = (0..points.len() as u32).collect();
    let (mut loss, mut grads) = eval_batch(model, &enc, &indices, &data, true, T::zero());
    add_l1_penalty(model, lambda_l1, &mut loss, &mut grads);
    Ok((loss, grads))
}

/// Add `lambda * ||theta||_1` and its subgradient (0 at 0) to a computed
/// data loss. The penalty is taken on the model used in the forward pass.
pub fn add_l1_penalty<T: Real>(
    model: &FieldModel<T>,
    lambda: T,
    loss: &mut T,
    grads: &mut Gradients<T>,
) {
    if lambda == T::zero() {
        return;
    }
    *loss += lambda * model.l1_norm();
    for (gl, ml) in grads.layers.iter_mut().zip(&model.layers) {
        for (g, w) in gl.weights.iter_mut().zip(&ml.weights) {
            *g += lambda * sign0(*w);
        }
        for (g, b) in gl.bias.iter_mut().zip(&ml.bias) {
            *g += lambda * sign0(*b);
        }
    }
}

#[inline]
fn sign0<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Flat row-major encoding of every point under the model's feature map.
pub(crate) fn encode_all<T: Real>(model: &FieldModel<T>, points: &[Vec3<T>]) -> Vec<T> {
    let dim = model.encoding.dim();
    let mut enc = vec![T::zero(); points.len() * dim];
    enc.par_chunks_mut(dim)
        .zip(points.par_iter())
        .for_each(|(row, p)| encode_into(*p, &model.encoding, row));
    enc
}

/// Mean data loss and its gradient over the indexed batch.
///
/// Parallelizes over fixed-size chunks; the per-chunk results are folded in
/// chunk order, so the floating-point reduction order is independent of the
/// thread count.
pub(crate) fn eval_batch<T: Real>(
    model: &FieldModel<T>,
    enc: &[T],
    indices: &[u32],
    data: &TrainData<T>,
    truncated: bool,
    lambda_attr: T,
) -> (T, Gradients<T>) {
    let dim = model.encoding.dim();
    let n = indices.len();
    let inv_n = T::one() / T::of(n as f64);
    // The joint attribute term averages over the colored samples only.
    let inv_colored = match data {
        TrainData::Joint { colors, .. } => {
            let c = indices.iter().filter(|&&j| colors[j as usize].is_some()).count();
            if c == 0 { T::zero() } else { T::one() / T::of(c as f64) }
        }
        _ => T::zero(),
    };

    let chunks: Vec<&[u32]> = indices.chunks(CHUNK).collect();
    let parts: Vec<(T, Gradients<T>)> = chunks
        .par_iter()
        .map(|chunk| {
            let mut trace = Trace::new(model);
            let mut grads = Gradients::zeros(model);
            let mut upstream = vec![T::zero(); model.output_dim()];
            let mut loss = T::zero();
            for &j in chunk.iter() {
                let j = j as usize;
                trace.enc.copy_from_slice(&enc[j * dim..(j + 1) * dim]);
                model.forward_traced(&mut trace);
                upstream.iter_mut().for_each(|u| *u = T::zero());
                let mut any = false;
                match data {
                    TrainData::Geometry { distances, d_star, .. } => {
                        let d_hat = trace.out[0];
                        let d_s = distances[j];
                        let (target, active) = if truncated {
                            (
                                truncate_target(d_s, *d_star),
                                d_s.abs() <= *d_star || d_hat.abs() <= *d_star,
                            )
                        } else {
                            (d_s, true)
                        };
                        if active {
                            let r = d_hat - target;
                            loss += r * r * inv_n;
                            upstream[0] = T::of(2.0) * r * inv_n;
                            any = true;
                        }
                    }
                    TrainData::Attribute { colors, .. } => {
                        let c = colors[j];
                        for (k, t) in c.to_array().into_iter().enumerate() {
                            let e = trace.out[k] - t;
                            loss += e * e * inv_n;
                            upstream[k] = T::of(2.0) * e * inv_n;
                        }
                        any = true;
                    }
                    TrainData::Joint { distances, colors, d_star, .. } => {
                        let d_hat = trace.out[0];
                        let d_s = distances[j];
                        let (target, active) = if truncated {
                            (
                                truncate_target(d_s, *d_star),
                                d_s.abs() <= *d_star || d_hat.abs() <= *d_star,
                            )
                        } else {
                            (d_s, true)
                        };
                        if active {
                            let r = d_hat - target;
                            loss += r * r * inv_n;
                            upstream[0] = T::of(2.0) * r * inv_n;
                            any = true;
                        }
                        if let Some(c) = colors[j] {
                            for (k, t) in c.to_array().into_iter().enumerate() {
                                let e = trace.out[1 + k] - t;
                                loss += lambda_attr * e * e * inv_colored;
                                upstream[1 + k] =
                                    lambda_attr * T::of(2.0) * e * inv_colored;
                            }
                            any = true;
                        }
                    }
                }
                if any {
                    model.backward_traced(&mut trace, &upstream, Some(&mut grads), false);
                }
            }
            (loss, grads)
        })
        .collect();

    let mut total = T::zero();
    let mut grads = Gradients::zeros(model);
    for (l, g) in &parts {
        total += *l;
        grads.add_assign(g);
    }
    (total, grads)
}

// ---------------------------------------------------------------------------
// Adam

/// First/second moment accumulators mirroring the model shape.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &FieldModel<T>) -> Self {
        Self { m: Gradients::zeros(model), v: Gradients::zeros(model), step: 0 }
    }
}

/// One Adam update with bias correction. Errors on non-finite gradients.
pub fn adam_step<T: Real>(
    model: &mut FieldModel<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: T,
    beta1: T,
    beta2: T,
    epsilon: T,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Training(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = T::one() - beta1.powi(t);
    let c2 = T::one() - beta2.powi(t);
    for (li, layer) in model.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        let update = |theta: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = beta1 * *m + (T::one() - beta1) * g;
            *v = beta2 * *v + (T::one() - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + epsilon);
        };
        for i in 0..layer.weights.len() {
            update(&mut layer.weights[i], g.weights[i], &mut m.weights[i], &mut v.weights[i]);
        }
        for i in 0..layer.bias.len() {
            update(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
    }
    Ok(())
}

/// Deterministic Fisher-Yates permutation for one epoch, seeded from the
/// parameter seed and the epoch index.
pub(crate) fn epoch_permutation(n: usize, param_seed: u64, epoch: usize) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut rng = rng_from_seed(derive_seed(param_seed, SHUFFLE_TAG, epoch as u64));
    perm.shuffle(&mut rng);
    perm
}

/// Overfit the model: `epochs` passes of shuffled mini-batches, each batch
/// one loss evaluation plus one Adam step. Returns the per-epoch mean loss.
pub fn fit<T: Real>(
    model: &mut FieldModel<T>,
    data: &TrainData<T>,
    cfg: &TrainConfig<T>,
) -> Result<Vec<T>> {
    cfg.validate()?;
    data.validate(model)?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let n = data.len();
    let enc = encode_all(model, data.points());
    let mut state = AdamState::new(model);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let perm = epoch_permutation(n, cfg.param_seed, epoch);
        let mut epoch_loss = T::zero();
        for batch in perm.chunks(cfg.batch_size) {
            let (mut loss, mut grads) =
                eval_batch(model, &enc, batch, data, cfg.truncated, cfg.lambda_attr);
            add_l1_penalty(model, cfg.lambda_l1, &mut loss, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch}"
                )));
            }
            adam_step(model, &grads, &mut state, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)?;
            epoch_loss += loss * T::of(batch.len() as f64);
        }
        history.push(epoch_loss / T::of(n as f64));
    }
    Ok(history)
}

/// Write a loss history as `epoch,mean_loss` CSV.
pub fn loss_history_csv<T: Real>(history: &[T]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (e, l) in history.iter().enumerate() {
        out.push_str(&format!("{e},{l}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_params, HeadActivation, ModelConfig};

    fn small_model(kind: FieldKind, width: usize, seed: u64) -> FieldModel<f64> {
        let mut cfg = ModelConfig::geometry(kind, width);
        cfg.encoding.levels = 2;
        init_params(&cfg, seed)
    }

    #[test]
    fn masked_sample_contributes_nothing() {
        // Constant model output far beyond d*, target far beyond d*.
        let mut model = small_model(FieldKind::Sdf, 4, 1);
        for l in &mut model.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let out_idx = model.num_hidden;
        model.layers[out_idx].bias[0] = 0.5; // d_hat = 0.5 everywhere
        let pts = [Vec3::new(0.1, 0.2, 0.3)];
        let (loss, grads) = geometry_loss(&model, &pts, &[0.5], 0.1, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn unmasked_contribution_matches_hand_value() {
        // d_S = 0.5 (beyond), d_hat = 0.05 (inside): (0.05 - 0.1)^2 = 0.0025.
        let mut model = small_model(FieldKind::Sdf, 4, 1);
        for l in &mut model.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let out_idx = model.num_hidden;
        model.layers[out_idx].bias[0] = 0.05;
        let pts = [Vec3::zero()];
        let (loss, _) = geometry_loss(&model, &pts, &[0.5], 0.1, 0.0).unwrap();
        assert!((loss - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn boundary_target_contributes_squared_residual() {
        // d_S = d* exactly: unmasked regardless of the prediction.
        let mut model = small_model(FieldKind::Sdf, 4, 1);
        for l in &mut model.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let out_idx = model.num_hidden;
        model.layers[out_idx].bias[0] = 0.9; // far outside the band
        let (loss, grads) = geometry_loss(&model, &[Vec3::zero()], &[0.1], 0.1, 0.0).unwrap();
        assert!((loss - (0.9f64 - 0.1).powi(2)).abs() < 1e-15);
        assert!(grads.max_abs() > 0.0);
    }

    #[test]
    fn perfect_prediction_zero_loss() {
        let mut model = small_model(FieldKind::Sdf, 4, 2);
        for l in &mut model.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let out_idx = model.num_hidden;
        model.layers[out_idx].bias[0] = 0.05;
        let pts = [Vec3::zero(), Vec3::new(0.5, 0.0, 0.0)];
        let (loss, _) = geometry_loss(&model, &pts, &[0.05, 0.05], 0.1, 0.0).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn attribute_loss_sums_channels() {
        let mut cfg = ModelConfig::<f64>::attribute(4);
        cfg.encoding.levels = 2;
        let mut model = init_params(&cfg, 3);
        for l in &mut model.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        // prediction (0,0,0), target (1,1,1): sum of squares = 3
        let (loss, _) =
            attribute_loss(&model, &[Vec3::zero()], &[Vec3::new(1.0, 1.0, 1.0)], 0.0).unwrap();
        assert!((loss - 3.0).abs() < 1e-15);
        // matching target: zero
        let (loss, _) = attribute_loss(&model, &[Vec3::zero()], &[Vec3::zero()], 0.0).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn l1_penalty_alone() {
        // single scalar parameter 0.5, zero data loss, lambda = 1 -> 0.5
        let mut cfg = ModelConfig::<f64>::geometry(FieldKind::Sdf, 4);
        cfg.encoding.levels = 0;
        cfg.num_hidden = 0;
        let mut model = init_params(&cfg, 0);
        model.layers[0].weights = vec![0.0, 0.0, 0.0];
        model.layers[0].bias[0] = 0.5;
        // target equals prediction -> data loss 0
        let (loss, grads) = geometry_loss(&model, &[Vec3::zero()], &[0.5], 1.0, 1.0).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
        // subgradient of the penalty on the bias is sign(0.5) = 1
        assert_eq!(grads.layers[0].bias[0], 1.0);
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        let model = small_model(FieldKind::Udf, 6, 9);
        let pts: Vec<Vec3<f64>> = (0..16)
            .map(|i| Vec3::new((i as f64) / 16.0 - 0.5, 0.3, -0.2))
            .collect();
        let ds: Vec<f64> = (0..16).map(|i| 0.01 * i as f64 - 0.05).collect();
        let lambda = 1e-3;
        let (_, grads) = geometry_loss(&model, &pts, &ds, 0.1, lambda).unwrap();
        let h = 1e-5;
        for li in 0..model.layers.len() {
            for wi in (0..model.layers[li].weights.len()).step_by(7) {
                let mut p = model.clone();
                let mut m = model.clone();
                p.layers[li].weights[wi] += h;
                m.layers[li].weights[wi] -= h;
                let lp = geometry_loss(&p, &pts, &ds, 0.1, lambda).unwrap().0;
                let lm = geometry_loss(&m, &pts, &ds, 0.1, lambda).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let a = grads.layers[li].weights[wi];
                let denom = a.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (a - fd).abs() / denom < 1e-4,
                    "layer {li} w[{wi}]: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn adam_first_step_hand_evaluated() {
        let mut cfg = ModelConfig::<f64>::geometry(FieldKind::Sdf, 4);
        cfg.encoding.levels = 0;
        cfg.num_hidden = 0;
        let mut model = init_params(&cfg, 0);
        let before = model.layers[0].weights[0];
        let mut grads = Gradients::zeros(&model);
        grads.layers[0].weights[0] = 1.0;
        let mut state = AdamState::new(&model);
        adam_step(&mut model, &grads, &mut state, 1e-4, 0.9, 0.999, 1e-8).unwrap();
        // m_hat = 1, v_hat = 1: delta = lr / (1 + eps)
        let expected = before - 1e-4 / (1.0 + 1e-8);
        assert!((model.layers[0].weights[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut model = small_model(FieldKind::Sdf, 4, 5);
        let reference = model.clone();
        let grads = Gradients::zeros(&model);
        let mut state = AdamState::new(&model);
        for _ in 0..3 {
            adam_step(&mut model, &grads, &mut state, 1e-4, 0.9, 0.999, 1e-8).unwrap();
        }
        assert_eq!(model, reference);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut model = small_model(FieldKind::Sdf, 4, 5);
        let mut grads = Gradients::zeros(&model);
        grads.layers[0].weights[0] = f64::NAN;
        let mut state = AdamState::new(&model);
        let err =
            adam_step(&mut model, &grads, &mut state, 1e-4, 0.9, 0.999, 1e-8).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    fn sphere_data(n: usize) -> (Vec<Vec3<f64>>, Vec<f64>) {
        let mut rng = crate::seeds::rng_from_seed(4);
        use rand::Rng;
        let pts: Vec<Vec3<f64>> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let ds = pts.iter().map(|p| p.norm() - 0.5).collect();
        (pts, ds)
    }

    #[test]
    fn training_reduces_loss_on_learnable_target() {
        let (pts, ds) = sphere_data(2000);
        let mut model = small_model(FieldKind::Sdf, 16, 7);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 500,
            lambda_l1: 0.0,
            param_seed: 7,
            ..TrainConfig::default()
        };
        let data = TrainData::Geometry { points: &pts, distances: &ds, d_star: 0.1 };
        let history = fit(&mut model, &data, &cfg).unwrap();
        assert!(history.last().unwrap() < history.first().unwrap());
    }

    #[test]
    fn zero_epochs_leaves_model_untouched() {
        let (pts, ds) = sphere_data(100);
        let mut model = small_model(FieldKind::Sdf, 8, 3);
        let reference = model.clone();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let data = TrainData::Geometry { points: &pts, distances: &ds, d_star: 0.1 };
        let history = fit(&mut model, &data, &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(model, reference);
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let (pts, ds) = sphere_data(300);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 128,
            param_seed: 11,
            ..TrainConfig::default()
        };
        let data = TrainData::Geometry { points: &pts, distances: &ds, d_star: 0.1 };
        let mut m1 = small_model(FieldKind::Udf, 8, 11);
        let mut m2 = small_model(FieldKind::Udf, 8, 11);
        let h1 = fit(&mut m1, &data, &cfg).unwrap();
        let h2 = fit(&mut m2, &data, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn masked_samples_zero_gradient_numerically() {
        // All samples masked: gradient identically zero even with nonzero
        // model weights.
        let mut model = small_model(FieldKind::Sdf, 6, 13);
        let out_idx = model.num_hidden;
        model.layers[out_idx].bias[0] = 2.0; // push outputs beyond d*
        let pts: Vec<Vec3<f64>> = (0..8).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let ds: Vec<f64> = (0..8).map(|_| 1.7).collect();
        let (loss, grads) = geometry_loss(&model, &pts, &ds, 0.1, 0.0).unwrap();
        // d_hat is near 2 for every point (bias dominates), all beyond d*.
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn l1_sparsifies_parameters() {
        let (pts, ds) = sphere_data(1500);
        let data = TrainData::Geometry { points: &pts, distances: &ds, d_star: 0.1 };
        let frac_small = |m: &FieldModel<f64>| {
            let total = m.param_count() as f64;
            let small = m
                .layers
                .iter()
                .flat_map(|l| l.weights.iter().chain(&l.bias))
                .filter(|w| w.abs() < 1e-3)
                .count() as f64;
            small / total
        };
        let mut with = small_model(FieldKind::Udf, 12, 21);
        let mut without = with.clone();
        let base = TrainConfig {
            epochs: 60,
            batch_size: 500,
            param_seed: 21,
            ..TrainConfig::default()
        };
        fit(&mut with, &data, &TrainConfig { lambda_l1: 1e-4, ..base.clone() }).unwrap();
        fit(&mut without, &data, &TrainConfig { lambda_l1: 0.0, ..base }).unwrap();
        assert!(
            frac_small(&with) > frac_small(&without),
            "l1: {} vs plain: {}",
            frac_small(&with),
            frac_small(&without)
        );
    }

    #[test]
    fn relu_head_trains() {
        // Head ablation path stays finite and optimizes.
        let (pts, ds) = sphere_data(500);
        let uds: Vec<f64> = ds.iter().map(|d| d.abs()).collect();
        let mut cfg_m = ModelConfig::<f64>::geometry(FieldKind::Udf, 8);
        cfg_m.head = Some(HeadActivation::Relu);
        cfg_m.encoding.levels = 2;
        let mut model = init_params(&cfg_m, 2);
        let cfg = TrainConfig { epochs: 20, batch_size: 250, param_seed: 2, ..Default::default() };
        let data = TrainData::Geometry { points: &pts, distances: &uds, d_star: 0.1 };
        let history = fit(&mut model, &data, &cfg).unwrap();
        assert!(history.iter().all(|l| l.is_finite()));
    }
}

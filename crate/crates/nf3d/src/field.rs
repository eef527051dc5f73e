//! The neural field: positional encoding, sinusoidal MLP, output heads,
//! forward evaluation, and exact reverse-mode gradients with respect to
//! both the parameters and the input point.

use rand::Rng;

use crate::math::Vec3;
use crate::num::Real;
use crate::seeds::rng_from_seed;

/// What the field represents and how many output channels it has.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// Unsigned distance, one channel, `abs` head.
    Udf,
    /// Signed distance, one channel, identity head.
    Sdf,
    /// RGB attribute field, three channels.
    Attr,
    /// Joint geometry + attribute field (distance, r, g, b), unsigned.
    JointUdf,
    /// Joint geometry + attribute field, signed.
    JointSdf,
}

impl FieldKind {
    pub fn output_dim(self) -> usize {
        match self {
            FieldKind::Udf | FieldKind::Sdf => 1,
            FieldKind::Attr => 3,
            FieldKind::JointUdf | FieldKind::JointSdf => 4,
        }
    }

    /// Channel the head activation applies to (the distance channel).
    pub fn distance_channel(self) -> Option<usize> {
        match self {
            FieldKind::Attr => None,
            _ => Some(0),
        }
    }

    pub fn canonical_head(self) -> HeadActivation {
        match self {
            FieldKind::Udf | FieldKind::JointUdf => HeadActivation::Abs,
            _ => HeadActivation::Identity,
        }
    }

    pub fn is_geometry(self) -> bool {
        !matches!(self, FieldKind::Attr)
    }

    pub fn is_joint(self) -> bool {
        matches!(self, FieldKind::JointUdf | FieldKind::JointSdf)
    }
}

/// Final activation on the distance channel. `Abs` is the default for
/// unsigned fields; `Relu` and `Identity` exist for the activation ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadActivation {
    Abs,
    Identity,
    Relu,
}

impl HeadActivation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            HeadActivation::Abs => z.abs(),
            HeadActivation::Identity => z,
            HeadActivation::Relu => z.max(T::zero()),
        }
    }

    /// Subgradient, with the measure-zero kink points pinned to 0.
    #[inline]
    pub fn derivative<T: Real>(self, z: T) -> T {
        match self {
            HeadActivation::Abs => {
                if z > T::zero() {
                    T::one()
                } else if z < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            HeadActivation::Identity => T::one(),
            HeadActivation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Sinusoidal positional encoding configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodingConfig<T> {
    /// Number of frequency levels L.
    pub levels: usize,
    /// Base of the geometric frequency progression.
    pub sigma_p: T,
}

impl<T: Real> EncodingConfig<T> {
    pub fn geometry() -> Self {
        Self { levels: 16, sigma_p: T::of(1.4) }
    }

    pub fn attribute() -> Self {
        Self { levels: 8, sigma_p: T::of(1.4) }
    }

    /// Encoded dimension: 3 coordinates, each lifted to `1 + 2 L` features.
    pub fn dim(&self) -> usize {
        3 * (1 + 2 * self.levels)
    }
}

/// Per coordinate p the encoding emits
/// `(p, sin(s^0 pi p), cos(s^0 pi p), ..., sin(s^{L-1} pi p), cos(s^{L-1} pi p))`
/// with `s = sigma_p`; the three coordinate blocks are concatenated in
/// x, y, z order.
pub fn encode_into<T: Real>(x: Vec3<T>, cfg: &EncodingConfig<T>, out: &mut [T]) {
    let block = 1 + 2 * cfg.levels;
    debug_assert_eq!(out.len(), 3 * block);
    for (c, p) in x.to_array().into_iter().enumerate() {
        let base = c * block;
        out[base] = p;
        let mut freq = T::PI();
        for l in 0..cfg.levels {
            let (s, co) = (freq * p).sin_cos();
            out[base + 1 + 2 * l] = s;
            out[base + 2 + 2 * l] = co;
            freq = freq * cfg.sigma_p;
        }
    }
}

pub fn encode<T: Real>(x: Vec3<T>, cfg: &EncodingConfig<T>) -> Vec<T> {
    let mut out = vec![T::zero(); cfg.dim()];
    encode_into(x, cfg, &mut out);
    out
}

/// One dense layer, row-major weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Real> Layer<T> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    #[inline]
    fn affine_into(&self, input: &[T], out: &mut [T]) {
        debug_assert_eq!(input.len(), self.in_dim);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, h) in row.iter().zip(input) {
                acc += *w * *h;
            }
            out[o] = acc;
        }
    }
}

/// Architecture parameters for building a fresh model.
#[derive(Clone, Debug)]
pub struct ModelConfig<T> {
    pub kind: FieldKind,
    /// `None` selects the canonical head for the kind.
    pub head: Option<HeadActivation>,
    pub encoding: EncodingConfig<T>,
    pub hidden_width: usize,
    pub num_hidden: usize,
    pub omega0: T,
    /// Truncation distance carried by geometry fields (0 for ATTR).
    pub d_star: T,
}

impl<T: Real> ModelConfig<T> {
    pub fn geometry(kind: FieldKind, hidden_width: usize) -> Self {
        Self {
            kind,
            head: None,
            encoding: EncodingConfig::geometry(),
            hidden_width,
            num_hidden: 2,
            omega0: T::of(30.0),
            d_star: T::of(0.1),
        }
    }

    pub fn attribute(hidden_width: usize) -> Self {
        Self {
            kind: FieldKind::Attr,
            head: None,
            encoding: EncodingConfig::attribute(),
            hidden_width,
            num_hidden: 2,
            omega0: T::of(30.0),
            d_star: T::zero(),
        }
    }
}

/// `(in, out)` dimensions of each layer for the given architecture.
pub fn layer_dims(
    enc_dim: usize,
    hidden_width: usize,
    num_hidden: usize,
    out_dim: usize,
) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(num_hidden + 1);
    let mut cur = enc_dim;
    for _ in 0..num_hidden {
        dims.push((cur, hidden_width));
        cur = hidden_width;
    }
    dims.push((cur, out_dim));
    dims
}

/// The MLP field: `encode -> [sin(omega0 (W h + b))]* -> W h + b -> head`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel<T> {
    pub kind: FieldKind,
    pub head: HeadActivation,
    pub encoding: EncodingConfig<T>,
    /// `num_hidden` sinusoidal layers followed by the linear output layer.
    pub layers: Vec<Layer<T>>,
    pub hidden_width: usize,
    pub num_hidden: usize,
    pub omega0: T,
    pub d_star: T,
}

/// SIREN-style initialization: first layer uniform in `+-1/fan_in`, later
/// layers uniform in `+-sqrt(6/fan_in)/omega0`, zero biases.
pub fn init_params<T: Real>(cfg: &ModelConfig<T>, seed: u64) -> FieldModel<T> {
    let mut rng = rng_from_seed(seed);
    let dims = layer_dims(
        cfg.encoding.dim(),
        cfg.hidden_width,
        cfg.num_hidden,
        cfg.kind.output_dim(),
    );
    let mut layers = Vec::with_capacity(dims.len());
    for (idx, (in_dim, out_dim)) in dims.iter().copied().enumerate() {
        let mut layer = Layer::zeros(in_dim, out_dim);
        let limit = if idx == 0 {
            1.0 / in_dim as f64
        } else {
            (6.0 / in_dim as f64).sqrt() / cfg.omega0.to_f64_lossy()
        };
        for w in &mut layer.weights {
            *w = T::of(rng.gen_range(-limit..limit));
        }
        layers.push(layer);
    }
    FieldModel {
        kind: cfg.kind,
        head: cfg.head.unwrap_or_else(|| cfg.kind.canonical_head()),
        encoding: cfg.encoding,
        layers,
        hidden_width: cfg.hidden_width,
        num_hidden: cfg.num_hidden,
        omega0: cfg.omega0,
        d_star: cfg.d_star,
    }
}

impl<T: Real> FieldModel<T> {
    pub fn output_dim(&self) -> usize {
        self.kind.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Sum of absolute parameter values (the l1 penalty term).
    pub fn l1_norm(&self) -> T {
        let mut acc = T::zero();
        for l in &self.layers {
            for w in l.weights.iter().chain(&l.bias) {
                acc += w.abs();
            }
        }
        acc
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|w| w.is_finite()))
    }

    /// Full forward pass allocating its own trace; fine outside hot loops.
    pub fn forward(&self, x: Vec3<T>) -> Vec<T> {
        let mut trace = Trace::new(self);
        encode_into(x, &self.encoding, &mut trace.enc);
        self.forward_traced(&mut trace);
        trace.out.clone()
    }

    /// Distance channel only.
    pub fn forward_scalar(&self, x: Vec3<T>) -> T {
        self.forward(x)[0]
    }

    /// RGB channels of an attribute or joint field.
    pub fn forward_rgb(&self, x: Vec3<T>) -> Vec3<T> {
        let out = self.forward(x);
        match self.kind {
            FieldKind::Attr => Vec3::new(out[0], out[1], out[2]),
            FieldKind::JointUdf | FieldKind::JointSdf => Vec3::new(out[1], out[2], out[3]),
            _ => panic!("no color channels on {:?}", self.kind),
        }
    }

    /// Gradient of `upstream . output` w.r.t. every parameter and the input.
    pub fn backward(&self, x: Vec3<T>, upstream: &[T]) -> Gradients<T> {
        let mut trace = Trace::new(self);
        encode_into(x, &self.encoding, &mut trace.enc);
        self.forward_traced(&mut trace);
        let mut grads = Gradients::zeros(self);
        let input = self.backward_traced(&mut trace, upstream, Some(&mut grads), true);
        grads.input = input;
        grads
    }

    /// Distance value and its exact spatial gradient, skipping parameter
    /// gradient accumulation (grid evaluation path).
    pub fn forward_with_input_grad(&self, x: Vec3<T>) -> (T, Vec3<T>) {
        let mut trace = Trace::new(self);
        encode_into(x, &self.encoding, &mut trace.enc);
        self.forward_traced(&mut trace);
        let mut upstream = vec![T::zero(); self.output_dim()];
        upstream[0] = T::one();
        let g = self
            .backward_traced(&mut trace, &upstream, None, true)
            .expect("input gradient requested");
        (trace.out[0], g)
    }

    /// Forward pass reading `trace.enc` (already encoded) and filling the
    /// remaining trace buffers; the head output lands in `trace.out`.
    pub(crate) fn forward_traced(&self, trace: &mut Trace<T>) {
        let Trace { enc, hidden, z, out, pre, .. } = trace;
        for l in 0..self.num_hidden {
            let layer = &self.layers[l];
            {
                let input: &[T] = if l == 0 { enc } else { &hidden[l - 1].sin };
                layer.affine_into(input, &mut pre[..layer.out_dim]);
            }
            let ht = &mut hidden[l];
            for o in 0..layer.out_dim {
                let (s, c) = (self.omega0 * pre[o]).sin_cos();
                ht.sin[o] = s;
                ht.cos[o] = c;
            }
        }
        let out_layer = &self.layers[self.num_hidden];
        {
            let input: &[T] = if self.num_hidden == 0 { enc } else { &hidden[self.num_hidden - 1].sin };
            out_layer.affine_into(input, z);
        }
        out.copy_from_slice(z);
        if let Some(ch) = self.kind.distance_channel() {
            out[ch] = self.head.apply(z[ch]);
        }
    }

    /// Reverse pass over a filled trace. Accumulates parameter gradients
    /// into `grads` when given; returns the input-point gradient when
    /// `want_input` is set.
    pub(crate) fn backward_traced(
        &self,
        trace: &mut Trace<T>,
        upstream: &[T],
        mut grads: Option<&mut Gradients<T>>,
        want_input: bool,
    ) -> Option<Vec3<T>> {
        let Trace { enc, hidden, z, pre: _, dbuf_a, dbuf_b, .. } = trace;
        let nh = self.num_hidden;
        let out_layer = &self.layers[nh];

        // Cotangent through the head into the output pre-activation.
        {
            let dz = &mut dbuf_a[..out_layer.out_dim];
            dz.copy_from_slice(upstream);
            if let Some(ch) = self.kind.distance_channel() {
                dz[ch] = upstream[ch] * self.head.derivative(z[ch]);
            }
        }

        // Output layer; writes d(input) into dbuf_b.
        {
            let input: &[T] = if nh == 0 { enc } else { &hidden[nh - 1].sin };
            let need_dh = nh > 0 || want_input;
            let dh = &mut dbuf_b[..out_layer.in_dim];
            dh.iter_mut().for_each(|v| *v = T::zero());
            for o in 0..out_layer.out_dim {
                let c = dbuf_a[o];
                let row = &out_layer.weights[o * out_layer.in_dim..(o + 1) * out_layer.in_dim];
                if let Some(g) = grads.as_deref_mut() {
                    let gl = &mut g.layers[nh];
                    gl.bias[o] += c;
                    let grow = &mut gl.weights[o * out_layer.in_dim..(o + 1) * out_layer.in_dim];
                    for i in 0..out_layer.in_dim {
                        grow[i] += c * input[i];
                    }
                }
                if need_dh {
                    for i in 0..out_layer.in_dim {
                        dh[i] += row[i] * c;
                    }
                }
            }
        }

        // Hidden layers in reverse; the incoming cotangent always sits in
        // dbuf_b at the top of the loop.
        for l in (0..nh).rev() {
            let layer = &self.layers[l];
            // d(pre) = dh * omega0 * cos, in place.
            {
                let dh = &mut dbuf_b[..layer.out_dim];
                let cos = &hidden[l].cos;
                for o in 0..layer.out_dim {
                    dh[o] = dh[o] * self.omega0 * cos[o];
                }
            }
            let need_dh = l > 0 || want_input;
            {
                let input: &[T] = if l == 0 { enc } else { &hidden[l - 1].sin };
                let dh_prev = &mut dbuf_a[..layer.in_dim];
                dh_prev.iter_mut().for_each(|v| *v = T::zero());
                for o in 0..layer.out_dim {
                    let c = dbuf_b[o];
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    if let Some(g) = grads.as_deref_mut() {
                        let gl = &mut g.layers[l];
                        gl.bias[o] += c;
                        let grow = &mut gl.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for i in 0..layer.in_dim {
                            grow[i] += c * input[i];
                        }
                    }
                    if need_dh {
                        for i in 0..layer.in_dim {
                            dh_prev[i] += row[i] * c;
                        }
                    }
                }
            }
            std::mem::swap(dbuf_a, dbuf_b);
        }

        if !want_input {
            return None;
        }

        // Chain the encoding-level cotangent (in dbuf_b) through the
        // feature map; the stored features double as the trig values.
        let denc = &dbuf_b[..self.encoding.dim()];
        let block = 1 + 2 * self.encoding.levels;
        let mut g = Vec3::zero();
        let mut out = [T::zero(); 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let base = c * block;
            let mut acc = denc[base];
            let mut freq = T::PI();
            for l in 0..self.encoding.levels {
                let s = enc[base + 1 + 2 * l];
                let co = enc[base + 2 + 2 * l];
                acc += freq * (denc[base + 1 + 2 * l] * co - denc[base + 2 + 2 * l] * s);
                freq = freq * self.encoding.sigma_p;
            }
            *slot = acc;
        }
        g.x = out[0];
        g.y = out[1];
        g.z = out[2];
        Some(g)
    }
}

/// Per-parameter gradients mirroring the model shape, plus the optional
/// gradient with respect to the input point.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
    pub input: Option<Vec3<T>>,
}

#[derive(Clone, Debug)]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(model: &FieldModel<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
            input: None,
        }
    }

    pub fn set_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = T::zero());
            l.bias.iter_mut().for_each(|v| *v = T::zero());
        }
        self.input = None;
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Reusable activation storage for one sample's forward/backward pass.
pub(crate) struct Trace<T> {
    pub enc: Vec<T>,
    pub hidden: Vec<HiddenTrace<T>>,
    pub z: Vec<T>,
    pub out: Vec<T>,
    pre: Vec<T>,
    dbuf_a: Vec<T>,
    dbuf_b: Vec<T>,
}

pub(crate) struct HiddenTrace<T> {
    pub sin: Vec<T>,
    pub cos: Vec<T>,
}

impl<T: Real> Trace<T> {
    pub fn new(model: &FieldModel<T>) -> Self {
        let max_dim = model
            .layers
            .iter()
            .map(|l| l.in_dim.max(l.out_dim))
            .max()
            .unwrap_or(1);
        Self {
            enc: vec![T::zero(); model.encoding.dim()],
            hidden: (0..model.num_hidden)
                .map(|_| HiddenTrace {
                    sin: vec![T::zero(); model.hidden_width],
                    cos: vec![T::zero(); model.hidden_width],
                })
                .collect(),
            z: vec![T::zero(); model.output_dim()],
            out: vec![T::zero(); model.output_dim()],
            pre: vec![T::zero(); max_dim],
            dbuf_a: vec![T::zero(); max_dim],
            dbuf_b: vec![T::zero(); max_dim],
        }
    }
}

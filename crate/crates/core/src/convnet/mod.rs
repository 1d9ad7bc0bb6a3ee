//! Small from-scratch ConvNet producing two-node softmax outputs ("deep
//! features") for axial multi-channel patches.
//!
//! Architecture: conv(3x3, 32) -> maxpool(2x2) -> conv(3x3, 64) ->
//! maxpool(2x2) -> fc(128, dropout) -> fc(2) -> softmax, rectified linear
//! after each conv and the first fully connected layer. Widths are
//! parameters with those defaults, so gradient checks can run on reduced
//! instances of the same code path.
//!
//! Numerics are generic over `f32` (production) and `f64` (verification).
//! Activations use a channel-last (HWC) layout so the innermost loops run
//! over contiguous output channels. Inputs arrive channel-major (as stored
//! in `PatchSample`) in display range [0, 255] and are scaled by 1/255 on
//! entry. Dropout is inverted (expectation scaling applied during
//! training), so inference needs no dropout parameter and is deterministic.

pub mod io;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::standard_normal;

/// Float abstraction for the net: f32 in production, f64 when verifying
/// gradients against finite differences.
pub trait Scalar:
    num_traits::Float + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Architecture parameters. The layer sequence is fixed; widths and the
/// input patch size vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpec {
    /// Patch edge length (odd, large enough that both pools stay nonempty).
    pub input_hw: usize,
    pub input_channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub fc1_units: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            input_hw: 17,
            input_channels: 3,
            conv1_filters: 32,
            conv2_filters: 64,
            fc1_units: 128,
        }
    }
}

/// Derived per-layer spatial extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub conv1_out: usize,
    pub pool1_out: usize,
    pub conv2_out: usize,
    pub pool2_out: usize,
    pub flat: usize,
}

pub const NET_OUTPUTS: usize = 2;

impl NetSpec {
    pub fn for_patch_size(patch_size: usize) -> Self {
        NetSpec { input_hw: patch_size, ..Default::default() }
    }

    pub fn shape(&self) -> Result<NetShape> {
        self.validate()?;
        let conv1_out = self.input_hw - 2;
        let pool1_out = conv1_out / 2;
        if pool1_out < 3 {
            return Err(Error::invalid(
                "net spec",
                format!("input_hw {} leaves pool1 too small for conv2", self.input_hw),
            ));
        }
        let conv2_out = pool1_out - 2;
        let pool2_out = conv2_out / 2;
        if pool2_out < 1 {
            return Err(Error::invalid(
                "net spec",
                format!("input_hw {} collapses pool2 to zero extent", self.input_hw),
            ));
        }
        let flat = pool2_out * pool2_out * self.conv2_filters;
        Ok(NetShape { conv1_out, pool1_out, conv2_out, pool2_out, flat })
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_hw % 2 == 0 || self.input_hw < 3 {
            return Err(Error::invalid(
                "net spec",
                format!("input_hw must be odd and >= 3, got {}", self.input_hw),
            ));
        }
        for (name, v) in [
            ("input_channels", self.input_channels),
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("fc1_units", self.fc1_units),
        ] {
            if v == 0 {
                return Err(Error::invalid("net spec", format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.input_channels * self.input_hw * self.input_hw
    }

    /// Canonical architecture string; its SHA-256 is embedded in weight
    /// files to reject weights from a different architecture.
    pub fn canonical_string(&self) -> String {
        format!(
            "in{}x{}x{}|conv3x3x{}|pool2|conv3x3x{}|pool2|fc{}|dropout|fc{}|softmax",
            self.input_channels,
            self.input_hw,
            self.input_hw,
            self.conv1_filters,
            self.conv2_filters,
            self.fc1_units,
            NET_OUTPUTS
        )
    }

    pub fn spec_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.canonical_string().as_bytes());
        h.finalize().into()
    }
}

/// Names, shapes and payloads of the eight parameter tensors, in canonical
/// order. Shared by weights, gradients, and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetTensors<F> {
    /// conv1 kernels [3][3][in_c][f1]
    pub conv1_k: Vec<F>,
    pub conv1_b: Vec<F>,
    /// conv2 kernels [3][3][f1][f2]
    pub conv2_k: Vec<F>,
    pub conv2_b: Vec<F>,
    /// fc1 weights [flat][fc1]
    pub fc1_w: Vec<F>,
    pub fc1_b: Vec<F>,
    /// fc2 weights [fc1][2]
    pub fc2_w: Vec<F>,
    pub fc2_b: Vec<F>,
}

pub const TENSOR_NAMES: [&str; 8] =
    ["conv1_k", "conv1_b", "conv2_k", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"];

/// Decay applies to multiplicative weights, not biases.
pub fn is_weight_tensor(name: &str) -> bool {
    name.ends_with("_k") || name.ends_with("_w")
}

impl<F: Scalar> NetTensors<F> {
    pub fn zeros(spec: &NetSpec) -> Result<Self> {
        let shape = spec.shape()?;
        let z = F::zero();
        Ok(NetTensors {
            conv1_k: vec![z; 9 * spec.input_channels * spec.conv1_filters],
            conv1_b: vec![z; spec.conv1_filters],
            conv2_k: vec![z; 9 * spec.conv1_filters * spec.conv2_filters],
            conv2_b: vec![z; spec.conv2_filters],
            fc1_w: vec![z; shape.flat * spec.fc1_units],
            fc1_b: vec![z; spec.fc1_units],
            fc2_w: vec![z; spec.fc1_units * NET_OUTPUTS],
            fc2_b: vec![z; NET_OUTPUTS],
        })
    }

    pub fn fields(&self) -> [(&'static str, &Vec<F>); 8] {
        [
            ("conv1_k", &self.conv1_k),
            ("conv1_b", &self.conv1_b),
            ("conv2_k", &self.conv2_k),
            ("conv2_b", &self.conv2_b),
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("fc2_w", &self.fc2_w),
            ("fc2_b", &self.fc2_b),
        ]
    }

    pub fn fields_mut(&mut self) -> [(&'static str, &mut Vec<F>); 8] {
        [
            ("conv1_k", &mut self.conv1_k),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_k", &mut self.conv2_k),
            ("conv2_b", &mut self.conv2_b),
            ("fc1_w", &mut self.fc1_w),
            ("fc1_b", &mut self.fc1_b),
            ("fc2_w", &mut self.fc2_w),
            ("fc2_b", &mut self.fc2_b),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.fields().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Sum of squares over weight tensors only (the decay norm).
    pub fn weight_norm_sq(&self) -> F {
        let mut acc = F::zero();
        for (name, t) in self.fields() {
            if is_weight_tensor(name) {
                for &v in t {
                    acc = acc + v * v;
                }
            }
        }
        acc
    }
}

/// Trained or initialized network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetWeights<F> {
    pub spec: NetSpec,
    pub tensors: NetTensors<F>,
    /// Epoch whose snapshot these weights are (0 for freshly initialized).
    pub epoch_of_origin: u32,
}

/// He-style initialization: kernels and weights are Gaussian with variance
/// 2/fan_in, biases zero. Draw order is tensor by tensor in canonical
/// order, element by element in storage order.
pub fn init_weights<F: Scalar, R: Rng>(spec: &NetSpec, rng: &mut R) -> Result<NetWeights<F>> {
    let shape = spec.shape()?;
    let mut tensors = NetTensors::<F>::zeros(spec)?;
    let fills: [(&mut Vec<F>, usize); 4] = [
        (&mut tensors.conv1_k, 9 * spec.input_channels),
        (&mut tensors.conv2_k, 9 * spec.conv1_filters),
        (&mut tensors.fc1_w, shape.flat),
        (&mut tensors.fc2_w, spec.fc1_units),
    ];
    for (tensor, fan_in) in fills {
        let std = (2.0 / fan_in as f64).sqrt();
        for v in tensor.iter_mut() {
            *v = F::from_f64(std * standard_normal(rng));
        }
    }
    Ok(NetWeights { spec: *spec, tensors, epoch_of_origin: 0 })
}

/// Per-sample activation buffers, reused across samples of a batch.
struct Workspace<F> {
    x: Vec<F>,
    a1: Vec<F>,
    p1: Vec<F>,
    idx1: Vec<u32>,
    a2: Vec<F>,
    p2: Vec<F>,
    idx2: Vec<u32>,
    h: Vec<F>,
    hd: Vec<F>,
    logits: [F; NET_OUTPUTS],
    probs: [F; NET_OUTPUTS],
    // backward scratch
    d_pre1: Vec<F>,
    d_a1: Vec<F>,
    d_p1: Vec<F>,
    d_a2: Vec<F>,
    d_p2: Vec<F>,
    d_h: Vec<F>,
}

impl<F: Scalar> Workspace<F> {
    fn new(spec: &NetSpec) -> Result<Self> {
        let s = spec.shape()?;
        let z = F::zero();
        let (c1, c2) = (spec.conv1_filters, spec.conv2_filters);
        Ok(Workspace {
            x: vec![z; spec.input_hw * spec.input_hw * spec.input_channels],
            a1: vec![z; s.conv1_out * s.conv1_out * c1],
            p1: vec![z; s.pool1_out * s.pool1_out * c1],
            idx1: vec![0; s.pool1_out * s.pool1_out * c1],
            a2: vec![z; s.conv2_out * s.conv2_out * c2],
            p2: vec![z; s.flat],
            idx2: vec![0; s.flat],
            h: vec![z; spec.fc1_units],
            hd: vec![z; spec.fc1_units],
            logits: [z; NET_OUTPUTS],
            probs: [z; NET_OUTPUTS],
            d_pre1: vec![z; spec.fc1_units],
            d_a1: vec![z; s.conv1_out * s.conv1_out * c1],
            d_p1: vec![z; s.pool1_out * s.pool1_out * c1],
            d_a2: vec![z; s.conv2_out * s.conv2_out * c2],
            d_p2: vec![z; s.flat],
            d_h: vec![z; spec.fc1_units],
        })
    }
}

/// Loads a channel-major [3][s][s] patch in display range into the HWC
/// input buffer, scaled to [0, 1].
fn load_input<F: Scalar>(spec: &NetSpec, patch: &[f32], x: &mut [F]) -> Result<()> {
    if patch.len() != spec.patch_len() {
        return Err(Error::invalid(
            "net input",
            format!("patch has {} values, spec expects {}", patch.len(), spec.patch_len()),
        ));
    }
    let hw = spec.input_hw;
    let c_n = spec.input_channels;
    let plane = hw * hw;
    let scale = F::from_f64(1.0 / 255.0);
    for (i, v) in patch.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::invalid("net input", format!("non-finite value at index {i}")));
        }
        let (c, r) = (i / plane, i % plane);
        x[r * c_n + c] = F::from_f64(f64::from(*v)) * scale;
    }
    Ok(())
}

fn conv_forward<F: Scalar>(
    input: &[F],
    in_hw: usize,
    in_c: usize,
    kernels: &[F],
    biases: &[F],
    out_c: usize,
    output: &mut [F],
) {
    let out_hw = in_hw - 2;
    for oy in 0..out_hw {
        for ox in 0..out_hw {
            let out_base = (oy * out_hw + ox) * out_c;
            let cell = &mut output[out_base..out_base + out_c];
            cell.copy_from_slice(biases);
            for ky in 0..3 {
                for kx in 0..3 {
                    let in_base = ((oy + ky) * in_hw + ox + kx) * in_c;
                    for c in 0..in_c {
                        let v = input[in_base + c];
                        let w_base = ((ky * 3 + kx) * in_c + c) * out_c;
                        let w = &kernels[w_base..w_base + out_c];
                        for k in 0..out_c {
                            cell[k] = cell[k] + v * w[k];
                        }
                    }
                }
            }
            for k in 0..out_c {
                if cell[k] < F::zero() {
                    cell[k] = F::zero();
                }
            }
        }
    }
}

fn pool_forward<F: Scalar>(
    input: &[F],
    in_hw: usize,
    channels: usize,
    output: &mut [F],
    argmax: &mut [u32],
) {
    let out_hw = in_hw / 2;
    for oy in 0..out_hw {
        for ox in 0..out_hw {
            let out_base = (oy * out_hw + ox) * channels;
            for c in 0..channels {
                let mut best_i = ((2 * oy) * in_hw + 2 * ox) * channels + c;
                let mut best = input[best_i];
                // Fixed scan order; strict > keeps the first maximum on ties.
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let i = ((2 * oy + dy) * in_hw + 2 * ox + dx) * channels + c;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                output[out_base + c] = best;
                argmax[out_base + c] = best_i as u32;
            }
        }
    }
}

/// Forward pass through the whole net, filling `ws`. `dropout_scale` holds,
/// per fc1 unit, 0 (dropped) or 1/(1-p) (kept, inverted scaling); `None`
/// means inference (identity).
fn forward_into<F: Scalar>(
    w: &NetWeights<F>,
    patch: &[f32],
    dropout_scale: Option<&[F]>,
    ws: &mut Workspace<F>,
) -> Result<()> {
    let spec = &w.spec;
    let shape = spec.shape()?;
    load_input(spec, patch, &mut ws.x)?;
    conv_forward(
        &ws.x,
        spec.input_hw,
        spec.input_channels,
        &w.tensors.conv1_k,
        &w.tensors.conv1_b,
        spec.conv1_filters,
        &mut ws.a1,
    );
    pool_forward(&ws.a1, shape.conv1_out, spec.conv1_filters, &mut ws.p1, &mut ws.idx1);
    conv_forward(
        &ws.p1,
        shape.pool1_out,
        spec.conv1_filters,
        &w.tensors.conv2_k,
        &w.tensors.conv2_b,
        spec.conv2_filters,
        &mut ws.a2,
    );
    pool_forward(&ws.a2, shape.conv2_out, spec.conv2_filters, &mut ws.p2, &mut ws.idx2);
    // fc1 + relu
    for j in 0..spec.fc1_units {
        ws.h[j] = w.tensors.fc1_b[j];
    }
    for (i, &v) in ws.p2.iter().enumerate() {
        let row = &w.tensors.fc1_w[i * spec.fc1_units..(i + 1) * spec.fc1_units];
        for j in 0..spec.fc1_units {
            ws.h[j] = ws.h[j] + v * row[j];
        }
    }
    for j in 0..spec.fc1_units {
        if ws.h[j] < F::zero() {
            ws.h[j] = F::zero();
        }
        ws.hd[j] = match dropout_scale {
            Some(scale) => ws.h[j] * scale[j],
            None => ws.h[j],
        };
    }
    // fc2
    ws.logits = [w.tensors.fc2_b[0], w.tensors.fc2_b[1]];
    for (j, &v) in ws.hd.iter().enumerate() {
        ws.logits[0] = ws.logits[0] + v * w.tensors.fc2_w[j * NET_OUTPUTS];
        ws.logits[1] = ws.logits[1] + v * w.tensors.fc2_w[j * NET_OUTPUTS + 1];
    }
    let m = ws.logits[0].max(ws.logits[1]);
    let e0 = (ws.logits[0] - m).exp();
    let e1 = (ws.logits[1] - m).exp();
    let denom = e0 + e1;
    ws.probs = [e0 / denom, e1 / denom];
    Ok(())
}

/// Stable cross-entropy of the cached logits against `label`.
fn sample_loss<F: Scalar>(ws: &Workspace<F>, label: bool) -> F {
    let m = ws.logits[0].max(ws.logits[1]);
    let lse = m + ((ws.logits[0] - m).exp() + (ws.logits[1] - m).exp()).ln();
    lse - ws.logits[usize::from(label)]
}

/// Inference: deterministic softmax probabilities for one patch.
pub fn infer_probs<F: Scalar>(w: &NetWeights<F>, patch: &[f32]) -> Result<[F; NET_OUTPUTS]> {
    let mut ws = Workspace::new(&w.spec)?;
    forward_into(w, patch, None, &mut ws)?;
    Ok(ws.probs)
}

/// The two softmax outputs used as learned descriptors downstream.
pub fn deep_features(w: &NetWeights<f32>, patch: &[f32]) -> Result<[f64; NET_OUTPUTS]> {
    let p = infer_probs(w, patch)?;
    Ok([f64::from(p[0]), f64::from(p[1])])
}

/// Inference context reusing one set of activation buffers, for callers
/// running the net over many patches (per-voxel zone prediction).
pub struct Inference<'w, F: Scalar> {
    weights: &'w NetWeights<F>,
    ws: Workspace<F>,
}

impl<'w, F: Scalar> Inference<'w, F> {
    pub fn new(weights: &'w NetWeights<F>) -> Result<Self> {
        Ok(Inference { weights, ws: Workspace::new(&weights.spec)? })
    }

    pub fn probs(&mut self, patch: &[f32]) -> Result<[F; NET_OUTPUTS]> {
        forward_into(self.weights, patch, None, &mut self.ws)?;
        Ok(self.ws.probs)
    }
}

impl Inference<'_, f32> {
    pub fn deep_features(&mut self, patch: &[f32]) -> Result<[f64; NET_OUTPUTS]> {
        let p = self.probs(patch)?;
        Ok([f64::from(p[0]), f64::from(p[1])])
    }
}

/// Dropout plan for one batch: per-sample scale vectors over fc1 units
/// (0 = dropped, 1/(1-p) = kept). `None` disables dropout entirely.
pub struct BatchMasks<F> {
    per_sample: Option<Vec<Vec<F>>>,
}

impl<F: Scalar> BatchMasks<F> {
    pub fn none(batch_len: usize) -> Self {
        let _ = batch_len;
        BatchMasks { per_sample: None }
    }

    /// Bernoulli(1-dropout) masks with inverted scaling, one vector per
    /// sample, drawn unit-by-unit from `rng`.
    pub fn sample<R: Rng>(
        batch_len: usize,
        fc1_units: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(
                "dropout",
                format!("rate must lie in [0, 1), got {dropout}"),
            ));
        }
        if dropout == 0.0 {
            return Ok(Self::none(batch_len));
        }
        let keep = F::from_f64(1.0 / (1.0 - dropout));
        let per_sample = (0..batch_len)
            .map(|_| {
                (0..fc1_units)
                    .map(|_| if rng.gen::<f64>() < dropout { F::zero() } else { keep })
                    .collect()
            })
            .collect();
        Ok(BatchMasks { per_sample: Some(per_sample) })
    }

    fn for_sample(&self, i: usize) -> Option<&[F]> {
        self.per_sample.as_ref().map(|m| m[i].as_slice())
    }
}

/// Mean cross-entropy over the batch plus `weight_decay/2 * ||W||^2` (decay
/// over weight tensors only), together with its full gradient. The same
/// masks make the value a deterministic function of (weights, batch), which
/// the finite-difference oracle relies on.
pub fn batch_loss_and_grads<F: Scalar>(
    w: &NetWeights<F>,
    batch: &[(&[f32], bool)],
    masks: &BatchMasks<F>,
    weight_decay: f64,
) -> Result<(f64, NetTensors<F>)> {
    if batch.is_empty() {
        return Err(Error::invalid("net batch", "batch is empty"));
    }
    let spec = &w.spec;
    let shape = spec.shape()?;
    let mut ws = Workspace::new(spec)?;
    let mut grads = NetTensors::<F>::zeros(spec)?;
    let inv_n = F::from_f64(1.0 / batch.len() as f64);
    let mut loss_acc = F::zero();
    let fc1 = spec.fc1_units;

    for (si, &(patch, label)) in batch.iter().enumerate() {
        let mask = masks.for_sample(si);
        forward_into(w, patch, mask, &mut ws)?;
        loss_acc = loss_acc + sample_loss(&ws, label);

        // dlogits = (probs - onehot) / n
        let mut dlogits = ws.probs;
        dlogits[usize::from(label)] = dlogits[usize::from(label)] - F::one();
        dlogits = [dlogits[0] * inv_n, dlogits[1] * inv_n];

        // fc2 backward
        for j in 0..fc1 {
            let hdv = ws.hd[j];
            grads.fc2_w[j * NET_OUTPUTS] = grads.fc2_w[j * NET_OUTPUTS] + hdv * dlogits[0];
            grads.fc2_w[j * NET_OUTPUTS + 1] =
                grads.fc2_w[j * NET_OUTPUTS + 1] + hdv * dlogits[1];
            ws.d_h[j] = w.tensors.fc2_w[j * NET_OUTPUTS] * dlogits[0]
                + w.tensors.fc2_w[j * NET_OUTPUTS + 1] * dlogits[1];
        }
        grads.fc2_b[0] = grads.fc2_b[0] + dlogits[0];
        grads.fc2_b[1] = grads.fc2_b[1] + dlogits[1];

        // dropout and relu backward into d_pre1
        for j in 0..fc1 {
            let mut g = ws.d_h[j];
            if let Some(scale) = mask {
                g = g * scale[j];
            }
            ws.d_pre1[j] = if ws.h[j] > F::zero() { g } else { F::zero() };
        }

        // fc1 backward
        for i in 0..shape.flat {
            let v = ws.p2[i];
            let w_row = &w.tensors.fc1_w[i * fc1..(i + 1) * fc1];
            let g_row = &mut grads.fc1_w[i * fc1..(i + 1) * fc1];
            let mut acc = F::zero();
            for j in 0..fc1 {
                g_row[j] = g_row[j] + v * ws.d_pre1[j];
                acc = acc + w_row[j] * ws.d_pre1[j];
            }
            ws.d_p2[i] = acc;
        }
        for j in 0..fc1 {
            grads.fc1_b[j] = grads.fc1_b[j] + ws.d_pre1[j];
        }

        // unpool2 into d_a2 (relu folded in)
        for v in ws.d_a2.iter_mut() {
            *v = F::zero();
        }
        for (o, &src) in ws.idx2.iter().enumerate() {
            let i = src as usize;
            if ws.a2[i] > F::zero() {
                ws.d_a2[i] = ws.d_a2[i] + ws.d_p2[o];
            }
        }

        // conv2 backward: grads and input deltas
        for v in ws.d_p1.iter_mut() {
            *v = F::zero();
        }
        conv_backward(
            &ws.p1,
            shape.pool1_out,
            spec.conv1_filters,
            &w.tensors.conv2_k,
            spec.conv2_filters,
            &ws.d_a2,
            &mut grads.conv2_k,
            &mut grads.conv2_b,
            Some(&mut ws.d_p1),
        );

        // unpool1 into d_a1 (relu folded in)
        for v in ws.d_a1.iter_mut() {
            *v = F::zero();
        }
        for (o, &src) in ws.idx1.iter().enumerate() {
            let i = src as usize;
            if ws.a1[i] > F::zero() {
                ws.d_a1[i] = ws.d_a1[i] + ws.d_p1[o];
            }
        }

        // conv1 backward: grads only, no input deltas needed
        conv_backward(
            &ws.x,
            spec.input_hw,
            spec.input_channels,
            &w.tensors.conv1_k,
            spec.conv1_filters,
            &ws.d_a1,
            &mut grads.conv1_k,
            &mut grads.conv1_b,
            None,
        );
    }

    let mut loss = loss_acc.into_f64() / batch.len() as f64;
    if weight_decay > 0.0 {
        loss += 0.5 * weight_decay * w.tensors.weight_norm_sq().into_f64();
        let wd = F::from_f64(weight_decay);
        for ((name, g), (_, t)) in grads.fields_mut().into_iter().zip(w.tensors.fields()) {
            if is_weight_tensor(name) {
                for (gv, &tv) in g.iter_mut().zip(t) {
                    *gv = *gv + wd * tv;
                }
            }
        }
    }
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::numerical("net backward", "non-finite loss or gradient"));
    }
    Ok((loss, grads))
}

/// Gradient of a valid 3x3 convolution w.r.t. kernels, biases, and
/// (optionally) the input. `d_out` is the delta after the relu mask has
/// been applied.
#[allow(clippy::too_many_arguments)]
fn conv_backward<F: Scalar>(
    input: &[F],
    in_hw: usize,
    in_c: usize,
    kernels: &[F],
    out_c: usize,
    d_out: &[F],
    d_kernels: &mut [F],
    d_biases: &mut [F],
    mut d_input: Option<&mut Vec<F>>,
) {
    let out_hw = in_hw - 2;
    for oy in 0..out_hw {
        for ox in 0..out_hw {
            let g = &d_out[(oy * out_hw + ox) * out_c..(oy * out_hw + ox + 1) * out_c];
            for k in 0..out_c {
                d_biases[k] = d_biases[k] + g[k];
            }
            for ky in 0..3 {
                for kx in 0..3 {
                    let in_base = ((oy + ky) * in_hw + ox + kx) * in_c;
                    for c in 0..in_c {
                        let v = input[in_base + c];
                        let w_base = ((ky * 3 + kx) * in_c + c) * out_c;
                        let dk = &mut d_kernels[w_base..w_base + out_c];
                        let mut acc = F::zero();
                        for k in 0..out_c {
                            dk[k] = dk[k] + v * g[k];
                            acc = acc + kernels[w_base + k] * g[k];
                        }
                        if let Some(di) = d_input.as_deref_mut() {
                            di[in_base + c] = di[in_base + c] + acc;
                        }
                    }
                }
            }
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    pub base_lr: f64,
    /// The learning rate is multiplied by `lr_decade_factor` once per
    /// `lr_decade_every` epochs: lr(e) = base * factor^(e / every).
    pub lr_decade_every: usize,
    pub lr_decade_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub dropout: f64,
    pub val_fraction: f64,
    /// Seed for the training RNG stream (weight init is the caller's).
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 30,
            base_lr: 0.001,
            lr_decade_every: 10,
            lr_decade_factor: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch: 256,
            dropout: 0.5,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Error::invalid("train hyper", why);
        if self.epochs == 0 || self.batch == 0 || self.lr_decade_every == 0 {
            return Err(bad("epochs, batch, and lr_decade_every must be >= 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(bad(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.lr_decade_factor > 0.0 && self.lr_decade_factor <= 1.0) {
            return Err(bad(format!(
                "lr_decade_factor must lie in (0, 1], got {}",
                self.lr_decade_factor
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(bad(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(bad(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(bad(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(bad(format!(
                "val_fraction must lie in (0, 0.5), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decade_factor.powi((epoch / self.lr_decade_every) as i32)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// A training sample as (channel-major patch, label).
pub type TrainSample<'a> = (&'a [f32], bool);

fn shuffle<R: Rng>(indices: &mut [usize], rng: &mut R) {
    for k in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=k);
        indices.swap(k, j);
    }
}

/// [`train`] driven by a fresh RNG built from `hyper.seed`.
pub fn train_seeded<F: Scalar>(
    spec: &NetSpec,
    samples: &[TrainSample<'_>],
    hyper: &TrainHyper,
) -> Result<(NetWeights<F>, Vec<EpochStats>)> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(hyper.seed);
    train(spec, samples, hyper, &mut rng)
}

/// SGD with momentum and weight decay over mini-batches, with a stratified
/// validation split. Returns the epoch snapshot with the lowest validation
/// loss (ties favor the earliest epoch) and the per-epoch history.
///
/// RNG consumption order per epoch: training-order shuffle, then dropout
/// masks batch by batch. The validation split consumes the stream once
/// before epoch 0.
pub fn train<F: Scalar, R: Rng>(
    spec: &NetSpec,
    samples: &[TrainSample<'_>],
    hyper: &TrainHyper,
    rng: &mut R,
) -> Result<(NetWeights<F>, Vec<EpochStats>)> {
    hyper.validate()?;
    if samples.len() < 2 * hyper.batch {
        return Err(Error::invalid(
            "train set",
            format!(
                "need at least 2*batch = {} samples, got {}",
                2 * hyper.batch,
                samples.len()
            ),
        ));
    }
    // Stratified split: per class, shuffle then take ceil(frac * n) for
    // validation.
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &(_, label)) in samples.iter().enumerate() {
        by_class[usize::from(label)].push(i);
    }
    if by_class[0].is_empty() || by_class[1].is_empty() {
        return Err(Error::invalid("train set", "both classes must be present"));
    }
    let mut val_idx = Vec::new();
    let mut train_idx = Vec::new();
    for class in &mut by_class {
        shuffle(class, rng);
        let n_val = ((class.len() as f64) * hyper.val_fraction).ceil() as usize;
        let n_val = n_val.clamp(1, class.len() - 1);
        val_idx.extend_from_slice(&class[..n_val]);
        train_idx.extend_from_slice(&class[n_val..]);
    }
    val_idx.sort_unstable();
    train_idx.sort_unstable();

    let mut weights = init_weights::<F, R>(spec, rng)?;
    let mut velocity = NetTensors::<F>::zeros(spec)?;
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, NetWeights<F>)> = None;

    let mut order = train_idx.clone();
    for epoch in 0..hyper.epochs {
        let lr = hyper.lr_at_epoch(epoch);
        shuffle(&mut order, rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| samples[i]).collect();
            let masks =
                BatchMasks::<F>::sample(batch.len(), spec.fc1_units, hyper.dropout, rng)?;
            let (loss, grads) = batch_loss_and_grads(&weights, &batch, &masks, hyper.weight_decay)
                .map_err(|e| match e {
                    Error::Numerical { .. } => Error::numerical(
                        "net train",
                        format!("epoch {epoch}, batch {batches}: {e}"),
                    ),
                    other => other,
                })?;
            epoch_loss += loss;
            batches += 1;
            let mu = F::from_f64(hyper.momentum);
            let step = F::from_f64(lr);
            for ((_, v), ((_, g), (_, t))) in velocity
                .fields_mut()
                .into_iter()
                .zip(grads.fields().into_iter().zip(weights.tensors.fields_mut()))
            {
                for i in 0..v.len() {
                    v[i] = mu * v[i] - step * g[i];
                    t[i] = t[i] + v[i];
                }
            }
        }
        let (val_loss, val_accuracy) = evaluate(&weights, samples, &val_idx)?;
        if !val_loss.is_finite() {
            return Err(Error::numerical(
                "net train",
                format!("epoch {epoch}: validation loss diverged"),
            ));
        }
        history.push(EpochStats {
            epoch: epoch as u32,
            lr,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_loss,
            val_accuracy,
        });
        let improved = match &best {
            None => true,
            Some((best_loss, _)) => val_loss < *best_loss,
        };
        if improved {
            let mut snapshot = weights.clone();
            snapshot.epoch_of_origin = epoch as u32;
            best = Some((val_loss, snapshot));
        }
    }
    let (_, best_weights) = best.expect("epochs >= 1 guarantees a snapshot");
    Ok((best_weights, history))
}

/// Mean inference-mode cross-entropy and accuracy over the given indices.
fn evaluate<F: Scalar>(
    w: &NetWeights<F>,
    samples: &[TrainSample<'_>],
    indices: &[usize],
) -> Result<(f64, f64)> {
    let mut ws = Workspace::new(&w.spec)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for &i in indices {
        let (patch, label) = samples[i];
        forward_into(w, patch, None, &mut ws)?;
        loss += sample_loss(&ws, label).into_f64();
        let predicted = ws.probs[1] > ws.probs[0];
        if predicted == label {
            correct += 1;
        }
    }
    let n = indices.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

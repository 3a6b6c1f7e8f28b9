//! Masked multilayer perceptron: parameters, forward pass, loss,
//! analytic gradients, and full-dataset evaluation.
//!
//! The network is a dense affine chain with rectifiers between hidden
//! layers and identity into the loss. A binary [`Mask`] over the weights
//! turns it into the pruned model `f(w ⊙ m)`: masked-out weights
//! contribute exactly zero everywhere (forward, backward, updates).
//!
//! Precision policy: parameters are stored in `f32`; activations, the
//! loss, and every accumulation are `f64`. Gradients are reported back in
//! `f32`. This keeps checkpoints compact and bit-stable while making the
//! analytic gradients tight enough to verify against central finite
//! differences at 1e-4 relative error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::math;
use crate::rng::{self, tag};

/// Architecture of the MLP: layer sizes from input to output.
///
/// The activation is fixed (rectifier between hidden layers, identity into
/// the loss), so the sizes are the whole specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "model needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "all layer sizes must be >= 1, got {layer_sizes:?}"
            )));
        }
        Ok(Self { layer_sizes })
    }

    /// The 784-300-100-10 fully-connected architecture.
    pub fn lenet_300_100() -> Self {
        Self {
            layer_sizes: vec![784, 300, 100, 10],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Stable tensor name of layer `l` (0-based): `fc{l+1}.weight`.
    pub fn weight_name(l: usize) -> String {
        format!("fc{}.weight", l + 1)
    }

    pub fn bias_name(l: usize) -> String {
        format!("fc{}.bias", l + 1)
    }
}

/// One layer's parameters. `weight` is `out_dim × in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// All parameter tensors of a network, in fixed layer order.
///
/// Tensors are addressable by stable names (`fc1.weight`, `fc1.bias`, ...)
/// and iterate in that order, so persistence and pruning tie-breaks are
/// deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    spec: MlpSpec,
    layers: Vec<LayerParams>,
}

impl ParamSet {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Total number of parameters, biases included.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Named tensors in fixed order: `fc1.weight`, `fc1.bias`, `fc2.weight`, ...
    pub fn named_tensors(&self) -> impl Iterator<Item = (String, Vec<usize>, &[f32])> {
        self.layers.iter().enumerate().flat_map(|(l, layer)| {
            [
                (
                    MlpSpec::weight_name(l),
                    vec![layer.out_dim, layer.in_dim],
                    layer.weight.as_slice(),
                ),
                (
                    MlpSpec::bias_name(l),
                    vec![layer.out_dim],
                    layer.bias.as_slice(),
                ),
            ]
        })
    }

    /// Rebuild a ParamSet from named tensors (checkpoint loading).
    pub fn from_named_tensors(
        spec: &MlpSpec,
        mut lookup: impl FnMut(&str) -> Option<(Vec<usize>, Vec<f32>)>,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.num_layers());
        for l in 0..spec.num_layers() {
            let (in_dim, out_dim) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
            let wname = MlpSpec::weight_name(l);
            let (wdims, weight) = lookup(&wname)
                .ok_or_else(|| Error::BadCheckpoint(format!("missing tensor {wname}")))?;
            if wdims != [out_dim, in_dim] {
                return Err(Error::ShapeMismatch {
                    context: wname,
                    expected: format!("[{out_dim}, {in_dim}]"),
                    got: format!("{wdims:?}"),
                });
            }
            let bname = MlpSpec::bias_name(l);
            let (bdims, bias) = lookup(&bname)
                .ok_or_else(|| Error::BadCheckpoint(format!("missing tensor {bname}")))?;
            if bdims != [out_dim] {
                return Err(Error::ShapeMismatch {
                    context: bname,
                    expected: format!("[{out_dim}]"),
                    got: format!("{bdims:?}"),
                });
            }
            layers.push(LayerParams {
                in_dim,
                out_dim,
                weight,
                bias,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// `self ⊙ mask`: returns a copy with masked-out weights set to
    /// literal `+0.0`.
    pub fn masked(&self, mask: &Mask) -> Result<ParamSet> {
        mask.check_shapes(self)?;
        let mut out = self.clone();
        for (l, layer) in out.layers.iter_mut().enumerate() {
            if let Some(bits) = mask.bits(&MlpSpec::weight_name(l)) {
                for (w, &b) in layer.weight.iter_mut().zip(bits) {
                    if b == 0 {
                        *w = 0.0;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Bitwise equality over every tensor (distinguishes `-0.0`/`+0.0`).
    pub fn bits_eq(&self, other: &ParamSet) -> bool {
        self.spec == other.spec
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight
                    .iter()
                    .zip(&b.weight)
                    .all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.bias
                        .iter()
                        .zip(&b.bias)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Elementwise check that every masked-out weight is exactly zero.
    pub fn masked_coords_are_zero(&self, mask: &Mask) -> bool {
        self.layers
            .iter()
            .enumerate()
            .all(|(l, layer)| match mask.bits(&MlpSpec::weight_name(l)) {
                None => true,
                Some(bits) => layer
                    .weight
                    .iter()
                    .zip(bits)
                    .all(|(&w, &b)| b == 1 || w == 0.0),
            })
    }
}

/// A batch of examples: `rows × input_dim` features (already widened to
/// `f64` for the kernels) and integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<f64>,
    pub rows: usize,
    pub input_dim: usize,
    pub labels: Vec<u32>,
}

impl Batch {
    pub fn new(features: Vec<f64>, rows: usize, input_dim: usize, labels: Vec<u32>) -> Self {
        assert_eq!(features.len(), rows * input_dim);
        assert_eq!(labels.len(), rows);
        assert!(rows >= 1, "batch must hold at least one example");
        Self {
            features,
            rows,
            input_dim,
            labels,
        }
    }

    /// Gather rows of an `f32` feature matrix into a batch.
    pub fn gather(features: &[f32], input_dim: usize, labels: &[u32], indices: &[usize]) -> Self {
        let mut out = Vec::with_capacity(indices.len() * input_dim);
        let mut lab = Vec::with_capacity(indices.len());
        for &i in indices {
            out.extend(
                features[i * input_dim..(i + 1) * input_dim]
                    .iter()
                    .map(|&v| v as f64),
            );
            lab.push(labels[i]);
        }
        Self::new(out, indices.len(), input_dim, lab)
    }
}

/// Mean loss (nats) and top-1 accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Parameter-shaped gradients, as produced by backprop.
///
/// These are the *raw* gradients: at a masked-out coordinate the entry is
/// `∂L/∂(w ⊙ m)` at that position, which gradient-based pruning scores
/// need. The optimizer must use [`GradSet::masked`], which zeroes pruned
/// coordinates exactly.
#[derive(Debug, Clone)]
pub struct GradSet {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weight: Vec<f32>,
    pub d_bias: Vec<f32>,
}

impl GradSet {
    /// `raw ⊙ mask`: gradient with pruned coordinates zeroed exactly.
    pub fn masked(&self, mask: &Mask) -> GradSet {
        let mut out = self.clone();
        for (l, g) in out.layers.iter_mut().enumerate() {
            if let Some(bits) = mask.bits(&MlpSpec::weight_name(l)) {
                for (d, &b) in g.d_weight.iter_mut().zip(bits) {
                    if b == 0 {
                        *d = 0.0;
                    }
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| {
            g.d_weight.iter().all(|v| v.is_finite()) && g.d_bias.iter().all(|v| v.is_finite())
        })
    }
}

/// Kaiming-normal initialization: weights `~ N(0, 2 / fan_in)`, biases
/// exactly zero. Identical `(spec, seed)` give bit-identical parameters.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamSet {
    let mut layers = Vec::with_capacity(spec.num_layers());
    for l in 0..spec.num_layers() {
        let (in_dim, out_dim) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let std = (2.0 / in_dim as f64).sqrt();
        let mut rng = rng::stream(seed, tag::INIT, l as u64);
        let weight: Vec<f32> = (0..out_dim * in_dim)
            .map(|_| (rng::standard_normal(&mut rng) * std) as f32)
            .collect();
        layers.push(LayerParams {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        });
    }
    ParamSet {
        spec: spec.clone(),
        layers,
    }
}

fn check_input_shape(params: &ParamSet, input_dim: usize) -> Result<()> {
    let expect = params.spec.input_dim();
    if input_dim != expect {
        return Err(Error::ShapeMismatch {
            context: "fc1 (input)".into(),
            expected: format!("input_dim {expect}"),
            got: format!("input_dim {input_dim}"),
        });
    }
    Ok(())
}

/// Materialize `w ⊙ m` for one layer (masked entries become literal `+0.0`).
fn effective_weights(layer: &LayerParams, bits: Option<&[u8]>) -> Vec<f32> {
    match bits {
        None => layer.weight.clone(),
        Some(bits) => layer
            .weight
            .iter()
            .zip(bits)
            .map(|(&w, &b)| if b == 0 { 0.0 } else { w })
            .collect(),
    }
}

/// Forward pass: logits of the masked network for a feature matrix.
pub fn forward(
    params: &ParamSet,
    mask: &Mask,
    x: &[f64],
    rows: usize,
    input_dim: usize,
) -> Result<Vec<f64>> {
    mask.check_shapes(params)?;
    check_input_shape(params, input_dim)?;
    let mut act = x.to_vec();
    let mut dim = input_dim;
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let w_eff = effective_weights(layer, mask.bits(&MlpSpec::weight_name(l)));
        let mut z = vec![0.0f64; rows * layer.out_dim];
        math::affine_forward(&act, rows, dim, &w_eff, &layer.bias, layer.out_dim, &mut z);
        if l != last {
            math::relu_inplace(&mut z);
        }
        act = z;
        dim = layer.out_dim;
    }
    Ok(act)
}

/// Mean cross-entropy loss, accuracy, and raw gradients on one batch.
///
/// Raw and masked gradients are both available from the result: the
/// returned [`GradSet`] is raw; [`GradSet::masked`] gives `raw ⊙ mask`.
pub fn loss_and_grads(params: &ParamSet, mask: &Mask, batch: &Batch) -> Result<(Metrics, GradSet)> {
    mask.check_shapes(params)?;
    check_input_shape(params, batch.input_dim)?;
    let rows = batch.rows;
    let classes = params.spec.output_dim();

    // Forward, keeping pre-activations and the effective weights of every
    // layer for the backward sweep.
    let num_layers = params.layers.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers + 1); // post-activation, acts[0] = input
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(num_layers); // pre-activation
    let mut w_effs: Vec<Vec<f32>> = Vec::with_capacity(num_layers);
    acts.push(batch.features.clone());
    let mut dim = batch.input_dim;
    for (l, layer) in params.layers.iter().enumerate() {
        let w_eff = effective_weights(layer, mask.bits(&MlpSpec::weight_name(l)));
        let mut z = vec![0.0f64; rows * layer.out_dim];
        math::affine_forward(
            acts.last().unwrap(),
            rows,
            dim,
            &w_eff,
            &layer.bias,
            layer.out_dim,
            &mut z,
        );
        pre.push(z.clone());
        if l != num_layers - 1 {
            math::relu_inplace(&mut z);
        }
        acts.push(z);
        w_effs.push(w_eff);
        dim = layer.out_dim;
    }

    let logits = acts.last().unwrap();
    let mut dlogits = vec![0.0f64; rows * classes];
    let (loss_sum, correct) =
        math::softmax_xent(logits, rows, classes, &batch.labels, Some(&mut dlogits));
    let loss = loss_sum / rows as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, step: 0 });
    }
    let inv_rows = 1.0 / rows as f64;
    for d in dlogits.iter_mut() {
        *d *= inv_rows;
    }

    // Backward.
    let mut grads = vec![
        LayerGrads {
            d_weight: Vec::new(),
            d_bias: Vec::new()
        };
        num_layers
    ];
    let mut delta = dlogits;
    for l in (0..num_layers).rev() {
        let layer = &params.layers[l];
        let mut dw = vec![0.0f32; layer.weight.len()];
        let mut db = vec![0.0f32; layer.bias.len()];
        math::grad_weights(&delta, &acts[l], rows, layer.in_dim, layer.out_dim, &mut dw);
        math::grad_bias(&delta, rows, layer.out_dim, &mut db);
        grads[l] = LayerGrads {
            d_weight: dw,
            d_bias: db,
        };
        if l > 0 {
            let mut dx = vec![0.0f64; rows * layer.in_dim];
            math::grad_input(
                &delta,
                rows,
                layer.in_dim,
                &w_effs[l],
                layer.out_dim,
                &mut dx,
            );
            math::relu_backward(&pre[l - 1], &mut dx);
            delta = dx;
        }
    }

    Ok((
        Metrics {
            loss,
            accuracy: correct as f64 / rows as f64,
        },
        GradSet { layers: grads },
    ))
}

/// Full-dataset mean loss and top-1 accuracy (argmax ties go to the
/// lowest class index). Deterministic; does not mutate parameters.
pub fn evaluate(params: &ParamSet, mask: &Mask, data: &crate::data::Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    mask.check_shapes(params)?;
    check_input_shape(params, data.input_dim)?;
    let classes = params.spec.output_dim();

    // Fixed chunk size: the per-chunk partial sums and their combination
    // order never depend on thread count.
    const CHUNK: usize = 512;
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < data.len() {
        let end = (start + CHUNK).min(data.len());
        let rows = end - start;
        let feats: Vec<f64> = data.features[start * data.input_dim..end * data.input_dim]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let logits = forward(params, mask, &feats, rows, data.input_dim)?;
        let (ls, c) = math::softmax_xent(&logits, rows, classes, &data.labels[start..end], None);
        loss_sum += ls;
        correct += c;
        start = end;
    }
    let loss = loss_sum / data.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, step: 0 });
    }
    Ok(Metrics {
        loss,
        accuracy: correct as f64 / data.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::mask::{Mask, MaskEntry, PrunableScope};

    fn scope_of(spec: &MlpSpec) -> PrunableScope {
        PrunableScope::hidden_weights(spec)
    }

    fn ones_mask(params: &ParamSet) -> Mask {
        Mask::all_ones(params, &scope_of(params.spec()))
    }

    fn batch_from(ds: &crate::data::Dataset) -> Batch {
        let idx: Vec<usize> = (0..ds.len()).collect();
        Batch::gather(&ds.features, ds.input_dim, &ds.labels, &idx)
    }

    fn loss_of(params: &ParamSet, mask: &Mask, batch: &Batch) -> f64 {
        loss_and_grads(params, mask, batch).unwrap().0.loss
    }

    /// Central finite difference with realized f32 perturbations.
    fn fd_weight(params: &ParamSet, mask: &Mask, batch: &Batch, l: usize, i: usize, h: f64) -> f64 {
        let mut p = params.clone();
        let orig = p.layers()[l].weight[i];
        let hp = (orig as f64 + h) as f32;
        let hm = (orig as f64 - h) as f32;
        p.layers_mut()[l].weight[i] = hp;
        let lp = loss_of(&p, mask, batch);
        p.layers_mut()[l].weight[i] = hm;
        let lm = loss_of(&p, mask, batch);
        (lp - lm) / (hp as f64 - hm as f64)
    }

    fn fd_bias(params: &ParamSet, mask: &Mask, batch: &Batch, l: usize, i: usize, h: f64) -> f64 {
        let mut p = params.clone();
        let orig = p.layers()[l].bias[i];
        let hp = (orig as f64 + h) as f32;
        let hm = (orig as f64 - h) as f32;
        p.layers_mut()[l].bias[i] = hp;
        let lp = loss_of(&p, mask, batch);
        p.layers_mut()[l].bias[i] = hm;
        let lm = loss_of(&p, mask, batch);
        (lp - lm) / (hp as f64 - hm as f64)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let denom = a.abs().max(b.abs());
        if denom < 1e-10 {
            0.0
        } else {
            (a - b).abs() / denom
        }
    }

    #[test]
    fn init_biases_zero_and_deterministic() {
        let spec = MlpSpec::lenet_300_100();
        let a = init_params(&spec, 1);
        let b = init_params(&spec, 1);
        assert!(a.bits_eq(&b));
        for layer in a.layers() {
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
        let c = init_params(&spec, 2);
        assert!(!a.bits_eq(&c));
    }

    #[test]
    fn init_first_layer_variance_matches_kaiming() {
        // 235200 samples; sample variance within 5% of 2/784.
        let spec = MlpSpec::lenet_300_100();
        let params = init_params(&spec, 1);
        let w = &params.layers()[0].weight;
        assert_eq!(w.len(), 235_200);
        let n = w.len() as f64;
        let mean: f64 = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = 2.0 / 784.0;
        assert!(
            (var - expect).abs() / expect < 0.05,
            "sample variance {var} vs expected {expect}"
        );
    }

    #[test]
    fn gradients_match_finite_differences_on_tiny_net() {
        // [2, 3, 2] with random params: every coordinate within 1e-4
        // relative of the central finite difference.
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let params = init_params(&spec, 17);
        let mask = ones_mask(&params);
        let ds = make_synthetic(6, 2, 2, 2.0, 9);
        let batch = batch_from(&ds);
        let (_, grads) = loss_and_grads(&params, &mask, &batch).unwrap();
        let h = 1e-4;
        for l in 0..params.layers().len() {
            for i in 0..params.layers()[l].weight.len() {
                let fd = fd_weight(&params, &mask, &batch, l, i, h);
                let g = grads.layers[l].d_weight[i] as f64;
                assert!(rel_err(g, fd) < 1e-4, "layer {l} w[{i}]: {g} vs fd {fd}");
            }
            for i in 0..params.layers()[l].bias.len() {
                let fd = fd_bias(&params, &mask, &batch, l, i, h);
                let g = grads.layers[l].d_bias[i] as f64;
                assert!(rel_err(g, fd) < 1e-4, "layer {l} b[{i}]: {g} vs fd {fd}");
            }
        }
    }

    #[test]
    fn zero_net_output_bias_gradient_closed_form() {
        // All parameters zero: d(bias_out)[k] = 1/K - count(y = k)/B.
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let mut params = init_params(&spec, 0);
        params.layers_mut()[0].weight.fill(0.0);
        let mask = ones_mask(&params);
        let batch = Batch::new(vec![0.3, -0.2, 0.1, 0.4, 0.0, 1.0], 3, 2, vec![0, 1, 1]);
        let (_, grads) = loss_and_grads(&params, &mask, &batch).unwrap();
        let db = &grads.layers[0].d_bias;
        assert!((db[0] as f64 - (0.5 - 1.0 / 3.0)).abs() < 1e-7);
        assert!((db[1] as f64 - (0.5 - 2.0 / 3.0)).abs() < 1e-7);
    }

    #[test]
    fn masked_gradient_is_exactly_zero_at_pruned_coords() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let params = init_params(&spec, 5);
        let mut bits = vec![1u8; 12];
        bits[1] = 0;
        bits[7] = 0;
        let mask = Mask::from_entries(
            vec![MaskEntry {
                name: "fc1.weight".into(),
                dims: vec![4, 3],
                bits,
            }],
            params.param_count(),
        )
        .unwrap();
        let ds = make_synthetic(5, 3, 2, 2.0, 3);
        let batch = batch_from(&ds);
        let (_, grads) = loss_and_grads(&params, &mask, &batch).unwrap();
        let masked = grads.masked(&mask);
        assert_eq!(masked.layers[0].d_weight[1], 0.0);
        assert_eq!(masked.layers[0].d_weight[7], 0.0);
        // Raw and masked agree everywhere the mask survives.
        for (i, (&r, &m)) in grads.layers[0]
            .d_weight
            .iter()
            .zip(&masked.layers[0].d_weight)
            .enumerate()
        {
            if i != 1 && i != 7 {
                assert_eq!(r.to_bits(), m.to_bits());
            }
        }
    }

    #[test]
    fn all_zero_weights_give_uniform_logits_and_ln10_loss() {
        let spec = MlpSpec::new(vec![4, 5, 10]).unwrap();
        let mut params = init_params(&spec, 2);
        for layer in params.layers_mut() {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        let mask = ones_mask(&params);
        let ds = make_synthetic(30, 4, 10, 1.0, 4);
        let m = evaluate(&params, &mask, &ds).unwrap();
        assert!((m.loss - 10.0f64.ln()).abs() < 1e-12, "loss {}", m.loss);
        // Uniform logits: argmax tie-break selects class 0.
        let expect = ds.labels.iter().filter(|&&l| l == 0).count() as f64 / ds.len() as f64;
        assert_eq!(m.accuracy, expect);
    }

    #[test]
    fn identity_mask_equals_unmasked_forward() {
        let spec = MlpSpec::new(vec![3, 5, 4]).unwrap();
        let params = init_params(&spec, 8);
        let mask = ones_mask(&params);
        let ds = make_synthetic(7, 3, 4, 2.0, 5);
        let batch = batch_from(&ds);
        let a = forward(&params, &mask, &batch.features, batch.rows, batch.input_dim).unwrap();
        // An empty-entry mask means "nothing prunable": truly unmasked.
        let empty = Mask::from_entries(vec![], params.param_count()).unwrap();
        let b = forward(
            &params,
            &empty,
            &batch.features,
            batch.rows,
            batch.input_dim,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_absorption_is_bit_exact() {
        // forward(params, m, X) == forward(params ⊙ m, ones, X).
        let spec = MlpSpec::new(vec![4, 6, 3]).unwrap();
        let params = init_params(&spec, 10);
        let mut bits = vec![1u8; 24];
        for i in [0, 3, 5, 11, 17, 22] {
            bits[i] = 0;
        }
        let mask = Mask::from_entries(
            vec![MaskEntry {
                name: "fc1.weight".into(),
                dims: vec![6, 4],
                bits,
            }],
            params.param_count(),
        )
        .unwrap();
        let ds = make_synthetic(9, 4, 3, 2.0, 6);
        let batch = batch_from(&ds);
        let a = forward(&params, &mask, &batch.features, batch.rows, batch.input_dim).unwrap();
        let absorbed = params.masked(&mask).unwrap();
        let ones = ones_mask(&absorbed);
        let b = forward(
            &absorbed,
            &ones,
            &batch.features,
            batch.rows,
            batch.input_dim,
        )
        .unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn dead_unit_makes_outgoing_weights_irrelevant() {
        // Mask out hidden unit 1's incoming row (bias is zero from init):
        // the output is invariant to that unit's outgoing weights.
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let params = init_params(&spec, 12);
        let mut bits = vec![1u8; 12];
        bits[3..6].fill(0); // row of unit 1 (row-major 4x3)
        let mask = Mask::from_entries(
            vec![MaskEntry {
                name: "fc1.weight".into(),
                dims: vec![4, 3],
                bits,
            }],
            params.param_count(),
        )
        .unwrap();
        let ds = make_synthetic(6, 3, 2, 2.0, 7);
        let batch = batch_from(&ds);
        let base = forward(&params, &mask, &batch.features, batch.rows, batch.input_dim).unwrap();

        let mut tweaked = params.clone();
        // Outgoing weights of unit 1 sit in fc2.weight column 1 (2x4).
        tweaked.layers_mut()[1].weight[1] = 123.0;
        tweaked.layers_mut()[1].weight[4 + 1] = -77.0;
        let out = forward(
            &tweaked,
            &mask,
            &batch.features,
            batch.rows,
            batch.input_dim,
        )
        .unwrap();
        assert_eq!(base, out);
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let params = init_params(&spec, 1);
        let mask = ones_mask(&params);
        let err = forward(&params, &mask, &[0.0; 8], 2, 4).unwrap_err();
        match err {
            Error::ShapeMismatch { context, .. } => assert!(context.contains("fc1")),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn evaluate_known_singleton() {
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let params = init_params(&spec, 6);
        let mask = ones_mask(&params);
        let one = crate::data::Dataset {
            features: vec![0.9, 0.1],
            input_dim: 2,
            labels: vec![0],
            num_classes: 2,
        };
        let logits = forward(&params, &mask, &[0.9, 0.1], 1, 2).unwrap();
        let winner = crate::math::argmax_lowest(&logits) as u32;
        let mut right = one.clone();
        right.labels[0] = winner;
        assert_eq!(evaluate(&params, &mask, &right).unwrap().accuracy, 1.0);
        let mut wrong = one;
        wrong.labels[0] = 1 - winner;
        assert_eq!(evaluate(&params, &mask, &wrong).unwrap().accuracy, 0.0);
    }

    #[test]
    fn evaluate_is_deterministic_and_rejects_empty() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let params = init_params(&spec, 5);
        let mask = ones_mask(&params);
        let ds = make_synthetic(600, 3, 2, 2.0, 8); // spans two eval chunks
        let a = evaluate(&params, &mask, &ds).unwrap();
        let b = evaluate(&params, &mask, &ds).unwrap();
        assert_eq!(a, b);
        let empty = crate::data::Dataset {
            features: vec![],
            input_dim: 3,
            labels: vec![],
            num_classes: 2,
        };
        assert!(matches!(
            evaluate(&params, &mask, &empty),
            Err(Error::EmptyDataset)
        ));
    }
}

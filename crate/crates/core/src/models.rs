//! Small rectifier MLPs (zero to two hidden layers) over a flat parameter
//! vector, with weighted single-pass backprop and a finite-difference oracle.
//!
//! Parameter layout: for each layer, the `out × in` weight matrix in
//! row-major order followed by the `out` biases.

use std::cell::Cell;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::losses::LossFn;
use crate::math::{DenseMatrix, SeededRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArch {
    pub input_dim: usize,
    /// Empty for a linear (softmax-regression) model.
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ModelArch {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dims: &[usize], num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config("all model dimensions must be >= 1"));
        }
        if self.hidden_dims.len() > 2 {
            return Err(Error::config("at most two hidden layers are supported"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers());
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.num_classes));
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    fn biases(&self) -> std::ops::Range<usize> {
        self.offset + self.weight_len()..self.offset + self.len()
    }
}

/// Flat parameters plus the layer table and a per-layer trainable flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layers: Vec<LayerShape>,
    trainable: Vec<bool>,
}

impl ParamVector {
    pub fn zeros(arch: &ModelArch) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in arch.layer_dims() {
            let shape = LayerShape {
                fan_in,
                fan_out,
                offset,
            };
            offset += shape.len();
            layers.push(shape);
        }
        Self {
            values: vec![0.0; offset],
            trainable: vec![true; layers.len()],
            layers,
        }
    }

    pub fn from_values(arch: &ModelArch, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch);
        if values.len() != p.values.len() {
            return Err(Error::domain(format!(
                "{} values for an architecture with {} parameters",
                values.len(),
                p.values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.values[self.layers[layer].weights()]
    }

    pub fn layer_biases(&self, layer: usize) -> &[f64] {
        &self.values[self.layers[layer].biases()]
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        self.trainable[layer]
    }

    pub fn set_trainable(&mut self, layer: usize, trainable: bool) -> Result<()> {
        let slot = self
            .trainable
            .get_mut(layer)
            .ok_or_else(|| Error::config(format!("no layer {layer} to freeze")))?;
        *slot = trainable;
        Ok(())
    }

    /// Freezes exactly the listed layers; others become trainable.
    pub fn set_frozen_layers(&mut self, frozen: &[usize]) -> Result<()> {
        for l in 0..self.trainable.len() {
            self.trainable[l] = true;
        }
        for &l in frozen {
            self.set_trainable(l, false)?;
        }
        Ok(())
    }

    pub fn frozen_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&l| !self.trainable[l]).collect()
    }

    fn layer_of(&self, coord: usize) -> usize {
        self.layers
            .iter()
            .position(|s| coord < s.offset + s.len())
            .expect("coordinate within parameter vector")
    }

    pub fn is_frozen_coord(&self, coord: usize) -> bool {
        !self.trainable[self.layer_of(coord)]
    }

    /// Whether weight decay applies: trainable and not a bias.
    pub fn is_decayed(&self, coord: usize) -> bool {
        let l = self.layer_of(coord);
        self.trainable[l] && self.layers[l].weights().contains(&coord)
    }

    /// Per-coordinate trainable mask.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.len());
        for (s, &t) in self.layers.iter().zip(&self.trainable) {
            mask.extend(std::iter::repeat_n(t, s.len()));
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitPolicy {
    /// `N(0, 2/fan_in)` weights, the usual rectifier scaling.
    #[default]
    FanIn,
    /// `N(0, std²)` weights.
    Fixed { std: f64 },
}

/// Gaussian weights, zero biases.
pub fn init_params(arch: &ModelArch, rng: &mut SeededRng, policy: InitPolicy) -> ParamVector {
    let mut p = ParamVector::zeros(arch);
    for shape in p.layers.clone() {
        let std = match policy {
            InitPolicy::FanIn => (2.0 / shape.fan_in as f64).sqrt(),
            InitPolicy::Fixed { std } => std,
        };
        for w in &mut p.values[shape.weights()] {
            *w = std * rng.next_gaussian();
        }
    }
    p
}

/// Forward results for a batch, with the activations backprop needs.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub logits: DenseMatrix,
    pub per_sample_losses: Vec<f64>,
    /// Input to each layer (`inputs[0]` is the feature batch).
    inputs: Vec<DenseMatrix>,
    /// Pre-activations of each hidden layer.
    preacts: Vec<DenseMatrix>,
}

impl BatchEval {
    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }

    /// Fills `per_sample_losses` for the given labels.
    pub fn compute_losses(&mut self, labels: &[usize], loss: &LossFn) -> Result<&[f64]> {
        check_labels(&self.logits, labels)?;
        self.per_sample_losses = (0..labels.len())
            .map(|i| loss.loss(self.logits.row(i), labels[i]))
            .collect::<Result<_>>()?;
        Ok(&self.per_sample_losses)
    }

    /// Hidden pre-activations, layer by layer.
    pub fn preactivations(&self) -> &[DenseMatrix] {
        &self.preacts
    }
}

fn check_labels(logits: &DenseMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::domain(format!(
            "{} labels for a batch of {}",
            labels.len(),
            logits.rows()
        )));
    }
    Ok(())
}

fn affine(input: &DenseMatrix, weights: &[f64], biases: &[f64], fan_out: usize) -> DenseMatrix {
    let fan_in = input.cols();
    let mut out = DenseMatrix::zeros(input.rows(), fan_out);
    for b in 0..input.rows() {
        let x = input.row(b);
        let z = out.row_mut(b);
        for (o, zo) in z.iter_mut().enumerate() {
            let w = &weights[o * fan_in..(o + 1) * fan_in];
            *zo = biases[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

pub fn forward(params: &ParamVector, arch: &ModelArch, features: &DenseMatrix) -> Result<BatchEval> {
    if features.cols() != arch.input_dim {
        return Err(Error::domain(format!(
            "feature width {} does not match model input {}",
            features.cols(),
            arch.input_dim
        )));
    }
    if params.layers.len() != arch.num_layers()
        || params.len() != ParamVector::zeros(arch).len()
    {
        return Err(Error::domain("parameter vector does not match architecture"));
    }
    let mut inputs = vec![features.clone()];
    let mut preacts = Vec::with_capacity(arch.hidden_dims.len());
    let last = params.layers.len() - 1;
    for (l, shape) in params.layers.iter().enumerate() {
        let z = affine(
            &inputs[l],
            params.layer_weights(l),
            params.layer_biases(l),
            shape.fan_out,
        );
        if l == last {
            return Ok(BatchEval {
                logits: z,
                per_sample_losses: Vec::new(),
                inputs,
                preacts,
            });
        }
        let mut a = z.clone();
        for v in a.data_mut() {
            *v = v.max(0.0);
        }
        preacts.push(z);
        inputs.push(a);
    }
    unreachable!("architecture has at least one layer")
}

/// Evaluates logits and per-sample losses in one forward pass.
pub fn forward_with_losses(
    params: &ParamVector,
    arch: &ModelArch,
    features: &DenseMatrix,
    labels: &[usize],
    loss: &LossFn,
) -> Result<BatchEval> {
    let mut eval = forward(params, arch, features)?;
    eval.compute_losses(labels, loss)?;
    Ok(eval)
}

thread_local! {
    static BACKWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`weighted_backward`] calls made on the current thread.
pub fn backward_pass_count() -> u64 {
    BACKWARD_PASSES.with(Cell::get)
}

/// Gradient of `(1/B) Σᵢ weightᵢ · L(w; zᵢ)` in a single backward pass.
/// Frozen layers receive a zero gradient.
pub fn weighted_backward(
    params: &ParamVector,
    arch: &ModelArch,
    eval: &BatchEval,
    labels: &[usize],
    weights: &[f64],
    loss: &LossFn,
) -> Result<Vec<f64>> {
    BACKWARD_PASSES.with(|c| c.set(c.get() + 1));
    backward(params, arch, eval, labels, weights, loss)
}

/// Same as [`weighted_backward`] but not counted; reserved for diagnostics
/// that are not part of the training path.
pub(crate) fn backward(
    params: &ParamVector,
    arch: &ModelArch,
    eval: &BatchEval,
    labels: &[usize],
    weights: &[f64],
    loss: &LossFn,
) -> Result<Vec<f64>> {
    check_labels(&eval.logits, labels)?;
    let bsz = eval.batch_size();
    if weights.len() != bsz {
        return Err(Error::domain(format!(
            "{} weights for a batch of {bsz}",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::domain(format!("sample weight {w} is negative or NaN")));
    }
    let c = arch.num_classes;
    let mut delta = DenseMatrix::zeros(bsz, c);
    for i in 0..bsz {
        let scale = weights[i] / bsz as f64;
        if scale == 0.0 {
            continue;
        }
        let row = delta.row_mut(i);
        loss.loss_and_grad(eval.logits.row(i), labels[i], row)?;
        for g in row.iter_mut() {
            *g *= scale;
        }
    }

    let mut grad = vec![0.0; params.len()];
    for l in (0..params.layers.len()).rev() {
        let shape = params.layers[l];
        let input = &eval.inputs[l];
        if params.trainable[l] {
            let (gw, gb) = grad[shape.offset..shape.offset + shape.len()].split_at_mut(shape.weight_len());
            for b in 0..bsz {
                let d = delta.row(b);
                let x = input.row(b);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    gb[o] += dv;
                    let row = &mut gw[o * shape.fan_in..(o + 1) * shape.fan_in];
                    for (g, &xv) in row.iter_mut().zip(x) {
                        *g += dv * xv;
                    }
                }
            }
        }
        if l == 0 || params.trainable[..l].iter().all(|t| !t) {
            break;
        }
        let w = params.layer_weights(l);
        let z_prev = &eval.preacts[l - 1];
        let mut prev = DenseMatrix::zeros(bsz, shape.fan_in);
        for b in 0..bsz {
            let d = delta.row(b);
            let z = z_prev.row(b);
            let p = prev.row_mut(b);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                for (pi, &wv) in p.iter_mut().zip(&w[o * shape.fan_in..(o + 1) * shape.fan_in]) {
                    *pi += dv * wv;
                }
            }
            // rectifier subgradient at 0 is 0
            for (pi, &zv) in p.iter_mut().zip(z) {
                if zv <= 0.0 {
                    *pi = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok(grad)
}

/// Sign pattern (`> 0`) of every hidden pre-activation; used to detect
/// finite-difference probes that straddle a rectifier kink.
pub fn relu_pattern(params: &ParamVector, arch: &ModelArch, features: &DenseMatrix) -> Result<Vec<bool>> {
    let eval = forward(params, arch, features)?;
    Ok(eval
        .preacts
        .iter()
        .flat_map(|z| z.data().iter().map(|&v| v > 0.0))
        .collect())
}

/// Central differences `(F(w + h·eᵢ) − F(w − h·eᵢ)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(mut objective: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::domain(format!("step {h} must be positive")));
    }
    let mut w = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = w[i];
        w[i] = orig + h;
        let plus = objective(&w);
        w[i] = orig - h;
        let minus = objective(&w);
        w[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric(format!(
                "objective is not finite around coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

const CHECKPOINT_MAGIC: &str = "absgd-checkpoint 1";

/// Writes a text checkpoint: architecture, frozen layers, then one
/// hexadecimal IEEE-754 bit pattern per parameter (bit-exact round trip).
pub fn write_checkpoint_to<W: Write>(mut w: W, arch: &ModelArch, params: &ParamVector) -> Result<()> {
    let list = |key: &str, v: &[usize]| {
        std::iter::once(key.to_string()).chain(v.iter().map(usize::to_string)).collect::<Vec<_>>().join(" ")
    };
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(out, "input_dim {}", arch.input_dim).unwrap();
    writeln!(out, "{}", list("hidden_dims", &arch.hidden_dims)).unwrap();
    writeln!(out, "num_classes {}", arch.num_classes).unwrap();
    writeln!(out, "{}", list("frozen", &params.frozen_layers())).unwrap();
    writeln!(out, "values {}", params.len()).unwrap();
    for v in params.values() {
        writeln!(out, "{:016x}", v.to_bits()).unwrap();
    }
    w.write_all(out.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(path: impl AsRef<Path>, arch: &ModelArch, params: &ParamVector) -> Result<()> {
    write_checkpoint_to(std::fs::File::create(path)?, arch, params)
}

pub fn read_checkpoint_from<R: Read>(r: R) -> Result<(ModelArch, ParamVector)> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let mut next = |key: &str| -> Result<(u64, Vec<String>)> {
        let (i, line) = lines.next().ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("unexpected end of checkpoint, expected {key:?}"),
        })?;
        let line = line?;
        let mut parts = line.split_whitespace().map(str::to_owned);
        let lineno = i as u64 + 1;
        if !key.is_empty() && parts.next().as_deref() != Some(key) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {key:?}"),
            });
        }
        Ok((lineno, parts.collect()))
    };
    let parse_usizes = |line: u64, v: &[String]| -> Result<Vec<usize>> {
        v.iter()
            .map(|s| {
                s.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("not an integer: {s:?}"),
                })
            })
            .collect()
    };
    let (_, magic) = next("absgd-checkpoint")?;
    if magic != ["1"] {
        return Err(Error::Parse {
            line: 1,
            msg: "unsupported checkpoint version".into(),
        });
    }
    let (l, v) = next("input_dim")?;
    let input_dim = *parse_usizes(l, &v)?.first().unwrap_or(&0);
    let (l, v) = next("hidden_dims")?;
    let hidden_dims = parse_usizes(l, &v)?;
    let (l, v) = next("num_classes")?;
    let num_classes = *parse_usizes(l, &v)?.first().unwrap_or(&0);
    let (l, v) = next("frozen")?;
    let frozen = parse_usizes(l, &v)?;
    let (l, v) = next("values")?;
    let n = *parse_usizes(l, &v)?.first().unwrap_or(&0);
    let arch = ModelArch {
        input_dim,
        hidden_dims,
        num_classes,
    };
    arch.validate()?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let (l, v) = next("")?;
        let bits = v
            .first()
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .ok_or_else(|| Error::Parse {
                line: l,
                msg: "expected a 16-digit hexadecimal value".into(),
            })?;
        values.push(f64::from_bits(bits));
    }
    let mut params = ParamVector::from_values(&arch, values)?;
    params.set_frozen_layers(&frozen)?;
    Ok((arch, params))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(ModelArch, ParamVector)> {
    read_checkpoint_from(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{BaseLoss, ClassWeighting, LossSpec};
    use proptest::prelude::*;

    fn random_batch(arch: &ModelArch, n: usize, seed: u64) -> (DenseMatrix, Vec<usize>) {
        let mut rng = SeededRng::new(seed);
        let data = (0..n * arch.input_dim).map(|_| rng.next_gaussian()).collect();
        let labels = (0..n).map(|i| i % arch.num_classes).collect();
        (DenseMatrix::new(n, arch.input_dim, data).unwrap(), labels)
    }

    #[test]
    fn init_policies() {
        let arch = ModelArch::mlp(64, &[128], 10);
        let zero = init_params(&arch, &mut SeededRng::new(1), InitPolicy::Fixed { std: 0.0 });
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let a = init_params(&arch, &mut SeededRng::new(1), InitPolicy::FanIn);
        let b = init_params(&arch, &mut SeededRng::new(1), InitPolicy::FanIn);
        assert_eq!(a, b);
        // output layer has fan_in 128
        let w = a.layer_weights(1);
        let sd = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        let want = (2.0f64 / 128.0).sqrt();
        assert!((sd - want).abs() < 0.1 * want, "sd {sd}");
        assert!(a.layer_biases(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_examples() {
        let arch = ModelArch::linear(2, 2);
        let zero = ParamVector::zeros(&arch);
        let x = DenseMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(forward(&zero, &arch, &x).unwrap().logits.data(), &[0.0, 0.0]);

        let p = ParamVector::from_values(&arch, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(forward(&p, &arch, &x).unwrap().logits.data(), &[3.0, 4.0]);

        let mlp = ModelArch::mlp(2, &[3], 2);
        let mut q = ParamVector::zeros(&mlp);
        let n = q.len();
        q.values_mut()[n - 2] = 0.7;
        q.values_mut()[n - 1] = -0.2;
        let out = forward(&q, &mlp, &x).unwrap();
        assert_eq!(out.logits.data(), &[0.7, -0.2]);

        let bad = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(forward(&p, &arch, &bad).is_err());
    }

    #[test]
    fn backward_zero_and_unit_weights() {
        let arch = ModelArch::mlp(3, &[4], 3);
        let p = init_params(&arch, &mut SeededRng::new(5), InitPolicy::FanIn);
        let (x, y) = random_batch(&arch, 6, 2);
        let loss = LossFn::ce();
        let eval = forward_with_losses(&p, &arch, &x, &y, &loss).unwrap();
        let g0 = weighted_backward(&p, &arch, &eval, &y, &[0.0; 6], &loss).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
        assert!(weighted_backward(&p, &arch, &eval, &y, &[-1.0; 6], &loss).is_err());

        let g1 = weighted_backward(&p, &arch, &eval, &y, &[1.0; 6], &loss).unwrap();
        let fd = finite_diff_grad(
            |w| {
                let q = ParamVector::from_values(&arch, w.to_vec()).unwrap();
                let e = forward_with_losses(&q, &arch, &x, &y, &loss).unwrap();
                e.per_sample_losses.iter().sum::<f64>() / 6.0
            },
            p.values(),
            1e-6,
        )
        .unwrap();
        for (a, b) in g1.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn weighted_linear_matches_fd() {
        let arch = ModelArch::linear(3, 3);
        let p = init_params(&arch, &mut SeededRng::new(8), InitPolicy::FanIn);
        let (x, y) = random_batch(&arch, 5, 3);
        let weights = [0.3, 2.0, 0.01, 1.7, 0.9];
        let spec = LossSpec {
            base: BaseLoss::Focal { gamma: 2.0 },
            class_weighting: ClassWeighting::None,
            defer_epoch: None,
        };
        let loss = LossFn::resolve(&spec, &[2, 2, 1], 1).unwrap();
        let eval = forward_with_losses(&p, &arch, &x, &y, &loss).unwrap();
        let g = weighted_backward(&p, &arch, &eval, &y, &weights, &loss).unwrap();
        let fd = finite_diff_grad(
            |w| {
                let q = ParamVector::from_values(&arch, w.to_vec()).unwrap();
                let e = forward_with_losses(&q, &arch, &x, &y, &loss).unwrap();
                e.per_sample_losses.iter().zip(&weights).map(|(l, w)| l * w).sum::<f64>() / 5.0
            },
            p.values(),
            1e-5,
        )
        .unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn frozen_layers_get_zero_gradient() {
        let arch = ModelArch::mlp(3, &[4, 4], 2);
        let mut p = init_params(&arch, &mut SeededRng::new(9), InitPolicy::FanIn);
        p.set_frozen_layers(&[0, 1]).unwrap();
        let (x, y) = random_batch(&arch, 4, 1);
        let loss = LossFn::ce();
        let eval = forward_with_losses(&p, &arch, &x, &y, &loss).unwrap();
        let g = weighted_backward(&p, &arch, &eval, &y, &[1.0; 4], &loss).unwrap();
        let mask = p.trainable_mask();
        for (gi, m) in g.iter().zip(&mask) {
            if !m {
                assert_eq!(*gi, 0.0);
            }
        }
        assert!(g.iter().zip(&mask).any(|(gi, m)| *m && *gi != 0.0));
        assert!(p.set_trainable(7, false).is_err());
    }

    #[test]
    fn backward_counter_counts_calls() {
        let arch = ModelArch::linear(2, 2);
        let p = ParamVector::zeros(&arch);
        let (x, y) = random_batch(&arch, 3, 1);
        let loss = LossFn::ce();
        let eval = forward_with_losses(&p, &arch, &x, &y, &loss).unwrap();
        let before = backward_pass_count();
        for _ in 0..5 {
            weighted_backward(&p, &arch, &eval, &y, &[1.0; 3], &loss).unwrap();
        }
        assert_eq!(backward_pass_count() - before, 5);
    }

    #[test]
    fn finite_diff_basics() {
        let w = [0.3, -1.2, 4.0];
        let g = finite_diff_grad(|v| 0.5 * v.iter().map(|x| x * x).sum::<f64>(), &w, 1e-4).unwrap();
        for (a, b) in g.iter().zip(&w) {
            assert!((a - b).abs() < 1e-9);
        }
        let g = finite_diff_grad(|_| 3.0, &w, 1e-4).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(finite_diff_grad(|_| f64::NAN, &w, 1e-4).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = ModelArch::mlp(3, &[5, 2], 4);
        let mut p = init_params(&arch, &mut SeededRng::new(3), InitPolicy::FanIn);
        p.values_mut()[0] = -0.0;
        p.values_mut()[1] = f64::MIN_POSITIVE / 3.0;
        p.set_frozen_layers(&[0]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint_to(&mut buf, &arch, &p).unwrap();
        let (arch2, p2) = read_checkpoint_from(buf.as_slice()).unwrap();
        assert_eq!(arch2, arch);
        assert_eq!(p2.frozen_layers(), vec![0]);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(p2.values()), bits(p.values()));
        assert!(read_checkpoint_from("garbage".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn backward_is_linear_in_weights(
            u in prop::collection::vec(0.0f64..3.0, 5),
            v in prop::collection::vec(0.0f64..3.0, 5),
            alpha in 0.0f64..2.0,
            beta in 0.0f64..2.0,
        ) {
            let arch = ModelArch::mlp(3, &[4], 3);
            let p = init_params(&arch, &mut SeededRng::new(21), InitPolicy::FanIn);
            let (x, y) = random_batch(&arch, 5, 4);
            let loss = LossFn::ce();
            let eval = forward_with_losses(&p, &arch, &x, &y, &loss).unwrap();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
            let gu = backward(&p, &arch, &eval, &y, &u, &loss).unwrap();
            let gv = backward(&p, &arch, &eval, &y, &v, &loss).unwrap();
            let gm = backward(&p, &arch, &eval, &y, &mix, &loss).unwrap();
            for i in 0..gm.len() {
                let want = alpha * gu[i] + beta * gv[i];
                prop_assert!((gm[i] - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }
}

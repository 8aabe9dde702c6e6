//! Dense feed-forward classifier: forward pass, softmax, analytic input
//! gradients, a mini-batch SGD trainer and a text model format.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde_json::Value;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::{all_finite, Scalar};

/// Hidden-layer nonlinearity. The output layer is always affine (logits).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Relu,
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    fn slope(&self) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => *slope,
            Activation::Relu => 0.0,
            Activation::Identity => 1.0,
        }
    }

    #[inline]
    fn apply<T: Scalar>(&self, z: T) -> T {
        match self {
            Activation::Identity => z,
            _ if z > T::zero() => z,
            _ => z * T::of(self.slope()),
        }
    }

    /// Derivative; at exactly zero the negative-side slope is used.
    #[inline]
    fn derivative<T: Scalar>(&self, z: T) -> T {
        match self {
            Activation::Identity => T::one(),
            _ if z > T::zero() => T::one(),
            _ => T::of(self.slope()),
        }
    }
}

/// Scalar read off the network output for a given class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Logit,
    #[default]
    Proba,
    LogProba,
}

impl Target {
    pub fn name(&self) -> &'static str {
        match self {
            Target::Logit => "logit",
            Target::Proba => "proba",
            Target::LogProba => "log_proba",
        }
    }
}

/// One affine layer, weights row-major `[rows = out][cols = in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(rows: usize, cols: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidModel("layer with zero rows or cols".into()));
        }
        if weights.len() != rows * cols {
            return Err(Error::InvalidModel(format!(
                "layer weights have {} entries, expected {}x{}",
                weights.len(),
                rows,
                cols
            )));
        }
        if bias.len() != rows {
            return Err(Error::InvalidModel(format!(
                "bias has {} entries, expected {}",
                bias.len(),
                rows
            )));
        }
        if !all_finite(&weights) || !all_finite(&bias) {
            return Err(Error::InvalidModel("non-finite weight or bias".into()));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    fn affine(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.cols)
                .zip(&self.bias)
                .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (&w, &x)| acc + w * x)),
        );
    }

    /// `W^T g`
    fn transpose_mul(&self, g: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (row, &gi) in self.weights.chunks_exact(self.cols).zip(g) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }
}

/// Immutable feed-forward classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
    layers: Vec<Layer<T>>,
}

struct Trace<T> {
    /// Input to each layer (`inputs[0]` is x).
    inputs: Vec<Vec<T>>,
    /// Pre-activation output of each layer; the last entry holds the logits.
    pre: Vec<Vec<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidModel("model has no layers".into()))?;
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].cols != pair[0].rows {
                return Err(Error::InvalidModel(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    k + 1,
                    pair[1].cols,
                    k,
                    pair[0].rows
                )));
            }
        }
        if let Activation::LeakyRelu { slope } = activation {
            if !slope.is_finite() {
                return Err(Error::InvalidModel("non-finite leaky_relu slope".into()));
            }
        }
        let input_dim = first.cols;
        let output_dim = layers.last().map(|l| l.rows).unwrap_or_default();
        Ok(Self {
            input_dim,
            output_dim,
            activation,
            layers,
        })
    }

    /// Single-layer linear model `x -> W x + b`.
    pub fn linear(rows: usize, cols: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        Self::new(
            vec![Layer::new(rows, cols, weights, bias)?],
            Activation::Identity,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if !all_finite(x) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.output_dim {
            return Err(Error::InvalidClass {
                class,
                num_classes: self.output_dim,
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[T]) -> Trace<T> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.rows);
            layer.affine(&current, &mut z);
            let next = if k < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    fn logits_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut current = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&current, &mut z);
            if k < last {
                current.clear();
                current.extend(z.iter().map(|&v| self.activation.apply(v)));
            }
        }
        z
    }

    /// Raw logits.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.logits_unchecked(x))
    }

    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.forward(x)?))
    }

    /// Argmax of the logits, lowest index on ties.
    pub fn predicted_class(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Value of `target` for `class` at `x`.
    pub fn target_value(&self, x: &[T], target: Target, class: usize) -> Result<T> {
        self.check_class(class)?;
        let logits = self.forward(x)?;
        Ok(target_of_logits(&logits, target, class))
    }

    /// Gradient of `target` for `class` with respect to the input, by reverse
    /// accumulation through the layer recurrence.
    pub fn input_gradient(&self, x: &[T], target: Target, class: usize) -> Result<Vec<T>> {
        self.check_input(x)?;
        self.check_class(class)?;
        let trace = self.trace(x);
        let logits = trace.pre.last().expect("at least one layer");
        let mut g = output_seed(logits, target, class);
        for k in (0..self.layers.len()).rev() {
            let back = self.layers[k].transpose_mul(&g);
            if k == 0 {
                return Ok(back);
            }
            g = back
                .into_iter()
                .zip(&trace.pre[k - 1])
                .map(|(b, &z)| b * self.activation.derivative(z))
                .collect();
        }
        unreachable!("loop returns at layer 0")
    }

    pub fn accuracy(&self, data: &Dataset<T>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut hits = 0usize;
        for (x, &y) in data.rows().zip(data.labels()) {
            if self.predicted_class(x)? == y {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }

    /// Writes the model document atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::report::atomic_write(path, self.to_text().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Serializes to the JSON model document. Reals carry 17 significant
    /// digits so that parsing reproduces each weight bit-for-bit.
    pub fn to_text(&self) -> String {
        self.write_text(None)
    }

    /// As [`Model::to_text`], with an extra `provenance` entry that loading
    /// ignores.
    pub fn to_text_with_provenance(&self, provenance: &Value) -> String {
        self.write_text(Some(provenance))
    }

    fn write_text(&self, provenance: Option<&Value>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{{");
        if let Some(p) = provenance {
            let _ = writeln!(s, "  \"provenance\": {},", p);
        }
        let _ = writeln!(s, "  \"input_dim\": {},", self.input_dim);
        let _ = writeln!(s, "  \"output_dim\": {},", self.output_dim);
        let _ = writeln!(
            s,
            "  \"activation\": {{\"name\": \"{}\", \"slope\": {}}},",
            self.activation.name(),
            fmt_real(self.activation.slope())
        );
        let _ = writeln!(s, "  \"layers\": [");
        for (k, layer) in self.layers.iter().enumerate() {
            let join = |v: &[T]| {
                v.iter()
                    .map(|w| fmt_real(w.f64()))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            let _ = writeln!(s, "    {{");
            let _ = writeln!(s, "      \"rows\": {},", layer.rows);
            let _ = writeln!(s, "      \"cols\": {},", layer.cols);
            let _ = writeln!(s, "      \"weights\": [{}],", join(&layer.weights));
            let _ = writeln!(s, "      \"bias\": [{}]", join(&layer.bias));
            let sep = if k + 1 < self.layers.len() { "," } else { "" };
            let _ = writeln!(s, "    }}{sep}");
        }
        let _ = writeln!(s, "  ]");
        let _ = writeln!(s, "}}");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| malformed("<document>", e))?;
        let input_dim = get_count(&doc, "input_dim")?;
        let output_dim = get_count(&doc, "output_dim")?;
        let act = doc
            .get("activation")
            .ok_or_else(|| malformed("activation", "missing"))?;
        let name = act
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("activation.name", "missing or not a string"))?;
        let slope = act
            .get("slope")
            .and_then(Value::as_f64)
            .ok_or_else(|| malformed("activation.slope", "missing or not a number"))?;
        let activation = match name {
            "leaky_relu" => Activation::LeakyRelu { slope },
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => return Err(malformed("activation.name", format!("unknown `{other}`"))),
        };
        let layers_json = doc
            .get("layers")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("layers", "missing or not a list"))?;
        if layers_json.is_empty() {
            return Err(malformed("layers", "empty"));
        }
        let mut layers = Vec::with_capacity(layers_json.len());
        let mut expected_cols = input_dim;
        for (k, lj) in layers_json.iter().enumerate() {
            let field = |f: &str| format!("layers[{k}].{f}");
            let rows = get_count(lj, "rows").map_err(|_| malformed(field("rows"), "bad count"))?;
            let cols = get_count(lj, "cols").map_err(|_| malformed(field("cols"), "bad count"))?;
            if cols != expected_cols {
                return Err(malformed(
                    field("cols"),
                    format!("expected {expected_cols} to chain with previous layer, got {cols}"),
                ));
            }
            let weights = get_reals::<T>(lj, &field("weights"), "weights")?;
            let bias = get_reals::<T>(lj, &field("bias"), "bias")?;
            if weights.len() != rows * cols {
                return Err(malformed(
                    field("weights"),
                    format!("{} entries for a {rows}x{cols} layer", weights.len()),
                ));
            }
            if bias.len() != rows {
                return Err(malformed(
                    field("bias"),
                    format!("{} entries for {rows} rows", bias.len()),
                ));
            }
            layers.push(
                Layer::new(rows, cols, weights, bias).map_err(|e| malformed(field("layer"), e))?,
            );
            expected_cols = rows;
        }
        if expected_cols != output_dim {
            return Err(malformed(
                "output_dim",
                format!("declared {output_dim}, last layer produces {expected_cols}"),
            ));
        }
        Self::new(layers, activation).map_err(|e| malformed("<model>", e))
    }
}

fn malformed(field: impl Into<String>, reason: impl ToString) -> Error {
    Error::MalformedModelFile {
        field: field.into(),
        reason: reason.to_string(),
    }
}

fn get_count(v: &Value, key: &str) -> Result<usize> {
    v.get(key)
        .and_then(Value::as_u64)
        .map(|n| n as usize)
        .ok_or_else(|| malformed(key, "missing or not a non-negative integer"))
}

fn get_reals<T: Scalar>(v: &Value, field: &str, key: &str) -> Result<Vec<T>> {
    let arr = v
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(field, "missing or not a list"))?;
    arr.iter()
        .enumerate()
        .map(|(i, e)| {
            let r = e
                .as_f64()
                .ok_or_else(|| malformed(format!("{field}[{i}]"), "not a number"))?;
            let t = T::of(r);
            if !t.is_finite() {
                return Err(malformed(format!("{field}[{i}]"), "non-finite value"));
            }
            Ok(t)
        })
        .collect()
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_softmax_at<T: Scalar>(logits: &[T], class: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    logits[class] - lse
}

pub(crate) fn target_of_logits<T: Scalar>(logits: &[T], target: Target, class: usize) -> T {
    match target {
        Target::Logit => logits[class],
        Target::Proba => softmax(logits)[class],
        Target::LogProba => log_softmax_at(logits, class),
    }
}

/// d target / d logits.
fn output_seed<T: Scalar>(logits: &[T], target: Target, class: usize) -> Vec<T> {
    match target {
        Target::Logit => {
            let mut g = vec![T::zero(); logits.len()];
            g[class] = T::one();
            g
        }
        Target::Proba => {
            let p = softmax(logits);
            let pc = p[class];
            p.iter()
                .enumerate()
                .map(|(j, &pj)| {
                    if j == class {
                        pc * (T::one() - pj)
                    } else {
                        -pc * pj
                    }
                })
                .collect()
        }
        Target::LogProba => {
            let p = softmax(logits);
            p.iter()
                .enumerate()
                .map(|(j, &pj)| if j == class { T::one() - pj } else { -pj })
                .collect()
        }
    }
}

/// Mini-batch SGD settings. The architecture fields fix the network that
/// `train` builds; retraining reuses them unchanged.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2_penalty: f64,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            l2_penalty: 0.0,
            hidden: vec![16],
            leaky_slope: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::InvalidConfig(
                "l2_penalty must be non-negative".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer of width 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Trains a fresh network with cross-entropy loss.
pub fn train<T: Scalar>(data: &Dataset<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = data.num_classes();
    for (row, &label) in data.labels().iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                num_classes,
            });
        }
    }
    let mut rng = rng_from(config.seed, &[0x7261_696e]);

    let mut dims = vec![data.dim()];
    dims.extend(&config.hidden);
    dims.push(num_classes);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (cols, rows) = (w[0], w[1]);
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| T::of(rng.gen_range(-limit..limit)))
            .collect();
        layers.push(Layer::new(rows, cols, weights, vec![T::zero(); rows])?);
    }
    let activation = if config.hidden.is_empty() {
        Activation::Identity
    } else {
        Activation::LeakyRelu {
            slope: config.leaky_slope,
        }
    };
    let mut model = Model::new(layers, activation)?;

    let lr = T::of(config.learning_rate);
    let l2 = T::of(config.l2_penalty);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut final_loss = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut gw: Vec<Vec<T>> = model
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.weights.len()])
                .collect();
            let mut gb: Vec<Vec<T>> = model
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.rows])
                .collect();
            for &i in batch {
                let x = data.row(i);
                let y = data.labels()[i];
                let trace = model.trace(x);
                let logits = trace.pre.last().expect("layers");
                let p = softmax(logits);
                epoch_loss -= p[y].f64().max(1e-300).ln();
                let mut g: Vec<T> = p;
                g[y] -= T::one();
                for k in (0..model.layers.len()).rev() {
                    let layer = &model.layers[k];
                    let input = &trace.inputs[k];
                    for (r, &gr) in g.iter().enumerate() {
                        gb[k][r] += gr;
                        let row = &mut gw[k][r * layer.cols..(r + 1) * layer.cols];
                        for (acc, &a) in row.iter_mut().zip(input) {
                            *acc += gr * a;
                        }
                    }
                    if k > 0 {
                        g = layer
                            .transpose_mul(&g)
                            .into_iter()
                            .zip(&trace.pre[k - 1])
                            .map(|(b, &z)| b * model.activation.derivative(z))
                            .collect();
                    }
                }
            }
            let scale = T::one() / T::of_usize(batch.len());
            for (k, layer) in model.layers.iter_mut().enumerate() {
                for (w, &g) in layer.weights.iter_mut().zip(&gw[k]) {
                    *w -= lr * (g * scale + l2 * *w);
                }
                for (b, &g) in layer.bias.iter_mut().zip(&gb[k]) {
                    *b -= lr * g * scale;
                }
            }
        }
        final_loss = epoch_loss / data.len() as f64;
    }
    if model
        .layers
        .iter()
        .any(|l| !all_finite(&l.weights) || !all_finite(&l.bias))
    {
        return Err(Error::InvalidModel(
            "training diverged to non-finite weights; lower the learning rate".into(),
        ));
    }
    let train_accuracy = model.accuracy(data)?;
    Ok(TrainOutcome {
        model,
        train_accuracy,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer() -> Model<f64> {
        Model::new(
            vec![
                Layer::new(
                    3,
                    2,
                    vec![0.5, -1.0, 1.5, 0.25, -0.75, 2.0],
                    vec![0.1, -0.2, 0.3],
                )
                .unwrap(),
                Layer::new(
                    2,
                    3,
                    vec![1.0, -0.5, 0.25, -1.25, 0.75, 0.5],
                    vec![0.05, -0.05],
                )
                .unwrap(),
            ],
            Activation::LeakyRelu { slope: 0.01 },
        )
        .unwrap()
    }

    /// Written out by hand, independent of `Layer::affine`.
    fn hand_forward(x: [f64; 2]) -> [f64; 2] {
        let lrelu = |z: f64| if z > 0.0 { z } else { 0.01 * z };
        let h0 = lrelu(0.5 * x[0] - 1.0 * x[1] + 0.1);
        let h1 = lrelu(1.5 * x[0] + 0.25 * x[1] - 0.2);
        let h2 = lrelu(-0.75 * x[0] + 2.0 * x[1] + 0.3);
        [
            1.0 * h0 - 0.5 * h1 + 0.25 * h2 + 0.05,
            -1.25 * h0 + 0.75 * h1 + 0.5 * h2 - 0.05,
        ]
    }

    #[test]
    fn identity_layer_forward() {
        let m = Model::linear(2, 2, vec![2.0, 0.0, 0.0, 3.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.forward(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        let m = Model::linear(2, 2, vec![2.0, 0.0, 0.0, 3.0], vec![0.5, -1.5]).unwrap();
        assert_eq!(m.forward(&[0.0, 0.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn two_layer_forward_matches_hand_oracle() {
        let m = two_layer();
        let got = m.forward(&[1.0, -1.0]).unwrap();
        let want = hand_forward([1.0, -1.0]);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = two_layer();
        assert_eq!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        );
        assert_eq!(m.forward(&[f64::NAN, 0.0]), Err(Error::NonFiniteInput));
        assert!(matches!(
            m.input_gradient(&[0.0, 0.0], Target::Logit, 2),
            Err(Error::InvalidClass { .. })
        ));
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let a = softmax(&[1.0f64, 2.0]);
        let b = softmax(&[101.0, 102.0]);
        assert!((a[0] - b[0]).abs() < 1e-15);
        // independent normalisation without max-subtraction
        let raw: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|z| z.exp()).collect();
        let total: f64 = raw.iter().sum();
        for (p, r) in softmax(&[1.0, 2.0, 3.0]).iter().zip(&raw) {
            assert!((p - r / total).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[2.0, 3.0]), 1);
        assert_eq!(argmax(&[5.0, 5.0]), 0);
        let m = two_layer();
        let x = [0.3, 0.9];
        let o = hand_forward(x);
        let want = if o[1] > o[0] { 1 } else { 0 };
        assert_eq!(m.predicted_class(&x).unwrap(), want);
    }

    #[test]
    fn linear_gradient_is_weight_row() {
        let m = Model::<f64>::linear(1, 3, vec![0.5, -2.0, 3.0], vec![1.0]).unwrap();
        for x in [[0.0, 0.0, 0.0], [4.0, -1.0, 2.5]] {
            assert_eq!(
                m.input_gradient(&x, Target::Logit, 0).unwrap(),
                vec![0.5, -2.0, 3.0]
            );
        }
        // one class: softmax is constantly 1
        let g = m
            .input_gradient(&[1.0, 2.0, 3.0], Target::Proba, 0)
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = two_layer();
        let x = [0.37, -0.61];
        for target in [Target::Logit, Target::Proba, Target::LogProba] {
            for class in 0..2 {
                let g = m.input_gradient(&x, target, class).unwrap();
                for i in 0..2 {
                    let h = 1e-4;
                    let mut xp = x;
                    let mut xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (m.target_value(&xp, target, class).unwrap()
                        - m.target_value(&xm, target, class).unwrap())
                        / (2.0 * h);
                    assert!(
                        (fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-6),
                        "{target:?} {fd} {}",
                        g[i]
                    );
                }
            }
        }
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let m = two_layer();
        let back = Model::<f64>::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let m32 = Model::<f32>::linear(1, 2, vec![0.1, 1.0 / 3.0], vec![-7.25e-9]).unwrap();
        assert_eq!(Model::<f32>::from_text(&m32.to_text()).unwrap(), m32);
        let tagged = m.to_text_with_provenance(&serde_json::json!({ "seed": 3 }));
        assert_eq!(Model::<f64>::from_text(&tagged).unwrap(), m);
        let doc: Value = serde_json::from_str(&tagged).unwrap();
        assert_eq!(doc["provenance"]["seed"], 3);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let good = two_layer().to_text();
        let bad_dims = good.replacen("\"cols\": 3", "\"cols\": 4", 1);
        match Model::<f64>::from_text(&bad_dims) {
            Err(Error::MalformedModelFile { field, .. }) => assert_eq!(field, "layers[1].cols"),
            other => panic!("{other:?}"),
        }
        let non_finite = good.replacen("\"bias\": [", "\"bias\": [1e999, ", 1);
        assert!(matches!(
            Model::<f64>::from_text(&non_finite),
            Err(Error::MalformedModelFile { .. })
        ));
        let string_weight = good.replacen("\"bias\": [", "\"bias\": [\"NaN\", ", 1);
        match Model::<f64>::from_text(&string_weight) {
            Err(Error::MalformedModelFile { field, .. }) => assert_eq!(field, "layers[0].bias[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_zero_epochs() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }
}

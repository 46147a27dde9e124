//! A small feedforward network: forward pass, activation capture, layer
//! replacement and minibatch SGD training.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::objective::LayerData;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Relu),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
        }
    }
}

/// A dense layer `z ↦ act(Wᵀz + bias)` with `W` stored `d_in × d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::dim(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weights.cols()
            )));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Weights with the bias appended as a final row, `(d_in + 1) × d_out`.
    pub fn folded_weights(&self) -> DenseMatrix {
        let bias = DenseMatrix::from_vec_unchecked(1, self.bias.len(), self.bias.clone());
        self.weights.vstack(&bias).expect("bias length checked on construction")
    }

    /// Row-wise layer output for a batch `z` (`samples × d_in`).
    pub fn forward_batch(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = z.matmul(&self.weights)?;
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o = self.activation.apply(*o + b);
            }
        }
        Ok(out)
    }
}

/// Layers applied in order; the last one is linear and produces logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::invalid("a network needs at least one layer"));
        };
        if last.activation != Activation::Linear {
            return Err(Error::invalid("the output layer must be linear"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim(format!(
                    "layer {i} outputs {} values but layer {} takes {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-initialized ReLU network with a linear head, e.g. `[N, 128, 64, N_y]`.
    pub fn mlp(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {dims:?}")));
        }
        let mut rng = Rng::new(seed);
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let std = (2.0 / d[0] as f64).sqrt();
                let act = if i + 1 == n { Activation::Linear } else { Activation::Relu };
                Layer::new(rng.gaussian_matrix(d[0], d[1]).scaled(std), vec![0.0; d[1]], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().expect("nonempty").output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = DenseMatrix::new(1, x.len(), x.to_vec())?;
        Ok(self.forward_batch(&z)?.into_vec())
    }

    /// Logits for every row of `x`.
    pub fn forward_batch(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.layers
            .iter()
            .try_fold(x.clone(), |z, layer| layer.forward_batch(&z))
    }

    /// Output of layers `0..upto`, i.e. the input seen by layer `upto`.
    pub fn activations_before(&self, x: &DenseMatrix, upto: usize) -> Result<DenseMatrix> {
        self.layers[..upto.min(self.layers.len())]
            .iter()
            .try_fold(x.clone(), |z, layer| layer.forward_batch(&z))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn predict_batch(&self, x: &DenseMatrix) -> Result<Vec<usize>> {
        let logits = self.forward_batch(x)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("accuracy of an empty dataset"));
        }
        let pred = self.predict_batch(&data.inputs)?;
        let hits = pred.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / data.len() as f64)
    }

    /// Input and post-activation output of layer `index` over every sample.
    pub fn capture_layer_io(&self, data: &Dataset, index: usize) -> Result<LayerData> {
        self.check_index(index)?;
        let a = self.activations_before(&data.inputs, index)?;
        let b = self.layers[index].forward_batch(&a)?;
        LayerData::new(a, b)
    }

    /// Copy of the network with new weights for one layer, bias kept.
    pub fn replace_layer(&self, index: usize, weights: DenseMatrix) -> Result<Network> {
        self.check_index(index)?;
        let old = &self.layers[index];
        if weights.shape() != old.weights.shape() {
            return Err(Error::dim(format!(
                "replacement is {}x{} but layer {index} is {}x{}",
                weights.rows(),
                weights.cols(),
                old.input_dim(),
                old.output_dim()
            )));
        }
        let mut layers = self.layers.clone();
        layers[index] = Layer::new(weights, old.bias.clone(), old.activation)?;
        Ok(Network { layers })
    }

    /// Like [`replace_layer`](Self::replace_layer) but takes folded weights
    /// whose last row is the new bias.
    pub fn replace_layer_folded(&self, index: usize, folded: &DenseMatrix) -> Result<Network> {
        self.check_index(index)?;
        let old = &self.layers[index];
        if folded.shape() != (old.input_dim() + 1, old.output_dim()) {
            return Err(Error::dim(format!(
                "folded replacement is {}x{} but layer {index} needs {}x{}",
                folded.rows(),
                folded.cols(),
                old.input_dim() + 1,
                old.output_dim()
            )));
        }
        let weights = folded.row_slice(0, old.input_dim())?;
        let bias = folded.row(old.input_dim()).to_vec();
        let mut layers = self.layers.clone();
        layers[index] = Layer::new(weights, bias, old.activation)?;
        Ok(Network { layers })
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.layers.len() {
            return Err(Error::invalid(format!(
                "layer index {index} out of range for {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Network> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Network::read_from(&mut file)
    }

    /// Serializes as `"FETA"`, version byte 1, a little-endian `u32` layer
    /// count, one `(u32 d_in, u32 d_out, u8 activation)` header per layer,
    /// then per layer the row-major `f64` weights followed by the biases.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u8(MODEL_VERSION)?;
        w.write_u32::<LittleEndian>(self.layers.len() as u32)?;
        for layer in &self.layers {
            w.write_u32::<LittleEndian>(layer.input_dim() as u32)?;
            w.write_u32::<LittleEndian>(layer.output_dim() as u32)?;
            w.write_u8(layer.activation.code())?;
        }
        for layer in &self.layers {
            for &v in layer.weights.as_slice().iter().chain(&layer.bias) {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Network> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated_model)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.read_u8().map_err(truncated_model)?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let count = r.read_u32::<LittleEndian>().map_err(truncated_model)? as usize;
        let mut headers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let d_in = r.read_u32::<LittleEndian>().map_err(truncated_model)? as usize;
            let d_out = r.read_u32::<LittleEndian>().map_err(truncated_model)? as usize;
            let act = Activation::from_code(r.read_u8().map_err(truncated_model)?)?;
            headers.push((d_in, d_out, act));
        }
        let mut layers = Vec::with_capacity(count);
        for (d_in, d_out, act) in headers {
            let mut read_n = |n: usize| -> Result<Vec<f64>> {
                (0..n)
                    .map(|_| r.read_f64::<LittleEndian>().map_err(truncated_model))
                    .collect()
            };
            let weights = DenseMatrix::new(d_in, d_out, read_n(d_in * d_out)?)?;
            let bias = read_n(d_out)?;
            layers.push(Layer::new(weights, bias, act)?);
        }
        Network::new(layers)
    }
}

const MODEL_MAGIC: &[u8; 4] = b"FETA";
const MODEL_VERSION: u8 = 1;

fn truncated_model(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("model file is truncated".into())
    } else {
        Error::Io(e)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Labeled samples, one per row of `inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::dim(format!(
                "{} labels for {} samples",
                labels.len(),
                inputs.rows()
            )));
        }
        if classes < 2 {
            return Err(Error::invalid("a classification dataset needs at least 2 classes"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.inputs.select_rows(rows)?,
            rows.iter().map(|&r| self.labels[r]).collect(),
            self.classes,
        )
    }

    /// Seeded shuffle, then the first `test_fraction` of samples become the
    /// test split. Returns `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        Rng::new(seed).shuffle(&mut idx);
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train)?, self.subset(test)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Minibatch SGD on the mean softmax cross-entropy.
pub fn train_sgd(net: &Network, data: &Dataset, params: &TrainParams) -> Result<Network> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if data.dim() != net.input_dim() || data.classes != net.classes() {
        return Err(Error::dim(format!(
            "network maps {} -> {} but data has {} features and {} classes",
            net.input_dim(),
            net.classes(),
            data.dim(),
            data.classes
        )));
    }
    if params.batch_size == 0 || !(params.lr >= 0.0 && params.lr.is_finite()) {
        return Err(Error::invalid("batch size must be positive and lr nonnegative"));
    }
    let mut net = net.clone();
    let mut rng = Rng::new(params.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..params.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(params.batch_size) {
            let x = data.inputs.select_rows(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let loss = sgd_step(&mut net, &x, &y, params.lr)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    reason: format!("non-finite training loss in epoch {}", epoch + 1),
                    last_finite: None,
                    trace: Vec::new(),
                });
            }
            epoch_loss += loss * batch.len() as f64;
        }
        log::debug!("epoch {}: loss {:.5}", epoch + 1, epoch_loss / data.len() as f64);
    }
    Ok(net)
}

/// Mean softmax cross-entropy of the logits against integer labels.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

fn sgd_step(net: &mut Network, x: &DenseMatrix, y: &[usize], lr: f64) -> Result<f64> {
    let n = y.len() as f64;
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut z = x.clone();
    for layer in &net.layers {
        let next = layer.forward_batch(&z)?;
        inputs.push(z);
        z = next;
    }
    let loss = cross_entropy(&z, y);

    // dL/dlogits = (softmax − onehot) / n
    let mut delta = z;
    for (r, &label) in y.iter().enumerate() {
        let row = delta.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum * n;
        }
        row[label] -= 1.0 / n;
    }

    for l in (0..net.layers.len()).rev() {
        let a = &inputs[l];
        let grad_w = a.t_matmul(&delta)?;
        let grad_b: Vec<f64> = (0..delta.cols())
            .map(|c| (0..delta.rows()).map(|r| delta.get(r, c)).sum())
            .collect();
        if l > 0 {
            let mut back = delta.matmul_t(&net.layers[l].weights)?;
            // inputs[l] is the post-ReLU output of layer l − 1.
            if net.layers[l - 1].activation == Activation::Relu {
                for (d, &act) in back.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = back;
        }
        let layer = &mut net.layers[l];
        layer.weights.axpy(-lr, &grad_w)?;
        for (b, g) in layer.bias.iter_mut().zip(grad_b) {
            *b -= lr * g;
        }
    }
    Ok(loss)
}

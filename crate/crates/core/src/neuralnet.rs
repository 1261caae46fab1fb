//! Fully-connected ReLU networks with a hand-written backward pass, the Adam
//! optimizer, and (masked) softmax.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`, so a batch forward is `x.dot(&w) + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// ReLU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input to each layer (post-ReLU of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer; the last one is the network output.
    pre: Vec<Array2<f64>>,
}

impl Cache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("network has at least one layer")
    }
}

/// Gradients laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

impl Grads {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|d| d.w.iter().chain(d.b.iter()).copied()).collect()
    }

    pub fn scale(&mut self, k: f64) {
        for d in &mut self.layers {
            d.w *= k;
            d.b *= k;
        }
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl Mlp {
    /// He-uniform hidden layers (`U(+-sqrt(6/fan_in))`), output layer
    /// `U(+-1/sqrt(fan_in))`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = if i + 1 == n { 1.0 / (fan_in as f64).sqrt() } else { (6.0 / fan_in as f64).sqrt() };
                Dense {
                    w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Mlp {
            layers: widths
                .windows(2)
                .map(|w| Dense { w: Array2::zeros((w[0], w[1])), b: Array1::zeros(w[1]) })
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, d) in layers.iter().enumerate() {
            if d.b.len() != d.w.ncols() {
                return Err(Error::ShapeMismatch { expected: d.w.ncols(), actual: d.b.len() });
            }
            if let Some(next) = layers.get(i + 1) {
                if next.w.nrows() != d.w.ncols() {
                    return Err(Error::ShapeMismatch { expected: d.w.ncols(), actual: next.w.nrows() });
                }
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.nrows()];
        w.extend(self.layers.iter().map(|d| d.w.ncols()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|d| d.w.len() + d.b.len()).sum()
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::ShapeMismatch { expected: self.input_width(), actual: width });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let n = self.layers.len();
        let mut h = x.to_owned();
        for (i, d) in self.layers.iter().enumerate() {
            h = h.dot(&d.w) + &d.b;
            if i + 1 < n {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<Cache> {
        self.check_input(x.ncols())?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, d) in self.layers.iter().enumerate() {
            let z = h.dot(&d.w) + &d.b;
            inputs.push(h);
            h = if i + 1 < n { z.mapv(relu) } else { Array2::zeros((0, 0)) };
            pre.push(z);
        }
        Ok(Cache { inputs, pre })
    }

    /// Reverse-mode gradients of `sum(grad_out * output)` w.r.t. every
    /// parameter, summed over the batch.
    pub fn backward(&self, cache: &Cache, grad_out: ArrayView2<f64>) -> Result<Grads> {
        let out = cache.output();
        if grad_out.dim() != out.dim() {
            return Err(Error::ShapeMismatch { expected: out.len(), actual: grad_out.len() });
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut dz = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let dw = cache.inputs[i].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].w.t());
                da.zip_mut_with(&cache.pre[i - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                dz = da;
            }
            grads.push(Dense { w: dw, b: db });
        }
        grads.reverse();
        Ok(Grads { layers: grads })
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|d| d.w.iter().chain(d.b.iter()).copied()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch { expected: self.num_params(), actual: flat.len() });
        }
        let mut it = flat.iter();
        for d in &mut self.layers {
            for v in d.w.iter_mut().chain(d.b.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|d| d.w.iter().chain(d.b.iter()).all(|v| v.is_finite()))
    }

    /// Polyak averaging: `self = tau * online + (1 - tau) * self`.
    pub fn soft_update(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.w.zip_mut_with(&o.w, |t, &o| *t = tau * o + (1.0 - tau) * *t);
            t.b.zip_mut_with(&o.b, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = MlpCheckpoint { format: MLP_FORMAT.into(), version: 1, net: self.clone() };
        std::fs::write(path, serde_json::to_string(&doc)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: MlpCheckpoint = serde_json::from_str(&text)?;
        if doc.format != MLP_FORMAT || doc.version != 1 {
            return Err(Error::CheckpointMismatch(format!("unsupported network file {} v{}", doc.format, doc.version)));
        }
        Ok(doc.net)
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

const MLP_FORMAT: &str = "coinfer-mlp";

#[derive(Serialize, Deserialize)]
struct MlpCheckpoint {
    format: String,
    version: u32,
    net: Mlp,
}

#[derive(Serialize, Deserialize)]
struct DenseDoc {
    /// Row-major `inputs x outputs`.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let docs: Vec<DenseDoc> = self
            .layers
            .iter()
            .map(|d| DenseDoc { weights: d.w.rows().into_iter().map(|r| r.to_vec()).collect(), bias: d.b.to_vec() })
            .collect();
        docs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let docs = Vec::<DenseDoc>::deserialize(d)?;
        let mut layers = Vec::with_capacity(docs.len());
        for doc in docs {
            let rows = doc.weights.len();
            let cols = doc.weights.first().map_or(0, Vec::len);
            if doc.weights.iter().any(|r| r.len() != cols) {
                return Err(D::Error::custom("ragged weight matrix"));
            }
            let w = Array2::from_shape_vec((rows, cols), doc.weights.concat()).map_err(D::Error::custom)?;
            layers.push(Dense { w, b: Array1::from(doc.bias) });
        }
        Mlp::from_layers(layers).map_err(D::Error::custom)
    }
}

/// Adam with bias correction:
/// `m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;`
/// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn for_net(net: &Mlp, lr: f64) -> Self {
        Self::new(net.num_params(), lr)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates a flat parameter slice in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        assert_eq!(grads.len(), self.m.len(), "gradient does not match parameters");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }

    pub fn step_net(&mut self, net: &mut Mlp, grads: &Grads) {
        assert_eq!(grads.layers.len(), net.layers.len(), "gradient does not match network");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut k = 0;
        for (d, g) in net.layers.iter_mut().zip(&grads.layers) {
            for (p, &g) in d.w.iter_mut().chain(d.b.iter_mut()).zip(g.w.iter().chain(g.b.iter())) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                k += 1;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over the unmasked slots; masked slots get exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let log_p = masked_log_softmax(logits, mask)?;
    Ok(log_p.into_iter().map(|l| if l == f64::NEG_INFINITY { 0.0 } else { l.exp() }).collect())
}

/// Log-probabilities over the unmasked slots; masked slots are `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::ShapeMismatch { expected: mask.len(), actual: logits.len() });
    }
    let max = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(&z, _)| z).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let sum: f64 = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(&z, _)| (z - max).exp()).sum();
    let log_sum = sum.ln();
    Ok(logits.iter().zip(mask).map(|(&z, &m)| if m { z - max - log_sum } else { f64::NEG_INFINITY }).collect())
}

/// Shannon entropy in nats; zero-probability slots contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

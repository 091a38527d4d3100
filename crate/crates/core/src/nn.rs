//! Dense feed-forward networks with hand-derived backpropagation and Adam.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (`out x in`, row-major) followed by the bias vector. Hidden layers use a
//! leaky ReLU with slope 0.01, the output layer is linear. Everything is `f64`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenActivation {
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl NetworkLayout {
    pub fn new(input_dim: usize, hidden_widths: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_widths: hidden_widths.to_vec(),
            output_dim,
            hidden_activation: HiddenActivation::LeakyRelu,
            output_activation: OutputActivation::Linear,
        }
    }

    /// Two hidden layers of 128 units.
    pub fn standard(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, &[128, 128], output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network dimensions must be >= 1: {:?}",
                self.dims()
            )));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> Vec<LayerSlice> {
        let mut offset = 0;
        self.dims()
            .windows(2)
            .map(|w| {
                let layer = LayerSlice {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                layer
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlice {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

/// Row-major batch of equally sized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure_dim(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Stacks rows; all rows must share the width `cols`.
    pub fn from_rows<R: AsRef<[f64]>>(cols: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            ensure_dim(cols, row.as_ref().len())?;
            data.extend_from_slice(row.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Copies the selected rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `c = alpha * a * b + beta * c` on strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(m == 0 || n == 0 || c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted extents above keep every strided access in bounds,
    // and `c` is a unique borrow that does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[inline]
fn leaky_relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
fn leaky_relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, the last entry is the output.
    activations: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache always holds the input")
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().expect("cache always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layout: NetworkLayout,
    params: Vec<f64>,
}

impl Network {
    /// Glorot-uniform weights from a seeded generator, zero biases.
    pub fn new(layout: NetworkLayout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.param_count()];
        for layer in layout.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut params[layer.weights..layer.bias] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(Self { layout, params })
    }

    pub fn zeros(layout: NetworkLayout) -> Result<Self> {
        layout.validate()?;
        let params = vec![0.0; layout.param_count()];
        Ok(Self { layout, params })
    }

    pub fn from_params(layout: NetworkLayout, params: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        ensure_dim(layout.param_count(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> &NetworkLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layout.output_dim
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(inputs)?.into_output())
    }

    pub fn forward_cached(&self, inputs: &Matrix) -> Result<ForwardCache> {
        ensure_dim(self.layout.input_dim, inputs.cols())?;
        let batch = inputs.rows();
        let layers = self.layout.layers();
        let mut activations = Vec::with_capacity(layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(layers.len().saturating_sub(1));
        activations.push(inputs.clone());

        for (l, layer) in layers.iter().enumerate() {
            let input = activations.last().expect("non-empty");
            let weights = &self.params[layer.weights..layer.bias];
            let bias = &self.params[layer.bias..layer.bias + layer.fan_out];
            let mut z = Matrix::zeros(batch, layer.fan_out);
            for row in z.data.chunks_exact_mut(layer.fan_out) {
                row.copy_from_slice(bias);
            }
            gemm(
                batch,
                layer.fan_in,
                layer.fan_out,
                1.0,
                &input.data,
                (layer.fan_in, 1),
                weights,
                (1, layer.fan_in),
                1.0,
                &mut z.data,
                (layer.fan_out, 1),
            );
            if l + 1 < layers.len() {
                let mut a = z.clone();
                a.data.iter_mut().for_each(|v| *v = leaky_relu(*v));
                pre_activations.push(z);
                activations.push(a);
            } else {
                activations.push(z);
            }
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    /// Gradient of a loss with respect to the parameters, given the loss
    /// gradient with respect to the outputs. Per-sample contributions are
    /// summed; fold any `1/M` normalization into `output_grad`.
    pub fn backward(&self, inputs: &Matrix, output_grad: &Matrix) -> Result<Vec<f64>> {
        let cache = self.forward_cached(inputs)?;
        self.backward_cached(&cache, output_grad)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<Vec<f64>> {
        let batch = cache.activations[0].rows();
        ensure_dim(self.layout.output_dim, output_grad.cols())?;
        ensure_dim(batch, output_grad.rows())?;

        let layers = self.layout.layers();
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = output_grad.clone();

        for (l, layer) in layers.iter().enumerate().rev() {
            let input = &cache.activations[l];
            let (weight_grad, bias_grad) = grads[layer.weights..layer.bias + layer.fan_out]
                .split_at_mut(layer.fan_in * layer.fan_out);
            gemm(
                layer.fan_out,
                batch,
                layer.fan_in,
                1.0,
                &delta.data,
                (1, layer.fan_out),
                &input.data,
                (layer.fan_in, 1),
                0.0,
                weight_grad,
                (layer.fan_in, 1),
            );
            for row in delta.data.chunks_exact(layer.fan_out) {
                for (g, d) in bias_grad.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[layer.weights..layer.bias];
            let mut prev = Matrix::zeros(batch, layer.fan_in);
            gemm(
                batch,
                layer.fan_out,
                layer.fan_in,
                1.0,
                &delta.data,
                (layer.fan_out, 1),
                weights,
                (layer.fan_in, 1),
                0.0,
                &mut prev.data,
                (layer.fan_in, 1),
            );
            for (d, z) in prev.data.iter_mut().zip(&cache.pre_activations[l - 1].data) {
                *d *= leaky_relu_grad(*z);
            }
            delta = prev;
        }
        Ok(grads)
    }

    const MAGIC: &'static [u8; 8] = b"PPOCMANN";
    const FORMAT_VERSION: u32 = 1;

    /// Binary checkpoint: magic, version, layout, activation tags, then the
    /// parameters as little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(Self::MAGIC)?;
        out.write_all(&Self::FORMAT_VERSION.to_le_bytes())?;
        let dims = self.layout.dims();
        out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in dims {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let hidden_tag = match self.layout.hidden_activation {
            HiddenActivation::LeakyRelu => 0u8,
        };
        let output_tag = match self.layout.output_activation {
            OutputActivation::Linear => 0u8,
        };
        out.write_all(&[hidden_tag, output_tag])?;
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != Self::FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_dims = read_u32(&mut input)? as usize;
        if n_dims < 2 {
            return Err(Error::Checkpoint("layout needs input and output".into()));
        }
        let dims = (0..n_dims)
            .map(|_| read_u64(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut tags = [0u8; 2];
        input.read_exact(&mut tags)?;
        if tags != [0, 0] {
            return Err(Error::Checkpoint(format!("unknown activation tags {tags:?}")));
        }
        let layout = NetworkLayout::new(dims[0], &dims[1..n_dims - 1], dims[n_dims - 1]);
        let count = read_u64(&mut input)? as usize;
        if count != layout.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match layout ({})",
                layout.param_count()
            )));
        }
        let mut params = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            input.read_exact(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        Self::from_params(layout, params)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl Adam {
    pub const DEFAULT_LEARNING_RATE: f64 = 0.0003;

    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn for_network(net: &Network) -> Self {
        Self::new(net.param_count(), Self::DEFAULT_LEARNING_RATE)
    }

    pub fn step(&mut self, net: &mut Network, grads: &[f64]) -> Result<()> {
        ensure_dim(net.param_count(), grads.len())?;
        ensure_dim(self.first_moment.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, m), v), &g) in net
            .params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
            .zip(grads)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Indices of one training minibatch: `size` distinct indices when the data
/// set is large enough, otherwise `size` draws with replacement.
pub fn minibatch_indices<R: Rng + ?Sized>(len: usize, size: usize, rng: &mut R) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    if len >= size {
        rand::seq::index::sample(rng, len, size).into_vec()
    } else {
        (0..size).map(|_| rng.random_range(0..len)).collect()
    }
}

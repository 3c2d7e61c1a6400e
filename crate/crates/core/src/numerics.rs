//! Framework-free dense linear algebra for the fixed MLP topology.
//!
//! Everything here is 64-bit and pure: forward/backward for a tanh-hidden,
//! identity-output multilayer perceptron, the bias-corrected Adam update,
//! a numerically stabilized softmax, and cosine similarity. Transcendentals
//! go through `libm` so results are identical across hosts and wasm32.
//!
//! There is deliberately no general autodiff graph: the policy and value
//! networks are plain MLPs, and an explicit backward pass is both faster
//! and easier to verify against finite differences.

use crate::error::Error;
use crate::Result;

// ---------------------------------------------------------------------------
// Vectors and matrices
// ---------------------------------------------------------------------------

/// Dense vector of finite 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    values: Vec<f64>,
}

impl Vector {
    /// Validates that every entry is finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite vector entry {bad}")));
        }
        Ok(Vector { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Vector {
            values: vec![0.0; dim],
        }
    }

    /// Internal constructor for values produced by our own arithmetic.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Vector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "dot of dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = self * x`
    fn matvec(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        out.clear();
        out.reserve(self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    /// `y = selfᵀ * x`
    fn t_matvec(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.rows);
        out.clear();
        out.resize(self.cols, 0.0);
        for (row, xr) in self.data.chunks_exact(self.cols).zip(x) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * xr;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// MLP parameters
// ---------------------------------------------------------------------------

/// One dense layer: `out = weight * x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
}

/// Parameters of a tanh-hidden, identity-output MLP. Hidden activations are
/// hyperbolic tangent; the final layer is linear. The same shape doubles as
/// the gradient buffer for [`mlp_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    /// Validates shape chaining: each layer consumes the previous layer's
    /// output dimension, and biases match their weight row counts.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("MLP needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.dim() != layer.weight.rows() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias dim {} != weight rows {}",
                    layer.bias.dim(),
                    layer.weight.rows()
                )));
            }
            if i > 0 && layer.weight.cols() != layers[i - 1].weight.rows() {
                return Err(Error::Shape(format!(
                    "layer {i}: weight cols {} != previous output dim {}",
                    layer.weight.cols(),
                    layers[i - 1].weight.rows()
                )));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Builds a net from `dims = [input, hidden.., output]` with entries
    /// drawn from `init(fan_in, fan_out)`.
    pub fn from_dims(dims: &[usize], mut init: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("need at least input and output dims".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape("zero layer dimension".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| init(fan_in, fan_out))
                .collect();
            layers.push(Layer {
                weight: Matrix::new(fan_out, fan_in, data)?,
                bias: Vector::zeros(fan_out),
            });
        }
        MlpParams::new(layers)
    }

    /// All-zero buffer with the same shape, used for gradients and Adam moments.
    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: Vector::zeros(l.bias.dim()),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .expect("validated non-empty")
            .weight
            .rows()
    }

    /// `[input, hidden.., output]`
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.rows()));
        dims
    }

    fn shape_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for d in self.dims() {
            h ^= d as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.dims() == other.dims()
    }

    /// Total scalar parameter count.
    pub fn flat_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.dim())
            .sum()
    }

    /// Scalar parameter by flat index (weights row-major, then bias, per layer).
    pub fn flat_get(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            let w = l.weight.data().len();
            if i < w {
                return l.weight.data()[i];
            }
            i -= w;
            if i < l.bias.dim() {
                return l.bias.values()[i];
            }
            i -= l.bias.dim();
        }
        panic!("flat index out of range");
    }

    pub fn flat_set(&mut self, mut i: usize, v: f64) {
        for l in &mut self.layers {
            let w = l.weight.data().len();
            if i < w {
                l.weight.data_mut()[i] = v;
                return;
            }
            i -= w;
            if i < l.bias.dim() {
                let dim = l.bias.dim();
                let mut values = std::mem::replace(&mut l.bias, Vector::zeros(dim)).values;
                values[i] = v;
                l.bias = Vector { values };
                return;
            }
            i -= l.bias.dim();
        }
        panic!("flat index out of range");
    }

    /// Applies `f(param, other_param)` elementwise, writing into `self`.
    pub(crate) fn zip_apply(&mut self, other: &MlpParams, mut f: impl FnMut(f64, f64) -> f64) {
        debug_assert!(self.same_shape(other));
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in l.weight.data_mut().iter_mut().zip(o.weight.data()) {
                *a = f(*a, *b);
            }
            let dim = l.bias.dim();
            let mut values = std::mem::replace(&mut l.bias, Vector::zeros(dim)).values;
            for (a, b) in values.iter_mut().zip(o.bias.values()) {
                *a = f(*a, *b);
            }
            l.bias = Vector { values };
        }
    }

    /// Accumulates `other * scale` into `self` (same shape).
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        self.zip_apply(other, |a, b| a + b * scale);
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.data().iter().all(|v| v.is_finite())
                && l.bias.values().iter().all(|v| v.is_finite())
        })
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Per-layer activations saved by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Post-activation output of every layer.
    post: Vec<Vec<f64>>,
    fingerprint: u64,
}

/// Runs the MLP forward, returning the output and a cache sufficient for an
/// exact backward pass.
pub fn mlp_forward(params: &MlpParams, input: &Vector) -> Result<(Vector, ForwardCache)> {
    if input.dim() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input dim {} != first layer input dim {}",
            input.dim(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut x: Vec<f64> = input.values().to_vec();
    let mut z = Vec::new();
    for (i, layer) in params.layers.iter().enumerate() {
        layer.weight.matvec(&x, &mut z);
        for (zi, b) in z.iter_mut().zip(layer.bias.values()) {
            *zi += b;
        }
        let last = i + 1 == n_layers;
        if !last {
            for zi in z.iter_mut() {
                *zi = libm::tanh(*zi);
            }
        }
        post.push(z.clone());
        std::mem::swap(&mut x, &mut z);
    }
    let output = Vector::from_raw(x);
    Ok((
        output,
        ForwardCache {
            input: input.values().to_vec(),
            post,
            fingerprint: params.shape_fingerprint(),
        },
    ))
}

/// Backpropagates `grad_output` through the cached forward pass, returning
/// gradients shaped like the parameters.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_output: &Vector,
) -> Result<MlpParams> {
    if cache.fingerprint != params.shape_fingerprint()
        || cache.post.len() != params.layers.len()
        || cache.input.len() != params.input_dim()
    {
        return Err(Error::StaleCache);
    }
    if grad_output.dim() != params.output_dim() {
        return Err(Error::Shape(format!(
            "grad_output dim {} != output dim {}",
            grad_output.dim(),
            params.output_dim()
        )));
    }

    let n_layers = params.layers.len();
    let mut grads = params.zeros_like();
    let mut g: Vec<f64> = grad_output.values().to_vec();
    let mut g_prev = Vec::new();
    for i in (0..n_layers).rev() {
        // dz: identity on the output layer, tanh' = 1 - a^2 elsewhere.
        if i + 1 != n_layers {
            for (gi, a) in g.iter_mut().zip(&cache.post[i]) {
                *gi *= 1.0 - a * a;
            }
        }
        let x_prev: &[f64] = if i == 0 {
            &cache.input
        } else {
            &cache.post[i - 1]
        };
        {
            let gl = &mut grads.layers[i];
            let cols = gl.weight.cols();
            let wdata = gl.weight.data_mut();
            for (r, gr) in g.iter().enumerate() {
                let row = &mut wdata[r * cols..(r + 1) * cols];
                for (w, xp) in row.iter_mut().zip(x_prev) {
                    *w = gr * xp;
                }
            }
            gl.bias = Vector::from_raw(g.clone());
        }
        if i > 0 {
            params.layers[i].weight.t_matvec(&g, &mut g_prev);
            std::mem::swap(&mut g, &mut g_prev);
        }
    }
    Ok(grads)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam accumulator state shaped like the parameters it updates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: MlpParams,
    v: MlpParams,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with the standard defaults β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn parts(&self) -> (&MlpParams, &MlpParams, u64) {
        (&self.m, &self.v, self.step)
    }

    pub(crate) fn from_parts(
        m: MlpParams,
        v: MlpParams,
        step: u64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        AdamState {
            m,
            v,
            step,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update, in place. Gradients must be finite and
/// shaped like the parameters.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::Shape("adam shapes do not match".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient entry".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let m_corr = 1.0 - libm::pow(b1, f64::from(t));
    let v_corr = 1.0 - libm::pow(b2, f64::from(t));

    state.m.zip_apply(grads, |m, g| b1 * m + (1.0 - b1) * g);
    state.v.zip_apply(grads, |v, g| b2 * v + (1.0 - b2) * g * g);

    for (pl, (ml, vl)) in params
        .layers
        .iter_mut()
        .zip(state.m.layers.iter().zip(&state.v.layers))
    {
        for (p, (m, v)) in pl
            .weight
            .data_mut()
            .iter_mut()
            .zip(ml.weight.data().iter().zip(vl.weight.data()))
        {
            let m_hat = m / m_corr;
            let v_hat = v / v_corr;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        let dim = pl.bias.dim();
        let mut values = std::mem::replace(&mut pl.bias, Vector::zeros(dim)).values;
        for (p, (m, v)) in values
            .iter_mut()
            .zip(ml.bias.values().iter().zip(vl.bias.values()))
        {
            let m_hat = m / m_corr;
            let v_hat = v / v_corr;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        pl.bias = Vector { values };
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Softmax and cosine similarity
// ---------------------------------------------------------------------------

/// Numerically stabilized softmax (max subtraction before exponentiation).
pub fn softmax(logits: &Vector) -> Result<Vector> {
    if logits.dim() == 0 {
        return Err(Error::Shape("softmax of empty vector".into()));
    }
    let max = logits
        .values()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits
        .values()
        .iter()
        .map(|&z| libm::exp(z - max))
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(Vector::from_raw(
        exps.into_iter().map(|e| e / sum).collect(),
    ))
}

/// Log-softmax, stabilized the same way. `exp(log_softmax(x)) == softmax(x)`.
pub fn log_softmax(logits: &Vector) -> Result<Vector> {
    if logits.dim() == 0 {
        return Err(Error::Shape("log_softmax of empty vector".into()));
    }
    let max = logits
        .values()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_sum = libm::log(
        logits
            .values()
            .iter()
            .map(|&z| libm::exp(z - max))
            .sum::<f64>(),
    );
    Ok(Vector::from_raw(
        logits.values().iter().map(|&z| z - max - log_sum).collect(),
    ))
}

/// Cosine similarity in `[-1, 1]`. Errors on dimension mismatch or zero norm.
pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "cosine of dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm vector in cosine".into()));
    }
    // Clamp away round-off spill past ±1.
    Ok((a.dot(b)? / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::test_support::{central_diff_grads, flat_grads, max_rel_err};
    use proptest::prelude::*;

    fn random_net(dims: &[usize], seed: u64) -> MlpParams {
        let mut rng = Rng::seed(seed);
        MlpParams::from_dims(dims, |fi, fo| {
            let bound = (6.0 / (fi + fo) as f64).sqrt();
            rng.uniform(-bound, bound)
        })
        .unwrap()
    }

    fn random_vec(dim: usize, seed: u64) -> Vector {
        let mut rng = Rng::seed(seed);
        Vector::from_raw((0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    // Independent reference forward: plain nested loops, no shared code path.
    #[allow(clippy::needless_range_loop)]
    fn oracle_forward(params: &MlpParams, input: &[f64]) -> Vec<f64> {
        let n = params.layers().len();
        let mut x = input.to_vec();
        for (i, layer) in params.layers().iter().enumerate() {
            let mut next = vec![0.0; layer.weight.rows()];
            for (r, nr) in next.iter_mut().enumerate() {
                let mut acc = layer.bias.values()[r];
                for c in 0..layer.weight.cols() {
                    acc += layer.weight.get(r, c) * x[c];
                }
                *nr = if i + 1 == n { acc } else { libm::tanh(acc) };
            }
            x = next;
        }
        x
    }

    #[test]
    fn forward_identity_layer_is_identity() {
        let params = MlpParams::new(vec![Layer {
            weight: Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Vector::zeros(2),
        }])
        .unwrap();
        let (out, _) = mlp_forward(&params, &Vector::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_zero_net_is_zero() {
        let params = MlpParams::new(vec![
            Layer {
                weight: Matrix::zeros(3, 2),
                bias: Vector::zeros(3),
            },
            Layer {
                weight: Matrix::zeros(2, 3),
                bias: Vector::zeros(2),
            },
        ])
        .unwrap();
        let (out, _) = mlp_forward(&params, &Vector::new(vec![5.0, -3.0]).unwrap()).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_matches_reference_matmul_oracle() {
        let params = random_net(&[3, 2, 1], 7);
        let input = random_vec(3, 70);
        let (out, _) = mlp_forward(&params, &input).unwrap();
        let expect = oracle_forward(&params, input.values());
        for (a, b) in out.values().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let params = random_net(&[3, 2], 1);
        let err = mlp_forward(&params, &Vector::zeros(4)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn backward_zero_grad_output_gives_zero_grads() {
        let params = random_net(&[4, 3, 2], 2);
        let (_, cache) = mlp_forward(&params, &random_vec(4, 20)).unwrap();
        let grads = mlp_backward(&params, &cache, &Vector::zeros(2)).unwrap();
        assert!(flat_grads(&grads).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_scalar_linear_net() {
        // Single layer => identity activation; dL/dw = x * grad_output.
        let params = MlpParams::new(vec![Layer {
            weight: Matrix::new(1, 1, vec![0.37]).unwrap(),
            bias: Vector::zeros(1),
        }])
        .unwrap();
        let x = 2.5;
        let g = -1.25;
        let (_, cache) = mlp_forward(&params, &Vector::new(vec![x]).unwrap()).unwrap();
        let grads = mlp_backward(&params, &cache, &Vector::new(vec![g]).unwrap()).unwrap();
        assert!((grads.layers()[0].weight.get(0, 0) - x * g).abs() < 1e-15);
        assert!((grads.layers()[0].bias.values()[0] - g).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let a = random_net(&[4, 3, 2], 3);
        let b = random_net(&[4, 4, 2], 4);
        let (_, cache) = mlp_forward(&a, &random_vec(4, 30)).unwrap();
        let err = mlp_backward(&b, &cache, &Vector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::StaleCache));
    }

    #[test]
    fn backward_matches_central_differences() {
        // Loss = c . output, so grad_output = c.
        let params = random_net(&[5, 4, 3], 5);
        let input = random_vec(5, 50);
        let c = random_vec(3, 51);
        let (_, cache) = mlp_forward(&params, &input).unwrap();
        let analytic = flat_grads(&mlp_backward(&params, &cache, &c).unwrap());
        let numeric = central_diff_grads(
            &params,
            |p| {
                let (out, _) = mlp_forward(p, &input).unwrap();
                out.dot(&c).unwrap()
            },
            1e-5,
        );
        assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn finite_difference_property_on_random_nets() {
        for (seed, dims) in [
            (11u64, vec![16, 8, 4]),
            (12, vec![9, 8, 4]),
            (13, vec![6, 5, 5, 2]),
        ] {
            let params = random_net(&dims, seed);
            let input = random_vec(dims[0], seed * 10);
            let c = random_vec(*dims.last().unwrap(), seed * 10 + 1);
            let (_, cache) = mlp_forward(&params, &input).unwrap();
            let analytic = flat_grads(&mlp_backward(&params, &cache, &c).unwrap());
            let numeric = central_diff_grads(
                &params,
                |p| mlp_forward(p, &input).unwrap().0.dot(&c).unwrap(),
                1e-5,
            );
            assert!(
                max_rel_err(&analytic, &numeric) < 1e-4,
                "dims {dims:?} seed {seed}"
            );
        }
    }

    #[test]
    fn adam_zero_gradients_fix_parameters() {
        let mut params = random_net(&[3, 2], 6);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn adam_first_step_is_almost_minus_lr() {
        // Scalar param 0, grad 1, lr 0.1: bias correction makes the first
        // step -lr * g / (|g| + eps') ~= -0.1.
        let mut params = MlpParams::new(vec![Layer {
            weight: Matrix::new(1, 1, vec![0.0]).unwrap(),
            bias: Vector::zeros(1),
        }])
        .unwrap();
        let mut grads = params.zeros_like();
        grads.flat_set(0, 1.0);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert!(
            (params.flat_get(0) + 0.1).abs() < 1e-7,
            "{}",
            params.flat_get(0)
        );
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn adam_matches_reference_recurrence() {
        // Reference: textbook Adam over flat slices, evolved independently.
        let dims = [4, 3, 2];
        let mut params = random_net(&dims, 8);
        let reference_start = params.clone();
        let g1 = random_net(&dims, 80);
        let g2 = random_net(&dims, 81);
        let lr = 0.05;

        let mut state = AdamState::new(&params);
        adam_step(&mut params, &g1, &mut state, lr).unwrap();
        adam_step(&mut params, &g2, &mut state, lr).unwrap();

        let n = reference_start.flat_len();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let mut p: Vec<f64> = (0..n).map(|i| reference_start.flat_get(i)).collect();
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        for (t, g) in [&g1, &g2].iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..n {
                let gi = g.flat_get(i);
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / (1.0 - b1.powi(t));
                let v_hat = v[i] / (1.0 - b2.powi(t));
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        for i in 0..n {
            assert!((params.flat_get(i) - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut params = random_net(&[2, 2], 9);
        let mut grads = params.zeros_like();
        grads.flat_set(1, f64::NAN);
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &grads, &mut state, 0.1).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&Vector::zeros(4)).unwrap();
        for v in p.values() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_two_logits() {
        let p = softmax(&Vector::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert!((p.values()[0] - 0.26894).abs() < 1e-5);
        assert!((p.values()[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn log_softmax_consistent_with_softmax() {
        let logits = random_vec(6, 60);
        let p = softmax(&logits).unwrap();
        let lp = log_softmax(&logits).unwrap();
        for (a, b) in p.values().iter().zip(lp.values()) {
            assert!((a - libm::exp(*b)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..10),
            shift in -50.0f64..50.0,
        ) {
            let base = softmax(&Vector::new(logits.clone()).unwrap()).unwrap();
            let sum: f64 = base.values().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(base.values().iter().all(|&p| p > 0.0));

            let shifted = softmax(
                &Vector::new(logits.iter().map(|l| l + shift).collect()).unwrap(),
            )
            .unwrap();
            for (a, b) in base.values().iter().zip(shifted.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
            lambda in 0.001f64..1000.0,
        ) {
            let va = Vector::new(a.clone()).unwrap();
            let vb = Vector::new(b).unwrap();
            prop_assume!(va.norm() > 1e-6 && vb.norm() > 1e-6);
            let scaled = Vector::new(a.iter().map(|x| x * lambda).collect()).unwrap();
            let c1 = cosine_similarity(&va, &vb).unwrap();
            let c2 = cosine_similarity(&scaled, &vb).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn cosine_basic_values() {
        let a = Vector::new(vec![3.0, 4.0]).unwrap();
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);

        let e1 = Vector::new(vec![1.0, 0.0]).unwrap();
        let e2 = Vector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);

        let d = Vector::new(vec![1.0, 1.0]).unwrap();
        assert!((cosine_similarity(&d, &e1).unwrap() - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        let z = Vector::zeros(2);
        let a = Vector::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            cosine_similarity(&z, &a).unwrap_err(),
            Error::Degenerate(_)
        ));
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::INFINITY]).is_err());
    }
}

//! Dense feed-forward network with ReLU hidden layers.
//!
//! All parameters live in one flat vector. Layer `l` stores its weight matrix
//! row-major with shape `(dims[l+1], dims[l])`, followed by its bias vector.
//! Gradients use the same layout, so optimizers can treat them as plain slices.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{ensure_len, Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Softmax,
    Identity,
}

/// Number of parameters of a dense network with the given layer widths.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
    // Bumped on every parameter mutation; caches remember the value they saw.
    generation: u64,
}

/// Activations recorded by a forward pass, row per sample.
#[derive(Debug, Clone)]
pub struct Cache {
    generation: u64,
    // activations[0] is the input, the last entry is the network output.
    activations: Vec<Array2<f64>>,
}

impl Cache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache always holds the input")
    }

    pub fn rows(&self) -> usize {
        self.activations[0].nrows()
    }

    /// Layer `l` activations; 0 is the input.
    pub fn activation(&self, l: usize) -> &Array2<f64> {
        &self.activations[l]
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient with respect to every parameter, summed over rows.
    pub params: Vec<f64>,
    /// Gradient with respect to each input row.
    pub input: Array2<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, output)?;
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = dist.sample(rng);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], output: OutputActivation) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "layer dims must have at least two positive entries, got {dims:?}"
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
            output,
            generation: next_generation(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_len("set_params", self.params.len(), params.len())?;
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    /// Order-sensitive FNV-1a hash of the parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for b in p.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn layers(&self) -> impl Iterator<Item = (ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let mut offset = 0;
        self.dims.windows(2).map(move |w| {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = ArrayView2::from_shape((n_out, n_in), &self.params[offset..offset + n_in * n_out])
                .expect("layout matches dims");
            offset += n_in * n_out;
            let bias = ArrayView1::from(&self.params[offset..offset + n_out]);
            offset += n_out;
            (weights, bias)
        })
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Cache)> {
        ensure_len("forward input", self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let cache = self.forward_batch(x)?;
        Ok((cache.output().row(0).to_vec(), cache))
    }

    /// Forward pass over a batch, one sample per row.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Cache> {
        ensure_len("forward input", self.input_dim(), inputs.ncols())?;
        let n_layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(inputs.to_owned());
        for (l, (w, b)) in self.layers().enumerate() {
            let mut z = activations[l].dot(&w.t());
            z += &b;
            if l + 1 < n_layers {
                z.mapv_inplace(|x| x.max(0.0));
            } else {
                apply_output(self.output, &mut z);
            }
            activations.push(z);
        }
        Ok(Cache {
            generation: self.generation,
            activations,
        })
    }

    /// Network outputs for a batch, without keeping the intermediate trace.
    pub fn predict_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut cache = self.forward_batch(inputs)?;
        Ok(cache.activations.pop().unwrap())
    }

    /// Single-row convenience wrapper around [`Mlp::backward_batch`].
    pub fn backward(&self, cache: &Cache, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if cache.rows() != 1 {
            return Err(Error::Shape {
                context: "backward cache rows",
                expected: 1,
                got: cache.rows(),
            });
        }
        ensure_len("backward output grad", self.output_dim(), output_grad.len())?;
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
        let grads = self.backward_batch(cache, g)?;
        Ok((grads.params, grads.input.row(0).to_vec()))
    }

    /// Backpropagates `output_grad` (derivative of some scalar loss with
    /// respect to the post-activation outputs) through the network.
    pub fn backward_batch(&self, cache: &Cache, output_grad: ArrayView2<'_, f64>) -> Result<Gradients> {
        self.check_cache(cache)?;
        ensure_len("backward output grad rows", cache.rows(), output_grad.nrows())?;
        ensure_len("backward output grad cols", self.output_dim(), output_grad.ncols())?;

        let out = cache.output();
        let delta = match self.output {
            OutputActivation::Identity => output_grad.to_owned(),
            OutputActivation::Sigmoid => {
                let mut d = output_grad.to_owned();
                d.zip_mut_with(out, |g, &a| *g *= a * (1.0 - a));
                d
            }
            OutputActivation::Softmax => {
                let mut d = output_grad.to_owned();
                for (mut row, a) in d.rows_mut().into_iter().zip(out.rows()) {
                    let dot: f64 = row.iter().zip(a.iter()).map(|(g, p)| g * p).sum();
                    row.zip_mut_with(&a, |g, &p| *g = p * (*g - dot));
                }
                d
            }
        };

        self.backprop(cache, delta, true)
    }

    /// Backpropagates a gradient with respect to the output layer's
    /// pre-activations. With `want_input` unset the returned input gradient is
    /// empty, which skips the most expensive product for wide inputs.
    pub fn backward_from_logits(
        &self,
        cache: &Cache,
        logit_grad: ArrayView2<'_, f64>,
        want_input: bool,
    ) -> Result<Gradients> {
        self.check_cache(cache)?;
        ensure_len("backward logit grad rows", cache.rows(), logit_grad.nrows())?;
        ensure_len("backward logit grad cols", self.output_dim(), logit_grad.ncols())?;
        self.backprop(cache, logit_grad.to_owned(), want_input)
    }

    fn check_cache(&self, cache: &Cache) -> Result<()> {
        if cache.generation != self.generation
            || cache.activations.len() != self.dims.len()
            || cache.activations[0].ncols() != self.input_dim()
        {
            return Err(Error::StaleCache);
        }
        Ok(())
    }

    fn backprop(&self, cache: &Cache, mut delta: Array2<f64>, want_input: bool) -> Result<Gradients> {
        let mut grad = vec![0.0; self.params.len()];
        let layers: Vec<_> = self.layers().collect();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for w in self.dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }

        for l in (0..layers.len()).rev() {
            let (w, _) = layers[l];
            let (n_out, n_in) = w.dim();
            let a_prev = &cache.activations[l];
            let off = offsets[l];
            {
                let (w_grad, b_grad) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                let mut wg = ArrayViewMut2::from_shape((n_out, n_in), w_grad).expect("layout");
                general_mat_mul(1.0, &delta.t(), a_prev, 0.0, &mut wg);
                for (bg, col) in b_grad.iter_mut().zip(delta.axis_iter(Axis(1))) {
                    *bg = col.sum();
                }
            }
            if l == 0 && !want_input {
                return Ok(Gradients {
                    params: grad,
                    input: Array2::zeros((0, 0)),
                });
            }
            let mut prev = delta.dot(&w);
            if l > 0 {
                prev.zip_mut_with(a_prev, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = prev;
        }

        Ok(Gradients {
            params: grad,
            input: delta,
        })
    }
}

fn apply_output(kind: OutputActivation, z: &mut Array2<f64>) {
    match kind {
        OutputActivation::Identity => {}
        OutputActivation::Sigmoid => z.mapv_inplace(sigmoid),
        OutputActivation::Softmax => {
            for mut row in z.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - max).exp());
                let sum = row.sum();
                row /= sum;
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut x = x.to_vec();
        (0..x.len())
            .map(|k| {
                let orig = x[k];
                x[k] = orig + h;
                let up = f(&x);
                x[k] = orig - h;
                let down = f(&x);
                x[k] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let diff = (a - b).abs();
        if diff <= 1e-7 {
            return 0.0;
        }
        diff / a.abs().max(b.abs())
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(param_count(&[25, 50, 1]), 1351);
        assert_eq!(param_count(&[65, 130, 130, 1]), 25741);
        let net = Mlp::zeros(&[25, 50, 1], OutputActivation::Sigmoid).unwrap();
        assert_eq!(net.param_count(), 1351);
    }

    #[test]
    fn zero_sigmoid_net_outputs_half() {
        let net = Mlp::zeros(&[25, 50, 1], OutputActivation::Sigmoid).unwrap();
        let (out, _) = net.forward(&[3.0; 25]).unwrap();
        assert_eq!(out, vec![0.5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3], OutputActivation::Identity).unwrap();
        let p = net.params_mut();
        p[0] = 1.0;
        p[4] = 1.0;
        p[8] = 1.0;
        let (out, _) = net.forward(&[0.5, -2.0, 7.0]).unwrap();
        assert_eq!(out, vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let net = Mlp::zeros(&[4, 2], OutputActivation::Identity).unwrap();
        assert!(matches!(net.forward(&[1.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 6, 3], OutputActivation::Softmax, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, -0.3, 1.0]).unwrap();
        let (pg, ig) = net.backward(&cache, &[0.0; 3]).unwrap();
        assert!(pg.iter().all(|&g| g == 0.0));
        assert!(ig.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[2, 3, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        let (_, cache) = net.forward(&[1.0, 2.0]).unwrap();
        net.params_mut()[0] += 0.1;
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::StaleCache)));

        let other = Mlp::new(&[2, 3, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        assert!(matches!(other.backward(&cache, &[1.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[5, 8, 4], OutputActivation::Softmax, &mut rng).unwrap();
        let x = Array2::from_shape_fn((10, 5), |(i, j)| (i as f64 - 4.0) * (j as f64 + 1.0));
        let out = net.predict_batch(x.view()).unwrap();
        for row in out.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for output in [OutputActivation::Softmax, OutputActivation::Sigmoid, OutputActivation::Identity] {
            let out_dim = if output == OutputActivation::Sigmoid { 1 } else { 3 };
            let dims = [5, 7, out_dim];
            let net = Mlp::new(&dims, output, &mut rng).unwrap();
            let input: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let weights: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |net: &Mlp, x: &[f64]| -> f64 {
                let (o, _) = net.forward(x).unwrap();
                o.iter().zip(&weights).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = net.forward(&input).unwrap();
            let (pg, ig) = net.backward(&cache, &weights).unwrap();

            let fd_params = central_diff(
                |p| {
                    let mut n = net.clone();
                    n.set_params(p).unwrap();
                    loss(&n, &input)
                },
                net.params(),
                1e-5,
            );
            for (a, f) in pg.iter().zip(&fd_params) {
                assert!(rel_err(*a, *f) < 1e-4, "param grad {a} vs fd {f}");
            }
            let fd_input = central_diff(|x| loss(&net, x), &input, 1e-5);
            for (a, f) in ig.iter().zip(&fd_input) {
                assert!(rel_err(*a, *f) < 1e-4, "input grad {a} vs fd {f}");
            }
        }
    }

    #[test]
    fn batch_gradient_is_sum_of_row_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(&[3, 4, 2], OutputActivation::Softmax, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let g = Array2::from_shape_fn((4, 2), |(i, j)| ((i + 2 * j) as f64).cos());
        let cache = net.forward_batch(x.view()).unwrap();
        let batch = net.backward_batch(&cache, g.view()).unwrap();
        let mut summed = vec![0.0; net.param_count()];
        for i in 0..4 {
            let (_, c) = net.forward(x.row(i).as_slice().unwrap()).unwrap();
            let (pg, ig) = net.backward(&c, g.row(i).as_slice().unwrap()).unwrap();
            for (s, p) in summed.iter_mut().zip(&pg) {
                *s += p;
            }
            for (a, b) in ig.iter().zip(batch.input.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in summed.iter().zip(&batch.params) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_logit_gradient_matches_output_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = Mlp::new(&[3, 5, 4], OutputActivation::Softmax, &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64).cos());
        let labels = [0usize, 3, 1, 1, 2, 0];
        let cache = net.forward_batch(x.view()).unwrap();
        let q = cache.output().clone();
        let mut out_grad = Array2::zeros((6, 4));
        let mut logit_grad = q.clone();
        for (i, &u) in labels.iter().enumerate() {
            out_grad[[i, u]] = -1.0 / q[[i, u]];
            logit_grad[[i, u]] -= 1.0;
        }
        let a = net.backward_batch(&cache, out_grad.view()).unwrap();
        let b = net.backward_from_logits(&cache, logit_grad.view(), true).unwrap();
        let c = net.backward_from_logits(&cache, logit_grad.view(), false).unwrap();
        for ((x, y), z) in a.params.iter().zip(&b.params).zip(&c.params) {
            assert!((x - y).abs() < 1e-12);
            assert_eq!(y, z);
        }
        assert!((&a.input - &b.input).iter().all(|d| d.abs() < 1e-12));
        assert_eq!(c.input.len(), 0);
    }
}

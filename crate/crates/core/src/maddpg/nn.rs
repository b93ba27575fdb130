use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// Parameters are stored flat, layer by layer: the weight matrix (out x in,
/// row-major) followed by the bias vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    batch: usize,
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Mlp { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(sizes)).then(|| Mlp { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> (Vec<f64>, MlpCache) {
        assert_eq!(input.len(), batch * self.input_dim(), "input shape");
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut x = input.to_vec();
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut y = vec![0.0; batch * n_out];
            for row in y.chunks_exact_mut(n_out) {
                row.copy_from_slice(b);
            }
            // y (batch x out) += x (batch x in) * w^T
            unsafe {
                matrixmultiply::dgemm(
                    batch, n_in, n_out, 1.0,
                    x.as_ptr(), n_in as isize, 1,
                    w.as_ptr(), 1, n_in as isize,
                    1.0,
                    y.as_mut_ptr(), n_out as isize, 1,
                );
            }
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut x, y));
        }
        (x, MlpCache { batch, inputs })
    }

    /// Back-propagates `d_out` (batch x output_dim). Returns (parameter gradient, input gradient).
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let batch = cache.batch;
        let layers = self.sizes.len() - 1;
        assert_eq!(d_out.len(), batch * self.output_dim(), "gradient shape");
        let mut grad = vec![0.0; self.params.len()];
        let mut dy = d_out.to_vec();
        let mut offset = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let x = &cache.inputs[l];
            let w = &self.params[offset..offset + n_in * n_out];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for row in dy.chunks_exact(n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut dx = vec![0.0; batch * n_in];
            unsafe {
                // gw (out x in) = dy^T * x
                matrixmultiply::dgemm(
                    n_out, batch, n_in, 1.0,
                    dy.as_ptr(), 1, n_out as isize,
                    x.as_ptr(), n_in as isize, 1,
                    0.0,
                    gw.as_mut_ptr(), n_in as isize, 1,
                );
                // dx (batch x in) = dy * w
                matrixmultiply::dgemm(
                    batch, n_out, n_in, 1.0,
                    dy.as_ptr(), n_out as isize, 1,
                    w.as_ptr(), n_in as isize, 1,
                    0.0,
                    dx.as_mut_ptr(), n_in as isize, 1,
                );
            }
            if l > 0 {
                // x is the ReLU output of the previous layer
                for (d, v) in dx.iter_mut().zip(x) {
                    if *v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dy = dx;
        }
        (grad, dy)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Adam optimiser state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Row-wise softmax of a (rows x cols) matrix.
pub fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &[f64], batch: usize, weights: &[f64]) -> f64 {
        let (y, _) = net.forward(x, batch);
        y.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + 0.5 * y.iter().map(|a| a * a).sum::<f64>()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[5, 7, 6, 3], &mut rng);
        let batch = 4;
        let x: Vec<f64> = (0..batch * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wts: Vec<f64> = (0..batch * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, cache) = net.forward(&x, batch);
        let d_out: Vec<f64> = y.iter().zip(&wts).map(|(a, b)| a + b).collect();
        let (grad, dx) = net.backward(&cache, &d_out);
        let h = 1e-6;
        for i in 0..net.params().len() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let up = loss(&p, &x, batch, &wts);
            p.params_mut()[i] -= 2.0 * h;
            let down = loss(&p, &x, batch, &wts);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let up = loss(&net, &xp, batch, &wts);
            xp[i] -= 2.0 * h;
            let down = loss(&net, &xp, batch, &wts);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dx[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "input {i}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = softmax_rows(&[1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0], 3);
        assert!((s[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_picks_largest_logit() {
        assert_eq!(argmax(&[0.1, 2.0, -1.0, 0.3]), 1);
    }

    #[test]
    fn clip_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}

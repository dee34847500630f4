//! Dense layers with hand-written backward passes.
//!
//! Activations are stored row-major as flat `[f64]` batches of shape
//! `rows x dim`. Weights are `out x in`, so a layer computes `y = x W^T + b`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;

/// Strided `C = alpha * A B + beta * C` with bounds checks on every operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
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
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: C out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: A out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: B out of bounds");
    // SAFETY: all strided accesses were bounds-checked above and `c` does
    // not alias `a` or `b` (distinct borrows).
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

/// A borrowed view of one named parameter array.
#[derive(Debug, Clone)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Parameter containers expose their arrays in a fixed order, used for
/// optimizer updates, checkpoints and gradient checks.
pub trait Params {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>);
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);
}

/// Fully-connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = math::sqrt(6.0 / (in_dim + out_dim) as f64);
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Linear { in_dim, out_dim, weight, bias: vec![0.0; out_dim] }
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.in_dim, self.out_dim)
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            rows,
            self.in_dim,
            self.out_dim,
            1.0,
            x,
            (self.in_dim, 1),
            &self.weight,
            (1, self.in_dim),
            1.0,
            &mut y,
            (self.out_dim, 1),
        );
        y
    }

    /// Accumulates parameter gradients into `grad` and, if requested, adds
    /// the input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear, dx: Option<&mut [f64]>) {
        debug_assert_eq!(dy.len(), rows * self.out_dim);
        gemm(
            self.out_dim,
            rows,
            self.in_dim,
            1.0,
            dy,
            (1, self.out_dim),
            x,
            (self.in_dim, 1),
            1.0,
            &mut grad.weight,
            (self.in_dim, 1),
        );
        for r in 0..rows {
            for (gb, d) in grad.bias.iter_mut().zip(&dy[r * self.out_dim..(r + 1) * self.out_dim]) {
                *gb += d;
            }
        }
        if let Some(dx) = dx {
            gemm(
                rows,
                self.out_dim,
                self.in_dim,
                1.0,
                dy,
                (self.out_dim, 1),
                &self.weight,
                (self.in_dim, 1),
                1.0,
                dx,
                (self.in_dim, 1),
            );
        }
    }
}

impl Params for Linear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        out.push(NamedTensor {
            name: format!("{prefix}.weight"),
            shape: vec![self.out_dim, self.in_dim],
            data: &self.weight,
        });
        out.push(NamedTensor { name: format!("{prefix}.bias"), shape: vec![self.out_dim], data: &self.bias });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Stack of [`Linear`] layers with ReLU between them and, optionally, after
/// the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_output: bool,
}

/// Post-activation outputs of every layer from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    outs: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.outs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.outs.pop().unwrap_or_default()
    }
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(widths: &[usize], relu_output: bool, rng: &mut R) -> Self {
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Mlp { layers, relu_output }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp { layers: self.layers.iter().map(Linear::zeros_like).collect(), relu_output: self.relu_output }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.in_dim).collect();
        w.extend(self.layers.last().map(|l| l.out_dim));
        w
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    fn has_relu(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.relu_output
    }

    pub fn forward_cached(&self, x: &[f64], rows: usize) -> MlpCache {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &outs[i - 1] };
            let mut y = layer.forward(input, rows);
            if self.has_relu(i) {
                for v in &mut y {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            outs.push(y);
        }
        MlpCache { outs }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        self.forward_cached(x, rows).into_output()
    }

    /// Backpropagates `dy` through the cached pass. Parameter gradients are
    /// accumulated into `grad`; the input gradient is added into `dx`.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &MlpCache,
        mut dy: Vec<f64>,
        rows: usize,
        grad: &mut Mlp,
        mut dx: Option<&mut [f64]>,
    ) {
        for i in (0..self.layers.len()).rev() {
            let out = &cache.outs[i];
            if self.has_relu(i) {
                for (d, &o) in dy.iter_mut().zip(out) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let layer = &self.layers[i];
            if i == 0 {
                layer.backward(x, &dy, rows, &mut grad.layers[0], dx.as_deref_mut());
            } else {
                let mut dprev = vec![0.0; rows * layer.in_dim];
                layer.backward(&cache.outs[i - 1], &dy, rows, &mut grad.layers[i], Some(&mut dprev));
                dy = dprev;
            }
        }
    }
}

impl Params for Mlp {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("{prefix}.l{i}"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.layers {
            l.collect_mut(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_forward(l: &Linear, x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = vec![0.0; rows * l.out_dim];
        for r in 0..rows {
            for o in 0..l.out_dim {
                let mut s = l.bias[o];
                for i in 0..l.in_dim {
                    s += l.weight[o * l.in_dim + i] * x[r * l.in_dim + i];
                }
                y[r * l.out_dim + o] = s;
            }
        }
        y
    }

    #[test]
    fn linear_forward_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = Linear::init(5, 3, &mut rng);
        l.bias = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = l.forward(&x, 4);
        let b = naive_forward(&l, &x, 4);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::init(&[3, 6, 2], false, &mut rng);
        let x: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
        let rows = 2;
        // loss = sum(y^2) / 2
        let loss = |m: &Mlp, x: &[f64]| m.forward(x, rows).iter().map(|v| v * v).sum::<f64>() * 0.5;
        let cache = mlp.forward_cached(&x, rows);
        let dy = cache.output().to_vec();
        let mut grad = mlp.zeros_like();
        let mut dx = vec![0.0; x.len()];
        mlp.backward(&x, &cache, dy, rows, &mut grad, Some(&mut dx));
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "dx[{i}]: {fd} vs {}", dx[i]);
        }
        for j in 0..mlp.layers[0].weight.len() {
            let mut p = mlp.clone();
            p.layers[0].weight[j] += h;
            let mut m = mlp.clone();
            m.layers[0].weight[j] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - grad.layers[0].weight[j]).abs() < 1e-7);
        }
    }
}

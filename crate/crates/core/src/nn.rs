//! Dense building blocks with hand-written backward passes, a flat parameter
//! store and the Adam optimizer.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A named rectangular region inside a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.range()]).unwrap()
    }

    pub fn mat_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.range()]).unwrap()
    }

    pub fn vec<'a>(&self, data: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.range()])
    }

    pub fn vec_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut data[self.range()])
    }
}

/// How a slot is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in ±sqrt(6 / (rows + cols)).
    Xavier,
    /// Uniform in ±scale.
    Uniform(f64),
}

/// Allocates slots in order and remembers how to initialize them.
#[derive(Clone, Debug, Default)]
pub struct LayoutBuilder {
    total: usize,
    inits: Vec<(Slot, Init)>,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, rows: usize, cols: usize, init: Init) -> Slot {
        let slot = Slot { offset: self.total, rows, cols };
        self.total += slot.len();
        self.inits.push((slot, init));
        slot
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn initialize<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut data = vec![0.0; self.total];
        for &(slot, init) in &self.inits {
            let dst = &mut data[slot.range()];
            match init {
                Init::Zeros => {}
                Init::Ones => dst.fill(1.0),
                Init::Normal(std) => {
                    let n = Normal::new(0.0, std).unwrap();
                    dst.iter_mut().for_each(|v| *v = n.sample(rng));
                }
                Init::Xavier => {
                    let a = (6.0 / (slot.rows + slot.cols) as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
                }
                Init::Uniform(a) => dst.iter_mut().for_each(|v| *v = rng.gen_range(-a..a)),
            }
        }
        data
    }
}

/// `c += a · b`
pub fn matmul_acc(a: &ArrayView2<f64>, b: &ArrayView2<f64>, c: &mut ArrayViewMut2<f64>) {
    general_mat_mul(1.0, a, b, 1.0, c);
}

pub fn linear(x: &ArrayView2<f64>, w: Slot, b: Slot, p: &[f64]) -> Array2<f64> {
    let mut y = Array2::zeros((x.nrows(), w.cols));
    y += &b.vec(p);
    general_mat_mul(1.0, x, &w.mat(p), 1.0, &mut y);
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn linear_backward(
    x: &ArrayView2<f64>,
    dy: &ArrayView2<f64>,
    w: Slot,
    b: Slot,
    p: &[f64],
    g: &mut [f64],
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut w.mat_mut(g));
    b.vec_mut(g).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&w.mat(p).t())
}

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub fn layer_norm(x: &ArrayView2<f64>, gain: Slot, bias: Slot, p: &[f64]) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * &gain.vec(p) + bias.vec(p);
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward(dy: &ArrayView2<f64>, cache: &LnCache, gain: Slot, bias: Slot, p: &[f64], g: &mut [f64]) -> Array2<f64> {
    gain.vec_mut(g).scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
    bias.vec_mut(g).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let dxhat = dy * &gain.vec(p);
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dh.sum() / d;
        let m2 = dh.dot(&xh) / d;
        let r = cache.rstd[i];
        dx.row_mut(i).assign(&((&dh - m1 - &(&xh * m2)) * r));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
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

/// Numerically stable log-sum-exp and softmax of a row.
pub fn log_softmax(row: &ArrayView1<f64>) -> (f64, Array1<f64>) {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = row.mapv(|v| (v - m).exp());
    let z = e.sum();
    (m + z.ln(), e / z)
}

/// Weights of one multi-head attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttnSlots {
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
}

impl AttnSlots {
    pub fn new(b: &mut LayoutBuilder, d: usize) -> Self {
        AttnSlots {
            wq: b.add(d, d, Init::Xavier),
            bq: b.add(1, d, Init::Zeros),
            wk: b.add(d, d, Init::Xavier),
            bk: b.add(1, d, Init::Zeros),
            wv: b.add(d, d, Init::Xavier),
            bv: b.add(1, d, Init::Zeros),
            wo: b.add(d, d, Init::Xavier),
            bo: b.add(1, d, Init::Zeros),
        }
    }
}

pub struct AttnCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub probs: Vec<Array2<f64>>,
    pub concat: Array2<f64>,
}

/// Causal multi-head attention: query row i sees key rows 0..=i.
pub fn causal_attention(
    xq: &ArrayView2<f64>,
    xkv: &ArrayView2<f64>,
    a: &AttnSlots,
    heads: usize,
    p: &[f64],
) -> (Array2<f64>, AttnCache) {
    let q = linear(xq, a.wq, a.bq, p);
    let k = linear(xkv, a.wk, a.bk, p);
    let v = linear(xkv, a.wv, a.bv, p);
    let (n, d) = q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t());
        for i in 0..n {
            let mut row = sc.row_mut(i);
            let m = row.slice(s![..=i]).fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let mut z = 0.0;
            for j in 0..n {
                if j <= i {
                    let e = ((row[j] - m) * scale).exp();
                    row[j] = e;
                    z += e;
                } else {
                    row[j] = 0.0;
                }
            }
            row /= z;
        }
        general_mat_mul(1.0, &sc, &v.slice(cols), 0.0, &mut concat.slice_mut(cols));
        probs.push(sc);
    }
    let out = linear(&concat.view(), a.wo, a.bo, p);
    (out, AttnCache { q, k, v, probs, concat })
}

/// Returns gradients with respect to the query input and the key/value input.
pub fn causal_attention_backward(
    dout: &ArrayView2<f64>,
    xq: &ArrayView2<f64>,
    xkv: &ArrayView2<f64>,
    cache: &AttnCache,
    a: &AttnSlots,
    heads: usize,
    p: &[f64],
    g: &mut [f64],
) -> (Array2<f64>, Array2<f64>) {
    let dconcat = linear_backward(&cache.concat.view(), dout, a.wo, a.bo, p, g);
    let (n, d) = cache.q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let pr = &cache.probs[h];
        let dhead = dconcat.slice(cols);
        general_mat_mul(1.0, &pr.t(), &dhead, 0.0, &mut dv.slice_mut(cols));
        let mut ds = dhead.dot(&cache.v.slice(cols).t());
        for i in 0..n {
            let mut row = ds.row_mut(i);
            let prow = pr.row(i);
            let dot: f64 = row.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
            for j in 0..n {
                row[j] = prow[j] * (row[j] - dot) * scale;
            }
        }
        general_mat_mul(1.0, &ds, &cache.k.slice(cols), 0.0, &mut dq.slice_mut(cols));
        general_mat_mul(1.0, &ds.t(), &cache.q.slice(cols), 0.0, &mut dk.slice_mut(cols));
    }
    let dxq = linear_backward(xq, &dq.view(), a.wq, a.bq, p, g);
    let mut dxkv = linear_backward(xkv, &dk.view(), a.wk, a.bk, p, g);
    dxkv += &linear_backward(xkv, &dv.view(), a.wv, a.bv, p, g);
    (dxq, dxkv)
}

/// Adam with bias correction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { beta1, beta2, eps, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Scale gradients so their L2 norm is at most `max_norm`. Returns the original norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of `f` against an analytic gradient.
    fn check(params: &mut Vec<f64>, analytic: &[f64], f: &dyn Fn(&[f64]) -> f64) {
        let h = 1e-5;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let up = f(params);
            params[i] = orig - h;
            let dn = f(params);
            params[i] = orig;
            let num = (up - dn) / (2.0 * h);
            let err = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-3);
            assert!(err < 1e-5, "param {i}: numeric {num} vs analytic {}", analytic[i]);
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = LayoutBuilder::new();
        let gs = b.add(1, 5, Init::Normal(1.0));
        let bs = b.add(1, 5, Init::Normal(1.0));
        let mut p = b.initialize(&mut rng);
        let x = rand_mat(3, 5, &mut rng);
        let w = rand_mat(3, 5, &mut rng);
        let loss = |p: &[f64]| (&layer_norm(&x.view(), gs, bs, p).0 * &w).sum();
        let (_, cache) = layer_norm(&x.view(), gs, bs, &p);
        let mut g = vec![0.0; p.len()];
        let dx = layer_norm_backward(&w.view(), &cache, gs, bs, &p, &mut g);
        check(&mut p, &g, &loss);
        // input gradient by finite differences
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let num = ((&layer_norm(&xp.view(), gs, bs, &p).0 * &w).sum()
                    - (&layer_norm(&xm.view(), gs, bs, &p).0 * &w).sum())
                    / (2.0 * h);
                assert!((num - dx[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = LayoutBuilder::new();
        let a = AttnSlots::new(&mut b, 4);
        let mut p = b.initialize(&mut rng);
        // non-zero biases
        for v in p.iter_mut() {
            *v += 0.1 * rng.gen_range(-1.0..1.0);
        }
        let xq = rand_mat(4, 4, &mut rng);
        let xkv = rand_mat(4, 4, &mut rng);
        let w = rand_mat(4, 4, &mut rng);
        let loss = |p: &[f64]| (&causal_attention(&xq.view(), &xkv.view(), &a, 2, p).0 * &w).sum();
        let (_, cache) = causal_attention(&xq.view(), &xkv.view(), &a, 2, &p);
        let mut g = vec![0.0; p.len()];
        let (dxq, dxkv) = causal_attention_backward(&w.view(), &xq.view(), &xkv.view(), &cache, &a, 2, &p, &mut g);
        check(&mut p, &g, &loss);
        let h = 1e-6;
        for (which, dx) in [(0, &dxq), (1, &dxkv)] {
            for i in 0..4 {
                for j in 0..4 {
                    let f = |delta: f64| {
                        let mut q = xq.clone();
                        let mut kv = xkv.clone();
                        if which == 0 {
                            q[[i, j]] += delta;
                        } else {
                            kv[[i, j]] += delta;
                        }
                        (&causal_attention(&q.view(), &kv.view(), &a, 2, &p).0 * &w).sum()
                    };
                    let num = (f(h) - f(-h)) / (2.0 * h);
                    assert!((num - dx[[i, j]]).abs() < 1e-6, "{which} {i} {j}: {num} vs {}", dx[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn attention_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = LayoutBuilder::new();
        let a = AttnSlots::new(&mut b, 4);
        let p = b.initialize(&mut rng);
        let x = rand_mat(5, 4, &mut rng);
        let (y, _) = causal_attention(&x.view(), &x.view(), &a, 2, &p);
        let mut x2 = x.clone();
        x2.row_mut(4).fill(9.0);
        let (y2, _) = causal_attention(&x2.view(), &x2.view(), &a, 2, &p);
        assert_eq!(y.slice(s![..4, ..]), y2.slice(s![..4, ..]));
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 2.0] {
            let num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.9, 0.98, 1e-8);
        let mut p = vec![1.0, -1.0];
        adam.update(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12);
    }
}

//! Dense kernels and their backward passes. All matrices are row-major.

use super::params::{Attention, LayerNorm, Linear};
use super::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a (m x k) * b (k x n)`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a (m x k) * b^T` where `b` is `n x k`.
pub fn matmul_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `acc (k x n) += a^T b` where `a` is `m x k` and `b` is `m x n`.
pub fn matmul_at_acc<T: Scalar>(acc: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(acc.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let accrow = &mut acc[p * n..(p + 1) * n];
            for (o, &bv) in accrow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

pub fn linear_forward<T: Scalar>(x: &Matrix<T>, l: &Linear<T>) -> Matrix<T> {
    debug_assert_eq!(x.cols, l.d_in);
    let mut y = matmul(&x.data, &l.w, x.rows, l.d_in, l.d_out);
    for row in y.chunks_mut(l.d_out) {
        for (v, &b) in row.iter_mut().zip(&l.b) {
            *v += b;
        }
    }
    Matrix::from_vec(x.rows, l.d_out, y)
}

/// Accumulates parameter gradients into `g` and returns the gradient with respect to `x`.
pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    dy: &Matrix<T>,
    l: &Linear<T>,
    g: &mut Linear<T>,
) -> Matrix<T> {
    debug_assert_eq!(dy.cols, l.d_out);
    matmul_at_acc(&mut g.w, &x.data, &dy.data, x.rows, l.d_in, l.d_out);
    for row in dy.data.chunks(l.d_out) {
        for (gb, &d) in g.b.iter_mut().zip(row) {
            *gb += d;
        }
    }
    Matrix::from_vec(
        x.rows,
        l.d_in,
        matmul_bt(&dy.data, &l.w, dy.rows, l.d_out, l.d_in),
    )
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

pub fn layernorm_forward<T: Scalar>(
    x: &Matrix<T>,
    ln: &LayerNorm<T>,
) -> (Matrix<T>, LayerNormCache<T>) {
    let d = x.cols;
    let n = T::of(d as f64);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut y = Matrix::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * r;
        }
        let yr = &mut y.data[i * d..(i + 1) * d];
        for j in 0..d {
            yr[j] = xh[j] * ln.gamma[j] + ln.beta[j];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub fn layernorm_backward<T: Scalar>(
    dy: &Matrix<T>,
    cache: &LayerNormCache<T>,
    ln: &LayerNorm<T>,
    g: &mut LayerNorm<T>,
) -> Matrix<T> {
    let d = dy.cols;
    let n = T::of(d as f64);
    let mut dx = Matrix::zeros(dy.rows, d);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            g.gamma[j] += dyr[j] * xh[j];
            g.beta[j] += dyr[j];
            dxhat[j] = dyr[j] * ln.gamma[j];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        let r = cache.rstd[i];
        let out = dx.row_mut(i);
        for j in 0..d {
            out[j] = r * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.044_715;

fn gelu_k<T: Scalar>() -> T {
    T::of((2.0 / std::f64::consts::PI).sqrt())
}

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = gelu_k::<T>() * (x + T::of(GELU_C) * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let k = gelu_k::<T>();
    let c = T::of(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}

/// In-place numerically stable softmax over each row of length `n`.
pub fn softmax_rows<T: Scalar>(data: &mut [T], n: usize) {
    for row in data.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    xq: Matrix<T>,
    xkv: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    /// One `lq x lk` probability matrix per head.
    probs: Vec<Vec<T>>,
    concat: Matrix<T>,
}

/// Multi-head scaled dot-product attention of queries from `xq` over keys/values from `xkv`.
pub fn attention_forward<T: Scalar>(
    xq: &Matrix<T>,
    xkv: &Matrix<T>,
    a: &Attention<T>,
    n_heads: usize,
    causal: bool,
) -> (Matrix<T>, AttentionCache<T>) {
    let d = xq.cols;
    let dh = d / n_heads;
    let (lq, lk) = (xq.rows, xkv.rows);
    let q = linear_forward(xq, &a.q);
    let k = linear_forward(xkv, &a.k);
    let v = linear_forward(xkv, &a.v);
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut concat = Matrix::zeros(lq, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let off = h * dh;
        let mut p = vec![T::zero(); lq * lk];
        for i in 0..lq {
            let qi = &q.row(i)[off..off + dh];
            for j in 0..lk {
                p[i * lk + j] = if causal && j > i {
                    T::neg_infinity()
                } else {
                    let kj = &k.row(j)[off..off + dh];
                    qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * scale
                };
            }
        }
        softmax_rows(&mut p, lk);
        for i in 0..lq {
            let out = &mut concat.data[i * d + off..i * d + off + dh];
            for j in 0..lk {
                let pij = p[i * lk + j];
                if pij == T::zero() {
                    continue;
                }
                let vj = &v.row(j)[off..off + dh];
                for (o, &x) in out.iter_mut().zip(vj) {
                    *o += pij * x;
                }
            }
        }
        probs.push(p);
    }
    let out = linear_forward(&concat, &a.o);
    let cache = AttentionCache {
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        probs,
        concat,
    };
    (out, cache)
}

/// Returns `(d xq, d xkv)`; for self-attention the caller adds the two.
pub fn attention_backward<T: Scalar>(
    dout: &Matrix<T>,
    c: &AttentionCache<T>,
    a: &Attention<T>,
    g: &mut Attention<T>,
    n_heads: usize,
) -> (Matrix<T>, Matrix<T>) {
    let d = c.xq.cols;
    let dh = d / n_heads;
    let (lq, lk) = (c.xq.rows, c.xkv.rows);
    let scale = T::one() / T::of(dh as f64).sqrt();
    let dconcat = linear_backward(&c.concat, dout, &a.o, &mut g.o);
    let mut dq = Matrix::zeros(lq, d);
    let mut dk = Matrix::zeros(lk, d);
    let mut dv = Matrix::zeros(lk, d);
    let mut dp = vec![T::zero(); lk];
    for h in 0..n_heads {
        let off = h * dh;
        let p = &c.probs[h];
        for i in 0..lq {
            let doi = &dconcat.row(i)[off..off + dh];
            let prow = &p[i * lk..(i + 1) * lk];
            for j in 0..lk {
                let vj = &c.v.row(j)[off..off + dh];
                dp[j] = doi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                let dvj = &mut dv.data[j * d + off..j * d + off + dh];
                for (o, &x) in dvj.iter_mut().zip(doi) {
                    *o += prow[j] * x;
                }
            }
            let dot: T = prow.iter().zip(&dp).map(|(&x, &y)| x * y).sum();
            for j in 0..lk {
                let ds = prow[j] * (dp[j] - dot) * scale;
                if ds == T::zero() {
                    continue;
                }
                let kj = &c.k.data[j * d + off..j * d + off + dh];
                let qi = &c.q.data[i * d + off..i * d + off + dh];
                let dqi = &mut dq.data[i * d + off..i * d + off + dh];
                for (o, &x) in dqi.iter_mut().zip(kj) {
                    *o += ds * x;
                }
                let dkj = &mut dk.data[j * d + off..j * d + off + dh];
                for (o, &x) in dkj.iter_mut().zip(qi) {
                    *o += ds * x;
                }
            }
        }
    }
    let dxq = linear_backward(&c.xq, &dq, &a.q, &mut g.q);
    let mut dxkv = linear_backward(&c.xkv, &dk, &a.k, &mut g.k);
    dxkv.add_assign(&linear_backward(&c.xkv, &dv, &a.v, &mut g.v));
    (dxq, dxkv)
}

//! Minimal convolutional building blocks with explicit backward passes.
//!
//! Tensors are single images in channel-major `C x H x W` layout; batches are
//! processed one sample at a time so every reduction has a fixed order.
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    /// `C = alpha * A * B + beta * C` with explicit strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Real for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `C (m x n) [+]= op(A) (m x k) * op(B) (k x n)`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "output size");
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: slice lengths are checked above and strides describe dense
    // row-major storage of exactly those sizes.
    unsafe {
        T::raw_gemm(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!((self.c, self.h, self.w), (other.c, other.h, other.w));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Copies out the window `(top, left, h, w)` of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Tensor<T> {
        assert!(top + h <= self.h && left + w <= self.w, "tensor crop out of bounds");
        let mut data = Vec::with_capacity(self.c * h * w);
        for ch in 0..self.c {
            for y in top..top + h {
                let s = ch * self.plane() + y * self.w + left;
                data.extend_from_slice(&self.data[s..s + w]);
            }
        }
        Tensor::from_vec(self.c, h, w, data)
    }

    /// Adds `patch` into the window at `(top, left)`: the adjoint of [`Tensor::crop`].
    pub fn add_window(&mut self, top: usize, left: usize, patch: &Tensor<T>) {
        assert_eq!(self.c, patch.c);
        assert!(top + patch.h <= self.h && left + patch.w <= self.w, "tensor window out of bounds");
        for ch in 0..self.c {
            for y in 0..patch.h {
                let d = ch * self.plane() + (top + y) * self.w + left;
                let s = ch * patch.plane() + y * patch.w;
                for (a, &b) in self.data[d..d + patch.w].iter_mut().zip(&patch.data[s..s + patch.w]) {
                    *a = *a + b;
                }
            }
        }
    }
}

/// Weight and bias arrays of one convolution; doubles as its gradient and
/// optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `out_c x (in_c * k * k)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros_like(other: &ConvParams<T>) -> Self {
        Self {
            weight: vec![T::zero(); other.weight.len()],
            bias: vec![T::zero(); other.bias.len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weight.iter().chain(&self.bias)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn fan_in(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.out_c * self.fan_in() + self.out_c
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub shape: ConvShape,
    pub params: ConvParams<T>,
}

/// Saved forward state needed by [`Conv2d::backward`].
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(shape: ConvShape) -> Self {
        Self {
            shape,
            params: ConvParams {
                weight: vec![T::zero(); shape.out_c * shape.fan_in()],
                bias: vec![T::zero(); shape.out_c],
            },
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(fan_in)`, zero bias.
    pub fn gaussian(shape: ConvShape, gain: f64, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(shape);
        let std = gain / (shape.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite positive std");
        for w in conv.params.weight.iter_mut() {
            *w = T::lit(normal.sample(rng));
        }
        conv
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        self.shape.out_dims(h, w)
    }

    fn im2col(&self, x: &Tensor<T>, out_h: usize, out_w: usize) -> Vec<T> {
        let ConvShape {
            kernel: k,
            stride: s,
            pad: p,
            ..
        } = self.shape;
        let n = out_h * out_w;
        let mut cols = vec![T::zero(); x.c * k * k * n];
        for ci in 0..x.c {
            let plane = &x.data[ci * x.plane()..(ci + 1) * x.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * n;
                    for oy in 0..out_h {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = iy as usize * x.w;
                        let dst = row + oy * out_w;
                        for ox in 0..out_w {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < x.w as isize {
                                cols[dst + ox] = plane[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], cache: &ConvCache<T>) -> Tensor<T> {
        let ConvShape {
            in_c,
            kernel: k,
            stride: s,
            pad: p,
            ..
        } = self.shape;
        let (h, w) = (cache.in_h, cache.in_w);
        let n = cache.out_h * cache.out_w;
        let mut x = Tensor::zeros(in_c, h, w);
        for ci in 0..in_c {
            let base = ci * h * w;
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * n;
                    for oy in 0..cache.out_h {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = base + iy as usize * w;
                        let src = row + oy * cache.out_w;
                        for ox in 0..cache.out_w {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                let d = &mut x.data[dst + ix as usize];
                                *d = *d + cols[src + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(x.c, self.shape.in_c, "conv input channels");
        let (out_h, out_w) = self.out_dims(x.h, x.w);
        let cols = self.im2col(x, out_h, out_w);
        let n = out_h * out_w;
        let mut out = Tensor::zeros(self.shape.out_c, out_h, out_w);
        matmul(
            self.shape.out_c,
            self.shape.fan_in(),
            n,
            &self.params.weight,
            false,
            &cols,
            false,
            &mut out.data,
            false,
        );
        for (row, &b) in out.data.chunks_exact_mut(n).zip(&self.params.bias) {
            for v in row {
                *v = *v + b;
            }
        }
        (
            out,
            ConvCache {
                cols,
                in_h: x.h,
                in_w: x.w,
                out_h,
                out_w,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` (when given) and returns
    /// the gradient with respect to the input (when `want_input`).
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        grads: Option<&mut ConvParams<T>>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let n = cache.out_h * cache.out_w;
        let kk = self.shape.fan_in();
        let oc = self.shape.out_c;
        assert_eq!(grad_out.data.len(), oc * n, "conv grad_out size");
        if let Some(g) = grads {
            matmul(oc, n, kk, &grad_out.data, false, &cache.cols, true, &mut g.weight, true);
            for (gb, row) in g.bias.iter_mut().zip(grad_out.data.chunks_exact(n)) {
                *gb = *gb + row.iter().copied().sum::<T>();
            }
        }
        if !want_input {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * n];
        matmul(kk, oc, n, &self.params.weight, true, &grad_out.data, false, &mut dcols, false);
        Some(self.col2im(&dcols, cache))
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Real>(x: &mut Tensor<T>) {
    let a = T::lit(LEAKY_SLOPE);
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = *v * a;
        }
    }
}

/// Backward of [`leaky_relu`] given its output (sign is preserved).
pub fn leaky_relu_backward<T: Real>(out: &Tensor<T>, grad: &mut Tensor<T>) {
    let a = T::lit(LEAKY_SLOPE);
    for (g, &y) in grad.data.iter_mut().zip(&out.data) {
        if y < T::zero() {
            *g = *g * a;
        }
    }
}

/// Multiplies every channel by a shared `h x w` map.
pub fn scale_by_map<T: Real>(x: &mut Tensor<T>, map: &[T]) {
    assert_eq!(map.len(), x.plane(), "attention map size");
    for plane in x.data.chunks_exact_mut(map.len()) {
        for (v, &m) in plane.iter_mut().zip(map) {
            *v = *v * m;
        }
    }
}

/// Nearest-neighbour 2x upsampling, cropped to `h x w`.
pub fn upsample2<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    assert!(h <= 2 * x.h && w <= 2 * x.w, "upsample target too large");
    let mut out = Tensor::zeros(x.c, h, w);
    for ch in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[ch * h * w + y * w + xx] = x.data[ch * x.plane() + (y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(grad: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(grad.c, h, w);
    for ch in 0..grad.c {
        for y in 0..grad.h {
            for xx in 0..grad.w {
                let d = &mut out.data[ch * h * w + (y / 2) * w + xx / 2];
                *d = *d + grad.data[ch * grad.plane() + y * grad.w + xx];
            }
        }
    }
    out
}

pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial dims");
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

pub fn split<T: Real>(x: &Tensor<T>, first_c: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first_c * x.plane();
    (
        Tensor::from_vec(first_c, x.h, x.w, x.data[..cut].to_vec()),
        Tensor::from_vec(x.c - first_c, x.h, x.w, x.data[cut..].to_vec()),
    )
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Per-parameter first and second moments for a list of convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<ConvParams<T>>,
    pub second: Vec<ConvParams<T>>,
    pub steps: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(convs: &[Conv2d<T>]) -> Self {
        let zeros: Vec<_> = convs.iter().map(|c| ConvParams::zeros_like(&c.params)).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    pub fn update(&mut self, convs: &mut [Conv2d<T>], grads: &[ConvParams<T>], cfg: &AdamConfig) {
        assert_eq!(convs.len(), grads.len());
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let one = T::one();
        let corr1 = one - b1.powi(t);
        let corr2 = one - b2.powi(t);
        let lr = T::lit(cfg.lr);
        let eps = T::lit(cfg.eps);
        for (((conv, g), m), v) in convs
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((p, &g), m), v) in conv
                .params
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / corr1;
                let vhat = *v / corr2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

pub fn zero_grads<T: Real>(convs: &[Conv2d<T>]) -> Vec<ConvParams<T>> {
    convs.iter().map(|c| ConvParams::zeros_like(&c.params)).collect()
}

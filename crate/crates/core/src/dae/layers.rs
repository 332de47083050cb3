//! Layers with hand-written forward and backward passes.
//!
//! Feature maps are `[C, H, W]` tensors. A transposed convolution stores the
//! weights of its *matching* convolution (the one mapping its output grid
//! back to its input grid), so its forward pass is exactly that
//! convolution's input gradient.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d,
    TransConv2d,
    Dense,
    Relu,
    Sigmoid,
}

/// Geometry of a strided convolution from a `src` grid to a smaller `dst`
/// grid. Out-of-range taps read zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub src_h: usize,
    pub src_w: usize,
    pub dst_h: usize,
    pub dst_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_pad(src: usize, k: usize, s: usize) -> (usize, usize) {
    let dst = src.div_ceil(s);
    let total = ((dst - 1) * s + k).saturating_sub(src);
    (dst, total / 2)
}

impl ConvGeom {
    /// Same-style padding: `dst = ceil(src / stride)`, extra pad at the end.
    pub fn same(src_h: usize, src_w: usize, kernel: usize, stride: usize) -> Result<Self> {
        if src_h == 0 || src_w == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Geometry(format!("invalid conv geometry {src_h}x{src_w} k{kernel} s{stride}")));
        }
        let (dst_h, pad_top) = same_pad(src_h, kernel, stride);
        let (dst_w, pad_left) = same_pad(src_w, kernel, stride);
        Ok(Self { src_h, src_w, dst_h, dst_w, kernel, stride, pad_top, pad_left })
    }

    /// No padding ("valid").
    pub fn valid(src_h: usize, src_w: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || kernel > src_h || kernel > src_w {
            return Err(Error::Geometry(format!("kernel {kernel} does not fit {src_h}x{src_w}")));
        }
        Ok(Self {
            src_h,
            src_w,
            dst_h: (src_h - kernel) / stride + 1,
            dst_w: (src_w - kernel) / stride + 1,
            kernel,
            stride,
            pad_top: 0,
            pad_left: 0,
        })
    }

    fn src_len(&self) -> usize {
        self.src_h * self.src_w
    }

    fn dst_len(&self) -> usize {
        self.dst_h * self.dst_w
    }

    /// `[C, src]` → `[C·k·k, dst]` patch matrix.
    fn im2col<T: Real>(&self, src: &[T], channels: usize, col: &mut [T]) {
        let k = self.kernel;
        let p = self.dst_len();
        for c in 0..channels {
            let plane = &src[c * self.src_len()..(c + 1) * self.src_len()];
            for u in 0..k {
                for v in 0..k {
                    let row = &mut col[((c * k + u) * k + v) * p..][..p];
                    for i in 0..self.dst_h {
                        let r = (i * self.stride + u) as isize - self.pad_top as isize;
                        let out = &mut row[i * self.dst_w..(i + 1) * self.dst_w];
                        if r < 0 || r >= self.src_h as isize {
                            out.iter_mut().for_each(|x| *x = T::zero());
                            continue;
                        }
                        let line = &plane[r as usize * self.src_w..][..self.src_w];
                        for (j, o) in out.iter_mut().enumerate() {
                            let cc = (j * self.stride + v) as isize - self.pad_left as isize;
                            *o = if cc < 0 || cc >= self.src_w as isize { T::zero() } else { line[cc as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-adds patches back onto `src`.
    fn col2im<T: Real>(&self, col: &[T], channels: usize, src: &mut [T]) {
        let k = self.kernel;
        let p = self.dst_len();
        src.iter_mut().for_each(|x| *x = T::zero());
        for c in 0..channels {
            let plane = &mut src[c * self.src_len()..(c + 1) * self.src_len()];
            for u in 0..k {
                for v in 0..k {
                    let row = &col[((c * k + u) * k + v) * p..][..p];
                    for i in 0..self.dst_h {
                        let r = (i * self.stride + u) as isize - self.pad_top as isize;
                        if r < 0 || r >= self.src_h as isize {
                            continue;
                        }
                        let line = &mut plane[r as usize * self.src_w..][..self.src_w];
                        for j in 0..self.dst_w {
                            let cc = (j * self.stride + v) as isize - self.pad_left as isize;
                            if cc >= 0 && cc < self.src_w as isize {
                                line[cc as usize] += row[i * self.dst_w + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution `[in, src] → [out, dst]`, weights `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geom: ConvGeom,
}

/// Transposed convolution `[in, dst] → [out, src]`, weights `[in, out, k, k]`
/// (the weights of the matching `[out, src] → [in, dst]` convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct TransConv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geom: ConvGeom,
}

/// Fully connected layer; output reshaped to `out_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub out_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    TransConv2d(TransConv2d<T>),
    Dense(Dense<T>),
    Relu,
    Sigmoid,
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    kind: LayerKind,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    saved: Vec<T>,
}

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±√(6 / fan_in), for layers feeding a ReLU.
    HeUniform,
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    GlorotUniform,
    Zeros,
}

fn init_tensor<T: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    init: Init,
    rng: &mut SeededRng,
) -> Result<Tensor<T>> {
    let limit = match init {
        Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
        Init::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        Init::Zeros => 0.0,
    };
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::c(rng.uniform_range(-limit, limit))).collect();
    Tensor::new(shape.to_vec(), data)
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, geom: ConvGeom, init: Init, rng: &mut SeededRng) -> Result<Self> {
        let k = geom.kernel;
        Ok(Self {
            weight: init_tensor(&[out_ch, in_ch, k, k], in_ch * k * k, out_ch * k * k, init, rng)?,
            bias: Tensor::zeros(&[out_ch])?,
            geom,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Real> TransConv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, geom: ConvGeom, init: Init, rng: &mut SeededRng) -> Result<Self> {
        let k = geom.kernel;
        Ok(Self {
            weight: init_tensor(&[in_ch, out_ch, k, k], in_ch * k * k, out_ch * k * k, init, rng)?,
            bias: Tensor::zeros(&[out_ch])?,
            geom,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl<T: Real> Dense<T> {
    pub fn new(in_len: usize, out_shape: &[usize], init: Init, rng: &mut SeededRng) -> Result<Self> {
        let out_len: usize = out_shape.iter().product();
        Ok(Self {
            weight: init_tensor(&[out_len, in_len], in_len, out_len, init, rng)?,
            bias: Tensor::zeros(&[out_len])?,
            out_shape: out_shape.to_vec(),
        })
    }
}

fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `c = aᵀ · b` with `a` stored `k × m`.
fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `c = a · bᵀ` with `b` stored `n × k`.
fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::TransConv2d(_) => LayerKind::TransConv2d,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::Sigmoid => LayerKind::Sigmoid,
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::TransConv2d(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Relu | Layer::Sigmoid => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::TransConv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Relu | Layer::Sigmoid => vec![],
        }
    }

    pub fn stride(&self) -> Option<usize> {
        match self {
            Layer::Conv2d(l) => Some(l.geom.stride),
            Layer::TransConv2d(l) => Some(l.geom.stride),
            _ => None,
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let expect = |want: &[usize]| -> Result<()> {
            if in_shape != want {
                return shape_err(format!("{:?} layer expects {want:?}, got {in_shape:?}", self.kind()));
            }
            Ok(())
        };
        match self {
            Layer::Conv2d(l) => {
                expect(&[l.in_channels(), l.geom.src_h, l.geom.src_w])?;
                Ok(vec![l.out_channels(), l.geom.dst_h, l.geom.dst_w])
            }
            Layer::TransConv2d(l) => {
                expect(&[l.in_channels(), l.geom.dst_h, l.geom.dst_w])?;
                Ok(vec![l.out_channels(), l.geom.src_h, l.geom.src_w])
            }
            Layer::Dense(l) => {
                let n: usize = in_shape.iter().product();
                if n != l.weight.shape()[1] {
                    return shape_err(format!("dense layer expects {} inputs, got {n}", l.weight.shape()[1]));
                }
                Ok(l.out_shape.clone())
            }
            Layer::Relu | Layer::Sigmoid => Ok(in_shape.to_vec()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        let out_shape = self.output_shape(x.shape())?;
        let out_len: usize = out_shape.iter().product();
        let mut y = vec![T::zero(); out_len];
        let saved = match self {
            Layer::Conv2d(l) => {
                let g = l.geom;
                let (ci, co, p) = (l.in_channels(), l.out_channels(), g.dst_len());
                let rows = ci * g.kernel * g.kernel;
                let mut col = vec![T::zero(); rows * p];
                g.im2col(x.data(), ci, &mut col);
                for (o, &b) in l.bias.data().iter().enumerate() {
                    y[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = b);
                }
                gemm_nn(co, rows, p, l.weight.data(), &col, T::one(), &mut y);
                col
            }
            Layer::TransConv2d(l) => {
                let g = l.geom;
                let (ci, co, p) = (l.in_channels(), l.out_channels(), g.dst_len());
                let rows = co * g.kernel * g.kernel;
                let mut col = vec![T::zero(); rows * p];
                gemm_tn(rows, ci, p, l.weight.data(), x.data(), T::zero(), &mut col);
                g.col2im(&col, co, &mut y);
                let s = g.src_len();
                for (o, &b) in l.bias.data().iter().enumerate() {
                    y[o * s..(o + 1) * s].iter_mut().for_each(|v| *v += b);
                }
                x.data().to_vec()
            }
            Layer::Dense(l) => {
                let (o, i) = (l.weight.shape()[0], l.weight.shape()[1]);
                y.copy_from_slice(l.bias.data());
                gemm_nn(o, i, 1, l.weight.data(), x.data(), T::one(), &mut y);
                x.data().to_vec()
            }
            Layer::Relu => {
                for (o, &v) in y.iter_mut().zip(x.data()) {
                    *o = if v > T::zero() { v } else { T::zero() };
                }
                x.data().to_vec()
            }
            Layer::Sigmoid => {
                for (o, &v) in y.iter_mut().zip(x.data()) {
                    *o = sigmoid(v);
                }
                y.clone()
            }
        };
        let cache = Cache { kind: self.kind(), in_shape: x.shape().to_vec(), out_shape: out_shape.clone(), saved };
        Ok((Tensor::new(out_shape, y)?, cache))
    }

    fn check_cache(&self, cache: &Cache<T>, grad_out: &Tensor<T>) -> Result<()> {
        if cache.kind != self.kind() {
            return Err(Error::Contract(format!(
                "cache from a {:?} layer passed to a {:?} layer",
                cache.kind,
                self.kind()
            )));
        }
        let expected_out = self.output_shape(&cache.in_shape)?;
        if expected_out != cache.out_shape {
            return Err(Error::Contract("cache does not match the layer geometry".into()));
        }
        if grad_out.shape() != cache.out_shape.as_slice() {
            return shape_err(format!("gradient shape {:?} vs forward output {:?}", grad_out.shape(), cache.out_shape));
        }
        Ok(())
    }

    /// Backward pass. Parameter gradients are *added* into `acc` (weight
    /// then bias) when given; pass `None` to skip them.
    pub fn backward_into(
        &self,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
        acc: Option<&mut [Tensor<T>]>,
    ) -> Result<Tensor<T>> {
        self.check_cache(cache, grad_out)?;
        let g = grad_out.data();
        let in_len: usize = cache.in_shape.iter().product();
        let mut gx = vec![T::zero(); in_len];
        match self {
            Layer::Conv2d(l) => {
                let geo = l.geom;
                let (ci, co, p) = (l.in_channels(), l.out_channels(), geo.dst_len());
                let rows = ci * geo.kernel * geo.kernel;
                let col = &cache.saved;
                if col.len() != rows * p {
                    return Err(Error::Contract("stale conv cache".into()));
                }
                if let Some(acc) = acc {
                    let (gw, gb) = split_wb(acc)?;
                    gemm_nt(co, p, rows, g, col, T::one(), gw.data_mut());
                    for (o, b) in gb.data_mut().iter_mut().enumerate() {
                        let mut s = T::zero();
                        for &v in &g[o * p..(o + 1) * p] {
                            s += v;
                        }
                        *b += s;
                    }
                }
                let mut gcol = vec![T::zero(); rows * p];
                gemm_tn(rows, co, p, l.weight.data(), g, T::zero(), &mut gcol);
                geo.col2im(&gcol, ci, &mut gx);
            }
            Layer::TransConv2d(l) => {
                let geo = l.geom;
                let (ci, co, p) = (l.in_channels(), l.out_channels(), geo.dst_len());
                let rows = co * geo.kernel * geo.kernel;
                let x = &cache.saved;
                if x.len() != ci * p {
                    return Err(Error::Contract("stale transconv cache".into()));
                }
                let mut gcol = vec![T::zero(); rows * p];
                geo.im2col(g, co, &mut gcol);
                if let Some(acc) = acc {
                    let (gw, gb) = split_wb(acc)?;
                    gemm_nt(ci, p, rows, x, &gcol, T::one(), gw.data_mut());
                    let s = geo.src_len();
                    for (o, b) in gb.data_mut().iter_mut().enumerate() {
                        let mut sum = T::zero();
                        for &v in &g[o * s..(o + 1) * s] {
                            sum += v;
                        }
                        *b += sum;
                    }
                }
                gemm_nn(ci, rows, p, l.weight.data(), &gcol, T::zero(), &mut gx);
            }
            Layer::Dense(l) => {
                let (o, i) = (l.weight.shape()[0], l.weight.shape()[1]);
                let x = &cache.saved;
                if x.len() != i {
                    return Err(Error::Contract("stale dense cache".into()));
                }
                if let Some(acc) = acc {
                    let (gw, gb) = split_wb(acc)?;
                    gemm_nt(o, 1, i, g, x, T::one(), gw.data_mut());
                    for (b, &v) in gb.data_mut().iter_mut().zip(g) {
                        *b += v;
                    }
                }
                gemm_tn(i, o, 1, l.weight.data(), g, T::zero(), &mut gx);
            }
            Layer::Relu => {
                for ((o, &x), &gv) in gx.iter_mut().zip(&cache.saved).zip(g) {
                    *o = if x > T::zero() { gv } else { T::zero() };
                }
            }
            Layer::Sigmoid => {
                for ((o, &s), &gv) in gx.iter_mut().zip(&cache.saved).zip(g) {
                    *o = gv * s * (T::one() - s);
                }
            }
        }
        Tensor::new(cache.in_shape.clone(), gx)
    }

    /// Backward pass returning fresh parameter gradients.
    pub fn backward(&self, cache: &Cache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut grads: Vec<Tensor<T>> =
            self.params().iter().map(|p| Tensor::zeros(p.shape())).collect::<Result<_>>()?;
        let acc = if grads.is_empty() { None } else { Some(grads.as_mut_slice()) };
        let gx = self.backward_into(cache, grad_out, acc)?;
        Ok((gx, grads))
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d(l) => Layer::Conv2d(Conv2d { weight: l.weight.cast(), bias: l.bias.cast(), geom: l.geom }),
            Layer::TransConv2d(l) => {
                Layer::TransConv2d(TransConv2d { weight: l.weight.cast(), bias: l.bias.cast(), geom: l.geom })
            }
            Layer::Dense(l) => {
                Layer::Dense(Dense { weight: l.weight.cast(), bias: l.bias.cast(), out_shape: l.out_shape.clone() })
            }
            Layer::Relu => Layer::Relu,
            Layer::Sigmoid => Layer::Sigmoid,
        }
    }
}

fn split_wb<T>(acc: &mut [Tensor<T>]) -> Result<(&mut Tensor<T>, &mut Tensor<T>)> {
    match acc {
        [w, b, ..] => Ok((w, b)),
        _ => Err(Error::Contract("gradient accumulator needs weight and bias slots".into())),
    }
}

/// Forward through a layer (free-function form).
pub fn layer_forward<T: Real>(layer: &Layer<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
    layer.forward(x)
}

/// Backward through a layer (free-function form).
pub fn layer_backward<T: Real>(
    layer: &Layer<T>,
    cache: &Cache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    layer.backward(cache, grad_out)
}

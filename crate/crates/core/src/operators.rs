//! Measurement operators `A` with exact matrix-free adjoints, spectral-norm
//! estimation by power iteration, and empirical restricted-isometry estimates.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{tnsr, Real, Tensor};

/// A linear map between flat vectors with an exact adjoint.
pub trait LinearMap<T: Real>: Sync {
    fn in_len(&self) -> usize;
    fn out_len(&self) -> usize;
    fn apply_flat(&self, x: &[T], out: &mut [T]);
    fn adjoint_flat(&self, y: &[T], out: &mut [T]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Gaussian,
    Dense,
    Inpaint,
    Downsample,
}

#[derive(Debug, Clone)]
enum Payload<T> {
    /// Row-major `out_len × in_len` matrix.
    Matrix(Vec<T>),
    /// 0/1 mask over the `H × W` plane, shared by all channels.
    Mask {
        mask: Vec<T>,
        size: usize,
        top_left: (usize, usize),
    },
    Downsample {
        factor: usize,
    },
}

/// A measurement process `y = A x`.
#[derive(Debug, Clone)]
pub struct LinearOp<T> {
    kind: OpKind,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    scale: T,
    seed: Option<u64>,
    payload: Payload<T>,
}

/// Height, width, channels of an image shape (`[H, W]` or `[H, W, C]`).
fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w] if h > 0 && w > 0 => Ok((h, w, 1)),
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        _ => Err(Error::Geometry(format!("expected an image shape [H, W(, C)], got {shape:?}"))),
    }
}

/// Gaussian sensing matrix with i.i.d. `N(0, 1/m)` entries.
pub fn make_gaussian<T: Real>(rng: &mut SeededRng, m: usize, n: usize) -> Result<LinearOp<T>> {
    if m == 0 || n == 0 {
        return shape_err(format!("gaussian operator needs m, n >= 1 (got {m} x {n})"));
    }
    let std = (1.0 / m as f64).sqrt();
    let matrix = (0..m * n).map(|_| T::c(rng.normal(0.0, std))).collect();
    Ok(LinearOp {
        kind: OpKind::Gaussian,
        in_shape: vec![n],
        out_shape: vec![m],
        scale: T::one(),
        seed: Some(rng.seed()),
        payload: Payload::Matrix(matrix),
    })
}

/// Explicit dense operator from a row-major `m × n` matrix.
pub fn from_dense<T: Real>(m: usize, n: usize, matrix: Vec<T>) -> Result<LinearOp<T>> {
    if m == 0 || n == 0 || matrix.len() != m * n {
        return shape_err(format!("dense operator {m} x {n} with {} entries", matrix.len()));
    }
    Ok(LinearOp {
        kind: OpKind::Dense,
        in_shape: vec![n],
        out_shape: vec![m],
        scale: T::one(),
        seed: None,
        payload: Payload::Matrix(matrix),
    })
}

/// Occludes a `mask_size × mask_size` square at `top_left` (row, col) in every
/// channel. The output stays in ℝ^N with zeros on the square.
pub fn make_inpaint<T: Real>(img_shape: &[usize], mask_size: usize, top_left: (usize, usize)) -> Result<LinearOp<T>> {
    let (h, w, _) = image_dims(img_shape)?;
    let (r0, c0) = top_left;
    if r0 + mask_size > h || c0 + mask_size > w {
        return Err(Error::Geometry(format!("{mask_size}x{mask_size} mask at ({r0},{c0}) does not fit in {h}x{w}")));
    }
    let mut mask = vec![T::one(); h * w];
    for r in r0..r0 + mask_size {
        for c in c0..c0 + mask_size {
            mask[r * w + c] = T::zero();
        }
    }
    Ok(LinearOp {
        kind: OpKind::Inpaint,
        in_shape: img_shape.to_vec(),
        out_shape: img_shape.to_vec(),
        scale: T::one(),
        seed: None,
        payload: Payload::Mask { mask, size: mask_size, top_left },
    })
}

/// Top-left corner that centres a square of `mask_size` in the image.
pub fn centered_top_left(img_shape: &[usize], mask_size: usize) -> Result<(usize, usize)> {
    let (h, w, _) = image_dims(img_shape)?;
    if mask_size > h || mask_size > w {
        return Err(Error::Geometry(format!("mask {mask_size} larger than {h}x{w}")));
    }
    Ok(((h - mask_size) / 2, (w - mask_size) / 2))
}

/// Random top-left corner with the square fully inside the image.
pub fn random_top_left(img_shape: &[usize], mask_size: usize, rng: &mut SeededRng) -> Result<(usize, usize)> {
    let (h, w, _) = image_dims(img_shape)?;
    if mask_size > h || mask_size > w {
        return Err(Error::Geometry(format!("mask {mask_size} larger than {h}x{w}")));
    }
    Ok((rng.below(h - mask_size + 1), rng.below(w - mask_size + 1)))
}

/// Block-averaging by `factor`. Sizes not divisible by `factor` are zero
/// padded at the bottom/right before averaging; the adjoint crops.
pub fn make_downsample<T: Real>(img_shape: &[usize], factor: usize) -> Result<LinearOp<T>> {
    let (h, w, ch) = image_dims(img_shape)?;
    if factor == 0 {
        return Err(Error::Geometry("downsampling factor must be >= 1".into()));
    }
    let oh = h.div_ceil(factor);
    let ow = w.div_ceil(factor);
    let out_shape = if img_shape.len() == 2 { vec![oh, ow] } else { vec![oh, ow, ch] };
    Ok(LinearOp {
        kind: OpKind::Downsample,
        in_shape: img_shape.to_vec(),
        out_shape,
        scale: T::one(),
        seed: None,
        payload: Payload::Downsample { factor },
    })
}

/// Like [`make_downsample`] but rejects sizes that `factor` does not divide.
pub fn make_downsample_exact<T: Real>(img_shape: &[usize], factor: usize) -> Result<LinearOp<T>> {
    let (h, w, _) = image_dims(img_shape)?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Geometry(format!("factor {factor} does not divide {h}x{w}")));
    }
    make_downsample(img_shape, factor)
}

impl<T: Real> LinearOp<T> {
    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn scale_factor(&self) -> T {
        self.scale
    }

    /// Multiplies the operator by `s` (e.g. `2·I` from an empty mask).
    pub fn scaled(mut self, s: T) -> Self {
        self.scale *= s;
        self
    }

    /// Reinterprets the input of a matrix operator as an image shape of the
    /// same element count.
    pub fn with_in_shape(mut self, shape: &[usize]) -> Result<Self> {
        if !matches!(self.payload, Payload::Matrix(_)) {
            return Err(Error::Geometry("only matrix operators can be reshaped".into()));
        }
        let n = crate::tensor::check_dims(shape)?;
        if n != self.in_len() {
            return shape_err(format!("shape {shape:?} has {n} elements, operator takes {}", self.in_len()));
        }
        self.in_shape = shape.to_vec();
        Ok(self)
    }

    pub fn mask(&self) -> Option<&[T]> {
        match &self.payload {
            Payload::Mask { mask, .. } => Some(mask),
            _ => None,
        }
    }

    pub fn matrix(&self) -> Option<&[T]> {
        match &self.payload {
            Payload::Matrix(m) => Some(m),
            _ => None,
        }
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != self.in_shape.as_slice() {
            return shape_err(format!("apply: expected {:?}, got {:?}", self.in_shape, x.shape()));
        }
        let mut out = vec![T::zero(); self.out_len()];
        self.apply_flat(x.data(), &mut out);
        Tensor::new(self.out_shape.clone(), out)
    }

    pub fn adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        if y.shape() != self.out_shape.as_slice() {
            return shape_err(format!("adjoint: expected {:?}, got {:?}", self.out_shape, y.shape()));
        }
        let mut out = vec![T::zero(); self.in_len()];
        self.adjoint_flat(y.data(), &mut out);
        Tensor::new(self.in_shape.clone(), out)
    }

    pub fn cast<U: Real>(&self) -> LinearOp<U> {
        let conv = |v: &[T]| v.iter().map(|&a| U::c(a.f64())).collect::<Vec<U>>();
        LinearOp {
            kind: self.kind,
            in_shape: self.in_shape.clone(),
            out_shape: self.out_shape.clone(),
            scale: U::c(self.scale.f64()),
            seed: self.seed,
            payload: match &self.payload {
                Payload::Matrix(m) => Payload::Matrix(conv(m)),
                Payload::Mask { mask, size, top_left } => {
                    Payload::Mask { mask: conv(mask), size: *size, top_left: *top_left }
                }
                Payload::Downsample { factor } => Payload::Downsample { factor: *factor },
            },
        }
    }

    fn spec(&self) -> OpSpec {
        let (mask_size, top_left, factor) = match &self.payload {
            Payload::Matrix(_) => (None, None, None),
            Payload::Mask { size, top_left, .. } => (Some(*size), Some(*top_left), None),
            Payload::Downsample { factor } => (None, None, Some(*factor)),
        };
        OpSpec {
            kind: self.kind,
            in_shape: self.in_shape.clone(),
            out_shape: self.out_shape.clone(),
            scale: self.scale.f64(),
            seed: self.seed,
            mask_size,
            top_left,
            factor,
        }
    }

    /// Persists as `<stem>.tnsr` (payload, if any) plus `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let spec = self.spec();
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&spec)?)?;
        let payload = match &self.payload {
            Payload::Matrix(m) => Some(Tensor::new(vec![self.out_len(), self.in_len()], m.clone())?),
            Payload::Mask { mask, .. } => {
                let (h, w, _) = image_dims(&self.in_shape)?;
                Some(Tensor::new(vec![h, w], mask.clone())?)
            }
            Payload::Downsample { .. } => None,
        };
        if let Some(p) = payload {
            tnsr::write_file(&stem.with_extension("tnsr"), &[&p])?;
        }
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let spec: OpSpec = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let read_payload = || -> Result<Tensor<T>> {
            let mut ts = tnsr::read_file(&stem.with_extension("tnsr"))?;
            if ts.len() != 1 {
                return Err(Error::Format(format!("operator payload holds {} tensors", ts.len())));
            }
            Ok(ts.remove(0).into_real())
        };
        let op = match spec.kind {
            OpKind::Gaussian | OpKind::Dense => {
                let m = read_payload()?;
                let n_in: usize = spec.in_shape.iter().product();
                let n_out: usize = spec.out_shape.iter().product();
                if m.len() != n_in * n_out {
                    return Err(Error::Format("matrix payload size mismatch".into()));
                }
                LinearOp {
                    kind: spec.kind,
                    in_shape: spec.in_shape.clone(),
                    out_shape: spec.out_shape.clone(),
                    scale: T::one(),
                    seed: spec.seed,
                    payload: Payload::Matrix(m.into_data()),
                }
            }
            OpKind::Inpaint => {
                let size = spec.mask_size.ok_or_else(|| Error::Format("missing mask_size".into()))?;
                let tl = spec.top_left.ok_or_else(|| Error::Format("missing top_left".into()))?;
                let op = make_inpaint::<T>(&spec.in_shape, size, tl)?;
                let stored = read_payload()?;
                if op.mask() != Some(stored.data()) {
                    return Err(Error::Format("stored mask disagrees with geometry".into()));
                }
                op
            }
            OpKind::Downsample => {
                let f = spec.factor.ok_or_else(|| Error::Format("missing factor".into()))?;
                make_downsample(&spec.in_shape, f)?
            }
        };
        Ok(op.scaled(T::c(spec.scale)))
    }
}

/// JSON sidecar describing a persisted operator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OpSpec {
    pub kind: OpKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub scale: f64,
    pub seed: Option<u64>,
    pub mask_size: Option<usize>,
    pub top_left: Option<(usize, usize)>,
    pub factor: Option<usize>,
}

impl<T: Real> LinearMap<T> for LinearOp<T> {
    fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    fn apply_flat(&self, x: &[T], out: &mut [T]) {
        let (n, m) = (self.in_len(), self.out_len());
        match &self.payload {
            Payload::Matrix(a) => {
                T::gemm(m, n, 1, self.scale, a, n as isize, 1, x, 1, 1, T::zero(), out, 1, 1);
            }
            Payload::Mask { mask, .. } => {
                let ch = n / mask.len();
                for (p, &mk) in mask.iter().enumerate() {
                    for c in 0..ch {
                        out[p * ch + c] = self.scale * mk * x[p * ch + c];
                    }
                }
            }
            Payload::Downsample { factor } => {
                let (h, w, ch) = image_dims(&self.in_shape).expect("validated at construction");
                let ow = w.div_ceil(*factor);
                let inv = self.scale / T::c((factor * factor) as f64);
                out.iter_mut().for_each(|v| *v = T::zero());
                for r in 0..h {
                    for c in 0..w {
                        let o = ((r / factor) * ow + c / factor) * ch;
                        let i = (r * w + c) * ch;
                        for k in 0..ch {
                            out[o + k] += x[i + k];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v *= inv);
            }
        }
    }

    fn adjoint_flat(&self, y: &[T], out: &mut [T]) {
        let (n, m) = (self.in_len(), self.out_len());
        match &self.payload {
            Payload::Matrix(a) => {
                T::gemm(n, m, 1, self.scale, a, 1, n as isize, y, 1, 1, T::zero(), out, 1, 1);
            }
            // Diagonal, hence self-adjoint.
            Payload::Mask { .. } => self.apply_flat(y, out),
            Payload::Downsample { factor } => {
                let (h, w, ch) = image_dims(&self.in_shape).expect("validated at construction");
                let ow = w.div_ceil(*factor);
                let inv = self.scale / T::c((factor * factor) as f64);
                for r in 0..h {
                    for c in 0..w {
                        let o = ((r / factor) * ow + c / factor) * ch;
                        let i = (r * w + c) * ch;
                        for k in 0..ch {
                            out[i + k] = inv * y[o + k];
                        }
                    }
                }
            }
        }
    }
}

/// Composition `outer ∘ inner` of two maps.
pub struct Composed<'a, T> {
    pub outer: &'a dyn LinearMap<T>,
    pub inner: &'a dyn LinearMap<T>,
}

impl<T: Real> LinearMap<T> for Composed<'_, T> {
    fn in_len(&self) -> usize {
        self.inner.in_len()
    }

    fn out_len(&self) -> usize {
        self.outer.out_len()
    }

    fn apply_flat(&self, x: &[T], out: &mut [T]) {
        let mut mid = vec![T::zero(); self.inner.out_len()];
        self.inner.apply_flat(x, &mut mid);
        self.outer.apply_flat(&mid, out);
    }

    fn adjoint_flat(&self, y: &[T], out: &mut [T]) {
        let mut mid = vec![T::zero(); self.outer.in_len()];
        self.outer.adjoint_flat(y, &mut mid);
        self.inner.adjoint_flat(&mid, out);
    }
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    /// Rayleigh-quotient estimate of ‖A‖², never above the true value.
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Estimates ‖A‖² by power iteration on AᵀA from a random start.
///
/// Stops when successive estimates differ by less than `tol` relatively;
/// otherwise returns the last estimate with `converged = false`.
pub fn operator_norm_sq<T: Real>(
    op: &dyn LinearMap<T>,
    iters: usize,
    tol: f64,
    rng: &mut SeededRng,
) -> Result<NormEstimate> {
    if iters == 0 {
        return shape_err("power iteration needs iters >= 1");
    }
    let n = op.in_len();
    let mut v: Vec<T> = (0..n).map(|_| T::c(rng.standard_normal())).collect();
    let mut av = vec![T::zero(); op.out_len()];
    let mut atav = vec![T::zero(); n];
    let mut prev = f64::NAN;
    let mut est = 0.0;
    for it in 1..=iters {
        let nv = v.iter().map(|a| a.f64() * a.f64()).sum::<f64>().sqrt();
        if nv == 0.0 {
            return Ok(NormEstimate { value: 0.0, converged: true, iterations: it });
        }
        let inv = T::c(1.0 / nv);
        v.iter_mut().for_each(|a| *a *= inv);
        op.apply_flat(&v, &mut av);
        est = av.iter().map(|a| a.f64() * a.f64()).sum::<f64>();
        if est == 0.0 || (prev.is_finite() && (est - prev).abs() < tol * est) {
            return Ok(NormEstimate { value: est, converged: true, iterations: it });
        }
        prev = est;
        op.adjoint_flat(&av, &mut atav);
        std::mem::swap(&mut v, &mut atav);
    }
    Ok(NormEstimate { value: est, converged: false, iterations: iters })
}

/// Lexicographic order on raw values; gives sample sets a canonical order.
fn canonical_order<T: Real>(samples: &[Tensor<T>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| {
        let (da, db) = (samples[a].data(), samples[b].data());
        for (x, y) in da.iter().zip(db) {
            let o = x.f64().total_cmp(&y.f64());
            if o.is_ne() {
                return o;
            }
        }
        da.len().cmp(&db.len())
    });
    idx
}

/// Index pair `(i, j)`, `i < j`, for the `p`-th pair in row order.
fn unrank_pair(p: usize, s: usize) -> (usize, usize) {
    let mut i = 0;
    let mut rem = p;
    while rem >= s - 1 - i {
        rem -= s - 1 - i;
        i += 1;
    }
    (i, i + 1 + rem)
}

/// Empirical RIP constant: `max |‖A(x₁−x₂)‖²/‖x₁−x₂‖² − 1|` over sampled
/// distinct pairs. All pairs are used when `n_pairs` covers them.
///
/// The samples are put in a canonical order first, so the result does not
/// depend on the order they are passed in.
pub fn estimate_rip_delta<T: Real>(
    op: &LinearOp<T>,
    samples: &[Tensor<T>],
    rng: &mut SeededRng,
    n_pairs: usize,
) -> Result<f64> {
    let s = samples.len();
    if s < 2 || n_pairs == 0 {
        return Err(Error::Estimation(format!("need >= 2 samples and >= 1 pair (got {s}, {n_pairs})")));
    }
    for x in samples {
        if x.shape() != op.in_shape() {
            return shape_err(format!("sample shape {:?} vs operator input {:?}", x.shape(), op.in_shape()));
        }
    }
    let order = canonical_order(samples);
    let total = s * (s - 1) / 2;
    let pairs: Vec<(usize, usize)> = if n_pairs >= total {
        (0..total).map(|p| unrank_pair(p, s)).collect()
    } else {
        let mut seen = HashSet::with_capacity(n_pairs);
        let mut picked = Vec::with_capacity(n_pairs);
        while picked.len() < n_pairs {
            let p = rng.below(total);
            if seen.insert(p) {
                picked.push(p);
            }
        }
        picked.sort_unstable();
        picked.into_iter().map(|p| unrank_pair(p, s)).collect()
    };

    let ratios: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&samples[order[i]], &samples[order[j]]);
            let d = a.sub(b).expect("shapes checked");
            let dn = d.norm2_f64();
            if dn < 1e-9 {
                return None;
            }
            let mut ad = vec![T::zero(); op.out_len()];
            op.apply_flat(d.data(), &mut ad);
            let num: f64 = ad.iter().map(|v| v.f64() * v.f64()).sum();
            Some((num / (dn * dn) - 1.0).abs())
        })
        .collect();

    ratios
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
        .ok_or_else(|| Error::Estimation("every sampled pair was degenerate".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_img(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
        rng.gaussian(shape, 0.0, 1.0).unwrap()
    }

    #[test]
    fn gaussian_deterministic_and_shapes() {
        let a = make_gaussian::<f64>(&mut SeededRng::new(4), 5, 9).unwrap();
        let b = make_gaussian::<f64>(&mut SeededRng::new(4), 5, 9).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(a.in_shape(), &[9]);
        assert_eq!(a.out_shape(), &[5]);
        assert!(make_gaussian::<f64>(&mut SeededRng::new(4), 0, 9).is_err());
    }

    #[test]
    fn gaussian_entry_variance() {
        let (m, n) = (1000, 12288);
        let op = make_gaussian::<f32>(&mut SeededRng::new(12), m, n).unwrap();
        let a = op.matrix().unwrap();
        let cnt = a.len() as f64;
        let mean = a.iter().map(|&v| v as f64).sum::<f64>() / cnt;
        let var = a.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (cnt - 1.0);
        assert!((var * m as f64 - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn inpaint_examples() {
        let op = make_inpaint::<f64>(&[4, 4], 2, (0, 0)).unwrap();
        let ones = Tensor::full(&[4, 4], 1.0).unwrap();
        assert_eq!(op.apply(&ones).unwrap().sum(), 12.0);

        let id = make_inpaint::<f64>(&[4, 4], 0, (0, 0)).unwrap();
        let mut rng = SeededRng::new(1);
        let x = rand_img(&mut rng, &[4, 4]);
        assert_eq!(id.apply(&x).unwrap(), x);

        let once = op.apply(&x).unwrap();
        assert_eq!(op.apply(&once).unwrap(), once);
        assert!(op.mask().unwrap().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(matches!(make_inpaint::<f64>(&[4, 4], 3, (2, 0)), Err(Error::Geometry(_))));
    }

    #[test]
    fn inpaint_masks_every_channel() {
        let op = make_inpaint::<f64>(&[3, 3, 2], 1, (1, 1)).unwrap();
        let y = op.apply(&Tensor::full(&[3, 3, 2], 1.0).unwrap()).unwrap();
        assert_eq!(y.get(&[1, 1, 0]).unwrap(), 0.0);
        assert_eq!(y.get(&[1, 1, 1]).unwrap(), 0.0);
        assert_eq!(y.sum(), 16.0);
    }

    #[test]
    fn downsample_examples() {
        let op = make_downsample::<f64>(&[2, 2], 2).unwrap();
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(op.apply(&x).unwrap().data(), &[2.5]);

        let id = make_downsample::<f64>(&[3, 5], 1).unwrap();
        let mut rng = SeededRng::new(2);
        let x = rand_img(&mut rng, &[3, 5]);
        assert_eq!(id.apply(&x).unwrap(), x);

        for f in [1, 2, 3, 4, 6] {
            let op = make_downsample_exact::<f64>(&[12, 12], f).unwrap();
            let y = op.apply(&Tensor::full(&[12, 12], 0.3).unwrap()).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-15), "f={f}");
        }
        assert!(matches!(make_downsample_exact::<f64>(&[28, 28], 3), Err(Error::Geometry(_))));
        assert_eq!(make_downsample::<f64>(&[28, 28, 1], 3).unwrap().out_shape(), &[10, 10, 1]);
        assert_eq!(make_downsample::<f64>(&[28, 28, 1], 4).unwrap().out_shape(), &[7, 7, 1]);
    }

    #[test]
    fn apply_rejects_wrong_shape_and_is_linear_at_zero() {
        let op = make_downsample::<f64>(&[4, 4], 2).unwrap();
        assert!(op.apply(&Tensor::zeros(&[4, 5]).unwrap()).is_err());
        assert!(op.adjoint(&Tensor::zeros(&[4, 4]).unwrap()).is_err());
        let z = op.apply(&Tensor::zeros(&[4, 4]).unwrap()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn power_iteration_small_cases() {
        let mut rng = SeededRng::new(5);
        let diag = from_dense(2, 2, vec![3.0f64, 0.0, 0.0, 1.0]).unwrap();
        let est = operator_norm_sq(&diag, 500, 1e-14, &mut rng).unwrap();
        assert!(est.converged);
        assert!((est.value - 9.0).abs() < 1e-9, "{est:?}");

        let id = make_inpaint::<f64>(&[5, 5], 0, (0, 0)).unwrap();
        let est = operator_norm_sq(&id, 10, 1e-12, &mut rng).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);

        assert!(operator_norm_sq(&id, 0, 1e-12, &mut rng).is_err());
        let one_step = operator_norm_sq(&diag, 1, 1e-14, &mut rng).unwrap();
        assert!(!one_step.converged);
        assert!(one_step.value <= 9.0 + 1e-12);
    }

    #[test]
    fn rip_trivial_cases() {
        let mut rng = SeededRng::new(6);
        let samples: Vec<_> = (0..6).map(|_| rand_img(&mut rng, &[4, 4])).collect();
        let id = make_inpaint::<f64>(&[4, 4], 0, (0, 0)).unwrap();
        let d = estimate_rip_delta(&id, &samples, &mut rng, 100).unwrap();
        assert!(d.abs() < 1e-12);
        let twice = id.clone().scaled(2.0);
        let d = estimate_rip_delta(&twice, &samples, &mut rng, 100).unwrap();
        assert!((d - 3.0).abs() < 1e-12);

        let same = vec![samples[0].clone(), samples[0].clone()];
        assert!(matches!(estimate_rip_delta(&id, &same, &mut rng, 1), Err(Error::Estimation(_))));
        assert!(estimate_rip_delta(&id, &samples[..1], &mut rng, 1).is_err());
    }

    #[test]
    fn rip_order_invariant() {
        let mut rng = SeededRng::new(7);
        let samples: Vec<_> = (0..12).map(|_| rand_img(&mut rng, &[16])).collect();
        let op = make_gaussian::<f64>(&mut rng, 8, 16).unwrap();
        let a = estimate_rip_delta(&op, &samples, &mut SeededRng::new(1), 20).unwrap();
        let mut rev = samples.clone();
        rev.reverse();
        let b = estimate_rip_delta(&op, &rev, &mut SeededRng::new(1), 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unrank_covers_all_pairs() {
        let s = 6;
        let pairs: Vec<_> = (0..s * (s - 1) / 2).map(|p| unrank_pair(p, s)).collect();
        let uniq: HashSet<_> = pairs.iter().collect();
        assert_eq!(uniq.len(), 15);
        assert!(pairs.iter().all(|&(i, j)| i < j && j < s));
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(8);
        let ops: Vec<LinearOp<f32>> = vec![
            make_gaussian(&mut rng, 6, 12).unwrap().with_in_shape(&[3, 4, 1]).unwrap(),
            make_inpaint(&[6, 6, 1], 2, (1, 3)).unwrap(),
            make_downsample(&[7, 7], 3).unwrap().scaled(2.0),
        ];
        for (k, op) in ops.iter().enumerate() {
            let stem = dir.path().join(format!("op{k}"));
            op.save(&stem).unwrap();
            let back = LinearOp::<f32>::load(&stem).unwrap();
            let x = rng.gaussian::<f32>(op.in_shape(), 0.0, 1.0).unwrap();
            assert_eq!(back.apply(&x).unwrap(), op.apply(&x).unwrap());
            assert_eq!(back.in_shape(), op.in_shape());
        }
    }
}

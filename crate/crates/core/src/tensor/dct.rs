use super::{Real, Tensor};
use crate::error::{shape_err, Result};

/// Orthonormal DCT-II basis, row `k` holds frequency `k`.
fn basis(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            c[k * n + i] = scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
        }
    }
    c
}

fn dims2<T: Real>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => shape_err(format!("2-D tensor required, got shape {s:?}")),
    }
}

/// `out = left · x · right` with `left` r×r and `right` c×c, evaluated in f64.
fn sandwich<T: Real>(x: &Tensor<T>, left: &[f64], right: &[f64], r: usize, c: usize) -> Tensor<T> {
    let xs: Vec<f64> = x.data().iter().map(|v| v.f64()).collect();
    let mut tmp = vec![0.0; r * c];
    f64::gemm(r, r, c, 1.0, left, r as isize, 1, &xs, c as isize, 1, 0.0, &mut tmp, c as isize, 1);
    let mut out = vec![0.0; r * c];
    f64::gemm(r, c, c, 1.0, &tmp, c as isize, 1, right, c as isize, 1, 0.0, &mut out, c as isize, 1);
    Tensor::new(vec![r, c], out.into_iter().map(T::c).collect()).expect("shape preserved")
}

/// Orthonormal 2-D type-II DCT.
pub fn dct2d<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = dims2(img)?;
    let cr = basis(r);
    let cc = basis(c);
    // C_r · X · C_cᵀ
    let cct = transpose(&cc, c);
    Ok(sandwich(img, &cr, &cct, r, c))
}

/// Inverse of [`dct2d`] (type-III with orthonormal scaling).
pub fn idct2d<T: Real>(coef: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = dims2(coef)?;
    let crt = transpose(&basis(r), r);
    let cc = basis(c);
    Ok(sandwich(coef, &crt, &cc, r, c))
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

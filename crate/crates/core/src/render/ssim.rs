use crate::geometry::{check_dims, RgbImage};
use crate::Result;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

fn taps() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// 1-D pass along rows (`horizontal`) or columns, optionally dividing by
/// the in-image window mass.
fn pass(src: &[f64], w: usize, h: usize, horizontal: bool, normalize: bool, k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let r = RADIUS as isize;
    for y in 0..h {
        for x in 0..w {
            let (pos, len) = if horizontal { (x as isize, w as isize) } else { (y as isize, h as isize) };
            let mut acc = 0.0;
            let mut mass = 0.0;
            for o in -r..=r {
                let q = pos + o;
                if q < 0 || q >= len {
                    continue;
                }
                let wgt = k[(o + r) as usize];
                let idx = if horizontal { y * w + q as usize } else { q as usize * w + x };
                acc += wgt * src[idx];
                mass += wgt;
            }
            out[y * w + x] = if normalize { acc / mass } else { acc };
        }
    }
    out
}

/// Border-renormalized Gaussian window mean.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    pass(&pass(src, w, h, true, true, k), w, h, false, true, k)
}

/// Adjoint of [`blur`].
fn blur_adjoint(g: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let ones = vec![1.0; w * h];
    let mass_x = pass(&ones, w, h, true, false, k);
    let mass_y = pass(&ones, w, h, false, false, k);
    let v: Vec<f64> = g.iter().zip(&mass_y).map(|(a, m)| a / m).collect();
    let v = pass(&v, w, h, false, false, k);
    let v: Vec<f64> = v.iter().zip(&mass_x).map(|(a, m)| a / m).collect();
    pass(&v, w, h, true, false, k)
}

fn channel(img: &RgbImage, c: usize) -> Vec<f64> {
    img.data.iter().map(|p| p[c]).collect()
}

/// Mean structural similarity over pixels and channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &RgbImage, b: &RgbImage) -> Result<(f64, Vec<[f64; 3]>)> {
    ssim_impl(a, b, true)
}

fn ssim_impl(a: &RgbImage, b: &RgbImage, want_grad: bool) -> Result<(f64, Vec<[f64; 3]>)> {
    check_dims("ssim images", a.dims(), b.dims())?;
    let (w, h) = a.dims();
    let n = w * h;
    let k = taps();
    let mut total = 0.0;
    let mut grad = vec![[0.0; 3]; if want_grad { n } else { 0 }];
    let norm = 1.0 / (3 * n).max(1) as f64;
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let xx = blur(&x.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &k);
        let yy = blur(&y.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &k);
        let xy = blur(&x.iter().zip(&y).map(|(p, q)| p * q).collect::<Vec<_>>(), w, h, &k);
        let mut d_m1 = vec![0.0; n];
        let mut d_m2 = vec![0.0; n];
        let mut d_mxy = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (mx[i], my[i]);
            let va = xx[i] - ma * ma;
            let vb = yy[i] - mb * mb;
            let cov = xy[i] - ma * mb;
            let n1 = 2.0 * ma * mb + SSIM_C1;
            let n2 = 2.0 * cov + SSIM_C2;
            let d1 = ma * ma + mb * mb + SSIM_C1;
            let d2 = va + vb + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                let ds_dma = 2.0 * mb * n2 / (d1 * d2) - s * 2.0 * ma / d1;
                let ds_dcov = 2.0 * n1 / (d1 * d2);
                let ds_dva = -s / d2;
                d_m1[i] = (ds_dma - 2.0 * ma * ds_dva - mb * ds_dcov) * norm;
                d_m2[i] = ds_dva * norm;
                d_mxy[i] = ds_dcov * norm;
            }
        }
        if want_grad {
            let g1 = blur_adjoint(&d_m1, w, h, &k);
            let g2 = blur_adjoint(&d_m2, w, h, &k);
            let g3 = blur_adjoint(&d_mxy, w, h, &k);
            for i in 0..n {
                grad[i][c] = g1[i] + 2.0 * x[i] * g2[i] + y[i] * g3[i];
            }
        }
    }
    Ok((total * norm, grad))
}

//! Image quality metrics on interleaved `[H, W, 3]` images.
//!
//! SSIM is single-scale with an 11×11 Gaussian window (σ = 1.5), constants
//! `(0.01)²` and `(0.03)²` for unit dynamic range, averaged over every fully
//! covered window position and channel.

use crate::error::{CoreError, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const PSNR_CAP: f64 = 99.0;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<()> {
    let n = width * height * 3;
    if a.len() != n || b.len() != n {
        return Err(CoreError::Contract(format!(
            "images must hold {width}x{height}x3 = {n} values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// `10·log10(1/MSE)`, capped at 99 dB.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::Contract(format!(
            "psnr of images with {} and {} values",
            a.len(),
            b.len()
        )));
    }
    let m = mse(a, b);
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of one `h × w` plane.
fn filter_valid(x: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (wv, hv) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * wv];
    for y in 0..h {
        for xo in 0..wv {
            rows[y * wv + xo] = (0..SSIM_WINDOW).map(|k| taps[k] * x[y * w + xo + k]).sum();
        }
    }
    let mut out = vec![0.0; hv * wv];
    for yo in 0..hv {
        for xo in 0..wv {
            out[yo * wv + xo] = (0..SSIM_WINDOW).map(|k| taps[k] * rows[(yo + k) * wv + xo]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a valid-size map back to `h × w`.
fn filter_adjoint(m: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (wv, hv) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut cols = vec![0.0; h * wv];
    for yo in 0..hv {
        for xo in 0..wv {
            let v = m[yo * wv + xo];
            for k in 0..SSIM_WINDOW {
                cols[(yo + k) * wv + xo] += taps[k] * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xo in 0..wv {
            let v = cols[y * wv + xo];
            for k in 0..SSIM_WINDOW {
                out[y * w + xo + k] += taps[k] * v;
            }
        }
    }
    out
}

fn plane(img: &[f64], c: usize) -> Vec<f64> {
    img.iter().skip(c).step_by(3).copied().collect()
}

fn ssim_impl(a: &[f64], b: &[f64], width: usize, height: usize, grad: bool) -> Result<(f64, Vec<f64>)> {
    check(a, b, width, height)?;
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(CoreError::Contract(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {width}x{height}"
        )));
    }
    let taps = gaussian_taps();
    let npos = (width + 1 - SSIM_WINDOW) * (height + 1 - SSIM_WINDOW);
    let norm = 1.0 / (3 * npos) as f64;
    let mut total = 0.0;
    let mut d = if grad { vec![0.0; a.len()] } else { Vec::new() };
    for c in 0..3 {
        let (x, y) = (plane(a, c), plane(b, c));
        let f = |v: &[f64]| filter_valid(v, width, height, &taps);
        let mx = f(&x);
        let my = f(&y);
        let exx = f(&x.iter().map(|v| v * v).collect::<Vec<_>>());
        let eyy = f(&y.iter().map(|v| v * v).collect::<Vec<_>>());
        let exy = f(&x.iter().zip(&y).map(|(p, q)| p * q).collect::<Vec<_>>());
        let mut ma = vec![0.0; npos];
        let mut mb = vec![0.0; npos];
        let mut mc = vec![0.0; npos];
        for p in 0..npos {
            let (ux, uy) = (mx[p], my[p]);
            let sxx = exx[p] - ux * ux;
            let syy = eyy[p] - uy * uy;
            let sxy = exy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = sxx + syy + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if grad {
                let ds_dux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
                let ds_dsxx = -s / b2;
                let ds_dsxy = 2.0 * a1 / (b1 * b2);
                ma[p] = norm * (ds_dux - 2.0 * ds_dsxx * ux - ds_dsxy * uy);
                mb[p] = norm * 2.0 * ds_dsxx;
                mc[p] = norm * ds_dsxy;
            }
        }
        if grad {
            let ba = filter_adjoint(&ma, width, height, &taps);
            let bb = filter_adjoint(&mb, width, height, &taps);
            let bc = filter_adjoint(&mc, width, height, &taps);
            for i in 0..width * height {
                d[3 * i + c] = ba[i] + x[i] * bb[i] + y[i] * bc[i];
            }
        }
    }
    Ok((total * norm, d))
}

/// Mean SSIM of `a` against `b`.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    Ok(ssim_impl(a, b, width, height, false)?.0)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<(f64, Vec<f64>)> {
    ssim_impl(a, b, width, height, true)
}

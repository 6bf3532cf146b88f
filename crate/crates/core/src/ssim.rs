//! Windowed SSIM on single-channel maps, with its gradient.
//!
//! Windows are truncated at the image border and renormalized over the
//! pixels they still cover. An optional mask removes pixels from every
//! window and from the mean.

use crate::error::{Error, Result};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

fn kernel() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// `out[p] = Σ_q g(q − p) f[q]` over in-image `q`. The kernel is symmetric,
/// so this is also its own adjoint.
fn blur(f: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &f[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut s = 0.0;
            for q in lo..=hi {
                s += k[q + r - x] * row[q];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut s = 0.0;
            for q in lo..=hi {
                s += k[q + r - y] * tmp[q * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

pub(crate) struct Ssim {
    /// Mean local SSIM over the counted pixels.
    pub mean: f64,
    /// d mean / d x, when requested.
    pub grad: Option<Vec<f64>>,
}

/// SSIM between `x` and `y` (row-major `w`×`h`), averaged over pixels
/// whose mask is set.
pub(crate) fn ssim_channel(
    x: &[f64],
    y: &[f64],
    w: usize,
    h: usize,
    mask: Option<&[bool]>,
    with_grad: bool,
) -> Result<Ssim> {
    let k = kernel();
    let n = w * h;
    let m: Vec<f64> = match mask {
        Some(mask) => mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        None => vec![1.0; n],
    };
    let prod = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|i| m[i] * f(i)).collect();
        blur(&v, w, h, &k)
    };
    let z = blur(&m, w, h, &k);
    let sx = prod(&|i| x[i]);
    let sy = prod(&|i| y[i]);
    let sxx = prod(&|i| x[i] * x[i]);
    let syy = prod(&|i| y[i] * y[i]);
    let sxy = prod(&|i| x[i] * y[i]);

    let mut count = 0usize;
    let mut total = 0.0;
    let mut coef = if with_grad {
        Some((vec![0.0; n], vec![0.0; n], vec![0.0; n]))
    } else {
        None
    };
    let mut local = vec![None; n];
    for p in 0..n {
        if m[p] == 0.0 || z[p] <= 0.0 {
            continue;
        }
        let mx = sx[p] / z[p];
        let my = sy[p] / z[p];
        let vx = sxx[p] / z[p] - mx * mx;
        let vy = syy[p] / z[p] - my * my;
        let cxy = sxy[p] / z[p] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * cxy + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = vx + vy + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        count += 1;
        local[p] = Some((mx, my, s, a1, a2, b1, b2));
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mean = total / count as f64;
    let grad = coef.as_mut().map(|(ca, cv, cc)| {
        for p in 0..n {
            let Some((mx, my, s, a1, a2, b1, b2)) = local[p] else {
                continue;
            };
            let d_mx = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * s / b1;
            let d_vx = -s / b2;
            let d_cxy = 2.0 * a1 / (b1 * b2);
            let scale = 1.0 / (count as f64 * z[p]);
            ca[p] = (d_mx - 2.0 * d_vx * mx - d_cxy * my) * scale;
            cv[p] = d_vx * scale;
            cc[p] = d_cxy * scale;
        }
        let ga = blur(ca, w, h, &k);
        let gv = blur(cv, w, h, &k);
        let gc = blur(cc, w, h, &k);
        (0..n)
            .map(|q| m[q] * (ga[q] + 2.0 * x[q] * gv[q] + y[q] * gc[q]))
            .collect()
    });
    Ok(Ssim { mean, grad })
}

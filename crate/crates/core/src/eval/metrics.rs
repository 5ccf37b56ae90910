use crate::error::{Error, Result};

/// Returned for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * (mse / (max_val * max_val)).log10()).min(PSNR_CAP)
}

/// PSNR in dB of two equally sized images.
pub fn psnr(a: &[f64], b: &[f64], max_val: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("psnr", &[a.len()], &[b.len()]));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse, max_val))
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-region separable filtering of one channel.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of `[H,W,C]` images in `[0,1]`, averaged over channels.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, c: usize) -> Result<f64> {
    if a.len() != h * w * c || b.len() != a.len() {
        return Err(Error::shape("ssim", &[h, w, c], &[a.len(), b.len()]));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract("ssim", format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let k = ssim_taps();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = (0..h * w).map(|i| a[i * c + ch]).collect();
        let y: Vec<f64> = (0..h * w).map(|i| b[i * c + ch]).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let (mx, my) = (filter(&x, h, w, &k), filter(&y, h, w, &k));
        let (sxx, syy, sxy) = (
            filter(&prod(&x, &x), h, w, &k),
            filter(&prod(&y, &y), h, w, &k),
            filter(&prod(&x, &y), h, w, &k),
        );
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let (vx, vy, cxy) = (sxx[i] - ux * ux, syy[i] - uy * uy, sxy[i] - ux * uy);
            sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / c as f64)
}

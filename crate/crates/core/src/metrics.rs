//! Reconstruction quality: MSE, PSNR and SSIM.
//!
//! PSNR and SSIM work on images in [0, 1]; [`to_unit_range`] maps the
//! internal [−1, 1] representation there.

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("mse", "length", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(1/mse)`; `+∞` for identical images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

pub fn to_unit_range(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| (v + 1.0) / 2.0).collect()
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * wo];
    for i in 0..h {
        for j in 0..wo {
            rows[i * wo + j] = (0..n).map(|t| g[t] * plane[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            out[i * wo + j] = (0..n).map(|t| g[t] * rows[(i + t) * wo + j]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64]) -> f64 {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter(a, h, w, g);
    let mu_b = filter(b, h, w, g);
    let aa = filter(&prod(a, a), h, w, g);
    let bb = filter(&prod(b, b), h, w, g);
    let ab = filter(&prod(a, b), h, w, g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean SSIM of two `(C, H, W)` images in [0, 1] (11×11 Gaussian window,
/// σ = 1.5, valid positions only), averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape("ssim", b)?;
    if a.ndim() != 3 {
        return Err(Error::shape("ssim", "image", "(C, H, W)", a.shape()));
    }
    let (c, h, w) = (a.dim(0), a.dim(1), a.dim(2));
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let g = gaussian_window();
    let plane = h * w;
    let sum: f64 = (0..c)
        .map(|i| {
            let r = i * plane..(i + 1) * plane;
            ssim_plane(&a.data()[r.clone()], &b.data()[r], h, w, &g)
        })
        .sum();
    Ok(sum / c as f64)
}

/// Per-image metrics of a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Mean squared error on the [−1, 1] scale.
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Metrics for every image of two `(B, C, H, W)` batches given in [−1, 1].
pub fn batch_metrics(x: &Tensor, x_hat: &Tensor) -> Result<Vec<MetricReport>> {
    x.check_same_shape("batch_metrics", x_hat)?;
    if x.ndim() != 4 {
        return Err(Error::shape("batch_metrics", "batch", "(B, C, H, W)", x.shape()));
    }
    let per = x.len() / x.dim(0);
    let shape = &x.shape()[1..];
    x.data()
        .chunks_exact(per)
        .zip(x_hat.data().chunks_exact(per))
        .map(|(a, b)| {
            let ua = Tensor::from_vec(shape, to_unit_range(a))?;
            let ub = Tensor::from_vec(shape, to_unit_range(b))?;
            Ok(MetricReport {
                mse: mse(a, b)?,
                psnr_db: psnr(ua.data(), ub.data())?,
                ssim: ssim(&ua, &ub)?,
            })
        })
        .collect()
}

/// Per-image-then-average summary.
pub fn average(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some(MetricReport {
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        psnr_db: reports.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_and_psnr_values() {
        assert_eq!(mse(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        assert_eq!(psnr_from_mse(0.0), f64::INFINITY);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ssim_rejects_small_images() {
        let t = Tensor::zeros(&[1, 8, 8]);
        assert!(matches!(ssim(&t, &t), Err(Error::ImageTooSmall { .. })));
    }
}

use ujscc_core::metrics::{batch_metrics, mse, psnr_from_mse, ssim};
use ujscc_core::nn::{SeededRng, Tensor};

/// 64-bit LCG shared with the reference script so both sides see the same
/// pixels.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn image(&mut self) -> Vec<f64> {
        (0..3072).map(|_| self.next()).collect()
    }
}

fn pair(seed: u64) -> (Tensor, Tensor) {
    let mut r = Lcg(seed);
    let a = r.image();
    let u = r.image();
    let b = a.iter().zip(&u).map(|(p, q)| 0.6 * p + 0.4 * q).collect();
    (Tensor::from_vec(&[3, 32, 32], a).unwrap(), Tensor::from_vec(&[3, 32, 32], b).unwrap())
}

// scikit-image structural_similarity(gaussian_weights=True, sigma=1.5,
// use_sample_covariance=False, data_range=1, channel_axis=0).
const REFERENCE: [f64; 10] = [
    0.7856550884667346,
    0.7845565677084968,
    0.7806427276052973,
    0.7752430462489249,
    0.8025335469390558,
    0.7955335835255511,
    0.7815423699811098,
    0.7908562097207493,
    0.7854012210976299,
    0.7924606386820918,
];

#[test]
fn ssim_matches_reference() {
    for (i, &expected) in REFERENCE.iter().enumerate() {
        let (a, b) = pair(i as u64 + 1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-6, "pair {}: {got} vs {expected}", i + 1);
    }
    let a = Tensor::filled(&[3, 32, 32], 0.2);
    let b = Tensor::filled(&[3, 32, 32], 0.7);
    assert!((ssim(&a, &b).unwrap() - 0.5283908696472038).abs() < 1e-6);
}

#[test]
fn ssim_identity_symmetry_and_bound() {
    let (a, b) = pair(42);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    assert!(ssim(&a, &b).unwrap() < 1.0);
}

#[test]
fn psnr_decreases_with_mse() {
    let values: Vec<f64> = [1e-6, 1e-4, 0.01, 0.1, 1.0, 4.0].iter().map(|&m| psnr_from_mse(m)).collect();
    assert!(values.windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn mse_scales_quadratically() {
    let mut rng = SeededRng::new(1);
    let a: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
    let b: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
    let base = mse(&a, &b).unwrap();
    let sa: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
    let sb: Vec<f64> = b.iter().map(|v| 3.0 * v).collect();
    assert!((mse(&sa, &sb).unwrap() - 9.0 * base).abs() < 1e-12);
}

#[test]
fn batch_metrics_use_unit_range() {
    let x = Tensor::filled(&[2, 3, 16, 16], -1.0);
    let y = Tensor::filled(&[2, 3, 16, 16], -0.8);
    let m = batch_metrics(&x, &y).unwrap();
    assert_eq!(m.len(), 2);
    // 0.2 apart on [−1, 1] is 0.1 apart on [0, 1]: 20 dB.
    assert!((m[0].psnr_db - 20.0).abs() < 1e-9);
    assert!((m[0].mse - 0.04).abs() < 1e-15);
}

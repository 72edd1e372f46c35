use proptest::prelude::*;
use ujscc_core::nn::{SeededRng, Tensor};
use ujscc_core::vq::{dequantize, quantize, Codebook, IndexVector};

fn brute(y: &[f64], cb: &Codebook) -> usize {
    let mut best = (f64::INFINITY, 0);
    for j in 0..cb.size() {
        let d: f64 = y.iter().zip(cb.codeword(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantize_is_brute_force_nearest(seed in any::<u64>(), m_pow in 1u32..7, d in 1usize..6, n in 1usize..40) {
        let mut rng = SeededRng::new(seed);
        let cb = Codebook::new(1 << m_pow, d, &mut rng);
        let data: Vec<f64> = (0..n * d).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let y = Tensor::from_vec(&[n, d], data.clone()).unwrap();
        let z = quantize(&y, &cb).unwrap();
        prop_assert_eq!(z.len(), n);
        for (i, row) in data.chunks(d).enumerate() {
            prop_assert_eq!(z.as_slice()[i], brute(row, &cb));
        }
    }

    #[test]
    fn requantizing_codewords_is_idempotent(seed in any::<u64>(), d in 1usize..6, n in 1usize..40) {
        let mut rng = SeededRng::new(seed);
        let cb = Codebook::new(16, d, &mut rng);
        let z = IndexVector((0..n).map(|_| rng.index(16)).collect());
        let c = dequantize(&z, &cb).unwrap();
        let z2 = quantize(&c, &cb).unwrap();
        let c2 = dequantize(&z2, &cb).unwrap();
        prop_assert_eq!(c, c2);
    }
}

#[test]
fn quantize_handles_leading_axes() {
    let mut rng = SeededRng::new(5);
    let cb = Codebook::new(4, 3, &mut rng);
    let y = Tensor::from_vec(&[2, 5, 3], (0..30).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let z = quantize(&y, &cb).unwrap();
    assert_eq!(z.len(), 10);
    assert_eq!(dequantize(&z, &cb).unwrap().shape(), &[10, 3]);
}

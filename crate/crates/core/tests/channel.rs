use num_complex::Complex64;
use ujscc_core::channel::{analytic_ser, detect, measure_ser, modulate, transmit, ChannelRealization, Constellation};
use ujscc_core::codec::MODULATION_ORDERS;
use ujscc_core::nn::SeededRng;
use ujscc_core::vq::IndexVector;

#[test]
fn noise_power_matches_snr() {
    let mut rng = SeededRng::new(21);
    let zeros = vec![Complex64::new(0.0, 0.0); 1_000_000];
    for snr in [0.0, 10.0, 25.0] {
        let ch = ChannelRealization::new(snr);
        let r = transmit(&zeros, &ch, &mut rng);
        let n = r.len() as f64;
        let p = r.iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
        let pre = r.iter().map(|c| c.re * c.re).sum::<f64>() / n;
        let mean = r.iter().map(|c| c.re + c.im).sum::<f64>() / n;
        assert!((p / ch.noise_var - 1.0).abs() < 0.01, "snr {snr}: {p}");
        assert!((pre / (ch.noise_var / 2.0) - 1.0).abs() < 0.01);
        assert!(mean.abs() < 5.0 * ch.noise_var.sqrt() / n.sqrt());
    }
}

#[test]
fn monte_carlo_ser_agrees_with_closed_form() {
    let mut rng = SeededRng::new(22);
    let trials = 100_000;
    for m in MODULATION_ORDERS {
        for snr in [0.0, 5.0, 10.0, 15.0, 20.0] {
            let p = analytic_ser(m, snr).unwrap();
            let est = measure_ser(m, snr, trials, &mut rng).unwrap();
            if p * trials as f64 >= 10.0 {
                let tol = 4.0 * est.std_err_at(p);
                assert!((est.ser() - p).abs() <= tol, "m={m} snr={snr}: {} vs {p}", est.ser());
            } else {
                assert!(est.errors <= 30, "m={m} snr={snr}: {} errors", est.errors);
            }
        }
    }
}

#[test]
fn transmit_and_detect_chain_matches_closed_form() {
    let mut rng = SeededRng::new(23);
    let m = 16;
    let c = Constellation::new(m).unwrap();
    let z = IndexVector((0..200_000).map(|_| rng.index(m)).collect());
    let s = modulate(&z, &c).unwrap();
    let snr = 12.0;
    let r = transmit(&s, &ChannelRealization::new(snr), &mut rng);
    let z_hat = detect(&r, &c);
    let errors = z.as_slice().iter().zip(z_hat.as_slice()).filter(|(a, b)| a != b).count();
    let ser = errors as f64 / z.len() as f64;
    let p = analytic_ser(m, snr).unwrap();
    let se = (p * (1.0 - p) / z.len() as f64).sqrt();
    assert!((ser - p).abs() < 4.0 * se, "{ser} vs {p}");
}

#[test]
fn ser_falls_with_snr_and_rises_with_order() {
    for m in MODULATION_ORDERS {
        let v: Vec<f64> = (0..=30).map(|s| analytic_ser(m, s as f64).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0] || w[0] == 0.0), "m={m}");
    }
    for snr in [5.0, 15.0, 25.0] {
        let v: Vec<f64> = MODULATION_ORDERS.iter().map(|&m| analytic_ser(m, snr).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]), "{v:?}");
    }
}

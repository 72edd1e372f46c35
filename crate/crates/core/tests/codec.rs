use ujscc_core::codec::{ArchitectureConfig, Codec, SchemeVariant, Setting, Slot, System};
use ujscc_core::nn::{Mode, SeededRng, Tensor};

fn totals(setting: Setting, variant: SchemeVariant) -> (usize, usize) {
    let arch = ArchitectureConfig::for_setting(setting);
    let sys = System::build(&arch, variant, &mut SeededRng::new(0)).unwrap();
    let c = sys.param_count();
    (c.total, c.bn)
}

#[test]
fn parameter_table() {
    use SchemeVariant::*;
    use Setting::*;
    let expected = [
        (Basic, Ujscc, 258098, 6514),
        (Basic, Me, 252902, 1318),
        (Basic, Te, 1203634, 6514),
        (Large, Ujscc, 1009734, 12998),
        (Large, Me, 999366, 2630),
        (Large, Te, 4753478, 12998),
        (MoreSymbols, Ujscc, 344114, 6514),
        (MoreSymbols, Me, 338918, 1318),
        (MoreSymbols, Te, 1633714, 6514),
    ];
    for (s, v, total, bn) in expected {
        assert_eq!(totals(s, v), (total, bn), "{s} {v}");
    }
}

#[test]
fn per_layer_breakdown_sums_to_total() {
    let arch = ArchitectureConfig::basic();
    let codec = Codec::new(&arch, &arch.dims, &mut SeededRng::new(1)).unwrap();
    let c = codec.param_count();
    assert_eq!(c.layers.len(), 16);
    let sum: usize = c.layers.iter().map(|(_, l)| l.weights + l.bn).sum();
    assert_eq!(sum, c.total);
    let inner = c.layers.iter().find(|(n, _)| n == "inner_enc").unwrap().1;
    assert_eq!(inner.weights, 32 * 16 * 25);
    assert_eq!(inner.bn, 2 * (2 + 4 + 8 + 12 + 16));
}

fn images(b: usize, rng: &mut SeededRng) -> Tensor {
    Tensor::uniform(&[b, 3, 32, 32], -1.0, 1.0, rng)
}

#[test]
fn encode_shapes_and_range() {
    let mut rng = SeededRng::new(2);
    let x = images(2, &mut rng);
    let arch = ArchitectureConfig::basic().with_channels(4, 8);
    let mut codec = Codec::new(&arch, &arch.dims, &mut rng).unwrap();
    for (k, &d) in arch.dims.iter().enumerate() {
        let y = codec.encode(&x, k, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 256, d]);
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
        let x_hat = codec.decode(&y, k, Mode::Eval).unwrap();
        assert_eq!(x_hat.shape(), &[2, 3, 32, 32]);
        assert!(x_hat.data().iter().all(|v| v.abs() < 1.0));
    }
    assert!(codec.encode(&x, 5, Mode::Eval).is_err());
    let wrong = Tensor::zeros(&[2, 256, 4]);
    assert!(codec.decode(&wrong, 0, Mode::Eval).is_err());
    let zero = Tensor::zeros(&[1, 256, 8]);
    assert!(codec.decode(&zero, 2, Mode::Eval).unwrap().is_finite());

    let arch = ArchitectureConfig::more_symbols().with_channels(4, 8);
    let mut codec = Codec::new(&arch, &arch.dims, &mut rng).unwrap();
    let y = codec.encode(&images(1, &mut rng), 4, Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[1, 1024, 16]);
}

#[test]
fn inner_filters_beyond_width_get_zero_gradient() {
    let mut rng = SeededRng::new(3);
    let arch = ArchitectureConfig::basic().with_channels(4, 8);
    let mut codec = Codec::new(&arch, &arch.dims, &mut rng).unwrap();
    let x = images(2, &mut rng);
    let k = 1;
    let y = codec.encode(&x, k, Mode::Train).unwrap();
    let x_hat = codec.decode(&y, k, Mode::Train).unwrap();
    let g = Tensor::randn(x_hat.shape(), &mut rng);
    let gy = codec.decode_backward(&g).unwrap();
    codec.encode_backward(&gy).unwrap();

    let width = arch.dims[k];
    for w in [codec.inner_encoder_weight(), codec.inner_decoder_weight()] {
        let per_filter = w.grad.len() / w.grad.dim(0);
        let (active, rest) = w.grad.data().split_at(width * per_filter);
        assert!(active.iter().any(|&v| v != 0.0));
        assert!(rest.iter().all(|&v| v == 0.0));
    }
}

/// Copies the path-`k` view of a universal codec into a single-path codec of
/// width `D_k`.
fn slice_into(src: &mut Codec, dst: &mut Codec, k: usize, width: usize) {
    let src_state: Vec<(String, Vec<f64>)> = src
        .state_mut()
        .into_iter()
        .map(|(n, s)| {
            let v = match s {
                Slot::Param(p) => p.value.data().to_vec(),
                Slot::Buffer(b) => b.clone(),
            };
            (n, v)
        })
        .collect();
    let lookup = |name: &str| src_state.iter().find(|(n, _)| n == name).map(|(_, v)| v.clone()).unwrap();
    for (name, slot) in dst.state_mut() {
        let src_name = name.replace(".bn.0.", &format!(".bn.{k}."));
        let mut v = lookup(&src_name);
        match slot {
            Slot::Param(p) => {
                if name.starts_with("inner_") && name.ends_with("conv.weight") {
                    v.truncate(p.len());
                    assert_eq!(p.value.dim(0), width);
                }
                p.value.data_mut().copy_from_slice(&v);
            }
            Slot::Buffer(b) => b.copy_from_slice(&v),
        }
    }
}

#[test]
fn path_matches_standalone_codec() {
    let mut rng = SeededRng::new(4);
    let arch = ArchitectureConfig::basic().with_channels(4, 8);
    let mut uni = Codec::new(&arch, &arch.dims, &mut rng).unwrap();
    // Give the BN layers non-trivial running statistics first.
    let warm = images(3, &mut rng);
    for k in 0..5 {
        let y = uni.encode(&warm, k, Mode::Train).unwrap();
        uni.decode(&y, k, Mode::Train).unwrap();
    }
    let x = images(2, &mut rng);
    for k in [0, 2, 4] {
        let width = arch.dims[k];
        let mut solo = Codec::new(&arch, &[width], &mut rng).unwrap();
        slice_into(&mut uni, &mut solo, k, width);
        for mode in [Mode::Eval, Mode::Train] {
            let a = uni.clone().encode(&x, k, mode).unwrap();
            let b = solo.clone().encode(&x, 0, mode).unwrap();
            let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "encode k={k} {mode:?} {diff}");
            let a = uni.clone().decode(&a, k, mode).unwrap();
            let b = solo.clone().decode(&b, 0, mode).unwrap();
            let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "decode k={k} {mode:?} {diff}");
        }
    }
}

#[test]
fn flops_table() {
    let ranges = [
        (Setting::Basic, 0.205e9, 0.210e9),
        (Setting::Large, 0.807e9, 0.830e9),
        (Setting::MoreSymbols, 0.324e9, 0.347e9),
    ];
    for (setting, first, last) in ranges {
        let arch = ArchitectureConfig::for_setting(setting);
        let sys = System::build(&arch, SchemeVariant::Ujscc, &mut SeededRng::new(0)).unwrap();
        for (k, target) in [(0, first), (4, last)] {
            let f = sys.flops(k).unwrap();
            for v in [f.encoder, f.decoder] {
                let rel = (v as f64 - target).abs() / target;
                assert!(rel <= 0.02, "{setting} k={k}: {v} vs {target}");
            }
        }
        let lo = sys.flops(0).unwrap().inner_encoder;
        let hi = sys.flops(4).unwrap().inner_encoder;
        assert_eq!(hi, 8 * lo);
        assert_eq!(lo, 2 * arch.symbols as u64 * 2 * arch.c1 as u64 * 25 * (arch.dims[0] / 2) as u64);
    }
}

#[test]
fn running_stats_of_other_paths_untouched() {
    let mut rng = SeededRng::new(5);
    let arch = ArchitectureConfig::basic().with_channels(4, 8);
    let mut codec = Codec::new(&arch, &arch.dims, &mut rng).unwrap();
    let before = codec.clone();
    let x = images(2, &mut rng);
    let y = codec.encode(&x, 3, Mode::Train).unwrap();
    codec.decode(&y, 3, Mode::Train).unwrap();
    for (a, b) in codec.bn_layers().iter().zip(before.bn_layers()) {
        for k in 0..5 {
            let (pa, pb) = (a.path(k).unwrap(), b.path(k).unwrap());
            if k == 3 {
                assert_ne!(pa.running_mean, pb.running_mean);
            } else {
                assert_eq!(pa.running_mean, pb.running_mean);
                assert_eq!(pa.running_std, pb.running_std);
            }
        }
    }
}

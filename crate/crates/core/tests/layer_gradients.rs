//! Finite-difference and adjoint checks for every layer of the engine.

use ujscc_core::nn::activation::{relu, relu_backward, tanh, tanh_backward};
use ujscc_core::nn::{
    conv_backward, conv_forward, gradcheck, tconv_backward, tconv_forward, ConvSpec, Mode, SeededRng,
    SwitchableBatchNorm, Tensor,
};

const TOL: f64 = 1e-4;

/// Random projection loss `L(y) = <y, r>`, so `dL/dy = r`.
fn projection(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::randn(shape, rng)
}

fn all(n: usize) -> std::ops::Range<usize> {
    0..n
}

#[test]
fn conv_gradcheck_random() {
    let mut rng = SeededRng::new(11);
    for spec in [
        ConvSpec::conv(3, 4, 3, 1, 1),
        ConvSpec::conv(3, 2, 2, 2, 0),
        ConvSpec::conv(3, 5, 5, 1, 2),
        ConvSpec::conv(3, 3, 1, 1, 0),
    ] {
        let x = Tensor::randn(&[2, 3, 8, 8], &mut rng);
        let w = spec.init_weight(&mut rng);
        let y = conv_forward(&x, &w, &spec).unwrap();
        let r = projection(y.shape(), &mut rng);
        let (gx, gw) = conv_backward(&x, &w, &r, &spec).unwrap();

        let loss_x = |v: &[f64]| {
            let xt = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
            conv_forward(&xt, &w, &spec).unwrap().dot(&r).unwrap()
        };
        let rep = gradcheck(loss_x, x.data(), gx.data(), all(x.len()), TOL);
        assert!(rep.passed(), "{spec:?} grad_x {rep:?}");

        let loss_w = |v: &[f64]| {
            let wt = Tensor::from_vec(w.shape(), v.to_vec()).unwrap();
            conv_forward(&x, &wt, &spec).unwrap().dot(&r).unwrap()
        };
        let rep = gradcheck(loss_w, w.data(), gw.data(), all(w.len()), TOL);
        assert!(rep.passed(), "{spec:?} grad_w {rep:?}");
    }
}

#[test]
fn tconv_gradcheck_random() {
    let mut rng = SeededRng::new(12);
    for spec in [
        ConvSpec::tconv(3, 4, 3, 1, 1),
        ConvSpec::tconv(3, 2, 2, 2, 0),
        ConvSpec::tconv(3, 4, 5, 1, 2),
        ConvSpec::tconv(3, 3, 1, 1, 0),
    ] {
        let x = Tensor::randn(&[2, 3, 6, 6], &mut rng);
        let w = spec.init_weight(&mut rng);
        let y = tconv_forward(&x, &w, &spec).unwrap();
        let r = projection(y.shape(), &mut rng);
        let (gx, gw) = tconv_backward(&x, &w, &r, &spec).unwrap();

        let loss_x = |v: &[f64]| {
            let xt = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
            tconv_forward(&xt, &w, &spec).unwrap().dot(&r).unwrap()
        };
        let rep = gradcheck(loss_x, x.data(), gx.data(), all(x.len()), TOL);
        assert!(rep.passed(), "{spec:?} grad_x {rep:?}");

        let loss_w = |v: &[f64]| {
            let wt = Tensor::from_vec(w.shape(), v.to_vec()).unwrap();
            tconv_forward(&x, &wt, &spec).unwrap().dot(&r).unwrap()
        };
        let rep = gradcheck(loss_w, w.data(), gw.data(), all(w.len()), TOL);
        assert!(rep.passed(), "{spec:?} grad_w {rep:?}");
    }
}

#[test]
fn conv_tconv_adjoint_identity() {
    let mut rng = SeededRng::new(13);
    for (c_in, c_out, f, s, p, h) in [(3, 4, 3, 1, 1, 7), (4, 2, 2, 2, 0, 8), (2, 5, 5, 1, 2, 6), (3, 3, 1, 1, 0, 5)] {
        let conv = ConvSpec::conv(c_in, c_out, f, s, p);
        // Same weight tensor read as a transpose convolution c_out -> c_in.
        let tconv = ConvSpec::tconv(c_out, c_in, f, s, p);
        let w = conv.init_weight(&mut rng);
        assert_eq!(conv.weight_shape(), tconv.weight_shape());

        let x = Tensor::randn(&[2, c_in, h, h], &mut rng);
        let cx = conv_forward(&x, &w, &conv).unwrap();
        let y = Tensor::randn(cx.shape(), &mut rng);
        let ty = tconv_forward(&y, &w, &tconv).unwrap();
        assert_eq!(ty.shape(), x.shape());

        let lhs = cx.dot(&y).unwrap();
        let rhs = x.dot(&ty).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");

        // tconv_forward equals the input gradient of the convolution.
        let (gx, _) = conv_backward(&x, &w, &y, &conv).unwrap();
        for (a, b) in gx.data().iter().zip(ty.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn sbn_check(mode: Mode, seed: u64) {
    let mut rng = SeededRng::new(seed);
    let dims = [3, 2];
    let mut bn = SwitchableBatchNorm::new(&dims);
    for path in bn.paths_mut() {
        path.gamma.value = Tensor::uniform(&[path.channels()], 0.5, 1.5, &mut rng);
        path.beta.value = Tensor::randn(&[path.channels()], &mut rng);
        path.running_mean = (0..path.channels()).map(|_| rng.normal()).collect();
        path.running_std = (0..path.channels()).map(|_| rng.uniform(0.5, 2.0)).collect();
    }
    let k = 1;
    let x = Tensor::randn(&[3, 2, 4, 4], &mut rng).map(|v| 2.0 * v + 0.3);
    let y = bn.forward(&x, k, mode).unwrap();
    let r = projection(y.shape(), &mut rng);
    let gx = bn.backward(&r).unwrap();

    let fresh = bn.clone();
    let loss_x = |v: &[f64]| {
        let mut b = fresh.clone();
        let xt = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
        b.forward(&xt, k, mode).unwrap().dot(&r).unwrap()
    };
    let rep = gradcheck(loss_x, x.data(), gx.data(), all(x.len()), TOL);
    assert!(rep.passed(), "{mode:?} grad_x {rep:?}");

    let gamma = bn.path(k).unwrap().gamma.value.clone();
    let gg = bn.path(k).unwrap().gamma.grad.clone();
    let loss_g = |v: &[f64]| {
        let mut b = fresh.clone();
        b.path_mut(k).unwrap().gamma.value = Tensor::from_vec(gamma.shape(), v.to_vec()).unwrap();
        b.forward(&x, k, mode).unwrap().dot(&r).unwrap()
    };
    let rep = gradcheck(loss_g, gamma.data(), gg.data(), all(gamma.len()), TOL);
    assert!(rep.passed(), "{mode:?} grad_gamma {rep:?}");

    let beta = bn.path(k).unwrap().beta.value.clone();
    let gb = bn.path(k).unwrap().beta.grad.clone();
    let loss_b = |v: &[f64]| {
        let mut b = fresh.clone();
        b.path_mut(k).unwrap().beta.value = Tensor::from_vec(beta.shape(), v.to_vec()).unwrap();
        b.forward(&x, k, mode).unwrap().dot(&r).unwrap()
    };
    let rep = gradcheck(loss_b, beta.data(), gb.data(), all(beta.len()), TOL);
    assert!(rep.passed(), "{mode:?} grad_beta {rep:?}");

    // The other path's gradients stay untouched.
    assert_eq!(bn.path(0).unwrap().gamma.grad.max_abs(), 0.0);
}

#[test]
fn sbn_gradcheck_train() {
    sbn_check(Mode::Train, 21);
}

#[test]
fn sbn_gradcheck_eval() {
    sbn_check(Mode::Eval, 22);
}

#[test]
fn sbn_eval_is_affine_closed_form() {
    let mut rng = SeededRng::new(23);
    let mut bn = SwitchableBatchNorm::new(&[4]);
    // Populate running stats with a few training passes.
    for _ in 0..5 {
        let x = Tensor::randn(&[4, 4, 3, 3], &mut rng).map(|v| 1.7 * v - 0.4);
        bn.forward(&x, 0, Mode::Train).unwrap();
    }
    let (scale, shift) = bn.path(0).unwrap().folded(bn.eps);
    let x = Tensor::randn(&[2, 4, 3, 3], &mut rng);
    let y = bn.forward(&x, 0, Mode::Eval).unwrap();
    for (i, (&xi, &yi)) in x.data().iter().zip(y.data()).enumerate() {
        let c = (i / 9) % 4;
        assert!((scale[c] * xi + shift[c] - yi).abs() < 1e-12);
    }
    // Affine per channel: f(2x) - 2 f(x) = -shift.
    let y2 = bn.forward(&x.map(|v| 2.0 * v), 0, Mode::Eval).unwrap();
    for (i, (&a, &b)) in y2.data().iter().zip(y.data()).enumerate() {
        let c = (i / 9) % 4;
        assert!((a - 2.0 * b + shift[c]).abs() < 1e-12);
    }
}

#[test]
fn activation_gradcheck() {
    let mut rng = SeededRng::new(31);
    let x = Tensor::randn(&[2, 3, 4, 4], &mut rng);
    let r = projection(x.shape(), &mut rng);

    let gx = relu_backward(&relu(&x), &r).unwrap();
    let loss = |v: &[f64]| relu(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).dot(&r).unwrap();
    let rep = gradcheck(loss, x.data(), gx.data(), all(x.len()), TOL);
    assert!(rep.passed(), "relu {rep:?}");

    let gx = tanh_backward(&tanh(&x), &r).unwrap();
    let loss = |v: &[f64]| tanh(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).dot(&r).unwrap();
    let rep = gradcheck(loss, x.data(), gx.data(), all(x.len()), TOL);
    assert!(rep.passed(), "tanh {rep:?}");
}

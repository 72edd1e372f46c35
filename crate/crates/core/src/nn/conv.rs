//! 2-D convolution and transpose convolution without bias.
//!
//! Weights follow the usual layouts: `(c_out, c_in, f, f)` for a forward
//! convolution and `(c_in, c_out, f, f)` for a transpose convolution. In both
//! cases the leading axis indexes the filters, so restricting a layer to its
//! first `d` filters is a prefix slice of the weight buffer.

use crate::error::{Error, Result};
use crate::nn::{Param, SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub transpose: bool,
}

impl ConvSpec {
    pub const fn conv(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            transpose: false,
        }
    }

    pub const fn tconv(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            transpose: true,
        }
    }

    /// Spatial output size for an input of size `input`, or `None` when the
    /// geometry is degenerate.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if s == 0 || k == 0 || input == 0 {
            return None;
        }
        if self.transpose {
            ((input - 1) * s + k).checked_sub(2 * p).filter(|&o| o > 0)
        } else {
            (input + 2 * p).checked_sub(k).map(|span| span / s + 1)
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let (a, b) = if self.transpose {
            (self.c_in, self.c_out)
        } else {
            (self.c_out, self.c_in)
        };
        [a, b, self.kernel, self.kernel]
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Number of filters along the weight's leading axis.
    pub fn filters(&self) -> usize {
        self.weight_shape()[0]
    }

    fn fan_in(&self) -> usize {
        let taps = self.kernel * self.kernel;
        if self.transpose {
            (self.c_in * taps / (self.stride * self.stride)).max(1)
        } else {
            self.c_in * taps
        }
    }

    /// Kaiming-uniform weights, bound `sqrt(6 / fan_in)`.
    pub fn init_weight(&self, rng: &mut SeededRng) -> Tensor {
        let bound = (6.0 / self.fan_in() as f64).sqrt();
        Tensor::uniform(&self.weight_shape(), -bound, bound, rng)
    }
}

/// Geometry of the forward-convolution view of a layer: the convolution reads
/// `(c, h, w)` and writes `(·, ho, wo)`. A transpose convolution runs this
/// view backwards.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.s == 1 && self.p == 0
    }
}

fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let n = g.cols();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * g.s + kx) as isize - g.p as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, x: &mut [f64]) {
    let n = g.cols();
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.s + kx) as isize - g.p as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = op(a) · op(b) + beta · c` with `op(a)` of size `m × k` and `op(b)` of
/// size `k × n`, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can produce.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward convolution over a batch: `x` is `(batch, g.c, g.h, g.w)`, `weight`
/// holds `filters` rows of `g.rows()` taps.
fn conv_raw(x: &[f64], batch: usize, g: &Geometry, weight: &[f64], filters: usize) -> Vec<f64> {
    let (in_len, out_len) = (g.c * g.h * g.w, filters * g.cols());
    let mut out = vec![0.0; batch * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.rows() * g.cols()]
    };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let rhs = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(filters, g.rows(), g.cols(), weight, false, rhs, false, 0.0, &mut out[b * out_len..(b + 1) * out_len]);
    }
    out
}

/// Adjoint of [`conv_raw`] with respect to its input: maps `(batch, filters,
/// g.ho, g.wo)` back to `(batch, g.c, g.h, g.w)`.
fn conv_input_adjoint(gy: &[f64], batch: usize, g: &Geometry, weight: &[f64], filters: usize) -> Vec<f64> {
    let (in_len, out_len) = (g.c * g.h * g.w, filters * g.cols());
    let mut gx = vec![0.0; batch * in_len];
    let mut cols = vec![0.0; g.rows() * g.cols()];
    for b in 0..batch {
        let gyb = &gy[b * out_len..(b + 1) * out_len];
        let gxb = &mut gx[b * in_len..(b + 1) * in_len];
        if g.is_pointwise() {
            gemm(g.rows(), filters, g.cols(), weight, true, gyb, false, 0.0, gxb);
        } else {
            gemm(g.rows(), filters, g.cols(), weight, true, gyb, false, 0.0, &mut cols);
            col2im(&cols, g, gxb);
        }
    }
    gx
}

/// Accumulates `Σ_b gy_b · cols(x_b)^T` into `grad_w` (`filters × g.rows()`).
fn conv_weight_grad(x: &[f64], gy: &[f64], batch: usize, g: &Geometry, filters: usize, grad_w: &mut [f64]) {
    let (in_len, out_len) = (g.c * g.h * g.w, filters * g.cols());
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.rows() * g.cols()]
    };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let rhs = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(filters, g.cols(), g.rows(), &gy[b * out_len..(b + 1) * out_len], false, rhs, true, 1.0, grad_w);
    }
}

fn check_input(op: &'static str, x: &Tensor, channels: usize) -> Result<(usize, usize, usize)> {
    if x.ndim() != 4 {
        return Err(Error::shape(op, "input rank", 4, x.ndim()));
    }
    if x.dim(1) != channels {
        return Err(Error::shape(op, "input channels", channels, x.dim(1)));
    }
    Ok((x.dim(0), x.dim(2), x.dim(3)))
}

fn spatial(op: &'static str, spec: &ConvSpec, h: usize, w: usize) -> Result<(usize, usize)> {
    match (spec.output_size(h), spec.output_size(w)) {
        (Some(ho), Some(wo)) => Ok((ho, wo)),
        _ => Err(Error::shape(op, "spatial size", format!("input compatible with {spec:?}"), (h, w))),
    }
}

/// Convolution of `x` with the first `filters` filters of `weight`.
pub(crate) fn conv_forward_sliced(x: &Tensor, weight: &[f64], spec: &ConvSpec, filters: usize) -> Result<Tensor> {
    let op = "conv_forward";
    let (batch, h, w) = check_input(op, x, spec.c_in)?;
    let (ho, wo) = spatial(op, spec, h, w)?;
    let g = Geometry { c: spec.c_in, h, w, k: spec.kernel, s: spec.stride, p: spec.padding, ho, wo };
    let out = conv_raw(x.data(), batch, &g, &weight[..filters * g.rows()], filters);
    Tensor::from_vec(&[batch, filters, ho, wo], out)
}

/// Returns `grad_x` (if requested) and accumulates into `grad_w`.
pub(crate) fn conv_backward_sliced(
    x: &Tensor,
    weight: &[f64],
    spec: &ConvSpec,
    filters: usize,
    grad_out: &Tensor,
    grad_w: &mut [f64],
    want_grad_x: bool,
) -> Result<Option<Tensor>> {
    let op = "conv_backward";
    let (batch, h, w) = check_input(op, x, spec.c_in)?;
    let (ho, wo) = spatial(op, spec, h, w)?;
    let expected = [batch, filters, ho, wo];
    if grad_out.shape() != expected {
        return Err(Error::shape(op, "grad_out", expected, grad_out.shape()));
    }
    let g = Geometry { c: spec.c_in, h, w, k: spec.kernel, s: spec.stride, p: spec.padding, ho, wo };
    let rows = g.rows();
    conv_weight_grad(x.data(), grad_out.data(), batch, &g, filters, &mut grad_w[..filters * rows]);
    if !want_grad_x {
        return Ok(None);
    }
    let gx = conv_input_adjoint(grad_out.data(), batch, &g, &weight[..filters * rows], filters);
    Tensor::from_vec(x.shape(), gx).map(Some)
}

/// Transpose convolution of `y` whose channels are the first `filters`
/// filters of `weight`.
pub(crate) fn tconv_forward_sliced(y: &Tensor, weight: &[f64], spec: &ConvSpec, filters: usize) -> Result<Tensor> {
    let op = "tconv_forward";
    let (batch, h, w) = check_input(op, y, filters)?;
    let (ho, wo) = spatial(op, spec, h, w)?;
    let g = Geometry { c: spec.c_out, h: ho, w: wo, k: spec.kernel, s: spec.stride, p: spec.padding, ho: h, wo: w };
    let out = conv_input_adjoint(y.data(), batch, &g, &weight[..filters * g.rows()], filters);
    Tensor::from_vec(&[batch, spec.c_out, ho, wo], out)
}

pub(crate) fn tconv_backward_sliced(
    y: &Tensor,
    weight: &[f64],
    spec: &ConvSpec,
    filters: usize,
    grad_out: &Tensor,
    grad_w: &mut [f64],
    want_grad_y: bool,
) -> Result<Option<Tensor>> {
    let op = "tconv_backward";
    let (batch, h, w) = check_input(op, y, filters)?;
    let (ho, wo) = spatial(op, spec, h, w)?;
    let expected = [batch, spec.c_out, ho, wo];
    if grad_out.shape() != expected {
        return Err(Error::shape(op, "grad_out", expected, grad_out.shape()));
    }
    let g = Geometry { c: spec.c_out, h: ho, w: wo, k: spec.kernel, s: spec.stride, p: spec.padding, ho: h, wo: w };
    let rows = g.rows();
    // The transpose convolution's weight gradient is the forward convolution's
    // weight gradient with the roles of input and output swapped.
    conv_weight_grad(grad_out.data(), y.data(), batch, &g, filters, &mut grad_w[..filters * rows]);
    if !want_grad_y {
        return Ok(None);
    }
    let gy = conv_raw(grad_out.data(), batch, &g, &weight[..filters * rows], filters);
    Tensor::from_vec(y.shape(), gy).map(Some)
}

fn check_weight(op: &'static str, w: &Tensor, spec: &ConvSpec) -> Result<()> {
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape(op, "weight", spec.weight_shape(), w.shape()));
    }
    Ok(())
}

fn check_kind(op: &'static str, spec: &ConvSpec, transpose: bool) -> Result<()> {
    if spec.transpose != transpose {
        return Err(Error::Config(format!("{op}: spec.transpose must be {transpose}")));
    }
    Ok(())
}

pub fn conv_forward(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    check_kind("conv_forward", spec, false)?;
    check_weight("conv_forward", w, spec)?;
    conv_forward_sliced(x, w.data(), spec, spec.c_out)
}

/// Returns `(grad_x, grad_w)`.
pub fn conv_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor, spec: &ConvSpec) -> Result<(Tensor, Tensor)> {
    check_kind("conv_backward", spec, false)?;
    check_weight("conv_backward", w, spec)?;
    let mut gw = Tensor::zeros(w.shape());
    let gx = conv_backward_sliced(x, w.data(), spec, spec.c_out, grad_out, gw.data_mut(), true)?;
    Ok((gx.expect("requested"), gw))
}

pub fn tconv_forward(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    check_kind("tconv_forward", spec, true)?;
    check_weight("tconv_forward", w, spec)?;
    tconv_forward_sliced(x, w.data(), spec, spec.c_in)
}

/// Returns `(grad_x, grad_w)`.
pub fn tconv_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor, spec: &ConvSpec) -> Result<(Tensor, Tensor)> {
    check_kind("tconv_backward", spec, true)?;
    check_weight("tconv_backward", w, spec)?;
    let mut gw = Tensor::zeros(w.shape());
    let gx = tconv_backward_sliced(x, w.data(), spec, spec.c_in, grad_out, gw.data_mut(), true)?;
    Ok((gx.expect("requested"), gw))
}

/// Convolution layer owning its weight, optionally restricted to a prefix of
/// its filters on each call.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Param,
    input: Option<Tensor>,
    active: usize,
}

impl ConvLayer {
    pub fn new(spec: ConvSpec, rng: &mut SeededRng) -> Self {
        ConvLayer {
            spec,
            weight: Param::new(spec.init_weight(rng)),
            input: None,
            active: 0,
        }
    }

    /// Runs the layer with its first `filters` filters. For a forward
    /// convolution this narrows the output channels, for a transpose
    /// convolution the input channels.
    pub fn forward(&mut self, x: &Tensor, filters: usize, keep_cache: bool) -> Result<Tensor> {
        if filters == 0 || filters > self.spec.filters() {
            return Err(Error::shape("ConvLayer::forward", "active filters", self.spec.filters(), filters));
        }
        let out = if self.spec.transpose {
            tconv_forward_sliced(x, self.weight.value.data(), &self.spec, filters)?
        } else {
            conv_forward_sliced(x, self.weight.value.data(), &self.spec, filters)?
        };
        self.input = keep_cache.then(|| x.clone());
        self.active = filters;
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor, want_grad_input: bool) -> Result<Option<Tensor>> {
        let x = self.input.take().ok_or(Error::MissingCache("ConvLayer"))?;
        let Param { value, grad } = &mut self.weight;
        if self.spec.transpose {
            tconv_backward_sliced(&x, value.data(), &self.spec, self.active, grad_out, grad.data_mut(), want_grad_input)
        } else {
            conv_backward_sliced(&x, value.data(), &self.spec, self.active, grad_out, grad.data_mut(), want_grad_input)
        }
    }

    /// Multiply-add FLOPs of one forward pass on a `h × w` input with
    /// `filters` active filters (`2 · c_in · f² · c_out · H_out · W_out`).
    pub fn flops(&self, h: usize, w: usize, filters: usize) -> u64 {
        let s = &self.spec;
        let taps = s.kernel * s.kernel;
        if s.transpose {
            // Every input position scatters one f×f×c_out patch.
            2 * (filters * taps * s.c_out * h * w) as u64
        } else {
            let (ho, wo) = (s.output_size(h).unwrap_or(0), s.output_size(w).unwrap_or(0));
            2 * (s.c_in * taps * filters * ho * wo) as u64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes_match_formulas() {
        assert_eq!(ConvSpec::conv(3, 32, 5, 1, 2).output_size(32), Some(32));
        assert_eq!(ConvSpec::conv(64, 32, 2, 2, 0).output_size(32), Some(16));
        assert_eq!(ConvSpec::tconv(16, 32, 5, 1, 2).output_size(16), Some(16));
        assert_eq!(ConvSpec::tconv(32, 64, 2, 2, 0).output_size(16), Some(32));
        assert_eq!(ConvSpec::conv(1, 1, 5, 1, 0).output_size(3), None);
    }

    #[test]
    fn table_shapes() {
        let mut rng = SeededRng::new(1);
        let x = Tensor::randn(&[1, 3, 32, 32], &mut rng);
        let spec = ConvSpec::conv(3, 32, 5, 1, 2);
        let w = spec.init_weight(&mut rng);
        assert_eq!(conv_forward(&x, &w, &spec).unwrap().shape(), &[1, 32, 32, 32]);

        let x = Tensor::randn(&[1, 64, 32, 32], &mut rng);
        let spec = ConvSpec::conv(64, 32, 2, 2, 0);
        let w = spec.init_weight(&mut rng);
        assert_eq!(conv_forward(&x, &w, &spec).unwrap().shape(), &[1, 32, 16, 16]);

        let x = Tensor::randn(&[1, 16, 16, 16], &mut rng);
        let spec = ConvSpec::tconv(16, 32, 5, 1, 2);
        let w = spec.init_weight(&mut rng);
        assert_eq!(tconv_forward(&x, &w, &spec).unwrap().shape(), &[1, 32, 16, 16]);

        let x = Tensor::randn(&[1, 32, 16, 16], &mut rng);
        let spec = ConvSpec::tconv(32, 64, 2, 2, 0);
        let w = spec.init_weight(&mut rng);
        assert_eq!(tconv_forward(&x, &w, &spec).unwrap().shape(), &[1, 64, 32, 32]);
    }

    #[test]
    fn zero_weight_gives_zero_output() {
        let mut rng = SeededRng::new(2);
        let x = Tensor::randn(&[2, 3, 8, 8], &mut rng);
        let spec = ConvSpec::conv(3, 4, 3, 1, 1);
        let w = Tensor::zeros(&spec.weight_shape());
        assert!(conv_forward(&x, &w, &spec).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = SeededRng::new(3);
        let x = Tensor::randn(&[2, 3, 8, 8], &mut rng);
        let spec = ConvSpec::conv(3, 4, 3, 2, 1);
        let w = spec.init_weight(&mut rng);
        let y = conv_forward(&x, &w, &spec).unwrap();
        let (gx, gw) = conv_backward(&x, &w, &Tensor::zeros(y.shape()), &spec).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        assert_eq!(gw.max_abs(), 0.0);
    }

    #[test]
    fn sum_loss_weight_grad_is_window_sum() {
        // 3x3 input, 3x3 kernel, no padding: a single output equal to <x, w>,
        // so d(sum)/dw = x.
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let spec = ConvSpec::conv(1, 1, 3, 1, 0);
        let w = Tensor::filled(&spec.weight_shape(), 0.1);
        let y = conv_forward(&x, &w, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        let (_, gw) = conv_backward(&x, &w, &Tensor::filled(y.shape(), 1.0), &spec).unwrap();
        assert_eq!(gw.data(), x.data());
    }

    #[test]
    fn rejects_bad_shapes() {
        let spec = ConvSpec::conv(3, 4, 3, 1, 1);
        let w = Tensor::zeros(&spec.weight_shape());
        let err = conv_forward(&Tensor::zeros(&[1, 2, 8, 8]), &w, &spec).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let err = conv_forward(&Tensor::zeros(&[1, 3, 8, 8]), &Tensor::zeros(&[4, 3, 5, 5]), &spec).unwrap_err();
        assert!(err.to_string().contains("weight"), "{err}");
        assert!(tconv_forward(&Tensor::zeros(&[1, 3, 8, 8]), &w, &spec).is_err());
    }
}

//! The encoder/decoder stack.
//!
//! Outer encoder:
//!   Conv(3,c1,5,1,2)+BN+ReLU, Conv(c1,c2,5,1,2)+BN+ReLU, Res(c2)+ReLU,
//!   Conv(c2,c1,2,2,0) (N=256) or Conv(c2,c1,5,1,2) (N=1024) +BN+ReLU, Res(c1)+ReLU
//! Inner encoder: Conv(c1,D_K,5,1,2)+BN(D_1..D_K)+Tanh, reshaped to N × D_k
//! Inner decoder: T-Conv(D_K,c1,5,1,2)+BN+ReLU
//! Outer decoder:
//!   T-Res(c1)+ReLU, T-Conv(c1,c2,2,2,0) or T-Conv(c1,c2,5,1,2) +BN+ReLU,
//!   T-Res(c2)+ReLU, T-Conv(c2,c1,5,1,2)+BN+ReLU, T-Conv(c1,3,5,1,2)+BN+Tanh
//!
//! Res(c) is Conv(c,c,3,1,1)+BN+ReLU then Conv(c,c,1,1,0)+BN, added to the
//! block input before the final ReLU; T-Res mirrors it with transpose layers
//! in the order 1×1 then 3×3.

use crate::codec::arch::{ArchitectureConfig, IMAGE_SHAPE};
use crate::error::{Error, Result};
use crate::nn::activation::relu_backward;
use crate::nn::{Activation, ConvLayer, ConvSpec, Mode, Param, SeededRng, SwitchableBatchNorm, Tensor};

/// A mutable view of one named tensor of the model state.
pub enum Slot<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Vec<f64>),
}

type State<'a> = Vec<(String, Slot<'a>)>;

/// Convolution, switchable BN and activation.
#[derive(Debug, Clone)]
pub(crate) struct ConvUnit {
    pub conv: ConvLayer,
    pub bn: SwitchableBatchNorm,
    pub act: Activation,
    out: Option<Tensor>,
}

impl ConvUnit {
    fn new(spec: ConvSpec, bn_dims: &[usize], act: Activation, rng: &mut SeededRng) -> Self {
        ConvUnit {
            conv: ConvLayer::new(spec, rng),
            bn: SwitchableBatchNorm::new(bn_dims),
            act,
            out: None,
        }
    }

    fn forward(&mut self, x: &Tensor, path: usize, filters: usize, mode: Mode) -> Result<Tensor> {
        let train = mode == Mode::Train;
        let t = self.conv.forward(x, filters, train)?;
        let t = self.bn.forward(&t, path, mode)?;
        let out = self.act.forward(&t);
        self.out = train.then(|| out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, want_input: bool) -> Result<Option<Tensor>> {
        let out = self.out.take().ok_or(Error::MissingCache("ConvUnit"))?;
        let g = self.act.backward(&out, grad)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g, want_input)
    }

    fn relu_mask(&self, mask: &mut Vec<bool>) {
        if let (Activation::Relu, Some(o)) = (self.act, &self.out) {
            mask.extend(o.data().iter().map(|&v| v > 0.0));
        }
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut State<'a>) {
        out.push((format!("{prefix}.conv.weight"), Slot::Param(&mut self.conv.weight)));
        for (k, p) in self.bn.paths_mut().iter_mut().enumerate() {
            out.push((format!("{prefix}.bn.{k}.gamma"), Slot::Param(&mut p.gamma)));
            out.push((format!("{prefix}.bn.{k}.beta"), Slot::Param(&mut p.beta)));
            out.push((format!("{prefix}.bn.{k}.running_mean"), Slot::Buffer(&mut p.running_mean)));
            out.push((format!("{prefix}.bn.{k}.running_std"), Slot::Buffer(&mut p.running_std)));
        }
    }
}

/// Two-layer residual block with identity skip and a final ReLU.
#[derive(Debug, Clone)]
pub(crate) struct Residual {
    pub first: ConvUnit,
    pub second: ConvUnit,
    out: Option<Tensor>,
}

impl Residual {
    fn new(c: usize, transpose: bool, paths: usize, rng: &mut SeededRng) -> Self {
        let dims = vec![c; paths];
        let (a, b) = if transpose {
            (ConvSpec::tconv(c, c, 1, 1, 0), ConvSpec::tconv(c, c, 3, 1, 1))
        } else {
            (ConvSpec::conv(c, c, 3, 1, 1), ConvSpec::conv(c, c, 1, 1, 0))
        };
        Residual {
            first: ConvUnit::new(a, &dims, Activation::Relu, rng),
            second: ConvUnit::new(b, &dims, Activation::Identity, rng),
            out: None,
        }
    }

    fn forward(&mut self, x: &Tensor, path: usize, mode: Mode) -> Result<Tensor> {
        let f1 = self.first.conv.spec.filters();
        let f2 = self.second.conv.spec.filters();
        let h = self.first.forward(x, path, f1, mode)?;
        let mut s = self.second.forward(&h, path, f2, mode)?;
        s.add_assign(x)?;
        let out = Activation::Relu.forward(&s);
        self.out = (mode == Mode::Train).then(|| out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let out = self.out.take().ok_or(Error::MissingCache("Residual"))?;
        let gs = relu_backward(&out, grad)?;
        let gh = self.second.backward(&gs, true)?.expect("requested");
        let mut gx = self.first.backward(&gh, true)?.expect("requested");
        gx.add_assign(&gs)?;
        Ok(gx)
    }

    fn relu_mask(&self, mask: &mut Vec<bool>) {
        self.first.relu_mask(mask);
        self.second.relu_mask(mask);
        if let Some(o) = &self.out {
            mask.extend(o.data().iter().map(|&v| v > 0.0));
        }
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut State<'a>) {
        self.first.collect(&format!("{prefix}.a"), out);
        self.second.collect(&format!("{prefix}.b"), out);
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Stage {
    Unit(ConvUnit),
    Residual(Residual),
}

impl Stage {
    fn forward(&mut self, x: &Tensor, path: usize, mode: Mode) -> Result<Tensor> {
        match self {
            Stage::Unit(u) => {
                let filters = u.conv.spec.filters();
                u.forward(x, path, filters, mode)
            }
            Stage::Residual(r) => r.forward(x, path, mode),
        }
    }

    fn backward(&mut self, grad: &Tensor, want_input: bool) -> Result<Option<Tensor>> {
        match self {
            Stage::Unit(u) => u.backward(grad, want_input),
            Stage::Residual(r) => r.backward(grad).map(Some),
        }
    }

    fn relu_mask(&self, mask: &mut Vec<bool>) {
        match self {
            Stage::Unit(u) => u.relu_mask(mask),
            Stage::Residual(r) => r.relu_mask(mask),
        }
    }

    fn units(&self) -> Vec<&ConvUnit> {
        match self {
            Stage::Unit(u) => vec![u],
            Stage::Residual(r) => vec![&r.first, &r.second],
        }
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut State<'a>) {
        match self {
            Stage::Unit(u) => u.collect(prefix, out),
            Stage::Residual(r) => r.collect(prefix, out),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerCount {
    pub weights: usize,
    pub bn: usize,
}

/// Learned parameter totals: conv/tconv weights plus S-BN γ and β.
/// Codebooks and running statistics are not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub bn: usize,
    pub layers: Vec<(String, LayerCount)>,
}

impl ParamCount {
    fn push(&mut self, name: String, count: LayerCount) {
        self.total += count.weights + count.bn;
        self.bn += count.bn;
        self.layers.push((name, count));
    }

    pub fn merge(&mut self, prefix: &str, other: ParamCount) {
        for (name, c) in other.layers {
            self.push(format!("{prefix}{name}"), c);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCount {
    pub encoder: u64,
    pub decoder: u64,
    pub inner_encoder: u64,
    pub inner_decoder: u64,
}

/// One encoder/decoder pair whose BN layers have `inner_dims.len()` paths;
/// path `k` runs the inner layers with their first `inner_dims[k]` filters.
#[derive(Debug, Clone)]
pub struct Codec {
    symbols: usize,
    side: usize,
    inner_dims: Vec<usize>,
    encoder: Vec<Stage>,
    inner_encoder: ConvUnit,
    inner_decoder: ConvUnit,
    decoder: Vec<Stage>,
}

impl Codec {
    pub fn new(arch: &ArchitectureConfig, inner_dims: &[usize], rng: &mut SeededRng) -> Result<Codec> {
        arch.validate()?;
        if inner_dims.is_empty() {
            return Err(Error::Config("codec needs at least one path".into()));
        }
        let paths = inner_dims.len();
        let (c1, c2, f) = (arch.c1, arch.c2, arch.kernel);
        let pad = f / 2;
        let width = *inner_dims.iter().max().expect("non-empty");
        let full = |c: usize| vec![c; paths];
        let unit = |spec: ConvSpec, act: Activation, rng: &mut SeededRng| {
            Stage::Unit(ConvUnit::new(spec, &full(spec.c_out), act, rng))
        };
        let (down, up) = if arch.downsamples() {
            (ConvSpec::conv(c2, c1, 2, 2, 0), ConvSpec::tconv(c1, c2, 2, 2, 0))
        } else {
            (ConvSpec::conv(c2, c1, f, 1, pad), ConvSpec::tconv(c1, c2, f, 1, pad))
        };

        let encoder = vec![
            unit(ConvSpec::conv(IMAGE_SHAPE[0], c1, f, 1, pad), Activation::Relu, rng),
            unit(ConvSpec::conv(c1, c2, f, 1, pad), Activation::Relu, rng),
            Stage::Residual(Residual::new(c2, false, paths, rng)),
            unit(down, Activation::Relu, rng),
            Stage::Residual(Residual::new(c1, false, paths, rng)),
        ];
        let inner_encoder = ConvUnit::new(ConvSpec::conv(c1, width, f, 1, pad), inner_dims, Activation::Tanh, rng);
        let inner_decoder = ConvUnit::new(ConvSpec::tconv(width, c1, f, 1, pad), &full(c1), Activation::Relu, rng);
        let decoder = vec![
            Stage::Residual(Residual::new(c1, true, paths, rng)),
            unit(up, Activation::Relu, rng),
            Stage::Residual(Residual::new(c2, true, paths, rng)),
            unit(ConvSpec::tconv(c2, c1, f, 1, pad), Activation::Relu, rng),
            unit(ConvSpec::tconv(c1, IMAGE_SHAPE[0], f, 1, pad), Activation::Tanh, rng),
        ];
        Ok(Codec {
            symbols: arch.symbols,
            side: arch.latent_side(),
            inner_dims: inner_dims.to_vec(),
            encoder,
            inner_encoder,
            inner_decoder,
            decoder,
        })
    }

    pub fn num_paths(&self) -> usize {
        self.inner_dims.len()
    }

    pub fn inner_dims(&self) -> &[usize] {
        &self.inner_dims
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    /// Codeword dimension used on `path`.
    pub fn width(&self, path: usize) -> Result<usize> {
        self.inner_dims.get(path).copied().ok_or(Error::PathOutOfRange {
            index: path,
            paths: self.inner_dims.len(),
        })
    }

    /// Encodes a `(B, 3, 32, 32)` batch into `(B, N, D_path)` feature rows.
    pub fn encode(&mut self, x: &Tensor, path: usize, mode: Mode) -> Result<Tensor> {
        let width = self.width(path)?;
        let expected = [x.shape().first().copied().unwrap_or(0), IMAGE_SHAPE[0], IMAGE_SHAPE[1], IMAGE_SHAPE[2]];
        if x.shape() != expected || expected[0] == 0 {
            return Err(Error::shape("encode", "image batch", "(B, 3, 32, 32)", x.shape()));
        }
        let mut t = x.clone();
        for stage in &mut self.encoder {
            t = stage.forward(&t, path, mode)?;
        }
        let t = self.inner_encoder.forward(&t, path, width, mode)?;
        Ok(grid_to_rows(&t))
    }

    /// Backpropagates `dL/dY` through the encoder, accumulating parameter
    /// gradients, and returns `dL/dX`.
    pub fn encode_backward(&mut self, grad_y: &Tensor) -> Result<Tensor> {
        let mut g = rows_to_grid(grad_y, self.side)?;
        g = self.inner_encoder.backward(&g, true)?.expect("requested");
        for stage in self.encoder.iter_mut().rev() {
            g = stage.backward(&g, true)?.expect("requested");
        }
        Ok(g)
    }

    /// Decodes `(B, N, D_path)` feature rows into `(B, 3, 32, 32)` images.
    pub fn decode(&mut self, y_hat: &Tensor, path: usize, mode: Mode) -> Result<Tensor> {
        let width = self.width(path)?;
        if y_hat.ndim() != 3 || y_hat.dim(1) != self.symbols || y_hat.dim(2) != width {
            return Err(Error::shape("decode", "feature rows", format!("(B, {}, {width})", self.symbols), y_hat.shape()));
        }
        let t = rows_to_grid(y_hat, self.side)?;
        let mut t = self.inner_decoder.forward(&t, path, width, mode)?;
        for stage in &mut self.decoder {
            t = stage.forward(&t, path, mode)?;
        }
        Ok(t)
    }

    /// Backpropagates `dL/dX̂` through the decoder and returns `dL/dŶ`.
    pub fn decode_backward(&mut self, grad_x: &Tensor) -> Result<Tensor> {
        let mut g = grad_x.clone();
        for stage in self.decoder.iter_mut().rev() {
            g = stage.backward(&g, true)?.expect("requested");
        }
        let g = self.inner_decoder.backward(&g, true)?.expect("requested");
        Ok(grid_to_rows(&g))
    }

    /// Every named tensor (parameters and BN running statistics) in a fixed
    /// order.
    pub fn state_mut(&mut self) -> Vec<(String, Slot<'_>)> {
        let mut out = Vec::new();
        for (i, s) in self.encoder.iter_mut().enumerate() {
            s.collect(&format!("enc.{i}"), &mut out);
        }
        self.inner_encoder.collect("inner_enc", &mut out);
        self.inner_decoder.collect("inner_dec", &mut out);
        for (i, s) in self.decoder.iter_mut().enumerate() {
            s.collect(&format!("dec.{i}"), &mut out);
        }
        out
    }

    /// Learned parameters in a fixed order, paired with their names.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.state_mut()
            .into_iter()
            .filter_map(|(n, s)| match s {
                Slot::Param(p) => Some((n, p)),
                Slot::Buffer(_) => None,
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.named_params_mut().into_iter().map(|(_, p)| p).collect()
    }

    /// Encoder parameters (outer and inner) only.
    pub fn encoder_params_mut(&mut self) -> Vec<&mut Param> {
        self.named_params_mut()
            .into_iter()
            .filter(|(n, _)| n.starts_with("enc.") || n.starts_with("inner_enc."))
            .map(|(_, p)| p)
            .collect()
    }

    /// Decoder parameters (inner and outer) only.
    pub fn decoder_params_mut(&mut self) -> Vec<&mut Param> {
        self.named_params_mut()
            .into_iter()
            .filter(|(n, _)| n.starts_with("dec.") || n.starts_with("inner_dec."))
            .map(|(_, p)| p)
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All switchable BN layers in network order.
    pub fn bn_layers(&self) -> Vec<&SwitchableBatchNorm> {
        self.units().into_iter().map(|u| &u.bn).collect()
    }

    /// On/off pattern of every ReLU output cached by the last training-mode
    /// forward pass, in network order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut mask = Vec::new();
        for s in &self.encoder {
            s.relu_mask(&mut mask);
        }
        self.inner_encoder.relu_mask(&mut mask);
        self.inner_decoder.relu_mask(&mut mask);
        for s in &self.decoder {
            s.relu_mask(&mut mask);
        }
        mask
    }

    pub fn inner_encoder_weight(&self) -> &Param {
        &self.inner_encoder.conv.weight
    }

    pub fn inner_decoder_weight(&self) -> &Param {
        &self.inner_decoder.conv.weight
    }

    fn units(&self) -> Vec<&ConvUnit> {
        let mut units: Vec<&ConvUnit> = self.encoder.iter().flat_map(Stage::units).collect();
        units.push(&self.inner_encoder);
        units.push(&self.inner_decoder);
        units.extend(self.decoder.iter().flat_map(Stage::units));
        units
    }

    pub fn param_count(&self) -> ParamCount {
        let mut count = ParamCount::default();
        let mut clone = self.clone();
        let names: Vec<(String, usize)> = clone.named_params_mut().into_iter().map(|(n, p)| (n, p.len())).collect();
        // Group by layer: weights end in `.conv.weight`, BN γ/β belong to the
        // preceding conv.
        let mut current: Option<(String, LayerCount)> = None;
        for (name, len) in names {
            if let Some(layer) = name.strip_suffix(".conv.weight") {
                if let Some((n, c)) = current.take() {
                    count.push(n, c);
                }
                current = Some((layer.to_string(), LayerCount { weights: len, bn: 0 }));
            } else if let Some((_, c)) = current.as_mut() {
                c.bn += len;
            }
        }
        if let Some((n, c)) = current {
            count.push(n, c);
        }
        count
    }

    /// Analytic multiply-add FLOPs of one forward pass on `path`; inner layers
    /// count only their active filters.
    pub fn flops(&self, path: usize) -> Result<FlopCount> {
        let width = self.width(path)?;
        let mut side = IMAGE_SHAPE[1];
        let mut encoder = 0;
        for unit in self.encoder.iter().flat_map(Stage::units) {
            let spec = unit.conv.spec;
            encoder += unit.conv.flops(side, side, spec.filters());
            side = spec.output_size(side).unwrap_or(side);
        }
        let inner_encoder = self.inner_encoder.conv.flops(side, side, width);
        let inner_decoder = self.inner_decoder.conv.flops(side, side, width);
        let mut decoder = 0;
        for unit in self.decoder.iter().flat_map(Stage::units) {
            let spec = unit.conv.spec;
            decoder += unit.conv.flops(side, side, spec.filters());
            side = spec.output_size(side).unwrap_or(side);
        }
        debug_assert_eq!(side, IMAGE_SHAPE[1]);
        Ok(FlopCount {
            encoder: encoder + inner_encoder,
            decoder: decoder + inner_decoder,
            inner_encoder,
            inner_decoder,
        })
    }
}

/// `(B, D, h, w)` → `(B, h·w, D)`: row `i` is spatial position `i` in
/// row-major order.
pub fn grid_to_rows(t: &Tensor) -> Tensor {
    let (b, d, n) = (t.dim(0), t.dim(1), t.dim(2) * t.dim(3));
    let mut out = vec![0.0; b * n * d];
    let src = t.data();
    for bi in 0..b {
        for di in 0..d {
            let plane = &src[(bi * d + di) * n..(bi * d + di + 1) * n];
            for (i, &v) in plane.iter().enumerate() {
                out[(bi * n + i) * d + di] = v;
            }
        }
    }
    Tensor::from_vec(&[b, n, d], out).expect("sizes agree")
}

/// Inverse of [`grid_to_rows`] for a `side × side` grid.
pub fn rows_to_grid(y: &Tensor, side: usize) -> Result<Tensor> {
    if y.ndim() != 3 || y.dim(1) != side * side {
        return Err(Error::shape("reshape", "feature rows", format!("(B, {}, D)", side * side), y.shape()));
    }
    let (b, n, d) = (y.dim(0), y.dim(1), y.dim(2));
    let mut out = vec![0.0; b * n * d];
    let src = y.data();
    for bi in 0..b {
        for i in 0..n {
            for di in 0..d {
                out[(bi * d + di) * n + i] = src[(bi * n + i) * d + di];
            }
        }
    }
    Tensor::from_vec(&[b, d, side, side], out)
}

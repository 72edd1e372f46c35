//! Transmission, loss assembly and the training strategies.

use std::fmt;
use std::str::FromStr;

use crate::channel::{
    detect, modulate, transmit, ChannelRealization, Constellation, SnrPolicy,
};
use crate::codec::{ArchitectureConfig, SchemeVariant, Setting, System};
use crate::data::{batches, ImageDataset};
use crate::error::{Error, Result};
use crate::metrics::{batch_metrics, MetricReport};
use crate::nn::{Adam, GradCheckReport, Mode, Param, SeededRng, Tensor};
use crate::vq::{
    codebook_term_backward, commitment_term_backward, dequantize, quantize, straight_through,
    straight_through_backward, vq_losses, IndexVector,
};

const NOISE_STREAM: u64 = 1 << 40;
const VAL_STREAM: u64 = 1 << 41;

/// How a system is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainingScheme {
    Ujscc,
    Me1,
    Me2,
    Te,
}

impl TrainingScheme {
    pub const ALL: [TrainingScheme; 4] = [TrainingScheme::Ujscc, TrainingScheme::Me1, TrainingScheme::Me2, TrainingScheme::Te];

    pub fn variant(self) -> SchemeVariant {
        match self {
            TrainingScheme::Ujscc => SchemeVariant::Ujscc,
            TrainingScheme::Me1 | TrainingScheme::Me2 => SchemeVariant::Me,
            TrainingScheme::Te => SchemeVariant::Te,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainingScheme::Ujscc => "ujscc",
            TrainingScheme::Me1 => "me1",
            TrainingScheme::Me2 => "me2",
            TrainingScheme::Te => "te",
        }
    }
}

impl fmt::Display for TrainingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ujscc" => Ok(TrainingScheme::Ujscc),
            "me1" | "me" => Ok(TrainingScheme::Me1),
            "me2" => Ok(TrainingScheme::Me2),
            "te" | "5sn" => Ok(TrainingScheme::Te),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// α_k per order. For ME₂ the last entry is the stage-1 weight and the
    /// others are the stage-2 weights.
    pub alpha: Vec<f64>,
    /// λ_k per order.
    pub lambda: Vec<f64>,
    pub policy: SnrPolicy,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halving_epochs: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Caps the mini-batches per epoch; `None` uses the whole training set.
    pub batches_per_epoch: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    /// β_k = 0.25 α_k.
    pub const BETA_RATIO: f64 = 0.25;

    /// Standard α/λ for `scheme` under `arch`, with the default schedule.
    pub fn defaults(arch: &ArchitectureConfig, scheme: TrainingScheme) -> Self {
        let ones = vec![1.0; 5];
        let ramp = vec![1.0, 1.0, 1.0, 4.0, 16.0];
        let (alpha, lambda) = match (scheme, arch.setting) {
            (TrainingScheme::Me1, _) => (vec![5.0, 4.0, 3.0, 2.0, 1.5], ramp),
            (TrainingScheme::Me2, _) => (vec![5.0, 3.0, 2.0, 1.0, 1.0], ones),
            (TrainingScheme::Te, Setting::Basic) => (vec![4.0, 1.0, 1.0, 1.0, 1.0], ones),
            (TrainingScheme::Te, Setting::Large) => (vec![4.0, 2.0, 1.0, 1.0, 1.0], ones),
            (TrainingScheme::Te, Setting::MoreSymbols) => (ones.clone(), ones),
            (TrainingScheme::Ujscc, Setting::Basic) => match arch.c1 {
                48 => (vec![3.0, 1.5, 1.0, 0.7, 0.5], ramp),
                64 => (vec![3.0, 2.0, 1.0, 0.7, 0.5], ramp),
                _ => (vec![3.0, 1.5, 1.0, 0.7, 0.5], ones),
            },
            (TrainingScheme::Ujscc, Setting::Large) => (vec![3.0, 2.0, 1.0, 0.7, 0.5], vec![1.0, 1.0, 2.0, 4.0, 16.0]),
            (TrainingScheme::Ujscc, Setting::MoreSymbols) => (vec![3.0, 2.0, 1.0, 0.7, 0.5], ramp),
        };
        let k = arch.num_orders();
        TrainConfig {
            alpha: alpha.into_iter().cycle().take(k).collect(),
            lambda: lambda.into_iter().cycle().take(k).collect(),
            policy: SnrPolicy::default(),
            batch_size: 64,
            lr: 1e-3,
            lr_halving_epochs: 20,
            max_epochs: 400,
            patience: 20,
            batches_per_epoch: None,
            seed: 0,
        }
    }

    pub fn beta(&self, k: usize) -> f64 {
        Self::BETA_RATIO * self.alpha[k]
    }

    pub fn weights(&self, k: usize) -> TermWeights {
        TermWeights::standard(self.alpha[k])
    }

    /// Learning rate in `epoch`, halved every `lr_halving_epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = epoch / self.lr_halving_epochs.max(1);
        self.lr * 0.5f64.powi(halvings as i32)
    }

    pub fn validate(&self, orders: usize) -> Result<()> {
        if self.alpha.len() != orders || self.lambda.len() != orders {
            return Err(Error::Config(format!(
                "need {orders} α and λ values, got {} and {}",
                self.alpha.len(),
                self.lambda.len()
            )));
        }
        if self.alpha.iter().chain(&self.lambda).any(|&v| !(v > 0.0)) {
            return Err(Error::Config("α and λ must be positive".into()));
        }
        if self.policy.num_orders() != orders {
            return Err(Error::Config(format!("SNR policy covers {} orders, model has {orders}", self.policy.num_orders())));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of the three loss terms of one band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub recon: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl TermWeights {
    pub fn standard(alpha: f64) -> Self {
        TermWeights {
            recon: 1.0,
            alpha,
            beta: TrainConfig::BETA_RATIO * alpha,
        }
    }

    /// The α term alone.
    pub fn codebook_only(alpha: f64) -> Self {
        TermWeights {
            recon: 0.0,
            alpha,
            beta: 0.0,
        }
    }
}

/// Unweighted terms of `L_k` and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

/// Every intermediate of one pass through the system.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionResult {
    pub k: usize,
    pub snr_db: f64,
    pub y: Tensor,
    pub z: IndexVector,
    pub symbols: Vec<num_complex::Complex64>,
    pub received: Vec<num_complex::Complex64>,
    pub z_hat: IndexVector,
    pub y_hat: Tensor,
    pub x_hat: Option<Tensor>,
}

impl TransmissionResult {
    pub fn symbol_errors(&self) -> usize {
        self.z.as_slice().iter().zip(self.z_hat.as_slice()).filter(|(a, b)| a != b).count()
    }
}

pub fn modulation_name(m: usize) -> String {
    if m == 2 {
        "BPSK".to_string()
    } else {
        format!("{m}QAM")
    }
}

/// encode → quantize → modulate → AWGN → detect → dequantize → decode on
/// order `k`. The decoder is skipped when `decoder_mode` is `None`.
pub fn forward_pass(
    sys: &mut System,
    x: &Tensor,
    k: usize,
    ch: &ChannelRealization,
    rng: &mut SeededRng,
    encoder_mode: Mode,
    decoder_mode: Option<Mode>,
) -> Result<TransmissionResult> {
    let y = sys.encode(x, k, encoder_mode)?;
    let cb = &sys.codebooks[k];
    let z = quantize(&y, cb)?;
    let c = Constellation::new(sys.arch.orders[k])?;
    let symbols = modulate(&z, &c)?;
    let received = transmit(&symbols, ch, rng);
    let z_hat = detect(&received, &c);
    let y_hat = dequantize(&z_hat, cb)?.reshape(y.shape())?;
    let x_hat = match decoder_mode {
        Some(mode) => Some(sys.decode(&straight_through(&y, &y_hat)?, k, mode)?),
        None => None,
    };
    Ok(TransmissionResult {
        k,
        snr_db: ch.snr_db,
        y,
        z,
        symbols,
        received,
        z_hat,
        y_hat,
        x_hat,
    })
}

/// Inference on a batch: the order follows from `snr_db` and `policy`, the
/// noise from `ch`.
pub fn transmit_image(
    sys: &mut System,
    x: &Tensor,
    snr_db: f64,
    policy: &SnrPolicy,
    ch: &ChannelRealization,
    rng: &mut SeededRng,
) -> Result<TransmissionResult> {
    let k = policy.select_order(snr_db);
    let mut r = forward_pass(sys, x, k, ch, rng, Mode::Eval, Some(Mode::Eval))?;
    r.snr_db = snr_db;
    Ok(r)
}

fn mse_tensor(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape("mse", b)?;
    Ok(a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64)
}

/// `L_k` on one batch with its gradients accumulated, scaled by `scale`
/// (the λ_k of the total loss). The reconstruction term reaches the decoder
/// and, straight through the channel, the encoder; the α term reaches only
/// the detected codewords; the β term reaches only the encoder. With the
/// encoder in eval mode it is treated as frozen and gets no gradient.
#[allow(clippy::too_many_arguments)]
pub fn loss_k(
    sys: &mut System,
    x: &Tensor,
    k: usize,
    ch: &ChannelRealization,
    rng: &mut SeededRng,
    weights: TermWeights,
    scale: f64,
    encoder_mode: Mode,
) -> Result<LossParts> {
    let route = sys.route(k)?;
    let decoder = (weights.recon != 0.0).then_some(Mode::Train);
    let pass = forward_pass(sys, x, k, ch, rng, encoder_mode, decoder)?;
    let terms = vq_losses(&pass.y, &pass.y_hat)?;
    let recon = match &pass.x_hat {
        Some(x_hat) => mse_tensor(x_hat, x)?,
        None => 0.0,
    };

    let mut grad_y = match &pass.x_hat {
        Some(x_hat) => {
            let f = 2.0 * scale * weights.recon / x.len() as f64;
            let g = Tensor::from_vec(x.shape(), x_hat.data().iter().zip(x.data()).map(|(p, q)| f * (p - q)).collect())?;
            let g_y_hat = sys.codecs[route.codec].decode_backward(&g)?;
            straight_through_backward(&g_y_hat)
        }
        None => Tensor::zeros(pass.y.shape()),
    };
    if weights.alpha != 0.0 {
        codebook_term_backward(&pass.y, &pass.z_hat, &mut sys.codebooks[k], scale * weights.alpha)?;
    }
    if weights.beta != 0.0 {
        grad_y.add_assign(&commitment_term_backward(&pass.y, &pass.y_hat, scale * weights.beta)?)?;
    }
    if encoder_mode == Mode::Train && (weights.recon != 0.0 || weights.beta != 0.0) {
        sys.codecs[route.codec].encode_backward(&grad_y)?;
    }
    Ok(LossParts {
        recon,
        codebook: terms.codebook_term,
        commitment: terms.commitment_term,
        total: weights.recon * recon + weights.alpha * terms.codebook_term + weights.beta * terms.commitment_term,
    })
}

/// `L_k` in eval mode, no gradients.
pub fn eval_loss_k(
    sys: &mut System,
    x: &Tensor,
    k: usize,
    ch: &ChannelRealization,
    rng: &mut SeededRng,
    weights: TermWeights,
) -> Result<LossParts> {
    let decoder = (weights.recon != 0.0).then_some(Mode::Eval);
    let pass = forward_pass(sys, x, k, ch, rng, Mode::Eval, decoder)?;
    let terms = vq_losses(&pass.y, &pass.y_hat)?;
    let recon = match &pass.x_hat {
        Some(x_hat) => mse_tensor(x_hat, x)?,
        None => 0.0,
    };
    Ok(LossParts {
        recon,
        codebook: terms.codebook_term,
        commitment: terms.commitment_term,
        total: weights.recon * recon + weights.alpha * terms.codebook_term + weights.beta * terms.commitment_term,
    })
}

/// One band of a training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub k: usize,
    pub lambda: f64,
    pub weights: TermWeights,
}

/// Which parameters a stage updates.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainable {
    All,
    /// Codec `.0` and codebook `.1`.
    CodecAndCodebook(usize, usize),
    Codebooks(Vec<usize>),
}

pub fn trainable_params<'a>(sys: &'a mut System, t: &Trainable) -> Vec<&'a mut Param> {
    match t {
        Trainable::All => sys.params_mut(),
        Trainable::CodecAndCodebook(c, k) => {
            let mut out = sys.codecs[*c].params_mut();
            out.push(&mut sys.codebooks[*k].codewords);
            out
        }
        Trainable::Codebooks(ks) => sys
            .codebooks
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| ks.contains(i))
            .map(|(_, cb)| &mut cb.codewords)
            .collect(),
    }
}

/// A training stage: its bands, what it updates, and whether the encoder
/// stays frozen in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub name: String,
    pub bands: Vec<BandSpec>,
    pub trainable: Trainable,
    pub encoder_mode: Mode,
}

/// `Σ λ_k L_k` of one training iteration, gradients accumulated. One SNR is
/// drawn per band, all bands see the same batch.
pub fn total_loss(
    sys: &mut System,
    x: &Tensor,
    stage: &StageSpec,
    policy: &SnrPolicy,
    rng: &mut SeededRng,
) -> Result<(f64, Vec<LossParts>)> {
    let mut total = 0.0;
    let mut parts = Vec::with_capacity(stage.bands.len());
    for band in &stage.bands {
        let snr = policy.sample(band.k, rng)?;
        let ch = ChannelRealization::new(snr);
        let p = loss_k(sys, x, band.k, &ch, rng, band.weights, band.lambda, stage.encoder_mode)?;
        total += band.lambda * p.total;
        parts.push(p);
    }
    Ok((total, parts))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean training `L_k` per order; `None` for orders outside the stage.
    pub band_losses: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Best epoch and its validation loss, per stage.
    pub best: Vec<(String, usize, f64)>,
}

impl TrainOutcome {
    fn extend(&mut self, other: TrainOutcome) {
        self.history.extend(other.history);
        self.best.extend(other.best);
    }
}

/// Validation loss of a stage in eval mode with a noise stream that is reset
/// on every call, so successive epochs are compared on the same channel
/// realizations.
pub fn validation_loss(sys: &mut System, val: &ImageDataset, stage: &StageSpec, cfg: &TrainConfig) -> Result<f64> {
    let mut rng = SeededRng::derive(cfg.seed, VAL_STREAM);
    let mut sum = 0.0;
    let mut count = 0;
    let mut start = 0;
    while start < val.len() {
        let x = val.slice(start, start + cfg.batch_size)?;
        start += cfg.batch_size;
        for band in &stage.bands {
            let snr = cfg.policy.sample(band.k, &mut rng)?;
            let ch = ChannelRealization::new(snr);
            let p = eval_loss_k(sys, &x, band.k, &ch, &mut rng, band.weights)?;
            sum += band.lambda * p.total * x.dim(0) as f64;
        }
        count += x.dim(0);
    }
    Ok(sum / count as f64)
}

/// Adam on the stage's trainable parameters with per-epoch learning-rate
/// halving and early stopping on validation loss; the best weights are
/// restored at the end.
pub fn run_stage(
    sys: &mut System,
    train: &ImageDataset,
    val: &ImageDataset,
    cfg: &TrainConfig,
    stage: &StageSpec,
    stream: u64,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let orders = sys.num_orders();
    let mut adam = Adam::new(cfg.lr);
    let mut rng = SeededRng::derive(cfg.seed, NOISE_STREAM + stream);
    let mut best: Option<(usize, f64, System)> = None;
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        adam.lr = cfg.lr_at(epoch);
        let mut train_sum = 0.0;
        let mut band_sums = vec![0.0; stage.bands.len()];
        let mut seen = 0;
        let limit = cfg.batches_per_epoch.unwrap_or(usize::MAX);
        for x in batches(train, cfg.batch_size, cfg.seed.wrapping_add(stream), epoch as u64).take(limit) {
            sys.zero_grad();
            let (total, parts) = total_loss(sys, &x, stage, &cfg.policy, &mut rng)?;
            adam.step(&mut trainable_params(sys, &stage.trainable))?;
            let b = x.dim(0) as f64;
            train_sum += total * b;
            for (s, p) in band_sums.iter_mut().zip(&parts) {
                *s += p.total * b;
            }
            seen += x.dim(0);
        }
        let val_loss = validation_loss(sys, val, stage, cfg)?;
        let mut band_losses = vec![None; orders];
        for (band, s) in stage.bands.iter().zip(&band_sums) {
            band_losses[band.k] = Some(s / seen as f64);
        }
        history.push(EpochRecord {
            stage: stage.name.clone(),
            epoch,
            lr: adam.lr,
            train_loss: train_sum / seen as f64,
            val_loss,
            band_losses,
        });
        let improved = best.as_ref().is_none_or(|(_, b, _)| val_loss < *b);
        if improved {
            best = Some((epoch, val_loss, sys.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= cfg.patience {
            break;
        }
    }
    let mut outcome = TrainOutcome {
        history,
        best: Vec::new(),
    };
    if let Some((epoch, loss, snapshot)) = best {
        *sys = snapshot;
        outcome.best.push((stage.name.clone(), epoch, loss));
    }
    Ok(outcome)
}

fn joint_stage(sys: &System, cfg: &TrainConfig, name: &str) -> StageSpec {
    StageSpec {
        name: name.to_string(),
        bands: (0..sys.num_orders())
            .map(|k| BandSpec {
                k,
                lambda: cfg.lambda[k],
                weights: cfg.weights(k),
            })
            .collect(),
        trainable: Trainable::All,
        encoder_mode: Mode::Train,
    }
}

fn expect_variant(sys: &System, v: SchemeVariant) -> Result<()> {
    if sys.variant != v {
        return Err(Error::Config(format!("scheme needs a {v} system, got {}", sys.variant)));
    }
    Ok(())
}

/// Joint training over all K bands.
pub fn train_ujscc(sys: &mut System, train: &ImageDataset, val: &ImageDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_variant(sys, SchemeVariant::Ujscc)?;
    cfg.validate(sys.num_orders())?;
    let stage = joint_stage(sys, cfg, "ujscc");
    run_stage(sys, train, val, cfg, &stage, 0)
}

/// Single-stage joint training of the shared-width ME system.
pub fn train_me1(sys: &mut System, train: &ImageDataset, val: &ImageDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_variant(sys, SchemeVariant::Me)?;
    cfg.validate(sys.num_orders())?;
    let stage = joint_stage(sys, cfg, "me1");
    run_stage(sys, train, val, cfg, &stage, 0)
}

/// Stage 2 of ME₂: encoder and decoder frozen, codebooks `0..K−1` trained on
/// the α term alone.
pub fn me2_stage2_spec(sys: &System, cfg: &TrainConfig) -> StageSpec {
    let last = sys.num_orders() - 1;
    StageSpec {
        name: "me2.2".to_string(),
        bands: (0..last)
            .map(|k| BandSpec {
                k,
                lambda: cfg.lambda[k],
                weights: TermWeights::codebook_only(cfg.alpha[k]),
            })
            .collect(),
        trainable: Trainable::Codebooks((0..last).collect()),
        encoder_mode: Mode::Eval,
    }
}

/// Stage 1 trains codec and top-order codebook on `L_K`; stage 2 fits the
/// remaining codebooks to the frozen encoder.
pub fn train_me2(sys: &mut System, train: &ImageDataset, val: &ImageDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_variant(sys, SchemeVariant::Me)?;
    cfg.validate(sys.num_orders())?;
    let last = sys.num_orders() - 1;
    let stage1 = StageSpec {
        name: "me2.1".to_string(),
        bands: vec![BandSpec {
            k: last,
            lambda: 1.0,
            weights: cfg.weights(last),
        }],
        trainable: Trainable::CodecAndCodebook(0, last),
        encoder_mode: Mode::Train,
    };
    let mut out = run_stage(sys, train, val, cfg, &stage1, 0)?;
    let stage2 = me2_stage2_spec(sys, cfg);
    out.extend(run_stage(sys, train, val, cfg, &stage2, 1)?);
    Ok(out)
}

/// K independent codecs, codec k trained only in its own band.
pub fn train_te(sys: &mut System, train: &ImageDataset, val: &ImageDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_variant(sys, SchemeVariant::Te)?;
    cfg.validate(sys.num_orders())?;
    let mut out = TrainOutcome::default();
    for k in 0..sys.num_orders() {
        let stage = StageSpec {
            name: format!("te.{}", k + 1),
            bands: vec![BandSpec {
                k,
                lambda: 1.0,
                weights: cfg.weights(k),
            }],
            trainable: Trainable::CodecAndCodebook(k, k),
            encoder_mode: Mode::Train,
        };
        out.extend(run_stage(sys, train, val, cfg, &stage, k as u64)?);
    }
    Ok(out)
}

pub fn train(
    sys: &mut System,
    scheme: TrainingScheme,
    train_set: &ImageDataset,
    val: &ImageDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    match scheme {
        TrainingScheme::Ujscc => train_ujscc(sys, train_set, val, cfg),
        TrainingScheme::Me1 => train_me1(sys, train_set, val, cfg),
        TrainingScheme::Me2 => train_me2(sys, train_set, val, cfg),
        TrainingScheme::Te => train_te(sys, train_set, val, cfg),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `stage,epoch,lr,train_loss,val_loss,L_1..L_K`.
pub fn history_csv(history: &[EpochRecord], orders: usize) -> String {
    let mut out = String::from("stage,epoch,lr,train_loss,val_loss");
    for k in 1..=orders {
        out.push_str(&format!(",L_{k}"));
    }
    out.push('\n');
    for r in history {
        out.push_str(&format!("{},{},{},{},{}", r.stage, r.epoch, r.lr, r.train_loss, r.val_loss));
        for k in 0..orders {
            out.push(',');
            out.push_str(&fmt_opt(r.band_losses.get(k).copied().flatten()));
        }
        out.push('\n');
    }
    out
}

/// Averages at one SNR of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub k: usize,
    pub modulation: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub ser: f64,
}

/// Eval-mode metrics per SNR, averaged per image over the test set and
/// `trials` noise realizations.
pub fn evaluate_sweep(
    sys: &mut System,
    data: &ImageDataset,
    snr_grid: &[f64],
    policy: &SnrPolicy,
    trials: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(snr_grid.len());
    for (i, &snr) in snr_grid.iter().enumerate() {
        let mut rng = SeededRng::derive(seed, i as u64);
        let ch = ChannelRealization::new(snr);
        let k = policy.select_order(snr);
        let mut reports: Vec<MetricReport> = Vec::new();
        let (mut errors, mut symbols) = (0usize, 0usize);
        for _ in 0..trials.max(1) {
            let mut start = 0;
            while start < data.len() {
                let x = data.slice(start, start + batch_size.max(1))?;
                start += batch_size.max(1);
                let r = transmit_image(sys, &x, snr, policy, &ch, &mut rng)?;
                errors += r.symbol_errors();
                symbols += r.z.len();
                reports.extend(batch_metrics(&x, r.x_hat.as_ref().expect("decoded"))?);
            }
        }
        let avg = crate::metrics::average(&reports).ok_or(Error::EmptyDataset)?;
        out.push(SweepPoint {
            snr_db: snr,
            k,
            modulation: modulation_name(sys.arch.orders[k]),
            mse: avg.mse,
            psnr: avg.psnr_db,
            ssim: avg.ssim,
            ser: errors as f64 / symbols as f64,
        });
    }
    Ok(out)
}

/// `snr_db,k,modulation,mse,psnr,ssim,ser` with one-based `k`.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("snr_db,k,modulation,mse,psnr,ssim,ser\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.snr_db,
            p.k + 1,
            p.modulation,
            p.mse,
            p.psnr,
            p.ssim,
            p.ser
        ));
    }
    out
}

/// Codewords, encoder output and detected codewords frozen at a base point,
/// for the differentiable stand-in of the training graph.
#[derive(Debug, Clone)]
pub struct FrozenQuantization {
    pub y0: Tensor,
    pub y_hat0: Tensor,
    pub z_hat: IndexVector,
}

/// The training loss with the quantizer and channel replaced by
/// `Y − Y₀ + Ŷ₀` and the stop-gradient copies replaced by the frozen values.
/// It equals `L_k` at the base point and its exact gradient is the
/// straight-through gradient there.
pub fn surrogate_loss(sys: &mut System, x: &Tensor, k: usize, frozen: &FrozenQuantization, w: TermWeights) -> Result<f64> {
    let y = sys.encode(x, k, Mode::Train)?;
    let mut input = y.clone();
    for ((v, a), b) in input.data_mut().iter_mut().zip(frozen.y0.data()).zip(frozen.y_hat0.data()) {
        *v = *v - a + b;
    }
    let x_hat = sys.decode(&input, k, Mode::Train)?;
    let c = dequantize(&frozen.z_hat, &sys.codebooks[k])?.reshape(y.shape())?;
    let codebook = mse_tensor(&c, &frozen.y0)?;
    let commitment = mse_tensor(&y, &frozen.y_hat0)?;
    Ok(w.recon * mse_tensor(&x_hat, x)? + w.alpha * codebook + w.beta * commitment)
}

const GRAPH_FD_STEP: f64 = crate::nn::gradcheck::FD_STEP;
const GRAPH_MIN_STEP: f64 = 1e-10;

/// Central-difference check of the full training graph on order `k` with
/// the channel noise disabled. Checks `per_tensor` evenly spaced
/// coordinates of every parameter tensor.
///
/// The loss is piecewise smooth in the weights. For each coordinate the step
/// starts at 1e-5 and is divided by ten until every ReLU output has the same
/// sign at `θ − h`, `θ` and `θ + h` (central difference), or at `θ`, `θ ± h`
/// and `θ ± 2h` on one side (one-sided second-order difference). A
/// coordinate with no such step down to 1e-10 is counted in `skipped`.
pub fn gradcheck_training_graph(
    sys: &System,
    x: &Tensor,
    k: usize,
    w: TermWeights,
    per_tensor: usize,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut base = sys.clone();
    base.zero_grad();
    let ch = ChannelRealization::noiseless();
    let mut rng = SeededRng::new(0);
    let mut analytic = base.clone();
    loss_k(&mut analytic, x, k, &ch, &mut rng, w, 1.0, Mode::Train)?;
    let pass = forward_pass(&mut base.clone(), x, k, &ch, &mut rng, Mode::Train, None)?;
    let frozen = FrozenQuantization {
        y0: pass.y,
        y_hat0: pass.y_hat,
        z_hat: pass.z_hat,
    };
    let n_params = base.params_mut().len();
    let probe = |i: usize, v: &[f64]| -> Result<(f64, Vec<bool>)> {
        let mut s = base.clone();
        s.params_mut()[i].value.data_mut().copy_from_slice(v);
        let l = surrogate_loss(&mut s, x, k, &frozen, w)?;
        Ok((l, s.codecs.iter().flat_map(|c| c.relu_pattern()).collect()))
    };

    let mut report = GradCheckReport::empty(tol);
    for i in 0..n_params {
        let (mut point, grad) = {
            let params = analytic.params_mut();
            (params[i].value.data().to_vec(), params[i].grad.data().to_vec())
        };
        let (l0, centre) = probe(i, &point)?;
        let len = point.len();
        let step = (len / per_tensor.max(1)).max(1);
        for c in (0..len).step_by(step).take(per_tensor) {
            let orig = point[c];
            let mut at = |d: f64| -> Result<(f64, bool)> {
                point[c] = orig + d;
                let (l, p) = probe(i, &point)?;
                point[c] = orig;
                Ok((l, p == centre))
            };
            let mut h = GRAPH_FD_STEP;
            let numeric = loop {
                let (up, up_ok) = at(h)?;
                let (down, down_ok) = at(-h)?;
                if up_ok && down_ok {
                    break Some((up - down) / (2.0 * h));
                }
                // One side stays on the piece containing θ: second-order
                // one-sided difference there.
                let side = if up_ok { 1.0 } else { -1.0 };
                if up_ok || down_ok {
                    let (near, far) = (if up_ok { up } else { down }, at(2.0 * side * h)?);
                    if far.1 {
                        break Some(side * (4.0 * near - 3.0 * l0 - far.0) / (2.0 * h));
                    }
                }
                h /= 10.0;
                if h < GRAPH_MIN_STEP {
                    break None;
                }
            };
            match numeric {
                Some(n) => report.record(c, grad[c], n),
                None => report.skipped += 1,
            }
        }
    }
    Ok(report)
}

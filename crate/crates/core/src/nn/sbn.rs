//! Switchable batch normalization.
//!
//! A layer holds `K` independent batch-norm parameter and statistics sets;
//! each call selects one path and never reads or writes the others. Paths may
//! have different channel counts, which is how the inner encoder's output
//! width varies per modulation order.

use crate::error::{Error, Result};
use crate::nn::{Param, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormPath {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_std: Vec<f64>,
}

impl BatchNormPath {
    pub fn new(channels: usize) -> Self {
        BatchNormPath {
            gamma: Param::new(Tensor::filled(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Inference-time scale and offset `(γ̃, β̃)` per channel.
    pub fn folded(&self, eps: f64) -> (Vec<f64>, Vec<f64>) {
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let scale: Vec<f64> = gamma
            .iter()
            .zip(&self.running_std)
            .map(|(g, s)| g / (s + eps))
            .collect();
        let shift = beta
            .iter()
            .zip(&scale)
            .zip(&self.running_mean)
            .map(|((b, sc), m)| b - sc * m)
            .collect();
        (scale, shift)
    }
}

#[derive(Debug, Clone)]
struct Cache {
    path: usize,
    mode: Mode,
    /// Normalized input `(x − μ) / (σ + ε)`.
    xhat: Tensor,
    /// Per-channel batch std (train) or running std (eval).
    std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SwitchableBatchNorm {
    paths: Vec<BatchNormPath>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<Cache>,
}

impl SwitchableBatchNorm {
    /// One path per entry of `dims`, path `k` normalizing `dims[k]` channels.
    pub fn new(dims: &[usize]) -> Self {
        SwitchableBatchNorm {
            paths: dims.iter().map(|&d| BatchNormPath::new(d)).collect(),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn path(&self, k: usize) -> Result<&BatchNormPath> {
        let paths = self.paths.len();
        self.paths.get(k).ok_or(Error::PathOutOfRange { index: k, paths })
    }

    pub fn path_mut(&mut self, k: usize) -> Result<&mut BatchNormPath> {
        let paths = self.paths.len();
        self.paths.get_mut(k).ok_or(Error::PathOutOfRange { index: k, paths })
    }

    pub fn paths(&self) -> &[BatchNormPath] {
        &self.paths
    }

    pub fn paths_mut(&mut self) -> &mut [BatchNormPath] {
        &mut self.paths
    }

    /// Learned parameter count over all paths (γ and β).
    pub fn param_count(&self) -> usize {
        self.paths.iter().map(|p| 2 * p.channels()).sum()
    }

    pub fn forward(&mut self, x: &Tensor, k: usize, mode: Mode) -> Result<Tensor> {
        let (eps, momentum) = (self.eps, self.momentum);
        let path = self.path_mut(k)?;
        let channels = path.channels();
        if x.ndim() < 2 || x.dim(1) != channels {
            return Err(Error::shape("sbn_forward", "channels", channels, x.shape()));
        }
        let batch = x.dim(0);
        let plane: usize = x.shape()[2..].iter().product();
        let count = batch * plane;

        let (mean, std) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::shape("sbn_forward", "batch·spatial count", ">= 2", count));
                }
                batch_stats(x, channels, plane)
            }
            Mode::Eval => (path.running_mean.clone(), path.running_std.clone()),
        };

        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let gamma = path.gamma.value.data();
        let beta = path.beta.value.data();
        let (scale, shift) = match mode {
            Mode::Eval => path.folded(eps),
            Mode::Train => (Vec::new(), Vec::new()),
        };
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * plane;
                let inv = 1.0 / (std[c] + eps);
                for i in base..base + plane {
                    let t = x.data()[i];
                    let h = (t - mean[c]) * inv;
                    xhat.data_mut()[i] = h;
                    out.data_mut()[i] = match mode {
                        Mode::Train => gamma[c] * h + beta[c],
                        Mode::Eval => scale[c] * t + shift[c],
                    };
                }
            }
        }

        if mode == Mode::Train {
            for c in 0..channels {
                path.running_mean[c] = (1.0 - momentum) * path.running_mean[c] + momentum * mean[c];
                path.running_std[c] = (1.0 - momentum) * path.running_std[c] + momentum * std[c];
            }
        }
        self.cache = Some(Cache { path: k, mode, xhat, std });
        Ok(out)
    }

    /// Accumulates γ/β gradients of the cached path and returns `grad_x`.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let Cache { path: k, mode, xhat, std } = self.cache.take().ok_or(Error::MissingCache("SwitchableBatchNorm"))?;
        grad_out.check_same_shape("sbn_backward", &xhat)?;
        let eps = self.eps;
        let path = &mut self.paths[k];
        let channels = path.channels();
        let batch = xhat.dim(0);
        let plane: usize = xhat.shape()[2..].iter().product();
        let n = (batch * plane) as f64;
        let g = grad_out.data();
        let h = xhat.data();

        // Per-channel Σg and Σg·x̂.
        let mut sum_g = vec![0.0; channels];
        let mut sum_gh = vec![0.0; channels];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * plane;
                for i in base..base + plane {
                    sum_g[c] += g[i];
                    sum_gh[c] += g[i] * h[i];
                }
            }
        }
        {
            let gg = path.gamma.grad.data_mut();
            let gb = path.beta.grad.data_mut();
            for c in 0..channels {
                gg[c] += sum_gh[c];
                gb[c] += sum_g[c];
            }
        }

        let gamma = path.gamma.value.data();
        let mut grad_x = Tensor::zeros(xhat.shape());
        let gx = grad_x.data_mut();
        for c in 0..channels {
            let s = std[c] + eps;
            // d/dx of γ·(x − μ)/(σ + ε) with σ the biased batch std.
            let (mean_gh, proj) = match mode {
                Mode::Train => {
                    let mean_gh = gamma[c] * sum_g[c] / n;
                    let proj = if std[c] > 0.0 {
                        gamma[c] * sum_gh[c] / (n * std[c])
                    } else {
                        0.0
                    };
                    (mean_gh, proj)
                }
                Mode::Eval => (0.0, 0.0),
            };
            for b in 0..batch {
                let base = (b * channels + c) * plane;
                for i in base..base + plane {
                    gx[i] = (gamma[c] * g[i] - mean_gh) / s - h[i] * proj;
                }
            }
        }
        Ok(grad_x)
    }
}

/// Per-channel mean and biased standard deviation over batch and space.
fn batch_stats(x: &Tensor, channels: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let batch = x.dim(0);
    let n = (batch * plane) as f64;
    let mut mean = vec![0.0; channels];
    for b in 0..batch {
        for (c, m) in mean.iter_mut().enumerate() {
            let base = (b * channels + c) * plane;
            *m += x.data()[base..base + plane].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * plane;
            var[c] += x.data()[base..base + plane]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt()).collect();
    (mean, std)
}

use crate::error::{Error, Result};
use crate::nn::Param;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers, one pair per parameter in update order.
    pub fn moments(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.first.iter().zip(&self.second).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Restores a state previously read through [`Adam::moments`].
    pub fn restore(&mut self, step: u64, moments: Vec<(Vec<f64>, Vec<f64>)>) {
        self.step = step;
        (self.first, self.second) = moments.into_iter().unzip();
    }

    /// One update of every parameter from its accumulated gradient. The
    /// parameter list must keep the same order and shapes across calls.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::shape("adam_step", "parameter count", self.first.len(), params.len()));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first[i].len() || p.grad.len() != p.len() {
                return Err(Error::shape("adam_step", "parameter length", self.first[i].len(), p.len()));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let Param { value, grad } = &mut **p;
            for ((w, &g), (mi, vi)) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

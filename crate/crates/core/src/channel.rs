//! Digital modulation over an AWGN channel.

use num_complex::Complex64;

use crate::codec::MODULATION_ORDERS;
use crate::error::{Error, Result};
use crate::nn::SeededRng;
use crate::vq::IndexVector;

/// Unit-average-power constellation. Point `j` carries codeword index `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    points: Vec<Complex64>,
}

fn gray_inverse(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

impl Constellation {
    /// BPSK is `{−1, +1}` on the real axis. Square QAM puts index
    /// `j = r·L + c` at `(2·p(c) − (L−1), 2·p(r) − (L−1))·√(3/(2(m−1)))`,
    /// where `p` inverts the Gray code, so neighbours differ in one bit per
    /// axis.
    pub fn new(order: usize) -> Result<Self> {
        if !MODULATION_ORDERS.contains(&order) {
            return Err(Error::UnsupportedModulation(order));
        }
        let points = if order == 2 {
            vec![Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0)]
        } else {
            let side = (order as f64).sqrt().round() as usize;
            let scale = (3.0 / (2.0 * (order as f64 - 1.0))).sqrt();
            let level = |i: usize| (2.0 * gray_inverse(i) as f64 - (side as f64 - 1.0)) * scale;
            (0..order).map(|j| Complex64::new(level(j % side), level(j / side))).collect()
        };
        Ok(Constellation { order, points })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn average_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order as f64
    }

    /// Nearest point, smaller index on ties.
    pub fn nearest(&self, s: Complex64) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, p) in self.points.iter().enumerate() {
            let d = (s - p).norm_sqr();
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }
}

pub fn make_constellation(m: usize) -> Result<Constellation> {
    Constellation::new(m)
}

/// SNR thresholds for switching modulation order, in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrPolicy {
    /// `b_1 .. b_{K−1}`.
    pub boundaries: Vec<f64>,
    /// `b_0 .. b_K`: training band edges.
    pub train_bounds: Vec<f64>,
}

impl Default for SnrPolicy {
    fn default() -> Self {
        SnrPolicy {
            boundaries: vec![5.0, 12.0, 20.0, 26.0],
            train_bounds: vec![0.0, 5.0, 12.0, 20.0, 26.0, 30.0],
        }
    }
}

impl SnrPolicy {
    pub fn new(boundaries: Vec<f64>, train_bounds: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&boundaries) || !increasing(&train_bounds) {
            return Err(Error::Config("SNR boundaries must be strictly increasing".into()));
        }
        if train_bounds.len() != boundaries.len() + 2 {
            return Err(Error::Config(format!(
                "{} boundaries need {} training bounds, got {}",
                boundaries.len(),
                boundaries.len() + 2,
                train_bounds.len()
            )));
        }
        Ok(SnrPolicy { boundaries, train_bounds })
    }

    pub fn num_orders(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Zero-based order index for `snr_db`: the number of boundaries at or
    /// below it.
    pub fn select_order(&self, snr_db: f64) -> usize {
        self.boundaries.iter().take_while(|&&b| b <= snr_db).count()
    }

    /// Training band `[b_{k−1}, b_k)` of zero-based order `k`.
    pub fn band(&self, k: usize) -> Result<(f64, f64)> {
        if k + 1 >= self.train_bounds.len() {
            return Err(Error::OrderOutOfRange {
                index: k,
                orders: self.num_orders(),
            });
        }
        Ok((self.train_bounds[k], self.train_bounds[k + 1]))
    }

    /// One SNR drawn uniformly in dB from band `k`.
    pub fn sample(&self, k: usize, rng: &mut SeededRng) -> Result<f64> {
        let (lo, hi) = self.band(k)?;
        Ok(rng.uniform(lo, hi))
    }
}

pub fn select_order(snr_db: f64, policy: &SnrPolicy) -> usize {
    policy.select_order(snr_db)
}

/// AWGN channel at a given SNR with unit signal power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub snr_db: f64,
    pub noise_var: f64,
}

impl ChannelRealization {
    pub fn new(snr_db: f64) -> Self {
        ChannelRealization {
            snr_db,
            noise_var: 10f64.powf(-snr_db / 10.0),
        }
    }

    /// σ² = 0: the channel passes symbols through untouched.
    pub fn noiseless() -> Self {
        ChannelRealization {
            snr_db: f64::INFINITY,
            noise_var: 0.0,
        }
    }
}

pub fn modulate(z: &IndexVector, c: &Constellation) -> Result<Vec<Complex64>> {
    z.as_slice()
        .iter()
        .map(|&j| {
            c.points.get(j).copied().ok_or_else(|| {
                Error::shape("modulate", "symbol index", format!("< {}", c.order), j)
            })
        })
        .collect()
}

/// Adds circular Gaussian noise with variance `σ²/2` per real component.
pub fn transmit(s: &[Complex64], ch: &ChannelRealization, rng: &mut SeededRng) -> Vec<Complex64> {
    if ch.noise_var == 0.0 {
        return s.to_vec();
    }
    let sd = (ch.noise_var / 2.0).sqrt();
    s.iter()
        .map(|&p| {
            let re = rng.normal();
            let im = rng.normal();
            p + Complex64::new(sd * re, sd * im)
        })
        .collect()
}

pub fn detect(s_hat: &[Complex64], c: &Constellation) -> IndexVector {
    IndexVector(s_hat.iter().map(|&s| c.nearest(s)).collect())
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Closed-form symbol error rate of nearest-point detection.
pub fn analytic_ser(m: usize, snr_db: f64) -> Result<f64> {
    if !MODULATION_ORDERS.contains(&m) {
        return Err(Error::UnsupportedModulation(m));
    }
    let gamma = 10f64.powf(snr_db / 10.0);
    if m == 2 {
        return Ok(q_function((2.0 * gamma).sqrt()));
    }
    let mf = m as f64;
    let axis = 2.0 * (1.0 - 1.0 / mf.sqrt()) * q_function((3.0 * gamma / (mf - 1.0)).sqrt());
    Ok(axis * (2.0 - axis))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerEstimate {
    pub errors: u64,
    pub trials: u64,
}

impl SerEstimate {
    pub fn ser(&self) -> f64 {
        self.errors as f64 / self.trials as f64
    }

    /// Binomial standard error at error probability `p`.
    pub fn std_err_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    pub fn std_err(&self) -> f64 {
        self.std_err_at(self.ser())
    }
}

/// Monte-Carlo SER: uniform random symbols through transmit and detect.
pub fn measure_ser(m: usize, snr_db: f64, trials: u64, rng: &mut SeededRng) -> Result<SerEstimate> {
    let c = Constellation::new(m)?;
    let ch = ChannelRealization::new(snr_db);
    let sd = (ch.noise_var / 2.0).sqrt();
    let mut errors = 0;
    for _ in 0..trials {
        let j = rng.index(m);
        let n = Complex64::new(sd * rng.normal(), sd * rng.normal());
        if c.nearest(c.points[j] + n) != j {
            errors += 1;
        }
    }
    Ok(SerEstimate { errors, trials })
}

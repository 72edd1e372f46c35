use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Channels, height and width of every source image.
pub const IMAGE_SHAPE: [usize; 3] = [3, 32, 32];

/// Modulation orders BPSK, 4QAM, 16QAM, 64QAM, 256QAM.
pub const MODULATION_ORDERS: [usize; 5] = [2, 4, 16, 64, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    Basic,
    Large,
    MoreSymbols,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Basic, Setting::Large, Setting::MoreSymbols];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Basic => "basic",
            Setting::Large => "large",
            Setting::MoreSymbols => "more_symbols",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" | "b" => Ok(Setting::Basic),
            "large" | "l" => Ok(Setting::Large),
            "more_symbols" | "moresymbols" | "more-symbols" | "ms" => Ok(Setting::MoreSymbols),
            other => Err(Error::Config(format!("unknown setting `{other}`"))),
        }
    }
}

/// Which encoder/decoder family a system is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeVariant {
    /// One codec, K switchable BN paths, inner width `D_k` per order.
    Ujscc,
    /// One codec with plain BN; every order uses width `D_K`.
    Me,
    /// K independent codecs, codec `k` with plain BN and inner width `D_k`.
    Te,
}

impl SchemeVariant {
    pub fn name(self) -> &'static str {
        match self {
            SchemeVariant::Ujscc => "ujscc",
            SchemeVariant::Me => "me",
            SchemeVariant::Te => "te",
        }
    }
}

impl fmt::Display for SchemeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ujscc" => Ok(SchemeVariant::Ujscc),
            "me" | "me1" | "me2" => Ok(SchemeVariant::Me),
            // "5sn" is an alias for TE.
            "te" | "5sn" => Ok(SchemeVariant::Te),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub setting: Setting,
    pub c1: usize,
    pub c2: usize,
    /// Codeword dimension `D_k` per modulation order, strictly increasing.
    pub dims: Vec<usize>,
    /// Constellation size `m_k` per modulation order.
    pub orders: Vec<usize>,
    /// Symbols per image `N`.
    pub symbols: usize,
    pub kernel: usize,
}

impl ArchitectureConfig {
    pub fn basic() -> Self {
        ArchitectureConfig {
            setting: Setting::Basic,
            c1: 32,
            c2: 64,
            dims: vec![2, 4, 8, 12, 16],
            orders: MODULATION_ORDERS.to_vec(),
            symbols: 256,
            kernel: 5,
        }
    }

    /// `(c1, c2) = (64, 128)`; 1009734 parameters for uJSCC.
    pub fn large() -> Self {
        ArchitectureConfig {
            setting: Setting::Large,
            c1: 64,
            c2: 128,
            dims: vec![4, 8, 16, 24, 32],
            ..Self::basic()
        }
    }

    pub fn more_symbols() -> Self {
        ArchitectureConfig {
            setting: Setting::MoreSymbols,
            symbols: 1024,
            ..Self::basic()
        }
    }

    pub fn for_setting(setting: Setting) -> Self {
        match setting {
            Setting::Basic => Self::basic(),
            Setting::Large => Self::large(),
            Setting::MoreSymbols => Self::more_symbols(),
        }
    }

    pub fn with_channels(mut self, c1: usize, c2: usize) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self
    }

    pub fn num_orders(&self) -> usize {
        self.dims.len()
    }

    pub fn max_dim(&self) -> usize {
        self.dims.last().copied().unwrap_or(0)
    }

    /// Whether the outer layers downsample 32×32 to 16×16.
    pub fn downsamples(&self) -> bool {
        self.symbols == 256
    }

    /// Side length `h1 = w1` of the latent grid.
    pub fn latent_side(&self) -> usize {
        if self.downsamples() {
            16
        } else {
            32
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c1 == 0 || self.c2 == 0 || self.kernel == 0 {
            return Err(Error::Config("channel counts and kernel must be positive".into()));
        }
        if self.dims.is_empty() || self.dims.len() != self.orders.len() {
            return Err(Error::Config(format!(
                "need one codeword dimension per modulation order ({} dims, {} orders)",
                self.dims.len(),
                self.orders.len()
            )));
        }
        if self.dims[0] == 0 || self.dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("codeword dims must be positive and strictly increasing: {:?}", self.dims)));
        }
        if let Some(&m) = self.orders.iter().find(|m| !MODULATION_ORDERS.contains(m)) {
            return Err(Error::UnsupportedModulation(m));
        }
        if self.symbols != 256 && self.symbols != 1024 {
            return Err(Error::Config(format!("symbols per image must be 256 or 1024, got {}", self.symbols)));
        }
        debug_assert_eq!(self.latent_side().pow(2), self.symbols);
        Ok(())
    }
}

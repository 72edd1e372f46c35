//! Universal encoder/decoder assembly and the ME/TE benchmark variants.

pub mod arch;
mod model;

pub use arch::{ArchitectureConfig, SchemeVariant, Setting, IMAGE_SHAPE, MODULATION_ORDERS};
pub use model::{grid_to_rows, rows_to_grid, Codec, FlopCount, LayerCount, ParamCount, Slot};

use crate::error::{Error, Result};
use crate::nn::{Mode, Param, SeededRng, Tensor};
use crate::vq::{init_codebooks, Codebook};

/// Where modulation order `k` runs: which codec, which BN path, and the
/// codeword width it produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub codec: usize,
    pub path: usize,
    pub width: usize,
}

/// Codec(s) plus one codebook per modulation order.
#[derive(Debug, Clone)]
pub struct System {
    pub arch: ArchitectureConfig,
    pub variant: SchemeVariant,
    pub codecs: Vec<Codec>,
    pub codebooks: Vec<Codebook>,
}

/// Inner widths of every codec of `variant`.
pub fn codec_layout(arch: &ArchitectureConfig, variant: SchemeVariant) -> Vec<Vec<usize>> {
    match variant {
        SchemeVariant::Ujscc => vec![arch.dims.clone()],
        SchemeVariant::Me => vec![vec![arch.max_dim()]],
        SchemeVariant::Te => arch.dims.iter().map(|&d| vec![d]).collect(),
    }
}

impl System {
    pub fn build(arch: &ArchitectureConfig, variant: SchemeVariant, rng: &mut SeededRng) -> Result<System> {
        arch.validate()?;
        let codecs = codec_layout(arch, variant)
            .iter()
            .map(|dims| Codec::new(arch, dims, rng))
            .collect::<Result<Vec<_>>>()?;
        let widths: Vec<usize> = match variant {
            SchemeVariant::Me => vec![arch.max_dim(); arch.num_orders()],
            _ => arch.dims.clone(),
        };
        let codebooks = init_codebooks(&arch.orders, &widths, rng)?;
        Ok(System {
            arch: arch.clone(),
            variant,
            codecs,
            codebooks,
        })
    }

    pub fn num_orders(&self) -> usize {
        self.arch.num_orders()
    }

    pub fn route(&self, k: usize) -> Result<Route> {
        let orders = self.num_orders();
        if k >= orders {
            return Err(Error::OrderOutOfRange { index: k, orders });
        }
        Ok(match self.variant {
            SchemeVariant::Ujscc => Route {
                codec: 0,
                path: k,
                width: self.arch.dims[k],
            },
            SchemeVariant::Me => Route {
                codec: 0,
                path: 0,
                width: self.arch.max_dim(),
            },
            SchemeVariant::Te => Route {
                codec: k,
                path: 0,
                width: self.arch.dims[k],
            },
        })
    }

    pub fn encode(&mut self, x: &Tensor, k: usize, mode: Mode) -> Result<Tensor> {
        let r = self.route(k)?;
        self.codecs[r.codec].encode(x, r.path, mode)
    }

    pub fn decode(&mut self, y_hat: &Tensor, k: usize, mode: Mode) -> Result<Tensor> {
        let r = self.route(k)?;
        self.codecs[r.codec].decode(y_hat, r.path, mode)
    }

    pub fn param_count(&self) -> ParamCount {
        let mut total = ParamCount::default();
        let many = self.codecs.len() > 1;
        for (i, c) in self.codecs.iter().enumerate() {
            let prefix = if many { format!("codec{i}.") } else { String::new() };
            total.merge(&prefix, c.param_count());
        }
        total
    }

    pub fn flops(&self, k: usize) -> Result<FlopCount> {
        let r = self.route(k)?;
        self.codecs[r.codec].flops(r.path)
    }

    /// Every named tensor of the system: codec state (prefixed `codec{i}.`)
    /// followed by the codebooks.
    pub fn state_mut(&mut self) -> Vec<(String, Slot<'_>)> {
        let mut out = Vec::new();
        for (i, c) in self.codecs.iter_mut().enumerate() {
            for (name, slot) in c.state_mut() {
                out.push((format!("codec{i}.{name}"), slot));
            }
        }
        for (k, cb) in self.codebooks.iter_mut().enumerate() {
            out.push((format!("codebook.{k}"), Slot::Param(&mut cb.codewords)));
        }
        out
    }

    /// Codec and codebook parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for c in &mut self.codecs {
            out.extend(c.params_mut());
        }
        out.extend(self.codebooks.iter_mut().map(|cb| &mut cb.codewords));
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routes_follow_variant() {
        let arch = ArchitectureConfig::basic().with_channels(4, 4);
        let mut rng = SeededRng::new(3);
        let me = System::build(&arch, SchemeVariant::Me, &mut rng).unwrap();
        assert_eq!(me.route(1).unwrap(), Route { codec: 0, path: 0, width: 16 });
        assert_eq!(me.codebooks[0].dim(), 16);
        let te = System::build(&arch, SchemeVariant::Te, &mut rng).unwrap();
        assert_eq!(te.codecs.len(), 5);
        assert_eq!(te.route(2).unwrap(), Route { codec: 2, path: 0, width: 8 });
        assert!(te.route(5).is_err());
    }
}

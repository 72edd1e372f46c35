//! Vector quantization against learned per-order codebooks.

use crate::error::{Error, Result};
use crate::nn::{Param, SeededRng, Tensor};

/// `m × D` matrix of codewords for one modulation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub codewords: Param,
}

impl Codebook {
    /// Entries i.i.d. uniform on [−1, 1].
    pub fn new(size: usize, dim: usize, rng: &mut SeededRng) -> Self {
        Codebook {
            codewords: Param::new(Tensor::uniform(&[size, dim], -1.0, 1.0, rng)),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.ndim() != 2 || t.is_empty() {
            return Err(Error::shape("Codebook", "codewords", "(m, D)", t.shape()));
        }
        Ok(Codebook {
            codewords: Param::new(t),
        })
    }

    pub fn size(&self) -> usize {
        self.codewords.value.dim(0)
    }

    pub fn dim(&self) -> usize {
        self.codewords.value.dim(1)
    }

    pub fn codeword(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.codewords.value.data()[j * d..(j + 1) * d]
    }
}

pub fn init_codebooks(orders: &[usize], dims: &[usize], rng: &mut SeededRng) -> Result<Vec<Codebook>> {
    if orders.len() != dims.len() {
        return Err(Error::shape("init_codebooks", "dims", orders.len(), dims.len()));
    }
    Ok(orders.iter().zip(dims).map(|(&m, &d)| Codebook::new(m, d, rng)).collect())
}

/// Codeword indices, zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexVector(pub Vec<usize>);

impl IndexVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// How many times each of the `m` indices occurs.
    pub fn usage(&self, m: usize) -> Vec<usize> {
        let mut counts = vec![0; m];
        for &z in &self.0 {
            if z < m {
                counts[z] += 1;
            }
        }
        counts
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_rows(op: &'static str, y: &Tensor, dim: usize) -> Result<usize> {
    match y.shape().last() {
        Some(&d) if d == dim && !y.is_empty() => Ok(y.len() / d),
        _ => Err(Error::shape(op, "feature width", dim, y.shape())),
    }
}

/// Nearest codeword for every row of `y` (last axis = codeword dimension);
/// ties go to the smaller index.
pub fn quantize(y: &Tensor, cb: &Codebook) -> Result<IndexVector> {
    let d = cb.dim();
    check_rows("quantize", y, d)?;
    let z = y
        .data()
        .chunks_exact(d)
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for j in 0..cb.size() {
                let dist = sq_dist(row, cb.codeword(j));
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            best.0
        })
        .collect();
    Ok(IndexVector(z))
}

/// Rows `c_{z_i}`, shaped `(len(z), D)`.
pub fn dequantize(z: &IndexVector, cb: &Codebook) -> Result<Tensor> {
    let d = cb.dim();
    let mut out = Vec::with_capacity(z.len() * d);
    for &j in z.as_slice() {
        if j >= cb.size() {
            return Err(Error::shape("dequantize", "codeword index", format!("< {}", cb.size()), j));
        }
        out.extend_from_slice(cb.codeword(j));
    }
    Tensor::from_vec(&[z.len(), d], out)
}

/// Forward value of the straight-through coupling: `Ŷ` itself, checked
/// against the shape of `Y`.
pub fn straight_through(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    y.check_same_shape("straight_through", y_hat)?;
    Ok(y_hat.clone())
}

/// Backward of the coupling: the gradient at `Ŷ` is handed to `Y` unchanged.
pub fn straight_through_backward(grad_y_hat: &Tensor) -> Tensor {
    grad_y_hat.clone()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLossTerms {
    /// `e(Ŷ, Y_d)`: trains the selected codewords.
    pub codebook_term: f64,
    /// `e(Y, Ŷ_d)`: trains the encoder.
    pub commitment_term: f64,
}

pub fn vq_losses(y: &Tensor, y_hat: &Tensor) -> Result<VqLossTerms> {
    y.check_same_shape("vq_losses", y_hat)?;
    let e = sq_dist(y.data(), y_hat.data()) / y.len() as f64;
    Ok(VqLossTerms {
        codebook_term: e,
        commitment_term: e,
    })
}

/// Adds `scale · ∂e(C[z], Y_d)/∂C` into the codebook gradient. Only rows
/// named in `z` receive anything.
pub fn codebook_term_backward(y: &Tensor, z: &IndexVector, cb: &mut Codebook, scale: f64) -> Result<()> {
    let d = cb.dim();
    let rows = check_rows("codebook_term_backward", y, d)?;
    if rows != z.len() {
        return Err(Error::shape("codebook_term_backward", "index count", rows, z.len()));
    }
    let factor = 2.0 * scale / y.len() as f64;
    let Param { value, grad } = &mut cb.codewords;
    for (row, &j) in y.data().chunks_exact(d).zip(z.as_slice()) {
        let c = &value.data()[j * d..(j + 1) * d];
        let g = &mut grad.data_mut()[j * d..(j + 1) * d];
        for ((gi, ci), yi) in g.iter_mut().zip(c).zip(row) {
            *gi += factor * (ci - yi);
        }
    }
    Ok(())
}

/// `scale · ∂e(Y, Ŷ_d)/∂Y`.
pub fn commitment_term_backward(y: &Tensor, y_hat: &Tensor, scale: f64) -> Result<Tensor> {
    y.check_same_shape("commitment_term_backward", y_hat)?;
    let factor = 2.0 * scale / y.len() as f64;
    let data = y.data().iter().zip(y_hat.data()).map(|(a, b)| factor * (a - b)).collect();
    Tensor::from_vec(y.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book(rows: &[&[f64]]) -> Codebook {
        let d = rows[0].len();
        Codebook::from_tensor(Tensor::from_vec(&[rows.len(), d], rows.concat()).unwrap()).unwrap()
    }

    #[test]
    fn exact_match_and_nearest() {
        let cb = book(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        let y = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(quantize(&y, &cb).unwrap().0, vec![3]);
        let cb = book(&[&[0.0], &[1.0]]);
        let y = Tensor::from_vec(&[1, 1], vec![0.4]).unwrap();
        assert_eq!(quantize(&y, &cb).unwrap().0, vec![0]);
    }

    #[test]
    fn ties_go_to_smaller_index() {
        let cb = book(&[&[1.0], &[-1.0], &[1.0]]);
        let y = Tensor::from_vec(&[3, 1], vec![0.0, 1.0, -1.0]).unwrap();
        assert_eq!(quantize(&y, &cb).unwrap().0, vec![0, 0, 1]);
    }

    #[test]
    fn all_first_index_dequantizes_to_first_row() {
        let mut rng = SeededRng::new(2);
        let cb = Codebook::new(4, 3, &mut rng);
        let y = dequantize(&IndexVector(vec![0; 5]), &cb).unwrap();
        for row in y.data().chunks(3) {
            assert_eq!(row, cb.codeword(0));
        }
        assert!(dequantize(&IndexVector(vec![4]), &cb).is_err());
    }

    #[test]
    fn hand_computed_losses() {
        let y = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let c = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let t = vq_losses(&y, &c).unwrap();
        assert_eq!(t.codebook_term, 0.5);
        assert_eq!(t.commitment_term, 0.5);
        assert_eq!(vq_losses(&y, &y).unwrap().codebook_term, 0.0);
    }

    #[test]
    fn codebook_gradient_touches_selected_rows_only() {
        let mut cb = book(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]);
        let y = Tensor::from_vec(&[2, 2], vec![0.5, 0.5, 0.4, 0.4]).unwrap();
        let z = quantize(&y, &cb).unwrap();
        codebook_term_backward(&y, &z, &mut cb, 1.0).unwrap();
        let g = cb.codewords.grad.data();
        assert!(g[0] != 0.0 && g[1] != 0.0);
        assert!(g[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn straight_through_is_exact() {
        let mut rng = SeededRng::new(5);
        let y = Tensor::randn(&[3, 4], &mut rng);
        let y_hat = Tensor::randn(&[3, 4], &mut rng);
        assert_eq!(straight_through(&y, &y_hat).unwrap(), y_hat);
        let g = Tensor::randn(&[3, 4], &mut rng);
        assert_eq!(straight_through_backward(&g), g);
        assert!(straight_through(&y, &Tensor::zeros(&[4, 3])).is_err());
    }
}

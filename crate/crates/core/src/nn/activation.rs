use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn forward(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => relu(x),
            Activation::Tanh => tanh(x),
        }
    }

    /// Gradient with respect to the input, given this activation's output.
    pub fn backward(self, out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Identity => {
                out.check_same_shape("identity_backward", grad_out)?;
                Ok(grad_out.clone())
            }
            Activation::Relu => relu_backward(out, grad_out),
            Activation::Tanh => tanh_backward(out, grad_out),
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// `out` is the forward output; the mask `out > 0` equals `x > 0`.
pub fn relu_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    elementwise("relu_backward", out, grad_out, |o, g| if o > 0.0 { g } else { 0.0 })
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn tanh_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    elementwise("tanh_backward", out, grad_out, |o, g| g * (1.0 - o * o))
}

fn elementwise(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, "grad_out", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
        let g = relu_backward(&relu(&x), &Tensor::filled(&[2], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let x = Tensor::zeros(&[1]);
        let y = tanh(&x);
        assert_eq!(y.data(), &[0.0]);
        assert_eq!(tanh_backward(&y, &Tensor::filled(&[1], 1.0)).unwrap().data(), &[1.0]);
    }
}

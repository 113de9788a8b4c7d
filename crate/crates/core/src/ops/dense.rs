//! Fully connected layer `y = x·Wᵀ + b` on inputs flattened to `(N, features)`.

use crate::error::{mismatch, Error, Result};
use crate::param::Param;
use crate::tensor::{gemm, Tensor};

fn check(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<(usize, usize, usize)> {
    let &[out, inp] = weights.dims() else {
        return Err(mismatch(format!("dense weights must be 2-d, got {:?}", weights.shape())));
    };
    if bias.len() != out {
        return Err(mismatch(format!("dense bias has {} entries for {out} outputs", bias.len())));
    }
    let n = x.shape().batch();
    if x.len() / n != inp {
        return Err(mismatch(format!(
            "dense layer expects {inp} features per example, got {:?}",
            x.shape()
        )));
    }
    Ok((n, inp, out))
}

pub fn dense_forward(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (n, inp, out) = check(x, weights, bias)?;
    let mut y: Vec<f64> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    gemm((n, inp, out), 1.0, (x.data(), inp, 1), (weights.data(), 1, inp), 1.0, (&mut y, out, 1));
    Tensor::from_vec(&[n, out], y)
}

/// `(grad_x, grad_w, grad_b)`; `grad_x` has the shape of `x`.
pub fn dense_backward(x: &Tensor, grad_out: &Tensor, weights: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let &[out, inp] = weights.dims() else {
        return Err(mismatch(format!("dense weights must be 2-d, got {:?}", weights.shape())));
    };
    let n = x.shape().batch();
    if grad_out.dims() != [n, out] || x.len() != n * inp {
        return Err(mismatch(format!(
            "dense backward: input {:?}, output gradient {:?}, weights {:?}",
            x.shape(),
            grad_out.shape(),
            weights.shape()
        )));
    }
    let g = grad_out.data();
    let mut grad_x = Tensor::zeros(x.shape().clone());
    gemm((n, out, inp), 1.0, (g, out, 1), (weights.data(), inp, 1), 0.0, (grad_x.data_mut(), inp, 1));
    let mut grad_w = Tensor::zeros(weights.shape().clone());
    gemm((out, n, inp), 1.0, (g, 1, out), (x.data(), inp, 1), 0.0, (grad_w.data_mut(), inp, 1));
    let mut grad_b = vec![0.0; out];
    for row in g.chunks_exact(out) {
        for (b, v) in grad_b.iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        if weights.shape().rank() != 2 || weights.dims()[0] != bias.len() {
            return Err(mismatch(format!(
                "dense weights {:?} with {} biases",
                weights.shape(),
                bias.len()
            )));
        }
        let bias = Tensor::from_vec(&[bias.len()], bias)?;
        Ok(Dense {
            weight: Param::new(weights, true),
            bias: Param::new(bias, true),
            input: None,
        })
    }

    pub fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        let y = dense_forward(&x, &self.weight.value, self.bias.value.data())?;
        self.input = Some(x);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or(Error::StaleCache("dense backward before forward"))?;
        let (gx, gw, gb) = dense_backward(x, grad_out, &self.weight.value)?;
        for (a, b) in self.weight.grad.data_mut().iter_mut().zip(gw.data()) {
            *a += b;
        }
        for (a, b) in self.bias.grad.data_mut().iter_mut().zip(&gb) {
            *a += b;
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passthrough() {
        let w = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &[0.0; 3]).unwrap(), x);
    }

    #[test]
    fn scalar_affine() {
        let w = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let x = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &[1.0]).unwrap().data(), &[7.0]);
        let (gx, gw, gb) = dense_backward(&x, &Tensor::new(&[1, 1], 1.0).unwrap(), &w).unwrap();
        assert_eq!((gx.data()[0], gw.data()[0], gb[0]), (2.0, 3.0, 1.0));
    }

    #[test]
    fn flattens_trailing_dims() {
        let w = Tensor::new(&[2, 12], 0.5).unwrap();
        let x = Tensor::new(&[4, 3, 2, 2], 1.0).unwrap();
        let y = dense_forward(&x, &w, &[0.0, 1.0]).unwrap();
        assert_eq!(y.dims(), &[4, 2]);
        assert_eq!(y.data()[..2], [6.0, 7.0]);
        let (gx, _, _) = dense_backward(&x, &y, &w).unwrap();
        assert_eq!(gx.dims(), x.dims());
    }

    #[test]
    fn dimension_mismatch() {
        let w = Tensor::new(&[2, 5], 0.5).unwrap();
        let x = Tensor::new(&[1, 4], 1.0).unwrap();
        assert!(matches!(dense_forward(&x, &w, &[0.0; 2]), Err(Error::ShapeMismatch(_))));
        let x = Tensor::new(&[1, 5], 1.0).unwrap();
        assert!(dense_forward(&x, &w, &[0.0; 3]).is_err());
    }
}

//! Branching: split duplicates a tensor onto several branches, concat stacks
//! branch outputs along the channel axis.

use crate::error::{mismatch, Result};
use crate::tensor::Tensor;

pub fn split_forward(x: &Tensor, branches: usize) -> Vec<Tensor> {
    vec![x.clone(); branches]
}

/// The gradient of a split is the sum of its branch gradients.
pub fn split_backward(grads: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = grads
        .split_first()
        .ok_or_else(|| mismatch("split backward needs at least one branch gradient"))?;
    rest.iter().try_fold(first.clone(), |acc, g| acc.add(g))
}

/// Concatenates along axis 1. All inputs must agree on every other axis.
pub fn concat_forward(xs: &[Tensor]) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| mismatch("concat of zero tensors"))?;
    let dims = first.dims();
    if dims.len() < 2 {
        return Err(mismatch(format!("concat needs rank ≥ 2, got {:?}", first.shape())));
    }
    for x in xs {
        let d = x.dims();
        if d.len() != dims.len() || d[0] != dims[0] || d[2..] != dims[2..] {
            return Err(mismatch(format!(
                "concat inputs disagree outside the channel axis: {:?} vs {:?}",
                first.shape(),
                x.shape()
            )));
        }
    }
    let n = dims[0];
    let channels: usize = xs.iter().map(|x| x.dims()[1]).sum();
    let mut out = Vec::with_capacity(first.len() / dims[1] * channels);
    for ni in 0..n {
        for x in xs {
            out.extend_from_slice(x.example(ni));
        }
    }
    let mut out_dims = dims.to_vec();
    out_dims[1] = channels;
    Tensor::from_vec(&out_dims, out)
}

/// Splits a channel-stacked gradient back into per-input pieces.
pub fn concat_backward(grad_out: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let dims = grad_out.dims();
    if dims.len() < 2 || channels.iter().sum::<usize>() != dims[1] {
        return Err(mismatch(format!(
            "cannot split {:?} into channel groups {channels:?}",
            grad_out.shape()
        )));
    }
    let inner: usize = dims[2..].iter().product();
    let mut parts: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(dims[0] * c * inner)).collect();
    for ni in 0..dims[0] {
        let mut rest = grad_out.example(ni);
        for (part, &c) in parts.iter_mut().zip(channels) {
            let (head, tail) = rest.split_at(c * inner);
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| {
            let mut d = dims.to_vec();
            d[1] = c;
            Tensor::from_vec(&d, data)
        })
        .collect()
}

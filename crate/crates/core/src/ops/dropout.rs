//! Inverted dropout: survivors are scaled by `1/(1 - rate)` in train mode so
//! that test mode is the identity.

use crate::error::{Error, Result};
use crate::rectifier::Mode;
use crate::rng::RngStream;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParam(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(DropoutSpec { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Per-element multipliers: 0 with probability `rate`, else `1/(1 - rate)`.
pub fn dropout_mask(shape: &Shape, spec: &DropoutSpec, rng: &mut RngStream) -> Tensor {
    let keep = 1.0 / (1.0 - spec.rate);
    let data = (0..shape.numel())
        .map(|_| if rng.next_f64() < spec.rate { 0.0 } else { keep })
        .collect();
    Tensor::from_shape_vec(shape.clone(), data).expect("mask matches its shape")
}

/// Returns the output and, in train mode, the mask that produced it.
pub fn dropout_forward(
    x: &Tensor,
    spec: &DropoutSpec,
    mode: Mode,
    rng: &mut RngStream,
) -> (Tensor, Option<Tensor>) {
    match mode {
        Mode::Test => (x.clone(), None),
        Mode::Train => {
            let mask = dropout_mask(x.shape(), spec, rng);
            let y = apply_mask(x, &mask).expect("mask matches the input");
            (y, Some(mask))
        }
    }
}

pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    x.zip_map(mask, |v, m| v * m)
}

/// `mask` is `None` for a test-mode forward, which passes gradients through.
pub fn dropout_backward(grad_out: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) => apply_mask(grad_out, m),
    }
}

#[derive(Clone, Debug)]
pub struct Dropout {
    pub spec: DropoutSpec,
    rng: RngStream,
    mask: Option<Option<Tensor>>,
}

impl Dropout {
    pub fn new(spec: DropoutSpec, rng: RngStream) -> Self {
        Dropout {
            spec,
            rng,
            mask: None,
        }
    }

    pub fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        let (y, mask) = dropout_forward(&x, &self.spec, mode, &mut self.rng);
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or(Error::StaleCache("dropout backward before forward"))?;
        dropout_backward(grad_out, mask.as_ref())
    }
}

use crate::tensor::Tensor;

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether weight decay applies to this parameter.
    pub decay: bool,
}

impl Param {
    pub fn new(value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape().clone());
        Param { value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Mutable view of one parameter handed to optimizers and checkpointing.
pub struct ParamView<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
    pub decay: bool,
}

//! 2-d convolution (cross-correlation) via per-example im2col and GEMM.

use crate::error::{mismatch, Error, Result};
use crate::param::Param;
use crate::tensor::{gemm, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    /// Stride 1 with `⌊k/2⌋` padding, which keeps odd-sized maps the same size.
    pub fn same(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            padding: (k / 2, k / 2),
        }
    }

    /// `Cin · kh · kw`, the length of one im2col column.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidParam(format!("degenerate convolution {self:?}")));
        }
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(mismatch(format!(
                "kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
        let (n, c, h, w) = x.shape().nchw()?;
        if c != self.in_channels {
            return Err(mismatch(format!(
                "convolution expects {} input channels, got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((n, h, w, oh, ow))
    }
}

/// Output columns `ox` whose input column `ox·stride + tap − pad` lies
/// inside `0..w`.
fn valid_cols(ow: usize, w: usize, stride: usize, tap: usize, pad: usize) -> std::ops::Range<usize> {
    let lo = pad.saturating_sub(tap).div_ceil(stride).min(ow);
    let hi = if w + pad > tap {
        ((w + pad - tap - 1) / stride + 1).min(ow)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// Unfolds one `(C, H, W)` example into a `(C·kh·kw) × (oh·ow)` matrix.
fn im2col(spec: &ConvSpec, x: &[f64], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let p = oh * ow;
    for c in 0..spec.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((c * kh + i) * kw + j) * p..][..p];
                let xs = valid_cols(ow, w, sw, j, pw);
                for oy in 0..oh {
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    let iy = oy * sh + i;
                    if iy < ph || iy - ph >= h {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[(iy - ph) * w..(iy - ph + 1) * w];
                    out[..xs.start].fill(0.0);
                    out[xs.end..].fill(0.0);
                    let first = xs.start * sw + j - pw;
                    if sw == 1 {
                        out[xs.clone()].copy_from_slice(&src[first..first + xs.len()]);
                    } else {
                        for (o, &v) in out[xs.clone()].iter_mut().zip(src[first..].iter().step_by(sw)) {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(spec: &ConvSpec, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize, x: &mut [f64]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let p = oh * ow;
    for c in 0..spec.in_channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((c * kh + i) * kw + j) * p..][..p];
                let xs = valid_cols(ow, w, sw, j, pw);
                if xs.is_empty() {
                    continue;
                }
                let first = xs.start * sw + j - pw;
                for oy in 0..oh {
                    let iy = oy * sh + i;
                    if iy < ph || iy - ph >= h {
                        continue;
                    }
                    let dst = &mut plane[(iy - ph) * w..(iy - ph + 1) * w];
                    let src = &row[oy * ow + xs.start..oy * ow + xs.end];
                    for (d, &g) in dst[first..].iter_mut().step_by(sw).zip(src) {
                        *d += g;
                    }
                }
            }
        }
    }
}

fn check_params(spec: &ConvSpec, weights: &Tensor, bias: &[f64]) -> Result<()> {
    if weights.dims() != spec.weight_dims() || bias.len() != spec.out_channels {
        return Err(mismatch(format!(
            "convolution parameters {:?} / bias {} do not match {spec:?}",
            weights.shape(),
            bias.len()
        )));
    }
    Ok(())
}

pub fn conv_forward(x: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    check_params(spec, weights, bias)?;
    let (n, h, w, oh, ow) = spec.check_input(x)?;
    let k = spec.patch_len();
    let p = oh * ow;
    let cout = spec.out_channels;
    let mut out = vec![0.0; n * cout * p];
    let mut cols = if spec.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for (ni, y) in out.chunks_exact_mut(cout * p).enumerate() {
        let xn = x.example(ni);
        let cols: &[f64] = if spec.is_pointwise() {
            xn
        } else {
            im2col(spec, xn, h, w, oh, ow, &mut cols);
            &cols
        };
        for (row, &b) in y.chunks_exact_mut(p).zip(bias) {
            row.fill(b);
        }
        gemm((cout, k, p), 1.0, (weights.data(), k, 1), (cols, p, 1), 1.0, (y, p, 1));
    }
    Tensor::from_vec(&[n, cout, oh, ow], out)
}

pub struct ConvGrads {
    /// Absent when the caller did not ask for the input gradient.
    pub grad_x: Option<Tensor>,
    pub grad_w: Tensor,
    pub grad_b: Vec<f64>,
}

pub fn conv_backward(
    x: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    want_grad_x: bool,
) -> Result<ConvGrads> {
    let (n, h, w, oh, ow) = spec.check_input(x)?;
    let cout = spec.out_channels;
    if grad_out.dims() != [n, cout, oh, ow] {
        return Err(mismatch(format!(
            "convolution output gradient {:?}, expected ({n}×{cout}×{oh}×{ow})",
            grad_out.shape()
        )));
    }
    let k = spec.patch_len();
    let p = oh * ow;
    let mut grad_w = Tensor::zeros(Shape::new(spec.weight_dims().to_vec())?);
    let mut grad_b = vec![0.0; cout];
    let mut grad_x = want_grad_x.then(|| Tensor::zeros(x.shape().clone()));
    let pointwise = spec.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
    let mut grad_cols = if pointwise || !want_grad_x { Vec::new() } else { vec![0.0; k * p] };
    let in_len = x.len() / n;

    for ni in 0..n {
        let g = grad_out.example(ni);
        for (gb, row) in grad_b.iter_mut().zip(g.chunks_exact(p)) {
            *gb += row.iter().sum::<f64>();
        }
        let xn = x.example(ni);
        let cols: &[f64] = if pointwise {
            xn
        } else {
            im2col(spec, xn, h, w, oh, ow, &mut cols);
            &cols
        };
        // grad_w += g · colsᵀ
        gemm((cout, p, k), 1.0, (g, p, 1), (cols, 1, p), 1.0, (grad_w.data_mut(), k, 1));
        if let Some(gx) = grad_x.as_mut() {
            let gx = &mut gx.data_mut()[ni * in_len..(ni + 1) * in_len];
            // grad_cols = Wᵀ · g
            if pointwise {
                gemm((k, cout, p), 1.0, (weights.data(), 1, k), (g, p, 1), 0.0, (gx, p, 1));
            } else {
                gemm((k, cout, p), 1.0, (weights.data(), 1, k), (g, p, 1), 0.0, (&mut grad_cols, p, 1));
                col2im(spec, &grad_cols, h, w, oh, ow, gx);
            }
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}

/// Convolution layer holding its parameters and the last input.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: Param,
    pub bias: Param,
    /// False for the first layer of a network, whose input gradient is unused.
    pub needs_input_grad: bool,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(spec: ConvSpec, weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        check_params(&spec, &weights, &bias)?;
        let bias = Tensor::from_vec(&[spec.out_channels], bias)?;
        Ok(Conv2d {
            spec,
            weight: Param::new(weights, true),
            bias: Param::new(bias, true),
            needs_input_grad: true,
            input: None,
        })
    }

    pub fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        let y = conv_forward(&x, &self.spec, &self.weight.value, self.bias.value.data())?;
        self.input = Some(x);
        Ok(y)
    }

    /// Accumulates parameter gradients; returns the input gradient, or `None`
    /// if the layer does not need one.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Option<Tensor>> {
        let x = self
            .input
            .as_ref()
            .ok_or(Error::StaleCache("convolution backward before forward"))?;
        let grads = conv_backward(x, grad_out, &self.spec, &self.weight.value, self.needs_input_grad)?;
        for (a, b) in self.weight.grad.data_mut().iter_mut().zip(grads.grad_w.data()) {
            *a += b;
        }
        for (a, b) in self.bias.grad.data_mut().iter_mut().zip(&grads.grad_b) {
            *a += b;
        }
        Ok(grads.grad_x)
    }
}

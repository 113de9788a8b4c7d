//! Max and average pooling over NCHW maps.
//!
//! Padding cells never win a max; average pooling divides by the full window
//! size, padding included.

use crate::error::{mismatch, Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolSpec {
    pub fn square(kind: PoolKind, k: usize, stride: usize, pad: usize) -> Self {
        PoolSpec {
            kind,
            window: (k, k),
            stride: (stride, stride),
            padding: (pad, pad),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.window;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || ph >= kh || pw >= kw {
            return Err(Error::InvalidParam(format!("invalid pooling window {self:?}")));
        }
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(mismatch(format!(
                "pooling window {kh}×{kw} larger than padded input {}×{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }
}

/// What max pooling remembers for backward: the flat input index of each
/// output's winner. Empty for average pooling.
#[derive(Clone, Debug, Default)]
pub struct PoolCache {
    argmax: Vec<usize>,
}

pub fn pool_forward(x: &Tensor, spec: &PoolSpec) -> Result<(Tensor, PoolCache)> {
    let (n, c, h, w) = x.shape().nchw()?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let (kh, kw) = spec.window;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::new();
    let norm = 1.0 / (kh * kw) as f64;
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = (oy * sh) as isize - ph as isize;
            let ys = y0.max(0) as usize..((y0 + kh as isize).min(h as isize)) as usize;
            for ox in 0..ow {
                let x0 = (ox * sw) as isize - pw as isize;
                let xs = x0.max(0) as usize..((x0 + kw as isize).min(w as isize)) as usize;
                match spec.kind {
                    PoolKind::Max => {
                        let mut best_idx = base + ys.start * w + xs.start;
                        let mut best = xd[best_idx];
                        for iy in ys.clone() {
                            let row = base + iy * w;
                            for (ix, &v) in xd[row + xs.start..row + xs.end].iter().enumerate() {
                                // strict > keeps the first index on ties
                                if v > best {
                                    best = v;
                                    best_idx = row + xs.start + ix;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                    PoolKind::Avg => {
                        let mut s = 0.0;
                        for iy in ys.clone() {
                            s += xd[base + iy * w + xs.start..base + iy * w + xs.end].iter().sum::<f64>();
                        }
                        out.push(s * norm);
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, PoolCache { argmax }))
}

pub fn pool_backward(
    grad_out: &Tensor,
    input_shape: &Shape,
    spec: &PoolSpec,
    cache: &PoolCache,
) -> Result<Tensor> {
    let (n, c, h, w) = input_shape.nchw()?;
    let (oh, ow) = spec.output_hw(h, w)?;
    if grad_out.dims() != [n, c, oh, ow] {
        return Err(mismatch(format!(
            "pooling output gradient {:?}, expected ({n}×{c}×{oh}×{ow})",
            grad_out.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(input_shape.clone());
    let gi = grad_in.data_mut();
    match spec.kind {
        PoolKind::Max => {
            if cache.argmax.len() != grad_out.len() {
                return Err(Error::StaleCache("max-pool backward without a matching forward"));
            }
            for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
                gi[idx] += g;
            }
        }
        PoolKind::Avg => {
            let (kh, kw) = spec.window;
            let (sh, sw) = spec.stride;
            let (ph, pw) = spec.padding;
            let norm = 1.0 / (kh * kw) as f64;
            let go = grad_out.data();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    let y0 = (oy * sh) as isize - ph as isize;
                    let ys = y0.max(0) as usize..((y0 + kh as isize).min(h as isize)) as usize;
                    for ox in 0..ow {
                        let x0 = (ox * sw) as isize - pw as isize;
                        let xs = x0.max(0) as usize..((x0 + kw as isize).min(w as isize)) as usize;
                        let g = go[(plane * oh + oy) * ow + ox] * norm;
                        for iy in ys.clone() {
                            for v in &mut gi[base + iy * w + xs.start..base + iy * w + xs.end] {
                                *v += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

#[derive(Clone, Debug)]
pub struct Pool2d {
    pub spec: PoolSpec,
    cache: Option<(Shape, PoolCache)>,
}

impl Pool2d {
    pub fn new(spec: PoolSpec) -> Self {
        Pool2d { spec, cache: None }
    }

    pub fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        let (y, cache) = pool_forward(&x, &self.spec)?;
        self.cache = Some((x.shape().clone(), cache));
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, cache) = self
            .cache
            .as_ref()
            .ok_or(Error::StaleCache("pooling backward before forward"))?;
        pool_backward(grad_out, shape, &self.spec, cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_pooling_sizes() {
        let p = PoolSpec::square(PoolKind::Max, 3, 2, 1);
        assert_eq!(p.output_hw(32, 32).unwrap(), (16, 16));
        assert_eq!(p.output_hw(16, 16).unwrap(), (8, 8));
        // without padding the floor formula gives 15 and 7
        let p0 = PoolSpec::square(PoolKind::Max, 3, 2, 0);
        assert_eq!(p0.output_hw(32, 32).unwrap(), (15, 15));
        assert_eq!(p0.output_hw(35, 35).unwrap(), (17, 17));
        assert_eq!(p0.output_hw(17, 17).unwrap(), (8, 8));
    }

    #[test]
    fn max_routes_gradient_to_winner() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 5.0, 2.0, 3.0]).unwrap();
        let spec = PoolSpec::square(PoolKind::Max, 2, 2, 0);
        let (y, cache) = pool_forward(&x, &spec).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let g = Tensor::new(&[1, 1, 1, 1], 1.0).unwrap();
        let gi = pool_backward(&g, x.shape(), &spec, &cache).unwrap();
        assert_eq!(gi.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_ties_go_to_first_index() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![2.0, 2.0, 2.0, 2.0]).unwrap();
        let spec = PoolSpec::square(PoolKind::Max, 2, 2, 0);
        let (_, cache) = pool_forward(&x, &spec).unwrap();
        let g = Tensor::new(&[1, 1, 1, 1], 3.0).unwrap();
        let gi = pool_backward(&g, x.shape(), &spec, &cache).unwrap();
        assert_eq!(gi.data(), &[3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_average() {
        let x = Tensor::from_vec(&[1, 1, 8, 8], (0..64).map(f64::from).collect()).unwrap();
        let spec = PoolSpec::square(PoolKind::Avg, 8, 1, 0);
        let (y, _) = pool_forward(&x, &spec).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1]);
        assert!((y.data()[0] - 31.5).abs() < 1e-12);
        let g = Tensor::new(&[1, 1, 1, 1], 64.0).unwrap();
        let gi = pool_backward(&g, x.shape(), &spec, &PoolCache::default()).unwrap();
        assert!(gi.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn max_backward_conserves_mass() {
        let x = Tensor::from_vec(&[1, 2, 5, 5], (0..50).map(|i| ((i * 37) % 11) as f64).collect()).unwrap();
        let spec = PoolSpec::square(PoolKind::Max, 3, 2, 1);
        let (y, cache) = pool_forward(&x, &spec).unwrap();
        let g = y.map(|v| v * 0.5 + 1.0);
        let gi = pool_backward(&g, x.shape(), &spec, &cache).unwrap();
        assert!((gi.reduce_sum() - g.reduce_sum()).abs() < 1e-12);
    }

    #[test]
    fn invalid_windows() {
        assert!(PoolSpec::square(PoolKind::Max, 3, 2, 3).output_hw(8, 8).is_err());
        assert!(PoolSpec::square(PoolKind::Max, 9, 1, 0).output_hw(8, 8).is_err());
        assert!(PoolSpec::square(PoolKind::Avg, 3, 0, 0).output_hw(8, 8).is_err());
    }
}

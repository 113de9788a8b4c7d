//! Spatial pyramid pooling: for each level `n`, max-pool the map over an
//! `n × n` grid of near-equal bins and concatenate every level into a flat
//! vector of length `C · Σ n²`.
//!
//! Bin `b` of `n` over a side of length `H` spans `⌊bH/n⌋ .. ⌈(b+1)H/n⌉`,
//! so neighbouring bins may overlap by one cell. Output order is level, then
//! channel, then bin row, then bin column.

use crate::error::{mismatch, Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SppSpec {
    levels: Vec<usize>,
}

impl SppSpec {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() || levels.contains(&0) {
            return Err(Error::InvalidParam(format!("SPP levels must be positive, got {levels:?}")));
        }
        Ok(SppSpec { levels })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn output_len(&self, channels: usize) -> usize {
        channels * self.levels.iter().map(|n| n * n).sum::<usize>()
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        let max = *self.levels.iter().max().expect("levels are non-empty");
        if max > h || max > w {
            return Err(mismatch(format!("SPP level {max} exceeds the {h}×{w} map")));
        }
        Ok(())
    }
}

fn bin(b: usize, n: usize, len: usize) -> std::ops::Range<usize> {
    (b * len / n)..((b + 1) * len).div_ceil(n)
}

/// Flat input index of each output's maximum, for backward.
#[derive(Clone, Debug, Default)]
pub struct SppCache {
    argmax: Vec<usize>,
}

pub fn spp_forward(x: &Tensor, spec: &SppSpec) -> Result<(Tensor, SppCache)> {
    let (n, c, h, w) = x.shape().nchw()?;
    spec.check(h, w)?;
    let per = spec.output_len(c);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * per);
    let mut argmax = Vec::with_capacity(n * per);
    for ni in 0..n {
        for &level in &spec.levels {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for by in 0..level {
                    for bx in 0..level {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for iy in bin(by, level, h) {
                            for ix in bin(bx, level, w) {
                                let idx = base + iy * w + ix;
                                if xd[idx] > best || best_idx == usize::MAX {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, per], out)?, SppCache { argmax }))
}

pub fn spp_backward(grad_out: &Tensor, input_shape: &Shape, cache: &SppCache) -> Result<Tensor> {
    if cache.argmax.len() != grad_out.len() {
        return Err(Error::StaleCache("SPP backward without a matching forward"));
    }
    let mut grad_in = Tensor::zeros(input_shape.clone());
    let gi = grad_in.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad_in)
}

#[derive(Clone, Debug)]
pub struct Spp {
    pub spec: SppSpec,
    cache: Option<(Shape, SppCache)>,
}

impl Spp {
    pub fn new(spec: SppSpec) -> Self {
        Spp { spec, cache: None }
    }

    pub fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        let (y, cache) = spp_forward(&x, &self.spec)?;
        self.cache = Some((x.shape().clone(), cache));
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, cache) = self
            .cache
            .as_ref()
            .ok_or(Error::StaleCache("SPP backward before forward"))?;
        spp_backward(grad_out, shape, cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_is_global_max() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = SppSpec::new(vec![1]).unwrap();
        let (y, _) = spp_forward(&x, &spec).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn pyramid_length() {
        let spec = SppSpec::new(vec![1, 2, 4]).unwrap();
        assert_eq!(spec.output_len(256), 5376);
        let x = Tensor::new(&[1, 256, 8, 8], 0.5).unwrap();
        let (y, _) = spp_forward(&x, &spec).unwrap();
        assert_eq!(y.dims(), &[1, 5376]);
    }

    #[test]
    fn bins_cover_odd_sides() {
        // 5 cells into 2 bins: 0..3 and 2..5
        assert_eq!(bin(0, 2, 5), 0..3);
        assert_eq!(bin(1, 2, 5), 2..5);
        assert_eq!(bin(3, 4, 8), 6..8);
        let x = Tensor::from_vec(&[1, 1, 1, 5], vec![9.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        let spec = SppSpec::new(vec![1]).unwrap();
        assert_eq!(spp_forward(&x, &spec).unwrap().0.data(), &[9.0]);
    }

    #[test]
    fn gradient_goes_to_bin_maxima() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = SppSpec::new(vec![1, 2]).unwrap();
        let (y, cache) = spp_forward(&x, &spec).unwrap();
        assert_eq!(y.data(), &[4.0, 1.0, 2.0, 3.0, 4.0]);
        let g = Tensor::from_vec(&[1, 5], vec![1.0, 10.0, 20.0, 30.0, 40.0]).unwrap();
        let gi = spp_backward(&g, x.shape(), &cache).unwrap();
        assert_eq!(gi.data(), &[10.0, 20.0, 30.0, 41.0]);
    }

    #[test]
    fn level_larger_than_map() {
        let x = Tensor::new(&[1, 1, 3, 3], 0.0).unwrap();
        let spec = SppSpec::new(vec![1, 4]).unwrap();
        assert!(matches!(spp_forward(&x, &spec), Err(Error::ShapeMismatch(_))));
        assert!(SppSpec::new(vec![]).is_err());
    }
}

//! The rectified-unit family: ReLU, Leaky ReLU, PReLU and RReLU.
//!
//! Every unit is the identity on `x ≥ 0` and multiplies negative inputs by a
//! slope. The slope is stored as a multiplier even where the unit is defined
//! by a divisor (`x / a` for Leaky ReLU, `x / d` for RReLU): the reciprocal is
//! taken once and every negative input is computed as `slope · x`. This keeps
//! RReLU in test mode, Leaky ReLU and PReLU with slopes `1/a` bitwise equal.
//!
//! At `x = 0` every unit takes the identity branch, so its derivative there is 1.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Initial PReLU slope for every channel.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

#[inline]
fn rectify(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn rectify_grad(x: f64, g: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        g
    } else {
        g * slope
    }
}

/// Leaky ReLU divisor `a > 1`: negative inputs become `x / a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeakyParam {
    a: f64,
    slope: f64,
}

impl LeakyParam {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 1.0) {
            return Err(Error::InvalidParam(format!(
                "leaky ReLU divisor must be finite and > 1, got {a}"
            )));
        }
        Ok(LeakyParam { a, slope: 1.0 / a })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Negative-branch multiplier `1/a`.
    pub fn slope(&self) -> f64 {
        self.slope
    }
}

/// Learned per-channel slopes and their accumulated gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct PReluState {
    pub slopes: Vec<f64>,
    pub slope_grads: Vec<f64>,
}

impl PReluState {
    pub fn new(channels: usize) -> Self {
        Self::with_slopes(vec![PRELU_INIT_SLOPE; channels])
    }

    pub fn with_slopes(slopes: Vec<f64>) -> Self {
        let slope_grads = vec![0.0; slopes.len()];
        PReluState {
            slopes,
            slope_grads,
        }
    }

    pub fn zero_grads(&mut self) {
        self.slope_grads.fill(0.0);
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let c = x.shape().channels();
        if c != self.slopes.len() {
            return Err(Error::ShapeMismatch(format!(
                "PReLU has {} slopes but input {:?} has {c} channels",
                self.slopes.len(),
                x.shape()
            )));
        }
        Ok(())
    }
}

/// RReLU divisor range and the divisors drawn by the last train-mode forward.
#[derive(Clone, Debug)]
pub struct RReluParam {
    l: f64,
    u: f64,
    test_slope: f64,
    cached_divisors: Option<Tensor>,
}

impl RReluParam {
    pub fn new(l: f64, u: f64) -> Result<Self> {
        if !(l.is_finite() && u.is_finite() && 0.0 < l && l < u) {
            return Err(Error::InvalidParam(format!(
                "RReLU range needs 0 < l < u, got l={l}, u={u}"
            )));
        }
        Ok(RReluParam {
            l,
            u,
            test_slope: 1.0 / ((l + u) / 2.0),
            cached_divisors: None,
        })
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    /// Fixed test-time divisor `(l + u) / 2`.
    pub fn test_divisor(&self) -> f64 {
        (self.l + self.u) / 2.0
    }

    pub fn test_slope(&self) -> f64 {
        self.test_slope
    }

    pub fn cached_divisors(&self) -> Option<&Tensor> {
        self.cached_divisors.as_ref()
    }

    /// Installs divisors as if a train-mode forward had drawn them.
    pub fn set_cached_divisors(&mut self, divisors: Tensor) -> Result<()> {
        if let Some(bad) = divisors.data().iter().find(|&&d| !(self.l..self.u).contains(&d)) {
            return Err(Error::InvalidParam(format!(
                "cached divisor {bad} outside [{}, {})",
                self.l, self.u
            )));
        }
        self.cached_divisors = Some(divisors);
        Ok(())
    }
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| rectify(v, 0.0))
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, |x, g| rectify_grad(x, g, 0.0))
}

pub fn leaky_forward(x: &Tensor, p: &LeakyParam) -> Tensor {
    let s = p.slope();
    x.map(|v| rectify(v, s))
}

pub fn leaky_backward(x: &Tensor, grad_out: &Tensor, p: &LeakyParam) -> Result<Tensor> {
    let s = p.slope();
    x.zip_map(grad_out, |x, g| rectify_grad(x, g, s))
}

pub fn prelu_forward(x: &Tensor, s: &PReluState) -> Result<Tensor> {
    s.check(x)?;
    let inner = x.shape().channel_stride();
    let mut y = x.clone();
    for (plane, &slope) in y.data_mut().chunks_exact_mut(inner).zip(s.slopes.iter().cycle()) {
        plane.iter_mut().for_each(|v| *v = rectify(*v, slope));
    }
    Ok(y)
}

/// Returns the input gradient and adds `Σ grad_out · x` over each channel's
/// negative inputs into `s.slope_grads`.
pub fn prelu_backward(x: &Tensor, grad_out: &Tensor, s: &mut PReluState) -> Result<Tensor> {
    s.check(x)?;
    x.expect_same_shape(grad_out)?;
    let inner = x.shape().channel_stride();
    let channels = s.slopes.len();
    let mut grad_in = grad_out.clone();
    let planes = grad_in.data_mut().chunks_exact_mut(inner).zip(x.data().chunks_exact(inner));
    for (i, (gp, xp)) in planes.enumerate() {
        let c = i % channels;
        let (slope, mut acc) = (s.slopes[c], s.slope_grads[c]);
        for (g, &xv) in gp.iter_mut().zip(xp) {
            if xv < 0.0 {
                acc += *g * xv;
                *g *= slope;
            }
        }
        s.slope_grads[c] = acc;
    }
    Ok(grad_in)
}

/// Train mode draws one divisor per element from `U(l, u)` and caches them;
/// test mode divides negative inputs by `(l + u) / 2` and clears the cache.
///
/// Divisors are drawn for every element regardless of sign, so the amount of
/// randomness consumed depends only on the input shape.
pub fn rrelu_forward(x: &Tensor, p: &mut RReluParam, mode: Mode, rng: &mut RngStream) -> Tensor {
    match mode {
        Mode::Train => {
            let mut divisors = Tensor::zeros(x.shape().clone());
            rng.fill_uniform(p.l, p.u, divisors.data_mut());
            let mut y = x.clone();
            for (v, d) in y.data_mut().iter_mut().zip(divisors.data()) {
                *v = rectify(*v, 1.0 / d);
            }
            p.cached_divisors = Some(divisors);
            y
        }
        Mode::Test => {
            p.cached_divisors = None;
            let s = p.test_slope;
            x.map(|v| rectify(v, s))
        }
    }
}

pub fn rrelu_backward(x: &Tensor, grad_out: &Tensor, p: &RReluParam, mode: Mode) -> Result<Tensor> {
    x.expect_same_shape(grad_out)?;
    match mode {
        Mode::Train => {
            let divisors = p
                .cached_divisors
                .as_ref()
                .ok_or(Error::StaleCache("RReLU backward in train mode without a train forward"))?;
            if divisors.shape() != x.shape() {
                return Err(Error::StaleCache(
                    "RReLU cached divisors do not match the input shape",
                ));
            }
            let mut grad_in = grad_out.clone();
            for ((g, &xv), &d) in grad_in.data_mut().iter_mut().zip(x.data()).zip(divisors.data()) {
                *g = rectify_grad(xv, *g, 1.0 / d);
            }
            Ok(grad_in)
        }
        Mode::Test => {
            let s = p.test_slope;
            x.zip_map(grad_out, |x, g| rectify_grad(x, g, s))
        }
    }
}

/// Fraction of elements that are exactly zero.
pub fn sparsity(y: &Tensor) -> f64 {
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
    zeros as f64 / y.len() as f64
}

/// Which rectifier a network uses, with its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationConfig {
    Relu,
    Leaky { a: f64 },
    Prelu,
    Rrelu { l: f64, u: f64 },
}

impl ActivationConfig {
    pub const KINDS: [&'static str; 4] = ["relu", "leaky", "prelu", "rrelu"];

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationConfig::Leaky { a } => LeakyParam::new(a).map(|_| ()),
            ActivationConfig::Rrelu { l, u } => RReluParam::new(l, u).map(|_| ()),
            ActivationConfig::Relu | ActivationConfig::Prelu => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ActivationConfig::Relu => "relu",
            ActivationConfig::Leaky { .. } => "leaky",
            ActivationConfig::Prelu => "prelu",
            ActivationConfig::Rrelu { .. } => "rrelu",
        }
    }

    /// Single-token label used in result tables, e.g. `leaky(a=5.5)`.
    pub fn label(&self) -> String {
        match *self {
            ActivationConfig::Relu => "relu".into(),
            ActivationConfig::Leaky { a } => format!("leaky(a={a})"),
            ActivationConfig::Prelu => "prelu".into(),
            ActivationConfig::Rrelu { l, u } => format!("rrelu(l={l},u={u})"),
        }
    }
}

#[derive(Clone, Debug)]
enum Unit {
    Relu,
    Leaky(LeakyParam),
    Prelu(PReluState),
    Rrelu(RReluParam, RngStream),
}

/// A rectifier inside a network: holds its parameters and caches the last
/// input (and, for RReLU in train mode, the sampled divisors) for backward.
#[derive(Clone, Debug)]
pub struct ActivationLayer {
    config: ActivationConfig,
    unit: Unit,
    input: Option<(Tensor, Mode)>,
}

impl ActivationLayer {
    /// `channels` sizes the PReLU slopes; `rng` is only kept by RReLU.
    pub fn new(config: ActivationConfig, channels: usize, rng: RngStream) -> Result<Self> {
        let unit = match config {
            ActivationConfig::Relu => Unit::Relu,
            ActivationConfig::Leaky { a } => Unit::Leaky(LeakyParam::new(a)?),
            ActivationConfig::Prelu => Unit::Prelu(PReluState::new(channels)),
            ActivationConfig::Rrelu { l, u } => Unit::Rrelu(RReluParam::new(l, u)?, rng),
        };
        Ok(ActivationLayer {
            config,
            unit,
            input: None,
        })
    }

    pub fn config(&self) -> &ActivationConfig {
        &self.config
    }

    pub fn prelu_state(&self) -> Option<&PReluState> {
        match &self.unit {
            Unit::Prelu(s) => Some(s),
            _ => None,
        }
    }

    pub fn prelu_state_mut(&mut self) -> Option<&mut PReluState> {
        match &mut self.unit {
            Unit::Prelu(s) => Some(s),
            _ => None,
        }
    }

    pub fn rrelu_param(&self) -> Option<&RReluParam> {
        match &self.unit {
            Unit::Rrelu(p, _) => Some(p),
            _ => None,
        }
    }

    pub fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let y = match &mut self.unit {
            Unit::Relu => relu_forward(&x),
            Unit::Leaky(p) => leaky_forward(&x, p),
            Unit::Prelu(s) => prelu_forward(&x, s)?,
            Unit::Rrelu(p, rng) => rrelu_forward(&x, p, mode, rng),
        };
        self.input = Some((x, mode));
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (x, mode) = self
            .input
            .as_ref()
            .ok_or(Error::StaleCache("activation backward before forward"))?;
        match &mut self.unit {
            Unit::Relu => relu_backward(x, grad_out),
            Unit::Leaky(p) => leaky_backward(x, grad_out, p),
            Unit::Prelu(s) => prelu_backward(x, grad_out, s),
            Unit::Rrelu(p, _) => rrelu_backward(x, grad_out, p, *mode),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu_forward(&t(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert!(relu_forward(&t(&[-1.0, -3.0])).data().iter().all(|&v| v == 0.0));
        let pos = t(&[0.0, 1.0, 7.5]);
        assert_eq!(relu_forward(&pos), pos);
        let g = relu_backward(&t(&[3.0, -3.0]), &t(&[1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0]);
        // slope 1 at the kink
        assert_eq!(relu_backward(&t(&[0.0]), &t(&[5.0])).unwrap().data(), &[5.0]);
        assert!(matches!(
            relu_backward(&t(&[1.0]), &t(&[1.0, 2.0])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn leaky_examples() {
        let p = LeakyParam::new(5.5).unwrap();
        assert_eq!(leaky_forward(&t(&[-11.0]), &p).data(), &[-2.0]);
        let p100 = LeakyParam::new(100.0).unwrap();
        assert_eq!(leaky_forward(&t(&[-100.0]), &p100).data(), &[-1.0]);
        assert_eq!(leaky_forward(&t(&[4.0]), &p).data(), &[4.0]);
        let g = leaky_backward(&t(&[-1.0]), &t(&[1.0]), &p).unwrap();
        assert!((g.data()[0] - 1.0 / 5.5).abs() < 1e-15);
        assert_eq!(leaky_backward(&t(&[2.0]), &t(&[3.0]), &p).unwrap().data(), &[3.0]);
        assert!(leaky_backward(&t(&[2.0]), &t(&[3.0, 1.0]), &p).is_err());
    }

    #[test]
    fn leaky_rejects_divisor_at_most_one() {
        assert!(matches!(LeakyParam::new(1.0), Err(Error::InvalidParam(_))));
        assert!(LeakyParam::new(0.5).is_err());
        assert!(LeakyParam::new(f64::NAN).is_err());
    }

    #[test]
    fn prelu_examples() {
        let s = PReluState::with_slopes(vec![0.25]);
        assert_eq!(prelu_forward(&t(&[-4.0]), &s).unwrap().data(), &[-1.0]);

        let x = t(&[-2.0, 0.0, 3.0]);
        let zero = PReluState::with_slopes(vec![0.0]);
        assert_eq!(prelu_forward(&x, &zero).unwrap(), relu_forward(&x));
        let one = PReluState::with_slopes(vec![1.0]);
        assert_eq!(prelu_forward(&x, &one).unwrap(), x);

        let mut s = PReluState::with_slopes(vec![0.25]);
        let g = prelu_backward(&t(&[-2.0]), &t(&[1.0]), &mut s).unwrap();
        assert_eq!(g.data(), &[0.25]);
        assert_eq!(s.slope_grads, vec![-2.0]);

        let mut s = PReluState::with_slopes(vec![0.25]);
        prelu_backward(&t(&[1.0, 2.0]), &t(&[1.0, 1.0]), &mut s).unwrap();
        assert_eq!(s.slope_grads, vec![0.0]);
    }

    #[test]
    fn prelu_slopes_are_per_channel() {
        // (N=2, C=2, L=2)
        let x = Tensor::from_vec(&[2, 2, 2], vec![-1.0, -2.0, -1.0, 4.0, -3.0, 1.0, -4.0, -1.0]).unwrap();
        let mut s = PReluState::with_slopes(vec![0.5, 0.1]);
        let y = prelu_forward(&x, &s).unwrap();
        assert_eq!(y.data(), &[-0.5, -1.0, -0.1, 4.0, -1.5, 1.0, -0.4, -0.1]);
        let g = Tensor::full(x.shape().clone(), 1.0);
        prelu_backward(&x, &g, &mut s).unwrap();
        assert_eq!(s.slope_grads, vec![-1.0 - 2.0 - 3.0, -1.0 - 4.0 - 1.0]);
    }

    #[test]
    fn prelu_channel_mismatch() {
        let x = Tensor::new(&[1, 3, 2, 2], -1.0).unwrap();
        let mut s = PReluState::new(2);
        assert!(matches!(prelu_forward(&x, &s), Err(Error::ShapeMismatch(_))));
        assert!(prelu_backward(&x, &x, &mut s).is_err());
    }

    #[test]
    fn rrelu_test_mode_uses_mean_divisor() {
        let mut p = RReluParam::new(3.0, 8.0).unwrap();
        let mut rng = RngStream::new(0, 0);
        let y = rrelu_forward(&t(&[-5.5, 5.0]), &mut p, Mode::Test, &mut rng);
        assert_eq!(y.data(), &[-1.0, 5.0]);
        assert!(p.cached_divisors().is_none());
        let g = rrelu_backward(&t(&[-1.0]), &t(&[1.0]), &p, Mode::Test).unwrap();
        assert!((g.data()[0] - 2.0 / 11.0).abs() < 1e-15);
        // test mode draws nothing
        let mut fresh = RngStream::new(0, 0);
        assert_eq!(rng.next_u64(), fresh.next_u64());
    }

    #[test]
    fn rrelu_train_mode_bounds_and_cache() {
        let mut p = RReluParam::new(3.0, 8.0).unwrap();
        let mut rng = RngStream::new(11, 2);
        let x = Tensor::new(&[64], -8.0).unwrap();
        let y = rrelu_forward(&x, &mut p, Mode::Train, &mut rng);
        assert!(y.data().iter().all(|&v| (-8.0 / 3.0..=-1.0).contains(&v)));
        let d = p.cached_divisors().unwrap();
        assert!(d.data().iter().all(|&v| (3.0..8.0).contains(&v)));
        assert_eq!(rrelu_forward(&t(&[5.0]), &mut p, Mode::Train, &mut rng).data(), &[5.0]);
    }

    #[test]
    fn rrelu_backward_reuses_the_sampled_divisor() {
        let mut p = RReluParam::new(3.0, 8.0).unwrap();
        let mut rng = RngStream::new(5, 1);
        let x = t(&[-1.0, -1.0, -1.0]);
        let y = rrelu_forward(&x, &mut p, Mode::Train, &mut rng);
        let g = rrelu_backward(&x, &t(&[1.0, 1.0, 1.0]), &p, Mode::Train).unwrap();
        for i in 0..3 {
            assert_eq!(g.data()[i], y.data()[i] / x.data()[i]);
        }
    }

    #[test]
    fn rrelu_backward_without_cache_is_stale() {
        let p = RReluParam::new(3.0, 8.0).unwrap();
        assert!(matches!(
            rrelu_backward(&t(&[-1.0]), &t(&[1.0]), &p, Mode::Train),
            Err(Error::StaleCache(_))
        ));
        let mut p = RReluParam::new(3.0, 8.0).unwrap();
        let mut rng = RngStream::new(5, 1);
        rrelu_forward(&t(&[-1.0, 2.0]), &mut p, Mode::Train, &mut rng);
        assert!(matches!(
            rrelu_backward(&t(&[-1.0]), &t(&[1.0]), &p, Mode::Train),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn rrelu_rejects_bad_ranges() {
        assert!(RReluParam::new(8.0, 3.0).is_err());
        assert!(RReluParam::new(0.0, 3.0).is_err());
        assert!(RReluParam::new(3.0, 3.0).is_err());
    }

    #[test]
    fn sparsity_examples() {
        let x = t(&[-1.0, -2.0, 3.0]);
        assert!((sparsity(&relu_forward(&x)) - 2.0 / 3.0).abs() < 1e-15);
        let p = LeakyParam::new(100.0).unwrap();
        assert_eq!(sparsity(&leaky_forward(&x, &p)), 0.0);
        assert_eq!(sparsity(&Tensor::new(&[4], 0.0).unwrap()), 1.0);
    }

    #[test]
    fn activation_layer_round_trip() {
        let mut layer =
            ActivationLayer::new(ActivationConfig::Prelu, 2, RngStream::new(0, 0)).unwrap();
        assert!(matches!(
            layer.backward(&Tensor::new(&[1, 2], 1.0).unwrap()),
            Err(Error::StaleCache(_))
        ));
        let x = Tensor::from_vec(&[1, 2], vec![-4.0, 2.0]).unwrap();
        let y = layer.forward(x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[-1.0, 2.0]);
        let g = layer.backward(&Tensor::new(&[1, 2], 1.0).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.25, 1.0]);
        assert_eq!(layer.prelu_state().unwrap().slope_grads, vec![-4.0, 0.0]);
    }

    proptest! {
        #[test]
        fn positive_inputs_pass_through(x in 0.0f64..1e6, a in 1.0001f64..1e3, l in 0.01f64..10.0, w in 0.01f64..10.0) {
            let xt = t(&[x]);
            prop_assert_eq!(relu_forward(&xt).data()[0], x);
            prop_assert_eq!(leaky_forward(&xt, &LeakyParam::new(a).unwrap()).data()[0], x);
            let mut p = RReluParam::new(l, l + w).unwrap();
            let mut rng = RngStream::new(0, 0);
            prop_assert_eq!(rrelu_forward(&xt, &mut p, Mode::Train, &mut rng).data()[0], x);
            prop_assert_eq!(rrelu_forward(&xt, &mut p, Mode::Test, &mut rng).data()[0], x);
        }

        #[test]
        fn rrelu_test_is_leaky_at_mean_divisor(x in -1e6f64..1e6, l in 1.0f64..10.0, w in 0.01f64..10.0) {
            let mut p = RReluParam::new(l, l + w).unwrap();
            let leaky = LeakyParam::new(p.test_divisor()).unwrap();
            let mut rng = RngStream::new(0, 0);
            let xt = t(&[x]);
            prop_assert_eq!(
                rrelu_forward(&xt, &mut p, Mode::Test, &mut rng).data()[0].to_bits(),
                leaky_forward(&xt, &leaky).data()[0].to_bits()
            );
        }
    }
}

//! Central-difference gradient checks for every differentiable op.
//!
//! Each check builds a scalar probe `L = Σ rᵢ·yᵢ` with fixed random weights
//! `r`, takes the analytic gradient from the op's backward with `grad_out = r`,
//! and compares it with `(L(x + h) − L(x − h)) / 2h` for every input and
//! parameter coordinate. Inputs to the rectifiers stay at least 1e-2 away
//! from the kink at 0, and pooling inputs are spread so no window has a
//! near-tie, so `h = 1e-6` never crosses a non-smooth point.

use crate::error::Result;
use crate::ops::{
    apply_mask, concat_backward, concat_forward, conv_backward, conv_forward, dense_backward, dense_forward,
    dropout_mask, pool_backward, pool_forward, softmax_xent, softmax_xent_backward, split_backward,
    split_forward, spp_backward, spp_forward, ConvSpec, DropoutSpec, PoolKind, PoolSpec, SppSpec,
};
use crate::rectifier::{
    leaky_backward, leaky_forward, prelu_backward, prelu_forward, relu_backward, relu_forward, rrelu_backward,
    rrelu_forward, LeakyParam, Mode, PReluState, RReluParam,
};
use crate::rng::RngStream;
use crate::tensor::{Shape, Tensor};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor for the relative error; keeps rounding noise in tiny
/// gradient components from reading as a large relative error.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Largest [`rel_error`] between `analytic` and central differences of `f`.
pub fn max_rel_error(analytic: &[f64], x: &[f64], f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(analytic.len(), x.len(), "one analytic gradient per coordinate");
    central_differences(x, f)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| rel_error(a, n))
        .fold(0.0, f64::max)
}

fn dot(a: &Tensor, r: &Tensor) -> f64 {
    a.data().iter().zip(r.data()).map(|(x, y)| x * y).sum()
}

fn with_data(shape: &Shape, data: &[f64]) -> Tensor {
    Tensor::from_shape_vec(shape.clone(), data.to_vec()).expect("probe keeps the shape")
}

fn random(dims: &[usize], rng: &mut RngStream) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).expect("valid dims")
}

/// Uniform values in ±2 with magnitude at least 1e-2.
fn away_from_kink(dims: &[usize], rng: &mut RngStream) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.uniform(0.01, 2.0);
            if rng.next_f64() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(dims, data).expect("valid dims")
}

/// A random permutation of evenly spaced values, so every pair differs by
/// at least `spacing`.
fn well_separated(dims: &[usize], rng: &mut RngStream) -> Tensor {
    let n: usize = dims.iter().product();
    let spacing = 0.01;
    let mut data: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * spacing).collect();
    rand::seq::SliceRandom::shuffle(data.as_mut_slice(), rng);
    Tensor::from_vec(dims, data).expect("valid dims")
}

/// Checks an elementwise unit given forward and backward closures.
fn check_unary(
    x: &Tensor,
    rng: &mut RngStream,
    forward: impl Fn(&Tensor) -> Tensor,
    backward: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
) -> Result<f64> {
    let r = random(x.dims(), rng);
    let analytic = backward(x, &r)?;
    Ok(max_rel_error(analytic.data(), x.data(), |v| dot(&forward(&with_data(x.shape(), v)), &r)))
}

pub fn check_relu() -> Result<f64> {
    let mut rng = RngStream::new(1, 0);
    let x = away_from_kink(&[2, 3, 4, 4], &mut rng);
    check_unary(&x, &mut rng, relu_forward, relu_backward)
}

pub fn check_leaky() -> Result<f64> {
    let mut rng = RngStream::new(2, 0);
    let p = LeakyParam::new(5.5)?;
    let x = away_from_kink(&[2, 3, 4, 4], &mut rng);
    check_unary(&x, &mut rng, |x| leaky_forward(x, &p), |x, g| leaky_backward(x, g, &p))
}

pub type PreluBackward = fn(&Tensor, &Tensor, &mut PReluState) -> Result<Tensor>;

/// Checks the PReLU input gradient and the slope gradient, using `backward`
/// as the analytic side.
pub fn check_prelu_with(backward: PreluBackward) -> Result<f64> {
    let mut rng = RngStream::new(3, 0);
    let x = away_from_kink(&[2, 3, 3, 3], &mut rng);
    let slopes: Vec<f64> = (0..3).map(|_| rng.uniform(0.05, 0.5)).collect();
    let r = random(x.dims(), &mut rng);
    let mut state = PReluState::with_slopes(slopes.clone());
    let gx = backward(&x, &r, &mut state)?;
    let fixed = PReluState::with_slopes(slopes.clone());
    let ex = max_rel_error(gx.data(), x.data(), |v| {
        dot(&prelu_forward(&with_data(x.shape(), v), &fixed).expect("channels match"), &r)
    });
    let es = max_rel_error(&state.slope_grads, &slopes, |s| {
        dot(&prelu_forward(&x, &PReluState::with_slopes(s.to_vec())).expect("channels match"), &r)
    });
    Ok(ex.max(es))
}

pub fn check_prelu() -> Result<f64> {
    check_prelu_with(prelu_backward)
}

pub fn check_rrelu_test() -> Result<f64> {
    let mut rng = RngStream::new(4, 0);
    let x = away_from_kink(&[2, 3, 4, 4], &mut rng);
    let p = RReluParam::new(3.0, 8.0)?;
    check_unary(
        &x,
        &mut rng,
        |x| rrelu_forward(x, &mut p.clone(), Mode::Test, &mut RngStream::new(0, 0)),
        |x, g| rrelu_backward(x, g, &p, Mode::Test),
    )
}

/// Train mode with the divisors held fixed: every forward replays the same
/// stream, so it redraws identical divisors.
pub fn check_rrelu_train() -> Result<f64> {
    let mut rng = RngStream::new(5, 0);
    let x = away_from_kink(&[2, 3, 4, 4], &mut rng);
    let mut p = RReluParam::new(3.0, 8.0)?;
    let replay = || RngStream::new(55, 7);
    rrelu_forward(&x, &mut p, Mode::Train, &mut replay());
    check_unary(
        &x,
        &mut rng,
        |x| rrelu_forward(x, &mut p.clone(), Mode::Train, &mut replay()),
        |x, g| rrelu_backward(x, g, &p, Mode::Train),
    )
}

pub fn check_conv() -> Result<f64> {
    let mut rng = RngStream::new(6, 0);
    let mut worst: f64 = 0.0;
    for spec in [
        ConvSpec::same(3, 4, 3),
        ConvSpec {
            in_channels: 3,
            out_channels: 2,
            kernel: (3, 2),
            stride: (2, 1),
            padding: (1, 0),
        },
        ConvSpec::same(3, 2, 1),
    ] {
        let x = random(&[2, 3, 5, 5], &mut rng);
        let w = random(&spec.weight_dims(), &mut rng);
        let b: Vec<f64> = (0..spec.out_channels).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y = conv_forward(&x, &spec, &w, &b)?;
        let r = random(y.dims(), &mut rng);
        let g = conv_backward(&x, &r, &spec, &w, true)?;
        let gx = g.grad_x.expect("requested");
        let f = |x: &Tensor, w: &Tensor, b: &[f64]| dot(&conv_forward(x, &spec, w, b).expect("shapes fixed"), &r);
        worst = worst
            .max(max_rel_error(gx.data(), x.data(), |v| f(&with_data(x.shape(), v), &w, &b)))
            .max(max_rel_error(g.grad_w.data(), w.data(), |v| f(&x, &with_data(w.shape(), v), &b)))
            .max(max_rel_error(&g.grad_b, &b, |v| f(&x, &w, v)));
    }
    Ok(worst)
}

fn check_pool(kind: PoolKind, seed: u64) -> Result<f64> {
    let mut rng = RngStream::new(seed, 0);
    let mut worst: f64 = 0.0;
    for spec in [PoolSpec::square(kind, 3, 2, 1), PoolSpec::square(kind, 2, 2, 0), PoolSpec::square(kind, 3, 1, 0)] {
        let x = well_separated(&[2, 2, 7, 7], &mut rng);
        let (y, cache) = pool_forward(&x, &spec)?;
        let r = random(y.dims(), &mut rng);
        let gx = pool_backward(&r, x.shape(), &spec, &cache)?;
        worst = worst.max(max_rel_error(gx.data(), x.data(), |v| {
            dot(&pool_forward(&with_data(x.shape(), v), &spec).expect("shape fixed").0, &r)
        }));
    }
    Ok(worst)
}

pub fn check_max_pool() -> Result<f64> {
    check_pool(PoolKind::Max, 7)
}

pub fn check_avg_pool() -> Result<f64> {
    check_pool(PoolKind::Avg, 8)
}

pub fn check_dense() -> Result<f64> {
    let mut rng = RngStream::new(9, 0);
    let x = random(&[3, 7], &mut rng);
    let w = random(&[5, 7], &mut rng);
    let b: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let r = random(&[3, 5], &mut rng);
    let (gx, gw, gb) = dense_backward(&x, &r, &w)?;
    let f = |x: &Tensor, w: &Tensor, b: &[f64]| dot(&dense_forward(x, w, b).expect("shapes fixed"), &r);
    Ok(max_rel_error(gx.data(), x.data(), |v| f(&with_data(x.shape(), v), &w, &b))
        .max(max_rel_error(gw.data(), w.data(), |v| f(&x, &with_data(w.shape(), v), &b)))
        .max(max_rel_error(&gb, &b, |v| f(&x, &w, v))))
}

pub fn check_spp() -> Result<f64> {
    let mut rng = RngStream::new(10, 0);
    let spec = SppSpec::new(vec![1, 2, 4])?;
    let x = well_separated(&[2, 3, 9, 8], &mut rng);
    let (y, cache) = spp_forward(&x, &spec)?;
    let r = random(y.dims(), &mut rng);
    let gx = spp_backward(&r, x.shape(), &cache)?;
    Ok(max_rel_error(gx.data(), x.data(), |v| {
        dot(&spp_forward(&with_data(x.shape(), v), &spec).expect("shape fixed").0, &r)
    }))
}

pub fn check_softmax_xent() -> Result<f64> {
    let mut rng = RngStream::new(11, 0);
    let logits = random(&[4, 6], &mut rng).scale(3.0);
    let labels = [0, 5, 2, 2];
    let out = softmax_xent(&logits, &labels)?;
    let g = softmax_xent_backward(&out, &labels)?;
    Ok(max_rel_error(g.data(), logits.data(), |v| {
        softmax_xent(&with_data(logits.shape(), v), &labels).expect("labels valid").loss
    }))
}

/// Dropout with its mask held fixed.
pub fn check_dropout() -> Result<f64> {
    let mut rng = RngStream::new(12, 0);
    let x = random(&[2, 3, 4, 4], &mut rng);
    let mask = dropout_mask(x.shape(), &DropoutSpec::new(0.5)?, &mut rng);
    check_unary(
        &x,
        &mut rng,
        |x| apply_mask(x, &mask).expect("mask matches"),
        |_, g| crate::ops::dropout_backward(g, Some(&mask)),
    )
}

pub fn check_split() -> Result<f64> {
    let mut rng = RngStream::new(13, 0);
    let x = random(&[2, 3, 2, 2], &mut rng);
    let r1 = random(x.dims(), &mut rng);
    let r2 = random(x.dims(), &mut rng);
    let gx = split_backward(&[r1.clone(), r2.clone()])?;
    Ok(max_rel_error(gx.data(), x.data(), |v| {
        let ys = split_forward(&with_data(x.shape(), v), 2);
        dot(&ys[0], &r1) + dot(&ys[1], &r2)
    }))
}

pub fn check_concat() -> Result<f64> {
    let mut rng = RngStream::new(14, 0);
    let a = random(&[2, 3, 2, 2], &mut rng);
    let b = random(&[2, 1, 2, 2], &mut rng);
    let r = random(&[2, 4, 2, 2], &mut rng);
    let parts = concat_backward(&r, &[3, 1])?;
    let f = |a: &Tensor, b: &Tensor| dot(&concat_forward(&[a.clone(), b.clone()]).expect("shapes fixed"), &r);
    Ok(max_rel_error(parts[0].data(), a.data(), |v| f(&with_data(a.shape(), v), &b))
        .max(max_rel_error(parts[1].data(), b.data(), |v| f(&a, &with_data(b.shape(), v)))))
}

/// A named check returning its maximum relative error.
pub struct GradCheck {
    pub name: String,
    pub run: Box<dyn Fn() -> Result<f64>>,
}

impl GradCheck {
    pub fn new(name: &str, run: impl Fn() -> Result<f64> + 'static) -> Self {
        GradCheck {
            name: name.into(),
            run: Box::new(run),
        }
    }
}

/// Every registered op, each exactly once.
pub fn registry() -> Vec<GradCheck> {
    vec![
        GradCheck::new("relu", check_relu),
        GradCheck::new("leaky", check_leaky),
        GradCheck::new("prelu", check_prelu),
        GradCheck::new("rrelu_test", check_rrelu_test),
        GradCheck::new("rrelu_train", check_rrelu_train),
        GradCheck::new("conv", check_conv),
        GradCheck::new("max_pool", check_max_pool),
        GradCheck::new("avg_pool", check_avg_pool),
        GradCheck::new("dense", check_dense),
        GradCheck::new("spp", check_spp),
        GradCheck::new("softmax_xent", check_softmax_xent),
        GradCheck::new("dropout", check_dropout),
        GradCheck::new("split", check_split),
        GradCheck::new("concat", check_concat),
    ]
}

use proptest::prelude::*;
use rectnet::rectifier::{
    leaky_forward, prelu_forward, relu_forward, rrelu_forward, LeakyParam, PReluState, RReluParam,
};
use rectnet::{Mode, RngStream, Tensor};

const N: usize = 10_000;

fn normal_inputs(seed: u64, n: usize) -> Tensor {
    let mut rng = RngStream::new(seed, 0);
    Tensor::from_vec(&[n], (0..n).map(|_| rng.normal(0.0, 3.0)).collect()).unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn all_outputs(x: &Tensor, a: f64, l: f64, u: f64, seed: u64) -> Vec<(&'static str, Tensor)> {
    let mut rr = RReluParam::new(l, u).unwrap();
    let train = rrelu_forward(x, &mut rr, Mode::Train, &mut RngStream::new(seed, 1));
    let test = rrelu_forward(x, &mut rr, Mode::Test, &mut RngStream::new(seed, 1));
    let lp = LeakyParam::new(a).unwrap();
    vec![
        ("relu", relu_forward(x)),
        ("leaky", leaky_forward(x, &lp)),
        ("prelu", prelu_forward(x, &PReluState::with_slopes(vec![lp.slope()])).unwrap()),
        ("rrelu-train", train),
        ("rrelu-test", test),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn positive_inputs_pass_through(seed in any::<u64>(), a in 1.001f64..1000.0, l in 1.0f64..10.0, w in 0.01f64..10.0) {
        let x = normal_inputs(seed, N);
        for (name, y) in all_outputs(&x, a, l, l + w, seed) {
            for (xi, yi) in x.data().iter().zip(y.data()) {
                if *xi > 0.0 {
                    prop_assert_eq!(xi.to_bits(), yi.to_bits(), "{} changed a positive input", name);
                } else {
                    prop_assert!(*yi <= 0.0 && *yi >= *xi, "{name}: {xi} -> {yi}");
                }
            }
        }
    }

    #[test]
    fn deterministic_rectifiers_are_monotone(seed in any::<u64>(), a in 1.001f64..1000.0, l in 1.0f64..10.0, w in 0.01f64..10.0) {
        let mut x = normal_inputs(seed, N).into_data();
        x.sort_by(f64::total_cmp);
        let x = Tensor::from_vec(&[N], x).unwrap();
        for (name, y) in all_outputs(&x, a, l, l + w, seed) {
            if name == "rrelu-train" {
                continue;
            }
            prop_assert!(y.data().windows(2).all(|p| p[0] <= p[1]), "{} is not monotone", name);
        }
    }

    #[test]
    fn frozen_prelu_equals_leaky_bitwise(seed in any::<u64>(), a in 1.001f64..1000.0) {
        let x = normal_inputs(seed, N);
        let lp = LeakyParam::new(a).unwrap();
        let p = prelu_forward(&x, &PReluState::with_slopes(vec![1.0 / a])).unwrap();
        prop_assert_eq!(bits(&p), bits(&leaky_forward(&x, &lp)));
    }

    #[test]
    fn rrelu_test_mode_equals_leaky_at_the_mean_divisor(seed in any::<u64>(), l in 1.0f64..10.0, w in 0.01f64..10.0) {
        let x = normal_inputs(seed, N);
        let u = l + w;
        let mut rr = RReluParam::new(l, u).unwrap();
        let y = rrelu_forward(&x, &mut rr, Mode::Test, &mut RngStream::new(seed, 1));
        let leaky = leaky_forward(&x, &LeakyParam::new((l + u) / 2.0).unwrap());
        prop_assert_eq!(bits(&y), bits(&leaky));
    }

    #[test]
    fn reduction_cases(seed in any::<u64>()) {
        let x = normal_inputs(seed, N);
        let huge = leaky_forward(&x, &LeakyParam::new(1e300).unwrap());
        for ((h, r), xi) in huge.data().iter().zip(relu_forward(&x).data()).zip(x.data()) {
            prop_assert!((h - r).abs() <= 1.01e-300 * xi.abs());
        }
        let unit_slope = prelu_forward(&x, &PReluState::with_slopes(vec![1.0])).unwrap();
        prop_assert_eq!(bits(&unit_slope), bits(&x));
        let zero_slope = prelu_forward(&x, &PReluState::with_slopes(vec![0.0])).unwrap();
        prop_assert!(zero_slope.data().iter().zip(relu_forward(&x).data()).all(|(a, b)| a == b));
    }

    #[test]
    fn train_mode_slopes_come_from_cached_divisors(seed in any::<u64>()) {
        let x = normal_inputs(seed, 2_000);
        let mut rr = RReluParam::new(3.0, 8.0).unwrap();
        let y = rrelu_forward(&x, &mut rr, Mode::Train, &mut RngStream::new(seed, 1));
        let d = rr.cached_divisors().unwrap();
        for ((xi, yi), di) in x.data().iter().zip(y.data()).zip(d.data()) {
            prop_assert!((3.0..8.0).contains(di));
            if *xi < 0.0 {
                prop_assert!((yi - xi / di).abs() <= 1e-15 * xi.abs());
            }
        }
    }
}

#[test]
fn rrelu_negative_slope_has_the_closed_form_mean() {
    let n = 100_000;
    let mut rng = RngStream::new(11, 0);
    let x = Tensor::from_vec(&[n], (0..n).map(|_| -rng.uniform(0.1, 2.0)).collect()).unwrap();
    let mut rr = RReluParam::new(3.0, 8.0).unwrap();
    let y = rrelu_forward(&x, &mut rr, Mode::Train, &mut RngStream::new(11, 1));
    let slopes: Vec<f64> = x.data().iter().zip(y.data()).map(|(x, y)| y / x).collect();
    let mean = slopes.iter().sum::<f64>() / n as f64;
    let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let expected = (8.0f64 / 3.0).ln() / 5.0;
    assert!((expected - 0.196166).abs() < 5e-7);
    assert!((mean - expected).abs() < 4.0 * se, "mean {mean}, expected {expected}, se {se}");
}

#[test]
fn rrelu_divisors_are_uniform() {
    let n = 100_000;
    let x = Tensor::new(&[n], -1.0).unwrap();
    let mut rr = RReluParam::new(3.0, 8.0).unwrap();
    rrelu_forward(&x, &mut rr, Mode::Train, &mut RngStream::new(5, 1));
    let mut d = rr.cached_divisors().unwrap().data().to_vec();
    assert!(d.iter().all(|v| (3.0..8.0).contains(v)));
    d.sort_by(f64::total_cmp);
    // Kolmogorov–Smirnov distance against U(3, 8); 1.95/sqrt(n) is the 0.1% critical value.
    let ks = d
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let cdf = (v - 3.0) / 5.0;
            (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 1.95 / (n as f64).sqrt(), "KS distance {ks}");
}

#[test]
fn rrelu_train_draws_differ_between_calls() {
    let x = Tensor::new(&[1000], -1.0).unwrap();
    let mut rr = RReluParam::new(3.0, 8.0).unwrap();
    let mut rng = RngStream::new(9, 1);
    let a = rrelu_forward(&x, &mut rr, Mode::Train, &mut rng);
    let b = rrelu_forward(&x, &mut rr, Mode::Train, &mut rng);
    assert_ne!(bits(&a), bits(&b));
}

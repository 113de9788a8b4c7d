//! Empirical statistics of a single activation on standard-normal inputs.

use std::io::Write;

use rectnet::rectifier::{
    leaky_forward, prelu_forward, relu_forward, rrelu_forward, sparsity, LeakyParam, Mode, PReluState, RReluParam,
    PRELU_INIT_SLOPE,
};
use rectnet::{RngStream, Tensor};

use crate::CliError;

pub const MIN_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ActStatsArgs {
    pub kind: String,
    /// Leaky divisor; for PReLU, freezes the slope at `1/a`.
    pub a: Option<f64>,
    pub l: Option<f64>,
    pub u: Option<f64>,
    pub n: usize,
    pub seed: u64,
}

/// Expected value of `1/d` for `d ~ U(l, u)`.
pub fn rrelu_expected_slope(l: f64, u: f64) -> f64 {
    (u / l).ln() / (u - l)
}

struct Report<'a> {
    out: &'a mut dyn Write,
    failed: Vec<&'static str>,
}

impl Report<'_> {
    fn check(&mut self, name: &'static str, pass: bool, detail: String) -> std::io::Result<()> {
        let verdict = if pass { "ok" } else { "FAIL" };
        if detail.is_empty() {
            writeln!(self.out, "{name:<22} {verdict}")?;
        } else {
            writeln!(self.out, "{name:<22} {detail}  {verdict}")?;
        }
        if !pass {
            self.failed.push(name);
        }
        Ok(())
    }
}

/// Mean and standard error of `y/x` over the negative inputs.
fn negative_slopes(x: &Tensor, y: &Tensor) -> (usize, f64, f64) {
    let slopes: Vec<f64> = x.data().iter().zip(y.data()).filter(|(x, _)| **x < 0.0).map(|(x, y)| y / x).collect();
    let m = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / m;
    let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (slopes.len(), mean, (var / m).sqrt())
}

pub fn cmd_actstats(args: &ActStatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let usage = |m: String| CliError::Usage(m);
    if args.n < MIN_SAMPLES {
        return Err(usage(format!("--n must be at least {MIN_SAMPLES}, got {}", args.n)));
    }
    let allowed: &[&str] = match args.kind.as_str() {
        "relu" => &[],
        "leaky" | "prelu" => &["a"],
        "rrelu" => &["l", "u"],
        other => {
            return Err(usage(format!(
                "unknown activation kind {other:?} (valid kinds: relu, leaky, prelu, rrelu)"
            )))
        }
    };
    for (name, v) in [("a", args.a), ("l", args.l), ("u", args.u)] {
        if v.is_some() && !allowed.contains(&name) {
            return Err(usage(format!("--{name} does not apply to {}", args.kind)));
        }
    }

    let mut rng = RngStream::new(args.seed, 0);
    let x = Tensor::from_vec(&[args.n], (0..args.n).map(|_| rng.normal(0.0, 1.0)).collect())?;
    let mut r = Report {
        out,
        failed: Vec::new(),
    };
    let mut divisors = None;
    let y = match args.kind.as_str() {
        "relu" => relu_forward(&x),
        "leaky" => leaky_forward(&x, &LeakyParam::new(args.a.unwrap_or(100.0)).map_err(|e| usage(e.to_string()))?),
        "prelu" => {
            let slope = match args.a {
                Some(a) => LeakyParam::new(a).map_err(|e| usage(e.to_string()))?.slope(),
                None => PRELU_INIT_SLOPE,
            };
            prelu_forward(&x, &PReluState::with_slopes(vec![slope]))?
        }
        _ => {
            let mut p = RReluParam::new(args.l.unwrap_or(3.0), args.u.unwrap_or(8.0)).map_err(|e| usage(e.to_string()))?;
            let y = rrelu_forward(&x, &mut p, Mode::Train, &mut RngStream::new(args.seed, 1));
            divisors = p.cached_divisors().cloned();
            y
        }
    };
    writeln!(r.out, "kind                   {}", args.kind)?;
    writeln!(r.out, "samples                {}", args.n)?;

    let positive_identity = x.data().iter().zip(y.data()).all(|(x, y)| *x <= 0.0 || x == y);
    r.check("positive identity", positive_identity, String::new())?;
    let s = sparsity(&y);
    let (m, mean, se) = negative_slopes(&x, &y);
    writeln!(r.out, "negative inputs        {m}")?;
    writeln!(r.out, "mean negative slope    {mean:.6} (se {se:.2e})")?;

    match args.kind.as_str() {
        "relu" => {
            let sigma = (0.25 / args.n as f64).sqrt();
            let z = (s - 0.5) / sigma;
            r.check("sparsity", z.abs() < 4.0, format!("{s:.6} (expected 0.5, z = {z:+.2})"))?;
        }
        "leaky" | "prelu" => {
            writeln!(r.out, "sparsity               {s:.6}")?;
            let slope = match (args.kind.as_str(), args.a) {
                ("leaky", a) => 1.0 / a.unwrap_or(100.0),
                (_, Some(a)) => 1.0 / a,
                (_, None) => PRELU_INIT_SLOPE,
            };
            let close = (mean - slope).abs() <= 1e-12 * slope;
            r.check("slope", close, format!("{mean:.6} (expected {slope:.6})"))?;
            if let (true, Some(a)) = (args.kind == "prelu", args.a) {
                let leaky = leaky_forward(&x, &LeakyParam::new(a).map_err(|e| usage(e.to_string()))?);
                let exact = leaky.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                r.check(
                    "frozen slope",
                    exact,
                    format!("vs leaky(a={a}): {}", if exact { "EXACT" } else { "MISMATCH" }),
                )?;
            }
        }
        _ => {
            writeln!(r.out, "sparsity               {s:.6}")?;
            let (l, u) = (args.l.unwrap_or(3.0), args.u.unwrap_or(8.0));
            let expected = rrelu_expected_slope(l, u);
            let z = (mean - expected) / se;
            r.check(
                "expectation",
                z.abs() < 4.0,
                format!("{mean:.6} vs ln(u/l)/(u-l) = {expected:.6}, z = {z:+.2}"),
            )?;
            let in_range = divisors.is_some_and(|d| d.data().iter().all(|d| (l..u).contains(d)));
            r.check("divisors in [l, u)", in_range, String::new())?;
            let mut p = RReluParam::new(l, u).map_err(|e| usage(e.to_string()))?;
            let test = rrelu_forward(&x, &mut p, Mode::Test, &mut RngStream::new(args.seed, 1));
            let mid = (l + u) / 2.0;
            match LeakyParam::new(mid) {
                Ok(lp) => {
                    let leaky = leaky_forward(&x, &lp);
                    let exact = leaky.data().iter().zip(test.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                    r.check(
                        "test mode",
                        exact,
                        format!("vs leaky(a={mid}): {}", if exact { "EXACT" } else { "MISMATCH" }),
                    )?;
                }
                Err(_) => writeln!(r.out, "test mode              (l+u)/2 = {mid} is not a valid leaky divisor")?,
            }
        }
    }

    if r.failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("failed checks: {}", r.failed.join(", "))))
    }
}

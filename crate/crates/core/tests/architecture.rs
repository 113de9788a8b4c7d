use std::time::Instant;

use rectnet::graph::TraceEntry;
use rectnet::zoo::{build_ndsb, build_nin, build_reduced, Architecture};
use rectnet::{ActivationConfig, Mode, ModelSpec, Tensor};

fn kinds() -> [ActivationConfig; 5] {
    [
        ActivationConfig::Relu,
        ActivationConfig::Leaky { a: 100.0 },
        ActivationConfig::Leaky { a: 5.5 },
        ActivationConfig::Prelu,
        ActivationConfig::Rrelu { l: 3.0, u: 8.0 },
    ]
}

/// Distinct spatial sizes seen at the top level, in order.
fn spatial_path(trace: &[TraceEntry]) -> Vec<usize> {
    let mut sizes = Vec::new();
    for e in trace.iter().filter(|e| !e.label.contains('/')) {
        for dims in [&e.input, &e.output] {
            if dims.len() == 4 && sizes.last() != Some(&dims[2]) {
                assert_eq!(dims[2], dims[3], "{}: non-square map", e.label);
                sizes.push(dims[2]);
            }
        }
    }
    sizes
}

#[test]
fn nin_halves_twice_then_pools_globally() {
    let start = Instant::now();
    for classes in [10, 100] {
        let spec = build_nin(classes, ActivationConfig::Relu).unwrap();
        let trace = spec.shape_trace(1).unwrap();
        assert_eq!(spatial_path(&trace), [32, 16, 8, 1]);
        assert_eq!(trace.last().unwrap().output, [1, classes]);
        let convs: Vec<&TraceEntry> = trace.iter().filter(|e| e.label.starts_with("conv")).collect();
        assert_eq!(convs.len(), 9);
        let widths: Vec<usize> = convs.iter().map(|e| e.output[1]).collect();
        assert_eq!(widths, [192, 160, 96, 192, 192, 192, 192, 192, classes]);
        assert_eq!(trace.iter().filter(|e| e.is_activation).count(), 9);
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn ndsb_trace_reaches_spp_and_121_logits() {
    let start = Instant::now();
    let spec = build_ndsb(ActivationConfig::Rrelu { l: 3.0, u: 8.0 }).unwrap();
    let trace = spec.shape_trace(1).unwrap();
    assert_eq!(spatial_path(&trace), [70, 35, 17, 8]);
    let split = trace.iter().find(|e| e.label.starts_with("split")).unwrap();
    assert_eq!(split.input, [1, 64, 17, 17]);
    let concat = trace.iter().find(|e| e.label.starts_with("channel concat")).unwrap();
    assert_eq!(concat.output, [1, 192, 17, 17]);
    assert_eq!(trace.iter().filter(|e| e.label.starts_with("branch1/conv")).count(), 4);
    assert_eq!(trace.iter().filter(|e| e.label.starts_with("branch2/conv")).count(), 3);
    let spp = trace.iter().find(|e| e.label.starts_with("spp")).unwrap();
    assert_eq!(spp.input, [1, 256, 8, 8]);
    assert_eq!(spp.output, [1, 256 * (1 + 4 + 16)]);
    let fcs: Vec<usize> = trace.iter().filter(|e| e.label.starts_with("fc")).map(|e| e.output[1]).collect();
    assert_eq!(fcs, [1024, 1024, 121]);
    assert_eq!(trace.last().unwrap().output, [1, 121]);
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn traces_do_not_depend_on_the_activation() {
    let specs = |kind| -> Vec<ModelSpec> {
        vec![
            build_nin(10, kind).unwrap(),
            build_nin(100, kind).unwrap(),
            build_ndsb(kind).unwrap(),
            build_reduced(Architecture::Nin { num_classes: 10 }, 0.25, kind).unwrap(),
            build_reduced(Architecture::Ndsb, 0.25, kind).unwrap(),
        ]
    };
    let shapes = |kind| -> Vec<Vec<(Vec<usize>, Vec<usize>)>> {
        specs(kind)
            .iter()
            .map(|s| s.shape_trace(2).unwrap().into_iter().map(|e| (e.input, e.output)).collect())
            .collect()
    };
    let reference = shapes(ActivationConfig::Relu);
    for kind in kinds() {
        assert_eq!(shapes(kind), reference, "{kind:?}");
    }
}

#[test]
fn initial_weights_do_not_depend_on_the_activation() {
    let weights = |kind| {
        let mut net = build_reduced(Architecture::Nin { num_classes: 10 }, 0.25, kind).unwrap().build(3).unwrap();
        let mut out = Vec::new();
        net.visit_params(&mut |p| {
            if !p.name.contains("slope") {
                out.extend(p.value.iter().map(|v| v.to_bits()));
            }
        });
        out
    };
    let reference = weights(ActivationConfig::Relu);
    for kind in kinds() {
        assert_eq!(weights(kind), reference, "{kind:?}");
    }
}

#[test]
fn prelu_adds_one_slope_per_channel() {
    let count = |kind| build_nin(10, kind).unwrap().build(0).unwrap().param_count();
    let base = count(ActivationConfig::Relu);
    assert_eq!(count(ActivationConfig::Rrelu { l: 3.0, u: 8.0 }), base);
    assert_eq!(count(ActivationConfig::Prelu) - base, 192 + 160 + 96 + 5 * 192 + 10);
}

#[test]
fn full_nin_forward_produces_logits() {
    for kind in [ActivationConfig::Relu, ActivationConfig::Rrelu { l: 3.0, u: 8.0 }] {
        let mut net = build_nin(10, kind).unwrap().build(0).unwrap();
        let x = Tensor::new(&[2, 3, 32, 32], 0.5).unwrap();
        let logits = net.forward(x, Mode::Test).unwrap();
        assert_eq!(logits.dims(), [2, 10]);
        assert!(logits.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn ndsb_requires_single_channel_70px_inputs() {
    let mut net = build_reduced(Architecture::Ndsb, 0.125, ActivationConfig::Prelu).unwrap().build(0).unwrap();
    assert!(net.forward(Tensor::new(&[1, 3, 70, 70], 0.0).unwrap(), Mode::Test).is_err());
    let logits = net.forward(Tensor::new(&[2, 1, 70, 70], 0.1).unwrap(), Mode::Test).unwrap();
    assert_eq!(logits.dims(), [2, 121]);
}

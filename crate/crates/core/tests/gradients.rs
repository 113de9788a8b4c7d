use rectnet::gradcheck::{registry, TOLERANCE};

#[test]
fn every_registered_op_passes() {
    let mut failures = Vec::new();
    for case in registry() {
        let err = (case.run)().unwrap();
        println!("{:14} {err:.3e}", case.name);
        if !(err < TOLERANCE) {
            failures.push((case.name, err));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

use rectnet::graph::{LayerDef, ModelSpec};
use rectnet::ops::{softmax_xent, softmax_xent_backward};
use rectnet::{ActivationConfig, Mode, Network, RngStream, Shape, Tensor};

fn small_model(activation: ActivationConfig) -> ModelSpec {
    let conv_act = |k, c| [LayerDef::conv(k, c), LayerDef::Activation];
    let mut layers = Vec::new();
    layers.extend(conv_act(3, 4));
    layers.extend(conv_act(1, 3));
    layers.push(LayerDef::max_pool(3, 2, 1));
    layers.push(LayerDef::Dropout(0.0));
    layers.push(LayerDef::Branch(vec![
        [conv_act(3, 3), conv_act(1, 2)].concat(),
        conv_act(1, 2).to_vec(),
    ]));
    layers.push(LayerDef::avg_pool(2, 1, 0));
    layers.push(LayerDef::Spp(vec![1, 2]));
    layers.push(LayerDef::Flatten);
    layers.push(LayerDef::Dense { out: 6 });
    layers.push(LayerDef::Activation);
    layers.push(LayerDef::Dense { out: 3 });
    ModelSpec {
        name: "small".into(),
        layers,
        num_classes: 3,
        activation,
        input_shape: Shape::new(vec![2, 7, 7]).unwrap(),
    }
}

fn get_params(net: &mut Network) -> Vec<f64> {
    net.param_values()
}

fn set_param(net: &mut Network, index: usize, value: f64) {
    let mut offset = 0;
    net.visit_params(&mut |p| {
        if (offset..offset + p.value.len()).contains(&index) {
            p.value[index - offset] = value;
        }
        offset += p.value.len();
    });
}

fn loss(net: &mut Network, x: &Tensor, labels: &[usize], mode: Mode) -> f64 {
    let logits = net.forward(x.clone(), mode).unwrap();
    softmax_xent(&logits, labels).unwrap().loss
}

/// Whole-network parameter gradients against central differences of the loss.
fn network_grad_error(activation: ActivationConfig, mode: Mode) -> f64 {
    let mut net = small_model(activation).build(3).unwrap();
    // zero biases put dead units exactly on the kink; random biases and
    // distinct PReLU slopes keep every unit off it
    let mut rng = RngStream::new(8, 0);
    net.visit_params(&mut |p| {
        if p.name.ends_with("slope") {
            p.value.iter_mut().for_each(|s| *s = rng.uniform(0.05, 0.5));
        } else if p.name.ends_with("bias") {
            p.value.iter_mut().for_each(|b| *b = rng.uniform(-0.3, 0.3));
        }
    });
    let x = Tensor::from_vec(&[3, 2, 7, 7], (0..294).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    let labels = [0, 2, 1];
    net.zero_grads();
    let logits = net.forward(x.clone(), mode).unwrap();
    let out = softmax_xent(&logits, &labels).unwrap();
    net.backward(softmax_xent_backward(&out, &labels).unwrap()).unwrap();
    let mut analytic = Vec::new();
    net.visit_params(&mut |p| analytic.extend_from_slice(p.grad));
    let values = get_params(&mut net);
    let numeric = rectnet::gradcheck::central_differences(&values, |v| {
        for (i, &vi) in v.iter().enumerate() {
            set_param(&mut net, i, vi);
        }
        loss(&mut net, &x, &labels, mode)
    });
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rectnet::gradcheck::rel_error(a, n))
        .fold(0.0, f64::max)
}

#[test]
fn whole_network_gradients_match_finite_differences() {
    for (act, mode) in [
        (ActivationConfig::Relu, Mode::Train),
        (ActivationConfig::Leaky { a: 5.5 }, Mode::Train),
        (ActivationConfig::Prelu, Mode::Train),
        (ActivationConfig::Rrelu { l: 3.0, u: 8.0 }, Mode::Test),
    ] {
        let err = network_grad_error(act, mode);
        assert!(err < 1e-5, "{} in {mode:?}: {err:e}", act.label());
    }
}
